#include "maa/models.hpp"

#include "maa/random.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace maa::models {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'A', 'A', 'C', 'K', 'P', 'T', '\n'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr int kStemStride = 2;

struct CnnStage {
  int in_channels;
  int out_channels;
  int stride;
};

std::vector<CnnStage> cnn_stages(const ModelConfig& c) {
  std::vector<CnnStage> stages;
  int ch = c.width;
  for (int b = 0; b < c.depth; ++b) {
    const int out = c.width * (b + 2);  // 16 -> 32, 48, 64
    stages.push_back({ch, out, b + 1 < c.depth ? 2 : 1});
    ch = out;
  }
  return stages;
}

ad::Matrix<float> random_matrix(Rng& rng, int rows, int cols, double stddev) {
  ad::Matrix<float> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal() * stddev);
  return m;
}

json config_to_json(const ModelConfig& c) {
  return json{{"architecture", std::string(architecture_name(c.arch))},
              {"input_size", c.input_size},
              {"patch_or_kernel", c.patch_or_kernel},
              {"width", c.width},
              {"depth", c.depth},
              {"heads", c.heads},
              {"mlp_ratio", c.mlp_ratio},
              {"embedding_dim", c.embedding_dim},
              {"text_width", c.text_width},
              {"text_depth", c.text_depth},
              {"vocab_size", c.vocab_size},
              {"max_caption_length", c.max_caption_length},
              {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.arch = parse_architecture(j.at("architecture").get<std::string>());
  c.input_size = j.at("input_size").get<int>();
  c.patch_or_kernel = j.at("patch_or_kernel").get<int>();
  c.width = j.at("width").get<int>();
  c.depth = j.at("depth").get<int>();
  c.heads = j.at("heads").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.embedding_dim = j.at("embedding_dim").get<int>();
  c.text_width = j.at("text_width").get<int>();
  c.text_depth = j.at("text_depth").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_caption_length = j.at("max_caption_length").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

std::string_view architecture_name(Architecture a) {
  return a == Architecture::PatchTransformer ? "patch-transformer" : "residual-cnn";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "patch-transformer" || name == "transformer") return Architecture::PatchTransformer;
  if (name == "residual-cnn" || name == "cnn") return Architecture::ResidualCnn;
  throw std::invalid_argument("unknown architecture tag '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* key) {
    if (v <= 0) throw std::invalid_argument(std::string("model.") + key + ": must be positive, got " + std::to_string(v));
  };
  positive(input_size, "input_size");
  positive(patch_or_kernel, "patch_or_kernel");
  positive(width, "width");
  positive(depth, "depth");
  positive(heads, "heads");
  positive(mlp_ratio, "mlp_ratio");
  positive(embedding_dim, "embedding_dim");
  positive(text_width, "text_width");
  positive(text_depth, "text_depth");
  positive(vocab_size, "vocab_size");
  positive(max_caption_length, "max_caption_length");
  if (depth + 1 < 2) throw std::invalid_argument("model.depth: need at least one intermediate tap");
  if (arch == Architecture::PatchTransformer) {
    if (input_size % patch_or_kernel != 0) {
      throw std::invalid_argument("model.input_size: " + std::to_string(input_size) +
                                  " not divisible by patch size " + std::to_string(patch_or_kernel));
    }
    if (width % heads != 0) throw std::invalid_argument("model.width: not divisible by heads");
  } else if (patch_or_kernel % 2 != 1) {
    throw std::invalid_argument("model.patch_or_kernel: cnn kernel must be odd");
  }
  if (text_width % heads != 0) throw std::invalid_argument("model.text_width: not divisible by heads");
}

ModelConfig default_config(Architecture arch, int vocab_size, std::uint64_t seed) {
  ModelConfig c;
  c.arch = arch;
  c.vocab_size = vocab_size;
  c.seed = seed;
  if (arch == Architecture::PatchTransformer) {
    c.input_size = 32;
    c.patch_or_kernel = 4;
    c.width = 64;
    c.depth = 3;
  } else {
    c.input_size = 48;
    c.patch_or_kernel = 3;
    c.width = 16;
    c.depth = 3;
  }
  return c;
}

// --- binder --------------------------------------------------------------------

template <typename T>
ad::Var<T> ParamBinder<T>::operator()(const Parameter& p) {
  auto it = cache_.find(&p);
  if (it != cache_.end()) return it->second;
  ad::Matrix<T> v = p.value.template cast<T>();
  ad::Var<T> var = trainable_ ? tape_->variable(std::move(v)) : tape_->constant(std::move(v));
  cache_.emplace(&p, var);
  bound_.emplace_back(&p, var);
  return var;
}

template class ParamBinder<float>;
template class ParamBinder<double>;

// --- construction ----------------------------------------------------------------

void VlpModel::add_param(std::string name, ad::Matrix<float> value) {
  index_.emplace(name, params_.size());
  params_.push_back(Parameter{std::move(name), std::move(value)});
}

const Parameter& VlpModel::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("model: no parameter '" + name + "'");
  return params_[it->second];
}

VlpModel VlpModel::create(const ModelConfig& config) {
  config.validate();
  VlpModel m;
  m.config_ = config;
  Rng rng = Rng(config.seed).substream("init");

  auto linear = [&](const std::string& name, int in, int out, double gain = 1.0) {
    m.add_param(name + ".w", random_matrix(rng, in, out, gain / std::sqrt(static_cast<double>(in))));
    m.add_param(name + ".b", ad::Matrix<float>::Zero(1, out));
  };
  auto norm = [&](const std::string& name, int n) {
    m.add_param(name + ".g", ad::Matrix<float>::Ones(1, n));
    m.add_param(name + ".b", ad::Matrix<float>::Zero(1, n));
  };
  auto block = [&](const std::string& p, int width, int depth) {
    const double out_gain = 1.0 / std::sqrt(2.0 * depth);
    norm(p + ".ln1", width);
    linear(p + ".qkv", width, 3 * width);
    linear(p + ".proj", width, width, out_gain);
    norm(p + ".ln2", width);
    linear(p + ".fc1", width, config.mlp_ratio * width);
    linear(p + ".fc2", config.mlp_ratio * width, width, out_gain);
  };

  if (config.arch == Architecture::PatchTransformer) {
    const int p = config.patch_or_kernel;
    const int tokens = (config.input_size / p) * (config.input_size / p);
    linear("img.patch", 3 * p * p, config.width);
    m.add_param("img.pos", random_matrix(rng, tokens, config.width, 0.02));
    for (int b = 0; b < config.depth; ++b) block("img.blk" + std::to_string(b), config.width, config.depth);
    norm("img.ln_f", config.width);
    linear("img.head", config.width, config.embedding_dim);
  } else {
    const int k = config.patch_or_kernel;
    auto conv = [&](const std::string& name, int in, int out, int kernel, double gain) {
      const int fan_in = in * kernel * kernel;
      m.add_param(name + ".w", random_matrix(rng, out, fan_in, gain * std::sqrt(2.0 / fan_in)));
      m.add_param(name + ".b", ad::Matrix<float>::Zero(out, 1));
    };
    conv("img.stem", 3, config.width, k, 1.0);
    const auto stages = cnn_stages(config);
    for (std::size_t b = 0; b < stages.size(); ++b) {
      const std::string p = "img.res" + std::to_string(b);
      conv(p + ".conv1", stages[b].in_channels, stages[b].out_channels, 3, 1.0);
      conv(p + ".conv2", stages[b].out_channels, stages[b].out_channels, 3, 0.5);
      conv(p + ".short", stages[b].in_channels, stages[b].out_channels, 1, 1.0);
    }
    linear("img.head", stages.back().out_channels, config.embedding_dim);
  }

  m.add_param("txt.tok", random_matrix(rng, config.vocab_size, config.text_width, 0.1));
  m.add_param("txt.pos", random_matrix(rng, config.max_caption_length, config.text_width, 0.1));
  for (int b = 0; b < config.text_depth; ++b) block("txt.blk" + std::to_string(b), config.text_width, config.text_depth);
  norm("txt.ln_f", config.text_width);
  linear("txt.head", config.text_width, config.embedding_dim);
  return m;
}

std::vector<TapShape> VlpModel::tap_shapes() const {
  std::vector<TapShape> shapes;
  if (config_.arch == Architecture::PatchTransformer) {
    const int n = config_.input_size / config_.patch_or_kernel;
    for (int b = 0; b < config_.depth; ++b) shapes.push_back({n * n, config_.width});
  } else {
    int s = ad::conv_out_size(config_.input_size, config_.patch_or_kernel, kStemStride, config_.patch_or_kernel / 2);
    for (const auto& st : cnn_stages(config_)) {
      s = ad::conv_out_size(s, 3, st.stride, 1);
      shapes.push_back({s * s, st.out_channels});
    }
  }
  shapes.push_back({1, config_.embedding_dim});
  return shapes;
}

// --- forward passes --------------------------------------------------------------

template <typename T>
ad::Var<T> VlpModel::linear(ParamBinder<T>& bind, const std::string& prefix, ad::Var<T> x) const {
  return ad::add_row(ad::matmul(x, bind(param(prefix + ".w"))), bind(param(prefix + ".b")));
}

template <typename T>
ad::Var<T> VlpModel::transformer_block(ParamBinder<T>& bind, const std::string& p, ad::Var<T> h, int heads) const {
  auto a = ad::layer_norm_rows(h, bind(param(p + ".ln1.g")), bind(param(p + ".ln1.b")));
  auto qkv = linear(bind, p + ".qkv", a);
  auto att = ad::multi_head_attention(qkv, heads);
  h = ad::add(h, linear(bind, p + ".proj", att));
  auto m = ad::layer_norm_rows(h, bind(param(p + ".ln2.g")), bind(param(p + ".ln2.b")));
  m = ad::gelu(linear(bind, p + ".fc1", m));
  return ad::add(h, linear(bind, p + ".fc2", m));
}

template <typename T>
std::vector<ad::Var<T>> VlpModel::image_taps(ParamBinder<T>& bind, ad::Var<T> image) const {
  const int s = config_.input_size;
  if (image.rows() != 3 || image.cols() != static_cast<Eigen::Index>(s) * s) {
    const int actual = image.rows() == 3 ? static_cast<int>(std::lround(std::sqrt(static_cast<double>(image.cols())))) : -1;
    throw std::invalid_argument("encode_image: expected " + std::to_string(s) + "x" + std::to_string(s) +
                                " input, got " + std::to_string(actual) + "x" + std::to_string(actual));
  }
  std::vector<ad::Var<T>> taps;
  const ad::Extent ext{3, s, s};
  if (config_.arch == Architecture::PatchTransformer) {
    auto h = linear(bind, "img.patch", ad::patchify(image, ext, config_.patch_or_kernel));
    h = ad::add(h, bind(param("img.pos")));
    for (int b = 0; b < config_.depth; ++b) {
      h = transformer_block(bind, "img.blk" + std::to_string(b), h, config_.heads);
      taps.push_back(h);
    }
    auto f = ad::layer_norm_rows(h, bind(param("img.ln_f.g")), bind(param("img.ln_f.b")));
    taps.push_back(linear(bind, "img.head", ad::mean_rows(f)));
    return taps;
  }

  auto conv = [&](const std::string& name, ad::Var<T> x, ad::Extent in, int kernel, int stride) {
    auto cols = ad::im2col(x, in, kernel, stride, kernel / 2);
    return ad::add_col(ad::matmul(bind(param(name + ".w")), cols), bind(param(name + ".b")));
  };
  auto h = ad::relu(conv("img.stem", image, ext, config_.patch_or_kernel, kStemStride));
  const int stem_out = ad::conv_out_size(s, config_.patch_or_kernel, kStemStride, config_.patch_or_kernel / 2);
  ad::Extent cur{config_.width, stem_out, stem_out};
  const auto stages = cnn_stages(config_);
  for (std::size_t b = 0; b < stages.size(); ++b) {
    const std::string p = "img.res" + std::to_string(b);
    const int os = ad::conv_out_size(cur.height, 3, stages[b].stride, 1);
    const ad::Extent next{stages[b].out_channels, os, os};
    auto y = ad::relu(conv(p + ".conv1", h, cur, 3, stages[b].stride));
    y = conv(p + ".conv2", y, next, 3, 1);
    auto sc = conv(p + ".short", h, cur, 1, stages[b].stride);
    h = ad::relu(ad::add(y, sc));
    cur = next;
    taps.push_back(ad::transpose(h));
  }
  taps.push_back(linear(bind, "img.head", ad::mean_rows(taps.back())));
  return taps;
}

template <typename T>
ad::Var<T> VlpModel::text_embedding(ParamBinder<T>& bind, std::span<const int> ids) const {
  if (ids.empty()) throw std::invalid_argument("encode_text: empty caption");
  if (static_cast<int>(ids.size()) > config_.max_caption_length) {
    throw std::invalid_argument("encode_text: caption of " + std::to_string(ids.size()) + " tokens exceeds " +
                                std::to_string(config_.max_caption_length));
  }
  for (int id : ids) {
    if (id < 0 || id >= config_.vocab_size) {
      throw std::out_of_range("encode_text: out-of-vocabulary id " + std::to_string(id));
    }
  }
  std::vector<int> positions(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
  auto h = ad::add(ad::embedding(bind(param("txt.tok")), ids), ad::embedding(bind(param("txt.pos")), positions));
  for (int b = 0; b < config_.text_depth; ++b) h = transformer_block(bind, "txt.blk" + std::to_string(b), h, config_.heads);
  auto f = ad::layer_norm_rows(h, bind(param("txt.ln_f.g")), bind(param("txt.ln_f.b")));
  return linear(bind, "txt.head", ad::mean_rows(f));
}

template std::vector<ad::Var<float>> VlpModel::image_taps(ParamBinder<float>&, ad::Var<float>) const;
template std::vector<ad::Var<double>> VlpModel::image_taps(ParamBinder<double>&, ad::Var<double>) const;
template ad::Var<float> VlpModel::text_embedding(ParamBinder<float>&, std::span<const int>) const;
template ad::Var<double> VlpModel::text_embedding(ParamBinder<double>&, std::span<const int>) const;

FeatureStack VlpModel::encode_image(const Image& image) const {
  if (image.height != config_.input_size || image.width != config_.input_size) {
    throw std::invalid_argument("encode_image: expected " + std::to_string(config_.input_size) + "x" +
                                std::to_string(config_.input_size) + " input, got " + std::to_string(image.height) +
                                "x" + std::to_string(image.width));
  }
  ad::Tape<float> tape;
  ParamBinder<float> bind(tape, false);
  const auto taps = image_taps(bind, tape.constant(image.to_matrix<float>()));
  FeatureStack stack;
  for (const auto& t : taps) {
    FeatureTap ft;
    ft.rows = static_cast<int>(t.rows());
    ft.cols = static_cast<int>(t.cols());
    ft.values.assign(t.value().data(), t.value().data() + t.value().size());
    stack.taps.push_back(std::move(ft));
  }
  return stack;
}

std::vector<float> VlpModel::encode_text(std::span<const int> ids) const {
  ad::Tape<float> tape;
  ParamBinder<float> bind(tape, false);
  const auto e = text_embedding(bind, ids);
  return std::vector<float>(e.value().data(), e.value().data() + e.value().size());
}

std::vector<float> VlpModel::encode_text(const data::CaptionTokens& tokens) const {
  return encode_text(std::span<const int>(tokens.ids));
}

// --- persistence -----------------------------------------------------------------

void VlpModel::save(const std::filesystem::path& path) const {
  json header;
  header["format"] = "maa-checkpoint";
  header["version"] = kCheckpointVersion;
  header["config"] = config_to_json(config_);
  header["architecture"] = std::string(architecture_name(config_.arch));
  header["seed"] = config_.seed;
  json taps = json::array();
  for (const auto& s : tap_shapes()) taps.push_back({s.rows, s.cols});
  header["taps"] = taps;
  json params = json::array();
  std::vector<std::uint8_t> payload;
  for (const auto& p : params_) {
    params.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(p.value.data());
    payload.insert(payload.end(), bytes, bytes + p.value.size() * sizeof(float));
  }
  header["params"] = params;
  const std::string h = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
  const std::uint32_t version = kCheckpointVersion;
  const auto hlen = static_cast<std::uint32_t>(h.size());
  const std::uint32_t crc = crc32_of(payload);
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  out.write(reinterpret_cast<const char*>(&crc), 4);
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

VlpModel VlpModel::load(const std::filesystem::path& path, std::optional<Architecture> expected) {
  const auto bytes = read_file_bytes(path);
  auto corrupt = [&](const std::string& why) {
    return std::runtime_error("checkpoint: corrupt checkpoint " + path.string() + " (" + why + ")");
  };
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw corrupt("bad magic");
  std::uint32_t version = 0, hlen = 0;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&hlen, bytes.data() + 12, 4);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: version mismatch in " + path.string() + " (file " + std::to_string(version) +
                             ", supported " + std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < 16 + static_cast<std::size_t>(hlen) + 4) throw corrupt("truncated header");
  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + hlen);
  } catch (const std::exception& e) {
    throw corrupt(e.what());
  }
  const ModelConfig config = config_from_json(header.at("config"));
  if (expected && *expected != config.arch) {
    throw std::runtime_error("checkpoint: " + path.string() + " holds a " + std::string(architecture_name(config.arch)) +
                             " model, expected " + std::string(architecture_name(*expected)));
  }
  const std::size_t payload_begin = 16 + hlen;
  const std::size_t payload_size = bytes.size() - payload_begin - 4;
  std::vector<std::uint8_t> payload(bytes.begin() + static_cast<std::ptrdiff_t>(payload_begin),
                                    bytes.begin() + static_cast<std::ptrdiff_t>(payload_begin + payload_size));
  std::uint32_t crc = 0;
  std::memcpy(&crc, bytes.data() + bytes.size() - 4, 4);
  if (crc32_of(payload) != crc) throw corrupt("payload checksum mismatch");

  VlpModel m = VlpModel::create(config);
  const auto& plist = header.at("params");
  if (plist.size() != m.params_.size()) throw corrupt("parameter count mismatch");
  std::size_t offset = 0;
  for (std::size_t i = 0; i < plist.size(); ++i) {
    Parameter& p = m.params_[i];
    if (plist[i].at("name").get<std::string>() != p.name || plist[i].at("rows").get<Eigen::Index>() != p.value.rows() ||
        plist[i].at("cols").get<Eigen::Index>() != p.value.cols()) {
      throw corrupt("parameter layout mismatch at '" + p.name + "'");
    }
    const std::size_t n = static_cast<std::size_t>(p.value.size()) * sizeof(float);
    if (offset + n > payload.size()) throw corrupt("payload truncated");
    std::memcpy(p.value.data(), payload.data() + offset, n);
    offset += n;
  }
  if (offset != payload.size()) throw corrupt("trailing payload bytes");
  return m;
}

Image prepare_input(const VlpModel& model, const Image& image) {
  const int s = model.input_size();
  if (image.height == s && image.width == s) return image;
  return resize_image(image, s, s);
}

template <typename T>
ad::Matrix<T> input_gradient([[maybe_unused]] const VlpModel& model, const ImageObjective<T>& objective,
                             const Image& image) {
  ad::Tape<T> tape;
  ParamBinder<T> bind(tape, false);
  auto x = tape.variable(image.to_matrix<T>());
  auto out = objective(bind, x);
  if (out.rows() != 1 || out.cols() != 1) {
    throw std::invalid_argument("input_gradient: objective is not a scalar (" + std::to_string(out.rows()) + "x" +
                                std::to_string(out.cols()) + ")");
  }
  tape.backward(out);
  return tape.grad(x);
}

template ad::Matrix<float> input_gradient(const VlpModel&, const ImageObjective<float>&, const Image&);
template ad::Matrix<double> input_gradient(const VlpModel&, const ImageObjective<double>&, const Image&);

}  // namespace maa::models
