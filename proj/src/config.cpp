#include "maa/config.hpp"
#include "maa/random.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace maa::config {

namespace {

struct Value {
  std::string text;
  int line = 0;
  bool used = false;
};

using Section = std::map<std::string, Value>;
using Document = std::map<std::string, Section>;

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Document read_document(std::string_view text) {
  Document doc;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find_first_of("#;");
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty section name");
      doc[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    if (section.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": key outside any section");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    auto& sec = doc[section];
    if (sec.count(key)) throw ConfigError(section + "." + key + ": duplicate key (line " + std::to_string(line_no) + ")");
    sec[key] = {trim(line.substr(eq + 1)), line_no, false};
  }
  return doc;
}

class Reader {
 public:
  Reader(Document& doc, std::string section) : sec_(doc.count(section) ? &doc[section] : nullptr), name_(std::move(section)) {}

  const Value* get(const std::string& key) {
    if (!sec_) return nullptr;
    auto it = sec_->find(key);
    if (it == sec_->end()) return nullptr;
    it->second.used = true;
    return &it->second;
  }
  std::string key(const std::string& k) const { return name_ + "." + k; }

  bool str(const std::string& k, std::string& out) {
    if (auto v = get(k)) {
      if (v->text.empty()) throw ConfigError(key(k) + ": empty value");
      out = v->text;
      return true;
    }
    return false;
  }
  bool number(const std::string& k, double& out) {
    if (auto v = get(k)) {
      out = parse_number(v->text, key(k));
      return true;
    }
    return false;
  }
  template <typename I>
  bool integer(const std::string& k, I& out) {
    if (auto v = get(k)) {
      out = parse_int<I>(v->text, key(k));
      return true;
    }
    return false;
  }
  template <typename I>
  bool opt_integer(const std::string& k, std::optional<I>& out) {
    if (auto v = get(k)) {
      if (v->text == "auto") out.reset();
      else out = parse_int<I>(v->text, key(k));
      return true;
    }
    return false;
  }
  bool flag(const std::string& k, bool& out) {
    if (auto v = get(k)) {
      std::string t = v->text;
      std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
      if (t == "true" || t == "yes" || t == "1" || t == "on") out = true;
      else if (t == "false" || t == "no" || t == "0" || t == "off") out = false;
      else throw ConfigError(key(k) + ": expected a boolean, got '" + v->text + "'");
      return true;
    }
    return false;
  }
  bool list(const std::string& k, std::vector<std::string>& out) {
    if (auto v = get(k)) {
      out = split_list(v->text);
      if (out.empty()) throw ConfigError(key(k) + ": empty list");
      return true;
    }
    return false;
  }

  template <typename I>
  static I parse_int(const std::string& text, const std::string& key) {
    I v{};
    const auto* end = text.data() + text.size();
    auto [p, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || p != end) throw ConfigError(key + ": expected an integer, got '" + text + "'");
    return v;
  }

 private:
  Section* sec_;
  std::string name_;
};

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ", ";
    if constexpr (std::is_floating_point_v<T>) os << fmt_double(v[i]);
    else os << v[i];
  }
  return os.str();
}

train::TrainSpec default_train_spec(models::Architecture arch) {
  train::TrainSpec t;
  t.batch_size = 64;
  t.learning_rate = 1e-3;
  t.epochs = arch == models::Architecture::PatchTransformer ? 60 : 30;
  return t;
}

std::uint64_t derived_seed(std::uint64_t global, std::string_view label) {
  return Rng(global).substream(label).next_u64() >> 11;
}

}  // namespace

double parse_number(std::string_view raw, const std::string& key) {
  const std::string text = trim(raw);
  auto one = [&](const std::string& s) {
    double v = 0.0;
    const auto* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    if (s.empty() || ec != std::errc() || p != end) throw ConfigError(key + ": expected a number, got '" + text + "'");
    return v;
  };
  const auto slash = text.find('/');
  double v = 0.0;
  if (slash == std::string::npos) {
    v = one(text);
  } else {
    const double den = one(trim(text.substr(slash + 1)));
    if (den == 0.0) throw ConfigError(key + ": zero denominator in '" + text + "'");
    v = one(trim(text.substr(0, slash))) / den;
  }
  if (!std::isfinite(v)) throw ConfigError(key + ": value is not finite");
  return v;
}

models::ModelConfig ModelEntry::model_config(int vocab_size, std::uint64_t seed) const {
  auto c = models::default_config(arch, vocab_size, seed);
  const auto& o = overrides;
  if (o.input_size) c.input_size = *o.input_size;
  if (o.patch_or_kernel) c.patch_or_kernel = *o.patch_or_kernel;
  if (o.width) c.width = *o.width;
  if (o.depth) c.depth = *o.depth;
  if (o.heads) c.heads = *o.heads;
  if (o.mlp_ratio) c.mlp_ratio = *o.mlp_ratio;
  if (o.embedding_dim) c.embedding_dim = *o.embedding_dim;
  if (o.text_width) c.text_width = *o.text_width;
  if (o.text_depth) c.text_depth = *o.text_depth;
  return c;
}

bool ModelEntry::operator==(const ModelEntry& o) const {
  return arch == o.arch && model_config(0, 0) == o.model_config(0, 0) && train == o.train;
}

bool RunConfig::operator==(const RunConfig& o) const {
  return output_root == o.output_root && run_id == o.run_id && seed == o.seed && data == o.data && source == o.source &&
         models == o.models && attack == o.attack && attack_method == o.attack_method && eval == o.eval;
}

const ModelEntry& RunConfig::model(std::string_view id) const {
  for (const auto& m : models) {
    if (m.id() == id) return m;
  }
  throw ConfigError("models: no model '" + std::string(id) + "' configured");
}

std::vector<std::string> RunConfig::target_ids() const {
  std::vector<std::string> out;
  for (const auto& m : models) {
    if (m.id() != source) out.push_back(m.id());
  }
  return out;
}

void RunConfig::set_global_seed(std::uint64_t s) {
  seed = s;
  if (!data_seed_set) data.seed = derived_seed(s, "data");
  if (!attack_seed_set) attack.seed = derived_seed(s, "attack");
  for (auto& m : models) {
    if (!m.train_seed_set) m.train.seed = derived_seed(s, "train-" + m.id());
  }
}

void RunConfig::validate() const {
  if (run_id.empty() || run_id.find_first_of("/\\") != std::string::npos) {
    throw ConfigError("run.run_id: must be a non-empty name without path separators");
  }
  for (auto p = output_root; !p.empty(); p = p.parent_path()) {
    std::error_code ec;
    if (std::filesystem::exists(p, ec)) {
      if (!std::filesystem::is_directory(p, ec)) throw ConfigError("run.output_root: '" + p.string() + "' is not a directory");
      break;
    }
    if (p == p.parent_path()) break;
  }
  std::vector<int> patches;
  for (const auto& m : models) {
    auto mc = m.model_config(2, 0);
    try {
      mc.validate();
    } catch (const std::exception& e) {
      throw ConfigError("model." + m.id() + ": " + e.what());
    }
    try {
      m.train.validate();
    } catch (const std::exception& e) {
      throw ConfigError("train." + m.id() + ": " + e.what());
    }
    if (mc.input_size == data.image_size) patches.push_back(mc.patch_or_kernel);
  }
  try {
    data.validate(patches);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("data: ") + e.what());
  }
  if (models.empty()) throw ConfigError("models.targets: at least the source model is required");
  if (models.front().id() != source) throw ConfigError("models.source: must be the first model");
  for (std::size_t i = 0; i < models.size(); ++i) {
    for (std::size_t j = i + 1; j < models.size(); ++j) {
      if (models[i].id() == models[j].id()) throw ConfigError("models.targets: '" + models[i].id() + "' listed twice");
    }
  }
  try {
    attack.validate();
    if (attack_method != "custom") (void)attack::variant(attack, attack_method);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  const auto& src = model(source);
  const int grid = attack.grid_step ? *attack.grid_step : src.model_config(2, 0).patch_or_kernel;
  if (attack.beta2 && *attack.beta2 >= grid) throw ConfigError("attack.beta2: must be below the grid step " + std::to_string(grid));
  if (!attack.beta2 && attack.beta1 > grid - 1) throw ConfigError("attack.beta1: exceeds the default beta2 " + std::to_string(grid - 1));
  if (eval.attacked_pairs == 0) throw ConfigError("eval.attacked_pairs: must be positive");
  if (eval.seeds.empty()) throw ConfigError("eval.seeds: must not be empty");
  if (eval.variants.empty()) throw ConfigError("eval.variants: must not be empty");
  const auto known = attack::variant_names();
  for (const auto& v : eval.variants) {
    if (std::find(known.begin(), known.end(), v) == known.end()) throw ConfigError("eval.variants: unknown variant '" + v + "'");
  }
  const auto counts = data::split_counts(data.num_pairs, data.split_fractions);
  const auto available = counts[static_cast<std::size_t>(eval.split)];
  if (eval.attacked_pairs > available) {
    throw ConfigError("eval.attacked_pairs: " + std::to_string(eval.attacked_pairs) + " exceeds the " +
                      std::to_string(available) + " pairs of the " + std::string(data::split_name(eval.split)) + " split");
  }
  if (available < 10) throw ConfigError("eval.split: gallery of " + std::to_string(available) + " pairs is smaller than 10");
}

RunConfig parse(std::string_view text, const std::filesystem::path& base_dir) {
  Document doc = read_document(text);
  RunConfig c;

  Reader run(doc, "run");
  std::string root = "runs";
  run.str("output_root", root);
  run.str("run_id", c.run_id);
  std::uint64_t seed = 1;
  run.integer("seed", seed);

  Reader d(doc, "data");
  d.integer("num_pairs", c.data.num_pairs);
  d.integer("image_size", c.data.image_size);
  d.list("shapes", c.data.shapes);
  d.list("colors", c.data.colors);
  d.list("layouts", c.data.layouts);
  c.data_seed_set = d.integer("seed", c.data.seed);
  std::vector<std::string> fr;
  if (d.list("split_fractions", fr)) {
    if (fr.size() != 3) throw ConfigError("data.split_fractions: expected three values (train, val, test)");
    for (std::size_t i = 0; i < 3; ++i) c.data.split_fractions[i] = parse_number(fr[i], "data.split_fractions");
  }

  Reader ms(doc, "models");
  ms.str("source", c.source);
  std::vector<std::string> targets{"residual-cnn"};
  ms.list("targets", targets);
  std::vector<std::string> ids{c.source};
  for (const auto& t : targets) {
    if (t != c.source) ids.push_back(t);
  }
  for (const auto& id : ids) {
    ModelEntry e;
    try {
      e.arch = models::parse_architecture(id);
    } catch (const std::exception&) {
      throw ConfigError("models: unknown architecture '" + id + "' (expected patch-transformer or residual-cnn)");
    }
    e.train = default_train_spec(e.arch);
    Reader mo(doc, "model." + id);
    auto& o = e.overrides;
    mo.opt_integer("input_size", o.input_size);
    mo.opt_integer("patch_or_kernel", o.patch_or_kernel);
    mo.opt_integer("width", o.width);
    mo.opt_integer("depth", o.depth);
    mo.opt_integer("heads", o.heads);
    mo.opt_integer("mlp_ratio", o.mlp_ratio);
    mo.opt_integer("embedding_dim", o.embedding_dim);
    mo.opt_integer("text_width", o.text_width);
    mo.opt_integer("text_depth", o.text_depth);
    Reader tr(doc, "train." + id);
    tr.integer("epochs", e.train.epochs);
    tr.integer("batch_size", e.train.batch_size);
    tr.number("learning_rate", e.train.learning_rate);
    tr.number("temperature", e.train.temperature);
    tr.number("weight_decay", e.train.weight_decay);
    tr.integer("augment_shift", e.train.augment_shift);
    tr.flag("augment_mirror", e.train.augment_mirror);
    tr.number("augment_noise", e.train.augment_noise);
    tr.number("augment_zoom", e.train.augment_zoom);
    e.train_seed_set = tr.integer("seed", e.train.seed);
    c.models.push_back(std::move(e));
  }

  Reader a(doc, "attack");
  auto& ac = c.attack;
  a.str("method", c.attack_method);
  a.number("epsilon_img", ac.epsilon_img);
  a.integer("epsilon_txt", ac.epsilon_txt);
  a.integer("steps", ac.steps);
  if (auto v = a.get("step_size")) {
    if (v->text == "auto") ac.step_size.reset();
    else ac.step_size = parse_number(v->text, "attack.step_size");
  }
  std::vector<std::string> scales;
  if (a.list("scale_set", scales)) {
    ac.scale_set.clear();
    for (const auto& s : scales) ac.scale_set.push_back(parse_number(s, "attack.scale_set"));
  }
  a.integer("rescale_period", ac.rescale_period);
  a.integer("batch_size", ac.batch_size);
  a.integer("k_max", ac.k_max);
  a.opt_integer("grid_step", ac.grid_step);
  a.integer("beta1", ac.beta1);
  a.opt_integer("beta2", ac.beta2);
  a.flag("use_resizing", ac.use_resizing);
  a.flag("use_sliding", ac.use_sliding);
  a.flag("use_mgsd", ac.use_mgsd);
  a.flag("attack_text", ac.attack_text);
  a.flag("parameter_study", ac.parameter_study);
  std::string reduction;
  if (a.str("tap_reduction", reduction)) {
    try {
      ac.reduction = attack::parse_tap_reduction(reduction);
    } catch (const std::exception&) {
      throw ConfigError("attack.tap_reduction: expected flatten or token-mean, got '" + reduction + "'");
    }
  }
  c.attack_seed_set = a.integer("seed", ac.seed);

  Reader ev(doc, "eval");
  ev.integer("attacked_pairs", c.eval.attacked_pairs);
  std::string split;
  if (ev.str("split", split)) {
    try {
      c.eval.split = data::parse_split(split);
    } catch (const std::exception&) {
      throw ConfigError("eval.split: expected train, val or test, got '" + split + "'");
    }
  }
  ev.list("variants", c.eval.variants);
  std::vector<std::string> seeds;
  if (ev.list("seeds", seeds)) {
    c.eval.seeds.clear();
    for (const auto& s : seeds) c.eval.seeds.push_back(Reader::parse_int<std::uint64_t>(s, "eval.seeds"));
  }

  for (const auto& [name, sec] : doc) {
    for (const auto& [key, v] : sec) {
      if (!v.used) {
        throw ConfigError(name + "." + key + ": unknown key (line " + std::to_string(v.line) + ")");
      }
    }
    if (sec.empty()) {
      const bool known = name == "run" || name == "data" || name == "models" || name == "attack" || name == "eval" ||
                         std::any_of(ids.begin(), ids.end(), [&](const std::string& id) {
                           return name == "model." + id || name == "train." + id;
                         });
      if (!known) throw ConfigError(name + ": unknown section");
    }
  }

  if (const char* env = std::getenv("MAA_OUTPUT_ROOT"); env && *env) root = env;
  std::filesystem::path rp(root);
  if (rp.is_relative()) rp = base_dir / rp;
  c.output_root = rp.lexically_normal();

  c.set_global_seed(seed);
  c.validate();
  return c;
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  return parse(ss.str(), base);
}

std::string serialize(const RunConfig& c) {
  std::ostringstream os;
  os << "[run]\n"
     << "output_root = " << c.output_root.string() << "\n"
     << "run_id = " << c.run_id << "\n"
     << "seed = " << c.seed << "\n\n";
  os << "[data]\n"
     << "num_pairs = " << c.data.num_pairs << "\n"
     << "image_size = " << c.data.image_size << "\n"
     << "shapes = " << join(c.data.shapes) << "\n"
     << "colors = " << join(c.data.colors) << "\n"
     << "layouts = " << join(c.data.layouts) << "\n"
     << "seed = " << c.data.seed << "\n"
     << "split_fractions = "
     << join(std::vector<double>(c.data.split_fractions.begin(), c.data.split_fractions.end())) << "\n\n";
  os << "[models]\nsource = " << c.source << "\ntargets = " << join(c.target_ids()) << "\n\n";
  for (const auto& m : c.models) {
    const auto mc = m.model_config(0, 0);
    os << "[model." << m.id() << "]\n"
       << "input_size = " << mc.input_size << "\n"
       << "patch_or_kernel = " << mc.patch_or_kernel << "\n"
       << "width = " << mc.width << "\n"
       << "depth = " << mc.depth << "\n"
       << "heads = " << mc.heads << "\n"
       << "mlp_ratio = " << mc.mlp_ratio << "\n"
       << "embedding_dim = " << mc.embedding_dim << "\n"
       << "text_width = " << mc.text_width << "\n"
       << "text_depth = " << mc.text_depth << "\n\n";
    const auto& t = m.train;
    os << "[train." << m.id() << "]\n"
       << "epochs = " << t.epochs << "\n"
       << "batch_size = " << t.batch_size << "\n"
       << "learning_rate = " << fmt_double(t.learning_rate) << "\n"
       << "temperature = " << fmt_double(t.temperature) << "\n"
       << "weight_decay = " << fmt_double(t.weight_decay) << "\n"
       << "augment_shift = " << t.augment_shift << "\n"
       << "augment_mirror = " << (t.augment_mirror ? "true" : "false") << "\n"
       << "augment_noise = " << fmt_double(t.augment_noise) << "\n"
       << "augment_zoom = " << fmt_double(t.augment_zoom) << "\n"
       << "seed = " << t.seed << "\n\n";
  }
  const auto& a = c.attack;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "[attack]\n"
     << "method = " << c.attack_method << "\n"
     << "epsilon_img = " << fmt_double(a.epsilon_img) << "\n"
     << "epsilon_txt = " << a.epsilon_txt << "\n"
     << "steps = " << a.steps << "\n"
     << "step_size = " << (a.step_size ? fmt_double(*a.step_size) : "auto") << "\n"
     << "scale_set = " << join(a.scale_set) << "\n"
     << "rescale_period = " << a.rescale_period << "\n"
     << "batch_size = " << a.batch_size << "\n"
     << "k_max = " << a.k_max << "\n"
     << "grid_step = " << (a.grid_step ? std::to_string(*a.grid_step) : "auto") << "\n"
     << "beta1 = " << a.beta1 << "\n"
     << "beta2 = " << (a.beta2 ? std::to_string(*a.beta2) : "auto") << "\n"
     << "use_resizing = " << b(a.use_resizing) << "\n"
     << "use_sliding = " << b(a.use_sliding) << "\n"
     << "use_mgsd = " << b(a.use_mgsd) << "\n"
     << "attack_text = " << b(a.attack_text) << "\n"
     << "parameter_study = " << b(a.parameter_study) << "\n"
     << "tap_reduction = " << attack::tap_reduction_name(a.reduction) << "\n"
     << "seed = " << a.seed << "\n\n";
  os << "[eval]\n"
     << "attacked_pairs = " << c.eval.attacked_pairs << "\n"
     << "split = " << data::split_name(c.eval.split) << "\n"
     << "variants = " << join(c.eval.variants) << "\n"
     << "seeds = " << join(c.eval.seeds) << "\n";
  return os.str();
}

}  // namespace maa::config
