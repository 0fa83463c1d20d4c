#include "maa/rscrop.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace maa::rscrop {

int scaled_size(int n, double s) {
  if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("rscrop: scale must be positive and finite");
  return std::max(1, static_cast<int>(std::floor(n * s + 1e-9)));
}

namespace {

void check_scale(double s, bool parameter_study, const char* axis) {
  if (!(s > 0.0) || !std::isfinite(s)) {
    throw std::invalid_argument(std::string("rscrop: scale ") + axis + " must be positive and finite");
  }
  if (s < 1.0 && !parameter_study) {
    throw std::invalid_argument(std::string("rscrop: scale ") + axis + "=" + std::to_string(s) +
                                " below 1 requires parameter-study mode");
  }
}

}  // namespace

Image resize(const Image& image, double s_x, double s_y, bool parameter_study) {
  check_scale(s_x, parameter_study, "s_x");
  check_scale(s_y, parameter_study, "s_y");
  const int h = scaled_size(image.height, s_y);
  const int w = scaled_size(image.width, s_x);
  if (h == image.height && w == image.width) return image;
  return resize_image(image, h, w);
}

template <typename T>
ad::Var<T> resize(ad::Var<T> image, ad::Extent in, double s_x, double s_y, bool parameter_study) {
  check_scale(s_x, parameter_study, "s_x");
  check_scale(s_y, parameter_study, "s_y");
  const int h = scaled_size(in.height, s_y);
  const int w = scaled_size(in.width, s_x);
  if (h == in.height && w == in.width) return image;
  return ad::resize_bilinear(image, in, h, w);
}

template ad::Var<float> resize(ad::Var<float>, ad::Extent, double, double, bool);
template ad::Var<double> resize(ad::Var<double>, ad::Extent, double, double, bool);

AlphaSource alpha_from(Rng& rng) {
  return [&rng](int lo, int hi) { return static_cast<int>(rng.uniform_int(lo, hi)); };
}

AlphaSource alpha_sequence(std::vector<int> alphas) {
  auto next = std::make_shared<std::size_t>(0);
  auto values = std::make_shared<std::vector<int>>(std::move(alphas));
  return [next, values](int, int) {
    if (*next >= values->size()) throw std::out_of_range("alpha_sequence: fixture exhausted");
    return (*values)[(*next)++];
  };
}

std::vector<int> AxisSchedule::grid_offsets() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (is_grid[i]) out.push_back(offsets[i]);
  }
  return out;
}

std::vector<int> AxisSchedule::jitter_offsets() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (!is_grid[i]) out.push_back(offsets[i]);
  }
  return out;
}

AxisSchedule axis_schedule(int S, int W, int l, int beta1, int beta2, const AlphaSource& alpha) {
  if (!(1 <= beta1 && beta1 <= beta2 && beta2 < l && l <= W && W <= S)) {
    throw std::invalid_argument("axis_schedule: need 1 <= beta1 <= beta2 < l <= W <= S, got beta1=" +
                                std::to_string(beta1) + " beta2=" + std::to_string(beta2) + " l=" + std::to_string(l) +
                                " W=" + std::to_string(W) + " S=" + std::to_string(S));
  }
  AxisSchedule s{S, W, l, beta1, beta2, {}, {}, {}};
  const int last = S - W;
  auto push = [&](int offset, bool grid) {
    s.offsets.push_back(offset);
    s.is_grid.push_back(grid);
  };
  bool closed = false;
  for (int j = 0;; ++j) {
    const int even = j * l;
    if (even > last) break;
    push(even, true);
    if (even == last) {
      closed = true;
      break;
    }
    const int a = alpha(beta1, beta2);
    if (a < beta1 || a > beta2) throw std::out_of_range("axis_schedule: alpha draw outside [beta1, beta2]");
    s.alphas.push_back(a);
    const int odd = even + a;
    if (odd < last) {
      push(odd, false);
    } else if (odd == last) {
      // lands exactly on the final window position: it closes the schedule
      push(odd, true);
      closed = true;
      break;
    }
  }
  if (!closed) push(last, true);
  return s;
}

void check_schedule(const AxisSchedule& s) {
  auto fail = [](const std::string& what) { throw std::logic_error("axis schedule invariant: " + what); };
  if (!(1 <= s.beta1 && s.beta1 <= s.beta2 && s.beta2 < s.grid_step && s.grid_step <= s.window &&
        s.window <= s.scaled_size)) {
    fail("parameter bounds");
  }
  const int last = s.scaled_size - s.window;
  if (s.offsets.empty() || s.offsets.size() != s.is_grid.size()) fail("empty or malformed");
  if (s.offsets.front() != 0 || !s.is_grid.front()) fail("first offset must be grid offset 0");
  if (s.offsets.back() != last || !s.is_grid.back()) fail("last offset must be the grid offset S-W");
  int grid_index = 0;
  int prev_grid = 0;
  for (std::size_t i = 0; i < s.offsets.size(); ++i) {
    const int o = s.offsets[i];
    if (o < 0 || o > last) fail("offset " + std::to_string(o) + " outside [0, S-W]");
    if (i > 0 && o <= s.offsets[i - 1]) fail("offsets not strictly increasing");
    if (s.is_grid[i]) {
      const bool terminal = i + 1 == s.offsets.size();
      if (o != grid_index * s.grid_step && !(terminal && o == last)) {
        fail("grid offset " + std::to_string(o) + " is not " + std::to_string(grid_index) + "*l");
      }
      prev_grid = o;
      ++grid_index;
    } else {
      const int a = o - prev_grid;
      if (a < s.beta1 || a > s.beta2) fail("jitter offset " + std::to_string(o) + " is not grid + alpha");
      if (i == 0 || !s.is_grid[i - 1]) fail("jitter offset must follow a grid offset");
    }
  }
}

CropPlan plan_crops(int image_size, double s_x, double s_y, const CropParams& p, Rng& rng_x, Rng& rng_y) {
  const bool study = s_x < 1.0 || s_y < 1.0;
  CropPlan plan;
  plan.s_x = s_x;
  plan.s_y = s_y;
  plan.window = p.window;
  // shrunken images are zero padded up to the window
  plan.scaled_w = std::max(scaled_size(image_size, s_x), study ? p.window : 0);
  plan.scaled_h = std::max(scaled_size(image_size, s_y), study ? p.window : 0);
  if (plan.scaled_w < p.window || plan.scaled_h < p.window) {
    throw std::invalid_argument("plan_crops: scaled image " + std::to_string(plan.scaled_w) + "x" +
                                std::to_string(plan.scaled_h) + " smaller than window " + std::to_string(p.window));
  }
  if (!p.sliding) {
    auto single = [&](int S) {
      AxisSchedule a{S, p.window, p.grid_step, p.beta1, p.beta2, {0}, {true}, {}};
      return a;
    };
    plan.x_axis = single(plan.scaled_w);
    plan.y_axis = single(plan.scaled_h);
    plan.windows.push_back({0, 0, true});
    plan.grid_count = 1;
    return plan;
  }
  plan.x_axis = axis_schedule(plan.scaled_w, p.window, p.grid_step, p.beta1, p.beta2, alpha_from(rng_x));
  plan.y_axis = axis_schedule(plan.scaled_h, p.window, p.grid_step, p.beta1, p.beta2, alpha_from(rng_y));
  const auto gx = plan.x_axis.grid_offsets();
  const auto gy = plan.y_axis.grid_offsets();
  const auto jx = plan.x_axis.jitter_offsets();
  const auto jy = plan.y_axis.jitter_offsets();
  for (int y : gy) {
    for (int x : gx) plan.windows.push_back({x, y, true});
  }
  plan.grid_count = plan.windows.size();
  if (p.k_max < plan.grid_count) {
    throw std::invalid_argument("plan_crops: k_max=" + std::to_string(p.k_max) + " is below the " +
                                std::to_string(plan.grid_count) + " grid crops needed for coverage");
  }
  std::vector<Window> jitter;
  for (std::size_t i = 0; i < jx.size(); ++i) jitter.push_back({jx[i], gy[i % gy.size()], false});
  for (std::size_t i = 0; i < jy.size(); ++i) jitter.push_back({gx[i % gx.size()], jy[i], false});
  const std::size_t room = p.k_max - plan.grid_count;
  if (jitter.size() <= room) {
    plan.windows.insert(plan.windows.end(), jitter.begin(), jitter.end());
  } else {
    for (std::size_t i = 0; i < room; ++i) plan.windows.push_back(jitter[i * jitter.size() / room]);
  }
  return plan;
}

CropBatch build_crops(const Image& adv_image, const CropPlan& plan) {
  ad::Tape<float> tape;
  auto x = tape.constant(adv_image.to_matrix<float>());
  const auto nodes = build_crops(x, adv_image.extent(), plan);
  CropBatch batch;
  batch.s_x = plan.s_x;
  batch.s_y = plan.s_y;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    batch.crops.push_back({plan.windows[i].x, plan.windows[i].y,
                           Image::from_matrix(nodes[i].value(), plan.window, plan.window)});
  }
  return batch;
}

template <typename T>
std::vector<ad::Var<T>> build_crops(ad::Var<T> image, ad::Extent in, const CropPlan& plan) {
  const bool study = plan.s_x < 1.0 || plan.s_y < 1.0;
  auto scaled = resize(image, in, plan.s_x, plan.s_y, study);
  ad::Extent ext{in.channels, scaled_size(in.height, plan.s_y), scaled_size(in.width, plan.s_x)};
  if (ext.height != plan.scaled_h || ext.width != plan.scaled_w) {
    scaled = ad::pad(scaled, ext, plan.scaled_h, plan.scaled_w);
    ext = {in.channels, plan.scaled_h, plan.scaled_w};
  }
  std::vector<ad::Var<T>> crops;
  crops.reserve(plan.windows.size());
  for (const auto& w : plan.windows) {
    if (w.x == 0 && w.y == 0 && ext.height == plan.window && ext.width == plan.window) {
      crops.push_back(scaled);
    } else {
      crops.push_back(ad::crop(scaled, ext, w.y, w.x, plan.window, plan.window));
    }
  }
  return crops;
}

template std::vector<ad::Var<float>> build_crops(ad::Var<float>, ad::Extent, const CropPlan&);
template std::vector<ad::Var<double>> build_crops(ad::Var<double>, ad::Extent, const CropPlan&);

bool covers(const CropPlan& plan) {
  std::vector<char> mask(static_cast<std::size_t>(plan.scaled_w) * plan.scaled_h, 0);
  for (const auto& w : plan.windows) {
    if (w.x < 0 || w.y < 0 || w.x + plan.window > plan.scaled_w || w.y + plan.window > plan.scaled_h) return false;
    for (int y = w.y; y < w.y + plan.window; ++y) {
      std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(y) * plan.scaled_w + w.x, plan.window, 1);
    }
  }
  return std::all_of(mask.begin(), mask.end(), [](char c) { return c != 0; });
}

std::string plan_to_json(const CropPlan& plan) {
  using nlohmann::json;
  auto axis = [](const AxisSchedule& a) {
    return json{{"scaled_size", a.scaled_size}, {"window", a.window},     {"grid_step", a.grid_step},
                {"beta1", a.beta1},             {"beta2", a.beta2},       {"offsets", a.offsets},
                {"grid", a.grid_offsets()},     {"jitter", a.jitter_offsets()}, {"alphas", a.alphas}};
  };
  json windows = json::array();
  for (const auto& w : plan.windows) {
    windows.push_back({{"x", w.x}, {"y", w.y}, {"w", plan.window}, {"h", plan.window}, {"grid", w.grid}});
  }
  json j{{"s_x", plan.s_x},
         {"s_y", plan.s_y},
         {"scaled_width", plan.scaled_w},
         {"scaled_height", plan.scaled_h},
         {"window", plan.window},
         {"x_axis", axis(plan.x_axis)},
         {"y_axis", axis(plan.y_axis)},
         {"grid_crops", plan.grid_count},
         {"windows", windows}};
  return j.dump(2);
}

}  // namespace maa::rscrop
