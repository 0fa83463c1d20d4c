#pragma once

#include "maa/autodiff.hpp"
#include "maa/image.hpp"
#include "maa/random.hpp"

#include <functional>
#include <string>
#include <vector>

namespace maa::rscrop {

/// Scaled output size floor(n * s). Scales below 1 are only legal with
/// `parameter_study`.
int scaled_size(int n, double s);

/// Bilinear upscaling by independent per-axis factors. In parameter-study
/// mode a factor below 1 shrinks the image instead; the caller pads.
Image resize(const Image& image, double s_x, double s_y, bool parameter_study = false);

template <typename T>
ad::Var<T> resize(ad::Var<T> image, ad::Extent in, double s_x, double s_y, bool parameter_study = false);

/// Source of jitter draws; receives the inclusive bounds.
using AlphaSource = std::function<int(int lo, int hi)>;

AlphaSource alpha_from(Rng& rng);

/// Draws from a fixed list in order (test fixtures); throws when exhausted.
AlphaSource alpha_sequence(std::vector<int> alphas);

struct AxisSchedule {
  int scaled_size = 0;
  int window = 0;
  int grid_step = 0;
  int beta1 = 0;
  int beta2 = 0;
  std::vector<int> offsets;    // strictly increasing
  std::vector<bool> is_grid;   // even-index (grid) entry vs odd-index jitter
  std::vector<int> alphas;     // every draw consumed, in order

  std::vector<int> grid_offsets() const;
  std::vector<int> jitter_offsets() const;
};

/// Offsets L^i = (i/2)*l + (i%2)*alpha_i for i = 0, 1, 2, ...; offsets past
/// S - W are dropped and S - W is appended when the grid falls short.
/// Requires 1 <= beta1 <= beta2 < l <= W <= S.
AxisSchedule axis_schedule(int S, int W, int l, int beta1, int beta2, const AlphaSource& alpha);

/// Throws std::logic_error describing the first broken invariant.
void check_schedule(const AxisSchedule& s);

struct Window {
  int x = 0;
  int y = 0;
  bool grid = true;  // both offsets are grid offsets
  bool operator==(const Window&) const = default;
};

struct CropPlan {
  double s_x = 1.0;
  double s_y = 1.0;
  int scaled_w = 0;
  int scaled_h = 0;
  int window = 0;
  AxisSchedule x_axis;
  AxisSchedule y_axis;
  std::vector<Window> windows;  // grid windows first, then jitter windows
  std::size_t grid_count = 0;

  std::size_t size() const { return windows.size(); }
};

struct CropParams {
  int window = 32;
  int grid_step = 4;
  int beta1 = 1;
  int beta2 = 3;
  std::size_t k_max = 96;
  bool sliding = true;  // false: a single top-left window
};

/// Plans the windows for an image of `image_size` scaled by (s_x, s_y). With
/// sliding the plan holds every grid pair plus per-axis jitter windows; the
/// jitter is thinned by a deterministic stride when the total exceeds k_max.
/// `rng_x` and `rng_y` feed the two axes independently.
CropPlan plan_crops(int image_size, double s_x, double s_y, const CropParams& params, Rng& rng_x, Rng& rng_y);

struct Crop {
  int x = 0;
  int y = 0;
  Image image;
};

struct CropBatch {
  double s_x = 1.0;
  double s_y = 1.0;
  std::vector<Crop> crops;
  std::size_t size() const { return crops.size(); }
};

/// Materializes the plan's crops as images (no tape).
CropBatch build_crops(const Image& adv_image, const CropPlan& plan);

/// Graph form: every crop is a (3 x W*W) node connected to `image`.
template <typename T>
std::vector<ad::Var<T>> build_crops(ad::Var<T> image, ad::Extent in, const CropPlan& plan);

/// Boolean-mask union of the plan's windows covers the scaled image.
bool covers(const CropPlan& plan);

std::string plan_to_json(const CropPlan& plan);

}  // namespace maa::rscrop
