#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace cvg {

// A batch of videos laid out as (B, T, C, H, W) with values in [-1, 1].
// `subsample` records the temporal subsampling factor relative to the
// native framerate of the source data.
struct VideoBatch {
  torch::Tensor data;
  std::optional<torch::Tensor> labels;  // int64, shape (B,)
  int64_t subsample = 1;

  VideoBatch() = default;
  explicit VideoBatch(torch::Tensor d, std::optional<torch::Tensor> l = std::nullopt,
                      int64_t sub = 1);

  int64_t batch() const { return data.size(0); }
  int64_t frames() const { return data.size(1); }
  int64_t channels() const { return data.size(2); }
  int64_t height() const { return data.size(3); }
  int64_t width() const { return data.size(4); }

  // Throws DimensionError / ArgumentError if shape, range or labels are off.
  void validate(double tolerance = 1e-6) const;
};

// Factors relating level l to level l-1.
struct LevelFactors {
  int64_t k_t = 1;
  int64_t k_s = 1;
};

// Ordered factors from level 2 up to level L; L = levels.size() + 1.
struct PyramidSpec {
  std::vector<LevelFactors> levels;

  int64_t num_levels() const { return static_cast<int64_t>(levels.size()) + 1; }
};

// Antialias-free bilinear resize by an integer factor with sample points at
// pixel centres. Works on any tensor whose last two axes are (H, W) and is
// differentiable.
torch::Tensor bilinear_downsample(const torch::Tensor& x, int64_t factor);

VideoBatch downsample_spatial(const VideoBatch& v, int64_t k_s);
VideoBatch subsample_temporal(const VideoBatch& v, int64_t k_t);

// Returns [x^1, ..., x^L]; the last entry is `v` itself.
std::vector<VideoBatch> build_pyramid(const VideoBatch& v, const PyramidSpec& spec);

// Temporally aligned windows: low[start, start+w) and the matching
// high[k_t*start, k_t*(start+w)).
std::pair<VideoBatch, VideoBatch> crop_window_pair(const VideoBatch& low, const VideoBatch& high,
                                                   int64_t k_t, int64_t w, int64_t start);

// Nearest-neighbour helpers shared by the generators and metrics.
torch::Tensor repeat_frames(const torch::Tensor& video, int64_t k_t);      // (B,T,...) -> (B,k_t*T,...)
torch::Tensor nearest_resize(const torch::Tensor& x, int64_t h, int64_t w);  // last two axes

}  // namespace cvg
