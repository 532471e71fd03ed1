#include "cvg/video.hpp"

#include <cmath>
#include <sstream>

#include "cvg/errors.hpp"

namespace cvg {

namespace {

std::string shape_str(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

// Resamples one axis by an integer factor with centre-aligned bilinear taps.
torch::Tensor bilinear_axis(const torch::Tensor& x, int64_t dim, int64_t factor) {
  const int64_t in = x.size(dim);
  const int64_t out = in / factor;
  std::vector<int64_t> lo(out), hi(out);
  double frac = 0.0;
  for (int64_t i = 0; i < out; ++i) {
    const double centre = (static_cast<double>(i) + 0.5) * static_cast<double>(factor) - 0.5;
    const double base = std::floor(centre);
    frac = centre - base;
    lo[i] = static_cast<int64_t>(base);
    hi[i] = std::min<int64_t>(lo[i] + 1, in - 1);
  }
  auto opts = torch::TensorOptions().dtype(torch::kInt64);
  auto lo_idx = torch::tensor(lo, opts);
  if (frac == 0.0) return x.index_select(dim, lo_idx);
  auto hi_idx = torch::tensor(hi, opts);
  // Integer factors give the same fractional offset for every output sample.
  return x.index_select(dim, lo_idx) * (1.0 - frac) + x.index_select(dim, hi_idx) * frac;
}

torch::Tensor nearest_axis(const torch::Tensor& x, int64_t dim, int64_t out) {
  const int64_t in = x.size(dim);
  if (in == out) return x;
  std::vector<int64_t> idx(out);
  for (int64_t i = 0; i < out; ++i) idx[i] = (i * in) / out;
  return x.index_select(dim, torch::tensor(idx, torch::TensorOptions().dtype(torch::kInt64)));
}

}  // namespace

VideoBatch::VideoBatch(torch::Tensor d, std::optional<torch::Tensor> l, int64_t sub)
    : data(std::move(d)), labels(std::move(l)), subsample(sub) {}

void VideoBatch::validate(double tolerance) const {
  if (!data.defined() || data.dim() != 5)
    throw DimensionError("video batch must be 5-D (B,T,C,H,W), got " +
                         (data.defined() ? shape_str(data) : std::string("undefined")));
  if (frames() < 1 || height() < 1 || width() < 1)
    throw DimensionError("video batch needs T, H, W >= 1, got " + shape_str(data));
  if (subsample < 1) throw ArgumentError("subsample factor must be >= 1");
  if (labels) {
    if (labels->dim() != 1 || labels->size(0) != batch())
      throw ArgumentError("labels must have length B");
  }
  auto d = data.detach();
  if (!torch::isfinite(d).all().item<bool>()) throw ArgumentError("video contains non-finite values");
  if (d.numel() > 0 && d.abs().max().item<double>() > 1.0 + tolerance)
    throw ArgumentError("video values outside [-1, 1]");
}

torch::Tensor bilinear_downsample(const torch::Tensor& x, int64_t factor) {
  if (factor < 1) throw ArgumentError("downsampling factor must be >= 1");
  const int64_t h = x.size(-2), w = x.size(-1);
  if (h % factor != 0 || w % factor != 0)
    throw DimensionError("spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by " + std::to_string(factor));
  if (factor == 1) return x;
  return bilinear_axis(bilinear_axis(x, x.dim() - 2, factor), x.dim() - 1, factor);
}

VideoBatch downsample_spatial(const VideoBatch& v, int64_t k_s) {
  if (v.data.dim() != 5) throw DimensionError("expected (B,T,C,H,W) video");
  return VideoBatch(bilinear_downsample(v.data, k_s), v.labels, v.subsample);
}

VideoBatch subsample_temporal(const VideoBatch& v, int64_t k_t) {
  if (k_t < 1) throw ArgumentError("temporal factor must be >= 1");
  if (v.data.dim() != 5) throw DimensionError("expected (B,T,C,H,W) video");
  if (v.frames() % k_t != 0)
    throw DimensionError("frame count " + std::to_string(v.frames()) + " not divisible by " +
                         std::to_string(k_t));
  if (k_t == 1) return v;
  using torch::indexing::Slice;
  auto kept = v.data.index({Slice(), Slice(0, torch::indexing::None, k_t)});
  return VideoBatch(kept, v.labels, v.subsample * k_t);
}

std::vector<VideoBatch> build_pyramid(const VideoBatch& v, const PyramidSpec& spec) {
  std::vector<VideoBatch> views(spec.levels.size() + 1);
  views.back() = v;
  for (int64_t l = static_cast<int64_t>(spec.levels.size()) - 1; l >= 0; --l) {
    const auto& f = spec.levels[static_cast<size_t>(l)];
    views[static_cast<size_t>(l)] =
        downsample_spatial(subsample_temporal(views[static_cast<size_t>(l) + 1], f.k_t), f.k_s);
  }
  return views;
}

std::pair<VideoBatch, VideoBatch> crop_window_pair(const VideoBatch& low, const VideoBatch& high,
                                                   int64_t k_t, int64_t w, int64_t start) {
  if (k_t < 1 || w < 1) throw AlignmentError("window length and k_t must be >= 1");
  if (low.batch() != high.batch()) throw AlignmentError("low/high batch sizes differ");
  if (high.frames() != k_t * low.frames())
    throw AlignmentError("high view has " + std::to_string(high.frames()) + " frames, expected " +
                         std::to_string(k_t * low.frames()));
  if (start < 0 || start + w > low.frames())
    throw AlignmentError("window [" + std::to_string(start) + ", " + std::to_string(start + w) +
                         ") outside " + std::to_string(low.frames()) + " frames");
  return {VideoBatch(low.data.narrow(1, start, w), low.labels, low.subsample),
          VideoBatch(high.data.narrow(1, k_t * start, k_t * w), high.labels, high.subsample)};
}

torch::Tensor repeat_frames(const torch::Tensor& video, int64_t k_t) {
  if (k_t < 1) throw ArgumentError("temporal factor must be >= 1");
  if (k_t == 1) return video;
  return video.repeat_interleave(k_t, 1);
}

torch::Tensor nearest_resize(const torch::Tensor& x, int64_t h, int64_t w) {
  return nearest_axis(nearest_axis(x, x.dim() - 2, h), x.dim() - 1, w);
}

}  // namespace cvg
