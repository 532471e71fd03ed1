#pragma once

// Scalar reference implementations used as independent oracles. Everything
// here works on flat std::vector<double> buffers with explicit index
// arithmetic and never calls into the library under test.

#include <cmath>
#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace oracle {

inline std::vector<double> to_vec(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat64).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

// Centre-aligned bilinear downsample of one (H, W) plane by integer factor k.
inline std::vector<double> bilinear_plane(const std::vector<double>& in, int64_t h, int64_t w,
                                          int64_t k) {
  const int64_t oh = h / k, ow = w / k;
  std::vector<double> out(static_cast<size_t>(oh * ow));
  auto sample_axis = [k](int64_t i, int64_t n, int64_t& a, int64_t& b, double& wb) {
    const double c = (i + 0.5) * k - 0.5;
    a = static_cast<int64_t>(std::floor(c));
    wb = c - std::floor(c);
    b = std::min(a + 1, n - 1);
  };
  for (int64_t y = 0; y < oh; ++y) {
    int64_t y0, y1;
    double fy;
    sample_axis(y, h, y0, y1, fy);
    for (int64_t x = 0; x < ow; ++x) {
      int64_t x0, x1;
      double fx;
      sample_axis(x, w, x0, x1, fx);
      const double top = (1 - fx) * in[y0 * w + x0] + fx * in[y0 * w + x1];
      const double bot = (1 - fx) * in[y1 * w + x0] + fx * in[y1 * w + x1];
      out[static_cast<size_t>(y * ow + x)] = (1 - fy) * top + fy * bot;
    }
  }
  return out;
}

// Direct 2-D convolution (cross-correlation), zero padding `pad`, stride 1.
// in: (N, Ci, H, W), weight: (Co, Ci, kh, kw), bias: (Co) or empty.
inline std::vector<double> conv2d(const std::vector<double>& in, int64_t n, int64_t ci, int64_t h,
                                  int64_t w, const std::vector<double>& weight, int64_t co,
                                  int64_t kh, int64_t kw, const std::vector<double>& bias,
                                  int64_t pad_h, int64_t pad_w) {
  const int64_t oh = h + 2 * pad_h - kh + 1, ow = w + 2 * pad_w - kw + 1;
  std::vector<double> out(static_cast<size_t>(n * co * oh * ow), 0.0);
  for (int64_t b = 0; b < n; ++b)
    for (int64_t o = 0; o < co; ++o)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t x = 0; x < ow; ++x) {
          double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(o)];
          for (int64_t c = 0; c < ci; ++c)
            for (int64_t dy = 0; dy < kh; ++dy)
              for (int64_t dx = 0; dx < kw; ++dx) {
                const int64_t iy = y + dy - pad_h, ix = x + dx - pad_w;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += in[((b * ci + c) * h + iy) * w + ix] * weight[((o * ci + c) * kh + dy) * kw + dx];
              }
          out[static_cast<size_t>(((b * co + o) * oh + y) * ow + x)] = acc;
        }
  return out;
}

// Direct 3-D convolution on (N, Ci, T, H, W), weight (Co, Ci, kt, kh, kw).
inline std::vector<double> conv3d(const std::vector<double>& in, int64_t n, int64_t ci, int64_t t,
                                  int64_t h, int64_t w, const std::vector<double>& weight,
                                  int64_t co, int64_t kt, int64_t kh, int64_t kw,
                                  const std::vector<double>& bias, int64_t pt, int64_t ph,
                                  int64_t pw) {
  const int64_t ot = t + 2 * pt - kt + 1, oh = h + 2 * ph - kh + 1, ow = w + 2 * pw - kw + 1;
  std::vector<double> out(static_cast<size_t>(n * co * ot * oh * ow), 0.0);
  for (int64_t b = 0; b < n; ++b)
    for (int64_t o = 0; o < co; ++o)
      for (int64_t z = 0; z < ot; ++z)
        for (int64_t y = 0; y < oh; ++y)
          for (int64_t x = 0; x < ow; ++x) {
            double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(o)];
            for (int64_t c = 0; c < ci; ++c)
              for (int64_t dz = 0; dz < kt; ++dz)
                for (int64_t dy = 0; dy < kh; ++dy)
                  for (int64_t dx = 0; dx < kw; ++dx) {
                    const int64_t iz = z + dz - pt, iy = y + dy - ph, ix = x + dx - pw;
                    if (iz < 0 || iz >= t || iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                    acc += in[(((b * ci + c) * t + iz) * h + iy) * w + ix] *
                           weight[(((o * ci + c) * kt + dz) * kh + dy) * kw + dx];
                  }
            out[static_cast<size_t>((((b * co + o) * ot + z) * oh + y) * ow + x)] = acc;
          }
  return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle

namespace oracle {

inline std::vector<double> relu(std::vector<double> v) {
  for (auto& x : v) x = x > 0 ? x : 0;
  return v;
}

inline std::vector<double> add(std::vector<double> a, const std::vector<double>& b) {
  for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

// Per-frame batch norm on (B, T, C, H, W): statistics per (t, c) over
// (B, H, W), biased variance; then x * gain[b, c] + bias[b, c].
inline std::vector<double> frame_batchnorm(const std::vector<double>& x, int64_t B, int64_t T,
                                           int64_t C, int64_t H, int64_t W,
                                           const std::vector<double>& gain,
                                           const std::vector<double>& bias, double eps) {
  std::vector<double> out(x.size());
  auto at = [&](int64_t b, int64_t t, int64_t c, int64_t y, int64_t xx) {
    return static_cast<size_t>((((b * T + t) * C + c) * H + y) * W + xx);
  };
  for (int64_t t = 0; t < T; ++t)
    for (int64_t c = 0; c < C; ++c) {
      double mean = 0, var = 0;
      const double n = static_cast<double>(B * H * W);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t y = 0; y < H; ++y)
          for (int64_t xx = 0; xx < W; ++xx) mean += x[at(b, t, c, y, xx)] / n;
      for (int64_t b = 0; b < B; ++b)
        for (int64_t y = 0; y < H; ++y)
          for (int64_t xx = 0; xx < W; ++xx) var += std::pow(x[at(b, t, c, y, xx)] - mean, 2) / n;
      for (int64_t b = 0; b < B; ++b)
        for (int64_t y = 0; y < H; ++y)
          for (int64_t xx = 0; xx < W; ++xx) {
            const double nrm = (x[at(b, t, c, y, xx)] - mean) / std::sqrt(var + eps);
            out[at(b, t, c, y, xx)] = nrm * gain[b * C + c] + bias[b * C + c];
          }
    }
  return out;
}

// Nearest 2x upsample of (N, C, H, W).
inline std::vector<double> upsample2x(const std::vector<double>& x, int64_t N, int64_t C, int64_t H,
                                      int64_t W) {
  std::vector<double> out(static_cast<size_t>(N * C * 4 * H * W));
  for (int64_t n = 0; n < N * C; ++n)
    for (int64_t y = 0; y < 2 * H; ++y)
      for (int64_t xx = 0; xx < 2 * W; ++xx)
        out[static_cast<size_t>((n * 2 * H + y) * 2 * W + xx)] = x[(n * H + y / 2) * W + xx / 2];
  return out;
}

// 2x2 average pool over the last two axes of a tensor with `lead` leading
// elements.
inline std::vector<double> avgpool2x(const std::vector<double>& x, int64_t lead, int64_t H, int64_t W) {
  std::vector<double> out(static_cast<size_t>(lead * (H / 2) * (W / 2)));
  for (int64_t n = 0; n < lead; ++n)
    for (int64_t y = 0; y < H / 2; ++y)
      for (int64_t xx = 0; xx < W / 2; ++xx) {
        double s = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) s += x[(n * H + 2 * y + dy) * W + 2 * xx + dx];
        out[static_cast<size_t>((n * (H / 2) + y) * (W / 2) + xx)] = s / 4;
      }
  return out;
}

// Matrix-vector affine map: out[b, o] = sum_i m[o, i] * v[b, i] + bias[o].
inline std::vector<double> affine(const std::vector<double>& m, const std::vector<double>& bias,
                                  const std::vector<double>& v, int64_t B, int64_t out_dim,
                                  int64_t in_dim) {
  std::vector<double> out(static_cast<size_t>(B * out_dim));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t o = 0; o < out_dim; ++o) {
      double s = bias.empty() ? 0 : bias[static_cast<size_t>(o)];
      for (int64_t i = 0; i < in_dim; ++i) s += m[o * in_dim + i] * v[b * in_dim + i];
      out[static_cast<size_t>(b * out_dim + o)] = s;
    }
  return out;
}

}  // namespace oracle
