#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "cvg/dataset.hpp"
#include "cvg/featnet.hpp"

namespace cvg {

// exp(mean_n KL(p(y|x_n) || mean_m p(y|x_m))), natural log. Rows must be
// distributions within 1e-4.
double inception_score(const torch::Tensor& probs);

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)) with unbiased
// covariances. The root's trace is taken through the symmetric matrix
// sqrt(S_a) S_b sqrt(S_a), negative eigenvalues clamped to zero.
double frechet_distance(const torch::Tensor& feats_a, const torch::Tensor& feats_b);

// FVD: clip logits; FID: per-frame penultimate features.
double frechet_video_distance(FeatureNet& net, const torch::Tensor& a, const torch::Tensor& b);
double frechet_frame_distance(FeatureNet& net, const torch::Tensor& a, const torch::Tensor& b);
double inception_score(FeatureNet& net, const torch::Tensor& videos);

// Radially averaged power spectra of grayscale frames (N, H, W): power is
// |F|^2 / (HW)^2, averaged within integer-radius bins (radius floor'ed and
// clamped to the last of floor(min(H, W) / 2) bins). Returns (N, bins).
torch::Tensor radial_psd(const torch::Tensor& frames, torch::Tensor* bin_counts = nullptr);

struct PsdFrameProfile {
  int64_t frame_index = 0;  // zero-based
  std::vector<double> mean;
  std::vector<double> std;
};

struct PsdResult {
  std::vector<int64_t> bin_counts;
  std::vector<PsdFrameProfile> frames;

  std::string to_csv() const;  // frame_index,bin_radius,mean,std
  nlohmann::json to_json() const;
};

// Per requested frame: mean radial profile over all videos and the std of
// the per-subset means over `subsets` disjoint contiguous subsets.
PsdResult psd_profile(const torch::Tensor& videos, const std::vector<int64_t>& frame_indices,
                      int64_t subsets = 3);

// Mean over bins of |log10(a) - log10(b)|.
double psd_log_distance(const std::vector<double>& a, const std::vector<double>& b);

// Mean absolute difference between f_s(f_t(x_out)) and x_in.
double grounding_error(const torch::Tensor& x_out, const torch::Tensor& x_in, int64_t k_t, int64_t k_s);

struct ClassMetrics {
  double is = 0.0;
  double fid = 0.0;
};

std::map<int64_t, ClassMetrics> per_class_report(const std::map<int64_t, torch::Tensor>& generated,
                                                 const std::map<int64_t, torch::Tensor>& reference,
                                                 FeatureNet& net);
std::map<int64_t, torch::Tensor> split_by_class(const VideoBatch& videos);

struct MetricsReport {
  double is_mean = 0.0;
  double fid = 0.0;
  double fvd = 0.0;
  std::optional<PsdResult> psd;
  std::optional<double> grounding;
  std::map<int64_t, ClassMetrics> per_class;

  nlohmann::json to_json() const;
};

}  // namespace cvg
