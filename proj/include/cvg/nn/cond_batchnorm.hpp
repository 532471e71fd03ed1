#pragma once

#include <cstdint>
#include <map>

#include <torch/torch.h>

namespace cvg::nn {

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

// Per-frame conditional batch normalisation for (B, T, C, H, W) features.
// Statistics are taken per (t, c) over (B, H, W); the result is scaled by
// 1 + G(cond) and shifted by Bias(cond), both linear in the condition and
// zero at initialisation.
//
// Statistics:
//  * training mode: batch statistics, EMA update of the training-time
//    running statistics (allocated for the first length seen).
//  * eval mode: recomputed statistics for the exact length if present,
//    otherwise a prefix of the training statistics when T <= trained length.
//    Anything else is a StateError.
//  * eval mode while accumulating: batch statistics, folded into a
//    cumulative average kept separately for the accumulation length.
class CondBatchNormImpl : public torch::nn::Module {
 public:
  CondBatchNormImpl(int64_t channels, int64_t cond_dim);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond);

  // Affine parameters for a condition batch: each (B, C).
  std::pair<torch::Tensor, torch::Tensor> gain_bias(const torch::Tensor& cond);

  int64_t trained_length() const;  // 0 before the first training forward
  bool has_stats_for(int64_t frames) const;

  // Running statistics used in eval mode for `frames`, each (T, C).
  std::pair<torch::Tensor, torch::Tensor> eval_stats(int64_t frames) const;

  void begin_accumulate(int64_t frames);
  void end_accumulate();
  void drop_recomputed();

  int64_t channels() const { return channels_; }

  torch::nn::Linear gain{nullptr};
  torch::nn::Linear shift{nullptr};
  torch::Tensor running_mean;  // (T_train * C)
  torch::Tensor running_var;
  torch::Tensor tracked;       // number of training updates

 private:
  struct Recomputed {
    torch::Tensor mean, var;
    int64_t passes = 0;
  };

  int64_t channels_;
  int64_t accumulating_ = 0;
  std::map<int64_t, Recomputed> recomputed_;
};
TORCH_MODULE(CondBatchNorm);

// Visits every CondBatchNorm under `root`.
template <typename Fn>
void for_each_batchnorm(torch::nn::Module& root, Fn&& fn) {
  for (auto& m : root.modules(/*include_self=*/true)) {
    if (auto* bn = m->as<CondBatchNormImpl>()) fn(*bn);
  }
}

}  // namespace cvg::nn
