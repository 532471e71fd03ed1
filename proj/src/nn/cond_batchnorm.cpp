#include "cvg/nn/cond_batchnorm.hpp"

#include "cvg/errors.hpp"

namespace cvg::nn {

CondBatchNormImpl::CondBatchNormImpl(int64_t channels, int64_t cond_dim) : channels_(channels) {
  gain = register_module("gain", torch::nn::Linear(cond_dim, channels));
  shift = register_module("shift", torch::nn::Linear(cond_dim, channels));
  torch::NoGradGuard no_grad;
  for (auto* lin : {&gain, &shift}) {
    (*lin)->weight.zero_();
    (*lin)->bias.zero_();
  }
  running_mean = register_buffer("running_mean", torch::zeros({0}));
  running_var = register_buffer("running_var", torch::zeros({0}));
  tracked = register_buffer("tracked", torch::zeros({}, torch::kInt64));
}

std::pair<torch::Tensor, torch::Tensor> CondBatchNormImpl::gain_bias(const torch::Tensor& cond) {
  return {1.0 + gain(cond), shift(cond)};
}

int64_t CondBatchNormImpl::trained_length() const {
  if (tracked.item<int64_t>() == 0) return 0;
  return running_mean.numel() / channels_;
}

bool CondBatchNormImpl::has_stats_for(int64_t frames) const {
  auto it = recomputed_.find(frames);
  if (it != recomputed_.end() && it->second.passes > 0) return true;
  const auto trained = trained_length();
  return trained > 0 && frames <= trained;
}

std::pair<torch::Tensor, torch::Tensor> CondBatchNormImpl::eval_stats(int64_t frames) const {
  auto it = recomputed_.find(frames);
  if (it != recomputed_.end() && it->second.passes > 0)
    return {it->second.mean.view({frames, channels_}), it->second.var.view({frames, channels_})};
  const auto trained = trained_length();
  if (trained == 0)
    throw StateError("batch-norm statistics are uninitialised for eval at length " +
                     std::to_string(frames));
  if (frames > trained)
    throw StateError("batch-norm statistics cover " + std::to_string(trained) +
                     " frames; recompute them for length " + std::to_string(frames));
  return {running_mean.view({trained, channels_}).narrow(0, 0, frames),
          running_var.view({trained, channels_}).narrow(0, 0, frames)};
}

void CondBatchNormImpl::begin_accumulate(int64_t frames) {
  accumulating_ = frames;
  auto& rec = recomputed_[frames];
  rec.mean = torch::zeros({frames * channels_}, running_mean.options());
  rec.var = torch::ones({frames * channels_}, running_var.options());
  rec.passes = 0;
}

void CondBatchNormImpl::end_accumulate() {
  if (accumulating_ != 0) {
    auto it = recomputed_.find(accumulating_);
    if (it != recomputed_.end() && it->second.passes == 0) recomputed_.erase(it);
  }
  accumulating_ = 0;
}

void CondBatchNormImpl::drop_recomputed() {
  recomputed_.clear();
  accumulating_ = 0;
}

torch::Tensor CondBatchNormImpl::forward(const torch::Tensor& x, const torch::Tensor& cond) {
  TORCH_CHECK(x.dim() == 5, "CondBatchNorm expects (B,T,C,H,W)");
  if (x.size(2) != channels_) throw DimensionError("CondBatchNorm channel mismatch");
  const int64_t b = x.size(0), t = x.size(1), h = x.size(3), w = x.size(4);
  auto folded = x.reshape({b, t * channels_, h, w});
  torch::Tensor normed;
  if (is_training()) {
    if (tracked.item<int64_t>() == 0 && running_mean.numel() != t * channels_) {
      running_mean.set_data(torch::zeros({t * channels_}, x.options()));
      running_var.set_data(torch::ones({t * channels_}, x.options()));
    }
    if (running_mean.numel() == t * channels_) {
      normed = torch::batch_norm(folded, {}, {}, running_mean, running_var, true,
                                 kBatchNormMomentum, kBatchNormEps, false);
      torch::NoGradGuard no_grad;
      tracked.add_(1);
    } else {
      // A length other than the tracked one: normalise, but leave the
      // training statistics untouched.
      normed = torch::batch_norm(folded, {}, {}, {}, {}, true, kBatchNormMomentum, kBatchNormEps,
                                 false);
    }
  } else if (accumulating_ != 0) {
    if (t != accumulating_)
      throw StateError("accumulating statistics for length " + std::to_string(accumulating_) +
                       " but got " + std::to_string(t));
    auto& rec = recomputed_.at(t);
    const double momentum = 1.0 / static_cast<double>(rec.passes + 1);
    normed = torch::batch_norm(folded, {}, {}, rec.mean, rec.var, true, momentum, kBatchNormEps,
                               false);
    ++rec.passes;
  } else {
    auto [mean, var] = eval_stats(t);
    normed = torch::batch_norm(folded, {}, {}, mean.reshape({-1}).contiguous(),
                               var.reshape({-1}).contiguous(), false, 0.0, kBatchNormEps, false);
  }
  normed = normed.view({b, t, channels_, h, w});
  auto [g, s] = gain_bias(cond);
  return torch::addcmul(s.view({b, 1, channels_, 1, 1}), normed, g.view({b, 1, channels_, 1, 1}));
}

}  // namespace cvg::nn
