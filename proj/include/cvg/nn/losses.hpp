#pragma once

#include <torch/torch.h>

namespace cvg::nn {

enum class LossKind { hinge, log };

// L_D = mean(max(0, 1 - real)) + mean(max(0, 1 + fake)), each mean over
// every sample and output location.
torch::Tensor hinge_d_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);
// L_G = -mean(fake)
torch::Tensor hinge_g_loss(const torch::Tensor& fake_scores);

// Saturating value-function form with D = sigmoid(score):
//   L_D = -(E log D(real) + E log(1 - D(fake))),  L_G = E log(1 - D(fake)).
torch::Tensor log_d_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);
torch::Tensor log_g_loss(const torch::Tensor& fake_scores);

torch::Tensor d_loss(LossKind kind, const torch::Tensor& real_scores, const torch::Tensor& fake_scores);
torch::Tensor g_loss(LossKind kind, const torch::Tensor& fake_scores);

}  // namespace cvg::nn
