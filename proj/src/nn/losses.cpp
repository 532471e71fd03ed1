#include "cvg/nn/losses.hpp"

#include "cvg/errors.hpp"

namespace cvg::nn {

namespace {

void require_scores(const torch::Tensor& s) {
  if (!s.defined() || s.numel() == 0) throw ArgumentError("score array is empty");
}

}  // namespace

torch::Tensor hinge_d_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
  require_scores(real_scores);
  require_scores(fake_scores);
  return torch::relu(1.0 - real_scores).mean() + torch::relu(1.0 + fake_scores).mean();
}

torch::Tensor hinge_g_loss(const torch::Tensor& fake_scores) {
  require_scores(fake_scores);
  return -fake_scores.mean();
}

torch::Tensor log_d_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
  require_scores(real_scores);
  require_scores(fake_scores);
  // log sigmoid(s) = -softplus(-s); log(1 - sigmoid(s)) = -softplus(s)
  return torch::softplus(-real_scores).mean() + torch::softplus(fake_scores).mean();
}

torch::Tensor log_g_loss(const torch::Tensor& fake_scores) {
  require_scores(fake_scores);
  return -torch::softplus(fake_scores).mean();
}

torch::Tensor d_loss(LossKind kind, const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
  return kind == LossKind::hinge ? hinge_d_loss(real_scores, fake_scores)
                                 : log_d_loss(real_scores, fake_scores);
}

torch::Tensor g_loss(LossKind kind, const torch::Tensor& fake_scores) {
  return kind == LossKind::hinge ? hinge_g_loss(fake_scores) : log_g_loss(fake_scores);
}

}  // namespace cvg::nn
