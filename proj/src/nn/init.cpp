#include "cvg/nn/init.hpp"

#include "cvg/errors.hpp"

namespace cvg::nn {

torch::Tensor orthogonal_init(int64_t rows, int64_t cols, uint64_t seed) {
  if (rows < 1 || cols < 1) throw ArgumentError("orthogonal_init needs positive dimensions");
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const bool tall = rows >= cols;
  auto a = at::normal(0.0, 1.0, {tall ? rows : cols, tall ? cols : rows}, gen,
                      torch::TensorOptions().dtype(torch::kFloat64));
  auto [q, r] = torch::linalg_qr(a, "reduced");
  // Sign fix makes the factorisation unique (uniform over the Stiefel manifold).
  auto d = torch::sign(torch::diagonal(r));
  d = torch::where(d == 0, torch::ones_like(d), d);
  q = q * d.unsqueeze(0);
  return tall ? q : q.t().contiguous();
}

void orthogonal_(torch::Tensor& weight) {
  torch::NoGradGuard no_grad;
  const int64_t rows = weight.size(0);
  const int64_t cols = weight.numel() / rows;
  const auto seed = static_cast<uint64_t>(
      torch::randint(0, std::numeric_limits<int32_t>::max(), {1}, torch::kInt64).item<int64_t>());
  weight.copy_(orthogonal_init(rows, cols, seed).view(weight.sizes()).to(weight.dtype()));
}

}  // namespace cvg::nn
