#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace cvg::nn {

// Semi-orthogonal (rows x cols) float64 matrix: W^T W = I when cols <= rows,
// W W^T = I otherwise. Deterministic per seed.
torch::Tensor orthogonal_init(int64_t rows, int64_t cols, uint64_t seed);

// Fills `weight` in place with the orthogonalised (out x rest) flattening.
// The seed is drawn from the global torch generator, so whole models are
// reproducible under torch::manual_seed.
void orthogonal_(torch::Tensor& weight);

}  // namespace cvg::nn
