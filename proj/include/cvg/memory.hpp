#pragma once

#include <cstdint>

#include "cvg/config.hpp"
#include "cvg/first_level.hpp"
#include "cvg/up_level.hpp"

namespace cvg {

// Bytes of activations a grad-enabled generator forward keeps alive for the
// backward pass (each retained tensor counted once), from the layer graph
// alone. Weight-sized intermediates are excluded, so level 1 is exactly
// linear in the output length.
int64_t activation_memory_estimate(const FirstLevelConfig& config, int64_t t_out, int64_t batch,
                                   int64_t bytes_per_value = 4);

// Up-levels train on windows of `window_w` input frames, so the estimate
// depends on the window, not on the full output length `t_out`.
int64_t activation_memory_estimate(const UpLevelConfig& config, int64_t input_size, int64_t t_out, int64_t batch,
                                   int64_t bytes_per_value = 4);

int64_t activation_memory_estimate(const RunConfig& config, int64_t level, int64_t t_out, int64_t batch,
                                   int64_t bytes_per_value = 4);

}  // namespace cvg
