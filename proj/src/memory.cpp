#include "cvg/memory.hpp"

#include "cvg/errors.hpp"

namespace cvg {

namespace {

// Values retained per frame and batch element; each term is channels * area.
struct Walk {
  int64_t values = 0;

  // ConvGRU: per step the two concatenated inputs, z, r, the candidate, the
  // candidate - h difference and the previous state; then the stacked output.
  void gru(int64_t c_in, int64_t c_h, int64_t area) { values += (2 * (c_h + c_in) + 5 * c_h + c_h) * area; }

  // Norm output and activation, [two upsampled copies], conv1 output, norm
  // output and activation, block output.
  void block2d(int64_t c_in, int64_t c_out, int64_t area_in, bool upsample) {
    const int64_t area_out = upsample ? 4 * area_in : area_in;
    values += 2 * c_in * area_in;
    if (upsample) values += 2 * c_in * area_out;
    values += 4 * c_out * area_out;
  }

  // Norm output and activation, two temporal-conv outputs, the re-laid-out
  // conv1 output, second norm output and activation, block output.
  void block3d(int64_t c_in, int64_t c_out, int64_t area) { values += (2 * c_in + 6 * c_out) * area; }

  void head(int64_t c, int64_t area) { values += (2 * c + 3) * area; }
};

void check(int64_t t_out, int64_t batch, int64_t bytes_per_value) {
  if (t_out < 1 || batch < 1 || bytes_per_value < 1)
    throw ArgumentError("memory estimate needs positive length, batch and value size");
}

}  // namespace

int64_t activation_memory_estimate(const FirstLevelConfig& config, int64_t t_out, int64_t batch,
                                   int64_t bytes_per_value) {
  config.validate();
  check(t_out, batch, bytes_per_value);
  Walk walk;
  int64_t in = config.seed_channels();
  int64_t side = config.seed_hw;
  const size_t n = config.multipliers.size();
  for (size_t u = 0; u < n; ++u) {
    const int64_t c = config.ch * config.multipliers[u];
    const bool upsample = u + 1 < n;
    walk.gru(in, c, side * side);
    walk.block2d(c, c, side * side, upsample);
    if (upsample) side *= 2;
    walk.block2d(c, c, side * side, false);
    in = c;
  }
  walk.head(in, side * side);
  return walk.values * t_out * batch * bytes_per_value;
}

int64_t activation_memory_estimate(const UpLevelConfig& config, int64_t input_size, int64_t t_out, int64_t batch,
                                   int64_t bytes_per_value) {
  config.validate();
  check(t_out, batch, bytes_per_value);
  if (input_size < 1) throw ArgumentError("input size must be positive");
  const int64_t frames = config.k_t * config.window_w;
  Walk walk;
  int64_t side = input_size;
  const int64_t low_area = input_size * input_size;
  // Repeated low-resolution input, stem input and stem output.
  const int64_t c0 = config.ch * config.multipliers.front();
  walk.values += (3 + (3 + config.d_z) + c0) * low_area;
  const auto n = static_cast<int64_t>(config.multipliers.size());
  const int64_t first_up = config.first_upsampling_unit();
  int64_t in = c0;
  for (int64_t u = 0; u < n; ++u) {
    const int64_t c = config.ch * config.multipliers[static_cast<size_t>(u)];
    const bool upsample = u >= first_up;
    if (config.recurrent_kind == RecurrentKind::convgru)
      walk.gru(in, c, side * side);
    else
      walk.block3d(in, c, side * side);
    // A grounding residual replaces the tensor it is added to, so it adds
    // nothing here; its 1x1 convs keep only the repeated input alive.
    walk.block2d(c, c, side * side, upsample);
    if (upsample) side *= 2;
    walk.block2d(c, c, side * side, false);
    in = c;
  }
  walk.head(in, side * side);
  return walk.values * frames * batch * bytes_per_value;
}

int64_t activation_memory_estimate(const RunConfig& config, int64_t level, int64_t t_out, int64_t batch,
                                   int64_t bytes_per_value) {
  if (level == 1) return activation_memory_estimate(config.level(1).first, t_out, batch, bytes_per_value);
  return activation_memory_estimate(config.level(level).up, config.size_at(level - 1), t_out, batch,
                                    bytes_per_value);
}

}  // namespace cvg
