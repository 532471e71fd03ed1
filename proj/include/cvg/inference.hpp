#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "cvg/checkpoint.hpp"
#include "cvg/config.hpp"
#include "cvg/first_level.hpp"
#include "cvg/up_level.hpp"
#include "cvg/video.hpp"

namespace cvg {

// Executable sampler over trained levels 1..L. Generators are kept in eval
// mode with gradients disabled.
class CascadeHandle {
 public:
  CascadeHandle() = default;

  void set_first(FirstLevelGenerator generator);
  void add_up(UpLevelGenerator generator);  // appended as the next level

  int64_t num_levels() const;
  FirstLevelGenerator& first();
  UpLevelGenerator& up(int64_t level);  // level >= 2
  torch::nn::Module& generator(int64_t level);

  std::vector<LevelFactors> factors() const;
  int64_t num_classes() const;

  // Output frames the level was trained at (0 if never trained).
  int64_t trained_length(int64_t level);
  bool stats_valid(int64_t level, int64_t frames);

  // Builds levels 1..ckpts.size() from checkpoints; fingerprints must
  // match `config`, otherwise CheckpointError.
  static CascadeHandle from_checkpoints(const RunConfig& config, const std::vector<LevelCheckpoint>& ckpts);
  // Reads the configured checkpoint paths of levels 1..levels. A missing
  // file raises MissingPrerequisiteError naming the level.
  static CascadeHandle load(const RunConfig& config, int64_t levels);

 private:
  FirstLevelGenerator first_{nullptr};
  std::vector<UpLevelGenerator> ups_;
};

FirstLevelGenerator build_first_level(const RunConfig& config);
UpLevelGenerator build_up_level(const RunConfig& config, int64_t level);

// T1 times the product of every up-level's k_t.
int64_t unrolled_length(const std::vector<LevelFactors>& factors, int64_t t1);
int64_t unrolled_length(const CascadeHandle& handle, int64_t t1);

// Re-estimates per-frame batch-norm statistics of `level` for output length
// `target_t` from `passes` grad-free forwards on fresh noise (and, for
// up-levels, fresh samples of the lower cascade). Training statistics are
// left untouched.
void recompute_bn_stats(CascadeHandle& handle, int64_t level, int64_t target_t, int64_t passes = 200,
                        uint64_t seed = 0, int64_t batch = 8);

// Recomputes every level whose statistics do not cover the lengths an
// unroll from `t1` first-level frames needs.
void prepare_cascade(CascadeHandle& handle, int64_t t1, int64_t passes = 200, uint64_t seed = 0,
                     int64_t batch = 8);

// Runs an up-level once over a full-length input with one z per video.
VideoBatch apply_convolutionally(UpLevelGenerator& generator, const VideoBatch& lowres_full, const torch::Tensor& z);

// One grad-free batch through levels 1..depth with the global RNG; `labels`
// may be undefined for unconditional models. Statistics must be valid.
std::vector<torch::Tensor> sample_levels(CascadeHandle& handle, const torch::Tensor& labels, int64_t n, int64_t t1,
                                         int64_t depth);

// Samples every level: [x^1, ..., x^L] with x^1 of t1 frames. `levels`
// limits the depth (-1 = all). Labels are `label` for every video when
// given, otherwise drawn uniformly (conditional models only).
std::vector<VideoBatch> sample_cascade(CascadeHandle& handle, int64_t n, std::optional<int64_t> label,
                                       uint64_t seed, int64_t t1, int64_t levels = -1, int64_t batch = 16);

// Writes the top view as sample_NNNNN.cvg plus manifest.json and the
// samples.json sidecar {"seed", "labels", "level_shapes"}.
void write_samples(const std::filesystem::path& dir, const std::vector<VideoBatch>& views, uint64_t seed,
                   int64_t num_classes);

}  // namespace cvg
