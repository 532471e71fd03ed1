#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <future>
#include <limits>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "cvg/checkpoint.hpp"
#include "cvg/config.hpp"
#include "cvg/dataset.hpp"
#include "cvg/featnet.hpp"
#include "cvg/inference.hpp"

namespace cvg {

// Counts consecutive evaluations without improvement (lower is better).
class EarlyStopper {
 public:
  explicit EarlyStopper(int64_t patience) : patience_(patience) {}

  // Returns true when `value` is a new best.
  bool update(double value);
  bool should_stop() const { return patience_ > 0 && bad_ >= patience_; }
  double best() const { return best_; }
  int64_t bad_evaluations() const { return bad_; }

 private:
  int64_t patience_;
  int64_t bad_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

// Deterministic train / held-out split of `n` videos.
struct DataSplit {
  std::vector<size_t> train, holdout;
};
DataSplit split_holdout(size_t n, double holdout_fraction, uint64_t seed);

// One batch of pyramid views, views[0] = x^1.
struct PyramidBatch {
  std::vector<VideoBatch> views;
  torch::Tensor labels;  // undefined for unconditional data
  std::vector<double> window_u;  // per-sample uniform [0, 1) for window starts
};

// Batch `b` depends only on (seed, b): the video indices and clip offsets
// come from an RNG seeded with both, so the stream is identical for any
// number of prefetch workers.
class BatchSource {
 public:
  BatchSource(const VideoBatch& videos, std::vector<size_t> indices, PyramidSpec pyramid, int64_t clip_frames,
              int64_t batch_size, uint64_t seed, int64_t num_workers = 0);
  ~BatchSource();

  BatchSource(const BatchSource&) = delete;
  BatchSource& operator=(const BatchSource&) = delete;

  PyramidBatch make(int64_t b) const;  // pure
  PyramidBatch next();                 // batch `position()`, then advances
  int64_t position() const { return position_; }
  void seek(int64_t b);

 private:
  void refill();

  const VideoBatch& videos_;
  std::vector<size_t> indices_;
  PyramidSpec pyramid_;
  int64_t clip_frames_, batch_size_;
  uint64_t seed_;
  int64_t num_workers_;
  int64_t position_ = 0;
  int64_t queued_ = 0;
  std::deque<std::future<PyramidBatch>> pending_;
};

// Prefetch worker count from CVG_NUM_WORKERS (0 when unset or invalid).
int64_t workers_from_env();

struct TrainOptions {
  std::filesystem::path checkpoint_path;  // empty: the configured path
  bool resume = false;
  int64_t num_workers = 0;
  FeatureNet featnet{nullptr};  // required when eval_every > 0
  std::function<void(const nlohmann::json&)> on_log;
  // Sees every (output, input) pair handed to the discriminators; `real`
  // tells data pairs from generated ones.
  std::function<void(bool real, const torch::Tensor& out, const std::optional<torch::Tensor>& in)> observe;
  // Runs after every generator backward, before the update.
  std::function<void(torch::nn::Module& generator, torch::nn::Module& discriminator)> after_g_step;
};

struct TrainResult {
  LevelCheckpoint checkpoint;  // as written: best evaluation, else final
  int64_t iterations = 0;
  bool early_stopped = false;
  double best_fvd = std::numeric_limits<double>::quiet_NaN();
};

// `videos` is the whole dataset at full resolution; the held-out part is
// selected with split_holdout(config.data.holdout_fraction, config seed).
TrainResult train_level1(const RunConfig& config, const VideoBatch& videos, const TrainOptions& options = {});

// `prev` holds trained checkpoints of levels 1..l-1; they stay frozen.
TrainResult train_uplevel(int64_t level, const RunConfig& config, const VideoBatch& videos,
                          const std::vector<LevelCheckpoint>& prev, const TrainOptions& options = {});

// Dispatches on the level; for l > 1 reads the lower checkpoints from their
// configured paths (MissingPrerequisiteError if absent).
TrainResult train_level(int64_t level, const RunConfig& config, const VideoBatch& videos,
                        const TrainOptions& options = {});

// Where resumable state of a run is kept next to its checkpoint.
std::filesystem::path resume_path(const std::filesystem::path& checkpoint_path);

}  // namespace cvg
