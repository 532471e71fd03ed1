#include "cvg/inference.hpp"

#include <fstream>

#include "cvg/dataset.hpp"
#include "cvg/errors.hpp"
#include "cvg/nn/cond_batchnorm.hpp"

namespace cvg {

namespace {

void freeze(torch::nn::Module& m) {
  for (auto& p : m.parameters()) p.requires_grad_(false);
  m.eval();
}

std::string level_name(int64_t level) { return "level " + std::to_string(level); }

}  // namespace

FirstLevelGenerator build_first_level(const RunConfig& config) { return FirstLevelGenerator(config.level(1).first); }

UpLevelGenerator build_up_level(const RunConfig& config, int64_t level) {
  if (level < 2) throw ArgumentError("up-levels start at level 2");
  return UpLevelGenerator(config.level(level).up);
}

void CascadeHandle::set_first(FirstLevelGenerator generator) {
  first_ = std::move(generator);
  freeze(*first_);
}

void CascadeHandle::add_up(UpLevelGenerator generator) {
  if (!first_) throw StateError("cascade needs a first level before up-levels");
  freeze(*generator);
  ups_.push_back(std::move(generator));
}

int64_t CascadeHandle::num_levels() const { return first_ ? 1 + static_cast<int64_t>(ups_.size()) : 0; }

FirstLevelGenerator& CascadeHandle::first() {
  if (!first_) throw StateError("cascade has no levels");
  return first_;
}

UpLevelGenerator& CascadeHandle::up(int64_t level) {
  if (level < 2 || level > num_levels()) throw ArgumentError(level_name(level) + " is not an up-level of this cascade");
  return ups_[static_cast<size_t>(level - 2)];
}

torch::nn::Module& CascadeHandle::generator(int64_t level) {
  if (level == 1) return *first();
  return *up(level);
}

std::vector<LevelFactors> CascadeHandle::factors() const {
  std::vector<LevelFactors> out;
  for (const auto& g : ups_) out.push_back({g->config().k_t, g->config().k_s});
  return out;
}

int64_t CascadeHandle::num_classes() const { return first_ ? first_->config().num_classes : 0; }

int64_t CascadeHandle::trained_length(int64_t level) {
  int64_t len = -1;
  nn::for_each_batchnorm(generator(level), [&](nn::CondBatchNormImpl& bn) {
    const int64_t t = bn.trained_length();
    len = len < 0 ? t : std::min(len, t);
  });
  return std::max<int64_t>(len, 0);
}

bool CascadeHandle::stats_valid(int64_t level, int64_t frames) {
  bool ok = true;
  nn::for_each_batchnorm(generator(level), [&](nn::CondBatchNormImpl& bn) { ok = ok && bn.has_stats_for(frames); });
  return ok;
}

CascadeHandle CascadeHandle::from_checkpoints(const RunConfig& config, const std::vector<LevelCheckpoint>& ckpts) {
  CascadeHandle h;
  for (size_t i = 0; i < ckpts.size(); ++i) {
    const int64_t level = static_cast<int64_t>(i) + 1;
    const auto& c = ckpts[i];
    if (c.level != level)
      throw CheckpointError("checkpoint for " + level_name(level) + " holds level " + std::to_string(c.level));
    if (c.fingerprint != config.fingerprint(level))
      throw CheckpointError(level_name(level) + " checkpoint was trained with a different configuration");
    if (level == 1) {
      auto g = build_first_level(config);
      restore_state(*g, c, "g.");
      h.set_first(g);
    } else {
      auto g = build_up_level(config, level);
      restore_state(*g, c, "g.");
      h.add_up(g);
    }
  }
  return h;
}

CascadeHandle CascadeHandle::load(const RunConfig& config, int64_t levels) {
  std::vector<LevelCheckpoint> ckpts;
  for (int64_t l = 1; l <= levels; ++l) {
    const auto path = config.resolve(config.level(l).checkpoint);
    if (!std::filesystem::exists(path))
      throw MissingPrerequisiteError(level_name(l) + " checkpoint " + path.string() + " not found");
    ckpts.push_back(LevelCheckpoint::load(path));
  }
  return from_checkpoints(config, ckpts);
}

int64_t unrolled_length(const std::vector<LevelFactors>& factors, int64_t t1) {
  int64_t t = t1;
  for (const auto& f : factors) t *= f.k_t;
  return t;
}

int64_t unrolled_length(const CascadeHandle& handle, int64_t t1) { return unrolled_length(handle.factors(), t1); }

namespace {

torch::Tensor draw_labels(int64_t n, int64_t num_classes, std::optional<int64_t> label) {
  if (num_classes == 0) {
    if (label) throw ArgumentError("class label given for an unconditional model");
    return {};
  }
  if (label) {
    if (*label < 0 || *label >= num_classes)
      throw ArgumentError("class " + std::to_string(*label) + " outside [0, " + std::to_string(num_classes) + ")");
    return torch::full({n}, *label, torch::kInt64);
  }
  return torch::randint(0, num_classes, {n}, torch::kInt64);
}

std::optional<torch::Tensor> opt_labels(const torch::Tensor& labels) {
  return labels.defined() ? std::optional<torch::Tensor>(labels) : std::nullopt;
}

void require_stats(CascadeHandle& h, int64_t depth, int64_t t1) {
  int64_t t = t1;
  for (int64_t l = 1; l <= depth; ++l) {
    if (l > 1) t *= h.up(l)->config().k_t;
    if (!h.stats_valid(l, t))
      throw StateError(level_name(l) + ": batch-norm statistics are not valid for " + std::to_string(t) +
                       " frames; run recompute_bn_stats first");
  }
}

}  // namespace

namespace {

// One forward through levels 1..zs.size() with the given noise.
std::vector<torch::Tensor> run_levels(CascadeHandle& h, const torch::Tensor& labels, const std::vector<torch::Tensor>& zs,
                                      int64_t t1) {
  std::vector<torch::Tensor> views;
  views.push_back(h.first()->forward(zs[0], opt_labels(labels), t1));
  for (size_t l = 1; l < zs.size(); ++l)
    views.push_back(h.up(static_cast<int64_t>(l) + 1)->forward(zs[l], views.back(), opt_labels(labels)));
  return views;
}

std::vector<torch::Tensor> draw_noise(CascadeHandle& h, int64_t n, int64_t depth) {
  std::vector<torch::Tensor> zs{torch::randn({n, h.first()->config().d_z})};
  for (int64_t l = 2; l <= depth; ++l) zs.push_back(torch::randn({n, h.up(l)->config().d_z}));
  return zs;
}

}  // namespace

std::vector<torch::Tensor> sample_levels(CascadeHandle& h, const torch::Tensor& labels, int64_t n, int64_t t1,
                                         int64_t depth) {
  torch::NoGradGuard no_grad;
  return run_levels(h, labels, draw_noise(h, n, depth), t1);
}

void recompute_bn_stats(CascadeHandle& handle, int64_t level, int64_t target_t, int64_t passes, uint64_t seed,
                        int64_t batch) {
  if (passes < 0 || batch < 1) throw ArgumentError("recompute_bn_stats: passes >= 0 and batch >= 1 required");
  auto& gen = handle.generator(level);
  const int64_t trained = handle.trained_length(level);
  if (trained == 0) throw StateError(level_name(level) + " has never been trained");
  if (target_t < trained)
    throw ArgumentError(level_name(level) + ": target length " + std::to_string(target_t) +
                        " is shorter than the trained length " + std::to_string(trained) +
                        "; the training statistics already cover it");
  if (passes == 0) return;
  int64_t in_t = target_t;
  if (level > 1) {
    const int64_t k_t = handle.up(level)->config().k_t;
    if (target_t % k_t != 0)
      throw ArgumentError(level_name(level) + ": target length must be a multiple of k_t = " + std::to_string(k_t));
    in_t = target_t / k_t;
    // Lower levels must be able to produce the conditioning input.
    int64_t t1 = in_t;
    for (int64_t l = level - 1; l >= 2; --l) t1 /= handle.up(l)->config().k_t;
    require_stats(handle, level - 1, t1);
  }
  torch::NoGradGuard no_grad;
  torch::manual_seed(seed);
  nn::for_each_batchnorm(gen, [&](nn::CondBatchNormImpl& bn) { bn.begin_accumulate(target_t); });
  try {
    for (int64_t p = 0; p < passes; ++p) {
      auto labels = handle.num_classes() ? draw_labels(batch, handle.num_classes(), std::nullopt) : torch::Tensor();
      if (level == 1) {
        auto& g = handle.first();
        g->forward(torch::randn({batch, g->config().d_z}), opt_labels(labels), target_t);
      } else {
        int64_t t1 = in_t;
        for (int64_t l = level - 1; l >= 2; --l) t1 /= handle.up(l)->config().k_t;
        auto lower = sample_levels(handle, labels, batch, t1, level - 1);
        auto& g = handle.up(level);
        g->forward(torch::randn({batch, g->config().d_z}), lower.back(), opt_labels(labels));
      }
    }
  } catch (...) {
    nn::for_each_batchnorm(gen, [&](nn::CondBatchNormImpl& bn) { bn.end_accumulate(); });
    throw;
  }
  nn::for_each_batchnorm(gen, [&](nn::CondBatchNormImpl& bn) { bn.end_accumulate(); });
}

void prepare_cascade(CascadeHandle& handle, int64_t t1, int64_t passes, uint64_t seed, int64_t batch) {
  int64_t t = t1;
  for (int64_t l = 1; l <= handle.num_levels(); ++l) {
    if (l > 1) t *= handle.up(l)->config().k_t;
    if (!handle.stats_valid(l, t)) recompute_bn_stats(handle, l, t, passes, seed + static_cast<uint64_t>(l), batch);
  }
}

VideoBatch apply_convolutionally(UpLevelGenerator& generator, const VideoBatch& lowres_full, const torch::Tensor& z) {
  const int64_t out_t = generator->config().k_t * lowres_full.frames();
  bool ok = true;
  nn::for_each_batchnorm(*generator, [&](nn::CondBatchNormImpl& bn) { ok = ok && bn.has_stats_for(out_t); });
  if (!ok)
    throw StateError("batch-norm statistics are not valid for " + std::to_string(out_t) +
                     " output frames; run recompute_bn_stats first");
  torch::NoGradGuard no_grad;
  generator->eval();
  return generate_upsampled(generator, z, lowres_full);
}

std::vector<VideoBatch> sample_cascade(CascadeHandle& handle, int64_t n, std::optional<int64_t> label, uint64_t seed,
                                       int64_t t1, int64_t levels, int64_t batch) {
  if (n < 1 || t1 < 1) throw ArgumentError("sample_cascade: n and t1 must be >= 1");
  const int64_t depth = levels < 0 ? handle.num_levels() : levels;
  if (depth < 1 || depth > handle.num_levels()) throw ArgumentError("sample_cascade: bad level count");
  require_stats(handle, depth, t1);
  torch::NoGradGuard no_grad;
  torch::manual_seed(seed);
  auto labels = draw_labels(n, handle.num_classes(), label);
  std::vector<std::vector<torch::Tensor>> parts(static_cast<size_t>(depth));
  // All noise is drawn up front so the batch size does not change the result.
  const auto zs = draw_noise(handle, n, depth);
  for (int64_t s = 0; s < n; s += batch) {
    const int64_t m = std::min(batch, n - s);
    std::vector<torch::Tensor> part;
    for (const auto& z : zs) part.push_back(z.narrow(0, s, m));
    auto views = run_levels(handle, labels.defined() ? labels.narrow(0, s, m) : labels, part, t1);
    for (size_t l = 0; l < views.size(); ++l) parts[l].push_back(views[l]);
  }
  std::vector<VideoBatch> out;
  int64_t sub = 1;
  for (const auto& f : handle.factors()) sub *= f.k_t;
  for (int64_t l = 0; l < depth; ++l) {
    if (l > 0) sub /= handle.up(l + 1)->config().k_t;
    out.emplace_back(torch::cat(parts[static_cast<size_t>(l)], 0), opt_labels(labels), sub);
  }
  return out;
}

void write_samples(const std::filesystem::path& dir, const std::vector<VideoBatch>& views, uint64_t seed,
                   int64_t num_classes) {
  if (views.empty()) throw ArgumentError("write_samples: nothing to write");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const auto& top = views.back();
  DatasetManifest manifest;
  manifest.num_classes = num_classes;
  manifest.seed = seed;
  manifest.root = dir;
  nlohmann::json labels = nlohmann::json::array();
  for (int64_t i = 0; i < top.batch(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05lld.cvg", static_cast<long long>(i));
    // (T, C, H, W) -> container layout
    write_video(dir / name, encode_frames(top.data[i]));
    const int64_t label = top.labels ? (*top.labels)[i].item<int64_t>() : 0;
    manifest.entries.push_back({name, label, top.frames(), top.height(), top.width()});
    if (top.labels) labels.push_back(label);
  }
  manifest.save(dir / "manifest.json");
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& v : views) shapes.push_back({v.batch(), v.frames(), v.channels(), v.height(), v.width()});
  nlohmann::json sidecar = {{"seed", seed}, {"labels", labels}, {"level_shapes", shapes}};
  std::ofstream os(dir / "samples.json");
  if (!os) throw IoError("cannot write " + (dir / "samples.json").string());
  os << sidecar.dump(2) << '\n';
}

}  // namespace cvg
