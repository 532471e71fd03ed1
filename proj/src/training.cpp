#include "cvg/training.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <random>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>

#include "cvg/discriminators.hpp"
#include "cvg/errors.hpp"
#include "cvg/metrics.hpp"

namespace cvg {

bool EarlyStopper::update(double value) {
  if (value < best_) {
    best_ = value;
    bad_ = 0;
    return true;
  }
  ++bad_;
  return false;
}

DataSplit split_holdout(size_t n, double holdout_fraction, uint64_t seed) {
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) throw ArgumentError("holdout fraction must be in [0, 1)");
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed ^ 0x5eed5eedULL);
  std::shuffle(order.begin(), order.end(), rng);
  const auto h = static_cast<size_t>(std::llround(holdout_fraction * static_cast<double>(n)));
  DataSplit s;
  s.holdout.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(h));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(h), order.end());
  std::sort(s.holdout.begin(), s.holdout.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

int64_t workers_from_env() {
  const char* v = std::getenv("CVG_NUM_WORKERS");
  if (!v) return 0;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  return (end && *end == '\0' && n > 0) ? n : 0;
}

// ---------------------------------------------------------------- batches

BatchSource::BatchSource(const VideoBatch& videos, std::vector<size_t> indices, PyramidSpec pyramid,
                         int64_t clip_frames, int64_t batch_size, uint64_t seed, int64_t num_workers)
    : videos_(videos),
      indices_(std::move(indices)),
      pyramid_(std::move(pyramid)),
      clip_frames_(clip_frames),
      batch_size_(batch_size),
      seed_(seed),
      num_workers_(std::max<int64_t>(num_workers, 0)) {
  if (indices_.empty()) throw ArgumentError("training set is empty");
  if (batch_size_ < 1) throw ArgumentError("batch size must be >= 1");
  if (clip_frames_ > videos_.frames())
    throw ConfigError("videos have " + std::to_string(videos_.frames()) + " frames, the cascade needs " +
                      std::to_string(clip_frames_));
}

BatchSource::~BatchSource() {
  for (auto& f : pending_)
    if (f.valid()) f.wait();
}

PyramidBatch BatchSource::make(int64_t b) const {
  std::seed_seq seq{static_cast<uint32_t>(seed_), static_cast<uint32_t>(seed_ >> 32), static_cast<uint32_t>(b),
                    static_cast<uint32_t>(static_cast<uint64_t>(b) >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<size_t> pick(0, indices_.size() - 1);
  std::uniform_int_distribution<int64_t> offset(0, videos_.frames() - clip_frames_);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<torch::Tensor> clips;
  std::vector<int64_t> labels;
  PyramidBatch out;
  for (int64_t i = 0; i < batch_size_; ++i) {
    const auto idx = static_cast<int64_t>(indices_[pick(rng)]);
    clips.push_back(videos_.data[idx].narrow(0, offset(rng), clip_frames_));
    if (videos_.labels) labels.push_back((*videos_.labels)[idx].item<int64_t>());
    out.window_u.push_back(unit(rng));
  }
  std::optional<torch::Tensor> lab;
  if (videos_.labels) {
    out.labels = torch::tensor(labels, torch::kInt64);
    lab = out.labels;
  }
  out.views = build_pyramid(VideoBatch(torch::stack(clips), lab), pyramid_);
  return out;
}

void BatchSource::refill() {
  while (queued_ < position_ + num_workers_) {
    const int64_t b = queued_++;
    pending_.push_back(std::async(std::launch::async, [this, b] { return make(b); }));
  }
}

PyramidBatch BatchSource::next() {
  if (num_workers_ == 0) return make(position_++);
  refill();
  auto batch = pending_.front().get();
  pending_.pop_front();
  ++position_;
  refill();
  return batch;
}

void BatchSource::seek(int64_t b) {
  for (auto& f : pending_)
    if (f.valid()) f.wait();
  pending_.clear();
  position_ = queued_ = b;
}

std::filesystem::path resume_path(const std::filesystem::path& checkpoint_path) {
  return checkpoint_path.string() + ".resume";
}

// ---------------------------------------------------------------- loop

namespace {

torch::Tensor blob_from_string(const std::string& s) {
  auto t = torch::empty({static_cast<int64_t>(s.size())}, torch::kUInt8);
  if (!s.empty()) std::memcpy(t.data_ptr(), s.data(), s.size());
  return t;
}

std::string string_from_blob(const torch::Tensor& t) {
  auto c = t.contiguous();
  return std::string(static_cast<const char*>(c.data_ptr()), static_cast<size_t>(c.numel()));
}

torch::Tensor optimizer_blob(torch::optim::Optimizer& opt) {
  torch::serialize::OutputArchive ar;
  opt.save(ar);
  std::ostringstream os;
  ar.save_to(os);
  return blob_from_string(os.str());
}

void load_optimizer(torch::optim::Optimizer& opt, const torch::Tensor& blob) {
  std::istringstream is(string_from_blob(blob));
  torch::serialize::InputArchive ar;
  ar.load_from(is);
  opt.load(ar);
}

at::Generator& cpu_generator() {
  static at::Generator gen = at::detail::getDefaultCPUGenerator();
  return gen;
}

// Restores the global RNG on scope exit so evaluation does not perturb the
// training stream.
class RngScope {
 public:
  explicit RngScope(uint64_t seed) : saved_(cpu_generator().get_state()) { torch::manual_seed(seed); }
  ~RngScope() { cpu_generator().set_state(saved_); }

 private:
  torch::Tensor saved_;
};

std::optional<torch::Tensor> opt(const torch::Tensor& t) {
  return t.defined() ? std::optional<torch::Tensor>(t) : std::nullopt;
}

struct Pair {
  torch::Tensor out;
  std::optional<torch::Tensor> in;
};

// Everything level-specific the shared loop needs.
struct LevelTask {
  int64_t level = 1;
  torch::nn::Module* generator = nullptr;
  std::function<Pair(const PyramidBatch&)> real;
  std::function<Pair(const PyramidBatch&)> fake;  // grad flows into the generator only
  std::function<double()> evaluate;               // FVD on the held-out budget
};

bool finite(const torch::Tensor& loss) { return std::isfinite(loss.item<double>()); }

TrainResult run_loop(const RunConfig& config, const LevelTask& task, LevelDiscriminators& disc, BatchSource& source,
                     const TrainOptions& options) {
  const TrainConfig tc = config.train_for(task.level);
  torch::nn::Module& gen = *task.generator;
  const auto path =
      options.checkpoint_path.empty() ? config.resolve(config.level(task.level).checkpoint) : options.checkpoint_path;

  torch::manual_seed(tc.seed);
  torch::optim::Adam opt_g(gen.parameters(), torch::optim::AdamOptions(tc.lr_g).betas({tc.beta1, tc.beta2}));
  torch::optim::Adam opt_d(disc->parameters(), torch::optim::AdamOptions(tc.lr_d).betas({tc.beta1, tc.beta2}));

  LevelCheckpoint state;
  state.level = task.level;
  state.fingerprint = config.fingerprint(task.level);
  state.config = config.to_json();
  state.extra = {{"evals", nlohmann::json::array()}, {"batch_position", 0}, {"best_fvd", nullptr},
                 {"bad_evals", 0}, {"early_stopped", false}};
  EarlyStopper stopper(tc.early_stop_patience);
  std::optional<LevelCheckpoint> best;

  if (options.resume && std::filesystem::exists(resume_path(path))) {
    auto r = LevelCheckpoint::load(resume_path(path));
    if (r.level != task.level || r.fingerprint != state.fingerprint)
      throw CheckpointError("resume state " + resume_path(path).string() + " belongs to a different configuration");
    restore_state(gen, r, "g.");
    restore_state(*disc, r, "d.");
    for (const char* name : {"opt_g", "opt_d", "rng"})
      if (!r.find(name)) throw CheckpointError(std::string("resume state lacks '") + name + "'");
    load_optimizer(opt_g, *r.find("opt_g"));
    load_optimizer(opt_d, *r.find("opt_d"));
    cpu_generator().set_state(*r.find("rng"));
    state.iteration = r.iteration;
    state.g_steps = r.g_steps;
    state.d_steps = r.d_steps;
    state.history = r.history;
    state.extra = r.extra;
    source.seek(r.extra.value("batch_position", int64_t{0}));
    if (!r.extra["best_fvd"].is_null()) {
      stopper.update(r.extra["best_fvd"].get<double>());
      for (int64_t i = 0; i < r.extra.value("bad_evals", int64_t{0}); ++i) stopper.update(stopper.best());
      if (std::filesystem::exists(path)) best = LevelCheckpoint::load(path);
    }
  }

  auto snapshot = [&](bool with_optimizer) {
    LevelCheckpoint c;
    c.level = state.level;
    c.fingerprint = state.fingerprint;
    c.iteration = state.iteration;
    c.g_steps = state.g_steps;
    c.d_steps = state.d_steps;
    c.config = state.config;
    c.history = state.history;
    c.extra = state.extra;
    c.extra["batch_position"] = source.position();
    collect_state(gen, "g.", c.arrays);
    collect_state(*disc, "d.", c.arrays);
    if (with_optimizer) {
      c.arrays.push_back({"opt_g", optimizer_blob(opt_g)});
      c.arrays.push_back({"opt_d", optimizer_blob(opt_d)});
      c.arrays.push_back({"rng", cpu_generator().get_state().clone()});
    }
    return c;
  };
  auto abort_nan = [&](const std::string& what) {
    auto diag = snapshot(false);
    diag.extra["error"] = what;
    const auto diag_path = std::filesystem::path(path.string() + ".nan");
    diag.save(diag_path);
    throw NumericError("level " + std::to_string(task.level) + ": " + what + " at iteration " +
                       std::to_string(state.iteration),
                       diag_path.string());
  };
  auto log = [&](nlohmann::json j) {
    if (options.on_log) options.on_log(j);
  };

  gen.train();
  disc->train();
  bool stopped = state.extra.value("early_stopped", false);
  while (!stopped && state.iteration < tc.max_iters) {
    double d_loss_value = 0.0;
    for (int64_t k = 0; k < tc.d_steps_per_g; ++k) {
      const auto batch = source.next();
      const auto real = task.real(batch);
      Pair fake;
      {
        torch::NoGradGuard no_grad;
        fake = task.fake(batch);
      }
      const auto labels = opt(batch.labels);
      if (options.observe) {
        options.observe(true, real.out, real.in);
        options.observe(false, fake.out, fake.in);
      }
      auto loss = nn::d_loss(tc.loss, disc->forward(real.out, real.in, labels),
                             disc->forward(fake.out.detach(), fake.in, labels));
      if (!finite(loss)) abort_nan("discriminator loss is not finite");
      opt_d.zero_grad();
      loss.backward();
      opt_d.step();
      ++state.d_steps;
      d_loss_value = loss.item<double>();
    }
    const auto batch = source.next();
    const auto fake = task.fake(batch);
    if (options.observe) options.observe(false, fake.out, fake.in);
    auto loss = nn::g_loss(tc.loss, disc->forward(fake.out, fake.in, opt(batch.labels)));
    if (!finite(loss)) abort_nan("generator loss is not finite");
    opt_g.zero_grad();
    loss.backward();
    if (options.after_g_step) options.after_g_step(gen, *disc);
    opt_g.step();
    ++state.g_steps;
    ++state.iteration;
    const double g_loss_value = loss.item<double>();
    state.history.push_back({{"iter", state.iteration}, {"d_loss", d_loss_value}, {"g_loss", g_loss_value}});
    if (tc.log_every > 0 && state.iteration % tc.log_every == 0)
      log({{"level", task.level}, {"iter", state.iteration}, {"d_loss", d_loss_value}, {"g_loss", g_loss_value}});

    if (tc.eval_every > 0 && state.iteration % tc.eval_every == 0) {
      gen.eval();
      double fvd;
      {
        RngScope scope(tc.seed + 0x0e7a1ULL);
        fvd = task.evaluate();
      }
      gen.train();
      const bool improved = std::isfinite(fvd) && stopper.update(fvd);
      if (!std::isfinite(fvd)) stopper.update(std::numeric_limits<double>::infinity());
      state.extra["evals"].push_back({{"iter", state.iteration}, {"fvd", fvd}});
      state.extra["best_fvd"] = std::isfinite(stopper.best()) ? nlohmann::json(stopper.best()) : nlohmann::json();
      state.extra["bad_evals"] = stopper.bad_evaluations();
      log({{"level", task.level}, {"iter", state.iteration}, {"fvd", fvd}, {"best_fvd", stopper.best()}});
      if (improved) {
        best = snapshot(false);
        best->save(path);
      }
      if (stopper.should_stop()) {
        stopped = true;
        state.extra["early_stopped"] = true;
      }
    }
  }

  auto final_state = snapshot(true);
  final_state.save(resume_path(path));
  TrainResult result;
  result.iterations = state.iteration;
  result.early_stopped = stopped;
  if (best) {
    // The retained checkpoint keeps the best parameters but the full record.
    best->history = state.history;
    best->extra = state.extra;
    best->extra["final_iteration"] = state.iteration;
    best->save(path);
    result.checkpoint = *best;
    result.best_fvd = stopper.best();
  } else {
    LevelCheckpoint c = final_state;
    c.arrays.erase(std::remove_if(c.arrays.begin(), c.arrays.end(),
                                  [](const NamedArray& a) { return a.name.rfind("opt_", 0) == 0 || a.name == "rng"; }),
                   c.arrays.end());
    c.save(path);
    result.checkpoint = std::move(c);
  }
  return result;
}

FeatureNet require_featnet(const RunConfig& config, const TrainConfig& tc, const TrainOptions& options) {
  if (tc.eval_every <= 0) return FeatureNet(nullptr);
  if (options.featnet) return options.featnet;
  if (config.metrics.featnet.empty())
    throw MissingPrerequisiteError("evaluation during training needs a feature network (metrics.featnet)");
  return load_featnet(config.resolve(config.metrics.featnet));
}

torch::Tensor cycle_labels(const torch::Tensor& labels, int64_t n) {
  if (!labels.defined()) return labels;
  return labels.index({torch::arange(n, torch::kInt64) % labels.size(0)});
}

// Held-out clips at full data geometry (offset 0).
VideoBatch holdout_clips(const VideoBatch& videos, const DataSplit& split, int64_t clip_frames, int64_t budget) {
  const auto n = std::min<size_t>(split.holdout.size(), static_cast<size_t>(budget));
  if (n < 2) throw ConfigError("evaluation needs at least 2 held-out videos");
  std::vector<int64_t> idx(split.holdout.begin(), split.holdout.begin() + static_cast<std::ptrdiff_t>(n));
  auto sel = torch::tensor(idx, torch::kInt64);
  auto data = videos.data.index_select(0, sel).narrow(1, 0, clip_frames);
  std::optional<torch::Tensor> labels;
  if (videos.labels) labels = videos.labels->index_select(0, sel);
  return VideoBatch(data, labels);
}

}  // namespace

// ---------------------------------------------------------------- levels

TrainResult train_level1(const RunConfig& config, const VideoBatch& videos, const TrainOptions& options) {
  const TrainConfig tc = config.train_for(1);
  tc.validate();
  const auto& spec = config.level(1);
  const int64_t clip = config.frames_at(config.pyramid.num_levels());
  const auto split = split_holdout(static_cast<size_t>(videos.batch()), config.data.holdout_fraction, config.train.seed);
  BatchSource source(videos, split.train, config.pyramid, clip, tc.batch_size, tc.seed, options.num_workers);

  torch::manual_seed(tc.seed);
  FirstLevelGenerator gen = build_first_level(config);
  LevelDiscriminators disc(1, spec.disc, config.size_at(1), 1, 1, false);
  const int64_t t1 = spec.first.t1;

  FeatureNet net = require_featnet(config, tc, options);
  torch::Tensor eval_real, eval_labels;
  if (net) {
    auto held = holdout_clips(videos, split, clip, tc.eval_samples);
    eval_real = build_pyramid(held, config.pyramid).front().data;
    if (held.labels) eval_labels = cycle_labels(*held.labels, tc.eval_samples);
  }

  LevelTask task;
  task.level = 1;
  task.generator = gen.get();
  task.real = [](const PyramidBatch& b) { return Pair{b.views.front().data, std::nullopt}; };
  task.fake = [&](const PyramidBatch& b) {
    auto z = torch::randn({b.views.front().batch(), spec.first.d_z});
    return Pair{gen->forward(z, opt(b.labels), t1), std::nullopt};
  };
  task.evaluate = [&]() {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> parts;
    for (int64_t s = 0; s < tc.eval_samples; s += tc.batch_size) {
      const int64_t m = std::min(tc.batch_size, tc.eval_samples - s);
      auto lab = eval_labels.defined() ? opt(eval_labels.narrow(0, s, m)) : std::nullopt;
      parts.push_back(gen->forward(torch::randn({m, spec.first.d_z}), lab, t1));
    }
    return frechet_video_distance(net, torch::cat(parts), eval_real);
  };
  return run_loop(config, task, disc, source, options);
}

TrainResult train_uplevel(int64_t level, const RunConfig& config, const VideoBatch& videos,
                          const std::vector<LevelCheckpoint>& prev, const TrainOptions& options) {
  if (level < 2) throw ArgumentError("train_uplevel needs level >= 2");
  if (static_cast<int64_t>(prev.size()) != level - 1)
    throw StateError("level " + std::to_string(level) + " needs trained checkpoints for levels 1.." +
                     std::to_string(level - 1) + ", got " + std::to_string(prev.size()));
  const TrainConfig tc = config.train_for(level);
  tc.validate();
  const auto& spec = config.level(level);
  const auto& up = spec.up;
  if (up.window_w > config.frames_at(level - 1))
    throw ConfigError("window_w exceeds the previous level's output length");

  CascadeHandle cascade = CascadeHandle::from_checkpoints(config, prev);
  const int64_t t1 = config.frames_at(1);
  const int64_t in_frames = config.frames_at(level - 1);
  if (tc.fake_condition_source == FakeConditionSource::prev_level)
    prepare_cascade(cascade, t1, config.metrics.recompute_passes, tc.seed);

  const int64_t clip = config.frames_at(config.pyramid.num_levels());
  const auto split = split_holdout(static_cast<size_t>(videos.batch()), config.data.holdout_fraction, config.train.seed);
  BatchSource source(videos, split.train, config.pyramid, clip, tc.batch_size, tc.seed, options.num_workers);

  torch::manual_seed(tc.seed);
  UpLevelGenerator gen = build_up_level(config, level);
  LevelDiscriminators disc(level, spec.disc, config.size_at(level), up.k_t, up.k_s, tc.matching_discriminator);
  const int64_t w = up.window_w;
  const int64_t span = in_frames - w + 1;
  auto start_of = [&](double u) { return std::min<int64_t>(static_cast<int64_t>(u * static_cast<double>(span)), span - 1); };

  // Per-sample windows of (low, high); high may be undefined.
  auto crop = [&](const torch::Tensor& low, const torch::Tensor& high, const std::vector<double>& us) {
    std::vector<torch::Tensor> lows, highs;
    for (size_t i = 0; i < us.size(); ++i) {
      const auto s = start_of(us[i]);
      const auto idx = static_cast<int64_t>(i);
      lows.push_back(low[idx].narrow(0, s, w));
      if (high.defined()) highs.push_back(high[idx].narrow(0, up.k_t * s, up.k_t * w));
    }
    return std::make_pair(torch::stack(lows), high.defined() ? torch::stack(highs) : torch::Tensor());
  };
  auto condition = [&](const PyramidBatch& b) {
    const auto& low = b.views[static_cast<size_t>(level - 2)];
    if (tc.fake_condition_source == FakeConditionSource::data_pyramid)
      return crop(low.data, {}, b.window_u).first;
    auto lower = sample_levels(cascade, b.labels, low.batch(), t1, level - 1);
    return crop(lower.back(), {}, b.window_u).first;
  };

  FeatureNet net = require_featnet(config, tc, options);
  torch::Tensor eval_real, eval_low, eval_labels;
  std::vector<double> eval_u;
  if (net) {
    auto held = holdout_clips(videos, split, clip, tc.eval_samples);
    auto views = build_pyramid(held, config.pyramid);
    std::mt19937_64 rng(tc.seed ^ 0xe7a1ULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int64_t i = 0; i < held.batch(); ++i) eval_u.push_back(unit(rng));
    eval_low = views[static_cast<size_t>(level - 2)].data;
    eval_real = crop(eval_low, views[static_cast<size_t>(level - 1)].data, eval_u).second;
    if (held.labels) eval_labels = cycle_labels(*held.labels, tc.eval_samples);
  }

  LevelTask task;
  task.level = level;
  task.generator = gen.get();
  task.real = [&](const PyramidBatch& b) {
    auto [low, high] = crop(b.views[static_cast<size_t>(level - 2)].data, b.views[static_cast<size_t>(level - 1)].data,
                            b.window_u);
    return Pair{high, low};
  };
  task.fake = [&](const PyramidBatch& b) {
    torch::Tensor cond;
    {
      torch::NoGradGuard no_grad;
      cond = condition(b);
    }
    auto z = torch::randn({cond.size(0), up.d_z});
    return Pair{gen->forward(z, cond, opt(b.labels)), cond};
  };
  task.evaluate = [&]() {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> parts;
    std::mt19937_64 rng(tc.seed ^ 0xc0ffeeULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int64_t s = 0; s < tc.eval_samples; s += tc.batch_size) {
      const int64_t m = std::min(tc.batch_size, tc.eval_samples - s);
      PyramidBatch b;
      if (eval_labels.defined()) b.labels = eval_labels.narrow(0, s, m);
      for (int64_t i = 0; i < m; ++i) b.window_u.push_back(unit(rng));
      torch::Tensor cond;
      if (tc.fake_condition_source == FakeConditionSource::data_pyramid) {
        // Ablation mode has no lower sampler to rely on; condition on data.
        auto rows = torch::arange(s, s + m, torch::kInt64) % eval_low.size(0);
        cond = crop(eval_low.index_select(0, rows), {}, b.window_u).first;
      } else {
        cond = crop(sample_levels(cascade, b.labels, m, t1, level - 1).back(), {}, b.window_u).first;
      }
      parts.push_back(gen->forward(torch::randn({m, up.d_z}), cond, opt(b.labels)));
    }
    return frechet_video_distance(net, torch::cat(parts), eval_real);
  };
  return run_loop(config, task, disc, source, options);
}

TrainResult train_level(int64_t level, const RunConfig& config, const VideoBatch& videos,
                        const TrainOptions& options) {
  if (level == 1) return train_level1(config, videos, options);
  std::vector<LevelCheckpoint> prev;
  for (int64_t l = 1; l < level; ++l) {
    const auto p = config.resolve(config.level(l).checkpoint);
    if (!std::filesystem::exists(p))
      throw MissingPrerequisiteError("level " + std::to_string(l) + " checkpoint " + p.string() +
                                     " not found; train level " + std::to_string(l) + " first");
    prev.push_back(LevelCheckpoint::load(p));
  }
  return train_uplevel(level, config, videos, prev, options);
}

}  // namespace cvg
