#include <doctest.h>

#include <filesystem>

#include "cvg/errors.hpp"
#include "cvg/training.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("cvg_train_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

const cvg::VideoBatch& shapes() {
  static const cvg::VideoBatch v = [] {
    auto dir = temp_dir("data");
    return cvg::make_shapes_dataset(dir, 24, 3, 8, 32, 32, 1).load_all();
  }();
  return v;
}

cvg::RunConfig smoke_config(const fs::path& dir, const std::vector<std::string>& overrides = {}) {
  auto j = nlohmann::json::parse(R"({
    "pyramid": [{"k_t": 2, "k_s": 4}],
    "levels": [
      {"generator": {"ch": 4, "multipliers": [2, 1], "t1": 4, "seed_hw": 4, "d_z": 8, "d_y": 4},
       "discriminator": {"ch": 4, "multipliers": [1, 2], "k_frames": 2, "spatial_ds_factor": 1}},
      {"generator": {"ch": 4, "multipliers": [2, 1, 1], "d_z": 8, "d_y": 4, "window_w": 2},
       "discriminator": {"ch": 4, "multipliers": [1, 2], "k_frames": 2, "spatial_ds_factor": 2}}
    ],
    "train": {"batch_size": 4, "max_iters": 50, "seed": 3},
    "metrics": {"recompute_passes": 2},
    "data": {"manifest": "unused.json", "num_classes": 3}
  })");
  for (const auto& o : overrides) cvg::apply_override(j, o);
  return cvg::RunConfig::from_json(j, dir);
}

uint64_t generator_checksum(const cvg::RunConfig& rc, const cvg::LevelCheckpoint& c) {
  if (c.level == 1) {
    auto g = cvg::build_first_level(rc);
    cvg::restore_state(*g, c, "g.");
    return cvg::state_checksum(*g);
  }
  auto g = cvg::build_up_level(rc, c.level);
  cvg::restore_state(*g, c, "g.");
  return cvg::state_checksum(*g);
}

}  // namespace

TEST_CASE("early stopper") {
  cvg::EarlyStopper improving(2);
  for (double v : {9.0, 8.0, 7.0, 6.0, 5.0}) {
    CHECK(improving.update(v));
    CHECK_FALSE(improving.should_stop());
  }
  cvg::EarlyStopper s(2);
  s.update(9.0);
  CHECK_FALSE(s.update(10.0));
  CHECK_FALSE(s.should_stop());
  CHECK_FALSE(s.update(11.0));
  CHECK(s.should_stop());
  CHECK(s.best() == 9.0);
  cvg::EarlyStopper off(0);
  for (double v : {1.0, 2.0, 3.0, 4.0}) off.update(v);
  CHECK_FALSE(off.should_stop());
}

TEST_CASE("holdout split is deterministic and disjoint") {
  auto a = cvg::split_holdout(40, 0.25, 7);
  auto b = cvg::split_holdout(40, 0.25, 7);
  CHECK(a.train == b.train);
  CHECK(a.holdout == b.holdout);
  CHECK(a.holdout.size() == 10);
  CHECK(a.train.size() == 30);
  std::vector<bool> seen(40, false);
  for (auto i : a.train) seen[i] = true;
  for (auto i : a.holdout) {
    CHECK_FALSE(seen[i]);
    seen[i] = true;
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](bool x) { return x; }));
  CHECK(cvg::split_holdout(40, 0.25, 8).holdout != a.holdout);
  CHECK_THROWS_AS(cvg::split_holdout(4, 1.0, 0), cvg::ArgumentError);
}

TEST_CASE("batch stream is identical for any worker count") {
  const auto& v = shapes();
  cvg::PyramidSpec spec{{{2, 4}}};
  std::vector<size_t> idx = {0, 2, 4, 6, 8, 10, 12};
  cvg::BatchSource serial(v, idx, spec, 8, 3, 11, 0);
  cvg::BatchSource parallel(v, idx, spec, 8, 3, 11, 3);
  for (int b = 0; b < 6; ++b) {
    auto x = serial.next();
    auto y = parallel.next();
    REQUIRE(x.views.size() == 2);
    CHECK(torch::equal(x.views[1].data, y.views[1].data));
    CHECK(torch::equal(x.views[0].data, y.views[0].data));
    CHECK(torch::equal(x.labels, y.labels));
    CHECK(x.window_u == y.window_u);
  }
  parallel.seek(2);
  serial.seek(2);
  CHECK(torch::equal(serial.next().views[1].data, parallel.next().views[1].data));
  CHECK(torch::equal(serial.make(4).views[1].data, serial.make(4).views[1].data));
  CHECK_FALSE(torch::equal(serial.make(4).views[1].data, serial.make(5).views[1].data));
}

TEST_CASE("level-1 smoke training") {
  const auto dir = temp_dir("l1");
  const auto rc = smoke_config(dir);
  auto r = cvg::train_level1(rc, shapes());
  CHECK(r.iterations == 50);
  CHECK(r.checkpoint.history.size() == 50);
  for (const auto& h : r.checkpoint.history) {
    CHECK(std::isfinite(h["d_loss"].get<double>()));
    CHECK(std::isfinite(h["g_loss"].get<double>()));
  }
  CHECK(r.checkpoint.g_steps == 50);
  CHECK(r.checkpoint.d_steps == 2 * r.checkpoint.g_steps);
  CHECK(fs::exists(dir / "level1.ckpt"));
  CHECK(fs::exists(cvg::resume_path(dir / "level1.ckpt")));
  auto loaded = cvg::LevelCheckpoint::load(dir / "level1.ckpt");
  CHECK(loaded.fingerprint == rc.fingerprint(1));
  CHECK(loaded.iteration == 50);
  // Running statistics are present for eval use.
  auto h = cvg::CascadeHandle::from_checkpoints(rc, {loaded});
  CHECK(h.stats_valid(1, 4));
}

TEST_CASE("training is deterministic for a seed and any worker count") {
  const auto d1 = temp_dir("det1"), d2 = temp_dir("det2"), d3 = temp_dir("det3");
  const auto base = {std::string("train.max_iters=8")};
  auto a = cvg::train_level1(smoke_config(d1, base), shapes());
  cvg::TrainOptions par;
  par.num_workers = 2;
  auto b = cvg::train_level1(smoke_config(d2, base), shapes(), par);
  CHECK(generator_checksum(smoke_config(d1), a.checkpoint) == generator_checksum(smoke_config(d1), b.checkpoint));
  auto c = cvg::train_level1(smoke_config(d3, {"train.max_iters=8", "train.seed=4"}), shapes());
  CHECK(generator_checksum(smoke_config(d1), a.checkpoint) != generator_checksum(smoke_config(d1), c.checkpoint));
}

TEST_CASE("resume continues the run exactly") {
  const auto whole = temp_dir("whole"), split = temp_dir("split");
  auto full = cvg::train_level1(smoke_config(whole, {"train.max_iters=12"}), shapes());
  cvg::train_level1(smoke_config(split, {"train.max_iters=5"}), shapes());
  cvg::TrainOptions resume;
  resume.resume = true;
  auto rest = cvg::train_level1(smoke_config(split, {"train.max_iters=12"}), shapes(), resume);
  CHECK(rest.iterations == 12);
  CHECK(rest.checkpoint.history.size() == 12);
  CHECK(rest.checkpoint.history[4]["iter"] == 5);
  CHECK(rest.checkpoint.history[5]["iter"] == 6);
  const auto rc = smoke_config(whole);
  CHECK(generator_checksum(rc, rest.checkpoint) == generator_checksum(rc, full.checkpoint));
  CHECK(rest.checkpoint.history == full.checkpoint.history);

  // A resume state from another configuration is refused.
  CHECK_THROWS_AS(cvg::train_level1(smoke_config(split, {"train.max_iters=14", "train.lr_g=0.001"}), shapes(), resume),
                  cvg::CheckpointError);
}

TEST_CASE("up-level training: windows, isolation and ablation flags") {
  const auto dir = temp_dir("l2");
  const auto rc = smoke_config(dir, {"train.max_iters=6"});
  auto l1 = cvg::train_level1(rc, shapes()).checkpoint;
  const auto before = generator_checksum(rc, l1);

  SUBCASE("prev_level conditioning") {
    cvg::TrainOptions opt;
    int64_t fakes = 0, reals = 0;
    opt.observe = [&](bool real, const torch::Tensor& out, const std::optional<torch::Tensor>& in) {
      REQUIRE(in);
      CHECK(in->size(1) == 2);   // window_w input frames
      CHECK(out.size(1) == 4);   // k_t * window_w output frames
      CHECK(out.size(3) == 32);
      if (real) {
        ++reals;
        // Real pairs obey the pyramid relation exactly.
        auto reduced = cvg::bilinear_downsample(
            out.index({torch::indexing::Slice(), torch::indexing::Slice(0, torch::indexing::None, 2)}), 4);
        CHECK(torch::equal(reduced, *in));
      } else {
        ++fakes;
        CHECK_FALSE(in->requires_grad());
      }
    };
    opt.after_g_step = [&](torch::nn::Module& g, torch::nn::Module&) {
      bool any = false;
      for (const auto& p : g.parameters()) any = any || p.grad().defined();
      CHECK(any);
    };
    auto r = cvg::train_uplevel(2, rc, shapes(), {l1}, opt);
    CHECK(r.iterations == 6);
    CHECK(reals == 12);
    CHECK(fakes == 18);
    CHECK(r.checkpoint.d_steps == 12);
    CHECK(generator_checksum(rc, l1) == before);
    CHECK(cvg::LevelCheckpoint::load(dir / "level1.ckpt").find("g.linear.weight") != nullptr);
    bool has_matching = false;
    for (const auto& a : r.checkpoint.arrays) has_matching = has_matching || a.name.rfind("d.matching.", 0) == 0;
    CHECK(has_matching);
  }
  SUBCASE("matching discriminator disabled") {
    auto off = smoke_config(dir, {"train.max_iters=3", "train.matching_discriminator=false"});
    auto r = cvg::train_uplevel(2, off, shapes(), {cvg::LevelCheckpoint::load(dir / "level1.ckpt")});
    for (const auto& a : r.checkpoint.arrays) CHECK(a.name.rfind("d.matching.", 0) != 0);
    CHECK(std::isfinite(r.checkpoint.history.back()["d_loss"].get<double>()));
  }
  SUBCASE("data_pyramid conditioning uses real low-resolution windows") {
    auto dp = smoke_config(dir, {"train.max_iters=3", "train.fake_condition_source=data_pyramid"});
    cvg::TrainOptions opt;
    opt.observe = [&](bool, const torch::Tensor& out, const std::optional<torch::Tensor>& in) {
      CHECK(out.size(1) == 4);
      CHECK(in->size(1) == 2);
    };
    auto r = cvg::train_uplevel(2, dp, shapes(), {l1}, opt);
    CHECK(r.iterations == 3);
  }
  SUBCASE("convgru up-level") {
    auto gru = smoke_config(dir, {"train.max_iters=2", "levels.1.generator.recurrent_kind=convgru"});
    auto prev = cvg::train_level1(gru, shapes()).checkpoint;
    auto r = cvg::train_uplevel(2, gru, shapes(), {prev});
    CHECK(std::isfinite(r.checkpoint.history.back()["g_loss"].get<double>()));
  }
  SUBCASE("prerequisites") {
    CHECK_THROWS_AS(cvg::train_uplevel(2, rc, shapes(), {}), cvg::StateError);
    auto bad = rc;
    bad.levels[1].up.window_w = 5;
    CHECK_THROWS_AS(cvg::train_uplevel(2, bad, shapes(), {l1}), cvg::ConfigError);
    auto other = temp_dir("noprev");
    CHECK_THROWS_AS(cvg::train_level(2, smoke_config(other), shapes()), cvg::MissingPrerequisiteError);
  }
}

TEST_CASE("loss finiteness for every level, recurrent kind and conditioning") {
  const auto dir = temp_dir("finite");
  for (int classes : {0, 3})
    for (std::string kind : {"separable3d", "convgru"}) {
      auto rc = smoke_config(dir, {"train.max_iters=2", "data.num_classes=" + std::to_string(classes),
                                   "levels.1.generator.recurrent_kind=" + kind});
      auto l1 = cvg::train_level1(rc, shapes()).checkpoint;
      auto l2 = cvg::train_uplevel(2, rc, shapes(), {l1}).checkpoint;
      for (const auto* c : {&l1, &l2})
        for (const auto& h : c->history) {
          CHECK(std::isfinite(h["d_loss"].get<double>()));
          CHECK(std::isfinite(h["g_loss"].get<double>()));
        }
    }
}

TEST_CASE("non-finite loss aborts with a diagnostic checkpoint") {
  const auto dir = temp_dir("nan");
  auto rc = smoke_config(dir, {"train.max_iters=10"});
  cvg::TrainOptions opt;
  int64_t g_steps = 0;
  opt.after_g_step = [&](torch::nn::Module& g, torch::nn::Module&) {
    if (++g_steps == 3) {
      torch::NoGradGuard no_grad;
      g.named_parameters()["head_conv.bias"].fill_(std::numeric_limits<float>::quiet_NaN());
    }
  };
  CHECK_THROWS_AS(cvg::train_level1(rc, shapes(), opt), cvg::NumericError);
  CHECK(fs::exists(dir / "level1.ckpt.nan"));
  auto diag = cvg::LevelCheckpoint::load(dir / "level1.ckpt.nan");
  CHECK(diag.extra.contains("error"));
}

TEST_CASE("periodic evaluation keeps the best checkpoint") {
  const auto dir = temp_dir("eval");
  auto rc = smoke_config(dir, {"train.max_iters=6", "train.eval_every=2", "train.eval_samples=6",
                               "data.holdout_fraction=0.25"});
  cvg::FeatureNetConfig fc;
  fc.ch = 4;
  fc.feature_dim = 8;
  fc.num_classes = 3;
  fc.size = 8;
  torch::manual_seed(0);
  cvg::TrainOptions opt;
  opt.featnet = cvg::FeatureNet(fc);
  auto r = cvg::train_level1(rc, shapes(), opt);
  const auto& evals = r.checkpoint.extra["evals"];
  REQUIRE(evals.size() == 3);
  double best = std::numeric_limits<double>::infinity();
  int64_t best_iter = 0;
  for (const auto& e : evals) {
    CHECK(std::isfinite(e["fvd"].get<double>()));
    if (e["fvd"].get<double>() < best) {
      best = e["fvd"].get<double>();
      best_iter = e["iter"].get<int64_t>();
    }
  }
  CHECK(r.best_fvd == best);
  CHECK(r.checkpoint.iteration == best_iter);
  CHECK(cvg::LevelCheckpoint::load(dir / "level1.ckpt").iteration == best_iter);
  CHECK(r.checkpoint.extra["final_iteration"] == 6);

  auto no_net = smoke_config(temp_dir("eval_missing"), {"train.eval_every=2"});
  CHECK_THROWS_AS(cvg::train_level1(no_net, shapes()), cvg::MissingPrerequisiteError);
}
