#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cvg/dataset.hpp"
#include "cvg/errors.hpp"
#include "cvg/inference.hpp"

namespace fs = std::filesystem;

namespace {

cvg::RunConfig tiny_config(int64_t num_classes, const std::string& kind = "separable3d") {
  auto j = nlohmann::json::parse(R"({
    "pyramid": [{"k_t": 2, "k_s": 4}],
    "levels": [
      {"generator": {"ch": 4, "multipliers": [2, 1], "t1": 4, "seed_hw": 4, "d_z": 8, "d_y": 4},
       "discriminator": {"ch": 4, "multipliers": [1, 2], "k_frames": 2, "spatial_ds_factor": 1}},
      {"generator": {"ch": 4, "multipliers": [2, 1, 1], "d_z": 8, "d_y": 4, "window_w": 2},
       "discriminator": {"ch": 4, "multipliers": [1, 2], "k_frames": 2, "spatial_ds_factor": 2}}
    ],
    "data": {"manifest": "m.json"}
  })");
  j["data"]["num_classes"] = num_classes;
  j["levels"][1]["generator"]["recurrent_kind"] = kind;
  return cvg::RunConfig::from_json(j);
}

std::optional<torch::Tensor> labels_for(const cvg::RunConfig& rc, int64_t n) {
  if (rc.data.num_classes == 0) return std::nullopt;
  return torch::randint(0, rc.data.num_classes, {n}, torch::kInt64);
}

// Generators with running statistics from a few training-mode forwards at
// the training lengths, packed as checkpoints.
std::vector<cvg::LevelCheckpoint> warmed_checkpoints(const cvg::RunConfig& rc, uint64_t seed = 0) {
  torch::manual_seed(seed);
  auto g1 = cvg::build_first_level(rc);
  auto g2 = cvg::build_up_level(rc, 2);
  g1->train();
  g2->train();
  torch::NoGradGuard no_grad;
  for (int i = 0; i < 4; ++i) {
    g1->forward(torch::randn({4, 8}), labels_for(rc, 4), rc.frames_at(1));
    g2->forward(torch::randn({4, 8}), torch::rand({4, 2, 3, 8, 8}) * 2 - 1, labels_for(rc, 4));
  }
  std::vector<cvg::LevelCheckpoint> out(2);
  for (int64_t l = 1; l <= 2; ++l) {
    auto& c = out[static_cast<size_t>(l - 1)];
    c.level = l;
    c.fingerprint = rc.fingerprint(l);
    cvg::collect_state(l == 1 ? static_cast<torch::nn::Module&>(*g1) : *g2, "g.", c.arrays);
  }
  return out;
}

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("cvg_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("unrolled length") {
  CHECK(cvg::unrolled_length(std::vector<cvg::LevelFactors>{{2, 4}}, 24) == 48);
  CHECK(cvg::unrolled_length(std::vector<cvg::LevelFactors>{}, 24) == 24);
  CHECK(cvg::unrolled_length(std::vector<cvg::LevelFactors>{{2, 2}, {2, 2}}, 8) == 32);
}

TEST_CASE("full-scale geometry: 24 frames at 32x32 unroll to 48 at 128x128") {
  auto j = nlohmann::json::parse(R"({
    "pyramid": [{"k_t": 2, "k_s": 4}],
    "levels": [
      {"generator": {"ch": 128, "multipliers": [8, 8, 4, 2], "t1": 24, "seed_hw": 4, "d_z": 120, "d_y": 128}},
      {"generator": {"ch": 128, "multipliers": [4, 2, 1], "d_z": 120, "window_w": 6}}
    ],
    "data": {"num_classes": 600}
  })");
  auto rc = cvg::RunConfig::from_json(j);
  CHECK(rc.frames_at(2) == 48);
  CHECK(rc.size_at(1) == 32);
  CHECK(rc.size_at(2) == 128);
  CHECK(rc.level(2).up.window_w * rc.level(2).up.k_t == 12);
}

TEST_CASE("cascade sampling: geometry, range and determinism") {
  for (std::string kind : {"separable3d", "convgru"}) {
    const auto rc = tiny_config(3, kind);
    auto h = cvg::CascadeHandle::from_checkpoints(rc, warmed_checkpoints(rc));
    REQUIRE(h.num_levels() == 2);
    CHECK(h.trained_length(1) == 4);
    CHECK(h.trained_length(2) == 4);
    cvg::prepare_cascade(h, 4, 3, 0);  // level 2 needs 8 output frames
    auto a = cvg::sample_cascade(h, 5, std::nullopt, 7, 4);
    REQUIRE(a.size() == 2);
    CHECK(a[0].data.sizes() == torch::IntArrayRef({5, 4, 3, 8, 8}));
    CHECK(a[1].data.sizes() == torch::IntArrayRef({5, 8, 3, 32, 32}));
    for (const auto& v : a) {
      CHECK(v.data.abs().max().item<float>() <= 1.0f);
      REQUIRE(v.labels);
      CHECK(torch::equal(*v.labels, *a[0].labels));
    }
    auto b = cvg::sample_cascade(h, 5, std::nullopt, 7, 4);
    CHECK(torch::equal(a[1].data, b[1].data));
    auto c = cvg::sample_cascade(h, 5, std::nullopt, 8, 4);
    CHECK_FALSE(torch::equal(a[1].data, c[1].data));
    // batching does not change the result
    auto d = cvg::sample_cascade(h, 5, std::nullopt, 7, 4, -1, 2);
    CHECK((a[1].data - d[1].data).abs().max().item<float>() < 1e-4f);  // float rounding only

    auto fixed = cvg::sample_cascade(h, 3, 2, 1, 4);
    CHECK((*fixed[1].labels == 2).all().item<bool>());
    CHECK_THROWS_AS(cvg::sample_cascade(h, 3, 5, 1, 4), cvg::ArgumentError);
  }
}

TEST_CASE("length contract across unroll lengths") {
  const auto rc = tiny_config(3);
  auto h = cvg::CascadeHandle::from_checkpoints(rc, warmed_checkpoints(rc));
  for (int64_t t1 : {4, 8, 12, 24}) {
    cvg::prepare_cascade(h, t1, 2, 1);
    auto views = cvg::sample_cascade(h, 2, std::nullopt, 3, t1);
    CHECK(views.back().frames() == cvg::unrolled_length(h, t1));
    CHECK(views.back().height() == 8 * 4);
    CHECK(views.front().frames() == t1);
    CHECK(views.back().data.abs().max().item<float>() <= 1.0f);
  }
}

TEST_CASE("stale statistics name the level") {
  const auto rc = tiny_config(3);
  auto h = cvg::CascadeHandle::from_checkpoints(rc, warmed_checkpoints(rc));
  try {
    cvg::sample_cascade(h, 2, std::nullopt, 0, 8);
    FAIL("expected a StateError");
  } catch (const cvg::StateError& e) {
    CHECK(std::string(e.what()).find("level 1") != std::string::npos);
  }
  cvg::recompute_bn_stats(h, 1, 8, 2);
  try {
    cvg::sample_cascade(h, 2, std::nullopt, 0, 8);
    FAIL("expected a StateError");
  } catch (const cvg::StateError& e) {
    CHECK(std::string(e.what()).find("level 2") != std::string::npos);
  }
  // Only the first level: sampling with depth 1 works.
  CHECK(cvg::sample_cascade(h, 2, std::nullopt, 0, 8, 1).size() == 1);
}

TEST_CASE("recompute_bn_stats contract") {
  const auto rc = tiny_config(3);
  auto h = cvg::CascadeHandle::from_checkpoints(rc, warmed_checkpoints(rc));
  const auto sum_before = cvg::state_checksum(h.generator(1));
  const auto sum2_before = cvg::state_checksum(h.generator(2));

  cvg::recompute_bn_stats(h, 1, 12, 0);
  CHECK_FALSE(h.stats_valid(1, 12));
  CHECK_THROWS_AS(cvg::recompute_bn_stats(h, 1, 3, 5), cvg::ArgumentError);
  CHECK_THROWS_AS(cvg::recompute_bn_stats(h, 2, 9, 5), cvg::ArgumentError);  // not a multiple of k_t

  cvg::recompute_bn_stats(h, 1, 12, 4);
  CHECK(h.stats_valid(1, 12));
  cvg::nn::for_each_batchnorm(h.generator(1), [](cvg::nn::CondBatchNormImpl& bn) {
    auto [mean, var] = bn.eval_stats(12);
    CHECK(mean.size(0) == 12);
    CHECK(var.size(0) == 12);
    CHECK(bn.trained_length() == 4);
  });
  // Level 2 at 24 output frames needs level-1 samples of 12 frames: valid now.
  cvg::recompute_bn_stats(h, 2, 24, 3);
  CHECK(h.stats_valid(2, 24));
  CHECK(cvg::state_checksum(h.generator(1)) == sum_before);
  CHECK(cvg::state_checksum(h.generator(2)) == sum2_before);
  // Level 2 at 40 frames needs level 1 at 20 frames, which is stale.
  CHECK_THROWS_AS(cvg::recompute_bn_stats(h, 2, 40, 3), cvg::StateError);
}

TEST_CASE("recompute matches the cumulative per-frame average of the passes") {
  const auto rc = tiny_config(0);
  auto h = cvg::CascadeHandle::from_checkpoints(rc, warmed_checkpoints(rc));
  auto& bn = *h.first()->head_bn;
  // Capture the batch statistics of every pass with a forward hook-free
  // replay: same seed, same draws.
  const int64_t passes = 3, batch = 4, t = 6;
  std::vector<torch::Tensor> means;
  {
    torch::NoGradGuard no_grad;
    torch::manual_seed(5);
    auto& g = h.first();
    for (int64_t p = 0; p < passes; ++p) {
      auto z = torch::randn({batch, 8});
      // Features entering the head norm, as the eval forward computes them
      // with per-pass batch statistics.
      bn.begin_accumulate(t);
      cvg::nn::for_each_batchnorm(*g, [&](cvg::nn::CondBatchNormImpl& other) {
        if (&other != &bn) other.begin_accumulate(t);
      });
      g->forward(z, std::nullopt, t);
      auto [m, v] = bn.eval_stats(t);
      means.push_back(m.clone());
      cvg::nn::for_each_batchnorm(*g, [&](cvg::nn::CondBatchNormImpl& other) { other.end_accumulate(); });
      cvg::nn::for_each_batchnorm(*g, [&](cvg::nn::CondBatchNormImpl& other) { other.drop_recomputed(); });
    }
  }
  cvg::recompute_bn_stats(h, 1, t, passes, 5, batch);
  auto [mean, var] = bn.eval_stats(t);
  auto expect = (means[0] + means[1] + means[2]) / 3.0;
  CHECK(torch::allclose(mean, expect, 1e-5, 1e-6));
}

TEST_CASE("apply_convolutionally runs one z over the whole input") {
  const auto rc = tiny_config(0);
  auto h = cvg::CascadeHandle::from_checkpoints(rc, warmed_checkpoints(rc));
  auto low = cvg::VideoBatch(torch::rand({2, 4, 3, 8, 8}) * 2 - 1);
  auto z = torch::randn({2, 8});
  cvg::prepare_cascade(h, 4, 2, 0);
  auto out = cvg::apply_convolutionally(h.up(2), low, z);
  CHECK(out.data.sizes() == torch::IntArrayRef({2, 8, 3, 32, 32}));
  torch::NoGradGuard no_grad;
  CHECK(torch::equal(out.data, h.up(2)->forward(z, low.data, std::nullopt)));
  auto longer = cvg::VideoBatch(torch::rand({2, 6, 3, 8, 8}));
  CHECK_THROWS_AS(cvg::apply_convolutionally(h.up(2), longer, z), cvg::StateError);
}

TEST_CASE("unconditional models reject labels") {
  const auto rc = tiny_config(0);
  auto h = cvg::CascadeHandle::from_checkpoints(rc, warmed_checkpoints(rc));
  cvg::prepare_cascade(h, 4, 2, 0);
  CHECK_THROWS_AS(cvg::sample_cascade(h, 2, 1, 0, 4), cvg::ArgumentError);
  auto views = cvg::sample_cascade(h, 2, std::nullopt, 0, 4);
  CHECK_FALSE(views[0].labels.has_value());
}

TEST_CASE("checkpoint compatibility") {
  const auto rc = tiny_config(3);
  auto ckpts = warmed_checkpoints(rc);
  auto other = tiny_config(4);
  CHECK_THROWS_AS(cvg::CascadeHandle::from_checkpoints(other, ckpts), cvg::CheckpointError);
  auto swapped = std::vector<cvg::LevelCheckpoint>{ckpts[1]};
  CHECK_THROWS_AS(cvg::CascadeHandle::from_checkpoints(rc, swapped), cvg::CheckpointError);

  const auto dir = temp_dir("cascade_load");
  auto j = rc.to_json();
  auto with_base = cvg::RunConfig::from_json(j, dir);
  CHECK_THROWS_AS(cvg::CascadeHandle::load(with_base, 1), cvg::MissingPrerequisiteError);
  ckpts[0].save(dir / "level1.ckpt");
  CHECK(cvg::CascadeHandle::load(with_base, 1).num_levels() == 1);
  try {
    cvg::CascadeHandle::load(with_base, 2);
    FAIL("expected MissingPrerequisiteError");
  } catch (const cvg::MissingPrerequisiteError& e) {
    CHECK(std::string(e.what()).find("level 2") != std::string::npos);
  }
}

TEST_CASE("frozen cascade carries no gradient") {
  const auto rc = tiny_config(3);
  auto h = cvg::CascadeHandle::from_checkpoints(rc, warmed_checkpoints(rc));
  for (int64_t l = 1; l <= 2; ++l)
    for (const auto& p : h.generator(l).parameters()) CHECK_FALSE(p.requires_grad());
  cvg::prepare_cascade(h, 4, 2, 0);
  auto views = cvg::sample_levels(h, torch::tensor({0, 1}, torch::kInt64), 2, 4, 2);
  CHECK_FALSE(views.back().requires_grad());
}

TEST_CASE("written samples: container files, manifest and sidecar") {
  const auto rc = tiny_config(3);
  auto h = cvg::CascadeHandle::from_checkpoints(rc, warmed_checkpoints(rc));
  cvg::prepare_cascade(h, 4, 2, 0);
  auto views = cvg::sample_cascade(h, 3, std::nullopt, 4, 4);
  const auto dir = temp_dir("samples");
  cvg::write_samples(dir, views, 4, 3);
  CHECK(fs::exists(dir / "sample_00000.cvg"));
  CHECK(fs::exists(dir / "sample_00002.cvg"));
  auto m = cvg::DatasetManifest::load(dir / "manifest.json");
  CHECK(m.entries.size() == 3);
  auto back = m.load_all();
  CHECK((back.data - views.back().data).abs().max().item<float>() <= 1.0f / 255.0f + 1e-6f);
  CHECK(torch::equal(*back.labels, *views.back().labels));
  std::ifstream is(dir / "samples.json");
  auto side = nlohmann::json::parse(is);
  CHECK(side["seed"] == 4);
  CHECK(side["labels"].size() == 3);
  CHECK(side["level_shapes"] == nlohmann::json::array({{3, 4, 3, 8, 8}, {3, 8, 3, 32, 32}}));
}
