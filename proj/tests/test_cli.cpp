#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cvg/cli.hpp"

#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "cvg");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cvg::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

// A two-level run directory with data and a config, levels untrained.
struct Workspace {
  fs::path dir;
  std::string config;

  explicit Workspace(const std::string& name, int64_t classes = 3) {
    dir = fs::temp_directory_path() / ("cvg_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto j = nlohmann::json::parse(R"({
      "pyramid": [{"k_t": 2, "k_s": 4}],
      "levels": [
        {"generator": {"ch": 4, "multipliers": [2, 1], "t1": 4, "seed_hw": 4, "d_z": 8, "d_y": 4},
         "discriminator": {"ch": 4, "multipliers": [1, 2], "k_frames": 2, "spatial_ds_factor": 1},
         "checkpoint": "ckpt/level1.ckpt"},
        {"generator": {"ch": 4, "multipliers": [2, 1, 1], "d_z": 8, "d_y": 4, "window_w": 2},
         "discriminator": {"ch": 4, "multipliers": [1, 2], "k_frames": 2, "spatial_ds_factor": 2},
         "checkpoint": "ckpt/level2.ckpt"}
      ],
      "train": {"batch_size": 4, "max_iters": 3},
      "metrics": {"featnet": "ckpt/featnet.ckpt", "recompute_passes": 2},
      "data": {"manifest": "data/manifest.json"}
    })");
    j["data"]["num_classes"] = classes;
    config = (dir / "run.json").string();
    std::ofstream(config) << j.dump(2);
    const auto mk = cli({"make-data", "--out", (dir / "data").string(), "--videos", "16", "--classes",
                         std::to_string(std::max<int64_t>(classes, 2)), "--frames", "8", "--size", "32"});
    REQUIRE(mk.code == 0);
  }
};

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"make-data"}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  const auto r = cli({"train", "--config", "x.json"});
  CHECK(r.code == 2);
  CHECK(r.err.find("--level") != std::string::npos);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("missing inputs and prerequisites") {
  Workspace ws("prereq");
  CHECK(cli({"train", "--config", (ws.dir / "nope.json").string(), "--level", "1"}).code == 3);
  const auto r = cli({"train", "--config", ws.config, "--level", "2"});
  CHECK(r.code == 4);
  CHECK(r.err.find("level 1") != std::string::npos);
  CHECK(cli({"train", "--config", ws.config, "--level", "3"}).code == 2);
  CHECK(cli({"train", "--config", ws.config, "--level", "1", "--set", "train.lr_g=-1"}).code == 2);
  CHECK(cli({"train", "--config", ws.config, "--level", "1", "--set", "train.no_such_key=1"}).code == 2);
  CHECK(cli({"sample", "--config", ws.config, "--out", (ws.dir / "s").string()}).code == 4);
  CHECK(cli({"psd", "--input", (ws.dir / "data/manifest.json").string(), "--frames", "0"}).code == 2);
  CHECK(cli({"psd", "--input", (ws.dir / "data/manifest.json").string(), "--frames", "1,x"}).code == 2);
}

TEST_CASE("train, sample, eval round trip") {
  Workspace ws("flow");
  REQUIRE(cli({"featnet", "--config", ws.config, "--iters", "5"}).code == 0);
  auto l1 = cli({"train", "--config", ws.config, "--level", "1"});
  REQUIRE(l1.code == 0);
  CHECK(fs::exists(ws.dir / "ckpt/level1.ckpt.history.json"));
  REQUIRE(cli({"train", "--config", ws.config, "--level", "2", "--set", "train.max_iters=2"}).code == 0);

  const auto s1 = (ws.dir / "s1").string(), s2 = (ws.dir / "s2").string();
  auto a = cli({"sample", "--config", ws.config, "--n", "4", "--seed", "9", "--unroll-T", "8", "--out", s1});
  REQUIRE(a.code == 0);
  CHECK(a.out.find("level 2: 4x16x3x32x32") != std::string::npos);
  REQUIRE(cli({"sample", "--config", ws.config, "--n", "4", "--seed", "9", "--unroll-T", "8", "--out", s2}).code == 0);
  for (const char* f : {"sample_00000.cvg", "sample_00003.cvg", "manifest.json", "samples.json"})
    CHECK(slurp(fs::path(s1) / f) == slurp(fs::path(s2) / f));

  auto one = cli({"sample", "--config", ws.config, "--levels", "1", "--n", "2", "--class", "1", "--out",
                  (ws.dir / "s3").string()});
  CHECK(one.code == 0);
  CHECK(one.out.find("level 1: 2x4x3x8x8") != std::string::npos);

  auto e = cli({"eval", "--config", ws.config, "--samples", s1, "--out", (ws.dir / "report.json").string()});
  REQUIRE(e.code == 0);
  auto report = nlohmann::json::parse(slurp(ws.dir / "report.json"));
  CHECK(report.contains("fvd"));
  CHECK(report.contains("fid"));
  CHECK(report.contains("is_mean"));
  CHECK(cli({"eval", "--samples", s1, "--reference", (ws.dir / "data/manifest.json").string()}).code == 4);

  auto p = cli({"psd", "--input", (fs::path(s1) / "manifest.json").string(), "--frames", "1,8,16", "--subsets", "2"});
  REQUIRE(p.code == 0);
  CHECK(p.out.find("frame") != std::string::npos);

  // Changing the level-1 architecture makes both checkpoints incompatible.
  CHECK(cli({"sample", "--config", ws.config, "--set", "levels.0.generator.ch=6", "--out",
             (ws.dir / "s4").string()}).code == 5);
  // Unrolling without recompute leaves stale statistics.
  CHECK(cli({"sample", "--config", ws.config, "--unroll-T", "8", "--passes", "0", "--out",
             (ws.dir / "s5").string()}).code == 5);
}

TEST_CASE("class labels on an unconditional model") {
  Workspace ws("uncond", 0);
  REQUIRE(cli({"train", "--config", ws.config, "--level", "1"}).code == 0);
  CHECK(cli({"sample", "--config", ws.config, "--levels", "1", "--class", "1", "--out", (ws.dir / "s").string()})
            .code == 2);
  CHECK(cli({"sample", "--config", ws.config, "--levels", "1", "--out", (ws.dir / "s").string()}).code == 0);
}

TEST_CASE("memory report") {
  Workspace ws("mem");
  auto r = cli({"memreport", "--config", ws.config, "--T", "12,24,48", "--out", (ws.dir / "mem.csv").string()});
  REQUIRE(r.code == 0);
  std::istringstream is(slurp(ws.dir / "mem.csv"));
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "T,level1_bytes,level2_bytes");
  CHECK(lines[1].rfind("12,", 0) == 0);
}

TEST_CASE("the installed binary reports exit codes") {
  const std::string bin = CVG_BINARY;
  CHECK(WEXITSTATUS(std::system((bin + " make-data >/dev/null 2>&1").c_str())) == 2);
  CHECK(WEXITSTATUS(std::system((bin + " --help >/dev/null 2>&1").c_str())) == 0);
}
