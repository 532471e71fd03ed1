#include "cvg/cli.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cvg/config.hpp"
#include "cvg/dataset.hpp"
#include "cvg/errors.hpp"
#include "cvg/featnet.hpp"
#include "cvg/inference.hpp"
#include "cvg/memory.hpp"
#include "cvg/metrics.hpp"
#include "cvg/training.hpp"

namespace cvg {

namespace {

namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

std::vector<int64_t> parse_list(const std::string& text, const std::string& flag) {
  std::vector<int64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      out.push_back(std::stoll(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ArgumentError(flag + ": '" + item + "' is not an integer");
    }
  }
  if (out.empty()) throw ArgumentError(flag + " needs at least one value");
  return out;
}

VideoBatch load_manifest_videos(const fs::path& manifest) {
  if (!fs::exists(manifest)) throw IoError("manifest " + manifest.string() + " not found");
  return DatasetManifest::load(manifest).load_all();
}

struct Args {
  // make-data
  std::string out;
  int64_t videos = 64, classes = 4, frames = 16, size = 32;
  uint64_t seed = 0;
  // shared
  std::string config;
  std::vector<std::string> overrides;
  // train
  int64_t level = 1;
  bool resume = false;
  // sample
  int64_t levels = -1, n = 4, unroll_t = 0, passes = -1;
  std::optional<int64_t> label;
  // eval / psd / featnet
  std::string samples, reference, featnet, input, frames_list = "1", report;
  int64_t subsets = 3, iters = 400;
  // memreport
  std::string t_list = "12,24,48";
  int64_t batch = 0, bytes = 4;
};

int cmd_make_data(const Args& a, std::ostream& out) {
  auto m = make_shapes_dataset(a.out, a.videos, a.classes, a.frames, a.size, a.size, a.seed);
  out << "wrote " << m.entries.size() << " videos (" << a.classes << " classes, " << a.frames << "x" << a.size
      << "x" << a.size << ") to " << (fs::path(a.out) / "manifest.json").string() << "\n";
  return kExitOk;
}

int cmd_featnet(const Args& a, std::ostream& out) {
  const auto rc = RunConfig::load(a.config, a.overrides);
  const auto videos = load_manifest_videos(rc.resolve(rc.data.manifest));
  if (rc.data.num_classes < 2) throw ConfigError("the feature network needs a labelled dataset (data.num_classes)");
  if (rc.metrics.featnet.empty()) throw ConfigError("metrics.featnet must name the output path");
  FeatureNetConfig fc;
  fc.num_classes = rc.data.num_classes;
  fc.size = videos.height();
  FeatureNetTraining tr;
  tr.iters = a.iters;
  tr.seed = a.seed;
  tr.clip_frames = std::min<int64_t>(tr.clip_frames, videos.frames());
  tr.on_log = [&](int64_t it, double loss) {
    if (it % 50 == 0) out << nlohmann::json{{"iter", it}, {"loss", loss}}.dump() << "\n";
  };
  auto net = train_featnet(videos, fc, tr);
  const auto path = rc.resolve(rc.metrics.featnet);
  save_featnet(path, net);
  out << "feature network: accuracy " << featnet_accuracy(net, videos) << ", saved to " << path.string() << "\n";
  return kExitOk;
}

int cmd_train(const Args& a, std::ostream& out) {
  const auto rc = RunConfig::load(a.config, a.overrides);
  if (a.level < 1 || a.level > static_cast<int64_t>(rc.levels.size()))
    throw ArgumentError("--level must be in [1, " + std::to_string(rc.levels.size()) + "]");
  // Check prerequisites before the (possibly slow) data load.
  for (int64_t l = 1; l < a.level; ++l) {
    const auto p = rc.resolve(rc.level(l).checkpoint);
    if (!fs::exists(p))
      throw MissingPrerequisiteError("level " + std::to_string(l) + " checkpoint " + p.string() +
                                     " not found; train level " + std::to_string(l) + " first");
  }
  const auto videos = load_manifest_videos(rc.resolve(rc.data.manifest));
  TrainOptions opt;
  opt.resume = a.resume;
  opt.num_workers = workers_from_env();
  opt.on_log = [&](const nlohmann::json& j) { out << j.dump() << "\n" << std::flush; };
  auto result = train_level(a.level, rc, videos, opt);
  const auto ckpt = rc.resolve(rc.level(a.level).checkpoint);
  nlohmann::json hist = {{"level", a.level},
                         {"iterations", result.iterations},
                         {"early_stopped", result.early_stopped},
                         {"history", result.checkpoint.history},
                         {"evals", result.checkpoint.extra.value("evals", nlohmann::json::array())}};
  write_text(ckpt.string() + ".history.json", hist.dump(1) + "\n");
  out << "level " << a.level << ": " << result.iterations << " iterations, checkpoint " << ckpt.string() << "\n";
  return kExitOk;
}

int cmd_sample(const Args& a, std::ostream& out) {
  const auto rc = RunConfig::load(a.config, a.overrides);
  const int64_t levels = a.levels < 0 ? static_cast<int64_t>(rc.levels.size()) : a.levels;
  if (levels < 1 || levels > static_cast<int64_t>(rc.levels.size()))
    throw ArgumentError("--levels must be in [1, " + std::to_string(rc.levels.size()) + "]");
  if (a.label && rc.data.num_classes == 0) throw ArgumentError("--class given but the model is unconditional");
  auto handle = CascadeHandle::load(rc, levels);
  const int64_t t1 = a.unroll_t > 0 ? a.unroll_t : rc.level(1).first.t1;
  const int64_t passes = a.passes >= 0 ? a.passes : rc.metrics.recompute_passes;
  prepare_cascade(handle, t1, passes, a.seed);
  auto views = sample_cascade(handle, a.n, a.label, a.seed, t1);
  write_samples(a.out, views, a.seed, rc.data.num_classes);
  for (size_t l = 0; l < views.size(); ++l) {
    const auto& v = views[l];
    out << "level " << l + 1 << ": " << v.batch() << "x" << v.frames() << "x" << v.channels() << "x" << v.height()
        << "x" << v.width() << "\n";
  }
  out << "wrote " << a.n << " samples to " << a.out << "\n";
  return kExitOk;
}

FeatureNet featnet_for(const Args& a, const RunConfig* rc) {
  if (!a.featnet.empty()) return load_featnet(a.featnet);
  if (rc && !rc->metrics.featnet.empty()) return load_featnet(rc->resolve(rc->metrics.featnet));
  throw MissingPrerequisiteError("no feature network given (--featnet or metrics.featnet)");
}

int cmd_eval(const Args& a, std::ostream& out) {
  std::optional<RunConfig> rc;
  if (!a.config.empty()) rc = RunConfig::load(a.config, a.overrides);
  auto net = featnet_for(a, rc ? &*rc : nullptr);
  fs::path ref = a.reference;
  if (ref.empty()) {
    if (!rc) throw ArgumentError("--reference or --config is required");
    ref = rc->resolve(rc->data.manifest);
  }
  const auto gen = load_manifest_videos(fs::path(a.samples) / "manifest.json");
  const auto real = load_manifest_videos(ref);
  MetricsReport report;
  report.is_mean = inception_score(net, gen.data);
  report.fid = frechet_frame_distance(net, gen.data, real.data);
  report.fvd = frechet_video_distance(net, gen.data, real.data);
  if (gen.labels && real.labels) {
    auto g = split_by_class(gen);
    auto r = split_by_class(real);
    for (auto it = g.begin(); it != g.end();) {
      // Classes with fewer than two samples on either side have no covariance.
      if (it->second.size(0) < 2 || !r.count(it->first) || r.at(it->first).size(0) < 2)
        it = g.erase(it);
      else
        ++it;
    }
    for (auto it = r.begin(); it != r.end();) it = g.count(it->first) ? std::next(it) : r.erase(it);
    if (!g.empty()) report.per_class = per_class_report(g, r, net);
  }
  const auto text = report.to_json().dump(2) + "\n";
  if (!a.report.empty()) write_text(a.report, text);
  out << text;
  return kExitOk;
}

int cmd_psd(const Args& a, std::ostream& out) {
  const auto videos = load_manifest_videos(a.input);
  std::vector<int64_t> idx;
  for (auto f : parse_list(a.frames_list, "--frames")) {
    if (f < 1 || f > videos.frames())
      throw ArgumentError("--frames: " + std::to_string(f) + " outside 1.." + std::to_string(videos.frames()));
    idx.push_back(f - 1);
  }
  const auto res = psd_profile(videos.data, idx, a.subsets);
  const auto csv = res.to_csv();
  if (!a.report.empty()) write_text(a.report, csv);
  out << csv;
  return kExitOk;
}

int cmd_memreport(const Args& a, std::ostream& out) {
  const auto rc = RunConfig::load(a.config, a.overrides);
  const int64_t batch = a.batch > 0 ? a.batch : rc.train.batch_size;
  std::ostringstream csv;
  csv << "T";
  for (size_t l = 1; l <= rc.levels.size(); ++l) csv << ",level" << l << "_bytes";
  csv << "\n";
  for (auto t : parse_list(a.t_list, "--T")) {
    csv << t;
    for (int64_t l = 1; l <= static_cast<int64_t>(rc.levels.size()); ++l)
      csv << "," << activation_memory_estimate(rc, l, t, batch, a.bytes);
    csv << "\n";
  }
  if (!a.report.empty()) write_text(a.report, csv.str());
  out << csv.str();
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cascaded video GAN: data synthesis, training, sampling and evaluation"};
  app.require_subcommand(1);
  Args a;

  auto* mk = app.add_subcommand("make-data", "Synthesise the moving-shapes dataset");
  mk->add_option("--out", a.out, "Output directory")->required();
  mk->add_option("--videos", a.videos, "Number of videos");
  mk->add_option("--classes", a.classes, "Number of classes");
  mk->add_option("--frames", a.frames, "Frames per video");
  mk->add_option("--size", a.size, "Frame height and width");
  mk->add_option("--seed", a.seed, "Random seed");

  auto add_config = [&](CLI::App* c, bool required) {
    auto* o = c->add_option("--config", a.config, "Run configuration (JSON)");
    if (required) o->required();
    c->add_option("--set", a.overrides, "Override a config value: dotted.path=value");
  };

  auto* fn = app.add_subcommand("featnet", "Train the evaluation feature network");
  add_config(fn, true);
  fn->add_option("--iters", a.iters, "Training iterations");
  fn->add_option("--seed", a.seed, "Random seed");

  auto* tr = app.add_subcommand("train", "Train one cascade level");
  add_config(tr, true);
  tr->add_option("--level", a.level, "Level to train (1-based)")->required();
  tr->add_flag("--resume", a.resume, "Continue from the saved training state");

  auto* sa = app.add_subcommand("sample", "Sample and unroll the cascade");
  add_config(sa, true);
  sa->add_option("--levels", a.levels, "Number of levels to run (default all)");
  sa->add_option("--n", a.n, "Number of videos");
  sa->add_option("--class", a.label, "Class label for every video");
  sa->add_option("--seed", a.seed, "Random seed");
  sa->add_option("--unroll-T", a.unroll_t, "First-level frames (default: trained length)");
  sa->add_option("--passes", a.passes, "Batch-norm recompute passes (default from config)");
  sa->add_option("--out", a.out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "IS / FID / FVD of samples against reference data");
  add_config(ev, false);
  ev->add_option("--samples", a.samples, "Directory written by 'sample'")->required();
  ev->add_option("--reference", a.reference, "Reference manifest (default: the configured dataset)");
  ev->add_option("--featnet", a.featnet, "Feature network checkpoint");
  ev->add_option("--out", a.report, "Write the JSON report here");

  auto* ps = app.add_subcommand("psd", "Radially averaged power spectra per frame index");
  ps->add_option("--input", a.input, "Manifest of the videos")->required();
  ps->add_option("--frames", a.frames_list, "Comma-separated 1-based frame indices");
  ps->add_option("--subsets", a.subsets, "Disjoint subsets for the std band");
  ps->add_option("--out", a.report, "Write the CSV here");

  auto* mr = app.add_subcommand("memreport", "Activation-memory estimates per level");
  add_config(mr, true);
  mr->add_option("--T", a.t_list, "Comma-separated output lengths");
  mr->add_option("--batch", a.batch, "Batch size (default from config)");
  mr->add_option("--bytes", a.bytes, "Bytes per value");
  mr->add_option("--out", a.report, "Write the CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << "\n\n";
    const auto used = app.get_subcommands();
    err << (used.empty() ? app.help() : used.front()->help());
    return kExitUsage;
  }

  try {
    if (*mk) return cmd_make_data(a, out);
    if (*fn) return cmd_featnet(a, out);
    if (*tr) return cmd_train(a, out);
    if (*sa) return cmd_sample(a, out);
    if (*ev) return cmd_eval(a, out);
    if (*ps) return cmd_psd(a, out);
    if (*mr) return cmd_memreport(a, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ArgumentError& e) {
    err << "argument error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const MissingPrerequisiteError& e) {
    err << "missing prerequisite: " << e.what() << "\n";
    return kExitMissingPrerequisite;
  } catch (const CheckpointError& e) {
    err << "incompatible checkpoint: " << e.what() << "\n";
    return kExitIncompatibleCheckpoint;
  } catch (const StateError& e) {
    err << "stale state: " << e.what() << "\n";
    return kExitIncompatibleCheckpoint;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace cvg
