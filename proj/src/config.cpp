#include "cvg/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "cvg/errors.hpp"

namespace cvg {

using nlohmann::json;

namespace {

// Reads typed fields out of one JSON object and rejects keys nobody asked
// for once `finish` is called.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type");
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

nn::LossKind loss_from_string(const std::string& s) {
  if (s == "hinge") return nn::LossKind::hinge;
  if (s == "log") return nn::LossKind::log;
  throw ConfigError("train.loss must be 'hinge' or 'log'");
}

FakeConditionSource source_from_string(const std::string& s) {
  if (s == "prev_level") return FakeConditionSource::prev_level;
  if (s == "data_pyramid") return FakeConditionSource::data_pyramid;
  throw ConfigError("train.fake_condition_source must be 'prev_level' or 'data_pyramid'");
}

void read_train(const json& j, const std::string& where, TrainConfig& t) {
  ObjectReader r(j, where);
  r.get("lr_g", t.lr_g);
  r.get("lr_d", t.lr_d);
  r.get("beta1", t.beta1);
  r.get("beta2", t.beta2);
  r.get("d_steps_per_g", t.d_steps_per_g);
  r.get("batch_size", t.batch_size);
  r.get("max_iters", t.max_iters);
  r.get("early_stop_patience", t.early_stop_patience);
  r.get("eval_every", t.eval_every);
  r.get("eval_samples", t.eval_samples);
  r.get("seed", t.seed);
  r.get("matching_discriminator", t.matching_discriminator);
  r.get("log_every", t.log_every);
  std::string source = to_string(t.fake_condition_source);
  r.get("fake_condition_source", source);
  t.fake_condition_source = source_from_string(source);
  std::string loss = t.loss == nn::LossKind::hinge ? "hinge" : "log";
  r.get("loss", loss);
  t.loss = loss_from_string(loss);
  r.finish();
}

json train_to_json(const TrainConfig& t) {
  return {{"lr_g", t.lr_g},
          {"lr_d", t.lr_d},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"d_steps_per_g", t.d_steps_per_g},
          {"batch_size", t.batch_size},
          {"max_iters", t.max_iters},
          {"early_stop_patience", t.early_stop_patience},
          {"eval_every", t.eval_every},
          {"eval_samples", t.eval_samples},
          {"seed", t.seed},
          {"fake_condition_source", to_string(t.fake_condition_source)},
          {"loss", t.loss == nn::LossKind::hinge ? "hinge" : "log"},
          {"matching_discriminator", t.matching_discriminator},
          {"log_every", t.log_every}};
}

json first_to_json(const FirstLevelConfig& c) {
  return {{"ch", c.ch}, {"multipliers", c.multipliers}, {"t1", c.t1},
          {"seed_hw", c.seed_hw}, {"d_z", c.d_z}, {"d_y", c.d_y}};
}

json up_to_json(const UpLevelConfig& c) {
  return {{"ch", c.ch},
          {"multipliers", c.multipliers},
          {"d_z", c.d_z},
          {"d_y", c.d_y},
          {"window_w", c.window_w},
          {"recurrent_kind", to_string(c.recurrent_kind)}};
}

json disc_to_json(const DiscConfig& c) {
  return {{"ch", c.ch},
          {"multipliers", c.multipliers},
          {"k_frames", c.k_frames},
          {"spatial_ds_factor", c.spatial_ds_factor},
          {"projection", c.projection}};
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

bool is_index(const std::string& s) {
  return !s.empty() && s.find_first_not_of("0123456789") == std::string::npos;
}

}  // namespace

std::string to_string(FakeConditionSource s) {
  return s == FakeConditionSource::prev_level ? "prev_level" : "data_pyramid";
}

uint64_t fnv1a64(const std::string& bytes) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void TrainConfig::validate() const {
  if (!(lr_g > 0) || !(lr_d > 0)) throw ConfigError("train: learning rates must be > 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("train: betas must lie in [0, 1)");
  if (d_steps_per_g < 1) throw ConfigError("train: d_steps_per_g must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (max_iters < 0) throw ConfigError("train: max_iters must be >= 0");
  if (early_stop_patience < 0 || eval_every < 0 || log_every < 0)
    throw ConfigError("train: patience, eval_every and log_every must be >= 0");
  if (eval_samples < 2) throw ConfigError("train: eval_samples must be >= 2");
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const auto keys = split(assignment.substr(0, eq), '.');
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &j;
  for (size_t i = 0; i < keys.size(); ++i) {
    const auto& k = keys[i];
    if (k.empty()) throw ConfigError("override '" + assignment + "' has an empty path component");
    json* next = nullptr;
    if (node->is_array()) {
      if (!is_index(k) || std::stoul(k) >= node->size())
        throw ConfigError("override '" + assignment + "': bad array index '" + k + "'");
      next = &(*node)[std::stoul(k)];
    } else {
      if (!node->is_object()) throw ConfigError("override '" + assignment + "' descends into a scalar");
      next = &(*node)[k];
    }
    node = next;
  }
  *node = value;
}

TrainConfig RunConfig::train_for(int64_t l) const {
  TrainConfig t = train;
  const auto& overrides = level(l).train_overrides;
  if (!overrides.empty()) read_train(overrides, "levels." + std::to_string(l - 1) + ".train", t);
  return t;
}

const LevelSpec& RunConfig::level(int64_t l) const {
  if (l < 1 || l > static_cast<int64_t>(levels.size()))
    throw ArgumentError("level " + std::to_string(l) + " is not configured");
  return levels[static_cast<size_t>(l - 1)];
}

int64_t RunConfig::frames_at(int64_t l) const {
  int64_t t = level(1).first.t1;
  for (int64_t i = 2; i <= l; ++i) t *= pyramid.levels[static_cast<size_t>(i - 2)].k_t;
  return t;
}

int64_t RunConfig::size_at(int64_t l) const {
  int64_t s = level(1).first.output_size();
  for (int64_t i = 2; i <= l; ++i) s *= pyramid.levels[static_cast<size_t>(i - 2)].k_s;
  return s;
}

json RunConfig::level_json(int64_t l) const {
  const auto& spec = level(l);
  const TrainConfig t = train_for(l);
  json train_core = train_to_json(t);
  // Run-length and logging knobs do not change what a given step computes.
  for (const char* k : {"max_iters", "early_stop_patience", "eval_every", "eval_samples", "log_every"})
    train_core.erase(k);
  // Level 1 has no conditioning input and no matching discriminator.
  if (l == 1)
    for (const char* k : {"fake_condition_source", "matching_discriminator"}) train_core.erase(k);
  json j = {{"level", l},
            {"generator", l == 1 ? first_to_json(spec.first) : up_to_json(spec.up)},
            {"discriminator", disc_to_json(spec.disc)},
            {"num_classes", data.num_classes},
            {"train", train_core}};
  if (l > 1) j["factors"] = {spec.up.k_t, spec.up.k_s};
  return j;
}

uint64_t RunConfig::fingerprint(int64_t l) const {
  std::string acc;
  for (int64_t i = 1; i <= l; ++i) acc += level_json(i).dump();
  return fnv1a64(acc);
}

std::filesystem::path RunConfig::resolve(const std::string& path) const {
  std::filesystem::path p(path);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

void RunConfig::validate() const {
  if (levels.empty()) throw ConfigError("levels: at least one level required");
  if (static_cast<int64_t>(levels.size()) != pyramid.num_levels())
    throw ConfigError("levels: " + std::to_string(levels.size()) + " configured but the pyramid has " +
                      std::to_string(pyramid.num_levels()));
  for (const auto& f : pyramid.levels)
    if (f.k_t < 1 || f.k_s < 1) throw ConfigError("pyramid: factors must be >= 1");
  if (data.num_classes < 0) throw ConfigError("data.num_classes must be >= 0");
  if (!(data.holdout_fraction > 0 && data.holdout_fraction < 1))
    throw ConfigError("data.holdout_fraction must lie in (0, 1)");
  train.validate();
  for (size_t i = 0; i < levels.size(); ++i) {
    const auto& spec = levels[i];
    const int64_t l = static_cast<int64_t>(i) + 1;
    train_for(l).validate();
    spec.disc.validate();
    const int64_t frames = frames_at(l);
    if (l == 1) {
      spec.first.validate();
      if (spec.disc.k_frames > frames)
        throw ConfigError("levels.0: discriminator k_frames exceeds the " + std::to_string(frames) + " frames");
    } else {
      spec.up.validate();
      const int64_t in_frames = frames_at(l - 1);
      if (spec.up.window_w > in_frames)
        throw ConfigError("levels." + std::to_string(i) + ": window_w " + std::to_string(spec.up.window_w) +
                          " exceeds the previous level's " + std::to_string(in_frames) + " frames");
      if (spec.disc.k_frames > spec.up.window_w * spec.up.k_t)
        throw ConfigError("levels." + std::to_string(i) + ": discriminator k_frames exceeds the window");
    }
    if (size_at(l) % spec.disc.spatial_ds_factor != 0)
      throw ConfigError("levels." + std::to_string(i) + ": output size not divisible by spatial_ds_factor");
  }
  if (metrics.eval_samples < 2 || metrics.psd_subsets < 1 || metrics.recompute_passes < 0)
    throw ConfigError("metrics: invalid sample budget");
}

json RunConfig::to_json() const {
  json pyr = json::array();
  for (const auto& f : pyramid.levels) pyr.push_back({{"k_t", f.k_t}, {"k_s", f.k_s}});
  json lv = json::array();
  for (const auto& spec : levels) {
    json e = {{"generator", spec.level == 1 ? first_to_json(spec.first) : up_to_json(spec.up)},
              {"discriminator", disc_to_json(spec.disc)},
              {"checkpoint", spec.checkpoint}};
    if (!spec.train_overrides.empty()) e["train"] = spec.train_overrides;
    lv.push_back(e);
  }
  return {{"pyramid", pyr},
          {"levels", lv},
          {"train", train_to_json(train)},
          {"metrics",
           {{"featnet", metrics.featnet},
            {"eval_samples", metrics.eval_samples},
            {"psd_subsets", metrics.psd_subsets},
            {"recompute_passes", metrics.recompute_passes}}},
          {"data",
           {{"manifest", data.manifest},
            {"num_classes", data.num_classes},
            {"holdout_fraction", data.holdout_fraction}}}};
}

RunConfig RunConfig::from_json(const json& j, std::filesystem::path base_dir) {
  RunConfig rc;
  rc.base_dir = std::move(base_dir);
  ObjectReader top(j, "config");
  if (const json* data = top.sub("data")) {
    ObjectReader r(*data, "data");
    r.get("manifest", rc.data.manifest);
    r.get("num_classes", rc.data.num_classes);
    r.get("holdout_fraction", rc.data.holdout_fraction);
    r.finish();
  }
  if (const json* pyr = top.sub("pyramid")) {
    if (!pyr->is_array()) throw ConfigError("pyramid: expected an array of {k_t, k_s}");
    for (size_t i = 0; i < pyr->size(); ++i) {
      ObjectReader r((*pyr)[i], "pyramid." + std::to_string(i));
      LevelFactors f;
      r.get("k_t", f.k_t);
      r.get("k_s", f.k_s);
      r.finish();
      rc.pyramid.levels.push_back(f);
    }
  }
  if (const json* train = top.sub("train")) read_train(*train, "train", rc.train);
  if (const json* metrics = top.sub("metrics")) {
    ObjectReader r(*metrics, "metrics");
    r.get("featnet", rc.metrics.featnet);
    r.get("eval_samples", rc.metrics.eval_samples);
    r.get("psd_subsets", rc.metrics.psd_subsets);
    r.get("recompute_passes", rc.metrics.recompute_passes);
    r.finish();
  }
  const json* levels = top.sub("levels");
  if (!levels || !levels->is_array()) throw ConfigError("levels: expected an array");
  for (size_t i = 0; i < levels->size(); ++i) {
    const std::string where = "levels." + std::to_string(i);
    ObjectReader r((*levels)[i], where);
    LevelSpec spec;
    spec.level = static_cast<int64_t>(i) + 1;
    r.get("checkpoint", spec.checkpoint);
    if (const json* t = r.sub("train")) {
      TrainConfig probe;
      read_train(*t, where + ".train", probe);  // validates keys early
      spec.train_overrides = *t;
    }
    if (const json* g = r.sub("generator")) {
      ObjectReader gr(*g, where + ".generator");
      if (spec.level == 1) {
        gr.get("ch", spec.first.ch);
        gr.get("multipliers", spec.first.multipliers);
        gr.get("t1", spec.first.t1);
        gr.get("seed_hw", spec.first.seed_hw);
        gr.get("d_z", spec.first.d_z);
        gr.get("d_y", spec.first.d_y);
      } else {
        gr.get("ch", spec.up.ch);
        gr.get("multipliers", spec.up.multipliers);
        gr.get("d_z", spec.up.d_z);
        gr.get("d_y", spec.up.d_y);
        gr.get("window_w", spec.up.window_w);
        std::string kind = to_string(spec.up.recurrent_kind);
        gr.get("recurrent_kind", kind);
        spec.up.recurrent_kind = recurrent_kind_from_string(kind);
      }
      gr.finish();
    }
    if (const json* d = r.sub("discriminator")) {
      ObjectReader dr(*d, where + ".discriminator");
      dr.get("ch", spec.disc.ch);
      dr.get("multipliers", spec.disc.multipliers);
      dr.get("k_frames", spec.disc.k_frames);
      dr.get("spatial_ds_factor", spec.disc.spatial_ds_factor);
      dr.get("projection", spec.disc.projection);
      dr.finish();
    }
    r.finish();
    if (spec.checkpoint.empty()) spec.checkpoint = "level" + std::to_string(spec.level) + ".ckpt";
    spec.first.num_classes = rc.data.num_classes;
    spec.up.num_classes = rc.data.num_classes;
    spec.disc.num_classes = rc.data.num_classes;
    if (spec.level > 1 && static_cast<size_t>(spec.level - 2) < rc.pyramid.levels.size()) {
      spec.up.k_t = rc.pyramid.levels[static_cast<size_t>(spec.level - 2)].k_t;
      spec.up.k_s = rc.pyramid.levels[static_cast<size_t>(spec.level - 2)].k_s;
    }
    rc.levels.push_back(spec);
  }
  top.finish();
  rc.validate();
  return rc;
}

RunConfig RunConfig::load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  for (const auto& o : overrides) apply_override(j, o);
  return from_json(j, path.parent_path());
}

}  // namespace cvg
