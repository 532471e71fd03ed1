#include "cvg/dataset.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "cvg/errors.hpp"

namespace cvg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<char, 4> kMagic = {'C', 'V', 'G', '1'};

void put_u32(std::ostream& os, uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                 static_cast<char>((v >> 16) & 0xff),
                                 static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

// Portable uniform draw in [0, 1); std distributions differ across stdlibs.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct Sprite {
  int shape;
  double radius;
};

bool inside(const Sprite& s, double dx, double dy) {
  const double r = s.radius;
  switch (s.shape) {
    case 0:
      return std::abs(dx) <= r && std::abs(dy) <= r;
    case 1: {
      // Upward-pointing triangle inscribed in the bounding square.
      if (dy > r || dy < -r) return false;
      const double half_width = r * (dy + r) / (2.0 * r);
      return std::abs(dx) <= half_width;
    }
    case 2:
      return dx * dx + dy * dy <= r * r;
    default: {
      const double arm = 0.4 * r;
      return (std::abs(dx) <= r && std::abs(dy) <= arm) || (std::abs(dy) <= r && std::abs(dx) <= arm);
    }
  }
}

void bounce(double& p, double& v, double lo, double hi) {
  p += v;
  if (p < lo) {
    p = 2.0 * lo - p;
    v = -v;
  } else if (p > hi) {
    p = 2.0 * hi - p;
    v = -v;
  }
}

}  // namespace

void write_video(const fs::path& path, const RawVideo& video) {
  if (video.bytes.size() != static_cast<size_t>(video.t) * video.h * video.w * video.c)
    throw ArgumentError("raw video byte count does not match its header");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(kMagic.data(), 4);
  put_u32(os, video.t);
  put_u32(os, video.h);
  put_u32(os, video.w);
  put_u32(os, video.c);
  os.write(reinterpret_cast<const char*>(video.bytes.data()),
           static_cast<std::streamsize>(video.bytes.size()));
  if (!os) throw IoError("write failed for " + path.string());
}

RawVideo read_video(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  if (!is || magic != kMagic) throw IoError(path.string() + " is not a CVG1 video");
  RawVideo v;
  v.t = get_u32(is);
  v.h = get_u32(is);
  v.w = get_u32(is);
  v.c = get_u32(is);
  v.bytes.resize(static_cast<size_t>(v.t) * v.h * v.w * v.c);
  is.read(reinterpret_cast<char*>(v.bytes.data()), static_cast<std::streamsize>(v.bytes.size()));
  if (!is) throw IoError("truncated video file " + path.string());
  return v;
}

torch::Tensor decode_frames(const RawVideo& video) {
  auto raw = torch::from_blob(const_cast<uint8_t*>(video.bytes.data()),
                              {video.t, video.h, video.w, video.c}, torch::kUInt8);
  return (raw.to(torch::kFloat32) * (2.0 / 255.0) - 1.0).permute({0, 3, 1, 2}).contiguous();
}

RawVideo encode_frames(const torch::Tensor& frames) {
  if (frames.dim() != 4) throw DimensionError("expected (T, C, H, W) frames");
  auto u = ((frames.detach().to(torch::kFloat64).clamp(-1.0, 1.0) + 1.0) * (255.0 / 2.0))
               .round()
               .to(torch::kUInt8)
               .permute({0, 2, 3, 1})
               .contiguous();
  RawVideo v;
  v.t = static_cast<uint32_t>(frames.size(0));
  v.c = static_cast<uint32_t>(frames.size(1));
  v.h = static_cast<uint32_t>(frames.size(2));
  v.w = static_cast<uint32_t>(frames.size(3));
  v.bytes.assign(u.data_ptr<uint8_t>(), u.data_ptr<uint8_t>() + u.numel());
  return v;
}

std::string DatasetManifest::to_json() const {
  json j;
  j["num_classes"] = num_classes;
  j["seed"] = seed;
  j["entries"] = json::array();
  for (const auto& e : entries)
    j["entries"].push_back({{"path", e.path}, {"label", e.label}, {"t", e.t}, {"h", e.h}, {"w", e.w}});
  return j.dump(2);
}

DatasetManifest DatasetManifest::from_json(const std::string& text, fs::path root) {
  DatasetManifest m;
  try {
    const auto j = json::parse(text);
    m.num_classes = j.at("num_classes").get<int64_t>();
    m.seed = j.at("seed").get<uint64_t>();
    for (const auto& e : j.at("entries")) {
      m.entries.push_back({e.at("path").get<std::string>(), e.at("label").get<int64_t>(),
                           e.at("t").get<int64_t>(), e.at("h").get<int64_t>(),
                           e.at("w").get<int64_t>()});
    }
  } catch (const json::exception& ex) {
    throw IoError(std::string("malformed manifest: ") + ex.what());
  }
  for (const auto& e : m.entries) {
    if (e.h != m.entries.front().h || e.w != m.entries.front().w)
      throw ArgumentError("manifest entries must share H and W");
  }
  m.root = std::move(root);
  return m;
}

void DatasetManifest::save(const fs::path& manifest_path) const {
  std::ofstream os(manifest_path, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest " + manifest_path.string());
  os << to_json() << "\n";
  if (!os) throw IoError("write failed for " + manifest_path.string());
}

DatasetManifest DatasetManifest::load(const fs::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open manifest " + manifest_path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json(ss.str(), manifest_path.parent_path());
}

VideoBatch DatasetManifest::load_videos(const std::vector<size_t>& indices) const {
  if (indices.empty()) throw ArgumentError("no videos selected");
  std::vector<torch::Tensor> clips;
  std::vector<int64_t> labels;
  clips.reserve(indices.size());
  for (size_t i : indices) {
    if (i >= entries.size()) throw ArgumentError("manifest index out of range");
    const auto& e = entries[i];
    const auto path = root / e.path;
    if (!fs::exists(path)) throw IoError("missing video " + path.string());
    auto raw = read_video(path);
    if (raw.t != e.t || raw.h != e.h || raw.w != e.w)
      throw IoError("video header disagrees with manifest: " + path.string());
    if (!clips.empty() && raw.t != static_cast<uint32_t>(clips.front().size(0)))
      throw DimensionError("selected videos differ in length");
    clips.push_back(decode_frames(raw));
    labels.push_back(e.label);
  }
  return VideoBatch(torch::stack(clips), torch::tensor(labels, torch::kInt64));
}

VideoBatch DatasetManifest::load_all() const {
  std::vector<size_t> all(entries.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = i;
  return load_videos(all);
}

ShapeClass shape_class(int64_t label, int64_t num_classes) {
  if (num_classes < 1 || num_classes > kMaxShapeClasses || label < 0 || label >= num_classes)
    throw ArgumentError("class label out of range");
  // Every class moves along its own heading in the first quadrant; bouncing
  // flips signs but keeps |vx| and |vy|, so the pair identifies the class.
  const double heading =
      (static_cast<double>(label) + 0.5) / static_cast<double>(num_classes) * (std::numbers::pi / 2);
  const double speed = (label % 2 == 0) ? 0.8 : 1.4;
  return {static_cast<int>(label % 4), speed * std::cos(heading), speed * std::sin(heading)};
}

DatasetManifest make_shapes_dataset(const fs::path& out_dir, int64_t num_videos, int64_t num_classes,
                                    int64_t t, int64_t h, int64_t w, uint64_t seed) {
  if (num_videos < 0) throw ArgumentError("num_videos must be >= 0");
  if (num_classes < 1 || num_classes > kMaxShapeClasses)
    throw ArgumentError("num_classes must be in [1, 16]");
  if (t < 1 || h < 4 || w < 4) throw ArgumentError("clip dimensions too small");

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create " + out_dir.string());

  DatasetManifest manifest;
  manifest.num_classes = num_classes;
  manifest.seed = seed;
  manifest.root = out_dir;

  std::mt19937_64 rng(seed);
  const double scale = static_cast<double>(std::min(h, w)) / 32.0;
  constexpr int kSuper = 4;

  for (int64_t i = 0; i < num_videos; ++i) {
    const int64_t label = i % num_classes;
    const ShapeClass cls = shape_class(label, num_classes);
    const Sprite sprite{cls.shape, 4.0 * scale};
    const double lo_x = sprite.radius, hi_x = static_cast<double>(w) - sprite.radius;
    const double lo_y = sprite.radius, hi_y = static_cast<double>(h) - sprite.radius;
    double px = lo_x + uniform01(rng) * (hi_x - lo_x);
    double py = lo_y + uniform01(rng) * (hi_y - lo_y);
    double vx = cls.speed_x * scale * (uniform01(rng) < 0.5 ? -1.0 : 1.0);
    double vy = cls.speed_y * scale * (uniform01(rng) < 0.5 ? -1.0 : 1.0);
    // Bright colour with one channel held low so shapes differ in hue.
    std::array<double, 3> colour{};
    for (auto& c : colour) c = 0.5 + 0.5 * uniform01(rng);
    colour[static_cast<size_t>(rng() % 3)] = -0.6;

    RawVideo raw;
    raw.t = static_cast<uint32_t>(t);
    raw.h = static_cast<uint32_t>(h);
    raw.w = static_cast<uint32_t>(w);
    raw.c = 3;
    raw.bytes.resize(static_cast<size_t>(t * h * w * 3));
    for (int64_t f = 0; f < t; ++f) {
      for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
          int hits = 0;
          for (int sy = 0; sy < kSuper; ++sy) {
            for (int sx = 0; sx < kSuper; ++sx) {
              const double cx = static_cast<double>(x) + (sx + 0.5) / kSuper;
              const double cy = static_cast<double>(y) + (sy + 0.5) / kSuper;
              hits += inside(sprite, cx - px, cy - py) ? 1 : 0;
            }
          }
          const double cover = static_cast<double>(hits) / (kSuper * kSuper);
          for (int c = 0; c < 3; ++c) {
            const double v = -1.0 + cover * (colour[static_cast<size_t>(c)] + 1.0);
            const auto u = static_cast<uint8_t>(std::lround((v + 1.0) * 127.5));
            raw.bytes[static_cast<size_t>(((f * h + y) * w + x) * 3 + c)] = u;
          }
        }
      }
      bounce(px, vx, lo_x, hi_x);
      bounce(py, vy, lo_y, hi_y);
    }
    std::ostringstream name;
    name << "video_" << std::setw(5) << std::setfill('0') << i << ".cvg";
    write_video(out_dir / name.str(), raw);
    manifest.entries.push_back({name.str(), label, t, h, w});
  }
  manifest.save(out_dir / "manifest.json");
  return manifest;
}

}  // namespace cvg
