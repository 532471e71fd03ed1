#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cvg/video.hpp"

namespace cvg {

// One clip as stored on disk: 8-bit samples in (t, h, w, c) order.
struct RawVideo {
  uint32_t t = 0, h = 0, w = 0, c = 3;
  std::vector<uint8_t> bytes;
};

// "CVG1" magic, four little-endian u32 (T, H, W, C), then the samples.
void write_video(const std::filesystem::path& path, const RawVideo& video);
RawVideo read_video(const std::filesystem::path& path);

// u8 -> [-1, 1] via 2u/255 - 1; returns (T, C, H, W) float.
torch::Tensor decode_frames(const RawVideo& video);
// Inverse mapping with rounding; input (T, C, H, W) in [-1, 1].
RawVideo encode_frames(const torch::Tensor& frames);

struct ManifestEntry {
  std::string path;  // relative to the manifest directory
  int64_t label = 0;
  int64_t t = 0, h = 0, w = 0;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  int64_t num_classes = 0;
  uint64_t seed = 0;
  std::filesystem::path root;  // directory holding the manifest, not serialised

  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text, std::filesystem::path root);

  void save(const std::filesystem::path& manifest_path) const;
  static DatasetManifest load(const std::filesystem::path& manifest_path);

  // Reads the selected entries into a single batch with labels.
  VideoBatch load_videos(const std::vector<size_t>& indices) const;
  VideoBatch load_all() const;
};

// Motion parameters of one synthetic class: shape id and the absolute
// per-frame velocity along each axis, in pixels at a 32-pixel frame.
struct ShapeClass {
  int shape = 0;  // 0 square, 1 triangle, 2 disc, 3 cross
  double speed_x = 0.0;
  double speed_y = 0.0;
};

constexpr int64_t kMaxShapeClasses = 16;
ShapeClass shape_class(int64_t label, int64_t num_classes);

// Renders bouncing-shape clips into `out_dir` (one .cvg file per clip plus
// manifest.json). Deterministic for a given seed. Labels cycle 0..n-1.
DatasetManifest make_shapes_dataset(const std::filesystem::path& out_dir, int64_t num_videos,
                                    int64_t num_classes, int64_t t, int64_t h, int64_t w,
                                    uint64_t seed);

}  // namespace cvg
