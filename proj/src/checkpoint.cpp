#include "cvg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "cvg/errors.hpp"

namespace cvg {

namespace {

constexpr char kMagic[8] = {'C', 'V', 'G', 'C', 'K', 'P', 'T', '1'};

uint8_t dtype_tag(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    case torch::kUInt8: return 3;
    case torch::kInt32: return 4;
    default: throw ArgumentError(std::string("checkpoint: unsupported dtype ") + c10::toString(t));
  }
}

torch::ScalarType tag_dtype(uint8_t tag) {
  switch (tag) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    case 3: return torch::kUInt8;
    case 4: return torch::kInt32;
    default: throw CheckpointError("checkpoint: unknown dtype tag " + std::to_string(tag));
  }
}

template <typename T>
void put(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T take(std::istream& is, const std::string& path) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw CheckpointError("checkpoint " + path + " is truncated");
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return static_cast<T>(v);
}

// Tensors are stored little-endian; the host is assumed to be as well.
static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

}  // namespace

const torch::Tensor* LevelCheckpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a.tensor;
  return nullptr;
}

void LevelCheckpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  const auto tmp = path.string() + ".partial";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + tmp);
    nlohmann::json meta = {{"level", level},       {"fingerprint", fingerprint}, {"iteration", iteration},
                           {"g_steps", g_steps},   {"d_steps", d_steps},         {"config", config},
                           {"history", history},   {"extra", extra}};
    const std::string text = meta.dump();
    os.write(kMagic, sizeof(kMagic));
    put<uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<uint32_t>(os, static_cast<uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
      auto t = a.tensor.detach().contiguous().cpu();
      put<uint32_t>(os, static_cast<uint32_t>(a.name.size()));
      os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
      put<uint8_t>(os, dtype_tag(t.scalar_type()));
      put<uint32_t>(os, static_cast<uint32_t>(t.dim()));
      for (auto d : t.sizes()) put<uint64_t>(os, static_cast<uint64_t>(d));
      os.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    }
    if (!os) throw IoError("failed writing checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

LevelCheckpoint LevelCheckpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  const std::string p = path.string();
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw CheckpointError(p + " is not a checkpoint archive");
  const auto len = take<uint64_t>(is, p);
  if (len > (1ull << 32)) throw CheckpointError(p + ": implausible metadata length");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw CheckpointError(p + " is truncated");
  LevelCheckpoint c;
  try {
    auto meta = nlohmann::json::parse(text);
    c.level = meta.at("level").get<int64_t>();
    c.fingerprint = meta.at("fingerprint").get<uint64_t>();
    c.iteration = meta.at("iteration").get<int64_t>();
    c.g_steps = meta.at("g_steps").get<int64_t>();
    c.d_steps = meta.at("d_steps").get<int64_t>();
    c.config = meta.at("config");
    c.history = meta.at("history");
    c.extra = meta.at("extra");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(p + ": bad metadata: " + e.what());
  }
  const auto count = take<uint32_t>(is, p);
  for (uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name.resize(take<uint32_t>(is, p));
    if (!is.read(a.name.data(), static_cast<std::streamsize>(a.name.size()))) throw CheckpointError(p + " is truncated");
    const auto dtype = tag_dtype(take<uint8_t>(is, p));
    const auto rank = take<uint32_t>(is, p);
    if (rank > 8) throw CheckpointError(p + ": implausible rank for " + a.name);
    std::vector<int64_t> dims(rank);
    for (auto& d : dims) d = static_cast<int64_t>(take<uint64_t>(is, p));
    a.tensor = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    if (!is.read(static_cast<char*>(a.tensor.data_ptr()), static_cast<std::streamsize>(a.tensor.nbytes())))
      throw CheckpointError(p + " is truncated inside " + a.name);
    c.arrays.push_back(std::move(a));
  }
  return c;
}

void collect_state(torch::nn::Module& module, const std::string& prefix, std::vector<NamedArray>& out) {
  for (const auto& p : module.named_parameters()) out.push_back({prefix + p.key(), p.value().detach().clone()});
  for (const auto& b : module.named_buffers()) out.push_back({prefix + b.key(), b.value().detach().clone()});
}

void restore_state(torch::nn::Module& module, const LevelCheckpoint& ckpt, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  for (auto& p : module.named_parameters()) {
    const auto* t = ckpt.find(prefix + p.key());
    if (!t) throw CheckpointError("checkpoint lacks parameter " + prefix + p.key());
    if (t->sizes() != p.value().sizes())
      throw CheckpointError("checkpoint parameter " + prefix + p.key() + " has the wrong shape");
    p.value().copy_(*t);
  }
  for (auto& b : module.named_buffers()) {
    const auto* t = ckpt.find(prefix + b.key());
    if (!t) throw CheckpointError("checkpoint lacks buffer " + prefix + b.key());
    b.value().set_data(t->to(b.value().dtype()).clone());
  }
}

uint64_t state_checksum(torch::nn::Module& module) {
  std::map<std::string, torch::Tensor> all;
  for (const auto& p : module.named_parameters()) all[p.key()] = p.value();
  for (const auto& b : module.named_buffers()) all["buffer:" + b.key()] = b.value();
  uint64_t h = 14695981039346656037ull;
  for (const auto& [name, tensor] : all) {
    auto t = tensor.detach().contiguous();
    for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
    const auto* bytes = static_cast<const unsigned char*>(t.data_ptr());
    for (size_t i = 0; i < t.nbytes(); ++i) h = (h ^ bytes[i]) * 1099511628211ull;
  }
  return h;
}

}  // namespace cvg
