#include "cvg/metrics.hpp"

#include <cmath>
#include <sstream>

#include "cvg/errors.hpp"

namespace cvg {

namespace {

torch::Tensor covariance(const torch::Tensor& x) {
  auto centred = x - x.mean(0, true);
  return centred.t().mm(centred) / static_cast<double>(x.size(0) - 1);
}

torch::Tensor symmetric_sqrt(const torch::Tensor& m) {
  auto [values, vectors] = torch::linalg_eigh(m);
  return vectors.mm(torch::diag(values.clamp_min(0).sqrt())).mm(vectors.t());
}

}  // namespace

double inception_score(const torch::Tensor& probs) {
  if (probs.dim() != 2 || probs.size(0) < 1 || probs.size(1) < 1)
    throw ArgumentError("inception_score expects (N, K) probabilities");
  auto p = probs.to(torch::kFloat64);
  if (p.lt(0).any().item<bool>() || (p.sum(1) - 1).abs().gt(1e-4).any().item<bool>())
    throw ArgumentError("inception_score rows must be probability distributions");
  auto marginal = p.mean(0, true);
  // 0 * log 0 := 0
  auto terms = torch::where(p > 0, p * (p.log() - marginal.log()), torch::zeros_like(p));
  return std::exp(terms.sum(1).mean().item<double>());
}

double frechet_distance(const torch::Tensor& feats_a, const torch::Tensor& feats_b) {
  if (feats_a.dim() != 2 || feats_b.dim() != 2 || feats_a.size(1) != feats_b.size(1))
    throw DimensionError("frechet_distance expects (N, d) features of equal d");
  if (feats_a.size(0) < 2 || feats_b.size(0) < 2)
    throw ArgumentError("frechet_distance needs at least two samples per side");
  auto a = feats_a.to(torch::kFloat64), b = feats_b.to(torch::kFloat64);
  auto mu = a.mean(0) - b.mean(0);
  auto sa = covariance(a), sb = covariance(b);
  auto root_a = symmetric_sqrt(sa);
  auto inner = root_a.mm(sb).mm(root_a);
  inner = (inner + inner.t()) / 2;
  auto eig = torch::linalg_eigvalsh(inner).clamp_min(0);
  const double tr_root = eig.sqrt().sum().item<double>();
  return mu.dot(mu).item<double>() + sa.trace().item<double>() + sb.trace().item<double>() - 2 * tr_root;
}

double frechet_video_distance(FeatureNet& net, const torch::Tensor& a, const torch::Tensor& b) {
  return frechet_distance(clip_logits(net, a), clip_logits(net, b));
}

double frechet_frame_distance(FeatureNet& net, const torch::Tensor& a, const torch::Tensor& b) {
  return frechet_distance(frame_features(net, a), frame_features(net, b));
}

double inception_score(FeatureNet& net, const torch::Tensor& videos) {
  return inception_score(torch::softmax(clip_logits(net, videos), 1));
}

torch::Tensor radial_psd(const torch::Tensor& frames, torch::Tensor* bin_counts) {
  if (frames.dim() != 3) throw DimensionError("radial_psd expects (N, H, W)");
  const int64_t h = frames.size(1), w = frames.size(2);
  const int64_t bins = std::min(h, w) / 2;
  if (bins < 1) throw DimensionError("radial_psd needs frames of at least 2x2");
  auto spectrum = torch::fft::fft2(frames.to(torch::kFloat64));
  auto power = spectrum.abs().pow(2) / static_cast<double>(h * w * h * w);
  auto fy = torch::arange(h, torch::kFloat64);
  fy = torch::minimum(fy, h - fy);
  auto fx = torch::arange(w, torch::kFloat64);
  fx = torch::minimum(fx, w - fx);
  auto radius = (fy.view({h, 1}).pow(2) + fx.view({1, w}).pow(2)).sqrt();
  auto bin = radius.floor().clamp_max(bins - 1).to(torch::kInt64).flatten();
  auto counts = torch::zeros({bins}, torch::kFloat64).index_add_(0, bin, torch::ones({h * w}, torch::kFloat64));
  auto sums = torch::zeros({frames.size(0), bins}, torch::kFloat64)
                  .index_add_(1, bin, power.reshape({frames.size(0), h * w}));
  if (bin_counts) *bin_counts = counts.to(torch::kInt64);
  return sums / counts;
}

PsdResult psd_profile(const torch::Tensor& videos, const std::vector<int64_t>& frame_indices, int64_t subsets) {
  if (videos.dim() != 5) throw DimensionError("psd_profile expects (N, T, C, H, W)");
  if (subsets < 1) throw ArgumentError("psd_profile needs at least one subset");
  const int64_t n = videos.size(0);
  PsdResult out;
  for (int64_t idx : frame_indices) {
    if (idx < 0 || idx >= videos.size(1))
      throw ArgumentError("frame index " + std::to_string(idx) + " outside [0, " + std::to_string(videos.size(1)) + ")");
    auto gray = videos.select(1, idx).mean(1);  // (N, H, W)
    torch::Tensor counts;
    auto profiles = radial_psd(gray, &counts);
    if (out.bin_counts.empty()) {
      auto c = counts.contiguous();
      out.bin_counts.assign(c.data_ptr<int64_t>(), c.data_ptr<int64_t>() + c.numel());
    }
    PsdFrameProfile f;
    f.frame_index = idx;
    auto mean = profiles.mean(0).contiguous();
    f.mean.assign(mean.data_ptr<double>(), mean.data_ptr<double>() + mean.numel());
    const int64_t k = std::min(subsets, n);
    if (k >= 2) {
      std::vector<torch::Tensor> subset_means;
      for (int64_t s = 0; s < k; ++s) {
        const int64_t lo = s * n / k, hi = (s + 1) * n / k;
        subset_means.push_back(profiles.narrow(0, lo, hi - lo).mean(0));
      }
      auto sd = torch::stack(subset_means).std(0, /*unbiased=*/true).contiguous();
      f.std.assign(sd.data_ptr<double>(), sd.data_ptr<double>() + sd.numel());
    } else {
      f.std.assign(f.mean.size(), 0.0);
    }
    out.frames.push_back(std::move(f));
  }
  return out;
}

std::string PsdResult::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "frame_index,bin_radius,mean,std\n";
  for (const auto& f : frames)
    for (size_t b = 0; b < f.mean.size(); ++b)
      os << f.frame_index + 1 << ',' << b << ',' << f.mean[b] << ',' << f.std[b] << '\n';
  return os.str();
}

nlohmann::json PsdResult::to_json() const {
  nlohmann::json fr = nlohmann::json::array();
  for (const auto& f : frames) fr.push_back({{"frame", f.frame_index + 1}, {"mean", f.mean}, {"std", f.std}});
  return {{"bin_counts", bin_counts}, {"frames", fr}};
}

double psd_log_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw ArgumentError("psd profiles differ in length");
  double acc = 0;
  for (size_t i = 0; i < a.size(); ++i) acc += std::abs(std::log10(a[i] + 1e-20) - std::log10(b[i] + 1e-20));
  return acc / static_cast<double>(a.size());
}

double grounding_error(const torch::Tensor& x_out, const torch::Tensor& x_in, int64_t k_t, int64_t k_s) {
  if (x_out.dim() != 5 || x_in.dim() != 5) throw AlignmentError("grounding_error expects 5-D videos");
  if (k_t < 1 || k_s < 1) throw ArgumentError("grounding_error factors must be >= 1");
  if (x_out.size(0) != x_in.size(0) || x_out.size(2) != x_in.size(2) || x_out.size(1) != k_t * x_in.size(1) ||
      x_out.size(3) != k_s * x_in.size(3) || x_out.size(4) != k_s * x_in.size(4))
    throw AlignmentError("x_out is not a (k_t, k_s) upscaling of x_in in shape");
  using torch::indexing::Slice;
  auto reduced = bilinear_downsample(x_out.index({Slice(), Slice(0, torch::indexing::None, k_t)}), k_s);
  return (reduced.to(torch::kFloat64) - x_in.to(torch::kFloat64)).abs().mean().item<double>();
}

std::map<int64_t, torch::Tensor> split_by_class(const VideoBatch& videos) {
  if (!videos.labels) throw ArgumentError("split_by_class needs labels");
  std::map<int64_t, std::vector<int64_t>> idx;
  auto labels = videos.labels->contiguous();
  for (int64_t i = 0; i < labels.size(0); ++i) idx[labels[i].item<int64_t>()].push_back(i);
  std::map<int64_t, torch::Tensor> out;
  for (auto& [k, v] : idx) out[k] = videos.data.index_select(0, torch::tensor(v, torch::kInt64));
  return out;
}

std::map<int64_t, ClassMetrics> per_class_report(const std::map<int64_t, torch::Tensor>& generated,
                                                 const std::map<int64_t, torch::Tensor>& reference,
                                                 FeatureNet& net) {
  std::map<int64_t, ClassMetrics> out;
  for (const auto& [k, gen] : generated) {
    auto ref = reference.find(k);
    if (ref == reference.end()) throw ArgumentError("class " + std::to_string(k) + " is absent from the reference");
    if (gen.size(0) < 2 || ref->second.size(0) < 2)
      throw ArgumentError("class " + std::to_string(k) + " needs at least two samples on both sides");
    out[k] = {inception_score(net, gen), frechet_frame_distance(net, gen, ref->second)};
  }
  return out;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j = {{"is_mean", is_mean}, {"fid", fid}, {"fvd", fvd}};
  if (psd) j["psd"] = psd->to_json();
  if (grounding) j["grounding"] = *grounding;
  if (!per_class.empty()) {
    nlohmann::json pc = nlohmann::json::object();
    for (const auto& [k, m] : per_class) pc[std::to_string(k)] = {{"is", m.is}, {"fid", m.fid}};
    j["per_class"] = pc;
  }
  return j;
}

}  // namespace cvg
