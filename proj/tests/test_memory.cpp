#include <doctest.h>

#include "counting_allocator.hpp"
#include "cvg/memory.hpp"
#include "cvg/nn/spectral_norm.hpp"

namespace {

cvg::FirstLevelConfig desk_first() {
  cvg::FirstLevelConfig c;
  c.ch = 8;
  c.multipliers = {4, 2};
  c.t1 = 12;
  c.seed_hw = 4;
  c.d_z = 32;
  c.num_classes = 8;
  c.d_y = 16;
  return c;
}

cvg::UpLevelConfig desk_up(cvg::RecurrentKind kind) {
  cvg::UpLevelConfig c;
  c.ch = 8;
  c.multipliers = {4, 2, 1};
  c.d_z = 32;
  c.num_classes = 8;
  c.d_y = 16;
  c.k_t = 2;
  c.k_s = 4;
  c.window_w = 4;
  c.recurrent_kind = kind;
  return c;
}

template <typename Forward>
int64_t measured_bytes(Forward&& forward) {
  oracle::CountingScope scope;
  const int64_t before = scope.live();
  auto out = forward();
  return scope.live() - before;
}

}  // namespace

TEST_CASE("level-1 estimate is linear in the output length") {
  const auto c = desk_first();
  const int64_t e12 = cvg::activation_memory_estimate(c, 12, 8);
  CHECK(cvg::activation_memory_estimate(c, 24, 8) == 2 * e12);
  CHECK(cvg::activation_memory_estimate(c, 48, 8) == 4 * e12);
  CHECK(cvg::activation_memory_estimate(c, 12, 8, 8) == 2 * e12);
}

TEST_CASE("up-level estimate ignores the full sequence length") {
  const auto c = desk_up(cvg::RecurrentKind::separable3d);
  const int64_t a = cvg::activation_memory_estimate(c, 8, 16, 4);
  CHECK(cvg::activation_memory_estimate(c, 8, 48, 4) == a);
  CHECK(cvg::activation_memory_estimate(c, 8, 480, 4) == a);
  auto wider = c;
  wider.window_w = 8;
  CHECK(cvg::activation_memory_estimate(wider, 8, 48, 4) == 2 * a);
}

TEST_CASE("estimate is monotone in length, batch and multipliers") {
  auto c = desk_first();
  int64_t prev = 0;
  for (int64_t t : {1, 2, 5, 9}) {
    const int64_t e = cvg::activation_memory_estimate(c, t, 2);
    CHECK(e >= prev);
    prev = e;
  }
  CHECK(cvg::activation_memory_estimate(c, 4, 3) >= cvg::activation_memory_estimate(c, 4, 2));
  for (size_t i = 0; i < c.multipliers.size(); ++i) {
    auto bigger = c;
    bigger.multipliers[i] += 1;
    CHECK(cvg::activation_memory_estimate(bigger, 4, 2) >= cvg::activation_memory_estimate(c, 4, 2));
  }
  auto u = desk_up(cvg::RecurrentKind::convgru);
  for (size_t i = 0; i < u.multipliers.size(); ++i) {
    auto bigger = u;
    bigger.multipliers[i] += 1;
    CHECK(cvg::activation_memory_estimate(bigger, 8, 8, 2) >= cvg::activation_memory_estimate(u, 8, 8, 2));
  }
}

TEST_CASE("level-1 estimate agrees with the allocator oracle") {
  torch::manual_seed(0);
  const auto c = desk_first();
  cvg::FirstLevelGenerator g(c);
  g->train();
  for (int64_t t : {12, 24, 48}) {
    const int64_t batch = 8;
    auto z = torch::randn({batch, c.d_z});
    auto labels = torch::randint(0, c.num_classes, {batch}, torch::kInt64);
    const int64_t measured = measured_bytes([&] { return g->forward(z, labels, t); });
    const int64_t estimate = cvg::activation_memory_estimate(c, t, batch);
    INFO("T=" << t << " measured=" << measured << " estimate=" << estimate);
    CHECK(std::abs(static_cast<double>(estimate - measured)) <= 0.10 * static_cast<double>(measured));
  }
}

TEST_CASE("up-level estimate agrees with the allocator oracle") {
  for (auto kind : {cvg::RecurrentKind::separable3d, cvg::RecurrentKind::convgru}) {
    torch::manual_seed(1);
    const auto c = desk_up(kind);
    cvg::UpLevelGenerator g(c);
    g->train();
    const int64_t batch = 8;
    auto z = torch::randn({batch, c.d_z});
    auto labels = torch::randint(0, c.num_classes, {batch}, torch::kInt64);
    auto low = torch::rand({batch, c.window_w, 3, 8, 8}) * 2 - 1;
    const int64_t measured = measured_bytes([&] { return g->forward(z, low, labels); });
    const int64_t estimate = cvg::activation_memory_estimate(c, 8, 48, batch);
    INFO(cvg::to_string(kind) << " measured=" << measured << " estimate=" << estimate);
    CHECK(std::abs(static_cast<double>(estimate - measured)) <= 0.10 * static_cast<double>(measured));
  }
}
