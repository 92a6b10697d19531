#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <vector>

#include "moue/rng.hpp"
#include "moue/topology.hpp"

using namespace moue;

namespace {

TopologyConfig make_cfg(int L, int G, int nu, int W, int s, int locals, int k) {
  TopologyConfig cfg;
  cfg.num_layers = L;
  cfg.group_size = G;
  cfg.num_universal = nu;
  cfg.window = W;
  cfg.stride = s;
  cfg.locals_per_layer = locals;
  cfg.top_k = k;
  return cfg;
}

// Exhaustive path enumeration: counts ordered tuples of k-subsets of each
// layer's window.
long long enumerate_paths(const ConnectivityMap& map, int k) {
  long long total = 1;
  for (int l = 0; l < map.num_layers(); ++l) {
    const auto& window = map.window(l);
    std::vector<int> pick(window.size(), 0);
    std::fill(pick.end() - k, pick.end(), 1);
    long long subsets = 0;
    do {
      ++subsets;
    } while (std::next_permutation(pick.begin(), pick.end()));
    total *= subsets;
  }
  return total;
}

}  // namespace

TEST_CASE("staggered windows follow the rotating ring formula") {
  const ConnectivityMap map = build_staggered(make_cfg(4, 2, 6, 3, 1, 1, 2));
  CHECK(map.window(0) == std::vector<int>{0, 1, 2});
  CHECK(map.window(1) == std::vector<int>{0, 1, 2});
  CHECK(map.window(2) == std::vector<int>{1, 2, 3});
  CHECK(map.window(3) == std::vector<int>{1, 2, 3});
}

TEST_CASE("staggered window wraps around the ring") {
  // Layer 2 (1-indexed) sits in group 1; start 1*3 mod 4 = 3: {3, 0, 1}.
  const ConnectivityMap map = build_staggered(make_cfg(2, 1, 4, 3, 3, 1, 2));
  CHECK(map.window(1) == std::vector<int>{0, 1, 3});
}

TEST_CASE("zero stride degenerates to pure window sharing") {
  const ConnectivityMap map = build_staggered(make_cfg(9, 2, 8, 3, 0, 1, 2));
  for (int l = 0; l < 9; ++l) CHECK(map.window(l) == std::vector<int>{0, 1, 2});
  CHECK(map.num_state_groups() == 1);
}

TEST_CASE("window wider than the ring is rejected") {
  CHECK_THROWS_WITH_AS(build_staggered(make_cfg(2, 1, 4, 5, 1, 1, 2)), "window exceeds ring",
                       ConfigError);
}

TEST_CASE("all_to_all reaches the whole ring everywhere") {
  const ConnectivityMap map =
      build_variant(TopologyKind::all_to_all, make_cfg(3, 1, 4, 4, 0, 1, 2));
  for (int l = 0; l < 3; ++l) CHECK(map.window(l) == std::vector<int>{0, 1, 2, 3});
  for (int c : exposure_degrees(map)) CHECK(c == 3);
}

TEST_CASE("reverse_order traverses the ring downward") {
  // Hand enumeration: g=0 descends from 0 -> {0,5,4}; g=1 from -1 -> {5,4,3}.
  const ConnectivityMap map =
      build_variant(TopologyKind::reverse_order, make_cfg(4, 2, 6, 3, 1, 1, 2));
  CHECK(map.window(0) == std::vector<int>{0, 4, 5});
  CHECK(map.window(1) == std::vector<int>{0, 4, 5});
  CHECK(map.window(2) == std::vector<int>{3, 4, 5});
  CHECK(map.window(3) == std::vector<int>{3, 4, 5});
}

TEST_CASE("sandwich shares one window on the outside and one in the middle") {
  const ConnectivityMap map =
      build_variant(TopologyKind::sandwich, make_cfg(6, 2, 6, 3, 1, 1, 2));
  // Three groups; 0 and 2 share window A = {0,1,2}, group 1 gets A shifted
  // by s: {1,2,3}. Two distinct windows among the three group masks.
  CHECK(map.window(0) == map.window(5));
  CHECK(map.window(0) == std::vector<int>{0, 1, 2});
  CHECK(map.window(2) == std::vector<int>{1, 2, 3});
  std::set<std::vector<int>> distinct;
  for (int l = 0; l < 6; ++l) distinct.insert(map.window(l));
  CHECK(distinct.size() == 2);
  CHECK(map.num_groups() == 3);
}

TEST_CASE("forward_window shifts once per layer") {
  const ConnectivityMap map =
      build_variant(TopologyKind::forward_window, make_cfg(4, 2, 6, 2, 1, 1, 2));
  CHECK(map.window(0) == std::vector<int>{0, 1});
  CHECK(map.window(1) == std::vector<int>{1, 2});
  CHECK(map.window(2) == std::vector<int>{2, 3});
  CHECK(map.window(3) == std::vector<int>{3, 4});
}

TEST_CASE("exposure degrees count layers per universal expert") {
  const ConnectivityMap map = build_staggered(make_cfg(4, 2, 6, 3, 1, 1, 2));
  CHECK(exposure_degrees(map) == std::vector<int>{2, 4, 4, 2, 0, 0});

  const ConnectivityMap full = build_staggered(make_cfg(5, 2, 4, 4, 3, 1, 2));
  CHECK(exposure_degrees(full) == std::vector<int>{5, 5, 5, 5});
}

TEST_CASE("path_count_log equals the product form") {
  const ConnectivityMap a2a =
      build_variant(TopologyKind::all_to_all, make_cfg(3, 1, 4, 4, 0, 1, 2));
  CHECK(path_count_log(a2a, 2) == doctest::Approx(std::log(216.0)).epsilon(1e-13));

  const ConnectivityMap stag = build_staggered(make_cfg(5, 1, 6, 3, 1, 1, 2));
  CHECK(path_count_log(stag, 2) == doctest::Approx(std::log(243.0)).epsilon(1e-13));

  CHECK_THROWS_AS(path_count_log(stag, 4), std::invalid_argument);
}

TEST_CASE("path_count_log matches exhaustive enumeration") {
  const ConnectivityMap map = build_staggered(make_cfg(2, 1, 5, 5, 2, 1, 2));
  CHECK(enumerate_paths(map, 2) == 100);
  CHECK(std::llround(std::exp(path_count_log(map, 2))) == 100);

  SplitMix64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int L = 1 + rng.next_below(3);
    const int W = 1 + rng.next_below(5);
    const int k = 1 + rng.next_below(std::min(W, 2));
    const int nu = W + rng.next_below(4);
    const ConnectivityMap m =
        build_staggered(make_cfg(L, 1 + rng.next_below(3), nu, W, rng.next_below(4), 1, k));
    CHECK(std::llround(std::exp(path_count_log(m, k))) == enumerate_paths(m, k));
  }
}

TEST_CASE("staggered ring-difference and allow-list properties") {
  SplitMix64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const int nu = 2 + rng.next_below(31);
    const int W = 1 + rng.next_below(nu);
    const int L = 1 + rng.next_below(24);
    const int G = 1 + rng.next_below(6);
    const int s = rng.next_below(2 * nu);
    const int locals = rng.next_below(3);
    const TopologyConfig cfg = make_cfg(L, G, nu, W, s, locals, 1);
    const ConnectivityMap map = build_staggered(cfg);

    for (int l = 0; l < L; ++l) {
      CHECK(static_cast<int>(map.allow_list(l).size()) == locals + W);
      CHECK(map.window(l) == map.window((l / G) * G));  // set-equal within a group
    }

    // |window(g) \ window(g+1)| = min(s', W) while the shifted window does
    // not wrap back into the old one (s' <= N_u - W).
    const int s_eff = s % nu;
    if (s_eff <= nu - W && L > G) {
      const std::set<int> a(map.window(0).begin(), map.window(0).end());
      const std::set<int> b(map.window(G).begin(), map.window(G).end());
      std::vector<int> diff;
      std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(diff));
      CHECK(static_cast<int>(diff.size()) == std::min(s_eff, W));
    }
  }
}

TEST_CASE("parameter budget ordering and exposure accounting") {
  // Hand count for d=8, ffn=16, d_k=4, vocab=16, L=4, locals=2, N_u=4, W=4,
  // k=2:
  //   per_expert = 2*8*16 = 256
  //   router     = 8*6 + 6 + 8*4 = 86 per layer -> 344
  //   non_expert = 2*16*8 + 344 = 600
  //   activated  = 600 + 4*2*256 = 2648
  //   physical   = 600 + (4*2+4)*256 = 3672
  //   virtual    = 600 + 8*256 + (4+4+4+4)*256 = 6744   (W = N_u: c_j = 4)
  const ModelDims dims{8, 16, 4, 16};
  const ConnectivityMap map = build_staggered(make_cfg(4, 2, 4, 4, 1, 2, 2));
  const ParameterBudget b = parameter_budget(dims, map);
  CHECK(b.activated == 2648);
  CHECK(b.total_physical == 3672);
  CHECK(b.virtual_params == 6744);

  // Widening the window only grows virtual capacity.
  const ConnectivityMap narrow = build_staggered(make_cfg(4, 2, 8, 2, 1, 2, 2));
  const ConnectivityMap wide = build_staggered(make_cfg(4, 2, 8, 4, 1, 2, 2));
  const ParameterBudget bn = parameter_budget(dims, narrow);
  const ParameterBudget bw = parameter_budget(dims, wide);
  CHECK(bn.activated == bw.activated);
  CHECK(bn.total_physical == bw.total_physical);
  CHECK(bw.virtual_params > bn.virtual_params);

  // Single-exposure pools collapse virtual onto physical.
  const ConnectivityMap single = build_staggered(make_cfg(1, 1, 6, 3, 1, 2, 2));
  const ParameterBudget bs = parameter_budget(dims, single);
  CHECK(bs.virtual_params == bs.total_physical);

  SplitMix64 rng(23);
  for (int trial = 0; trial < 1000; ++trial) {
    const int nu = 1 + rng.next_below(16);
    const int W = 1 + rng.next_below(nu);
    const int L = 1 + rng.next_below(12);
    const int locals = 1 + rng.next_below(4);
    // Activation budget within physical storage: k <= locals + N_u / L.
    const int k_max = std::min(W + locals, locals + nu / L);
    const int k = 1 + rng.next_below(std::max(1, k_max));
    const ConnectivityMap m = build_staggered(
        make_cfg(L, 1 + rng.next_below(4), nu, W, rng.next_below(nu + 2), locals, k));
    const ParameterBudget budget = parameter_budget(dims, m);
    CHECK(budget.activated <= budget.total_physical);
    CHECK(budget.total_physical <= budget.virtual_params);
    const auto degrees = exposure_degrees(m);
    const bool single_exposure =
        std::all_of(degrees.begin(), degrees.end(), [](int c) { return c <= 1; });
    CHECK((budget.virtual_params == budget.total_physical) == single_exposure);
  }
}

TEST_CASE("connectivity CSV layout") {
  const ConnectivityMap map = build_staggered(make_cfg(2, 1, 3, 2, 1, 1, 2));
  std::ostringstream os;
  map.write_csv(os);
  CHECK(os.str() ==
        "layer,0,1,2,3,4\n"
        "1,1,0,1,1,0\n"
        "2,0,1,0,1,1\n");
}

TEST_CASE("topology kind round-trips through strings") {
  for (TopologyKind kind :
       {TopologyKind::staggered, TopologyKind::forward_window, TopologyKind::reverse_order,
        TopologyKind::sandwich, TopologyKind::all_to_all}) {
    CHECK(topology_kind_from_string(to_string(kind)) == kind);
  }
  CHECK_THROWS_AS(topology_kind_from_string("ring"), ConfigError);
}
