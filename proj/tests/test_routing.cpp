#include <doctest.h>

#include <cmath>
#include <vector>

#include "moue/numerics.hpp"
#include "moue/rng.hpp"
#include "moue/routing.hpp"

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

RouterParams random_router(int dim, int cols, int d_k, double beta, SplitMix64& rng) {
  RouterParams p;
  p.w_gate.resize(dim, cols);
  for (Eigen::Index i = 0; i < p.w_gate.size(); ++i) p.w_gate.data()[i] = rng.next_normal();
  p.b_gate = Vector::Zero(cols);
  p.w_key.resize(dim, d_k);
  for (Eigen::Index i = 0; i < p.w_key.size(); ++i) p.w_key.data()[i] = rng.next_normal();
  p.beta = beta;
  return p;
}

Vector random_vec(int n, SplitMix64& rng) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.next_normal();
  return v;
}

// Mean cross entropy between row_softmax(K U^T) and p_star; the update must
// equal one gradient step on this.
double fast_weight_loss(const Matrix& u, const Matrix& keys, const Matrix& p_star) {
  double loss = 0.0;
  for (Eigen::Index r = 0; r < keys.rows(); ++r) {
    Vector scores = u * keys.row(r).transpose();
    const double mx = scores.maxCoeff();
    const double lse = std::log((scores.array() - mx).exp().sum()) + mx;
    for (Eigen::Index j = 0; j < scores.size(); ++j) {
      loss -= p_star(r, j) * (scores[j] - lse);
    }
  }
  return loss / static_cast<double>(keys.rows());
}

}  // namespace

TEST_CASE("schedule values anneal linearly") {
  const BiasSchedule suppress{BiasSchedule::Kind::suppression, 1e4, 0.5};
  CHECK(schedule_value(suppress, 0.0) == 1e4);
  CHECK(schedule_value(suppress, 0.25) == doctest::Approx(5e3));
  CHECK(schedule_value(suppress, 0.5) == 0.0);
  CHECK(schedule_value(suppress, 0.9) == 0.0);
  double prev = schedule_value(suppress, 0.0);
  for (double t = 0.05; t <= 1.0; t += 0.05) {
    const double v = schedule_value(suppress, t);
    CHECK(v <= prev);
    prev = v;
  }

  const BiasSchedule warmup{BiasSchedule::Kind::warmup, 0.75, 0.05};
  CHECK(schedule_value(warmup, 0.05) == 0.0);
  CHECK(schedule_value(warmup, 0.025) == doctest::Approx(0.375));
  CHECK(schedule_value(warmup, 0.0) == 0.75);
  CHECK(warmup.logit_delta(0.0) == 0.75);
  CHECK(suppress.logit_delta(0.0) == -1e4);
}

TEST_CASE("compute_logits with beta 0 is the plain affine router") {
  SplitMix64 rng(5);
  const ConnectivityMap map = build_staggered(make_cfg(4, 2, 6, 3, 1, 2, 2));
  const int dim = 8;
  RouterParams router = random_router(dim, 2 + 6, dim, 0.0, rng);
  FastWeightState state;
  state.u = Matrix::Zero(3, dim);
  const Vector h = random_vec(dim, rng);

  const int layer = 2;
  const Vector z = compute_logits(h, layer, router, state, map, {}, 0.0);
  const Vector semantic = router.w_gate.transpose() * h + router.b_gate;
  for (int e = 0; e < map.num_experts(); ++e) {
    if (!map.reachable(e, layer)) {
      CHECK(z[e] == kNegInf);
    } else if (e < map.universal_base()) {
      CHECK(z[e] == semantic[e - map.local_block_begin(layer)]);
    } else {
      CHECK(z[e] == semantic[2 + (e - map.universal_base())]);
    }
  }

  // A zero state makes the contextual term exactly zero even with beta on.
  router.beta = 0.7;
  const Vector z2 = compute_logits(h, layer, router, state, map, {}, 0.0);
  for (int e = 0; e < map.num_experts(); ++e) CHECK(z2[e] == z[e]);
}

TEST_CASE("contextual pathway adds the keyed similarity") {
  SplitMix64 rng(9);
  const ConnectivityMap map = build_staggered(make_cfg(2, 1, 4, 2, 1, 1, 2));
  const int dim = 6;
  const int d_k = 3;
  RouterParams router = random_router(dim, 1 + 4, d_k, 0.25, rng);
  FastWeightState state;
  state.u.resize(2, d_k);
  for (Eigen::Index i = 0; i < state.u.size(); ++i) state.u.data()[i] = rng.next_normal();
  const Vector h = random_vec(dim, rng);

  const Vector z = compute_logits(h, 0, router, state, map, {}, 0.0);
  const Vector key = router.w_key.transpose() * h;
  const Vector semantic = router.w_gate.transpose() * h + router.b_gate;
  const auto& window = map.window(0);
  for (std::size_t slot = 0; slot < window.size(); ++slot) {
    const int id = map.universal_global_id(window[slot]);
    const double expected = semantic[1 + window[slot]] +
                            0.25 * state.u.row(static_cast<Eigen::Index>(slot)).dot(key);
    CHECK(z[id] == doctest::Approx(expected).epsilon(1e-15));
  }

  FastWeightState wrong;
  wrong.u = Matrix::Zero(3, d_k);
  CHECK_THROWS_AS(compute_logits(h, 0, router, wrong, map, {}, 0.0), std::runtime_error);
}

TEST_CASE("suppression bias drives universal mass to zero") {
  SplitMix64 rng(13);
  const ConnectivityMap map = build_staggered(make_cfg(2, 2, 4, 4, 0, 2, 2));
  const int dim = 8;
  RouterParams router = random_router(dim, 2 + 4, 4, 0.1, rng);
  FastWeightState state;
  state.u = Matrix::Zero(4, 4);
  const std::vector<BiasSchedule> schedules{{BiasSchedule::Kind::suppression, 1e4, 0.5}};

  double max_universal_mass = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Vector h = random_vec(dim, rng);
    const Vector z = compute_logits(h, 0, router, state, map, schedules, 0.0);
    const Vector p = softmax_neg_inf(z);
    for (int pos = 0; pos < 4; ++pos) {
      max_universal_mass = std::max(max_universal_mass, p[map.universal_global_id(pos)]);
    }
  }
  CHECK(max_universal_mass < 1e-40);
}

TEST_CASE("select_experts renormalizes over the selected set") {
  Vector two(5);
  two << kNegInf, 1.5, kNegInf, 1.5, kNegInf;
  const Selection sel = select_experts(two, 2);
  CHECK(sel.expert_ids == std::vector<int>{1, 3});
  CHECK(sel.gates[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sel.gates[1] == doctest::Approx(0.5).epsilon(1e-15));

  Vector three(3);
  three << std::log(6.0), std::log(3.0), 0.0;
  const Selection top2 = select_experts(three, 2);
  CHECK(top2.expert_ids == std::vector<int>{0, 1});
  CHECK(top2.gates[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(top2.gates[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

  // k equal to the reachable count degenerates to the masked softmax.
  const Selection all = select_experts(three, 3);
  const Vector p = softmax_neg_inf(three);
  for (int i = 0; i < 3; ++i) {
    CHECK(all.gates[i] == doctest::Approx(p[all.expert_ids[static_cast<std::size_t>(i)]])
                              .epsilon(1e-14));
  }
  CHECK_THROWS_AS(select_experts(two, 3), std::invalid_argument);
}

TEST_CASE("fast_weight_update fixed points") {
  SplitMix64 rng(21);
  FastWeightState state;
  state.u.resize(3, 2);
  for (Eigen::Index i = 0; i < state.u.size(); ++i) state.u.data()[i] = rng.next_normal();
  const Matrix u0 = state.u;

  Matrix keys(4, 2);
  for (Eigen::Index i = 0; i < keys.size(); ++i) keys.data()[i] = rng.next_normal();

  // p_star equal to the current prediction leaves the state unchanged.
  Matrix p_hat(4, 3);
  for (Eigen::Index r = 0; r < 4; ++r) {
    Vector scores = state.u * keys.row(r).transpose();
    const double mx = scores.maxCoeff();
    Vector e = (scores.array() - mx).exp();
    p_hat.row(r) = (e / e.sum()).transpose();
  }
  fast_weight_update(state, keys, p_hat, 0.5);
  CHECK((state.u - u0).cwiseAbs().maxCoeff() < 1e-15);

  // Zero learning rate is the identity.
  Matrix p_star = Matrix::Zero(4, 3);
  p_star.col(0).setOnes();
  fast_weight_update(state, keys, p_star, 0.0);
  CHECK((state.u - u0).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(fast_weight_update(state, keys, Matrix::Zero(4, 2), 0.1),
                  std::invalid_argument);
}

TEST_CASE("fast_weight_update one-step hand example") {
  // Single token, d_k=1: U=[0,0]^T, K=[1], p*=[1,0], eta=1
  //   p_hat=[0.5,0.5], delta=[-0.5,0.5], U <- [0.5,-0.5]^T.
  FastWeightState state;
  state.u = Matrix::Zero(2, 1);
  Matrix keys(1, 1);
  keys << 1.0;
  Matrix p_star(1, 2);
  p_star << 1.0, 0.0;
  fast_weight_update(state, keys, p_star, 1.0);
  CHECK(state.u(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(state.u(1, 0) == doctest::Approx(-0.5).epsilon(1e-15));
}

TEST_CASE("fast_weight_update equals a gradient step on mean cross entropy") {
  SplitMix64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const int n_tok = 1 + rng.next_below(8);
    const int d_k = 1 + rng.next_below(4);
    const int n_u = 2 + rng.next_below(4);
    FastWeightState state;
    state.u.resize(n_u, d_k);
    for (Eigen::Index i = 0; i < state.u.size(); ++i) state.u.data()[i] = rng.next_normal();
    Matrix keys(n_tok, d_k);
    for (Eigen::Index i = 0; i < keys.size(); ++i) keys.data()[i] = rng.next_normal();
    Matrix p_star(n_tok, n_u);
    for (Eigen::Index r = 0; r < n_tok; ++r) {
      double sum = 0.0;
      for (Eigen::Index j = 0; j < n_u; ++j) {
        p_star(r, j) = rng.next_double() + 1e-3;
        sum += p_star(r, j);
      }
      p_star.row(r) /= sum;
    }

    const Matrix u0 = state.u;
    const double eta = 0.37;
    fast_weight_update(state, keys, p_star, eta);
    const Matrix analytic_grad = (u0 - state.u) / eta;

    const double eps = 1e-6;
    double max_rel = 0.0;
    Matrix u_probe = u0;
    for (Eigen::Index i = 0; i < u_probe.size(); ++i) {
      const double saved = u_probe.data()[i];
      u_probe.data()[i] = saved + eps;
      const double plus = fast_weight_loss(u_probe, keys, p_star);
      u_probe.data()[i] = saved - eps;
      const double minus = fast_weight_loss(u_probe, keys, p_star);
      u_probe.data()[i] = saved;
      const double fd = (plus - minus) / (2.0 * eps);
      const double a = analytic_grad.data()[i];
      max_rel = std::max(max_rel, std::abs(a - fd) / (std::abs(a) + std::abs(fd) + 1e-10));
    }
    CHECK(max_rel < 1e-5);
  }
}

TEST_CASE("random routing never selects unreachable experts") {
  SplitMix64 rng(41);
  for (int trial = 0; trial < 10000; ++trial) {
    const int nu = 1 + rng.next_below(8);
    const int W = 1 + rng.next_below(nu);
    const int locals = rng.next_below(3);
    const int k_max = W + locals;
    const int k = 1 + rng.next_below(k_max);
    const int L = 1 + rng.next_below(6);
    const ConnectivityMap map = build_staggered(
        make_cfg(L, 1 + rng.next_below(3), nu, W, rng.next_below(nu + 1), locals, k));
    const int dim = 4;
    RouterParams router = random_router(dim, locals + nu, 2, 0.1, rng);
    const int layer = rng.next_below(L);
    FastWeightState state;
    state.u.resize(W, 2);
    for (Eigen::Index i = 0; i < state.u.size(); ++i) state.u.data()[i] = rng.next_normal();

    const Vector h = random_vec(dim, rng);
    const Vector z = compute_logits(h, layer, router, state, map, {}, 0.0);
    const Selection sel = select_experts(z, k);
    for (int id : sel.expert_ids) CHECK(map.reachable(id, layer));
    CHECK(std::abs(sel.gates.sum() - 1.0) <= 1e-10);
    for (int i = 0; i < k; ++i) CHECK(sel.gates[i] > 0.0);
  }
}
