#include "moue/routing.hpp"

#include <cmath>

#include "moue/numerics.hpp"

namespace moue {

double BiasSchedule::value_at(double t) const {
  if (horizon <= 0.0) return 0.0;
  return initial * std::max(0.0, 1.0 - t / horizon);
}

double schedule_value(const BiasSchedule& s, double t) { return s.value_at(t); }

Vector compute_logits(const Eigen::Ref<const Vector>& h, int layer, const RouterParams& params,
                      const FastWeightState& state, const ConnectivityMap& map,
                      const std::vector<BiasSchedule>& schedules, double t) {
  const int locals = map.locals_per_layer();
  const auto& window = map.window(layer);
  if (state.u.rows() != static_cast<Eigen::Index>(window.size())) {
    throw std::runtime_error("missing fast-weight state for layer group");
  }
  double universal_delta = 0.0;
  for (const auto& s : schedules) universal_delta += s.logit_delta(t);

  Vector semantic = params.w_gate.transpose() * h + params.b_gate;
  Vector key;
  if (!window.empty() && params.beta != 0.0) key = params.w_key.transpose() * h;

  Vector z = Vector::Constant(map.num_experts(), kNegInf);
  const int base = map.local_block_begin(layer);
  for (int c = 0; c < locals; ++c) z[base + c] = semantic[c];
  for (std::size_t slot = 0; slot < window.size(); ++slot) {
    const int p = window[slot];
    double zi = semantic[locals + p] + universal_delta;
    if (params.beta != 0.0) {
      zi += params.beta * state.u.row(static_cast<Eigen::Index>(slot)).dot(key);
    }
    z[map.universal_global_id(p)] = zi;
  }
  return z;
}

Selection select_experts(const Eigen::Ref<const Vector>& logits, int k) {
  Selection sel;
  sel.expert_ids = top_k_select(logits, k);
  const Vector probs = softmax_neg_inf(logits);
  sel.gates.resize(k);
  double mass = 0.0;
  for (int i = 0; i < k; ++i) {
    sel.gates[i] = probs[sel.expert_ids[static_cast<std::size_t>(i)]];
    mass += sel.gates[i];
  }
  sel.gates /= mass;
  return sel;
}

void fast_weight_update(FastWeightState& state, const Eigen::Ref<const Matrix>& keys,
                        const Eigen::Ref<const Matrix>& p_star, double eta) {
  const Eigen::Index n_tok = keys.rows();
  if (p_star.rows() != n_tok || p_star.cols() != state.u.rows() ||
      keys.cols() != state.u.cols()) {
    throw std::invalid_argument("fast_weight_update: dimension mismatch");
  }
  if (n_tok == 0 || eta == 0.0) return;
  Matrix scores = keys * state.u.transpose();  // n_tok x n_universal
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double mx = scores.row(r).maxCoeff();
    scores.row(r) = (scores.row(r).array() - mx).exp();
    scores.row(r) /= scores.row(r).sum();
  }
  scores -= p_star;  // delta = p_hat - p_star
  state.u.noalias() -= (eta / static_cast<double>(n_tok)) * scores.transpose() * keys;
}

}  // namespace moue
