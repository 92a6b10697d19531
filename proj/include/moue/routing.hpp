#pragma once

#include <vector>

#include "moue/topology.hpp"
#include "moue/types.hpp"

namespace moue {

/// Per-layer router parameters. Columns of w_gate / b_gate cover the
/// layer's own local block first, then the full universal ring, so the
/// same storage serves every topology variant (only reachable columns are
/// ever scored).
struct RouterParams {
  Matrix w_gate;  // d x (locals + N_u)
  Vector b_gate;  // locals + N_u
  Matrix w_key;   // d x d_k
  double beta = 0.1;  // contextual pathway weight (hyperparameter, not trained)
};

/// Fast weights for one state group (one per distinct allow-list). Row r
/// corresponds to the r-th ring position of the window in ascending order.
struct FastWeightState {
  Matrix u;          // window_size x d_k
  double eta = 0.1;  // online update learning rate
};

/// Time-dependent logit bias on the universal branch.
///  - suppression: beta0 * max(0, 1 - t/horizon), subtracted (Eq.-9 style
///    warm-start curriculum; beta0 ~ 1e4 preserves source behavior at t=0).
///  - warmup: b0 * max(0, 1 - t/horizon), added (exploration boost,
///    b(t) = ln rho(t)).
struct BiasSchedule {
  enum class Kind { suppression, warmup };
  Kind kind = Kind::warmup;
  double initial = 0.0;  // beta0 / b0
  double horizon = 1.0;  // t_end / r, as a fraction of training

  double value_at(double t) const;

  /// Signed contribution to a universal logit at progress t.
  double logit_delta(double t) const {
    return kind == Kind::suppression ? -value_at(t) : value_at(t);
  }
};

double schedule_value(const BiasSchedule& s, double t);

/// Top-k routing outcome for one token. Gates are the masked-softmax
/// probabilities renormalized over the selected set; they sum to 1.
struct Selection {
  std::vector<int> expert_ids;  // global IDs, descending logit order
  Vector gates;
};

/// Dual-pathway routing logits over the global expert space; unreachable
/// experts are exactly -inf. Reachable logits:
///   local i:      h.W_g[:,i] + b_g[i]
///   universal p:  h.W_g[:,locals+p] + b_g[locals+p]
///                 + beta * <u_row(p), h.W_k>  + schedule deltas
/// Throws if the state's row count does not match the layer's window.
Vector compute_logits(const Eigen::Ref<const Vector>& h, int layer, const RouterParams& params,
                      const FastWeightState& state, const ConnectivityMap& map,
                      const std::vector<BiasSchedule>& schedules, double t);

/// Top-k by logit (ties to the lowest global ID), gates per Eq.-1
/// renormalization. Throws when fewer than k finite logits exist.
Selection select_experts(const Eigen::Ref<const Vector>& logits, int k);

/// One forward-only fast-weight step (no autograd):
///   p_hat = row_softmax(K U^T); U -= eta * (p_hat - p_star)^T K / N_tok.
/// Rows of p_star must be probability vectors.
void fast_weight_update(FastWeightState& state, const Eigen::Ref<const Matrix>& keys,
                        const Eigen::Ref<const Matrix>& p_star, double eta);

}  // namespace moue
