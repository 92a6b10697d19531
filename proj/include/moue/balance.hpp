#pragma once

#include <cstdint>
#include <vector>

#include "moue/routing.hpp"
#include "moue/topology.hpp"
#include "moue/types.hpp"

namespace moue {

/// Batch routing statistics for one layer, indexed by global expert ID.
/// dispatch (f-bar) is normalized by tokens*k so it sums to 1 over the
/// reachable set for any k; mean_prob (P-bar) is the batch mean of the
/// masked softmax and also sums to 1.
struct LayerStats {
  Vector dispatch;   // f-bar
  Vector mean_prob;  // P-bar
  std::int64_t token_count = 0;
};

/// Stats for every layer of a model, aligned with ConnectivityMap layers.
struct LoadStats {
  std::vector<LayerStats> layers;
};

/// UELB coefficients (Table-5 defaults) plus optional per-group scale
/// corrections filled by calibrate_alphas (empty means all 1).
struct AlphaConfig {
  double alpha_loc = 1.0;
  double alpha_u = 0.5;
  std::vector<double> group_scale;

  double scale(int group) const {
    if (group_scale.empty()) return 1.0;
    const std::size_t i = static_cast<std::size_t>(group);
    return i < group_scale.size() ? group_scale[i] : group_scale.back();
  }
};

/// Fold one batch of per-token selections and masked-softmax probabilities
/// into LayerStats. Throws on an empty batch.
LayerStats accumulate_stats(const std::vector<Selection>& selections,
                            const std::vector<Vector>& probs, int num_experts, int top_k);

/// Merge batches (weighted by token count) so stats can be accumulated
/// across steps or across the layers of a group.
LayerStats merge_stats(const LayerStats& a, const LayerStats& b);

/// Eq.-2 Switch loss for one layer: N_e * sum_i f_i * P_i over the
/// reachable set; equals 1 for a perfectly uniform router.
double standard_lbl(const LayerStats& stats, const std::vector<int>& reachable);

/// The "applied directly" cross-layer baseline: stats averaged over layers
/// onto global expert identity, then Eq. 2 with N = number of globally
/// reachable experts. Universal experts aggregate mass from every exposure,
/// which is exactly the architecture penalty UELB removes.
double standard_lbl_aggregate(const LoadStats& stats, const ConnectivityMap& map);

/// Connectivity-normalized objective:
///   alpha_loc * sum_l scale(g(l)) * sum_{i local} f P
/// + alpha_u   * sum_j (1/c_j) * sum_l scale(g(l)) * C(j,l) f P.
/// Universal experts with c_j = 0 contribute nothing.
double uelb_loss(const LoadStats& stats, const ConnectivityMap& map, const AlphaConfig& alphas);

/// Universal term without the 1/c_j correction (the "w/o connectivity
/// normalization" ablation); grows linearly in c_j on exposure-neutral
/// stats where uelb_loss stays constant.
double uelb_universal_term(const LoadStats& stats, const ConnectivityMap& map,
                           const AlphaConfig& alphas, bool connectivity_normalized);

/// Scale correction for group-wise estimation: the Switch-style loss of a
/// G-layer group concatenation is G under a uniform router, so every group
/// gets scale 1/G to restore the single-layer baseline of 1.
AlphaConfig calibrate_alphas(int group_layers, int shared_experts, int top_k, AlphaConfig base);

/// max f / mean f over the given dispatch fractions (>= 1, = 1 iff uniform).
double max_mean_ratio(const std::vector<double>& dispatch_fractions);

/// Layer-level convenience: ratio over the layer's reachable set.
double max_mean_ratio(const LayerStats& stats, const std::vector<int>& reachable);

enum class BalanceObjective { standard_lbl, uelb };

/// d(loss)/d(P-bar) per layer per global expert, with f-bar treated as
/// stop-gradient (Switch convention). Feeds the model's analytic backward.
std::vector<Vector> loss_prob_gradient(BalanceObjective objective, const LoadStats& stats,
                                       const ConnectivityMap& map, const AlphaConfig& alphas);

/// Loss under the chosen objective (uelb or cross-layer standard).
double balance_loss(BalanceObjective objective, const LoadStats& stats,
                    const ConnectivityMap& map, const AlphaConfig& alphas);

}  // namespace moue
