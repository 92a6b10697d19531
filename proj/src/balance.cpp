#include "moue/balance.hpp"

#include <cmath>
#include <stdexcept>

namespace moue {

LayerStats accumulate_stats(const std::vector<Selection>& selections,
                            const std::vector<Vector>& probs, int num_experts, int top_k) {
  if (selections.empty() || selections.size() != probs.size()) {
    throw std::invalid_argument("accumulate_stats: empty batch");
  }
  LayerStats stats;
  stats.dispatch = Vector::Zero(num_experts);
  stats.mean_prob = Vector::Zero(num_experts);
  stats.token_count = static_cast<std::int64_t>(selections.size());
  for (std::size_t t = 0; t < selections.size(); ++t) {
    for (int id : selections[t].expert_ids) stats.dispatch[id] += 1.0;
    stats.mean_prob += probs[t];
  }
  stats.dispatch /= static_cast<double>(stats.token_count) * top_k;
  stats.mean_prob /= static_cast<double>(stats.token_count);
  return stats;
}

LayerStats merge_stats(const LayerStats& a, const LayerStats& b) {
  if (a.token_count == 0) return b;
  if (b.token_count == 0) return a;
  LayerStats out;
  const double na = static_cast<double>(a.token_count);
  const double nb = static_cast<double>(b.token_count);
  out.token_count = a.token_count + b.token_count;
  out.dispatch = (na * a.dispatch + nb * b.dispatch) / (na + nb);
  out.mean_prob = (na * a.mean_prob + nb * b.mean_prob) / (na + nb);
  return out;
}

double standard_lbl(const LayerStats& stats, const std::vector<int>& reachable) {
  double dot = 0.0;
  for (int id : reachable) dot += stats.dispatch[id] * stats.mean_prob[id];
  return static_cast<double>(reachable.size()) * dot;
}

namespace {

// Average per-layer stats onto global expert identity. Every layer carries
// equal weight; experts reachable from several layers aggregate the mass of
// all their exposures.
LayerStats aggregate_over_layers(const LoadStats& stats, const ConnectivityMap& map) {
  LayerStats agg;
  agg.dispatch = Vector::Zero(map.num_experts());
  agg.mean_prob = Vector::Zero(map.num_experts());
  for (const auto& layer : stats.layers) {
    agg.dispatch += layer.dispatch;
    agg.mean_prob += layer.mean_prob;
    agg.token_count += layer.token_count;
  }
  const double n_layers = static_cast<double>(stats.layers.size());
  agg.dispatch /= n_layers;
  agg.mean_prob /= n_layers;
  return agg;
}

std::vector<int> globally_reachable(const ConnectivityMap& map) {
  std::vector<int> ids;
  for (int e = 0; e < map.num_experts(); ++e) {
    for (int l = 0; l < map.num_layers(); ++l) {
      if (map.reachable(e, l)) {
        ids.push_back(e);
        break;
      }
    }
  }
  return ids;
}

}  // namespace

double standard_lbl_aggregate(const LoadStats& stats, const ConnectivityMap& map) {
  return standard_lbl(aggregate_over_layers(stats, map), globally_reachable(map));
}

double uelb_universal_term(const LoadStats& stats, const ConnectivityMap& map,
                           const AlphaConfig& alphas, bool connectivity_normalized) {
  const std::vector<int> degrees = exposure_degrees(map);
  double term = 0.0;
  for (int p = 0; p < map.num_universal(); ++p) {
    if (degrees[static_cast<std::size_t>(p)] == 0) continue;
    const int id = map.universal_global_id(p);
    double inner = 0.0;
    for (int l = 0; l < map.num_layers(); ++l) {
      if (!map.reachable(id, l)) continue;
      const auto& ls = stats.layers[static_cast<std::size_t>(l)];
      inner += alphas.scale(map.group_of(l)) * ls.dispatch[id] * ls.mean_prob[id];
    }
    if (connectivity_normalized) inner /= degrees[static_cast<std::size_t>(p)];
    term += inner;
  }
  return alphas.alpha_u * term;
}

double uelb_loss(const LoadStats& stats, const ConnectivityMap& map, const AlphaConfig& alphas) {
  double local_term = 0.0;
  for (int l = 0; l < map.num_layers(); ++l) {
    const auto& ls = stats.layers[static_cast<std::size_t>(l)];
    const int base = map.local_block_begin(l);
    double layer_sum = 0.0;
    for (int c = 0; c < map.locals_per_layer(); ++c) {
      layer_sum += ls.dispatch[base + c] * ls.mean_prob[base + c];
    }
    local_term += alphas.scale(map.group_of(l)) * layer_sum;
  }
  return alphas.alpha_loc * local_term +
         uelb_universal_term(stats, map, alphas, /*connectivity_normalized=*/true);
}

AlphaConfig calibrate_alphas(int group_layers, int shared_experts, int top_k, AlphaConfig base) {
  (void)shared_experts;
  (void)top_k;
  if (group_layers < 1) throw std::invalid_argument("calibrate_alphas: group_layers must be >= 1");
  base.group_scale.assign(1, 1.0 / static_cast<double>(group_layers));
  return base;
}

double max_mean_ratio(const std::vector<double>& dispatch_fractions) {
  if (dispatch_fractions.empty()) {
    throw std::invalid_argument("max_mean_ratio: empty stats");
  }
  double mx = 0.0;
  double sum = 0.0;
  for (double f : dispatch_fractions) {
    mx = std::max(mx, f);
    sum += f;
  }
  const double mean = sum / static_cast<double>(dispatch_fractions.size());
  if (mean == 0.0) return 1.0;  // nothing dispatched: treat as flat
  return mx / mean;
}

double max_mean_ratio(const LayerStats& stats, const std::vector<int>& reachable) {
  std::vector<double> fractions;
  fractions.reserve(reachable.size());
  for (int id : reachable) fractions.push_back(stats.dispatch[id]);
  return max_mean_ratio(fractions);
}

double balance_loss(BalanceObjective objective, const LoadStats& stats,
                    const ConnectivityMap& map, const AlphaConfig& alphas) {
  return objective == BalanceObjective::uelb ? uelb_loss(stats, map, alphas)
                                             : standard_lbl_aggregate(stats, map);
}

std::vector<Vector> loss_prob_gradient(BalanceObjective objective, const LoadStats& stats,
                                       const ConnectivityMap& map, const AlphaConfig& alphas) {
  const int n_layers = map.num_layers();
  std::vector<Vector> grads(static_cast<std::size_t>(n_layers),
                            Vector::Zero(map.num_experts()));
  if (objective == BalanceObjective::uelb) {
    const std::vector<int> degrees = exposure_degrees(map);
    for (int l = 0; l < n_layers; ++l) {
      const auto& ls = stats.layers[static_cast<std::size_t>(l)];
      auto& g = grads[static_cast<std::size_t>(l)];
      const double sc = alphas.scale(map.group_of(l));
      const int base = map.local_block_begin(l);
      for (int c = 0; c < map.locals_per_layer(); ++c) {
        g[base + c] = alphas.alpha_loc * sc * ls.dispatch[base + c];
      }
      for (int p : map.window(l)) {
        const int id = map.universal_global_id(p);
        g[id] = alphas.alpha_u * sc * ls.dispatch[id] / degrees[static_cast<std::size_t>(p)];
      }
    }
  } else {
    const LayerStats agg = aggregate_over_layers(stats, map);
    const std::vector<int> reach = globally_reachable(map);
    const double n_reach = static_cast<double>(reach.size());
    const double inv_layers = 1.0 / static_cast<double>(n_layers);
    for (int l = 0; l < n_layers; ++l) {
      auto& g = grads[static_cast<std::size_t>(l)];
      for (int id : map.allow_list(l)) {
        g[id] = n_reach * agg.dispatch[id] * inv_layers;
      }
    }
  }
  return grads;
}

}  // namespace moue
