#pragma once

#include <utility>
#include <vector>

#include "moue/checkpoint.hpp"
#include "moue/model.hpp"

namespace moue {

/// Model <-> checkpoint binding. Metadata carries the topology, model dims,
/// router beta and (for converted models) the suppression schedule; tensors
/// are named embedding / readout / layer<i>.local<j>.{up,down} /
/// layer<i>.router.{w_gate,b_gate,w_key} / universal<p>.{up,down} /
/// state<g>.u.
Checkpoint save_checkpoint(const MoueModel& model);
MoueModel load_checkpoint(const Checkpoint& ckpt);

/// Per-layer, per-local-expert activation rates over a calibration batch
/// (k-normalized dispatch fractions; each layer's rates sum to 1).
struct ActivationProfile {
  Matrix rates;  // layers x locals_per_layer
};

ActivationProfile collect_activation_profile(const MoueModel& moe_model,
                                             const Eigen::Ref<const IntMatrix>& calibration);

/// Top n_u (layer, expert) sources by activation rate inside the
/// intermediate band [band_lo, band_hi) of layer indices; ties break
/// lexicographically on (layer, expert). Throws on an empty band or when
/// the band holds fewer than n_u experts.
std::vector<std::pair<int, int>> select_universal_experts(const ActivationProfile& profile,
                                                          int n_u, int band_lo, int band_hi);

struct ConvertOptions {
  TopologyConfig topo;                      // target topology (num_universal = pool size)
  TopologyKind variant = TopologyKind::staggered;
  bool keep_sources = true;                 // clone, don't move
  double router_noise = 1e-3;               // scale of seeded init noise on W_r^u
  std::uint64_t seed = 0;
  double suppress_beta0 = 1e4;
  double suppress_t_end = 0.5;
};

/// MoE -> MoUE conversion: clones the selected experts into the universal
/// pool, preserves every per-layer local router column byte-identically,
/// appends universal router columns initialized from each clone's source
/// column plus small seeded noise, and writes the suppression schedule into
/// metadata. Rejects sources that already carry a universal pool.
Checkpoint convert_to_moue(const Checkpoint& moe_ckpt,
                           const std::vector<std::pair<int, int>>& selection,
                           const ConvertOptions& opts);

/// Linear CKA between two experts' weights: each expert's [up ; down^T] is
/// a d x 2*ffn feature matrix, column-centered;
/// cka = |X^T Y|_F^2 / (|X^T X|_F * |Y^T Y|_F). In [0, 1]; 1 on identical
/// (or orthogonally transformed / scaled) weights. Throws on zero weights.
double cka_similarity(const ExpertParams& a, const ExpertParams& b);

}  // namespace moue
