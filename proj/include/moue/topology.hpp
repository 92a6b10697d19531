#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "moue/types.hpp"

namespace moue {

/// Connectivity hyperparameters. Layers are 1-indexed in the group formula
/// g(l) = floor((l-1)/G); internally everything below uses 0-based layers,
/// which makes the same formula g = l0 / G.
struct TopologyConfig {
  int num_layers = 0;       // L
  int group_size = 5;       // G, layers sharing one universal mask
  int num_universal = 0;    // N_u, size of the shared ring
  int window = 0;           // W, reachable universal experts per layer
  int stride = 0;           // s, ring shift per connectivity group
  int locals_per_layer = 0;
  int top_k = 0;            // k

  /// Throws ConfigError if any invariant (1 <= W <= N_u when N_u > 0,
  /// 1 <= G, s >= 0, k <= W + locals_per_layer, counts >= 0) is violated.
  void validate() const;
};

enum class TopologyKind {
  staggered,
  forward_window,
  reverse_order,
  sandwich,
  all_to_all,
};

TopologyKind topology_kind_from_string(const std::string& name);
std::string to_string(TopologyKind kind);

/// Per-layer reachability over the global expert ID space.
///
/// Global IDs: layer l (0-based) owns the contiguous local block
/// [l*locals, (l+1)*locals), and the universal ring occupies
/// [L*locals, L*locals + N_u). A layer's allow-list is its local block plus
/// one window of ring positions; layers with set-equal windows share a
/// fast-weight state group.
class ConnectivityMap {
 public:
  ConnectivityMap(TopologyConfig cfg, TopologyKind kind,
                  std::vector<std::vector<int>> windows);

  const TopologyConfig& config() const { return cfg_; }
  TopologyKind kind() const { return kind_; }

  int num_layers() const { return cfg_.num_layers; }
  int locals_per_layer() const { return cfg_.locals_per_layer; }
  int num_universal() const { return cfg_.num_universal; }
  int num_experts() const { return cfg_.num_layers * cfg_.locals_per_layer + cfg_.num_universal; }

  int local_block_begin(int layer) const { return layer * cfg_.locals_per_layer; }
  int universal_base() const { return cfg_.num_layers * cfg_.locals_per_layer; }
  int universal_global_id(int ring_pos) const { return universal_base() + ring_pos; }

  /// Ring positions reachable at `layer`, ascending (canonical order; also
  /// the row order of the shared fast-weight state).
  const std::vector<int>& window(int layer) const { return windows_[static_cast<std::size_t>(layer)]; }

  /// Full allow-list as global IDs: local block then window, ascending.
  const std::vector<int>& allow_list(int layer) const { return allow_[static_cast<std::size_t>(layer)]; }

  bool reachable(int expert_id, int layer) const;

  /// Connectivity group index g(l) = floor(l / G) for 0-based l.
  int group_of(int layer) const { return layer / cfg_.group_size; }
  int num_groups() const { return (cfg_.num_layers + cfg_.group_size - 1) / cfg_.group_size; }

  /// Index of the layer's distinct allow-list window; layers with identical
  /// windows share one index (and one fast-weight state).
  int state_group(int layer) const { return state_group_[static_cast<std::size_t>(layer)]; }
  int num_state_groups() const { return num_state_groups_; }

  /// CSV: header "layer,<id...>", then one row per layer (1-indexed) of 0/1
  /// reachability flags over all global expert IDs.
  void write_csv(std::ostream& os) const;

 private:
  TopologyConfig cfg_;
  TopologyKind kind_;
  std::vector<std::vector<int>> windows_;  // ascending ring positions per layer
  std::vector<std::vector<int>> allow_;    // global IDs per layer
  std::vector<int> state_group_;
  int num_state_groups_ = 0;
};

/// Staggered rotational topology: group g reaches ring positions
/// { (g*s + i) mod N_u : i in [0, W) }.
ConnectivityMap build_staggered(const TopologyConfig& cfg);

/// Ablation topologies. All except all_to_all keep exactly W reachable
/// universal experts per layer:
///  - forward_window: per-layer window, start (l * s) mod N_u;
///  - reverse_order:  descending window, positions (-g*s - i) mod N_u;
///  - sandwich:       first and last group share the window at 0, every
///                    middle group shares the window at s;
///  - all_to_all:     every layer reaches the whole ring.
ConnectivityMap build_variant(TopologyKind kind, const TopologyConfig& cfg);

/// Exposure degree c_j per ring position: number of layers whose allow-list
/// contains universal expert j.
std::vector<int> exposure_degrees(const ConnectivityMap& map);

/// ln of the number of depth-L universal expert paths:
/// sum over layers of ln C(W_l, k). Throws if k exceeds any layer's window.
double path_count_log(const ConnectivityMap& map, int k);

/// Non-topology model dimensions used for parameter accounting.
struct ModelDims {
  int dim = 0;      // hidden size d
  int ffn_dim = 0;  // expert hidden size
  int key_dim = 0;  // router key size d_k
  int vocab = 0;
};

struct ParameterBudget {
  std::int64_t activated = 0;       // Act: per-token touched params
  std::int64_t total_physical = 0;  // TP: stored params
  std::int64_t virtual_params = 0;  // VP: universal experts counted once per exposure
};

/// Counting convention (documented in docs/formats.md):
///   per_expert  = 2 * d * ffn
///   non_expert  = vocab*d (embedding) + d*vocab (readout)
///               + L * (d*(locals+N_u) + (locals+N_u) + d*d_k)   [routers]
///   activated   = non_expert + L * k * per_expert
///   total_phys  = non_expert + (L*locals + N_u) * per_expert
///   virtual     = non_expert + L*locals*per_expert
///               + sum_j max(c_j, 1) * per_expert
/// Fast-weight state is forward-only state, not a parameter; excluded.
ParameterBudget parameter_budget(const ModelDims& dims, const ConnectivityMap& map);

}  // namespace moue
