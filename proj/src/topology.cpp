#include "moue/topology.hpp"

#include <algorithm>
#include <map>
#include <ostream>

#include "moue/numerics.hpp"

namespace moue {

void TopologyConfig::validate() const {
  if (num_layers < 1) throw ConfigError("topology: num_layers must be >= 1");
  if (group_size < 1) throw ConfigError("topology: group_size must be >= 1");
  if (locals_per_layer < 0 || num_universal < 0 || stride < 0) {
    throw ConfigError("topology: counts must be >= 0");
  }
  if (num_universal > 0 && (window < 1 || window > num_universal)) {
    throw ConfigError("window exceeds ring");
  }
  if (num_universal == 0 && window != 0) {
    throw ConfigError("topology: window requires a universal pool");
  }
  if (top_k < 1) throw ConfigError("topology: top_k must be >= 1");
  if (top_k > window + locals_per_layer) {
    throw ConfigError("topology: top_k exceeds reachable experts");
  }
}

TopologyKind topology_kind_from_string(const std::string& name) {
  if (name == "staggered") return TopologyKind::staggered;
  if (name == "forward_window") return TopologyKind::forward_window;
  if (name == "reverse_order") return TopologyKind::reverse_order;
  if (name == "sandwich") return TopologyKind::sandwich;
  if (name == "all_to_all") return TopologyKind::all_to_all;
  throw ConfigError("unknown topology variant: " + name);
}

std::string to_string(TopologyKind kind) {
  switch (kind) {
    case TopologyKind::staggered: return "staggered";
    case TopologyKind::forward_window: return "forward_window";
    case TopologyKind::reverse_order: return "reverse_order";
    case TopologyKind::sandwich: return "sandwich";
    case TopologyKind::all_to_all: return "all_to_all";
  }
  throw ConfigError("unknown topology variant");
}

namespace {

// Ascending, deduplicated ring window of width W starting at `start`
// (wrapping). Windows never revisit a position while W <= N_u.
std::vector<int> ring_window(int start, int width, int ring, bool descending = false) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(width));
  for (int i = 0; i < width; ++i) {
    long long pos = descending ? static_cast<long long>(start) - i
                               : static_cast<long long>(start) + i;
    pos %= ring;
    if (pos < 0) pos += ring;
    out.push_back(static_cast<int>(pos));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

ConnectivityMap::ConnectivityMap(TopologyConfig cfg, TopologyKind kind,
                                 std::vector<std::vector<int>> windows)
    : cfg_(cfg), kind_(kind), windows_(std::move(windows)) {
  allow_.resize(windows_.size());
  state_group_.resize(windows_.size());
  std::map<std::vector<int>, int> seen;
  for (int l = 0; l < cfg_.num_layers; ++l) {
    auto& win = windows_[static_cast<std::size_t>(l)];
    auto& ids = allow_[static_cast<std::size_t>(l)];
    ids.clear();
    for (int c = 0; c < cfg_.locals_per_layer; ++c) ids.push_back(local_block_begin(l) + c);
    for (int p : win) ids.push_back(universal_global_id(p));
    auto [it, inserted] = seen.emplace(win, num_state_groups_);
    if (inserted) ++num_state_groups_;
    state_group_[static_cast<std::size_t>(l)] = it->second;
  }
}

bool ConnectivityMap::reachable(int expert_id, int layer) const {
  const auto& ids = allow_list(layer);
  return std::binary_search(ids.begin(), ids.end(), expert_id);
}

void ConnectivityMap::write_csv(std::ostream& os) const {
  os << "layer";
  for (int e = 0; e < num_experts(); ++e) os << ',' << e;
  os << '\n';
  for (int l = 0; l < num_layers(); ++l) {
    os << (l + 1);
    for (int e = 0; e < num_experts(); ++e) os << ',' << (reachable(e, l) ? 1 : 0);
    os << '\n';
  }
}

ConnectivityMap build_staggered(const TopologyConfig& cfg) {
  cfg.validate();
  std::vector<std::vector<int>> windows(static_cast<std::size_t>(cfg.num_layers));
  for (int l = 0; l < cfg.num_layers; ++l) {
    if (cfg.num_universal > 0) {
      const int g = l / cfg.group_size;
      windows[static_cast<std::size_t>(l)] =
          ring_window(static_cast<int>((static_cast<long long>(g) * cfg.stride) %
                                       cfg.num_universal),
                      cfg.window, cfg.num_universal);
    }
  }
  return ConnectivityMap(cfg, TopologyKind::staggered, std::move(windows));
}

ConnectivityMap build_variant(TopologyKind kind, const TopologyConfig& cfg) {
  if (kind == TopologyKind::staggered) return build_staggered(cfg);
  cfg.validate();
  std::vector<std::vector<int>> windows(static_cast<std::size_t>(cfg.num_layers));
  const int nu = cfg.num_universal;
  for (int l = 0; l < cfg.num_layers; ++l) {
    if (nu == 0) continue;
    auto& win = windows[static_cast<std::size_t>(l)];
    const int g = l / cfg.group_size;
    switch (kind) {
      case TopologyKind::forward_window:
        win = ring_window(static_cast<int>((static_cast<long long>(l) * cfg.stride) % nu),
                          cfg.window, nu);
        break;
      case TopologyKind::reverse_order: {
        long long start = -(static_cast<long long>(g) * cfg.stride) % nu;
        if (start < 0) start += nu;
        win = ring_window(static_cast<int>(start), cfg.window, nu, /*descending=*/true);
        break;
      }
      case TopologyKind::sandwich: {
        const int last_group = (cfg.num_layers - 1) / cfg.group_size;
        const bool outer = (g == 0 || g == last_group);
        win = ring_window(outer ? 0 : cfg.stride % nu, cfg.window, nu);
        break;
      }
      case TopologyKind::all_to_all:
        win.resize(static_cast<std::size_t>(nu));
        for (int p = 0; p < nu; ++p) win[static_cast<std::size_t>(p)] = p;
        break;
      case TopologyKind::staggered:
        break;  // handled above
    }
  }
  return ConnectivityMap(cfg, kind, std::move(windows));
}

std::vector<int> exposure_degrees(const ConnectivityMap& map) {
  std::vector<int> degrees(static_cast<std::size_t>(map.num_universal()), 0);
  for (int l = 0; l < map.num_layers(); ++l) {
    for (int p : map.window(l)) ++degrees[static_cast<std::size_t>(p)];
  }
  return degrees;
}

double path_count_log(const ConnectivityMap& map, int k) {
  double total = 0.0;
  for (int l = 0; l < map.num_layers(); ++l) {
    const int width = static_cast<int>(map.window(l).size());
    if (k > width) {
      throw std::invalid_argument("path_count_log: k exceeds window at layer " +
                                  std::to_string(l + 1));
    }
    total += log_binomial(width, k);
  }
  return total;
}

ParameterBudget parameter_budget(const ModelDims& dims, const ConnectivityMap& map) {
  const auto& cfg = map.config();
  const std::int64_t d = dims.dim;
  const std::int64_t per_expert = 2 * d * dims.ffn_dim;
  const std::int64_t router_cols = cfg.locals_per_layer + cfg.num_universal;
  const std::int64_t router = d * router_cols + router_cols + d * dims.key_dim;
  const std::int64_t non_expert =
      static_cast<std::int64_t>(dims.vocab) * d * 2 + cfg.num_layers * router;

  ParameterBudget b;
  b.activated = non_expert + static_cast<std::int64_t>(cfg.num_layers) * cfg.top_k * per_expert;
  b.total_physical =
      non_expert +
      (static_cast<std::int64_t>(cfg.num_layers) * cfg.locals_per_layer + cfg.num_universal) *
          per_expert;
  std::int64_t universal_exposures = 0;
  for (int c : exposure_degrees(map)) universal_exposures += std::max(c, 1);
  b.virtual_params =
      non_expert +
      static_cast<std::int64_t>(cfg.num_layers) * cfg.locals_per_layer * per_expert +
      universal_exposures * per_expert;
  return b;
}

}  // namespace moue
