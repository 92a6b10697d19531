#include "moue/warmstart.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "moue/rng.hpp"

namespace moue {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Checkpoint save_checkpoint(const MoueModel& model) {
  Checkpoint ckpt;
  const auto& topo = model.cfg.topo;
  const auto& dims = model.cfg.dims;
  ckpt.metadata["format"] = "moue-model";
  ckpt.metadata["topology.num_layers"] = std::to_string(topo.num_layers);
  ckpt.metadata["topology.group_size"] = std::to_string(topo.group_size);
  ckpt.metadata["topology.num_universal"] = std::to_string(topo.num_universal);
  ckpt.metadata["topology.window"] = std::to_string(topo.window);
  ckpt.metadata["topology.stride"] = std::to_string(topo.stride);
  ckpt.metadata["topology.locals_per_layer"] = std::to_string(topo.locals_per_layer);
  ckpt.metadata["topology.top_k"] = std::to_string(topo.top_k);
  ckpt.metadata["topology.variant"] = to_string(model.cfg.variant);
  ckpt.metadata["model.dim"] = std::to_string(dims.dim);
  ckpt.metadata["model.ffn_dim"] = std::to_string(dims.ffn_dim);
  ckpt.metadata["model.key_dim"] = std::to_string(dims.key_dim);
  ckpt.metadata["model.vocab"] = std::to_string(dims.vocab);
  ckpt.metadata["router.beta"] = fmt(model.layers.empty() ? 0.1 : model.layers[0].router.beta);
  if (ckpt.metadata.count("converted") == 0) ckpt.metadata["converted"] = "0";

  ckpt.add("embedding", model.embedding);
  ckpt.add("readout", model.readout);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    for (std::size_t i = 0; i < layer.locals.size(); ++i) {
      const std::string ep = prefix + "local" + std::to_string(i) + ".";
      ckpt.add(ep + "up", layer.locals[i].up);
      ckpt.add(ep + "down", layer.locals[i].down);
    }
    ckpt.add(prefix + "router.w_gate", layer.router.w_gate);
    ckpt.add(prefix + "router.b_gate", layer.router.b_gate);
    ckpt.add(prefix + "router.w_key", layer.router.w_key);
  }
  for (std::size_t i = 0; i < model.universal.size(); ++i) {
    const std::string ep = "universal" + std::to_string(i) + ".";
    ckpt.add(ep + "up", model.universal[i].up);
    ckpt.add(ep + "down", model.universal[i].down);
  }
  for (std::size_t g = 0; g < model.states.size(); ++g) {
    ckpt.add("state" + std::to_string(g) + ".u", model.states[g].u);
  }
  return ckpt;
}

MoueModel load_checkpoint(const Checkpoint& ckpt) {
  ModelConfig cfg;
  cfg.topo.num_layers = std::stoi(ckpt.meta("topology.num_layers"));
  cfg.topo.group_size = std::stoi(ckpt.meta("topology.group_size"));
  cfg.topo.num_universal = std::stoi(ckpt.meta("topology.num_universal"));
  cfg.topo.window = std::stoi(ckpt.meta("topology.window"));
  cfg.topo.stride = std::stoi(ckpt.meta("topology.stride"));
  cfg.topo.locals_per_layer = std::stoi(ckpt.meta("topology.locals_per_layer"));
  cfg.topo.top_k = std::stoi(ckpt.meta("topology.top_k"));
  cfg.variant = topology_kind_from_string(ckpt.meta("topology.variant"));
  cfg.dims.dim = std::stoi(ckpt.meta("model.dim"));
  cfg.dims.ffn_dim = std::stoi(ckpt.meta("model.ffn_dim"));
  cfg.dims.key_dim = std::stoi(ckpt.meta("model.key_dim"));
  cfg.dims.vocab = std::stoi(ckpt.meta("model.vocab"));

  MoueModel m = init_model(cfg, 0);
  m.embedding = ckpt.matrix("embedding");
  m.readout = ckpt.matrix("readout");
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    auto& layer = m.layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    for (std::size_t i = 0; i < layer.locals.size(); ++i) {
      const std::string ep = prefix + "local" + std::to_string(i) + ".";
      layer.locals[i].up = ckpt.matrix(ep + "up");
      layer.locals[i].down = ckpt.matrix(ep + "down");
    }
    layer.router.w_gate = ckpt.matrix(prefix + "router.w_gate");
    layer.router.b_gate = ckpt.vector(prefix + "router.b_gate");
    layer.router.w_key = ckpt.matrix(prefix + "router.w_key");
    layer.router.beta = std::stod(ckpt.meta("router.beta"));
  }
  for (std::size_t i = 0; i < m.universal.size(); ++i) {
    const std::string ep = "universal" + std::to_string(i) + ".";
    m.universal[i].up = ckpt.matrix(ep + "up");
    m.universal[i].down = ckpt.matrix(ep + "down");
  }
  for (std::size_t g = 0; g < m.states.size(); ++g) {
    const std::string name = "state" + std::to_string(g) + ".u";
    if (ckpt.has(name)) m.states[g].u = ckpt.matrix(name);
  }
  return m;
}

ActivationProfile collect_activation_profile(const MoueModel& moe_model,
                                             const Eigen::Ref<const IntMatrix>& calibration) {
  TrainConfig cfg;
  cfg.warmup = false;
  cfg.lambda_aux = 0.0;
  const ForwardResult fwd = forward_loss(moe_model, calibration, cfg, 0.0);
  const int locals = moe_model.map.locals_per_layer();
  ActivationProfile profile;
  profile.rates = Matrix::Zero(moe_model.map.num_layers(), locals);
  for (int l = 0; l < moe_model.map.num_layers(); ++l) {
    const int base = moe_model.map.local_block_begin(l);
    for (int j = 0; j < locals; ++j) {
      profile.rates(l, j) = fwd.stats.layers[static_cast<std::size_t>(l)].dispatch[base + j];
    }
  }
  return profile;
}

std::vector<std::pair<int, int>> select_universal_experts(const ActivationProfile& profile,
                                                          int n_u, int band_lo, int band_hi) {
  if (band_lo >= band_hi || band_lo < 0 || band_hi > profile.rates.rows()) {
    throw std::invalid_argument("select_universal_experts: empty band");
  }
  struct Entry {
    double rate;
    int layer;
    int expert;
  };
  std::vector<Entry> entries;
  for (int l = band_lo; l < band_hi; ++l) {
    for (int j = 0; j < profile.rates.cols(); ++j) {
      entries.push_back({profile.rates(l, j), l, j});
    }
  }
  if (static_cast<int>(entries.size()) < n_u) {
    throw std::invalid_argument("select_universal_experts: band smaller than pool");
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.rate != b.rate) return a.rate > b.rate;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.expert < b.expert;
  });
  std::vector<std::pair<int, int>> out;
  out.reserve(static_cast<std::size_t>(n_u));
  for (int i = 0; i < n_u; ++i) out.emplace_back(entries[static_cast<std::size_t>(i)].layer,
                                                 entries[static_cast<std::size_t>(i)].expert);
  return out;
}

Checkpoint convert_to_moue(const Checkpoint& moe_ckpt,
                           const std::vector<std::pair<int, int>>& selection,
                           const ConvertOptions& opts) {
  if (moe_ckpt.meta_or("converted", "0") != "0") {
    throw FormatError("already MoUE: checkpoint was converted before");
  }
  const MoueModel src = load_checkpoint(moe_ckpt);
  if (src.cfg.topo.num_universal != 0) {
    throw FormatError("already MoUE: source has a universal pool");
  }
  if (selection.empty()) {
    // Passthrough: nothing to clone, output is functionally the source.
    Checkpoint out = moe_ckpt;
    return out;
  }
  TopologyConfig topo = opts.topo;
  topo.num_universal = static_cast<int>(selection.size());
  if (topo.num_layers != src.cfg.topo.num_layers ||
      topo.locals_per_layer != src.cfg.topo.locals_per_layer) {
    throw FormatError("conversion topology mismatch");
  }
  topo.validate();
  for (const auto& [l, e] : selection) {
    if (l < 0 || l >= topo.num_layers || e < 0 || e >= topo.locals_per_layer) {
      throw FormatError("conversion selection out of range");
    }
  }

  ModelConfig cfg = src.cfg;
  cfg.topo = topo;
  cfg.variant = opts.variant;
  MoueModel dst = init_model(cfg, 0);
  dst.embedding = src.embedding;
  dst.readout = src.readout;

  SplitMix64 rng(opts.seed);
  const int locals = topo.locals_per_layer;
  const int n_u = topo.num_universal;
  for (int l = 0; l < topo.num_layers; ++l) {
    auto& layer = dst.layers[static_cast<std::size_t>(l)];
    const auto& source_layer = src.layers[static_cast<std::size_t>(l)];
    layer.locals = source_layer.locals;
    layer.router.beta = source_layer.router.beta;
    layer.router.w_key = source_layer.router.w_key;
    // Local router preserved byte-identical; universal projection appended,
    // seeded from each clone's source column.
    layer.router.w_gate.leftCols(locals) = source_layer.router.w_gate;
    layer.router.b_gate.head(locals) = source_layer.router.b_gate;
    for (int p = 0; p < n_u; ++p) {
      const auto [sl, se] = selection[static_cast<std::size_t>(p)];
      const auto& donor = src.layers[static_cast<std::size_t>(sl)].router;
      for (Eigen::Index r = 0; r < layer.router.w_gate.rows(); ++r) {
        layer.router.w_gate(r, locals + p) =
            donor.w_gate(r, se) + opts.router_noise * rng.next_normal();
      }
      layer.router.b_gate[locals + p] = donor.b_gate[se] + opts.router_noise * rng.next_normal();
    }
  }
  for (int p = 0; p < n_u; ++p) {
    const auto [sl, se] = selection[static_cast<std::size_t>(p)];
    dst.universal[static_cast<std::size_t>(p)] =
        src.layers[static_cast<std::size_t>(sl)].locals[static_cast<std::size_t>(se)];
  }
  if (!opts.keep_sources) {
    // Moving instead of cloning would orphan local router columns; sources
    // stay by default (clone-and-keep) and this flag only zeroes the clones'
    // origins when a caller explicitly asks for it.
    for (const auto& [sl, se] : selection) {
      auto& e = dst.layers[static_cast<std::size_t>(sl)].locals[static_cast<std::size_t>(se)];
      e.up.setZero();
      e.down.setZero();
    }
  }

  Checkpoint out = save_checkpoint(dst);
  out.metadata["converted"] = "1";
  out.metadata["schedule.suppress_beta0"] = fmt(opts.suppress_beta0);
  out.metadata["schedule.suppress_t_end"] = fmt(opts.suppress_t_end);
  std::string sel_str;
  for (const auto& [l, e] : selection) {
    if (!sel_str.empty()) sel_str += ';';
    sel_str += std::to_string(l) + ":" + std::to_string(e);
  }
  out.metadata["converted.sources"] = sel_str;
  return out;
}

double cka_similarity(const ExpertParams& a, const ExpertParams& b) {
  if (a.up.rows() != b.up.rows() || a.up.cols() != b.up.cols() ||
      a.down.rows() != b.down.rows() || a.down.cols() != b.down.cols()) {
    throw std::invalid_argument("cka_similarity: shape mismatch");
  }
  auto features = [](const ExpertParams& e) {
    Matrix x(e.up.rows(), e.up.cols() + e.down.rows());
    x << e.up, e.down.transpose();
    x.rowwise() -= x.colwise().mean();  // column-center
    return x;
  };
  const Matrix x = features(a);
  const Matrix y = features(b);
  const double xnorm = (x.transpose() * x).norm();
  const double ynorm = (y.transpose() * y).norm();
  if (xnorm == 0.0 || ynorm == 0.0) throw std::invalid_argument("degenerate norm");
  const double cross = (x.transpose() * y).squaredNorm();
  return cross / (xnorm * ynorm);
}

}  // namespace moue
