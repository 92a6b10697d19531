#include "moue/model.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "moue/numerics.hpp"
#include "moue/rng.hpp"

namespace moue {

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

Vector expert_forward(const ExpertParams& e, const Eigen::Ref<const Vector>& x) {
  Vector a = e.up.transpose() * x;
  for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = silu(a[i]);
  return e.down.transpose() * a;
}

ExpertParams& MoueModel::expert(int global_id) {
  const int base = map.universal_base();
  if (global_id >= base) return universal[static_cast<std::size_t>(global_id - base)];
  const int locals = map.locals_per_layer();
  return layers[static_cast<std::size_t>(global_id / locals)]
      .locals[static_cast<std::size_t>(global_id % locals)];
}

const ExpertParams& MoueModel::expert(int global_id) const {
  return const_cast<MoueModel*>(this)->expert(global_id);
}

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, double scale, SplitMix64& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale * rng.next_normal();
  }
  return m;
}

ExpertParams random_expert(const ModelDims& dims, SplitMix64& rng) {
  ExpertParams e;
  e.up = random_matrix(dims.dim, dims.ffn_dim, 1.0 / std::sqrt(dims.dim), rng);
  e.down = random_matrix(dims.ffn_dim, dims.dim, 1.0 / std::sqrt(dims.ffn_dim), rng);
  return e;
}

}  // namespace

MoueModel init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.topo.validate();
  SplitMix64 rng(seed);
  MoueModel m{cfg, build_variant(cfg.variant, cfg.topo), Matrix(), Matrix(), {}, {}, {}};
  const ModelDims& d = cfg.dims;
  const int router_cols = cfg.topo.locals_per_layer + cfg.topo.num_universal;

  m.embedding = random_matrix(d.vocab, d.dim, 1.0, rng);
  m.readout = random_matrix(d.dim, d.vocab, 1.0 / std::sqrt(d.dim), rng);
  m.layers.resize(static_cast<std::size_t>(cfg.topo.num_layers));
  for (auto& layer : m.layers) {
    layer.locals.reserve(static_cast<std::size_t>(cfg.topo.locals_per_layer));
    for (int i = 0; i < cfg.topo.locals_per_layer; ++i) {
      layer.locals.push_back(random_expert(d, rng));
    }
    layer.router.w_gate = random_matrix(d.dim, router_cols, 1.0 / std::sqrt(d.dim), rng);
    layer.router.b_gate = Vector::Zero(router_cols);
    layer.router.w_key = random_matrix(d.dim, d.key_dim, 1.0 / std::sqrt(d.dim), rng);
  }
  m.universal.reserve(static_cast<std::size_t>(cfg.topo.num_universal));
  for (int i = 0; i < cfg.topo.num_universal; ++i) m.universal.push_back(random_expert(d, rng));

  m.states.resize(static_cast<std::size_t>(m.map.num_state_groups()));
  for (int l = 0; l < m.map.num_layers(); ++l) {
    auto& st = m.states[static_cast<std::size_t>(m.map.state_group(l))];
    st.u = Matrix::Zero(static_cast<Eigen::Index>(m.map.window(l).size()), d.key_dim);
  }
  return m;
}

Matrix causal_mix(const Eigen::Ref<const Matrix>& h, int seq_len) {
  Matrix out = h;
  for (Eigen::Index start = 0; start < h.rows(); start += seq_len) {
    Eigen::RowVectorXd prefix = Eigen::RowVectorXd::Zero(h.cols());
    for (int t = 0; t < seq_len; ++t) {
      prefix += h.row(start + t);
      // Convex blend keeps the residual stream non-expanding over depth.
      out.row(start + t) = 0.5 * h.row(start + t) + (0.5 / (t + 1)) * prefix;
    }
  }
  return out;
}

namespace {

// Transpose of the mixer: dh_t = dx_t/2 + (1/2) sum_{u >= t} dx_u / (u+1).
Matrix causal_mix_backward(const Matrix& dx, int seq_len) {
  Matrix out = 0.5 * dx;
  for (Eigen::Index start = 0; start < dx.rows(); start += seq_len) {
    Eigen::RowVectorXd suffix = Eigen::RowVectorXd::Zero(dx.cols());
    for (int t = seq_len - 1; t >= 0; --t) {
      suffix += dx.row(start + t) / static_cast<double>(t + 1);
      out.row(start + t) += 0.5 * suffix;
    }
  }
  return out;
}

Selection selection_from(const Vector& logits, const Vector& probs, int k) {
  Selection sel;
  sel.expert_ids = top_k_select(logits, k);
  sel.gates.resize(k);
  double mass = 0.0;
  for (int i = 0; i < k; ++i) {
    sel.gates[i] = probs[sel.expert_ids[static_cast<std::size_t>(i)]];
    mass += sel.gates[i];
  }
  sel.gates /= mass;
  return sel;
}

}  // namespace

LayerForward moue_layer_forward(const MoueModel& model, const Eigen::Ref<const Matrix>& x,
                                int layer, const RoutingControls& controls, bool hard_p_star) {
  const auto& map = model.map;
  const auto& router = model.layers[static_cast<std::size_t>(layer)].router;
  const auto& state = model.states[static_cast<std::size_t>(map.state_group(layer))];
  const auto& window = map.window(layer);
  const int k = map.config().top_k;
  const int ffn = model.cfg.dims.ffn_dim;
  const Eigen::Index n = x.rows();
  const bool contextual = !window.empty() && router.beta != 0.0;

  LayerForward out;
  out.h_next = x;
  out.selections.resize(static_cast<std::size_t>(n));
  out.probs.resize(static_cast<std::size_t>(n));
  out.pre_act = Matrix::Zero(n, static_cast<Eigen::Index>(k) * ffn);
  out.act = Matrix::Zero(n, static_cast<Eigen::Index>(k) * ffn);
  if (contextual) out.keys = x * router.w_key;
  if (!window.empty()) {
    out.p_star = Matrix::Zero(n, static_cast<Eigen::Index>(window.size()));
  }

  for (Eigen::Index t = 0; t < n; ++t) {
    const Vector xt = x.row(t).transpose();
    const Vector z =
        compute_logits(xt, layer, router, state, map, controls.schedules, controls.t);
    Vector probs = softmax_neg_inf(z);
    Selection sel = selection_from(z, probs, k);

    for (int j = 0; j < k; ++j) {
      const ExpertParams& e = model.expert(sel.expert_ids[static_cast<std::size_t>(j)]);
      Vector a = e.up.transpose() * xt;
      out.pre_act.row(t).segment(static_cast<Eigen::Index>(j) * ffn, ffn) = a;
      for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = silu(a[i]);
      out.act.row(t).segment(static_cast<Eigen::Index>(j) * ffn, ffn) = a;
      out.h_next.row(t) += sel.gates[j] * (e.down.transpose() * a).transpose();
    }

    if (!window.empty()) {
      auto row = out.p_star.row(t);
      double mass = 0.0;
      if (hard_p_star) {
        for (int id : sel.expert_ids) {
          if (id >= map.universal_base()) {
            const auto it = std::lower_bound(window.begin(), window.end(),
                                             id - map.universal_base());
            row[static_cast<Eigen::Index>(it - window.begin())] = 1.0;
            mass += 1.0;
          }
        }
      } else {
        for (std::size_t slot = 0; slot < window.size(); ++slot) {
          row[static_cast<Eigen::Index>(slot)] = probs[map.universal_global_id(window[slot])];
          mass += row[static_cast<Eigen::Index>(slot)];
        }
      }
      if (mass > 0.0) {
        row /= mass;
      } else {
        // No routing mass on the pool (e.g. hard suppression): neutral target.
        row.setConstant(1.0 / static_cast<double>(window.size()));
      }
    }

    out.probs[static_cast<std::size_t>(t)] = std::move(probs);
    out.selections[static_cast<std::size_t>(t)] = std::move(sel);
  }
  return out;
}

std::vector<BiasSchedule> TrainConfig::schedules() const {
  std::vector<BiasSchedule> list;
  if (warmup && warmup_b0 != 0.0) {
    list.push_back({BiasSchedule::Kind::warmup, warmup_b0, warmup_r});
  }
  if (suppression) {
    list.push_back({BiasSchedule::Kind::suppression, suppress_beta0, suppress_t_end});
  }
  return list;
}

RoutingControls TrainConfig::controls_at(double t) const { return {schedules(), t}; }

ForwardResult forward_loss(const MoueModel& model, const Eigen::Ref<const IntMatrix>& batch,
                           const TrainConfig& cfg, double t) {
  const auto& dims = model.cfg.dims;
  const int seq_len = static_cast<int>(batch.cols());
  const Eigen::Index n = batch.rows() * batch.cols();
  const RoutingControls controls = cfg.controls_at(t);

  ForwardResult fr;
  Matrix h(n, dims.dim);
  for (Eigen::Index b = 0; b < batch.rows(); ++b) {
    for (Eigen::Index s = 0; s < batch.cols(); ++s) {
      h.row(b * batch.cols() + s) = model.embedding.row(batch(b, s));
    }
  }

  fr.layer_inputs.reserve(model.layers.size());
  fr.layer_fwd.reserve(model.layers.size());
  for (int l = 0; l < model.map.num_layers(); ++l) {
    if (!h.allFinite()) throw DivergenceError("diverged");
    Matrix x = causal_mix(h, seq_len);
    LayerForward lf = moue_layer_forward(model, x, l, controls, cfg.hard_p_star);
    h = lf.h_next;
    fr.layer_inputs.push_back(std::move(x));
    fr.layer_fwd.push_back(std::move(lf));
  }
  fr.h_final = std::move(h);
  fr.logits = fr.h_final * model.readout;

  // Next-token cross entropy; position s predicts token s+1 of its sequence.
  const Eigen::Index n_pred = batch.rows() * (batch.cols() - 1);
  double loss = 0.0;
  for (Eigen::Index b = 0; b < batch.rows(); ++b) {
    for (Eigen::Index s = 0; s + 1 < batch.cols(); ++s) {
      const auto row = fr.logits.row(b * batch.cols() + s);
      const double mx = row.maxCoeff();
      const double lse = std::log((row.array() - mx).exp().sum()) + mx;
      loss += lse - row[batch(b, s + 1)];
    }
  }
  fr.task_loss = n_pred > 0 ? loss / static_cast<double>(n_pred) : 0.0;

  fr.stats.layers.reserve(model.layers.size());
  for (const auto& lf : fr.layer_fwd) {
    fr.stats.layers.push_back(
        accumulate_stats(lf.selections, lf.probs, model.map.num_experts(), model.cfg.topo.top_k));
  }
  fr.aux_loss = balance_loss(cfg.objective, fr.stats, model.map, cfg.alphas);
  fr.total_loss = fr.task_loss + cfg.lambda_aux * fr.aux_loss;
  return fr;
}

GradBuffers zeros_like(const MoueModel& model) {
  GradBuffers g;
  g.embedding = Matrix::Zero(model.embedding.rows(), model.embedding.cols());
  g.readout = Matrix::Zero(model.readout.rows(), model.readout.cols());
  g.layers.resize(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& src = model.layers[l];
    auto& dst = g.layers[l];
    dst.locals.resize(src.locals.size());
    for (std::size_t i = 0; i < src.locals.size(); ++i) {
      dst.locals[i].up = Matrix::Zero(src.locals[i].up.rows(), src.locals[i].up.cols());
      dst.locals[i].down = Matrix::Zero(src.locals[i].down.rows(), src.locals[i].down.cols());
    }
    dst.router.w_gate = Matrix::Zero(src.router.w_gate.rows(), src.router.w_gate.cols());
    dst.router.b_gate = Vector::Zero(src.router.b_gate.size());
    dst.router.w_key = Matrix::Zero(src.router.w_key.rows(), src.router.w_key.cols());
  }
  g.universal.resize(model.universal.size());
  for (std::size_t i = 0; i < model.universal.size(); ++i) {
    g.universal[i].up = Matrix::Zero(model.universal[i].up.rows(), model.universal[i].up.cols());
    g.universal[i].down =
        Matrix::Zero(model.universal[i].down.rows(), model.universal[i].down.cols());
  }
  return g;
}

namespace {

ExpertParams& grad_expert(GradBuffers& g, const ConnectivityMap& map, int global_id) {
  const int base = map.universal_base();
  if (global_id >= base) return g.universal[static_cast<std::size_t>(global_id - base)];
  const int locals = map.locals_per_layer();
  return g.layers[static_cast<std::size_t>(global_id / locals)]
      .locals[static_cast<std::size_t>(global_id % locals)];
}

}  // namespace

GradBuffers backward(const MoueModel& model, const ForwardResult& fwd,
                     const Eigen::Ref<const IntMatrix>& batch, const TrainConfig& cfg) {
  const auto& map = model.map;
  const auto& dims = model.cfg.dims;
  const int k = model.cfg.topo.top_k;
  const int ffn = dims.ffn_dim;
  const int locals = map.locals_per_layer();
  const int seq_len = static_cast<int>(batch.cols());
  const Eigen::Index n = batch.rows() * batch.cols();
  GradBuffers g = zeros_like(model);

  // Cross-entropy head.
  Matrix dlogits = Matrix::Zero(n, dims.vocab);
  const Eigen::Index n_pred = batch.rows() * (batch.cols() - 1);
  if (n_pred > 0) {
    const double inv = 1.0 / static_cast<double>(n_pred);
    for (Eigen::Index b = 0; b < batch.rows(); ++b) {
      for (Eigen::Index s = 0; s + 1 < batch.cols(); ++s) {
        const Eigen::Index r = b * batch.cols() + s;
        const auto row = fwd.logits.row(r);
        const double mx = row.maxCoeff();
        Eigen::RowVectorXd p = (row.array() - mx).exp();
        p /= p.sum();
        dlogits.row(r) = inv * p;
        dlogits(r, batch(b, s + 1)) -= inv;
      }
    }
  }
  g.readout = fwd.h_final.transpose() * dlogits;
  Matrix dh = dlogits * model.readout.transpose();

  // Auxiliary loss reaches every token's routing distribution.
  const std::vector<Vector> aux_coef =
      loss_prob_gradient(cfg.objective, fwd.stats, map, cfg.alphas);
  const double aux_scale = cfg.lambda_aux / static_cast<double>(n);

  for (int l = map.num_layers() - 1; l >= 0; --l) {
    const auto& lf = fwd.layer_fwd[static_cast<std::size_t>(l)];
    const Matrix& x = fwd.layer_inputs[static_cast<std::size_t>(l)];
    const auto& router = model.layers[static_cast<std::size_t>(l)].router;
    const auto& state = model.states[static_cast<std::size_t>(map.state_group(l))];
    const auto& window = map.window(l);
    auto& gl = g.layers[static_cast<std::size_t>(l)];
    const int base = map.local_block_begin(l);
    const bool contextual = !window.empty() && router.beta != 0.0;

    Matrix dx = dh;  // residual path
    for (Eigen::Index t = 0; t < n; ++t) {
      const Vector xt = x.row(t).transpose();
      const Vector dyt = dh.row(t).transpose();
      const auto& sel = lf.selections[static_cast<std::size_t>(t)];
      const Vector& probs = lf.probs[static_cast<std::size_t>(t)];

      // Experts and gate sensitivities.
      Vector dgate = Vector::Zero(k);
      double sel_mass = 0.0;
      for (int j = 0; j < k; ++j) {
        const int id = sel.expert_ids[static_cast<std::size_t>(j)];
        sel_mass += probs[id];
        const ExpertParams& e = model.expert(id);
        ExpertParams& ge = grad_expert(g, map, id);
        const auto a = lf.pre_act.row(t).segment(static_cast<Eigen::Index>(j) * ffn, ffn);
        const auto s = lf.act.row(t).segment(static_cast<Eigen::Index>(j) * ffn, ffn);
        const Vector o = e.down.transpose() * s.transpose();
        dgate[j] = o.dot(dyt);
        const Vector dout = sel.gates[j] * dyt;
        ge.down.noalias() += s.transpose() * dout.transpose();
        Vector da = e.down * dout;
        for (Eigen::Index i = 0; i < da.size(); ++i) da[i] *= silu_grad(a[i]);
        ge.up.noalias() += xt * da.transpose();
        dx.row(t) += (e.up * da).transpose();
      }

      // Gates -> probabilities (renormalized over the selected set), plus
      // the auxiliary-loss contribution on every reachable expert.
      Vector dprob = aux_scale * aux_coef[static_cast<std::size_t>(l)];
      const double gate_dot = sel.gates.dot(dgate);
      for (int j = 0; j < k; ++j) {
        dprob[sel.expert_ids[static_cast<std::size_t>(j)]] += (dgate[j] - gate_dot) / sel_mass;
      }

      // Softmax backward over the reachable set.
      double inner = 0.0;
      for (int id : map.allow_list(l)) inner += probs[id] * dprob[id];
      Vector dz_compact = Vector::Zero(router.b_gate.size());
      for (int c = 0; c < locals; ++c) {
        dz_compact[c] = probs[base + c] * (dprob[base + c] - inner);
      }
      double dkey_needed = 0.0;
      for (int p : window) {
        const int id = map.universal_global_id(p);
        dz_compact[locals + p] = probs[id] * (dprob[id] - inner);
        dkey_needed += std::abs(dz_compact[locals + p]);
      }

      gl.router.w_gate.noalias() += xt * dz_compact.transpose();
      gl.router.b_gate += dz_compact;
      dx.row(t) += (router.w_gate * dz_compact).transpose();

      if (contextual && dkey_needed != 0.0) {
        Vector dkey = Vector::Zero(dims.key_dim);
        for (std::size_t slot = 0; slot < window.size(); ++slot) {
          dkey += router.beta * dz_compact[locals + window[slot]] *
                  state.u.row(static_cast<Eigen::Index>(slot)).transpose();
        }
        gl.router.w_key.noalias() += xt * dkey.transpose();
        dx.row(t) += (router.w_key * dkey).transpose();
      }
    }
    dh = causal_mix_backward(dx, seq_len);
  }

  for (Eigen::Index b = 0; b < batch.rows(); ++b) {
    for (Eigen::Index s = 0; s < batch.cols(); ++s) {
      g.embedding.row(batch(b, s)) += dh.row(b * batch.cols() + s);
    }
  }
  return g;
}

std::vector<TensorRef> tensor_refs(MoueModel& m) {
  std::vector<TensorRef> refs;
  refs.push_back({"embedding", m.embedding.data(), m.embedding.size()});
  refs.push_back({"readout", m.readout.data(), m.readout.size()});
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    auto& layer = m.layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    for (std::size_t i = 0; i < layer.locals.size(); ++i) {
      const std::string ep = prefix + "local" + std::to_string(i) + ".";
      refs.push_back({ep + "up", layer.locals[i].up.data(), layer.locals[i].up.size()});
      refs.push_back({ep + "down", layer.locals[i].down.data(), layer.locals[i].down.size()});
    }
    refs.push_back({prefix + "router.w_gate", layer.router.w_gate.data(),
                    layer.router.w_gate.size()});
    refs.push_back({prefix + "router.b_gate", layer.router.b_gate.data(),
                    layer.router.b_gate.size()});
    refs.push_back({prefix + "router.w_key", layer.router.w_key.data(),
                    layer.router.w_key.size()});
  }
  for (std::size_t i = 0; i < m.universal.size(); ++i) {
    const std::string ep = "universal" + std::to_string(i) + ".";
    refs.push_back({ep + "up", m.universal[i].up.data(), m.universal[i].up.size()});
    refs.push_back({ep + "down", m.universal[i].down.data(), m.universal[i].down.size()});
  }
  return refs;
}

std::vector<TensorRef> tensor_refs(GradBuffers& g) {
  std::vector<TensorRef> refs;
  refs.push_back({"embedding", g.embedding.data(), g.embedding.size()});
  refs.push_back({"readout", g.readout.data(), g.readout.size()});
  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    auto& layer = g.layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    for (std::size_t i = 0; i < layer.locals.size(); ++i) {
      const std::string ep = prefix + "local" + std::to_string(i) + ".";
      refs.push_back({ep + "up", layer.locals[i].up.data(), layer.locals[i].up.size()});
      refs.push_back({ep + "down", layer.locals[i].down.data(), layer.locals[i].down.size()});
    }
    refs.push_back({prefix + "router.w_gate", layer.router.w_gate.data(),
                    layer.router.w_gate.size()});
    refs.push_back({prefix + "router.b_gate", layer.router.b_gate.data(),
                    layer.router.b_gate.size()});
    refs.push_back({prefix + "router.w_key", layer.router.w_key.data(),
                    layer.router.w_key.size()});
  }
  for (std::size_t i = 0; i < g.universal.size(); ++i) {
    const std::string ep = "universal" + std::to_string(i) + ".";
    refs.push_back({ep + "up", g.universal[i].up.data(), g.universal[i].up.size()});
    refs.push_back({ep + "down", g.universal[i].down.data(), g.universal[i].down.size()});
  }
  return refs;
}

Optimizer::Optimizer(const MoueModel& model, double lr, double momentum)
    : lr_(lr), momentum_(momentum), velocity_(zeros_like(model)) {}

void Optimizer::apply(MoueModel& model, GradBuffers& grads) {
  auto params = tensor_refs(model);
  auto gs = tensor_refs(grads);
  auto vs = tensor_refs(velocity_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (Eigen::Index j = 0; j < params[i].size; ++j) {
      double& v = vs[i].data[j];
      v = momentum_ * v + gs[i].data[j];
      params[i].data[j] -= lr_ * v;
    }
  }
}

namespace {

void apply_fast_weight_updates(MoueModel& model, const ForwardResult& fwd,
                               const TrainConfig& cfg) {
  const auto& map = model.map;
  for (int sg = 0; sg < map.num_state_groups(); ++sg) {
    std::vector<int> members;
    for (int l = 0; l < map.num_layers(); ++l) {
      if (map.state_group(l) == sg && !map.window(l).empty()) members.push_back(l);
    }
    if (members.empty()) continue;
    if (model.layers[static_cast<std::size_t>(members.front())].router.beta == 0.0) continue;

    Eigen::Index rows = 0;
    for (int l : members) rows += fwd.layer_fwd[static_cast<std::size_t>(l)].keys.rows();
    const auto& first = fwd.layer_fwd[static_cast<std::size_t>(members.front())];
    Matrix keys(rows, first.keys.cols());
    Matrix targets(rows, first.p_star.cols());
    Eigen::Index at = 0;
    for (int l : members) {
      const auto& lf = fwd.layer_fwd[static_cast<std::size_t>(l)];
      keys.middleRows(at, lf.keys.rows()) = lf.keys;
      targets.middleRows(at, lf.p_star.rows()) = lf.p_star;
      at += lf.keys.rows();
    }
    double eta = cfg.eta;
    if (cfg.eta_depth_decay) {
      eta /= 1.0 + static_cast<double>(map.group_of(members.front()));
    }
    fast_weight_update(model.states[static_cast<std::size_t>(sg)], keys, targets, eta);
  }
}

}  // namespace

StepMetrics backward_step(MoueModel& model, Optimizer& opt,
                          const Eigen::Ref<const IntMatrix>& batch, const TrainConfig& cfg,
                          double t) {
  ForwardResult fwd = forward_loss(model, batch, cfg, t);
  if (!std::isfinite(fwd.total_loss)) throw DivergenceError("diverged");

  GradBuffers grads = backward(model, fwd, batch, cfg);
  for (const auto& ref : tensor_refs(grads)) {
    for (Eigen::Index i = 0; i < ref.size; ++i) {
      if (!std::isfinite(ref.data[i])) throw DivergenceError("divergence in " + ref.name);
    }
  }
  opt.apply(model, grads);
  apply_fast_weight_updates(model, fwd, cfg);

  StepMetrics metrics;
  metrics.task_loss = fwd.task_loss;
  metrics.aux_loss = fwd.aux_loss;
  metrics.stats = std::move(fwd.stats);
  for (const auto& lf : fwd.layer_fwd) {
    for (const auto& sel : lf.selections) {
      for (int id : sel.expert_ids) {
        if (id >= model.map.universal_base()) ++metrics.universal_selections;
      }
    }
  }
  return metrics;
}

namespace {

bool selections_match(const ForwardResult& a, const ForwardResult& b) {
  if (a.layer_fwd.size() != b.layer_fwd.size()) return false;
  for (std::size_t l = 0; l < a.layer_fwd.size(); ++l) {
    const auto& sa = a.layer_fwd[l].selections;
    const auto& sb = b.layer_fwd[l].selections;
    if (sa.size() != sb.size()) return false;
    for (std::size_t t = 0; t < sa.size(); ++t) {
      if (sa[t].expert_ids != sb[t].expert_ids) return false;
    }
  }
  return true;
}

}  // namespace

double grad_check(const MoueModel& model, const Eigen::Ref<const IntMatrix>& batch,
                  const TrainConfig& cfg, double t, double epsilon, int coords_per_tensor,
                  std::uint64_t seed) {
  MoueModel work = model;
  const ForwardResult base = forward_loss(work, batch, cfg, t);
  GradBuffers analytic = backward(work, base, batch, cfg);

  auto params = tensor_refs(work);
  auto grads = tensor_refs(analytic);
  SplitMix64 rng(seed);
  double max_rel = 0.0;

  for (std::size_t ti = 0; ti < params.size(); ++ti) {
    const Eigen::Index size = params[ti].size;
    std::unordered_set<Eigen::Index> coords;
    if (size <= coords_per_tensor) {
      for (Eigen::Index i = 0; i < size; ++i) coords.insert(i);
    } else {
      while (coords.size() < static_cast<std::size_t>(coords_per_tensor)) {
        coords.insert(static_cast<Eigen::Index>(rng.next_u64() % static_cast<std::uint64_t>(size)));
      }
    }
    for (Eigen::Index c : coords) {
      double& p = params[ti].data[c];
      const double saved = p;
      p = saved + epsilon;
      const ForwardResult plus = forward_loss(work, batch, cfg, t);
      p = saved - epsilon;
      const ForwardResult minus = forward_loss(work, batch, cfg, t);
      p = saved;
      // Tie-margin guard: top-k must be stable across the stencil.
      if (!selections_match(base, plus) || !selections_match(base, minus)) continue;
      const double fd = (plus.total_loss - minus.total_loss) / (2.0 * epsilon);
      const double a = grads[ti].data[c];
      // Central differences resolve |L|*eps_machine/epsilon (~1e-9 here);
      // the floor keeps sub-resolution coordinates from reading as noise.
      const double rel = std::abs(a - fd) / std::max(std::abs(a) + std::abs(fd), 1e-4);
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace moue
