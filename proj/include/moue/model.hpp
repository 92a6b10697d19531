#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moue/balance.hpp"
#include "moue/routing.hpp"
#include "moue/topology.hpp"
#include "moue/types.hpp"

namespace moue {

/// Two-matrix expert FFN, down(silu(up(x))).
struct ExpertParams {
  Matrix up;    // d x ffn
  Matrix down;  // ffn x d
};

double silu(double x);
double silu_grad(double x);

Vector expert_forward(const ExpertParams& e, const Eigen::Ref<const Vector>& x);

struct ModelConfig {
  ModelDims dims;
  TopologyConfig topo;
  TopologyKind variant = TopologyKind::staggered;
};

struct LayerParams {
  std::vector<ExpertParams> locals;
  RouterParams router;
};

/// Tiny trainable MoUE language model. The universal pool is stored once;
/// layers address it through the connectivity map, so a parameter change in
/// the pool is seen by every exposed layer.
struct MoueModel {
  ModelConfig cfg;
  ConnectivityMap map;
  Matrix embedding;  // vocab x d
  Matrix readout;    // d x vocab
  std::vector<LayerParams> layers;
  std::vector<ExpertParams> universal;
  std::vector<FastWeightState> states;  // one per distinct allow-list

  ExpertParams& expert(int global_id);
  const ExpertParams& expert(int global_id) const;
};

/// Seeded random initialization (1/sqrt(fan_in) normal weights, zero biases
/// and fast-weight state).
MoueModel init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Schedule context for one forward pass; t is training progress in [0,1].
struct RoutingControls {
  std::vector<BiasSchedule> schedules;
  double t = 0.0;
};

/// One MoE layer applied to its (already token-mixed) input rows:
/// y = x + sum of gated expert outputs. Returns the routing artifacts the
/// balance module and the fast-weight update consume.
struct LayerForward {
  Matrix h_next;
  std::vector<Selection> selections;
  std::vector<Vector> probs;  // masked softmax per token, global expert axis
  Matrix keys;                // N x d_k (empty when the contextual path is off)
  Matrix p_star;              // N x window, soft or hard routing target
  // backward caches
  Matrix pre_act;  // N x (k*ffn), selected experts' up-projection outputs
  Matrix act;      // N x (k*ffn), silu of the above
};

LayerForward moue_layer_forward(const MoueModel& model, const Eigen::Ref<const Matrix>& x,
                                int layer, const RoutingControls& controls, bool hard_p_star);

/// Fixed causal mean-pooling mixer (the attention stand-in):
/// out_t = h_t + mean(h_0..h_t), applied independently per sequence.
Matrix causal_mix(const Eigen::Ref<const Matrix>& h, int seq_len);

struct TrainConfig {
  int seq_len = 16;
  int batch = 8;
  long steps = 2000;
  double lr = 0.1;
  double momentum = 0.0;
  std::uint64_t seed = 0;
  double lambda_aux = 1e-3;
  BalanceObjective objective = BalanceObjective::uelb;
  AlphaConfig alphas;

  bool warmup = true;
  double warmup_b0 = 0.75;
  double warmup_r = 0.05;
  bool suppression = false;
  double suppress_beta0 = 1e4;
  double suppress_t_end = 0.5;

  double eta = 0.1;
  bool eta_depth_decay = false;
  bool hard_p_star = false;

  std::vector<BiasSchedule> schedules() const;
  RoutingControls controls_at(double t) const;
};

/// Full forward pass with backward caches. Batch rows are sequences of
/// token IDs; task loss is next-token cross entropy with causal shift.
struct ForwardResult {
  double task_loss = 0.0;
  double aux_loss = 0.0;
  double total_loss = 0.0;
  LoadStats stats;
  // caches
  std::vector<Matrix> layer_inputs;  // post-mixer x per layer
  std::vector<LayerForward> layer_fwd;
  Matrix h_final;
  Matrix logits;  // N x vocab
};

ForwardResult forward_loss(const MoueModel& model, const Eigen::Ref<const IntMatrix>& batch,
                           const TrainConfig& cfg, double t);

/// Gradients, same tensor layout as the model.
struct GradBuffers {
  Matrix embedding;
  Matrix readout;
  std::vector<LayerParams> layers;  // beta unused
  std::vector<ExpertParams> universal;
};

GradBuffers zeros_like(const MoueModel& model);

GradBuffers backward(const MoueModel& model, const ForwardResult& fwd,
                     const Eigen::Ref<const IntMatrix>& batch, const TrainConfig& cfg);

/// Flat views over every trainable tensor, identical order for the model
/// and its gradient buffers (FD checks, SGD, divergence scans).
struct TensorRef {
  std::string name;
  double* data;
  Eigen::Index size;
};

std::vector<TensorRef> tensor_refs(MoueModel& model);
std::vector<TensorRef> tensor_refs(GradBuffers& grads);

/// SGD with optional momentum; velocity buffers live here.
class Optimizer {
 public:
  Optimizer(const MoueModel& model, double lr, double momentum);
  void apply(MoueModel& model, GradBuffers& grads);
  double lr() const { return lr_; }

 private:
  double lr_;
  double momentum_;
  GradBuffers velocity_;
};

struct StepMetrics {
  double task_loss = 0.0;
  double aux_loss = 0.0;
  LoadStats stats;
  long universal_selections = 0;  // top-k slots that landed on the pool
};

/// One training step at progress t: forward, analytic backward, parameter
/// update, then the forward-only fast-weight update (once per state group,
/// keys and targets concatenated over the group's layers). Throws
/// DivergenceError on non-finite loss or gradient.
StepMetrics backward_step(MoueModel& model, Optimizer& opt,
                          const Eigen::Ref<const IntMatrix>& batch, const TrainConfig& cfg,
                          double t);

/// Central finite differences over sampled coordinates of every tensor
/// (at least `coords_per_tensor` each, full tensor when smaller) against the
/// analytic gradient of task + lambda*aux. Coordinates whose perturbation
/// flips any top-k set are skipped (tie-margin guard). Returns the max of
/// |a-f| / max(|a|+|f|, 1e-4); the floor is the resolution central
/// differences actually have at these loss scales, so coordinates with
/// gradients below it are held to the same absolute budget instead of a
/// meaningless ratio.
double grad_check(const MoueModel& model, const Eigen::Ref<const IntMatrix>& batch,
                  const TrainConfig& cfg, double t, double epsilon, int coords_per_tensor,
                  std::uint64_t seed);

}  // namespace moue
