#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "moue/config.hpp"
#include "moue/corpus.hpp"
#include "moue/model.hpp"
#include "moue/warmstart.hpp"

namespace moue {

/// Per-run record returned to callers (the CLI only needs the artifacts on
/// disk; tests read the in-memory traces).
struct TrainReport {
  std::vector<double> task_loss;                 // per step
  std::vector<double> aux_loss;                  // per step
  std::vector<std::vector<double>> group_ratio;  // per step, per connectivity group
  std::vector<long> universal_selections;        // per step
  std::vector<double> suppress_beta;             // per step, 0 when disabled
  ParameterBudget budget;
  std::filesystem::path checkpoint_path;
};

/// Train per config and emit loss_curve.csv, skew_trace.csv, heatmap.csv,
/// budget.csv and model.ckpt under out_dir. Deterministic: identical
/// (config, seed) produce byte-identical artifacts.
TrainReport run_train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Build the configured topology and emit connectivity.csv, exposure.csv,
/// pathcount.txt and budget.csv.
void run_topo(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

struct ConvertReport {
  std::vector<std::pair<int, int>> selection;  // (layer, expert) sources
  std::vector<double> selection_rates;
  std::filesystem::path checkpoint_path;
  bool passthrough = false;  // n_u = 0
};

/// Activation-profile selection + conversion; writes converted.ckpt.
ConvertReport run_convert(const std::filesystem::path& src_checkpoint,
                          const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Offline analysis of a checkpoint: cka_matrix.csv, ue_ratio_per_layer.csv,
/// heatmap.csv and domain_activation.csv.
void run_analyze(const std::filesystem::path& checkpoint, const ExperimentConfig& cfg,
                 const std::filesystem::path& out_dir);

/// Flattened per-exposure dispatch fractions of one connectivity group
/// (every layer contributes its reachable entries); feeds max_mean_ratio.
std::vector<double> group_dispatch_fractions(const LoadStats& stats, const ConnectivityMap& map,
                                             int group);

}  // namespace moue
