#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "moue/model.hpp"

namespace moue {

/// Experiment configuration: UTF-8 key=value lines, '#' comments, LF line
/// endings. Unknown keys are rejected. Defaults follow the reported
/// training/routing hyperparameters where they exist (G = 5,
/// alpha_loc = 1.0, alpha_u = 0.5, warmup b0 = 0.75, warmup r = 0.05,
/// router beta = 0.1, fast-weight eta = 0.1, aux coefficient 1e-3). The
/// full key list lives in docs/formats.md.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  TopologyConfig topo{/*num_layers=*/6, /*group_size=*/5, /*num_universal=*/6,
                      /*window=*/3,     /*stride=*/1,     /*locals_per_layer=*/2,
                      /*top_k=*/2};
  TopologyKind variant = TopologyKind::staggered;

  ModelDims dims{/*dim=*/16, /*ffn_dim=*/32, /*key_dim=*/8, /*vocab=*/32};

  int seq_len = 16;
  int batch = 8;
  long steps = 2000;
  double lr = 0.2;
  double momentum = 0.0;
  double lambda_aux = 1e-3;
  BalanceObjective objective = BalanceObjective::uelb;
  std::string init_checkpoint;  // optional warm start

  double alpha_loc = 1.0;
  double alpha_u = 0.5;
  bool calibrate = false;

  double beta = 0.1;
  double eta = 0.1;
  bool eta_depth_decay = false;
  bool hard_p_star = false;

  bool warmup = true;
  double warmup_b0 = 0.75;
  double warmup_r = 0.05;
  // auto: enabled iff the initial checkpoint carries a suppression schedule.
  enum class Suppression { automatic, on, off };
  Suppression suppression = Suppression::automatic;
  double suppress_beta0 = 1e4;
  double suppress_t_end = 0.5;

  int corpus_domains = 2;

  double convert_band_lo = 1.0 / 3.0;  // fraction of depth
  double convert_band_hi = 2.0 / 3.0;
  int convert_calibration_sequences = 32;
  bool convert_keep_sources = true;
  double convert_router_noise = 1e-3;

  int analyze_sequences = 32;

  /// Parse from stream/file; throws ConfigError on unknown keys or
  /// malformed values.
  static ExperimentConfig parse(std::istream& is);
  static ExperimentConfig parse_file(const std::filesystem::path& path);

  ModelConfig model_config() const;
  TrainConfig train_config() const;  // suppression resolved by the harness
};

}  // namespace moue
