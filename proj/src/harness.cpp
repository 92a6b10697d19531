#include "moue/harness.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "moue/balance.hpp"

namespace moue {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);  // binary: LF line endings everywhere
  if (!os) throw FormatError("cannot write " + path.string());
  return os;
}

void write_budget_csv(const std::filesystem::path& path, const ParameterBudget& b) {
  auto os = open_out(path);
  os << "activated,total_physical,virtual\n"
     << b.activated << ',' << b.total_physical << ',' << b.virtual_params << '\n';
}

void write_heatmap_csv(const std::filesystem::path& path, const LoadStats& stats,
                       const ConnectivityMap& map) {
  auto os = open_out(path);
  os << "layer";
  for (int e = 0; e < map.num_experts(); ++e) os << ",e" << e;
  os << '\n';
  for (int l = 0; l < map.num_layers(); ++l) {
    os << (l + 1);
    const auto& ls = stats.layers[static_cast<std::size_t>(l)];
    for (int e = 0; e < map.num_experts(); ++e) os << ',' << fmt(ls.dispatch[e]);
    os << '\n';
  }
}

// Metadata-aware suppression resolution shared by train and analyze.
void resolve_suppression(const Checkpoint& ckpt, const ExperimentConfig& cfg, TrainConfig& t) {
  if (cfg.suppression == ExperimentConfig::Suppression::on) {
    t.suppression = true;
    return;
  }
  if (cfg.suppression == ExperimentConfig::Suppression::off) {
    t.suppression = false;
    return;
  }
  if (ckpt.meta_or("converted", "0") == "1" && ckpt.metadata.count("schedule.suppress_beta0")) {
    t.suppression = true;
    t.suppress_beta0 = std::stod(ckpt.meta("schedule.suppress_beta0"));
    t.suppress_t_end = std::stod(ckpt.meta("schedule.suppress_t_end"));
  }
}

}  // namespace

std::vector<double> group_dispatch_fractions(const LoadStats& stats, const ConnectivityMap& map,
                                             int group) {
  std::vector<double> fractions;
  for (int l = 0; l < map.num_layers(); ++l) {
    if (map.group_of(l) != group) continue;
    const auto& ls = stats.layers[static_cast<std::size_t>(l)];
    for (int id : map.allow_list(l)) fractions.push_back(ls.dispatch[id]);
  }
  return fractions;
}

TrainReport run_train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  TrainConfig tc = cfg.train_config();

  MoueModel model = [&] {
    if (cfg.init_checkpoint.empty()) {
      MoueModel m = init_model(cfg.model_config(), cfg.seed);
      for (auto& layer : m.layers) layer.router.beta = cfg.beta;
      return m;
    }
    const Checkpoint ckpt = Checkpoint::load_file(cfg.init_checkpoint);
    resolve_suppression(ckpt, cfg, tc);
    return load_checkpoint(ckpt);
  }();
  if (cfg.init_checkpoint.empty() && cfg.suppression == ExperimentConfig::Suppression::on) {
    tc.suppression = true;
  }

  SyntheticCorpus corpus(model.cfg.dims.vocab, cfg.corpus_domains, cfg.seed);
  Optimizer opt(model, tc.lr, tc.momentum);

  TrainReport report;
  report.budget = parameter_budget(model.cfg.dims, model.map);

  // Heatmap f-bar accumulates over the last tenth of training.
  const long heat_from = std::max<long>(0, tc.steps - std::max<long>(1, tc.steps / 10));
  LoadStats heat;
  heat.layers.assign(static_cast<std::size_t>(model.map.num_layers()), LayerStats{});

  auto loss_csv = open_out(out_dir / "loss_curve.csv");
  loss_csv << "step,task_loss,aux_loss\n";
  auto skew_csv = open_out(out_dir / "skew_trace.csv");
  skew_csv << "step,group,max_mean_ratio\n";

  for (long step = 0; step < tc.steps; ++step) {
    const double t = static_cast<double>(step) / static_cast<double>(tc.steps);
    const IntMatrix batch = corpus.batch(step, tc.batch, tc.seq_len);
    StepMetrics metrics = backward_step(model, opt, batch, tc, t);

    loss_csv << step << ',' << fmt(metrics.task_loss) << ',' << fmt(metrics.aux_loss) << '\n';
    report.task_loss.push_back(metrics.task_loss);
    report.aux_loss.push_back(metrics.aux_loss);
    report.universal_selections.push_back(metrics.universal_selections);
    double beta_t = 0.0;
    if (tc.suppression) {
      beta_t = BiasSchedule{BiasSchedule::Kind::suppression, tc.suppress_beta0, tc.suppress_t_end}
                   .value_at(t);
    }
    report.suppress_beta.push_back(beta_t);

    std::vector<double> ratios;
    for (int g = 0; g < model.map.num_groups(); ++g) {
      const double ratio =
          max_mean_ratio(group_dispatch_fractions(metrics.stats, model.map, g));
      skew_csv << step << ',' << g << ',' << fmt(ratio) << '\n';
      ratios.push_back(ratio);
    }
    report.group_ratio.push_back(std::move(ratios));

    if (step >= heat_from) {
      for (std::size_t l = 0; l < heat.layers.size(); ++l) {
        heat.layers[l] = merge_stats(heat.layers[l], metrics.stats.layers[l]);
      }
    }
  }

  write_heatmap_csv(out_dir / "heatmap.csv", heat, model.map);
  write_budget_csv(out_dir / "budget.csv", report.budget);
  report.checkpoint_path = out_dir / "model.ckpt";
  save_checkpoint(model).save_file(report.checkpoint_path);
  return report;
}

void run_topo(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const ConnectivityMap map = build_variant(cfg.variant, cfg.topo);

  {
    auto os = open_out(out_dir / "connectivity.csv");
    map.write_csv(os);
  }
  {
    auto os = open_out(out_dir / "exposure.csv");
    os << "ring_position,global_id,exposure\n";
    const auto degrees = exposure_degrees(map);
    for (int p = 0; p < map.num_universal(); ++p) {
      os << p << ',' << map.universal_global_id(p) << ','
         << degrees[static_cast<std::size_t>(p)] << '\n';
    }
  }
  {
    auto os = open_out(out_dir / "pathcount.txt");
    const double ln_paths = path_count_log(map, cfg.topo.top_k);
    os << "ln_paths " << fmt(ln_paths) << '\n';
    // Exact product while it fits a signed 64-bit count.
    bool exact = true;
    unsigned long long product = 1;
    for (int l = 0; l < map.num_layers() && exact; ++l) {
      const int w = static_cast<int>(map.window(l).size());
      unsigned long long choose = 1;
      for (int i = 0; i < cfg.topo.top_k; ++i) {
        choose = choose * static_cast<unsigned long long>(w - i) / (i + 1);
      }
      if (choose != 0 && product > (1ULL << 62) / choose) {
        exact = false;
      } else {
        product *= choose;
      }
    }
    if (exact && product < (1ULL << 63)) {
      os << "paths " << product << '\n';
    } else {
      os << "paths overflow\n";
    }
  }
  write_budget_csv(out_dir / "budget.csv", parameter_budget(cfg.dims, map));
}

ConvertReport run_convert(const std::filesystem::path& src_checkpoint,
                          const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  if (!std::filesystem::exists(src_checkpoint)) {
    throw FormatError("not found: " + src_checkpoint.string());
  }
  const Checkpoint src = Checkpoint::load_file(src_checkpoint);

  ConvertReport report;
  report.checkpoint_path = out_dir / "converted.ckpt";
  if (cfg.topo.num_universal == 0) {
    report.passthrough = true;
    convert_to_moue(src, {}, ConvertOptions{}).save_file(report.checkpoint_path);
    return report;
  }

  const MoueModel moe = load_checkpoint(src);
  SyntheticCorpus corpus(moe.cfg.dims.vocab, cfg.corpus_domains, cfg.seed);
  const IntMatrix calibration =
      corpus.batch(0, cfg.convert_calibration_sequences, cfg.seq_len);
  const ActivationProfile profile = collect_activation_profile(moe, calibration);

  const int n_layers = moe.cfg.topo.num_layers;
  int band_lo = static_cast<int>(std::floor(cfg.convert_band_lo * n_layers));
  int band_hi = static_cast<int>(std::ceil(cfg.convert_band_hi * n_layers));
  band_lo = std::max(0, std::min(band_lo, n_layers - 1));
  band_hi = std::max(band_lo + 1, std::min(band_hi, n_layers));

  report.selection =
      select_universal_experts(profile, cfg.topo.num_universal, band_lo, band_hi);
  for (const auto& [l, e] : report.selection) {
    report.selection_rates.push_back(profile.rates(l, e));
  }

  ConvertOptions opts;
  opts.topo = cfg.topo;
  opts.topo.num_layers = moe.cfg.topo.num_layers;
  opts.topo.locals_per_layer = moe.cfg.topo.locals_per_layer;
  opts.variant = cfg.variant;
  opts.keep_sources = cfg.convert_keep_sources;
  opts.router_noise = cfg.convert_router_noise;
  opts.seed = cfg.seed;
  opts.suppress_beta0 = cfg.suppress_beta0;
  opts.suppress_t_end = cfg.suppress_t_end;
  convert_to_moue(src, report.selection, opts).save_file(report.checkpoint_path);
  return report;
}

void run_analyze(const std::filesystem::path& checkpoint, const ExperimentConfig& cfg,
                 const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  if (!std::filesystem::exists(checkpoint)) {
    throw FormatError("not found: " + checkpoint.string());
  }
  const Checkpoint ckpt = Checkpoint::load_file(checkpoint);
  const MoueModel model = load_checkpoint(ckpt);
  const ConnectivityMap& map = model.map;

  {
    auto os = open_out(out_dir / "cka_matrix.csv");
    os << "expert";
    for (int e = 0; e < map.num_experts(); ++e) os << ",e" << e;
    os << '\n';
    for (int a = 0; a < map.num_experts(); ++a) {
      os << 'e' << a;
      for (int b = 0; b < map.num_experts(); ++b) {
        double v = std::numeric_limits<double>::quiet_NaN();
        try {
          v = cka_similarity(model.expert(a), model.expert(b));
        } catch (const std::invalid_argument&) {
          // zeroed expert: leave the cell as nan
        }
        os << ',' << fmt(v);
      }
      os << '\n';
    }
  }

  TrainConfig tc = cfg.train_config();
  tc.warmup = false;
  resolve_suppression(ckpt, cfg, tc);

  SyntheticCorpus corpus(model.cfg.dims.vocab, cfg.corpus_domains, cfg.seed);
  LoadStats merged;
  merged.layers.assign(static_cast<std::size_t>(map.num_layers()), LayerStats{});
  Matrix domain_rates = Matrix::Zero(corpus.num_domains(), std::max(map.num_universal(), 1));

  for (int d = 0; d < corpus.num_domains(); ++d) {
    const IntMatrix eval = corpus.sample(d, cfg.analyze_sequences, cfg.seq_len);
    const ForwardResult fwd = forward_loss(model, eval, tc, 0.0);
    for (std::size_t l = 0; l < merged.layers.size(); ++l) {
      merged.layers[l] = merge_stats(merged.layers[l], fwd.stats.layers[l]);
    }
    for (int p = 0; p < map.num_universal(); ++p) {
      const int id = map.universal_global_id(p);
      double total = 0.0;
      for (const auto& ls : fwd.stats.layers) total += ls.dispatch[id];
      domain_rates(d, p) = total;
    }
  }

  write_heatmap_csv(out_dir / "heatmap.csv", merged, map);
  {
    auto os = open_out(out_dir / "ue_ratio_per_layer.csv");
    os << "layer,ue_ratio\n";
    for (int l = 0; l < map.num_layers(); ++l) {
      double ratio = 0.0;
      for (int p : map.window(l)) {
        ratio += merged.layers[static_cast<std::size_t>(l)].dispatch[map.universal_global_id(p)];
      }
      os << (l + 1) << ',' << fmt(ratio) << '\n';
    }
  }
  {
    auto os = open_out(out_dir / "domain_activation.csv");
    os << "domain";
    for (int p = 0; p < map.num_universal(); ++p) os << ",ue" << p;
    os << '\n';
    for (int d = 0; d < corpus.num_domains(); ++d) {
      os << d;
      for (int p = 0; p < map.num_universal(); ++p) os << ',' << fmt(domain_rates(d, p));
      os << '\n';
    }
  }
}

}  // namespace moue
