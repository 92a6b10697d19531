#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "moue/harness.hpp"

namespace {

// Exit codes: 0 ok, 1 usage/config, 2 data/format, 3 numerical divergence.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitFormat = 2;
constexpr int kExitDiverged = 3;

moue::ExperimentConfig load_config(const std::string& path, bool seed_set,
                                   std::uint64_t seed_override, const std::string& out_override) {
  moue::ExperimentConfig cfg = path.empty() ? moue::ExperimentConfig{}
                                            : moue::ExperimentConfig::parse_file(path);
  if (seed_set) cfg.seed = seed_override;
  if (!out_override.empty()) cfg.output_dir = out_override;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MoUE experiment harness: staggered cross-layer expert reuse at desk scale"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  app.add_option("--config", config_path, "key=value experiment config")->capture_default_str();
  app.add_option("--out", out_dir, "output directory (overrides output.dir)");
  app.add_option("--seed", seed, "seed override")->each([&](const std::string&) { seed_set = true; });

  auto* train = app.add_subcommand("train", "train a model and emit CSV metrics");
  auto* convert = app.add_subcommand("convert", "convert a MoE checkpoint to MoUE");
  std::string src_path;
  convert->add_option("--src", src_path, "source MoE checkpoint")->required();
  auto* topo = app.add_subcommand("topo", "emit connectivity/exposure/path-count reports");
  auto* analyze = app.add_subcommand("analyze", "emit CKA/utilization reports for a checkpoint");
  std::string ckpt_path;
  analyze->add_option("--ckpt", ckpt_path, "checkpoint to analyze")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    const moue::ExperimentConfig cfg = load_config(config_path, seed_set, seed, out_dir);
    const std::filesystem::path out = cfg.output_dir;

    if (train->parsed()) {
      const moue::TrainReport report = moue::run_train(cfg, out);
      std::printf("trained %zu steps, final task loss %.6f, artifacts in %s\n",
                  report.task_loss.size(),
                  report.task_loss.empty() ? 0.0 : report.task_loss.back(), out.c_str());
    } else if (convert->parsed()) {
      const moue::ConvertReport report = moue::run_convert(src_path, cfg, out);
      if (report.passthrough) {
        std::fprintf(stderr, "warning: num_universal = 0, passthrough copy written\n");
      } else {
        std::printf("selected universal experts (layer, expert, rate):\n");
        for (std::size_t i = 0; i < report.selection.size(); ++i) {
          std::printf("  ue%zu  layer %d  expert %d  rate %.4f\n", i,
                      report.selection[i].first + 1, report.selection[i].second,
                      report.selection_rates[i]);
        }
      }
      std::printf("wrote %s\n", report.checkpoint_path.c_str());
    } else if (topo->parsed()) {
      moue::run_topo(cfg, out);
      std::printf("topology reports in %s\n", out.c_str());
    } else if (analyze->parsed()) {
      moue::run_analyze(ckpt_path, cfg, out);
      std::printf("analysis reports in %s\n", out.c_str());
    }
    return kExitOk;
  } catch (const moue::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const moue::DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitDiverged;
  } catch (const moue::FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFormat;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFormat;
  }
}
