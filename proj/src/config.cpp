#include "moue/config.hpp"

#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>

namespace moue {

namespace {

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("expected boolean, got '" + v + "'");
}

template <class T>
T parse_number(const std::string& v) {
  std::istringstream is(v);
  T out;
  is >> out;
  if (is.fail() || !is.eof()) throw ConfigError("malformed number '" + v + "'");
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(std::istream& is) {
  ExperimentConfig cfg;
  using Setter = std::function<void(const std::string&)>;
  const std::map<std::string, Setter> keys = {
      {"seed", [&](const std::string& v) { cfg.seed = parse_number<std::uint64_t>(v); }},
      {"output.dir", [&](const std::string& v) { cfg.output_dir = v; }},
      {"topology.num_layers",
       [&](const std::string& v) { cfg.topo.num_layers = parse_number<int>(v); }},
      {"topology.group_size",
       [&](const std::string& v) { cfg.topo.group_size = parse_number<int>(v); }},
      {"topology.num_universal",
       [&](const std::string& v) { cfg.topo.num_universal = parse_number<int>(v); }},
      {"topology.window", [&](const std::string& v) { cfg.topo.window = parse_number<int>(v); }},
      {"topology.stride", [&](const std::string& v) { cfg.topo.stride = parse_number<int>(v); }},
      {"topology.locals_per_layer",
       [&](const std::string& v) { cfg.topo.locals_per_layer = parse_number<int>(v); }},
      {"topology.top_k", [&](const std::string& v) { cfg.topo.top_k = parse_number<int>(v); }},
      {"topology.variant",
       [&](const std::string& v) { cfg.variant = topology_kind_from_string(v); }},
      {"model.dim", [&](const std::string& v) { cfg.dims.dim = parse_number<int>(v); }},
      {"model.ffn_dim", [&](const std::string& v) { cfg.dims.ffn_dim = parse_number<int>(v); }},
      {"model.key_dim", [&](const std::string& v) { cfg.dims.key_dim = parse_number<int>(v); }},
      {"model.vocab", [&](const std::string& v) { cfg.dims.vocab = parse_number<int>(v); }},
      {"train.seq_len", [&](const std::string& v) { cfg.seq_len = parse_number<int>(v); }},
      {"train.batch", [&](const std::string& v) { cfg.batch = parse_number<int>(v); }},
      {"train.steps", [&](const std::string& v) { cfg.steps = parse_number<long>(v); }},
      {"train.lr", [&](const std::string& v) { cfg.lr = parse_number<double>(v); }},
      {"train.momentum", [&](const std::string& v) { cfg.momentum = parse_number<double>(v); }},
      {"train.lambda_aux",
       [&](const std::string& v) { cfg.lambda_aux = parse_number<double>(v); }},
      {"train.objective",
       [&](const std::string& v) {
         if (v == "uelb") {
           cfg.objective = BalanceObjective::uelb;
         } else if (v == "standard_lbl") {
           cfg.objective = BalanceObjective::standard_lbl;
         } else {
           throw ConfigError("train.objective must be uelb or standard_lbl");
         }
       }},
      {"train.init_checkpoint", [&](const std::string& v) { cfg.init_checkpoint = v; }},
      {"balance.alpha_loc",
       [&](const std::string& v) { cfg.alpha_loc = parse_number<double>(v); }},
      {"balance.alpha_u", [&](const std::string& v) { cfg.alpha_u = parse_number<double>(v); }},
      {"balance.calibrate", [&](const std::string& v) { cfg.calibrate = parse_bool(v); }},
      {"router.beta", [&](const std::string& v) { cfg.beta = parse_number<double>(v); }},
      {"router.eta", [&](const std::string& v) { cfg.eta = parse_number<double>(v); }},
      {"router.eta_depth_decay",
       [&](const std::string& v) { cfg.eta_depth_decay = parse_bool(v); }},
      {"router.p_star",
       [&](const std::string& v) {
         if (v == "soft") {
           cfg.hard_p_star = false;
         } else if (v == "hard") {
           cfg.hard_p_star = true;
         } else {
           throw ConfigError("router.p_star must be soft or hard");
         }
       }},
      {"schedule.warmup", [&](const std::string& v) { cfg.warmup = parse_bool(v); }},
      {"schedule.warmup_b0",
       [&](const std::string& v) { cfg.warmup_b0 = parse_number<double>(v); }},
      {"schedule.warmup_r",
       [&](const std::string& v) { cfg.warmup_r = parse_number<double>(v); }},
      {"schedule.suppression",
       [&](const std::string& v) {
         if (v == "auto") {
           cfg.suppression = Suppression::automatic;
         } else {
           cfg.suppression = parse_bool(v) ? Suppression::on : Suppression::off;
         }
       }},
      {"schedule.suppress_beta0",
       [&](const std::string& v) { cfg.suppress_beta0 = parse_number<double>(v); }},
      {"schedule.suppress_t_end",
       [&](const std::string& v) { cfg.suppress_t_end = parse_number<double>(v); }},
      {"corpus.domains",
       [&](const std::string& v) { cfg.corpus_domains = parse_number<int>(v); }},
      {"convert.band_lo",
       [&](const std::string& v) { cfg.convert_band_lo = parse_number<double>(v); }},
      {"convert.band_hi",
       [&](const std::string& v) { cfg.convert_band_hi = parse_number<double>(v); }},
      {"convert.calibration_sequences",
       [&](const std::string& v) { cfg.convert_calibration_sequences = parse_number<int>(v); }},
      {"convert.keep_sources",
       [&](const std::string& v) { cfg.convert_keep_sources = parse_bool(v); }},
      {"convert.router_noise",
       [&](const std::string& v) { cfg.convert_router_noise = parse_number<double>(v); }},
      {"analyze.sequences",
       [&](const std::string& v) { cfg.analyze_sequences = parse_number<int>(v); }},
  };

  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // Trim.
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    auto strip = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t");
      return s.substr(a, b - a + 1);
    };
    const std::string key = strip(line.substr(0, eq));
    const std::string value = strip(line.substr(eq + 1));
    const auto it = keys.find(key);
    if (it == keys.end()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    try {
      it->second(value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + " (" + key + "): " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path.string());
  return parse(is);
}

ModelConfig ExperimentConfig::model_config() const { return {dims, topo, variant}; }

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.seq_len = seq_len;
  t.batch = batch;
  t.steps = steps;
  t.lr = lr;
  t.momentum = momentum;
  t.seed = seed;
  t.lambda_aux = lambda_aux;
  t.objective = objective;
  t.alphas.alpha_loc = alpha_loc;
  t.alphas.alpha_u = alpha_u;
  if (calibrate) {
    t.alphas = calibrate_alphas(topo.group_size, topo.num_universal, topo.top_k, t.alphas);
  }
  t.warmup = warmup;
  t.warmup_b0 = warmup_b0;
  t.warmup_r = warmup_r;
  t.suppression = suppression == Suppression::on;
  t.suppress_beta0 = suppress_beta0;
  t.suppress_t_end = suppress_t_end;
  t.eta = eta;
  t.eta_depth_decay = eta_depth_decay;
  t.hard_p_star = hard_p_star;
  return t;
}

}  // namespace moue
