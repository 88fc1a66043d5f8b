// Command-line front end: fit (tabular), segment (images), sample-prior (urn
// trajectories), and metrics (label-file comparison). Runs are configured by
// a flat key=value file plus per-key flag overrides, and write their artifacts
// (labels, trace, report, optional responsibilities and label map) into an
// output directory.
//
// Exit codes: 0 converged, 1 error, 2 finished without convergence.

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Dense>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kpyp/kpyp.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct RunSettings {
  kpyp::VBConfig vb;
  bool deterministic = false;
  bool seed_from_cli = false;
};

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::runtime_error("config: '" + key + "' expects a boolean, got '" + v + "'");
}

kpyp::LocationMode parse_location_mode(const std::string& v) {
  if (v == "random") return kpyp::LocationMode::Random;
  if (v == "optimized") return kpyp::LocationMode::Optimized;
  throw std::runtime_error("location_mode must be 'random' or 'optimized', got '" + v + "'");
}

kpyp::KernelFamily parse_kernel(const std::string& v) {
  if (v == "rbf") return kpyp::KernelFamily::RBF;
  if (v == "one") return kpyp::KernelFamily::One;
  throw std::runtime_error("kernel must be 'rbf' or 'one', got '" + v + "'");
}

kpyp::CovarianceType parse_covariance(const std::string& v) {
  if (v == "full") return kpyp::CovarianceType::Full;
  if (v == "diagonal" || v == "diag") return kpyp::CovarianceType::Diagonal;
  throw std::runtime_error("covariance must be 'full' or 'diagonal', got '" + v + "'");
}

/// Applies one key=value pair onto the settings; shared by the config-file
/// reader and (indirectly) the flag overrides.
void apply_key(RunSettings& s, const std::string& key, const std::string& value) {
  double eta1 = s.vb.alpha_prior.shape, eta2 = s.vb.alpha_prior.rate;
  if (key == "truncation") s.vb.truncation = std::stoi(value);
  else if (key == "eta1") { eta1 = std::stod(value); s.vb.alpha_prior = kpyp::GammaParams(eta1, eta2); }
  else if (key == "eta2") { eta2 = std::stod(value); s.vb.alpha_prior = kpyp::GammaParams(eta1, eta2); }
  else if (key == "max_iters") s.vb.max_iters = std::stoi(value);
  else if (key == "tol") s.vb.free_energy_rel_tol = std::stod(value);
  else if (key == "seed") s.vb.seed = std::stoull(value);
  else if (key == "location_mode") s.vb.location_mode = parse_location_mode(value);
  else if (key == "shared_width") s.vb.shared_width = parse_bool(value, key);
  else if (key == "kernel") s.vb.kernel_family = parse_kernel(value);
  else if (key == "kernel_floor") s.vb.kernel_floor = std::stod(value);
  else if (key == "covariance") s.vb.covariance = parse_covariance(value);
  else if (key == "location_every") s.vb.location_every = std::stoi(value);
  else if (key == "location_budget") s.vb.location_budget = std::stoi(value);
  else if (key == "jobs") s.vb.jobs = std::stoi(value);
  else if (key == "deterministic") s.deterministic = parse_bool(value, key);
  else throw std::runtime_error("config: unknown key '" + key + "'");
}

void load_config_file(RunSettings& s, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config '" + path + "' line " + std::to_string(lineno) +
                               ": expected key=value");
    }
    apply_key(s, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
}

/// Registers the per-key override flags shared by `fit` and `segment`.
struct ConfigFlags {
  std::string config_path;
  int truncation = 0;
  double eta1 = 0, eta2 = 0, tol = 0, kernel_floor = 0;
  int max_iters = 0, location_every = 0, location_budget = 0, jobs = 0;
  std::uint64_t seed = 0;
  std::string location_mode, kernel, covariance;
  bool shared_width = false, deterministic = false;

  CLI::Option* o_truncation;
  CLI::Option* o_eta1;
  CLI::Option* o_eta2;
  CLI::Option* o_tol;
  CLI::Option* o_floor;
  CLI::Option* o_iters;
  CLI::Option* o_every;
  CLI::Option* o_budget;
  CLI::Option* o_jobs;
  CLI::Option* o_seed;
  CLI::Option* o_mode;
  CLI::Option* o_kernel;
  CLI::Option* o_cov;
  CLI::Option* o_shared;
  CLI::Option* o_det;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat key=value configuration file");
    o_truncation = cmd->add_option("--truncation", truncation, "truncation level C");
    o_eta1 = cmd->add_option("--eta1", eta1, "Gamma prior shape for alpha");
    o_eta2 = cmd->add_option("--eta2", eta2, "Gamma prior rate for alpha");
    o_iters = cmd->add_option("--max-iters", max_iters, "sweep budget");
    o_tol = cmd->add_option("--tol", tol, "relative free-energy convergence tolerance");
    o_seed = cmd->add_option("--seed", seed, "RNG seed");
    o_mode = cmd->add_option("--location-mode", location_mode, "random|optimized");
    o_shared = cmd->add_flag("--shared-width", shared_width, "one kernel width for all clusters");
    o_kernel = cmd->add_option("--kernel", kernel, "rbf|one (one disables location dependence)");
    o_floor = cmd->add_option("--kernel-floor", kernel_floor, "lower clamp for kernel values");
    o_cov = cmd->add_option("--covariance", covariance, "full|diagonal");
    o_every = cmd->add_option("--location-every", location_every,
                              "optimize locations every k-th sweep");
    o_budget = cmd->add_option("--location-budget", location_budget,
                               "optimizer iterations per location step");
    o_jobs = cmd->add_option("--jobs", jobs, "worker threads for per-observation passes");
    o_det = cmd->add_flag("--deterministic", deterministic, "force single-threaded sweeps");
  }

  RunSettings resolve() const {
    RunSettings s;
    if (!config_path.empty()) load_config_file(s, config_path);
    if (const char* env = std::getenv("KPYP_SEED")) {
      s.vb.seed = std::stoull(env);
    }
    if (o_truncation->count()) s.vb.truncation = truncation;
    if (o_eta1->count() || o_eta2->count()) {
      s.vb.alpha_prior =
          kpyp::GammaParams(o_eta1->count() ? eta1 : s.vb.alpha_prior.shape,
                            o_eta2->count() ? eta2 : s.vb.alpha_prior.rate);
    }
    if (o_iters->count()) s.vb.max_iters = max_iters;
    if (o_tol->count()) s.vb.free_energy_rel_tol = tol;
    if (o_seed->count()) s.vb.seed = seed;
    if (o_mode->count()) s.vb.location_mode = parse_location_mode(location_mode);
    if (o_shared->count()) s.vb.shared_width = true;
    if (o_kernel->count()) s.vb.kernel_family = parse_kernel(kernel);
    if (o_floor->count()) s.vb.kernel_floor = kernel_floor;
    if (o_cov->count()) s.vb.covariance = parse_covariance(covariance);
    if (o_every->count()) s.vb.location_every = location_every;
    if (o_budget->count()) s.vb.location_budget = location_budget;
    if (o_jobs->count()) s.vb.jobs = jobs;
    if (o_det->count()) s.deterministic = true;
    if (s.deterministic) s.vb.jobs = 1;
    return s;
  }
};

std::vector<int> hard_labels(const Eigen::MatrixXd& resp) {
  std::vector<int> labels(resp.rows());
  for (int n = 0; n < resp.rows(); ++n) {
    int best = 0;
    for (int c = 1; c < resp.cols(); ++c) {
      if (resp(n, c) > resp(n, best)) best = c;  // lowest index wins ties
    }
    labels[n] = best + 1;  // reported labels are 1-based
  }
  return labels;
}

void write_trace(const std::string& path, const kpyp::VBState& state) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "iter,free_energy,alpha_mean,active\n";
  out.precision(17);
  for (const auto& row : state.sweep_log) {
    out << row.iter << "," << row.free_energy << "," << row.alpha_mean << "," << row.active
        << "\n";
  }
}

void write_responsibilities(const std::string& path, const Eigen::MatrixXd& resp) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.precision(17);
  for (int n = 0; n < resp.rows(); ++n) {
    for (int c = 0; c < resp.cols(); ++c) {
      out << resp(n, c) << (c + 1 < resp.cols() ? "," : "");
    }
    out << "\n";
  }
}

int finish_run(const kpyp::VBState& state, const RunSettings& settings,
               const std::vector<int>& labels, const std::optional<std::vector<int>>& truth,
               const fs::path& outdir, bool dump_responsibilities, double wall_seconds,
               const std::string& command, const json& extra) {
  fs::create_directories(outdir);
  kpyp::write_labels((outdir / "labels.txt").string(), labels);
  write_trace((outdir / "trace.csv").string(), state);
  if (dump_responsibilities) {
    write_responsibilities((outdir / "responsibilities.csv").string(), state.responsibilities);
  }

  json report;
  report["command"] = command;
  report["n"] = state.responsibilities.rows();
  report["truncation"] = state.truncation();
  report["iterations"] = state.iterations;
  report["converged"] = state.converged;
  report["free_energy"] = state.free_energy_trace.back();
  report["alpha_mean"] = state.alpha_post.mean();
  report["active_clusters"] = state.sweep_log.back().active;
  report["seed"] = settings.vb.seed;
  report["warnings"] = state.warnings;
  report["wall_time_s"] = wall_seconds;
  for (auto it = extra.begin(); it != extra.end(); ++it) report[it.key()] = it.value();
  if (truth) {
    report["ari"] = kpyp::adjusted_rand_index(labels, *truth);
    report["nmi"] = kpyp::normalized_mutual_info(labels, *truth);
  }
  std::ofstream out(outdir / "report.json");
  out << report.dump(2) << "\n";

  for (const auto& w : state.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << report.dump(2) << "\n";
  return state.converged ? 0 : 2;
}

int run_fit(const std::string& input, const std::string& feature_cols,
            const std::string& location_cols, int label_col, const ConfigFlags& flags,
            const std::string& output, bool dump_resp) {
  const RunSettings settings = flags.resolve();
  const auto t0 = std::chrono::steady_clock::now();
  const kpyp::TabularDataset ds =
      kpyp::load_tabular(input, parse_int_list(feature_cols), parse_int_list(location_cols),
                         label_col >= 0 ? std::optional<int>(label_col) : std::nullopt);
  const kpyp::VBState state = kpyp::fit(ds.features, ds.locations, settings.vb);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return finish_run(state, settings, hard_labels(state.responsibilities), ds.true_labels, output,
                    dump_resp, wall, "fit", json::object());
}

int run_segment(const std::string& input, const std::string& feature_mode,
                const std::string& feature_set, const ConfigFlags& flags,
                const std::string& output, bool dump_resp) {
  RunSettings settings = flags.resolve();
  const auto t0 = std::chrono::steady_clock::now();
  kpyp::FeatureMode mode;
  if (feature_mode == "rgb") mode = kpyp::FeatureMode::Rgb;
  else if (feature_mode == "gray") mode = kpyp::FeatureMode::Gray;
  else throw std::runtime_error("--feature-mode must be rgb or gray");

  const kpyp::ImageDataset ds = kpyp::load_image(input, mode);
  Eigen::MatrixXd features;
  if (feature_set == "raw") features = ds.features;
  else if (feature_set == "window-mean-std") features = kpyp::append_window_stats(ds);
  else throw std::runtime_error("--feature must be raw or window-mean-std");

  const kpyp::VBState state = kpyp::fit(features, ds.locations, settings.vb);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::vector<int> labels = hard_labels(state.responsibilities);
  fs::create_directories(output);
  kpyp::write_label_map_ppm((fs::path(output) / "labelmap.ppm").string(), labels, ds.height,
                            ds.width);
  json extra;
  extra["height"] = ds.height;
  extra["width"] = ds.width;
  return finish_run(state, settings, labels, std::nullopt, output, dump_resp, wall, "segment",
                    extra);
}

int run_sample_prior(const std::string& mode_name, double alpha, double discount, double width,
                     double floor, int dim, int draws, int seeds, std::uint64_t seed0,
                     const std::string& output) {
  kpyp::UrnPathConfig cfg;
  if (mode_name == "dp") cfg.mode = kpyp::UrnMode::DP;
  else if (mode_name == "pyp") cfg.mode = kpyp::UrnMode::PYP;
  else if (mode_name == "kpyp") cfg.mode = kpyp::UrnMode::KPYP;
  else throw std::runtime_error("--mode must be dp, pyp or kpyp");
  cfg.alpha = alpha;
  cfg.discount = discount;
  cfg.kernel_width = width;
  cfg.kernel_floor = floor;
  cfg.dim = dim;
  if (const char* env = std::getenv("KPYP_SEED")) seed0 = std::stoull(env);

  std::vector<std::vector<int>> paths(seeds);
  for (int s = 0; s < seeds; ++s) paths[s] = kpyp::sample_urn_path(cfg, draws, seed0 + s);

  std::ofstream out(output);
  if (!out) throw std::runtime_error("cannot write '" + output + "'");
  out << "draw";
  for (int s = 0; s < seeds; ++s) out << ",seed" << seed0 + s;
  out << "\n";
  for (int m = 0; m < draws; ++m) {
    out << m + 1;
    for (int s = 0; s < seeds; ++s) out << "," << paths[s][m];
    out << "\n";
  }
  std::cout << "wrote " << draws << " draws x " << seeds << " seeds to " << output << "\n";
  return 0;
}

int run_metrics(const std::string& pred_path, const std::string& truth_path,
                const std::string& output) {
  const auto pred = kpyp::read_labels(pred_path);
  const auto truth = kpyp::read_labels(truth_path);
  json report;
  report["ari"] = kpyp::adjusted_rand_index(pred, truth);
  report["nmi"] = kpyp::normalized_mutual_info(pred, truth);
  std::cout << report.dump(2) << "\n";
  if (!output.empty()) {
    std::ofstream out(output);
    out << report.dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel-dependent stick-breaking mixture clustering"};
  app.require_subcommand(1);

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "cluster a tabular dataset");
  std::string fit_input, fit_features, fit_locations, fit_output = "kpyp_out";
  int fit_label_col = -1;
  bool fit_dump_resp = false;
  fit_cmd->add_option("--input", fit_input, "comma-separated data file")->required();
  fit_cmd->add_option("--features", fit_features, "feature column indices, e.g. 0,1,2")
      ->required();
  fit_cmd->add_option("--locations", fit_locations, "location column indices, e.g. 3,4")
      ->required();
  fit_cmd->add_option("--labels", fit_label_col, "ground-truth label column (enables ARI/NMI)");
  fit_cmd->add_option("--output", fit_output, "output directory");
  fit_cmd->add_flag("--write-responsibilities", fit_dump_resp,
                    "also write the full responsibility matrix");
  ConfigFlags fit_flags;
  fit_flags.attach(fit_cmd);

  // segment
  auto* seg_cmd = app.add_subcommand("segment", "cluster the pixels of a PGM/PPM image");
  std::string seg_input, seg_feature_mode = "rgb", seg_feature = "raw",
              seg_output = "kpyp_out";
  bool seg_dump_resp = false;
  seg_cmd->add_option("--input", seg_input, "PGM (P2/P5) or PPM (P3/P6) image")->required();
  seg_cmd->add_option("--feature-mode", seg_feature_mode, "rgb|gray");
  seg_cmd->add_option("--feature", seg_feature, "raw|window-mean-std");
  seg_cmd->add_option("--output", seg_output, "output directory");
  seg_cmd->add_flag("--write-responsibilities", seg_dump_resp,
                    "also write the full responsibility matrix");
  ConfigFlags seg_flags;
  seg_flags.attach(seg_cmd);

  // sample-prior
  auto* urn_cmd = app.add_subcommand("sample-prior", "simulate urn cluster-count trajectories");
  std::string urn_mode = "dp", urn_output = "trajectory.csv";
  double urn_alpha = 1.0, urn_discount = 0.0, urn_width = 0.5, urn_floor = 1e-6;
  int urn_dim = 2, urn_draws = 1000, urn_seeds = 1;
  std::uint64_t urn_seed = 0;
  urn_cmd->add_option("--mode", urn_mode, "dp|pyp|kpyp");
  urn_cmd->add_option("--alpha", urn_alpha, "innovation parameter");
  urn_cmd->add_option("--discount", urn_discount, "PYP discount in [0,1)");
  urn_cmd->add_option("--width", urn_width, "KPYP kernel width");
  urn_cmd->add_option("--kernel-floor", urn_floor, "KPYP kernel clamp");
  urn_cmd->add_option("--dim", urn_dim, "KPYP lattice dimension");
  urn_cmd->add_option("--draws", urn_draws, "draws per trajectory");
  urn_cmd->add_option("--seeds", urn_seeds, "number of independent trajectories");
  urn_cmd->add_option("--seed", urn_seed, "base seed");
  urn_cmd->add_option("--output", urn_output, "trajectory CSV path");

  // metrics
  auto* met_cmd = app.add_subcommand("metrics", "compare two label files");
  std::string met_pred, met_truth, met_output;
  met_cmd->add_option("--pred", met_pred, "predicted labels, one integer per line")->required();
  met_cmd->add_option("--truth", met_truth, "reference labels")->required();
  met_cmd->add_option("--output", met_output, "optional JSON output path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit_cmd->parsed()) {
      return run_fit(fit_input, fit_features, fit_locations, fit_label_col, fit_flags,
                     fit_output, fit_dump_resp);
    }
    if (seg_cmd->parsed()) {
      return run_segment(seg_input, seg_feature_mode, seg_feature, seg_flags, seg_output,
                         seg_dump_resp);
    }
    if (urn_cmd->parsed()) {
      return run_sample_prior(urn_mode, urn_alpha, urn_discount, urn_width, urn_floor, urn_dim,
                              urn_draws, urn_seeds, urn_seed, urn_output);
    }
    if (met_cmd->parsed()) {
      return run_metrics(met_pred, met_truth, met_output);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
