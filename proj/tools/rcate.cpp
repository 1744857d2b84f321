// rcate: robust Bayesian CATE estimation command line.
//
// Subcommands: fit, benchmark, diagnose, gen-dgp.
// Exit codes: 0 ok, 2 input error, 3 data-shape error, 4 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include "robust_cate/bench.hpp"
#include "robust_cate/config.hpp"
#include "robust_cate/csv.hpp"
#include "robust_cate/pipeline.hpp"
#include "robust_cate/tail_diagnostics.hpp"

namespace rc = robust_cate;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitDataShape = 3;
constexpr int kExitNumeric = 4;

const char* severity_label(rc::SeverityPreset preset) {
  return rc::severity_name(preset);
}

std::string loss_label(const rc::LossKind& loss) {
  switch (loss.family) {
    case rc::LossFamily::SquaredError: return "squared";
    case rc::LossFamily::Huber: return "huber";
    case rc::LossFamily::Welsch: return "welsch";
    case rc::LossFamily::Tukey: return "tukey";
  }
  return "unknown";
}

json summary_json(const rc::FitResult& result) {
  json out;
  out["ate"] = {{"mean", result.ate.mean},
                {"ci", {result.ate.lo, result.ate.hi}},
                {"sd", result.ate.sd}};
  json beta = json::array();
  for (int j = 0; j < result.design.spec.p(); ++j) {
    beta.push_back({{"term", result.design.spec.term_name(j)},
                    {"mean", result.summary.beta.mean[j]},
                    {"sd", result.summary.beta.sd[j]},
                    {"q025", result.summary.beta.q025[j]},
                    {"q500", result.summary.beta.q500[j]},
                    {"q975", result.summary.beta.q975[j]}});
  }
  out["beta"] = beta;

  if (result.diagnostics.r_hat.size() > 0) {
    out["diagnostics"] = {{"r_hat_max", result.diagnostics.max_r_hat()},
                          {"ess_min", result.diagnostics.min_ess()},
                          {"iac_max", result.diagnostics.iac.maxCoeff()},
                          {"bfmi", result.diagnostics.bfmi},
                          {"divergences", result.diagnostics.divergences},
                          {"step_size", result.draws.step_size}};
  }

  out["eta"] = result.calibration.eta;
  json calibration;
  switch (result.calibration.mode) {
    case rc::EtaMode::Off: calibration["mode"] = "off"; break;
    case rc::EtaMode::Trace: calibration["mode"] = "trace"; break;
    case rc::EtaMode::Functional: calibration["mode"] = "functional"; break;
    case rc::EtaMode::Llb: calibration["mode"] = "llb"; break;
    case rc::EtaMode::Rbci: calibration["mode"] = "rbci"; break;
  }
  calibration["eta"] = result.calibration.eta;
  calibration["ridge_lambda"] = result.calibration.ridge_lambda;
  if (result.calibration.eta_trace_value) {
    calibration["eta_trace"] = *result.calibration.eta_trace_value;
  }
  if (result.calibration.eta_functional_value) {
    calibration["eta_functional"] = *result.calibration.eta_functional_value;
  }
  if (result.calibration.omega) calibration["omega"] = *result.calibration.omega;
  if (result.calibration.min_eig_raw) {
    calibration["min_eig_raw"] = *result.calibration.min_eig_raw;
  }
  out["calibration"] = calibration;

  out["nuisance"] = {{"severity", severity_label(result.severity)},
                     {"loss", loss_label(result.nuisance_params.loss)},
                     {"tuning", result.nuisance_params.loss.tuning},
                     {"n_trees", result.nuisance_params.n_trees},
                     {"max_depth", result.nuisance_params.max_depth},
                     {"learning_rate", result.nuisance_params.learning_rate},
                     {"min_samples_leaf", result.nuisance_params.min_samples_leaf},
                     {"y_scale", result.nuisance.y_scale}};
  out["overlap_used"] = result.overlap_used;
  if (result.pooled) {
    out["pooling"] = rc::pooling_name(result.pooled->pooling);
    out["modular_m"] = result.pooled->m();
  } else {
    out["pooling"] = nullptr;
  }
  out["warnings"] = result.warnings;
  out["seed"] = result.master_seed;
  return out;
}

void export_draws_csv(const std::string& path, const rc::FitResult& result) {
  rc::CsvWriter writer(path);
  std::vector<std::string> header{"chain", "iter"};
  const int p = result.design.spec.p();
  for (int j = 0; j < p; ++j) header.push_back("beta_" + std::to_string(j));
  if (result.draws.dim() > p) header.push_back("log_sigma");
  header.push_back("energy");
  header.push_back("divergent");
  writer.header(header);
  for (int c = 0; c < result.draws.n_chains(); ++c) {
    for (int s = 0; s < result.draws.n_samples(); ++s) {
      std::vector<std::string> fields{std::to_string(c), std::to_string(s)};
      for (int j = 0; j < result.draws.dim(); ++j) {
        fields.push_back(rc::format_double(result.draws.chains[c](s, j)));
      }
      const bool has_energy = result.draws.energy.rows() > c &&
                              result.draws.energy.cols() > s;
      fields.push_back(
          has_energy ? rc::format_double(result.draws.energy(c, s)) : "");
      const bool divergent = !result.draws.divergent.empty() &&
                             result.draws.divergent[c][s] != 0;
      fields.push_back(divergent ? "1" : "0");
      writer.row(fields);
    }
  }
}

void export_influence_csv(const std::string& path,
                          const rc::FitResult& result) {
  // long format: kind,x,value; psi curves on a grid plus the residual
  // histogram at the posterior mean
  rc::CsvWriter writer(path);
  writer.header({"kind", "x", "value"});
  const double c = result.design.spec.p() > 0 ? 1.34 : 1.34;
  const Eigen::VectorXd beta_bar =
      result.draws.stacked().leftCols(result.design.spec.p()).colwise().mean();
  const Eigen::VectorXd residuals =
      result.pseudo.d - result.design.phi * beta_bar;

  for (int i = 0; i <= 160; ++i) {
    const double r = -8.0 + i * 0.1;
    writer.row({"psi_welsch", rc::format_double(r),
                rc::format_double(
                    rc::evaluate_loss(rc::LossKind::welsch(c), r).psi)});
    const double psi_t = 5.0 * r / (4.0 + r * r);  // nu = 4, sigma = 1
    writer.row({"psi_student_t", rc::format_double(r),
                rc::format_double(psi_t)});
  }
  const int bins = 40;
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(bins);
  for (Eigen::Index i = 0; i < residuals.size(); ++i) {
    const double r = residuals[i];
    if (r < -8.0 || r >= 8.0) continue;
    counts[static_cast<int>((r + 8.0) / 16.0 * bins)] += 1;
  }
  for (int b = 0; b < bins; ++b) {
    const double center = -8.0 + (b + 0.5) * 16.0 / bins;
    writer.row({"residual_hist", rc::format_double(center),
                std::to_string(counts[b])});
  }
}

int run_fit(const std::string& csv_path, const std::string& config_path,
            std::uint64_t seed_override, bool seed_set,
            const std::string& out_path, const std::string& draws_path,
            const std::string& influence_path) {
  const rc::LoadedDataset loaded = rc::read_dataset_csv(csv_path);
  if (!loaded.dataset.has_both_arms()) {
    std::cerr << "error: dataset has a single treatment arm\n";
    return kExitDataShape;
  }
  rc::FitConfig config;
  if (!config_path.empty()) {
    const auto ini = rc::IniFile::parse_file(config_path);
    config = rc::parse_fit_config(ini, static_cast<int>(loaded.dataset.dim()));
  }
  if (seed_set) config.master_seed = seed_override;

  const rc::FitResult result = rc::fit(loaded.dataset, config);
  for (const auto& warning : result.warnings) {
    std::cerr << warning << '\n';
  }
  const json summary = summary_json(result);
  if (out_path.empty()) {
    std::cout << summary.dump(2) << '\n';
  } else {
    std::ofstream out(out_path);
    out << summary.dump(2) << '\n';
    std::cout << "wrote " << out_path << '\n';
  }
  if (!draws_path.empty()) export_draws_csv(draws_path, result);
  if (!influence_path.empty()) export_influence_csv(influence_path, result);
  return kExitOk;
}

int run_benchmark(const std::string& spec_path, int jobs,
                  std::uint64_t seed_override, bool seed_set,
                  const std::string& out_override) {
  const auto ini = rc::IniFile::parse_file(spec_path);
  rc::BenchmarkSpec spec = rc::parse_benchmark_spec(ini);
  if (seed_set) spec.master_seed = seed_override;
  if (!out_override.empty()) spec.output_path = out_override;

  const rc::BenchmarkOutput output = rc::run_benchmark(spec, jobs);
  rc::write_benchmark_rows(spec.output_path, spec, output);
  const std::string aggregate_path =
      spec.output_path.size() > 4 &&
              spec.output_path.substr(spec.output_path.size() - 4) == ".csv"
          ? spec.output_path.substr(0, spec.output_path.size() - 4) +
                "_aggregate.csv"
          : spec.output_path + "_aggregate";
  rc::write_benchmark_aggregate(aggregate_path, spec, output);

  int failures = 0;
  for (const auto& row : output.rows) {
    if (!row.error.empty()) {
      ++failures;
      std::cerr << "cell density=" << row.density << " seed=" << row.seed
                << " config=" << row.config_name << " failed: " << row.error
                << '\n';
    }
  }
  std::cout << "wrote " << spec.output_path << " and " << aggregate_path
            << " (" << output.rows.size() << " rows, " << failures
            << " failed cells)\n";
  return kExitOk;
}

int run_diagnose(const std::string& csv_path, const std::string& hill_out,
                 double top_fraction) {
  const rc::LoadedDataset loaded = rc::read_dataset_csv(csv_path);
  if (!loaded.dataset.has_both_arms()) {
    std::cerr << "error: dataset has a single treatment arm\n";
    return kExitDataShape;
  }
  if (loaded.dataset.n() < 20) {
    std::cerr << "error: need at least 20 rows for the Hill estimator\n";
    return kExitInput;
  }

  const rc::AutoSeverityResult severity = rc::auto_severity(loaded.dataset);
  if (!severity.warning.empty()) std::cerr << severity.warning << '\n';

  // quick propensity check on a tempered booster
  const auto propensity = rc::fit_propensity(
      loaded.dataset.x, loaded.dataset.w, rc::default_propensity_params());
  const Eigen::VectorXd pi_hat = propensity.predict(loaded.dataset.x);
  const rc::OverlapCheck overlap = rc::propensity_warnings(pi_hat);
  for (const auto& warning : overlap.warnings) std::cerr << warning << '\n';

  json report;
  report["alpha_hat"] = severity.alpha_hat;
  report["recommended_severity"] = severity_label(severity.severity);
  report["hill_degenerate"] = severity.degenerate;
  report["pi_hat_min"] = pi_hat.minCoeff();
  report["pi_hat_max"] = pi_hat.maxCoeff();
  report["auto_overlap"] = overlap.auto_overlap;
  report["top_fraction"] = top_fraction;
  std::cout << report.dump(2) << '\n';

  if (!hill_out.empty()) {
    // residuals from the same quick S-learner fit used by auto_severity
    Eigen::MatrixXd x_ext(loaded.dataset.n(), loaded.dataset.dim() + 1);
    x_ext.leftCols(loaded.dataset.dim()) = loaded.dataset.x;
    for (Eigen::Index i = 0; i < loaded.dataset.n(); ++i) {
      x_ext(i, loaded.dataset.dim()) = loaded.dataset.w[i];
    }
    const auto s_learner = rc::fit_gbt(x_ext, loaded.dataset.y, rc::GbtParams{});
    std::vector<double> residuals(loaded.dataset.n());
    for (Eigen::Index i = 0; i < loaded.dataset.n(); ++i) {
      residuals[i] = loaded.dataset.y[i] - s_learner.predict_one(x_ext.row(i));
    }
    rc::CsvWriter writer(hill_out);
    writer.header({"k", "alpha_hat"});
    for (const auto& [k, alpha] : rc::hill_plot(residuals)) {
      writer.row({std::to_string(k), rc::format_double(alpha)});
    }
    std::cout << "wrote " << hill_out << '\n';
  }
  return kExitOk;
}

int run_gen_dgp(const std::string& kind, int n, int dim, double density,
                std::uint64_t seed, const std::string& out_path,
                const std::vector<std::string>& params) {
  rc::DgpSpec spec;
  spec.kind = rc::dgp_kind_from_name(kind);
  spec.n = n;
  spec.dim = dim;
  spec.density = density;
  spec.seed = seed;
  for (const std::string& kv : params) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw rc::InputError("--param expects key=value, got '" + kv + "'");
    }
    spec.params[kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
  }
  const rc::GeneratedData data = rc::generate(spec);
  rc::write_dataset_csv(out_path, data);
  std::cout << "wrote " << out_path << " (" << n << " rows)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robust Bayesian CATE estimation benchmark harness"};
  app.require_subcommand(1);

  std::string csv_path, config_path, out_path, draws_path, influence_path;
  std::uint64_t seed = 0;
  bool seed_set = false;

  auto* fit_cmd = app.add_subcommand("fit", "fit the estimator on a CSV dataset");
  fit_cmd->add_option("csv", csv_path, "dataset CSV (y,w,x0..)")->required();
  fit_cmd->add_option("--config", config_path, "fit config file");
  fit_cmd->add_option("--seed", seed, "master seed override")
      ->each([&](const std::string&) { seed_set = true; });
  fit_cmd->add_option("--out", out_path, "write the JSON summary here");
  fit_cmd->add_option("--export-draws", draws_path, "posterior draws CSV");
  fit_cmd->add_option("--export-influence", influence_path,
                      "influence-overlay figure data CSV");

  std::string spec_path, bench_out;
  int jobs = 0;
  auto* bench_cmd =
      app.add_subcommand("benchmark", "run a DGP sweep from a spec file");
  bench_cmd->add_option("spec", spec_path, "benchmark spec file")->required();
  bench_cmd->add_option("--jobs", jobs,
                        "worker threads (default: ROBUST_CATE_JOBS or all cores)");
  bench_cmd->add_option("--seed", seed, "master seed override")
      ->each([&](const std::string&) { seed_set = true; });
  bench_cmd->add_option("--out", bench_out, "results CSV path override");

  std::string hill_out;
  double top_fraction = 0.10;
  auto* diag_cmd =
      app.add_subcommand("diagnose", "tail diagnostics and severity advice");
  diag_cmd->add_option("csv", csv_path, "dataset CSV")->required();
  diag_cmd->add_option("--out", hill_out, "Hill plot CSV (k, alpha_hat)");
  diag_cmd->add_option("--top-fraction", top_fraction,
                       "tail fraction for the Hill estimator");

  std::string dgp_kind = "whale", dgp_out = "dgp.csv";
  int dgp_n = 1000, dgp_dim = 5;
  double dgp_density = 0.0;
  std::vector<std::string> dgp_params;
  auto* gen_cmd = app.add_subcommand("gen-dgp", "export a synthetic dataset");
  gen_cmd->add_option("--kind", dgp_kind,
                      "whale|tail_hetero|pareto|t_noise|bimodal|low_overlap|"
                      "dollar_scale|clean_linear");
  gen_cmd->add_option("--n", dgp_n, "sample size");
  gen_cmd->add_option("--dim", dgp_dim, "covariate dimension");
  gen_cmd->add_option("--density", dgp_density, "contamination density");
  gen_cmd->add_option("--seed", seed, "generator seed");
  gen_cmd->add_option("--out", dgp_out, "output CSV path");
  gen_cmd->add_option("--param", dgp_params, "kind-specific key=value");

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit_cmd->parsed()) {
      return run_fit(csv_path, config_path, seed, seed_set, out_path,
                     draws_path, influence_path);
    }
    if (bench_cmd->parsed()) {
      return run_benchmark(spec_path, jobs, seed, seed_set, bench_out);
    }
    if (diag_cmd->parsed()) {
      return run_diagnose(csv_path, hill_out, top_fraction);
    }
    if (gen_cmd->parsed()) {
      return run_gen_dgp(dgp_kind, dgp_n, dgp_dim, dgp_density, seed, dgp_out,
                         dgp_params);
    }
  } catch (const rc::InputError& err) {
    std::cerr << "input error: " << err.what() << '\n';
    return kExitInput;
  } catch (const std::invalid_argument& err) {
    std::cerr << "input error: " << err.what() << '\n';
    return kExitInput;
  } catch (const std::exception& err) {
    std::cerr << "numeric failure: " << err.what() << '\n';
    return kExitNumeric;
  }
  return kExitOk;
}
