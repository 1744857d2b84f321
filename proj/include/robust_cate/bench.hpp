#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "robust_cate/config.hpp"
#include "robust_cate/csv.hpp"
#include "robust_cate/metrics.hpp"
#include "robust_cate/pipeline.hpp"
#include "robust_cate/tail_diagnostics.hpp"

namespace robust_cate {

namespace bench_detail {

inline std::uint64_t name_hash(const std::string& name) {
  // FNV-1a; stable across platforms so cell seeds are reproducible
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace bench_detail

struct BenchmarkRow {
  double density = 0.0;
  int seed = 0;
  std::string config_name;
  std::map<std::string, double> metrics;
  std::string error;
};

struct BenchmarkOutput {
  std::vector<std::string> metric_columns;
  std::vector<BenchmarkRow> rows;
};

namespace bench_detail {

inline std::map<std::string, double> evaluate_cell(
    const BenchmarkSpec& spec, const FitConfig& config,
    const GeneratedData& data, const FitResult& result) {
  std::map<std::string, double> metrics;
  const double true_ate = data.tau_true.mean();
  std::vector<double> tau_hat(result.summary.tau_mean.data(),
                              result.summary.tau_mean.data() +
                                  result.summary.tau_mean.size());
  const std::vector<double> tau_true(data.tau_true.data(),
                                     data.tau_true.data() +
                                         data.tau_true.size());

  metrics["ate"] = result.ate.mean;
  metrics["ate_error"] = std::abs(result.ate.mean - true_ate);
  metrics["pehe"] = pehe(tau_hat, tau_true);
  metrics["covered"] =
      (result.ate.lo <= true_ate && true_ate <= result.ate.hi) ? 1.0 : 0.0;
  metrics["ci_width"] = result.ate.hi - result.ate.lo;
  metrics["policy_regret"] = policy_regret(tau_hat, tau_true);
  metrics["eta"] = result.calibration.eta;
  if (result.diagnostics.r_hat.size() > 0) {
    metrics["rhat_max"] = result.diagnostics.max_r_hat();
    metrics["ess_min"] = result.diagnostics.min_ess();
    metrics["bfmi_min"] = result.diagnostics.min_bfmi();
    metrics["divergences"] = result.diagnostics.divergences;
  }

  // subgroup metrics when the basis is [1, tail indicator]
  if (result.design.spec.p() == 2 &&
      std::holds_alternative<basis_terms::TailIndicator>(
          result.design.spec.terms[1])) {
    Eigen::VectorXd contrast(2);
    contrast << 1.0, 1.0;
    const auto subgroup = linear_functional_summary(result.draws, contrast);
    metrics["tau_subgroup"] = subgroup.mean;
    metrics["subgroup_width"] = subgroup.hi - subgroup.lo;
    double true_subgroup = true_ate;
    if (data.subgroup_mask.sum() > 0) {
      double acc = 0.0;
      int count = 0;
      for (Eigen::Index i = 0; i < data.tau_true.size(); ++i) {
        if (data.subgroup_mask[i] == 1) {
          acc += data.tau_true[i];
          ++count;
        }
      }
      true_subgroup = acc / count;
    }
    metrics["subgroup_covered"] =
        (subgroup.lo <= true_subgroup && true_subgroup <= subgroup.hi) ? 1.0
                                                                       : 0.0;
  }
  return metrics;
}

}  // namespace bench_detail

/// Runs the benchmark grid (densities x seeds x configs) with a bounded
/// worker pool. Per-cell seeds derive from (name, cell index, seed index),
/// so results do not depend on the worker count; per-cell failures land in
/// the error column and the run continues.
inline BenchmarkOutput run_benchmark(const BenchmarkSpec& spec, int jobs = 0) {
  if (jobs <= 0) {
    const char* env = std::getenv("ROBUST_CATE_JOBS");
    if (env) jobs = std::atoi(env);
  }
  if (jobs <= 0) {
    jobs = static_cast<int>(std::thread::hardware_concurrency());
  }
  jobs = std::max(1, jobs);

  struct Task {
    std::size_t density_idx;
    int seed_idx;
    std::size_t config_idx;
  };
  std::vector<Task> tasks;
  for (std::size_t d = 0; d < spec.densities.size(); ++d) {
    for (int s = 0; s < spec.seeds; ++s) {
      for (std::size_t c = 0; c < spec.configs.size(); ++c) {
        tasks.push_back({d, s, c});
      }
    }
  }

  BenchmarkOutput output;
  output.rows.resize(tasks.size());
  const std::uint64_t name_seed =
      bench_detail::name_hash(spec.name) ^ spec.master_seed;

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= tasks.size()) return;
      const Task& task = tasks[t];
      BenchmarkRow& row = output.rows[t];
      row.density = spec.densities[task.density_idx];
      row.seed = task.seed_idx;
      row.config_name = spec.config_names[task.config_idx];
      try {
        DgpSpec dgp;
        dgp.kind = spec.dgp;
        dgp.n = spec.n;
        dgp.dim = spec.dim;
        dgp.density = row.density;
        dgp.params = spec.dgp_params;
        // the same (density, seed) cell shares data across configs
        dgp.seed = derive_seed(name_seed, task.density_idx, task.seed_idx);
        const GeneratedData data = generate(dgp);

        FitConfig config = spec.configs[task.config_idx];
        config.master_seed =
            derive_seed(name_seed + 1, task.density_idx * 1000 + task.seed_idx,
                        task.config_idx);

        const bool wants_alpha =
            std::find(spec.metrics.begin(), spec.metrics.end(), "alpha_hat") !=
                spec.metrics.end() ||
            std::find(spec.metrics.begin(), spec.metrics.end(),
                      "auto_severity_code") != spec.metrics.end();
        bool diagnostics_only = wants_alpha;
        for (const auto& metric : spec.metrics) {
          if (metric != "alpha_hat" && metric != "auto_severity_code") {
            diagnostics_only = false;
          }
        }
        if (wants_alpha) {
          const auto rec = auto_severity(data.dataset);
          row.metrics["alpha_hat"] = rec.alpha_hat;
          row.metrics["auto_severity_code"] =
              static_cast<double>(static_cast<int>(rec.severity));
        }
        if (!diagnostics_only) {
          const FitResult result = fit(data.dataset, config);
          auto fit_metrics =
              bench_detail::evaluate_cell(spec, config, data, result);
          row.metrics.insert(fit_metrics.begin(), fit_metrics.end());
          if (std::find(spec.metrics.begin(), spec.metrics.end(),
                        "dispersion_rho") != spec.metrics.end()) {
            row.metrics["dispersion_rho"] =
                dispersion_ratio(data.dataset, config, 5).rho;
          }
        }
      } catch (const std::exception& err) {
        row.error = err.what();
      }
    }
  };

  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (auto& thread : pool) thread.join();

  // column set: requested metrics that at least one row produced
  for (const std::string& metric : spec.metrics) {
    bool seen = false;
    for (const auto& row : output.rows) {
      if (row.metrics.count(metric)) {
        seen = true;
        break;
      }
    }
    if (seen) output.metric_columns.push_back(metric);
  }
  return output;
}

/// Per-row CSV: one line per (density, seed, config).
inline void write_benchmark_rows(const std::string& path,
                                 const BenchmarkSpec& spec,
                                 const BenchmarkOutput& output) {
  CsvWriter writer(path);
  std::vector<std::string> header{"benchmark", "dgp", "density", "seed",
                                  "config"};
  for (const auto& metric : output.metric_columns) header.push_back(metric);
  header.push_back("error");
  writer.header(header);
  for (const auto& row : output.rows) {
    std::vector<std::string> fields{spec.name, dgp_kind_name(spec.dgp),
                                    format_double(row.density),
                                    std::to_string(row.seed), row.config_name};
    for (const auto& metric : output.metric_columns) {
      const auto it = row.metrics.find(metric);
      fields.push_back(it == row.metrics.end() ? ""
                                               : format_double(it->second));
    }
    fields.push_back(row.error);
    writer.row(fields);
  }
}

/// Aggregate CSV: means per (density, config); binary `covered`-style
/// metrics additionally get Wilson 95% bounds.
inline void write_benchmark_aggregate(const std::string& path,
                                      const BenchmarkSpec& spec,
                                      const BenchmarkOutput& output) {
  CsvWriter writer(path);
  std::vector<std::string> header{"benchmark", "dgp", "density", "config",
                                  "n_seeds"};
  for (const auto& metric : output.metric_columns) {
    header.push_back(metric + "_mean");
    if (metric == "covered" || metric == "subgroup_covered") {
      header.push_back(metric + "_wilson_lo");
      header.push_back(metric + "_wilson_hi");
    }
  }
  writer.header(header);

  for (double density : spec.densities) {
    for (const auto& config_name : spec.config_names) {
      std::map<std::string, std::vector<double>> values;
      int n_rows = 0;
      for (const auto& row : output.rows) {
        if (row.density != density || row.config_name != config_name ||
            !row.error.empty()) {
          continue;
        }
        ++n_rows;
        for (const auto& [metric, value] : row.metrics) {
          values[metric].push_back(value);
        }
      }
      std::vector<std::string> fields{spec.name, dgp_kind_name(spec.dgp),
                                      format_double(density), config_name,
                                      std::to_string(n_rows)};
      for (const auto& metric : output.metric_columns) {
        const auto it = values.find(metric);
        if (it == values.end() || it->second.empty()) {
          fields.push_back("");
          if (metric == "covered" || metric == "subgroup_covered") {
            fields.push_back("");
            fields.push_back("");
          }
          continue;
        }
        fields.push_back(format_double(mean(it->second)));
        if (metric == "covered" || metric == "subgroup_covered") {
          int hits = 0;
          for (double v : it->second) hits += v > 0.5 ? 1 : 0;
          const auto [lo, hi] =
              wilson_interval(hits, static_cast<int>(it->second.size()));
          fields.push_back(format_double(lo));
          fields.push_back(format_double(hi));
        }
      }
      writer.row(fields);
    }
  }
}

}  // namespace robust_cate
