#pragma once

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "robust_cate/csv.hpp"
#include "robust_cate/dgp.hpp"
#include "robust_cate/pipeline.hpp"

namespace robust_cate {

/// Flat key = value config with [section] headers; # and ; start comments.
/// Section and key order is preserved.
class IniFile {
 public:
  static IniFile parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file: " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_string(buffer.str(), path);
  }

  static IniFile parse_string(const std::string& text,
                              const std::string& origin = "<string>") {
    IniFile ini;
    std::stringstream ss(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(ss, line)) {
      ++line_no;
      const auto comment = line.find_first_of("#;");
      if (comment != std::string::npos) line = line.substr(0, comment);
      line = csv_detail::trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') {
          throw InputError(origin + ":" + std::to_string(line_no) +
                           ": unterminated section header");
        }
        section = csv_detail::trim(line.substr(1, line.size() - 2));
        ini.section_order_.push_back(section);
        ini.sections_[section];
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw InputError(origin + ":" + std::to_string(line_no) +
                         ": expected key = value");
      }
      const std::string key = csv_detail::trim(line.substr(0, eq));
      const std::string value = csv_detail::trim(line.substr(eq + 1));
      ini.sections_[section][key] = value;
    }
    return ini;
  }

  bool has_section(const std::string& section) const {
    return sections_.count(section) > 0;
  }

  const std::vector<std::string>& section_order() const {
    return section_order_;
  }

  std::optional<std::string> get(const std::string& section,
                                 const std::string& key) const {
    const auto sec = sections_.find(section);
    if (sec == sections_.end()) return std::nullopt;
    const auto item = sec->second.find(key);
    if (item == sec->second.end()) return std::nullopt;
    return item->second;
  }

  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const {
    return get(section, key).value_or(fallback);
  }

  double get_double(const std::string& section, const std::string& key,
                    double fallback) const {
    const auto value = get(section, key);
    if (!value) return fallback;
    try {
      return std::stod(*value);
    } catch (const std::exception&) {
      throw InputError("config " + section + "." + key +
                       ": cannot parse '" + *value + "' as a number");
    }
  }

  int get_int(const std::string& section, const std::string& key,
              int fallback) const {
    return static_cast<int>(get_double(section, key, fallback));
  }

  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const {
    const auto value = get(section, key);
    if (!value) return fallback;
    if (*value == "true" || *value == "on" || *value == "1" || *value == "yes") {
      return true;
    }
    if (*value == "false" || *value == "off" || *value == "0" || *value == "no") {
      return false;
    }
    throw InputError("config " + section + "." + key + ": expected a boolean");
  }

  std::vector<double> get_double_list(const std::string& section,
                                      const std::string& key) const {
    std::vector<double> values;
    const auto raw = get(section, key);
    if (!raw) return values;
    for (const auto& field : csv_detail::split(*raw, ',')) {
      if (field.empty()) continue;
      try {
        values.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw InputError("config " + section + "." + key +
                         ": cannot parse '" + field + "'");
      }
    }
    return values;
  }

  const std::map<std::string, std::string>& section(
      const std::string& name) const {
    static const std::map<std::string, std::string> empty;
    const auto sec = sections_.find(name);
    return sec == sections_.end() ? empty : sec->second;
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
  std::vector<std::string> section_order_;
};

namespace config_detail {

inline std::vector<std::string> split_terms(const std::string& expr) {
  // split on commas outside parentheses
  std::vector<std::string> terms;
  std::string current;
  int depth = 0;
  for (char ch : expr) {
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if (ch == ',' && depth == 0) {
      terms.push_back(csv_detail::trim(current));
      current.clear();
    } else {
      current += ch;
    }
  }
  if (!csv_detail::trim(current).empty()) {
    terms.push_back(csv_detail::trim(current));
  }
  return terms;
}

inline std::vector<double> call_args(const std::string& term,
                                     const std::string& name) {
  const auto open = term.find('(');
  const auto close = term.rfind(')');
  if (open == std::string::npos || close == std::string::npos || close < open) {
    throw InputError("basis term '" + term + "': malformed " + name + "(...)");
  }
  std::vector<double> args;
  for (const auto& field :
       csv_detail::split(term.substr(open + 1, close - open - 1), ',')) {
    if (field == "one_sided") {
      args.push_back(-1.0);  // sentinel handled by the caller
    } else if (field == "two_sided") {
      args.push_back(-2.0);
    } else {
      try {
        args.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw InputError("basis term '" + term + "': cannot parse argument '" +
                         field + "'");
      }
    }
  }
  return args;
}

}  // namespace config_detail

/// Basis expression syntax, e.g.
///   "intercept, tail(0, 1.96)"  or  "1, x0, pow(0,2)"  or  "linear_all".
inline BasisSpec parse_basis(const std::string& expr, int dim) {
  BasisSpec spec;
  for (const std::string& term : config_detail::split_terms(expr)) {
    if (term == "intercept" || term == "1") {
      spec.terms.push_back(basis_terms::Intercept{});
    } else if (term == "linear_all") {
      spec.terms.push_back(basis_terms::Intercept{});
      for (int j = 0; j < dim; ++j) {
        spec.terms.push_back(basis_terms::Linear{j});
      }
    } else if (term.size() >= 2 && term[0] == 'x' &&
               term.find('(') == std::string::npos) {
      spec.terms.push_back(basis_terms::Linear{std::stoi(term.substr(1))});
    } else if (term.rfind("linear(", 0) == 0) {
      const auto args = config_detail::call_args(term, "linear");
      if (args.size() != 1) throw InputError("linear(feature) takes 1 argument");
      spec.terms.push_back(basis_terms::Linear{static_cast<int>(args[0])});
    } else if (term.rfind("pow(", 0) == 0 || term.rfind("power(", 0) == 0) {
      const auto args = config_detail::call_args(term, "power");
      if (args.size() != 2) throw InputError("power(feature, degree) takes 2 arguments");
      spec.terms.push_back(basis_terms::Power{static_cast<int>(args[0]),
                                              static_cast<int>(args[1])});
    } else if (term.rfind("tail(", 0) == 0) {
      auto args = config_detail::call_args(term, "tail");
      bool two_sided = true;
      if (args.size() == 3) {
        two_sided = args[2] != -1.0;
        args.pop_back();
      }
      if (args.size() != 2) {
        throw InputError("tail(feature, threshold[, one_sided]) takes 2-3 arguments");
      }
      spec.terms.push_back(basis_terms::TailIndicator{
          static_cast<int>(args[0]), args[1], two_sided});
    } else if (term.rfind("spline(", 0) == 0) {
      const auto args = config_detail::call_args(term, "spline");
      if (args.size() != 2) throw InputError("spline(feature, knot) takes 2 arguments");
      spec.terms.push_back(
          basis_terms::SplineKnot{static_cast<int>(args[0]), args[1]});
    } else {
      throw InputError("unrecognised basis term '" + term + "'");
    }
  }
  if (spec.terms.empty()) throw InputError("basis expression is empty");
  check_basis(spec, dim);
  return spec;
}

/// Builds a FitConfig from flat keys in one section (the published schema;
/// see docs/formats.md). Separate [likelihood]/[prior]/[sampler]/[nuisance]
/// sections refine the fit section of a standalone config file.
inline FitConfig parse_fit_section(const IniFile& ini,
                                   const std::string& section, int dim) {
  FitConfig config;
  config.severity =
      severity_from_name(ini.get_or(section, "severity", "none"));
  config.k_folds = ini.get_int(section, "k_folds", 2);
  config.normalize_y_for_nuisance =
      ini.get_bool(section, "normalize_y", false);
  config.couple_c_to_severity =
      ini.get_bool(section, "couple_c_to_severity", false);
  config.master_seed =
      static_cast<std::uint64_t>(ini.get_double(section, "seed", 0));

  const std::string overlap = ini.get_or(section, "use_overlap", "auto");
  if (overlap == "auto") {
    config.use_overlap.reset();
  } else if (overlap == "true" || overlap == "on") {
    config.use_overlap = true;
  } else if (overlap == "false" || overlap == "off") {
    config.use_overlap = false;
  } else {
    throw InputError("config " + section + ".use_overlap: expected auto/true/false");
  }

  const std::string eta_mode = ini.get_or(section, "calibrate_eta", "off");
  if (eta_mode == "off") {
    config.calibrate_eta = EtaMode::Off;
  } else if (eta_mode == "trace") {
    config.calibrate_eta = EtaMode::Trace;
  } else if (eta_mode == "functional") {
    config.calibrate_eta = EtaMode::Functional;
    const auto contrast = ini.get_double_list(section, "eta_contrast");
    if (contrast.empty()) {
      throw InputError("config " + section +
                       ": calibrate_eta=functional needs eta_contrast");
    }
    config.eta_contrast =
        Eigen::Map<const Eigen::VectorXd>(contrast.data(), contrast.size());
  } else if (eta_mode == "llb") {
    config.calibrate_eta = EtaMode::Llb;
  } else if (eta_mode == "rbci") {
    config.calibrate_eta = EtaMode::Rbci;
  } else {
    throw InputError("config " + section + ".calibrate_eta: unknown mode '" +
                     eta_mode + "'");
  }
  config.ridge_lambda = ini.get_double(section, "ridge_lambda", 1e-2);
  if (const auto grid = ini.get_double_list(section, "eta_grid"); !grid.empty()) {
    config.eta_grid = grid;
  }
  if (const auto grid = ini.get_double_list(section, "omega_grid"); !grid.empty()) {
    config.omega_grid = grid;
  }
  config.llb_replicates = ini.get_int(section, "llb_replicates", 50);

  if (ini.get_bool(section, "modular", false)) {
    ModularConfig modular;
    modular.m = ini.get_int(section, "modular_m", 8);
    const std::string pooling = ini.get_or(section, "pooling", "concat");
    if (pooling == "concat") {
      modular.pooling = Pooling::Concatenate;
    } else if (pooling == "rubin") {
      modular.pooling = Pooling::Rubin;
    } else {
      throw InputError("config " + section + ".pooling: expected concat or rubin");
    }
    config.modular = modular;
  }

  if (const auto t = ini.get(section, "tail_threshold")) {
    config.tail_threshold = std::stod(*t);
  }
  if (const auto a = ini.get(section, "tail_alpha")) {
    config.tail_alpha = std::stod(*a);
  }

  config.basis = parse_basis(ini.get_or(section, "basis", "intercept"), dim);

  // inline likelihood keys (benchmark configs are single-section)
  const std::string kind = ini.get_or(section, "likelihood", "welsch");
  if (kind == "welsch") {
    config.likelihood = LikelihoodSpec::welsch(ini.get_double(section, "c", 1.34));
  } else if (kind == "gaussian") {
    config.likelihood =
        LikelihoodSpec::gaussian(ini.get_double(section, "sigma", 1.0),
                                 ini.get_bool(section, "sigma_fixed", false));
  } else if (kind == "student_t") {
    config.likelihood = LikelihoodSpec::student_t(
        ini.get_double(section, "nu", 4.0),
        ini.get_double(section, "sigma", 1.0),
        ini.get_bool(section, "sigma_fixed", false));
  } else if (kind == "tukey") {
    config.likelihood =
        LikelihoodSpec::tukey(ini.get_double(section, "c", 4.685));
  } else {
    throw InputError("config " + section + ".likelihood: unknown kind '" +
                     kind + "'");
  }
  config.likelihood.eta = ini.get_double(section, "eta", 1.0);
  config.likelihood.mad_rescale = ini.get_bool(section, "mad_rescale", false);

  if (const auto scale = ini.get(section, "prior_scale");
      scale && *scale != "auto") {
    config.prior_scale = std::stod(*scale);
  }

  // inline nuisance overrides for single-section benchmark configs
  const bool has_nuisance_keys =
      ini.get(section, "min_samples_leaf") || ini.get(section, "n_trees") ||
      ini.get(section, "max_depth") || ini.get(section, "nuisance_loss");
  if (has_nuisance_keys) {
    GbtParams params = severity_to_config(config.severity);
    params.n_trees = ini.get_int(section, "n_trees", params.n_trees);
    params.max_depth = ini.get_int(section, "max_depth", params.max_depth);
    params.min_samples_leaf =
        ini.get_int(section, "min_samples_leaf", params.min_samples_leaf);
    if (const auto loss = ini.get(section, "nuisance_loss")) {
      const double tuning = ini.get_double(section, "nuisance_tuning", 1.345);
      if (*loss == "squared") {
        params.loss = LossKind::squared_error();
      } else if (*loss == "huber") {
        params.loss = LossKind::huber(tuning);
      } else if (*loss == "welsch") {
        params.loss = LossKind::welsch(tuning);
      } else if (*loss == "tukey") {
        params.loss = LossKind::tukey(tuning);
      } else {
        throw InputError("config " + section + ".nuisance_loss: unknown '" +
                         *loss + "'");
      }
    }
    config.nuisance_override = params;
  }
  return config;
}

/// Standalone fit config file: a [fit] section plus optional [basis],
/// [likelihood], [prior], [sampler], [nuisance] refinements.
inline FitConfig parse_fit_config(const IniFile& ini, int dim) {
  FitConfig config = parse_fit_section(ini, "fit", dim);

  if (ini.has_section("basis")) {
    config.basis =
        parse_basis(ini.get_or("basis", "terms", "intercept"), dim);
  }

  if (ini.has_section("likelihood")) {
    const std::string kind = ini.get_or("likelihood", "kind", "welsch");
    if (kind == "welsch") {
      config.likelihood =
          LikelihoodSpec::welsch(ini.get_double("likelihood", "c", 1.34));
    } else if (kind == "gaussian") {
      config.likelihood = LikelihoodSpec::gaussian(
          ini.get_double("likelihood", "sigma", 1.0),
          ini.get_bool("likelihood", "sigma_fixed", false));
    } else if (kind == "student_t") {
      config.likelihood = LikelihoodSpec::student_t(
          ini.get_double("likelihood", "nu", 4.0),
          ini.get_double("likelihood", "sigma", 1.0),
          ini.get_bool("likelihood", "sigma_fixed", false));
    } else if (kind == "tukey") {
      config.likelihood =
          LikelihoodSpec::tukey(ini.get_double("likelihood", "c", 4.685));
    } else {
      throw InputError("config likelihood.kind: unknown kind '" + kind + "'");
    }
    config.likelihood.eta = ini.get_double("likelihood", "eta", 1.0);
    config.likelihood.mad_rescale =
        ini.get_bool("likelihood", "mad_rescale", false);
  }

  if (ini.has_section("prior")) {
    const std::string family = ini.get_or("prior", "family", "student_t");
    if (family == "student_t") {
      config.prior_family = PriorFamily::StudentT;
    } else if (family == "gaussian") {
      config.prior_family = PriorFamily::Gaussian;
    } else {
      throw InputError("config prior.family: unknown family '" + family + "'");
    }
    config.prior_nu = ini.get_double("prior", "nu", 3.0);
    if (const auto scale = ini.get("prior", "scale"); scale && *scale != "auto") {
      config.prior_scale = std::stod(*scale);
    }
  }

  if (ini.has_section("sampler")) {
    config.sampler.chains = ini.get_int("sampler", "chains", 2);
    config.sampler.warmup = ini.get_int("sampler", "warmup", 400);
    config.sampler.samples = ini.get_int("sampler", "samples", 800);
    config.sampler.target_accept =
        ini.get_double("sampler", "target_accept", 0.8);
    config.sampler.max_tree_depth =
        ini.get_int("sampler", "max_tree_depth", 10);
  }

  if (ini.has_section("nuisance")) {
    GbtParams params = severity_to_config(config.severity);
    params.n_trees = ini.get_int("nuisance", "n_trees", params.n_trees);
    params.max_depth = ini.get_int("nuisance", "max_depth", params.max_depth);
    params.learning_rate =
        ini.get_double("nuisance", "learning_rate", params.learning_rate);
    params.min_samples_leaf =
        ini.get_int("nuisance", "min_samples_leaf", params.min_samples_leaf);
    if (const auto loss = ini.get("nuisance", "loss")) {
      const double tuning = ini.get_double("nuisance", "tuning", 1.345);
      if (*loss == "squared") {
        params.loss = LossKind::squared_error();
      } else if (*loss == "huber") {
        params.loss = LossKind::huber(tuning);
      } else if (*loss == "welsch") {
        params.loss = LossKind::welsch(tuning);
      } else if (*loss == "tukey") {
        params.loss = LossKind::tukey(tuning);
      } else {
        throw InputError("config nuisance.loss: unknown loss '" + *loss + "'");
      }
    }
    config.nuisance_override = params;
  }
  return config;
}

/// One benchmark cell: a DGP grid point crossed with a named fit config.
struct BenchmarkSpec {
  std::string name;
  DgpKind dgp = DgpKind::Whale;
  std::vector<double> densities;
  int seeds = 3;
  int n = 1000;
  int dim = 5;
  std::map<std::string, double> dgp_params;
  std::vector<std::string> config_names;
  std::vector<FitConfig> configs;
  std::vector<std::string> metrics;
  std::string output_path;
  std::uint64_t master_seed = 0;
};

inline BenchmarkSpec parse_benchmark_spec(const IniFile& ini) {
  if (!ini.has_section("benchmark")) {
    throw InputError("benchmark spec needs a [benchmark] section");
  }
  BenchmarkSpec spec;
  spec.name = ini.get_or("benchmark", "name", "benchmark");
  spec.dgp = dgp_kind_from_name(ini.get_or("benchmark", "dgp", "whale"));
  spec.densities = ini.get_double_list("benchmark", "densities");
  if (spec.densities.empty()) {
    throw InputError("benchmark.densities must list at least one density");
  }
  spec.seeds = ini.get_int("benchmark", "seeds", 3);
  if (spec.seeds < 1) throw InputError("benchmark.seeds must be >= 1");
  spec.n = ini.get_int("benchmark", "n", 1000);
  spec.dim = ini.get_int("benchmark", "dim", 5);
  spec.master_seed =
      static_cast<std::uint64_t>(ini.get_double("benchmark", "seed", 0));
  spec.output_path = ini.get_or("benchmark", "output", spec.name + ".csv");
  for (const auto& [key, value] : ini.section("benchmark")) {
    if (key.rfind("param.", 0) == 0) {
      spec.dgp_params[key.substr(6)] = std::stod(value);
    }
  }
  const auto metrics = ini.get("benchmark", "metrics");
  if (metrics) {
    for (const auto& m : csv_detail::split(*metrics, ',')) {
      if (!m.empty()) spec.metrics.push_back(m);
    }
  } else {
    spec.metrics = {"ate", "ate_error", "pehe", "covered", "ci_width"};
  }

  for (const std::string& section : ini.section_order()) {
    if (section.rfind("config.", 0) != 0) continue;
    spec.config_names.push_back(section.substr(7));
    spec.configs.push_back(parse_fit_section(ini, section, spec.dim));
  }
  if (spec.configs.empty()) {
    throw InputError("benchmark spec needs at least one [config.NAME] section");
  }
  return spec;
}

}  // namespace robust_cate
