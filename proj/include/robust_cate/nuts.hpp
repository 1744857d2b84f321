#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "robust_cate/rng.hpp"

namespace robust_cate {

struct SamplerConfig {
  int chains = 2;
  int warmup = 400;
  int samples = 800;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::optional<Eigen::VectorXd> init;

  void validate() const {
    if (chains < 1 || warmup < 20 || samples < 1) {
      throw std::invalid_argument("sampler: chains >= 1, warmup >= 20, samples >= 1");
    }
    if (!(target_accept > 0.0) || !(target_accept < 1.0)) {
      throw std::invalid_argument("sampler: target_accept outside (0,1)");
    }
    if (max_tree_depth < 1 || max_tree_depth > 14) {
      throw std::invalid_argument("sampler: max_tree_depth outside [1,14]");
    }
  }
};

/// Per-chain draws with the sampler statistics needed downstream.
struct PosteriorDraws {
  std::vector<Eigen::MatrixXd> chains;              // samples x dim each
  Eigen::MatrixXd energy;                           // chains x samples
  std::vector<std::vector<std::uint8_t>> divergent; // per chain, per draw
  int warmup = 0;
  int divergence_count = 0;                         // sampling phase only
  double step_size = 0.0;
  Eigen::VectorXd mass_diag;

  int n_chains() const { return static_cast<int>(chains.size()); }
  int n_samples() const {
    return chains.empty() ? 0 : static_cast<int>(chains[0].rows());
  }
  int dim() const { return chains.empty() ? 0 : static_cast<int>(chains[0].cols()); }
  int total_draws() const { return n_chains() * n_samples(); }

  Eigen::MatrixXd stacked() const {
    Eigen::MatrixXd out(total_draws(), dim());
    Eigen::Index row = 0;
    for (const auto& chain : chains) {
      out.middleRows(row, chain.rows()) = chain;
      row += chain.rows();
    }
    return out;
  }
};

namespace nuts_detail {

constexpr double kDivergenceThreshold = 1000.0;

struct PhasePoint {
  Eigen::VectorXd q;
  Eigen::VectorXd p;
  Eigen::VectorXd grad;
  double logp = 0.0;
};

struct DualAveraging {
  double mu = 0.0;
  double log_eps = 0.0;
  double log_eps_bar = 0.0;
  double h_bar = 0.0;
  int t = 0;
  static constexpr double gamma = 0.05;
  static constexpr double t0 = 10.0;
  static constexpr double kappa = 0.75;

  void reset(double eps0) {
    mu = std::log(10.0 * eps0);
    log_eps = std::log(eps0);
    log_eps_bar = std::log(eps0);
    h_bar = 0.0;
    t = 0;
  }

  void update(double accept_prob, double target) {
    ++t;
    h_bar += (target - accept_prob - h_bar) / (t + t0);
    log_eps = mu - std::sqrt(static_cast<double>(t)) / gamma * h_bar;
    const double eta = std::pow(static_cast<double>(t), -kappa);
    log_eps_bar = eta * log_eps + (1.0 - eta) * log_eps_bar;
  }
};

template <typename Target>
class ChainRunner {
 public:
  ChainRunner(const Target& target, int dim, const SamplerConfig& config,
              Rng rng)
      : target_(target), dim_(dim), config_(config), rng_(std::move(rng)),
        inv_mass_(Eigen::VectorXd::Ones(dim)),
        mass_(Eigen::VectorXd::Ones(dim)) {}

  struct Output {
    Eigen::MatrixXd draws;
    Eigen::VectorXd energy;
    std::vector<std::uint8_t> divergent;
    int divergences = 0;
    double step_size = 0.0;
    Eigen::VectorXd mass_diag;
  };

  Output run(const Eigen::VectorXd& init) {
    PhasePoint z;
    z.q = init;
    z.grad.resize(dim_);
    z.logp = target_(z.q, z.grad);
    if (!std::isfinite(z.logp)) {
      throw std::runtime_error("nuts: target not finite at the initial point");
    }

    eps_ = find_reasonable_epsilon(z);
    da_.reset(eps_);

    // Mass window: accumulate over [warmup/2, 0.9 warmup), apply at 0.9,
    // then let dual averaging re-tune the step size on the new metric.
    const int mass_begin = config_.warmup / 2;
    const int mass_end = std::max(mass_begin + 1,
                                  static_cast<int>(0.9 * config_.warmup));
    Eigen::VectorXd welford_mean = Eigen::VectorXd::Zero(dim_);
    Eigen::VectorXd welford_m2 = Eigen::VectorXd::Zero(dim_);
    int welford_n = 0;

    Output out;
    out.draws.resize(config_.samples, dim_);
    out.energy.resize(config_.samples);
    out.divergent.assign(config_.samples, 0);

    const int total = config_.warmup + config_.samples;
    for (int iter = 0; iter < total; ++iter) {
      const bool warming = iter < config_.warmup;
      const IterResult res = transition(z);
      z = res.next;

      if (warming) {
        da_.update(res.accept_stat, config_.target_accept);
        eps_ = std::exp(da_.log_eps);
        if (iter >= mass_begin && iter < mass_end) {
          ++welford_n;
          const Eigen::VectorXd delta = z.q - welford_mean;
          welford_mean += delta / welford_n;
          welford_m2 += delta.cwiseProduct(z.q - welford_mean);
        }
        if (iter + 1 == mass_end && welford_n >= 10) {
          const double shrink = static_cast<double>(welford_n) / (welford_n + 5.0);
          const Eigen::VectorXd var = welford_m2 / (welford_n - 1.0);
          mass_ = (shrink * var.array() + (1.0 - shrink) * 1e-3)
                      .max(1e-10)
                      .matrix();
          inv_mass_ = mass_.cwiseInverse();
          eps_ = find_reasonable_epsilon(z);
          da_.reset(eps_);
        }
        if (iter + 1 == config_.warmup) {
          eps_ = std::exp(da_.log_eps_bar);
        }
      } else {
        const int s = iter - config_.warmup;
        out.draws.row(s) = z.q;
        out.energy[s] = res.energy;
        out.divergent[s] = res.divergent ? 1 : 0;
        if (res.divergent) ++out.divergences;
      }
    }
    out.step_size = eps_;
    out.mass_diag = mass_;
    return out;
  }

 private:
  struct IterResult {
    PhasePoint next;
    double accept_stat = 0.0;
    double energy = 0.0;
    bool divergent = false;
  };

  struct Subtree {
    PhasePoint z_minus;
    PhasePoint z_plus;
    Eigen::VectorXd proposal_q;
    Eigen::VectorXd proposal_grad;
    double proposal_logp = 0.0;
    double proposal_kinetic = 0.0;
    double log_weight = -std::numeric_limits<double>::infinity();
    double sum_alpha = 0.0;
    int n_alpha = 0;
    bool turning = false;
    bool divergent = false;
  };

  double kinetic(const Eigen::VectorXd& p) const {
    return 0.5 * p.cwiseProduct(inv_mass_).dot(p);
  }

  double hamiltonian(const PhasePoint& z) const {
    return -z.logp + kinetic(z.p);
  }

  void leapfrog(PhasePoint& z, double direction) const {
    const double eps = direction * eps_;
    z.p += 0.5 * eps * z.grad;
    z.q += eps * inv_mass_.cwiseProduct(z.p);
    z.logp = target_(z.q, z.grad);
    z.p += 0.5 * eps * z.grad;
  }

  bool uturn(const PhasePoint& minus, const PhasePoint& plus) const {
    const Eigen::VectorXd dq = plus.q - minus.q;
    return dq.dot(inv_mass_.cwiseProduct(minus.p)) < 0.0 ||
           dq.dot(inv_mass_.cwiseProduct(plus.p)) < 0.0;
  }

  double find_reasonable_epsilon(const PhasePoint& origin) {
    double eps = 1.0;
    PhasePoint z = origin;
    z.p.resize(dim_);
    for (int j = 0; j < dim_; ++j) {
      z.p[j] = rng_.normal() * std::sqrt(mass_[j]);
    }
    const double h0 = hamiltonian(z);
    PhasePoint trial = z;
    auto log_ratio = [&]() {
      eps_ = eps;
      trial = z;
      leapfrog(trial, 1.0);
      const double h1 = hamiltonian(trial);
      return std::isfinite(h1) ? h0 - h1 : -1e10;
    };
    double lr = log_ratio();
    const double dir = lr > std::log(0.5) ? 1.0 : -1.0;
    for (int i = 0; i < 60; ++i) {
      if (dir * lr <= dir * std::log(0.5) && i > 0) break;
      eps *= dir > 0 ? 2.0 : 0.5;
      lr = log_ratio();
      if (eps < 1e-12 || eps > 1e7) break;
    }
    return eps;
  }

  IterResult transition(const PhasePoint& current) {
    PhasePoint z = current;
    z.p.resize(dim_);
    for (int j = 0; j < dim_; ++j) {
      z.p[j] = rng_.normal() * std::sqrt(mass_[j]);
    }
    const double h0 = hamiltonian(z);

    Subtree traj;
    traj.z_minus = z;
    traj.z_plus = z;
    traj.proposal_q = z.q;
    traj.proposal_grad = z.grad;
    traj.proposal_logp = z.logp;
    traj.proposal_kinetic = kinetic(z.p);
    traj.log_weight = 0.0;  // exp(h0 - H(z)) = 1 for the initial point

    IterResult res;
    res.divergent = false;
    double sum_alpha = 0.0;
    int n_alpha = 0;

    for (int depth = 0; depth < config_.max_tree_depth; ++depth) {
      const double direction = rng_.bernoulli(0.5) ? 1.0 : -1.0;
      Subtree fresh = build_tree(direction > 0 ? traj.z_plus : traj.z_minus,
                                 depth, direction, h0);
      sum_alpha += fresh.sum_alpha;
      n_alpha += fresh.n_alpha;
      if (fresh.divergent) {
        res.divergent = true;
        break;
      }
      if (fresh.turning) break;

      // Biased progressive sampling: favour the fresh subtree.
      const double accept_new = std::exp(fresh.log_weight - traj.log_weight);
      if (rng_.uniform() < accept_new) {
        traj.proposal_q = fresh.proposal_q;
        traj.proposal_grad = fresh.proposal_grad;
        traj.proposal_logp = fresh.proposal_logp;
        traj.proposal_kinetic = fresh.proposal_kinetic;
      }
      if (direction > 0) {
        traj.z_plus = fresh.z_plus;
      } else {
        traj.z_minus = fresh.z_minus;
      }
      traj.log_weight = log_add(traj.log_weight, fresh.log_weight);
      if (uturn(traj.z_minus, traj.z_plus)) break;
    }

    res.next.q = traj.proposal_q;
    res.next.grad = traj.proposal_grad;
    res.next.logp = traj.proposal_logp;
    res.next.p = Eigen::VectorXd::Zero(dim_);  // refreshed next iteration
    res.accept_stat = n_alpha > 0 ? sum_alpha / n_alpha : 0.0;
    res.energy = -traj.proposal_logp + traj.proposal_kinetic;
    return res;
  }

  Subtree build_tree(const PhasePoint& from, int depth, double direction,
                     double h0) {
    if (depth == 0) {
      Subtree leaf;
      PhasePoint z = from;
      leapfrog(z, direction);
      const double h = hamiltonian(z);
      const double delta = std::isfinite(h) ? h - h0
                                            : std::numeric_limits<double>::infinity();
      leaf.divergent = delta > kDivergenceThreshold;
      leaf.sum_alpha = std::isfinite(delta) ? std::min(1.0, std::exp(-delta)) : 0.0;
      leaf.n_alpha = 1;
      leaf.z_minus = z;
      leaf.z_plus = z;
      leaf.proposal_q = z.q;
      leaf.proposal_grad = z.grad;
      leaf.proposal_logp = z.logp;
      leaf.proposal_kinetic = kinetic(z.p);
      leaf.log_weight = -delta;  // log exp(h0 - h)
      return leaf;
    }

    Subtree first = build_tree(from, depth - 1, direction, h0);
    if (first.divergent || first.turning) return first;
    Subtree second = build_tree(direction > 0 ? first.z_plus : first.z_minus,
                                depth - 1, direction, h0);
    Subtree merged;
    merged.sum_alpha = first.sum_alpha + second.sum_alpha;
    merged.n_alpha = first.n_alpha + second.n_alpha;
    merged.divergent = second.divergent;
    if (merged.divergent) return merged;

    merged.z_minus = direction > 0 ? first.z_minus : second.z_minus;
    merged.z_plus = direction > 0 ? second.z_plus : first.z_plus;
    merged.log_weight = log_add(first.log_weight, second.log_weight);
    // Multinomial sampling within the subtree.
    const double take_second =
        std::exp(second.log_weight - merged.log_weight);
    const Subtree& chosen = rng_.uniform() < take_second ? second : first;
    merged.proposal_q = chosen.proposal_q;
    merged.proposal_grad = chosen.proposal_grad;
    merged.proposal_logp = chosen.proposal_logp;
    merged.proposal_kinetic = chosen.proposal_kinetic;
    merged.turning = second.turning || uturn(merged.z_minus, merged.z_plus);
    return merged;
  }

  static double log_add(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
  }

  const Target& target_;
  int dim_;
  SamplerConfig config_;
  Rng rng_;
  Eigen::VectorXd inv_mass_;
  Eigen::VectorXd mass_;
  DualAveraging da_;
  double eps_ = 1.0;
};

}  // namespace nuts_detail

/// Multinomial NUTS with dual-averaging step-size adaptation and a diagonal
/// mass matrix estimated from the second half of warmup. Chains draw from
/// split RNG streams, so the draws of chain c do not depend on how many
/// chains run.
template <typename Target>
PosteriorDraws nuts_sample(const Target& target, int dim,
                           const SamplerConfig& config, std::uint64_t seed) {
  config.validate();
  Eigen::VectorXd init =
      config.init ? *config.init : Eigen::VectorXd::Zero(dim);
  if (init.size() != dim) {
    throw std::invalid_argument("nuts: init has wrong dimension");
  }

  PosteriorDraws draws;
  draws.warmup = config.warmup;
  draws.energy.resize(config.chains, config.samples);
  for (int c = 0; c < config.chains; ++c) {
    nuts_detail::ChainRunner<Target> runner(
        target, dim, config, Rng(derive_seed(seed, 0x4e55'5453ULL, c)));
    auto out = runner.run(init);
    draws.chains.push_back(std::move(out.draws));
    draws.energy.row(c) = out.energy;
    draws.divergent.push_back(std::move(out.divergent));
    draws.divergence_count += out.divergences;
    if (c == 0) {
      draws.step_size = out.step_size;
      draws.mass_diag = out.mass_diag;
    }
  }
  return draws;
}

}  // namespace robust_cate
