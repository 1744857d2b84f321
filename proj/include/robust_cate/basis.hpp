#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace robust_cate {

namespace basis_terms {

struct Intercept {};
struct Linear {
  int feature;
};
struct Power {
  int feature;
  int degree;
};
/// 1{|x_f| > threshold} when two_sided, else 1{x_f > threshold}.
struct TailIndicator {
  int feature;
  double threshold;
  bool two_sided = true;
};
/// Truncated cubic power term max(x_f - knot, 0)^3.
struct SplineKnot {
  int feature;
  double knot;
};

}  // namespace basis_terms

using BasisTerm =
    std::variant<basis_terms::Intercept, basis_terms::Linear,
                 basis_terms::Power, basis_terms::TailIndicator,
                 basis_terms::SplineKnot>;

/// Declarative CATE basis phi(x); tau(x) = phi(x)' beta.
struct BasisSpec {
  std::vector<BasisTerm> terms;

  int p() const { return static_cast<int>(terms.size()); }

  static BasisSpec intercept_only() {
    return BasisSpec{{basis_terms::Intercept{}}};
  }

  static BasisSpec tail(int feature, double threshold, bool two_sided = true) {
    return BasisSpec{{basis_terms::Intercept{},
                      basis_terms::TailIndicator{feature, threshold, two_sided}}};
  }

  static BasisSpec linear_all(int dim) {
    BasisSpec spec{{basis_terms::Intercept{}}};
    for (int j = 0; j < dim; ++j) spec.terms.push_back(basis_terms::Linear{j});
    return spec;
  }

  std::string term_name(int index) const {
    const BasisTerm& term = terms.at(index);
    if (std::holds_alternative<basis_terms::Intercept>(term)) return "1";
    if (const auto* lin = std::get_if<basis_terms::Linear>(&term)) {
      return "x" + std::to_string(lin->feature);
    }
    if (const auto* pw = std::get_if<basis_terms::Power>(&term)) {
      return "x" + std::to_string(pw->feature) + "^" + std::to_string(pw->degree);
    }
    if (const auto* tl = std::get_if<basis_terms::TailIndicator>(&term)) {
      const std::string var = tl->two_sided
                                  ? "|x" + std::to_string(tl->feature) + "|"
                                  : "x" + std::to_string(tl->feature);
      return "1{" + var + ">" + std::to_string(tl->threshold) + "}";
    }
    const auto& sp = std::get<basis_terms::SplineKnot>(term);
    return "(x" + std::to_string(sp.feature) + "-" + std::to_string(sp.knot) +
           ")+^3";
  }
};

struct DesignMatrix {
  Eigen::MatrixXd phi;
  BasisSpec spec;
};

inline double evaluate_term(const BasisTerm& term,
                            const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  struct Visitor {
    const Eigen::Ref<const Eigen::RowVectorXd>& x;
    double operator()(const basis_terms::Intercept&) const { return 1.0; }
    double operator()(const basis_terms::Linear& t) const { return x[t.feature]; }
    double operator()(const basis_terms::Power& t) const {
      return std::pow(x[t.feature], t.degree);
    }
    double operator()(const basis_terms::TailIndicator& t) const {
      const double v = t.two_sided ? std::abs(x[t.feature]) : x[t.feature];
      return v > t.threshold ? 1.0 : 0.0;
    }
    double operator()(const basis_terms::SplineKnot& t) const {
      const double d = x[t.feature] - t.knot;
      return d > 0.0 ? d * d * d : 0.0;
    }
  };
  return std::visit(Visitor{x}, term);
}

inline void check_basis(const BasisSpec& spec, Eigen::Index dim) {
  if (spec.terms.empty()) throw std::invalid_argument("basis: no terms");
  for (const BasisTerm& term : spec.terms) {
    const int feature = std::visit(
        [](const auto& t) -> int {
          using T = std::decay_t<decltype(t)>;
          if constexpr (std::is_same_v<T, basis_terms::Intercept>) {
            return 0;
          } else {
            return t.feature;
          }
        },
        term);
    if (feature < 0 || feature >= dim) {
      throw std::invalid_argument("basis: feature index out of range");
    }
  }
}

inline DesignMatrix evaluate_basis(const BasisSpec& spec,
                                   const Eigen::MatrixXd& x) {
  check_basis(spec, x.cols());
  Eigen::MatrixXd phi(x.rows(), spec.p());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < spec.p(); ++j) {
      phi(i, j) = evaluate_term(spec.terms[j], x.row(i));
    }
  }
  return {std::move(phi), spec};
}

}  // namespace robust_cate
