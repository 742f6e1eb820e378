#include "fuselage/svm.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fuselage/errors.h"
#include "fuselage/random.h"

namespace fuselage::svm {
namespace {

constexpr double kStdFloor = 1e-12;

double dot_aug(std::span<const double> w_aug, const std::vector<double>& x) {
  double s = w_aug.back();  // bias feature is the constant 1
  for (std::size_t j = 0; j < x.size(); ++j) s += w_aug[j] * x[j];
  return s;
}

void check_rows(const Matrix& X) {
  if (X.empty()) throw ParameterError("empty training matrix");
  const std::size_t dim = X.front().size();
  for (const auto& row : X) {
    if (row.size() != dim) throw ParameterError("rows have mixed dimensions");
  }
}

}  // namespace

std::vector<double> Standardizer::apply(std::span<const double> x) const {
  if (x.size() != mean.size()) {
    throw ParameterError("standardizer expects dimension " +
                         std::to_string(mean.size()) + ", got " +
                         std::to_string(x.size()));
  }
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / stddev[j];
  return out;
}

Standardizer fit_standardizer(const Matrix& X) {
  check_rows(X);
  const std::size_t dim = X.front().size();
  const double n = static_cast<double>(X.size());
  Standardizer s{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
  for (const auto& row : X) {
    for (std::size_t j = 0; j < dim; ++j) s.mean[j] += row[j];
  }
  for (double& m : s.mean) m /= n;
  for (const auto& row : X) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = row[j] - s.mean[j];
      s.stddev[j] += d * d;
    }
  }
  for (double& v : s.stddev) {
    v = std::sqrt(v / n);
    if (v < kStdFloor) v = 1.0;
  }
  return s;
}

void TrainConfig::validate() const {
  if (!(C > 0.0)) throw ParameterError("SVM C must be > 0");
  if (!(tolerance > 0.0)) throw ParameterError("SVM tolerance must be > 0");
  if (max_epochs < 1) throw ParameterError("SVM max_epochs must be >= 1");
}

double LinearSvmModel::score(std::span<const double> x) const {
  const std::vector<double> z = standardizer.apply(x);
  if (z.size() != w.size()) throw ParameterError("model dimension mismatch");
  double s = b;
  for (std::size_t j = 0; j < z.size(); ++j) s += w[j] * z[j];
  return s;
}

Prediction predict(const LinearSvmModel& model, std::span<const double> x) {
  const double s = model.score(x);
  return {s > 0.0 ? 1 : -1, s};
}

double primal_objective(const Matrix& X, std::span<const int> y,
                        std::span<const double> w_aug, double C) {
  double reg = 0.0;
  for (double v : w_aug) reg += v * v;
  double loss = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    loss += std::max(0.0, 1.0 - y[i] * dot_aug(w_aug, X[i]));
  }
  return 0.5 * reg + C * loss;
}

std::vector<double> solve_dual_cd(const Matrix& X, std::span<const int> y,
                                  const TrainConfig& cfg, TrainReport& report,
                                  std::vector<double>* alpha_out,
                                  const EpochObserver& observer) {
  cfg.validate();
  check_rows(X);
  if (y.size() != X.size()) throw ParameterError("label count differs from rows");
  bool has_pos = false;
  bool has_neg = false;
  for (int label : y) {
    if (label == 1) {
      has_pos = true;
    } else if (label == -1) {
      has_neg = true;
    } else {
      throw ParameterError("labels must be -1 or +1");
    }
  }
  if (!has_pos || !has_neg) throw DatasetError("training data has a single class");
  for (const auto& row : X) {
    for (double v : row) {
      if (!std::isfinite(v)) throw DataError("non-finite feature value");
    }
  }

  const std::size_t n = X.size();
  const std::size_t dim = X.front().size();
  std::vector<double> w(dim + 1, 0.0);
  std::vector<double> alpha(n, 0.0);
  std::vector<double> q_diag(n);
  for (std::size_t i = 0; i < n; ++i) {
    q_diag[i] = 1.0 + std::inner_product(X[i].begin(), X[i].end(), X[i].begin(), 0.0);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);

  std::vector<double> best_w = w;
  std::vector<double> best_alpha = alpha;
  double best_primal = 0.0;

  report = {};
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t i : order) {
      const double g = y[i] * dot_aug(w, X[i]) - 1.0;
      double pg = g;
      if (alpha[i] == 0.0) {
        pg = std::min(g, 0.0);
      } else if (alpha[i] == cfg.C) {
        pg = std::max(g, 0.0);
      }
      if (pg == 0.0) continue;
      const double old = alpha[i];
      alpha[i] = std::clamp(old - g / q_diag[i], 0.0, cfg.C);
      const double delta = (alpha[i] - old) * y[i];
      if (delta == 0.0) continue;
      for (std::size_t j = 0; j < dim; ++j) w[j] += delta * X[i][j];
      w[dim] += delta;
    }

    // The incumbent is the iterate with the lowest primal so far; dual
    // coordinate descent only guarantees dual progress.
    const double primal = primal_objective(X, y, w, cfg.C);
    if (epoch == 1 || primal < best_primal) {
      best_primal = primal;
      best_w = w;
      best_alpha = alpha;
    }
    const double w_sq = std::inner_product(w.begin(), w.end(), w.begin(), 0.0);
    const double dual = std::accumulate(alpha.begin(), alpha.end(), 0.0) - 0.5 * w_sq;
    report.epochs = epoch;
    report.primal = best_primal;
    report.dual = dual;
    report.relative_gap = (best_primal - dual) / std::max(std::abs(best_primal), 1e-300);
    if (observer) observer({epoch, alpha, cfg.C, best_primal, dual, primal});
    if (report.relative_gap <= cfg.tolerance) {
      report.converged = true;
      break;
    }
  }
  if (alpha_out) *alpha_out = std::move(best_alpha);
  return best_w;
}

LinearSvmModel train_svm(const Matrix& X, std::span<const int> y,
                         const TrainConfig& cfg, const EpochObserver& observer) {
  check_rows(X);
  LinearSvmModel model;
  model.C = cfg.C;
  model.standardizer = fit_standardizer(X);
  Matrix Z;
  Z.reserve(X.size());
  for (const auto& row : X) Z.push_back(model.standardizer.apply(row));
  std::vector<double> w_aug = solve_dual_cd(Z, y, cfg, model.report, nullptr, observer);
  model.b = w_aug.back();
  w_aug.pop_back();
  model.w = std::move(w_aug);
  return model;
}

}  // namespace fuselage::svm
