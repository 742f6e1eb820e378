#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace fuselage::svm {

using Matrix = std::vector<std::vector<double>>;  // one row per sample

// Per-dimension z-scoring fitted on training data. Dimensions whose
// population std is below 1e-12 keep std = 1 and therefore map to zero after
// centering.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  std::size_t dimension() const { return mean.size(); }
  std::vector<double> apply(std::span<const double> x) const;

  friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

// Throws ParameterError for empty input or mixed dimensions.
Standardizer fit_standardizer(const Matrix& X);

struct TrainConfig {
  double C = 1.0;
  double tolerance = 1e-4;  // relative duality gap
  int max_epochs = 1000;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TrainReport {
  int epochs = 0;
  bool converged = false;
  double primal = 0.0;
  double dual = 0.0;
  double relative_gap = 0.0;
};

// State exposed to an observer after every epoch.
struct EpochState {
  int epoch = 0;
  std::span<const double> alpha;
  double C = 0.0;
  double primal = 0.0;  // of the incumbent (best iterate so far)
  double dual = 0.0;    // maximization form: sum(alpha) - |w|^2 / 2
  double iterate_primal = 0.0;
};
using EpochObserver = std::function<void(const EpochState&)>;

// Linear decision function on standardized features. The bias is trained as
// the weight of an appended constant-1 feature.
struct LinearSvmModel {
  std::vector<double> w;
  double b = 0.0;
  double C = 1.0;
  Standardizer standardizer;
  TrainReport report;

  std::size_t dimension() const { return w.size(); }
  // w . standardize(x) + b. Throws ParameterError on dimension mismatch.
  double score(std::span<const double> x) const;
};

// Label +1 means defect. The tie score 0 resolves to -1.
struct Prediction {
  int label = -1;
  double score = 0.0;
};
Prediction predict(const LinearSvmModel& model, std::span<const double> x);

// L2-regularized hinge-loss SVM, min 1/2 |w~|^2 + C sum max(0, 1 - y_i w~ . x~_i)
// with x~ = (standardize(x), 1), solved by dual coordinate descent with a
// seeded per-epoch permutation. The returned model is the iterate with the
// lowest primal objective seen at an epoch end. Stops when that primal and the
// current dual are within the relative tolerance, or at max_epochs. Throws
// DatasetError for single-class input and DataError for non-finite features.
LinearSvmModel train_svm(const Matrix& X, std::span<const int> y,
                         const TrainConfig& cfg,
                         const EpochObserver& observer = {});

// Same solver on already-prepared rows (no standardization); exposed so the
// solver can be checked against an independent dual solution. Returns the
// incumbent's augmented weight vector (last entry is the bias) and, through
// alpha_out, its dual variables.
std::vector<double> solve_dual_cd(const Matrix& X, std::span<const int> y,
                                  const TrainConfig& cfg, TrainReport& report,
                                  std::vector<double>* alpha_out = nullptr,
                                  const EpochObserver& observer = {});

// Primal objective for augmented weights w~ on rows X (bias feature appended
// implicitly).
double primal_objective(const Matrix& X, std::span<const int> y,
                        std::span<const double> w_aug, double C);

}  // namespace fuselage::svm
