#pragma once

#include <span>
#include <string>
#include <vector>

#include "vaebo/error.hpp"

namespace vaebo::metrics {

struct EvalReport {
  double rmse = 0.0;
  double dice = 0.0;
  double threshold = 0.0;
  int true_set_size = 0;
  int est_set_size = 0;
};

double rmse(std::span<const double> truth, std::span<const double> estimate);

inline constexpr int kDefaultBins = 64;

/// Bin edge of an n_bins histogram over [min, max] that minimises the
/// weighted within-class variance of values below / above it. Ties go to the
/// lower edge. Throws NoThreshold for fields with fewer than two distinct values.
double otsu_threshold(std::span<const double> field, int n_bins = kDefaultBins);

/// Indices of entries strictly above `threshold`.
std::vector<int> above(std::span<const double> field, double threshold);

/// 2 |A n B| / (|A| + |B|). Sets are node-index lists (duplicates ignored).
double dice(std::vector<int> a, std::vector<int> b);

/// Raised by evaluate when the estimate cannot be thresholded; the partial
/// report still carries the RMSE.
class EvaluationError : public NoThreshold {
 public:
  EvaluationError(const std::string& what, EvalReport partial) : NoThreshold(what), partial_(partial) {}
  const EvalReport& partial() const noexcept { return partial_; }

 private:
  EvalReport partial_;
};

/// RMSE, Otsu threshold of the estimate, and Dice between the true infarct
/// (entries within 1e-6 of theta_infarct) and the above-threshold nodes.
EvalReport evaluate(std::span<const double> truth, std::span<const double> estimate, double theta_infarct = 0.5,
                    int n_bins = kDefaultBins);

std::string report_to_json(const EvalReport& r);
std::string report_csv_header();
std::string report_csv_row(const EvalReport& r);

}  // namespace vaebo::metrics
