#include "vaebo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace vaebo::metrics {

double rmse(std::span<const double> truth, std::span<const double> estimate) {
  if (truth.size() != estimate.size()) throw std::invalid_argument("rmse: field lengths differ");
  if (truth.empty()) throw std::invalid_argument("rmse: empty fields");
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) s += (truth[i] - estimate[i]) * (truth[i] - estimate[i]);
  return std::sqrt(s / static_cast<double>(truth.size()));
}

double otsu_threshold(std::span<const double> field, int n_bins) {
  if (n_bins < 2) throw std::invalid_argument("otsu: need at least two bins");
  if (field.empty()) throw NoThreshold("no threshold: empty field");
  const auto [lo_it, hi_it] = std::minmax_element(field.begin(), field.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) throw NoThreshold("no threshold: field is constant");

  const double width = (hi - lo) / n_bins;
  std::vector<double> count(n_bins, 0.0), sum(n_bins, 0.0), sumsq(n_bins, 0.0);
  for (double v : field) {
    int b = std::clamp(static_cast<int>((v - lo) / width), 0, n_bins - 1);
    count[b] += 1.0;
    sum[b] += v;
    sumsq[b] += v * v;
  }
  double best = std::numeric_limits<double>::infinity();
  int best_edge = -1;
  double c0 = 0, s0 = 0, q0 = 0;
  const double ct = static_cast<double>(field.size());
  double st = 0, qt = 0;
  for (int b = 0; b < n_bins; ++b) {
    st += sum[b];
    qt += sumsq[b];
  }
  // Edge k sits between bins k-1 and k.
  for (int k = 1; k < n_bins; ++k) {
    c0 += count[k - 1];
    s0 += sum[k - 1];
    q0 += sumsq[k - 1];
    const double c1 = ct - c0;
    if (c0 == 0 || c1 == 0) continue;
    const double s1 = st - s0, q1 = qt - q0;
    const double within = (q0 - s0 * s0 / c0) + (q1 - s1 * s1 / c1);
    if (best_edge < 0 || within < best - 1e-12 * std::max(1.0, std::abs(best))) {
      best = within;
      best_edge = k;
    }
  }
  if (best_edge < 0) throw NoThreshold("no threshold: all values share one histogram bin");
  return lo + best_edge * width;
}

std::vector<int> above(std::span<const double> field, double threshold) {
  std::vector<int> out;
  for (std::size_t i = 0; i < field.size(); ++i)
    if (field[i] > threshold) out.push_back(static_cast<int>(i));
  return out;
}

double dice(std::vector<int> a, std::vector<int> b) {
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  if (a.empty() && b.empty()) throw std::invalid_argument("dice: both sets are empty");
  std::vector<int> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  return 2.0 * static_cast<double>(common.size()) / static_cast<double>(a.size() + b.size());
}

EvalReport evaluate(std::span<const double> truth, std::span<const double> estimate, double theta_infarct,
                    int n_bins) {
  EvalReport r;
  r.rmse = rmse(truth, estimate);
  std::vector<int> true_set;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (std::abs(truth[i] - theta_infarct) <= 1e-6) true_set.push_back(static_cast<int>(i));
  r.true_set_size = static_cast<int>(true_set.size());
  try {
    r.threshold = otsu_threshold(estimate, n_bins);
  } catch (const NoThreshold& e) {
    r.threshold = std::numeric_limits<double>::quiet_NaN();
    r.dice = std::numeric_limits<double>::quiet_NaN();
    throw EvaluationError(e.what(), r);
  }
  auto est_set = above(estimate, r.threshold);
  r.est_set_size = static_cast<int>(est_set.size());
  r.dice = (true_set.empty() && est_set.empty()) ? 1.0 : dice(true_set, est_set);
  return r;
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::json j{{"rmse", r.rmse},
                   {"dice", r.dice},
                   {"threshold", r.threshold},
                   {"true_set_size", r.true_set_size},
                   {"est_set_size", r.est_set_size},
                   {"infarct_side", "above_threshold"}};
  return j.dump(2) + "\n";
}

std::string report_csv_header() { return "rmse,dice,threshold,true_set_size,est_set_size\n"; }

std::string report_csv_row(const EvalReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%d,%d\n", r.rmse, r.dice, r.threshold, r.true_set_size,
                r.est_set_size);
  return buf;
}

}  // namespace vaebo::metrics
