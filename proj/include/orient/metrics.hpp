#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

namespace orient {

struct ClassificationMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<double> per_class_f1;
};

// Macro-F1 averages over classes present in labels or predictions. A class
// with no true and no predicted samples is skipped; one with support but no
// true positives scores 0.
inline ClassificationMetrics classification_metrics(const std::vector<int>& predictions, const std::vector<int>& labels,
                                                    std::size_t num_classes) {
  if (labels.empty()) throw std::invalid_argument("evaluate: empty sample set");
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(labels.size()) + " labels");
  }
  ClassificationMetrics m;
  m.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if (y < 0 || p < 0 || static_cast<std::size_t>(y) >= num_classes || static_cast<std::size_t>(p) >= num_classes) {
      throw std::invalid_argument("evaluate: class id outside [0," + std::to_string(num_classes) + ")");
    }
    ++m.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
    if (y == p) ++correct;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());

  m.per_class_f1.assign(num_classes, 0.0);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    std::size_t tp = m.confusion[k][k], actual = 0, predicted = 0;
    for (std::size_t j = 0; j < num_classes; ++j) {
      actual += m.confusion[k][j];
      predicted += m.confusion[j][k];
    }
    if (actual == 0 && predicted == 0) continue;
    ++present;
    // 2PR/(P+R) == 2TP/(actual+predicted)
    m.per_class_f1[k] = tp == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(actual + predicted);
    sum += m.per_class_f1[k];
  }
  m.macro_f1 = sum / static_cast<double>(present);
  return m;
}

// ---------------------------------------------------------------------------
// Paired t-test over per-seed metric pairs
// ---------------------------------------------------------------------------

struct PairedTTest {
  std::size_t n = 0;
  double mean_difference = 0.0;  // mean(a - b)
  double t = 0.0;
  double degrees_of_freedom = 0.0;
  double p_value = 1.0;  // two-sided
};

inline PairedTTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: samples differ in length");
  if (a.size() < 2) throw std::invalid_argument("paired_t_test: need at least 2 pairs");
  PairedTTest r;
  r.n = a.size();
  r.degrees_of_freedom = static_cast<double>(r.n - 1);
  std::vector<double> d(r.n);
  for (std::size_t i = 0; i < r.n; ++i) d[i] = a[i] - b[i];
  double mean = 0.0;
  for (double x : d) mean += x;
  mean /= static_cast<double>(r.n);
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / r.degrees_of_freedom);
  r.mean_difference = mean;
  if (sd == 0.0) {
    r.t = mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean);
    r.p_value = mean == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(r.n)));
  boost::math::students_t dist(r.degrees_of_freedom);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

// ---------------------------------------------------------------------------
// Theta statistics
// ---------------------------------------------------------------------------

struct ThetaSummary {
  double mean = 0.0;
  double std = 0.0;  // population
  std::vector<double> finals;
};

inline ThetaSummary theta_summary(const std::vector<double>& finals) {
  if (finals.empty()) throw std::invalid_argument("theta_summary: no completed runs");
  ThetaSummary s;
  s.finals = finals;
  for (double v : finals) s.mean += v;
  s.mean /= static_cast<double>(finals.size());
  double ss = 0.0;
  for (double v : finals) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(finals.size()));
  return s;
}

}  // namespace orient
