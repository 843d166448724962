#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

// Confusion-matrix bookkeeping and the support-weighted classification
// metrics shared by the model evaluation path and the baselines.

namespace samcnet {

struct Metrics {
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  double precision = 0.0;  // support-weighted
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  double per_sample_seconds = 0.0;
};

inline Metrics metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion) {
  const std::size_t c = confusion.size();
  if (c == 0) throw std::invalid_argument("metrics: empty confusion matrix");
  for (const auto& row : confusion)
    if (row.size() != c) throw std::invalid_argument("metrics: confusion matrix not square");

  std::size_t total = 0, diag = 0;
  std::vector<std::size_t> row_sum(c, 0), col_sum(c, 0);
  for (std::size_t t = 0; t < c; ++t)
    for (std::size_t p = 0; p < c; ++p) {
      row_sum[t] += confusion[t][p];
      col_sum[p] += confusion[t][p];
      total += confusion[t][p];
      if (t == p) diag += confusion[t][p];
    }
  if (total == 0) throw std::invalid_argument("metrics: no samples");

  Metrics m;
  m.confusion = std::move(confusion);
  m.accuracy = static_cast<double>(diag) / static_cast<double>(total);
  for (std::size_t t = 0; t < c; ++t) {
    const double support = static_cast<double>(row_sum[t]);
    if (support == 0) continue;
    const double tp = static_cast<double>(m.confusion[t][t]);
    const double prec = col_sum[t] > 0 ? tp / static_cast<double>(col_sum[t]) : 0.0;
    const double rec = tp / support;
    const double f1 = (prec + rec) > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    const double w = support / static_cast<double>(total);
    m.precision += w * prec;
    m.recall += w * rec;
    m.f1 += w * f1;
  }
  return m;
}

inline double accuracy_of(const std::vector<std::size_t>& predictions,
                          const std::vector<std::size_t>& labels) {
  if (predictions.size() != labels.size() || predictions.empty())
    throw std::invalid_argument("accuracy: size mismatch or empty");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

}  // namespace samcnet
