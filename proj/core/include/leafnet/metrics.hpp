// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "leafnet/tensor.hpp"

namespace leafnet {

/// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes, std::vector<std::string> class_names = {});
  static ConfusionMatrix from_predictions(std::span<const std::size_t> labels,
                                          std::span<const std::size_t> predictions, std::size_t classes,
                                          std::vector<std::string> class_names = {});
  static ConfusionMatrix from_counts(const std::vector<std::vector<std::uint64_t>>& counts,
                                     std::vector<std::string> class_names = {});

  std::size_t classes() const { return k_; }
  const std::vector<std::string>& class_names() const { return names_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * k_ + predicted]; }
  void add(std::size_t truth, std::size_t predicted, std::uint64_t n = 1);

  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_sum(std::size_t k) const;
  std::uint64_t col_sum(std::size_t k) const;
  std::vector<std::uint64_t> supports() const;
  std::vector<std::vector<std::uint64_t>> rows() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_;
  std::vector<std::string> names_;
  std::vector<std::uint64_t> counts_;
};

/// Per-class values; `undefined[k]` marks a zero denominator, for which the
/// value is reported as 0.
struct ClassMetric {
  std::vector<double> values;
  std::vector<bool> undefined;
};

double accuracy(const ConfusionMatrix& cm);
ClassMetric precision_per_class(const ConfusionMatrix& cm);
ClassMetric recall_per_class(const ConfusionMatrix& cm);
double f1(double precision, double recall);
double weighted_average(std::span<const double> values, std::span<const std::uint64_t> supports);

/// Mann-Whitney statistic with midranks for ties; requires at least one
/// positive and one negative.
double binary_auc(std::span<const double> scores, std::span<const bool> positive);

struct AucResult {
  std::vector<double> per_class;  // 0 where undefined
  std::vector<bool> undefined;
  double weighted = 0.0;  // support-weighted over defined classes
};

/// One-vs-rest AUC for an [N x K] score matrix.
AucResult ovr_auc(const Tensor& scores, std::span<const std::size_t> labels);

/// Row-wise argmax, lowest index on ties.
std::vector<std::size_t> argmax_rows(const Tensor& scores);

struct ReportMetadata {
  std::string model;
  std::string dataset;
  std::string timestamp;
};

struct ClassRow {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
  std::vector<std::string> flags;

  bool operator==(const ClassRow&) const = default;
};

struct EvalReport {
  ReportMetadata meta;
  double accuracy = 0.0;
  double precision_w = 0.0;
  double recall_w = 0.0;
  double f1_w = 0.0;
  std::optional<double> auc_w;
  std::vector<ClassRow> per_class;
  std::vector<std::vector<std::uint64_t>> confusion;
};

/// scores may be undefined (no AUC); otherwise [N x K] aligned with labels.
EvalReport build_report(const ConfusionMatrix& cm, const Tensor& scores, std::span<const std::size_t> labels,
                        ReportMetadata meta);

/// Metric values are rounded to 4 decimals.
nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
EvalReport load_report(const std::string& path);
void save_report(const EvalReport& report, const std::string& path);

enum class TableFormat { Text, Csv };

/// Model | Accuracy | Precision | Recall | F1-Score at 2 decimals.
std::string render_comparison(const std::vector<EvalReport>& reports, TableFormat format = TableFormat::Text);

}  // namespace leafnet
