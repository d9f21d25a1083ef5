// SPDX-License-Identifier: Apache-2.0
#include "leafnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include "leafnet/error.hpp"

namespace leafnet {

ConfusionMatrix::ConfusionMatrix(std::size_t classes, std::vector<std::string> class_names)
    : k_(classes), names_(std::move(class_names)), counts_(classes * classes, 0) {
  require(k_ >= 1, ErrorCode::InvalidArgument, "confusion matrix needs at least one class");
  if (names_.empty()) {
    for (std::size_t k = 0; k < k_; ++k) names_.push_back(std::to_string(k));
  }
  require(names_.size() == k_, ErrorCode::InvalidArgument, "class name count does not match class count");
}

ConfusionMatrix ConfusionMatrix::from_predictions(std::span<const std::size_t> labels,
                                                  std::span<const std::size_t> predictions, std::size_t classes,
                                                  std::vector<std::string> class_names) {
  require(labels.size() == predictions.size(), ErrorCode::ShapeMismatch, "labels and predictions differ in length");
  ConfusionMatrix cm(classes, std::move(class_names));
  for (std::size_t i = 0; i < labels.size(); ++i) cm.add(labels[i], predictions[i]);
  return cm;
}

ConfusionMatrix ConfusionMatrix::from_counts(const std::vector<std::vector<std::uint64_t>>& counts,
                                             std::vector<std::string> class_names) {
  ConfusionMatrix cm(counts.size(), std::move(class_names));
  for (std::size_t t = 0; t < counts.size(); ++t) {
    require(counts[t].size() == counts.size(), ErrorCode::InvalidShape, "confusion matrix must be square");
    for (std::size_t p = 0; p < counts.size(); ++p) cm.counts_[t * cm.k_ + p] = counts[t][p];
  }
  return cm;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::uint64_t n) {
  require(truth < k_ && predicted < k_, ErrorCode::LabelOutOfRange, "class index out of range");
  counts_[truth * k_ + predicted] += n;
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t s = 0;
  for (std::size_t k = 0; k < k_; ++k) s += at(k, k);
  return s;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t k) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < k_; ++p) s += at(k, p);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t k) const {
  std::uint64_t s = 0;
  for (std::size_t t = 0; t < k_; ++t) s += at(t, k);
  return s;
}

std::vector<std::uint64_t> ConfusionMatrix::supports() const {
  std::vector<std::uint64_t> out(k_);
  for (std::size_t k = 0; k < k_; ++k) out[k] = row_sum(k);
  return out;
}

std::vector<std::vector<std::uint64_t>> ConfusionMatrix::rows() const {
  std::vector<std::vector<std::uint64_t>> out(k_, std::vector<std::uint64_t>(k_));
  for (std::size_t t = 0; t < k_; ++t)
    for (std::size_t p = 0; p < k_; ++p) out[t][p] = at(t, p);
  return out;
}

double accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  require(total > 0, ErrorCode::EmptyMatrix, "accuracy of an empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

namespace {

ClassMetric ratio_per_class(const ConfusionMatrix& cm, bool by_column) {
  ClassMetric m;
  for (std::size_t k = 0; k < cm.classes(); ++k) {
    const auto denom = by_column ? cm.col_sum(k) : cm.row_sum(k);
    m.undefined.push_back(denom == 0);
    m.values.push_back(denom == 0 ? 0.0 : static_cast<double>(cm.at(k, k)) / static_cast<double>(denom));
  }
  return m;
}

double round_to(double v, double scale) { return std::round(v * scale) / scale; }

}  // namespace

ClassMetric precision_per_class(const ConfusionMatrix& cm) { return ratio_per_class(cm, true); }
ClassMetric recall_per_class(const ConfusionMatrix& cm) { return ratio_per_class(cm, false); }

double f1(double precision, double recall) {
  const double s = precision + recall;
  return s == 0.0 ? 0.0 : 2.0 * precision * recall / s;
}

double weighted_average(std::span<const double> values, std::span<const std::uint64_t> supports) {
  require(values.size() == supports.size(), ErrorCode::ShapeMismatch, "values and supports differ in length");
  double num = 0.0;
  std::uint64_t den = 0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    num += values[k] * static_cast<double>(supports[k]);
    den += supports[k];
  }
  require(den > 0, ErrorCode::EmptyMatrix, "weighted average with zero total support");
  return num / static_cast<double>(den);
}

double binary_auc(std::span<const double> scores, std::span<const bool> positive) {
  require(scores.size() == positive.size(), ErrorCode::ShapeMismatch, "scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum = 0.0;  // midranks of positives, 1-based
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) {
      if (positive[order[t]]) {
        rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  require(n_pos > 0 && n_neg > 0, ErrorCode::AllOneClass, "AUC needs positive and negative samples");
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

AucResult ovr_auc(const Tensor& scores, std::span<const std::size_t> labels) {
  require(scores.ndim() == 2, ErrorCode::InvalidShape, "scores must be [N x K]");
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  require(labels.size() == n, ErrorCode::ShapeMismatch, "scores and labels differ in length");
  const auto v = scores.to_vector();

  std::vector<std::uint64_t> support(k, 0);
  for (auto l : labels) {
    require(l < k, ErrorCode::LabelOutOfRange, "label exceeds score columns");
    ++support[l];
  }

  AucResult r;
  std::vector<double> defined_values;
  std::vector<std::uint64_t> defined_support;
  std::vector<double> column(n);
  std::unique_ptr<bool[]> pos(new bool[n]);
  for (std::size_t c = 0; c < k; ++c) {
    const bool undefined = support[c] == 0 || support[c] == n;
    r.undefined.push_back(undefined);
    if (undefined) {
      r.per_class.push_back(0.0);
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) {
      column[i] = v[i * k + c];
      pos[i] = labels[i] == c;
    }
    const double auc = binary_auc(column, std::span<const bool>(pos.get(), n));
    r.per_class.push_back(auc);
    defined_values.push_back(auc);
    defined_support.push_back(support[c]);
  }
  require(!defined_values.empty(), ErrorCode::AllOneClass, "every label belongs to one class");
  r.weighted = weighted_average(defined_values, defined_support);
  return r;
}

std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  require(scores.ndim() == 2, ErrorCode::InvalidShape, "scores must be [N x K]");
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  const auto v = scores.to_vector();
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (v[i * k + c] > v[i * k + best]) best = c;
    }
    out[i] = best;
  }
  return out;
}

EvalReport build_report(const ConfusionMatrix& cm, const Tensor& scores, std::span<const std::size_t> labels,
                        ReportMetadata meta) {
  EvalReport r;
  r.meta = std::move(meta);
  r.accuracy = accuracy(cm);
  const auto p = precision_per_class(cm);
  const auto rc = recall_per_class(cm);
  const auto support = cm.supports();

  std::vector<double> f(cm.classes());
  for (std::size_t k = 0; k < cm.classes(); ++k) f[k] = f1(p.values[k], rc.values[k]);
  r.precision_w = weighted_average(p.values, support);
  r.recall_w = weighted_average(rc.values, support);
  r.f1_w = weighted_average(f, support);

  std::optional<AucResult> auc;
  if (scores.defined()) {
    require(scores.ndim() == 2 && scores.dim(1) == cm.classes(), ErrorCode::SchemaMismatch,
            "score columns do not match class count");
    auc = ovr_auc(scores, labels);
    r.auc_w = auc->weighted;
  }

  for (std::size_t k = 0; k < cm.classes(); ++k) {
    ClassRow row;
    row.name = cm.class_names()[k];
    row.precision = p.values[k];
    row.recall = rc.values[k];
    row.f1 = f[k];
    row.support = support[k];
    if (p.undefined[k]) row.flags.push_back("precision_undefined");
    if (rc.undefined[k]) row.flags.push_back("recall_undefined");
    if (auc && auc->undefined[k]) row.flags.push_back("auc_undefined");
    r.per_class.push_back(std::move(row));
  }
  r.confusion = cm.rows();
  return r;
}

nlohmann::json report_to_json(const EvalReport& r) {
  auto r4 = [](double v) { return round_to(v, 1e4); };
  nlohmann::json j;
  j["model"] = r.meta.model;
  j["dataset"] = r.meta.dataset;
  if (!r.meta.timestamp.empty()) j["timestamp"] = r.meta.timestamp;
  j["overall"] = {{"accuracy", r4(r.accuracy)},
                  {"precision_w", r4(r.precision_w)},
                  {"recall_w", r4(r.recall_w)},
                  {"f1_w", r4(r.f1_w)},
                  {"auc_w", r.auc_w ? nlohmann::json(r4(*r.auc_w)) : nlohmann::json(nullptr)}};
  j["per_class"] = nlohmann::json::array();
  for (const auto& row : r.per_class) {
    j["per_class"].push_back({{"name", row.name},
                              {"precision", r4(row.precision)},
                              {"recall", r4(row.recall)},
                              {"f1", r4(row.f1)},
                              {"support", row.support},
                              {"flags", row.flags}});
  }
  j["confusion"] = r.confusion;
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.meta.model = j.at("model").get<std::string>();
    r.meta.dataset = j.at("dataset").get<std::string>();
    if (j.contains("timestamp")) r.meta.timestamp = j.at("timestamp").get<std::string>();
    const auto& o = j.at("overall");
    r.accuracy = o.at("accuracy").get<double>();
    r.precision_w = o.at("precision_w").get<double>();
    r.recall_w = o.at("recall_w").get<double>();
    r.f1_w = o.at("f1_w").get<double>();
    if (o.contains("auc_w") && !o.at("auc_w").is_null()) r.auc_w = o.at("auc_w").get<double>();
    for (const auto& row : j.value("per_class", nlohmann::json::array())) {
      ClassRow c;
      c.name = row.at("name").get<std::string>();
      c.precision = row.at("precision").get<double>();
      c.recall = row.at("recall").get<double>();
      c.f1 = row.at("f1").get<double>();
      c.support = row.at("support").get<std::uint64_t>();
      c.flags = row.value("flags", std::vector<std::string>{});
      r.per_class.push_back(std::move(c));
    }
    r.confusion = j.value("confusion", std::vector<std::vector<std::uint64_t>>{});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("malformed report: ") + e.what());
  }
}

EvalReport load_report(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, path + ": " + e.what());
  }
  return report_from_json(j);
}

void save_report(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot write " + path);
  out << report_to_json(report).dump(2) << '\n';
  require(static_cast<bool>(out), ErrorCode::IoFailure, "write failed: " + path);
}

std::string render_comparison(const std::vector<EvalReport>& reports, TableFormat format) {
  // Summary-only reports (no per-class rows) carry no class schema to check.
  const std::vector<ClassRow>* reference = nullptr;
  for (const auto& r : reports) {
    if (r.per_class.empty()) continue;
    if (!reference) {
      reference = &r.per_class;
      continue;
    }
    require(r.per_class.size() == reference->size(), ErrorCode::SchemaMismatch,
            "reports disagree on class count: " + r.meta.model);
    for (std::size_t k = 0; k < reference->size(); ++k) {
      require(r.per_class[k].name == (*reference)[k].name, ErrorCode::SchemaMismatch,
              "reports disagree on class names: " + r.meta.model);
    }
  }

  const std::vector<std::string> header{"Model", "Accuracy", "Precision", "Recall", "F1-Score"};
  std::vector<std::vector<std::string>> rows;
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", round_to(v, 100.0));
    return std::string(buf);
  };
  for (const auto& r : reports) {
    rows.push_back({r.meta.model, fmt(r.accuracy), fmt(r.precision_w), fmt(r.recall_w), fmt(r.f1_w)});
  }

  std::ostringstream out;
  if (format == TableFormat::Csv) {
    auto csv_cell = [](const std::string& s) {
      if (s.find_first_of(",\"\n") == std::string::npos) return s;
      std::string q = "\"";
      for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
      return q + "\"";
    };
    for (const auto* row : {&header}) {
      for (std::size_t c = 0; c < row->size(); ++c) out << (c ? "," : "") << csv_cell((*row)[c]);
      out << '\n';
    }
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << csv_cell(row[c]);
      out << '\n';
    }
    return out.str();
  }

  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << "  ";
      if (c == 0) {
        out << row[c] << std::string(width[c] - row[c].size(), ' ');
      } else {
        out << std::string(width[c] - row[c].size(), ' ') << row[c];
      }
    }
    out << '\n';
  };
  emit(header);
  std::size_t line = 0;
  for (auto w : width) line += w;
  out << std::string(line + 2 * (width.size() - 1), '-') << '\n';
  for (const auto& row : rows) emit(row);
  return out.str();
}

}  // namespace leafnet
