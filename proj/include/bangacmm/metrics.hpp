#pragma once

// Confusion matrices, macro-averaged metrics and comparison tables.

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "errors.hpp"
#include "fusion.hpp"

namespace bangacmm {

// counts[truth][pred] over n classes (6 for the intent task).
struct ConfusionMatrix {
  std::vector<std::vector<std::size_t>> counts;

  explicit ConfusionMatrix(std::size_t n = kNumIntents) : counts(n, std::vector<std::size_t>(n, 0)) {}

  std::size_t classes() const { return counts.size(); }
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& row : counts)
      for (auto v : row) n += v;
    return n;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& truths,
                                 std::size_t n_classes = kNumIntents) {
  if (preds.size() != truths.size()) {
    throw ContractError("confusion: " + std::to_string(preds.size()) + " predictions for " +
                        std::to_string(truths.size()) + " labels");
  }
  ConfusionMatrix cm(n_classes);
  const int n = static_cast<int>(n_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int t = truths[i], p = preds[i];
    if (t < 0 || p < 0 || t >= n || p >= n) throw ContractError("confusion: label index out of range");
    ++cm.counts[t][p];
  }
  return cm;
}

struct ClassMetrics {
  double precision = 0, recall = 0, f1 = 0;
  std::size_t support = 0;
};

struct EvalReport {
  std::string model_id;
  std::string strategy;  // text-only, image-only, early, late, intermediate
  double accuracy = 0, macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  std::vector<ClassMetrics> per_class;
  ConfusionMatrix cm;
  double loss = 0;  // mean cross-entropy when produced by evaluation
};

inline double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

// 0/0 counts as 0; macro means run over every class of the matrix,
// including classes absent from both truths and predictions.
inline EvalReport metrics(const ConfusionMatrix& cm) {
  const std::size_t n = cm.total(), k_classes = cm.classes();
  if (n == 0) throw ContractError("metrics: empty confusion matrix");
  EvalReport r;
  r.cm = cm;
  r.per_class.resize(k_classes);
  std::size_t trace = 0;
  for (std::size_t c = 0; c < k_classes; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t k = 0; k < k_classes; ++k) {
      row += cm.counts[c][k];
      col += cm.counts[k][c];
    }
    const double tp = static_cast<double>(cm.counts[c][c]);
    trace += cm.counts[c][c];
    auto& m = r.per_class[c];
    m.support = row;
    m.precision = safe_div(tp, static_cast<double>(col));
    m.recall = safe_div(tp, static_cast<double>(row));
    m.f1 = safe_div(2 * m.precision * m.recall, m.precision + m.recall);
    r.macro_precision += m.precision;
    r.macro_recall += m.recall;
    r.macro_f1 += m.f1;
  }
  r.macro_precision /= static_cast<double>(k_classes);
  r.macro_recall /= static_cast<double>(k_classes);
  r.macro_f1 /= static_cast<double>(k_classes);
  r.accuracy = static_cast<double>(trace) / static_cast<double>(n);
  return r;
}

inline std::string class_name(std::size_t c, std::size_t n_classes) {
  return n_classes == kNumIntents ? std::string(kIntentNames[c]) : "class" + std::to_string(c);
}

inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

enum class Layout { unimodal, fusion, ablation };

inline Layout parse_layout(const std::string& s) {
  if (s == "unimodal") return Layout::unimodal;
  if (s == "fusion") return Layout::fusion;
  if (s == "ablation") return Layout::ablation;
  throw ConfigError("layout must be unimodal, fusion or ablation, got '" + s + "'");
}

inline constexpr std::array<const char*, 5> kGroupOrder = {"text-only", "image-only", "early", "late",
                                                           "intermediate"};

inline std::size_t group_rank(const std::string& g) {
  for (std::size_t i = 0; i < kGroupOrder.size(); ++i)
    if (g == kGroupOrder[i]) return i;
  return kGroupOrder.size();
}

inline std::string group_title(const std::string& g) {
  if (g == "text-only") return "Text-based Models";
  if (g == "image-only") return "Image-based Models";
  if (g == "early") return "Early Fusion";
  if (g == "late") return "Late Fusion";
  if (g == "intermediate") return "Intermediate Fusion";
  return g;
}

inline std::string ablation_label(const std::string& g) {
  if (g == "text-only") return "Text-only";
  if (g == "image-only") return "Image-only";
  if (g == "early") return "Early fusion";
  if (g == "late") return "Late fusion";
  if (g == "intermediate") return "Intermediate fusion";
  return g;
}

// Group order, then descending macro-F1, then model_id.
inline std::vector<EvalReport> order_reports(std::vector<EvalReport> reports) {
  std::stable_sort(reports.begin(), reports.end(), [](const EvalReport& a, const EvalReport& b) {
    const auto ga = group_rank(a.strategy), gb = group_rank(b.strategy);
    if (ga != gb) return ga < gb;
    if (a.strategy != b.strategy) return a.strategy < b.strategy;
    if (a.macro_f1 != b.macro_f1) return a.macro_f1 > b.macro_f1;
    return a.model_id < b.model_id;
  });
  return reports;
}

inline constexpr const char* kZeroDivisionNote =
    "Macro scores average all classes; a 0/0 precision, recall or F1 counts as 0.";

// Plain-text table. unimodal/fusion: one section per strategy with the best
// row of each section marked '*'. ablation: the best report of each strategy
// in fixed modality order, overall best marked '*'.
inline std::string render_comparison(const std::vector<EvalReport>& input, Layout layout) {
  if (input.empty()) throw ContractError("render_comparison needs at least one report");
  const auto reports = order_reports(input);
  std::ostringstream os;
  char line[160];
  if (layout == Layout::ablation) {
    std::vector<const EvalReport*> rows;
    for (const auto& r : reports)
      if (rows.empty() || rows.back()->strategy != r.strategy) rows.push_back(&r);
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i]->macro_f1 > rows[best]->macro_f1) best = i;
    std::snprintf(line, sizeof line, "  %-22s %-28s %8s %8s\n", "Modality", "Best Model", "Acc(%)", "F1(%)");
    os << line;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::snprintf(line, sizeof line, "%c %-22s %-28s %8s %8s\n", i == best ? '*' : ' ',
                    ablation_label(rows[i]->strategy).c_str(), rows[i]->model_id.c_str(),
                    percent(rows[i]->accuracy).c_str(), percent(rows[i]->macro_f1).c_str());
      os << line;
    }
  } else {
    std::snprintf(line, sizeof line, "  %-28s %8s %8s %8s %8s\n", layout == Layout::fusion ? "Model Combination" : "Model",
                  "Acc(%)", "Prec(%)", "Rec(%)", "F1(%)");
    os << line;
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const auto& r = reports[i];
      const bool first = i == 0 || reports[i - 1].strategy != r.strategy;
      if (first) os << "-- " << group_title(r.strategy) << " --\n";
      std::snprintf(line, sizeof line, "%c %-28s %8s %8s %8s %8s\n", first ? '*' : ' ', r.model_id.c_str(),
                    percent(r.accuracy).c_str(), percent(r.macro_precision).c_str(),
                    percent(r.macro_recall).c_str(), percent(r.macro_f1).c_str());
      os << line;
    }
  }
  os << "* best row. " << kZeroDivisionNote << "\n";
  return os.str();
}

inline KeyValues report_key_values(const EvalReport& r) {
  KeyValues kv;
  kv.set("model_id", r.model_id);
  kv.set("strategy", r.strategy);
  kv.set("samples", std::to_string(r.cm.total()));
  kv.set("accuracy", format_real(r.accuracy));
  kv.set("macro_precision", format_real(r.macro_precision));
  kv.set("macro_recall", format_real(r.macro_recall));
  kv.set("macro_f1", format_real(r.macro_f1));
  kv.set("loss", format_real(r.loss));
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const std::string p = "class." + class_name(c, r.per_class.size()) + ".";
    kv.set(p + "precision", format_real(r.per_class[c].precision));
    kv.set(p + "recall", format_real(r.per_class[c].recall));
    kv.set(p + "f1", format_real(r.per_class[c].f1));
    kv.set(p + "support", std::to_string(r.per_class[c].support));
  }
  kv.set("zero_division", "0");
  return kv;
}

inline std::string confusion_tsv(const ConfusionMatrix& cm) {
  std::ostringstream os;
  const std::size_t n = cm.classes();
  os << "truth\\pred";
  for (std::size_t c = 0; c < n; ++c) os << '\t' << class_name(c, n);
  os << '\n';
  for (std::size_t t = 0; t < n; ++t) {
    os << class_name(t, n);
    for (std::size_t p = 0; p < n; ++p) os << '\t' << cm.counts[t][p];
    os << '\n';
  }
  return os.str();
}

// Per-class breakdown reporting both recall and F1.
inline std::string render_per_class(const EvalReport& r) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-15s %8s %8s %8s %8s\n", "Class", "Prec(%)", "Rec(%)", "F1(%)", "Support");
  os << line;
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    std::snprintf(line, sizeof line, "%-15s %8s %8s %8s %8zu\n", class_name(c, r.per_class.size()).c_str(),
                  percent(m.precision).c_str(), percent(m.recall).c_str(), percent(m.f1).c_str(), m.support);
    os << line;
  }
  return os.str();
}

}  // namespace bangacmm
