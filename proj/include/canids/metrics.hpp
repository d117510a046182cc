#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "canids/dataset.hpp"
#include "canids/detector.hpp"
#include "canids/error.hpp"
#include "canids/window.hpp"

namespace canids {

/// Block-level confusion counts with Attack as the positive class.
/// Percentages are empty where their denominator is zero.
struct MetricsReport {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::optional<double> precision, recall, f1, fpr, fnr, accuracy;

  std::size_t total() const { return tp + fp + tn + fn; }

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

inline MetricsReport metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
  MetricsReport r{tp, fp, tn, fn, {}, {}, {}, {}, {}, {}};
  const auto pct = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return 100.0 * static_cast<double>(num) / static_cast<double>(den);
  };
  r.precision = pct(tp, tp + fp);
  r.recall = pct(tp, tp + fn);
  r.fpr = pct(fp, fp + tn);
  r.fnr = pct(fn, fn + tp);
  r.accuracy = pct(tp + tn, r.total());
  if (r.precision && r.recall && *r.precision + *r.recall > 0.0) {
    r.f1 = 2.0 * *r.precision * *r.recall / (*r.precision + *r.recall);
  }
  return r;
}

inline MetricsReport confusion(std::span<const Decision> predictions, std::span<const Label> labels) {
  if (predictions.size() != labels.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(predictions.size()) + " verdicts vs " +
                                               std::to_string(labels.size()) + " labels");
  }
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == Label::Unlabeled) throw Error(ErrorCode::UnlabeledData, "block " + std::to_string(i) + " has no label");
    const bool attack = labels[i] == Label::Attack;
    const bool flagged = predictions[i] == Decision::Attack;
    if (attack && flagged) ++tp;
    else if (attack) ++fn;
    else if (flagged) ++fp;
    else ++tn;
  }
  return metrics_from_counts(tp, fp, tn, fn);
}

inline MetricsReport confusion(std::span<const DetectionVerdict> verdicts) {
  std::vector<Decision> predictions;
  std::vector<Label> labels;
  for (const auto& v : verdicts) {
    predictions.push_back(v.verdict);
    labels.push_back(v.label);
  }
  return confusion(predictions, labels);
}

/// Two-decimal rendering; "n/a" when undefined.
inline std::string format_pct(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *v);
  return buf;
}

struct Evaluation {
  MetricsReport report;
  std::vector<DetectionVerdict> verdicts;
  std::size_t frames = 0;
  std::size_t dropped_frames = 0;
  std::size_t benign_blocks = 0;
  std::size_t attack_blocks = 0;
  std::size_t attack_frames = 0;
};

/// Blocks a labeled dataset, classifies every block and aggregates metrics.
template <Reconstructor M>
Evaluation evaluate_dataset(const M& model, const Dataset& ds, int threshold) {
  if (ds.size() < kBlockSize) {
    throw Error(ErrorCode::InsufficientData, "dataset has " + std::to_string(ds.size()) + " frames, fewer than one block");
  }
  const BlockSet set = build_blocks(ds.frames);
  Evaluation ev;
  ev.frames = ds.size();
  ev.dropped_frames = set.dropped_frames;
  ev.attack_frames = ds.label_counts()[static_cast<std::size_t>(Label::Attack)];
  for (const auto& b : set.blocks) {
    if (b.label == Label::Unlabeled) throw Error(ErrorCode::UnlabeledData, "block " + std::to_string(b.block_index) + " has unlabeled frames");
    (b.label == Label::Attack ? ev.attack_blocks : ev.benign_blocks)++;
  }
  ev.verdicts = classify_blocks(model, set.blocks, threshold);
  ev.report = confusion(ev.verdicts);
  return ev;
}

/// Fixed-width human-readable summary.
inline void write_report_table(std::ostream& out, const std::string& name, const MetricsReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s %8s %8s %8s %8s %8s %8s\n", "set", "Prec", "Recall", "F1", "FPR", "FNR",
                "Acc");
  out << buf;
  std::snprintf(buf, sizeof buf, "%-12s %8s %8s %8s %8s %8s %8s\n", name.c_str(), format_pct(r.precision).c_str(),
                format_pct(r.recall).c_str(), format_pct(r.f1).c_str(), format_pct(r.fpr).c_str(),
                format_pct(r.fnr).c_str(), format_pct(r.accuracy).c_str());
  out << buf;
  out << "confusion: TN=" << r.tn << " FP=" << r.fp << " FN=" << r.fn << " TP=" << r.tp << '\n';
}

/// One row in the per-attack comparison layout:
/// attack | model | precision | recall | F1 | FPR | FNR
inline std::string paper_table_row(const std::string& attack, const std::string& model, const MetricsReport& r) {
  return attack + " | " + model + " | " + format_pct(r.precision) + " | " + format_pct(r.recall) + " | " +
         format_pct(r.f1) + " | " + format_pct(r.fpr) + " | " + format_pct(r.fnr);
}

inline void write_report_csv(std::ostream& out, const std::string& name, const MetricsReport& r, bool header = true) {
  if (header) out << "set,tp,fp,tn,fn,precision,recall,f1,fpr,fnr,accuracy\n";
  out << name << ',' << r.tp << ',' << r.fp << ',' << r.tn << ',' << r.fn << ',' << format_pct(r.precision) << ','
      << format_pct(r.recall) << ',' << format_pct(r.f1) << ',' << format_pct(r.fpr) << ',' << format_pct(r.fnr)
      << ',' << format_pct(r.accuracy) << '\n';
}

inline nlohmann::json report_json(const std::string& name, const MetricsReport& r) {
  const auto field = [](const std::optional<double>& v) -> nlohmann::json {
    if (!v) return nullptr;
    return std::round(*v * 100.0) / 100.0;
  };
  return {{"set", name},
          {"tp", r.tp},
          {"fp", r.fp},
          {"tn", r.tn},
          {"fn", r.fn},
          {"precision", field(r.precision)},
          {"recall", field(r.recall)},
          {"f1", field(r.f1)},
          {"fpr", field(r.fpr)},
          {"fnr", field(r.fnr)},
          {"accuracy", field(r.accuracy)}};
}

}  // namespace canids
