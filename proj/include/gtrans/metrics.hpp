#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gtrans/data.hpp"
#include "gtrans/models.hpp"

namespace gtrans {

/// Positive means extreme (label 1).
struct ConfusionCounts {
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tp = 0;

  std::uint64_t total() const { return tn + fp + fn + tp; }
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth);

/// A score that is 0 with `degenerate` set when its denominator is zero.
struct Scores {
  double tpr = 0.0;
  double acc = 0.0;
  double f1 = 0.0;
  double f2 = 0.0;
  bool degenerate = false;
};

/// tpr = tp/(tp+fn), acc = (tp+tn)/total, f1 = tp/(tp + (fp+fn)/2),
/// f2 = tp/(tp + 0.2 fp + 0.8 fn).
Scores scores(const ConfusionCounts& c);

/// Exact fraction num/den rounded half-to-even to four decimals ("0.4843").
/// A zero denominator formats as "0.0000".
std::string format_ratio4(std::uint64_t num, std::uint64_t den);

/// The four scores formatted from their exact rational forms.
struct FormattedScores {
  std::string tpr, acc, f1, f2;
};
FormattedScores format_scores(const ConfusionCounts& c);

struct ReportRow {
  std::string dataset;
  std::string model;
  ConfusionCounts counts;
  bool operator==(const ReportRow&) const = default;
};

inline constexpr const char* kReportHeader = "Dataset,Model,TN,FP,FN,TP,TPR,ACC,F1,F2";

/// Comma-separated table with the fixed column order of kReportHeader.
void write_report(std::ostream& out, const std::vector<ReportRow>& rows);
std::string format_report(const std::vector<ReportRow>& rows);

/// Reads a report; printed scores must agree with the ones recomputed from
/// the counts.
std::vector<ReportRow> parse_report(std::istream& in);
std::vector<ReportRow> load_report(const std::string& path);

/// Concatenates in input order. A later row for the same (dataset, model)
/// replaces the earlier one in place.
std::vector<ReportRow> merge_reports(const std::vector<std::vector<ReportRow>>& reports);

/// One row per window: the model's latent vector followed by the label of the
/// window's nowcast frame. Header "z0,...,z<k-1>,label". Returns the row count.
std::size_t export_latent(std::ostream& out, const Forecaster<float>& model, const FrameSeries& data,
                          const GraphSpec& g, std::size_t batch_size = 64);

}  // namespace gtrans
