#include "gtrans/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "gtrans/csv.hpp"
#include "gtrans/errors.hpp"
#include "gtrans/training.hpp"

namespace gtrans {

ConfusionCounts confusion(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth) {
  if (predicted.size() != truth.size()) {
    throw DimensionError("confusion: " + std::to_string(predicted.size()) + " predictions for " +
                         std::to_string(truth.size()) + " labels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predicted[i] != 0;
    const bool t = truth[i] != 0;
    if (p && t) {
      ++c.tp;
    } else if (p) {
      ++c.fp;
    } else if (t) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

Scores scores(const ConfusionCounts& c) {
  Scores s;
  const auto tp = static_cast<double>(c.tp);
  const auto tn = static_cast<double>(c.tn);
  const auto fp = static_cast<double>(c.fp);
  const auto fn = static_cast<double>(c.fn);
  auto ratio = [&](double num, double den) {
    if (den == 0.0) {
      s.degenerate = true;
      return 0.0;
    }
    return num / den;
  };
  s.tpr = ratio(tp, tp + fn);
  s.acc = ratio(tp + tn, static_cast<double>(c.total()));
  s.f1 = ratio(tp, tp + 0.5 * (fp + fn));
  s.f2 = ratio(tp, tp + 0.2 * fp + 0.8 * fn);
  return s;
}

std::string format_ratio4(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return "0.0000";
  using u128 = unsigned __int128;
  const u128 scaled = static_cast<u128>(num) * 10000u;
  u128 q = scaled / den;
  const u128 r = scaled % den;
  if (2 * r > den || (2 * r == den && (q & 1u))) ++q;
  const auto whole = static_cast<std::uint64_t>(q / 10000u);
  const auto frac = static_cast<unsigned>(q % 10000u);
  std::string digits = std::to_string(frac);
  return std::to_string(whole) + "." + std::string(4 - digits.size(), '0') + digits;
}

FormattedScores format_scores(const ConfusionCounts& c) {
  // Integer forms of the score formulas: f1 = 2tp/(2tp+fp+fn), f2 = 5tp/(5tp+fp+4fn).
  return {format_ratio4(c.tp, c.tp + c.fn), format_ratio4(c.tp + c.tn, c.total()),
          format_ratio4(2 * c.tp, 2 * c.tp + c.fp + c.fn), format_ratio4(5 * c.tp, 5 * c.tp + c.fp + 4 * c.fn)};
}

void write_report(std::ostream& out, const std::vector<ReportRow>& rows) {
  if (rows.empty()) throw ContractError("a report needs at least one row");
  out << kReportHeader << '\n';
  for (const auto& row : rows) {
    const auto s = format_scores(row.counts);
    out << csv_escape(row.dataset) << ',' << csv_escape(row.model) << ',' << row.counts.tn << ',' << row.counts.fp
        << ',' << row.counts.fn << ',' << row.counts.tp << ',' << s.tpr << ',' << s.acc << ',' << s.f1 << ','
        << s.f2 << '\n';
  }
}

std::string format_report(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  write_report(out, rows);
  return out.str();
}

namespace {

std::uint64_t parse_count(const std::string& text, std::size_t line) {
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
    throw DataError("report line " + std::to_string(line) + ": '" + text + "' is not a count");
  }
  try {
    return std::stoull(text);
  } catch (const std::out_of_range&) {
    throw DataError("report line " + std::to_string(line) + ": count out of range");
  }
}

}  // namespace

std::vector<ReportRow> parse_report(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != kReportHeader) {
    throw DataError(std::string("report must start with the header ") + kReportHeader);
  }
  std::vector<ReportRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 10) throw DataError("report line " + std::to_string(line_no) + ": expected 10 columns");
    ReportRow row{f[0], f[1],
                  {parse_count(f[2], line_no), parse_count(f[3], line_no), parse_count(f[4], line_no),
                   parse_count(f[5], line_no)}};
    const auto s = format_scores(row.counts);
    if (f[6] != s.tpr || f[7] != s.acc || f[8] != s.f1 || f[9] != s.f2) {
      throw DataError("report line " + std::to_string(line_no) + ": scores do not match the counts");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<ReportRow> load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report " + path);
  return parse_report(in);
}

std::vector<ReportRow> merge_reports(const std::vector<std::vector<ReportRow>>& reports) {
  std::vector<ReportRow> merged;
  for (const auto& report : reports) {
    for (const auto& row : report) {
      auto it = std::find_if(merged.begin(), merged.end(), [&](const ReportRow& r) {
        return r.dataset == row.dataset && r.model == row.model;
      });
      if (it != merged.end()) {
        *it = row;
      } else {
        merged.push_back(row);
      }
    }
  }
  return merged;
}

std::size_t export_latent(std::ostream& out, const Forecaster<float>& model, const FrameSeries& data,
                          const GraphSpec& g, std::size_t batch_size) {
  NoGradGuard no_grad;
  const auto windows = make_windows(data, model.config().window);
  bool header = false;
  for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
    const std::size_t end = std::min(windows.size(), begin + batch_size);
    const std::span<const WindowPair> batch(windows.data() + begin, end - begin);
    const auto z = model.latent(stack_windows<float>(data, batch, false), g);
    const std::size_t width = z.dim(1);
    if (!header) {
      for (std::size_t k = 0; k < width; ++k) out << 'z' << k << ',';
      out << "label\n";
      header = true;
    }
    for (std::size_t b = 0; b < batch.size(); ++b) {
      for (std::size_t k = 0; k < width; ++k) out << format_float(z[b * width + k]) << ',';
      out << static_cast<int>(data.labels[batch[b].nowcast_frame()]) << '\n';
    }
  }
  return windows.size();
}

}  // namespace gtrans
