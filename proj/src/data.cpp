#include "gtrans/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <tuple>

#include "gtrans/binary_io.hpp"
#include "gtrans/csv.hpp"
#include "gtrans/errors.hpp"
#include "gtrans/random.hpp"

namespace gtrans {

// ---------------------------------------------------------------------------
// FrameSeries

std::span<const float> FrameSeries::frame(std::size_t index) const {
  if (index >= frame_count()) throw DataError("frame index " + std::to_string(index) + " out of range");
  return std::span<const float>(values).subspan(index * frame_size(), frame_size());
}

template <typename Real>
Tensor<Real> FrameSeries::window(std::size_t start, std::size_t length) const {
  if (length == 0 || start + length > frame_count()) {
    throw DataError("window [" + std::to_string(start) + ", " + std::to_string(start + length) +
                    ") exceeds a series of " + std::to_string(frame_count()) + " frames");
  }
  const auto first = values.begin() + static_cast<std::ptrdiff_t>(start * frame_size());
  std::vector<Real> out(first, first + static_cast<std::ptrdiff_t>(length * frame_size()));
  return Tensor<Real>({length, nodes(), features()}, std::move(out));
}

template Tensor<float> FrameSeries::window<float>(std::size_t, std::size_t) const;
template Tensor<double> FrameSeries::window<double>(std::size_t, std::size_t) const;

double FrameSeries::positive_rate() const {
  if (labels.empty()) return 0.0;
  std::size_t positives = 0;
  for (auto l : labels) positives += l != 0;
  return static_cast<double>(positives) / static_cast<double>(labels.size());
}

void FrameSeries::validate() const {
  if (features() == 0) throw DataError("series has no features");
  if (normalization.size() != features()) throw DataError("normalization ranges do not match feature count");
  if (timestamps.size() != frame_count()) throw DataError("timestamp count does not match frame count");
  if (values.size() != frame_count() * frame_size()) throw DataError("frame values do not match N x C x frames");
  for (auto l : labels) {
    if (l > 1) throw DataError("labels must be 0 or 1");
  }
  for (float v : values) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DataError("normalized values must lie in [0, 1]");
  }
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    if (timestamps[i] <= timestamps[i - 1]) throw DataError("timestamps must be strictly increasing");
    if (timestamps[i] - timestamps[i - 1] != timestamps[1] - timestamps[0]) {
      throw DataError("timestamps must have a uniform bin width");
    }
  }
}

// ---------------------------------------------------------------------------
// Graphs

void GridBounds::validate() const {
  if (rows < 1 || cols < 1) throw ValidationError("grid needs at least one row and one column");
  if (!(lon_min < lon_max) || !(lat_min < lat_max)) throw ValidationError("grid bounds must be ordered (min < max)");
}

std::optional<std::size_t> GridBounds::locate(double lon, double lat) const {
  if (!(lon >= lon_min && lon <= lon_max && lat >= lat_min && lat <= lat_max)) return std::nullopt;
  auto cell = [](double v, double lo, double hi, std::size_t count) {
    const auto i = static_cast<std::size_t>(std::floor((v - lo) / (hi - lo) * static_cast<double>(count)));
    return std::min(i, count - 1);
  };
  return cell(lat, lat_min, lat_max, rows) * cols + cell(lon, lon_min, lon_max, cols);
}

GraphSpec build_grid_graph(const GridBounds& bounds) {
  bounds.validate();
  const std::size_t n = bounds.rows * bounds.cols;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::size_t r = 0; r < bounds.rows; ++r) {
    for (std::size_t c = 0; c < bounds.cols; ++c) {
      const auto i = static_cast<Eigen::Index>(r * bounds.cols + c);
      ids.push_back("r" + std::to_string(r) + "c" + std::to_string(c));
      if (c + 1 < bounds.cols) a(i, i + 1) = a(i + 1, i) = 1.0;
      if (r + 1 < bounds.rows) {
        const auto below = static_cast<Eigen::Index>((r + 1) * bounds.cols + c);
        a(i, below) = a(below, i) = 1.0;
      }
    }
  }
  return GraphSpec(std::move(a), std::move(ids));
}

GraphSpec build_grid_graph(double lon_min, double lon_max, double lat_min, double lat_max, std::size_t rows,
                           std::size_t cols) {
  return build_grid_graph(GridBounds{lon_min, lon_max, lat_min, lat_max, rows, cols});
}

GraphSpec build_area_graph(const EdgeList& edges, std::vector<std::string> ids) {
  if (ids.empty()) {
    std::set<std::string> seen;
    for (const auto& [a, b] : edges) {
      seen.insert(a);
      seen.insert(b);
    }
    ids.assign(seen.begin(), seen.end());
  }
  std::map<std::string, Eigen::Index> index;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i].empty()) throw ValidationError("area ids must be non-empty");
    if (!index.emplace(ids[i], static_cast<Eigen::Index>(i)).second) {
      throw ValidationError("duplicate area id '" + ids[i] + "'");
    }
  }
  const auto n = static_cast<Eigen::Index>(ids.size());
  Eigen::MatrixXd adjacency = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [a, b] : edges) {
    if (a == b) throw ValidationError("self-edge on area '" + a + "'");
    const auto ia = index.find(a);
    const auto ib = index.find(b);
    if (ia == index.end()) throw ValidationError("edge names unknown area '" + a + "'");
    if (ib == index.end()) throw ValidationError("edge names unknown area '" + b + "'");
    adjacency(ia->second, ib->second) = adjacency(ib->second, ia->second) = 1.0;
  }
  return GraphSpec(std::move(adjacency), std::move(ids));
}

namespace {

std::optional<double> parse_number(const std::string& text) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (begin != end && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || begin == end || !std::isfinite(value)) return std::nullopt;
  return value;
}

}  // namespace

EdgeList parse_edge_list(std::istream& in) {
  EdgeList edges;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string content = trim(line);
    if (content.empty() || content[0] == '#') continue;
    const auto fields = split_csv_line(content);
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      throw DataError("edge list line " + std::to_string(line_no) + ": expected 'idA,idB'");
    }
    edges.emplace_back(fields[0], fields[1]);
  }
  return edges;
}

EdgeList load_edge_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open edge list " + path);
  return parse_edge_list(in);
}

// ---------------------------------------------------------------------------
// Timestamps

namespace {

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool is_leap(std::int64_t y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

unsigned days_in_month(std::int64_t y, unsigned m) {
  static constexpr unsigned kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  return m == 2 && is_leap(y) ? 29 : kDays[m - 1];
}

// Reads exactly `width` digits at `pos`.
std::optional<int> digits(const std::string& s, std::size_t& pos, std::size_t width) {
  if (pos + width > s.size()) return std::nullopt;
  int value = 0;
  for (std::size_t i = 0; i < width; ++i) {
    const char ch = s[pos + i];
    if (ch < '0' || ch > '9') return std::nullopt;
    value = value * 10 + (ch - '0');
  }
  pos += width;
  return value;
}

std::optional<std::int64_t> parse_iso8601(const std::string& s) {
  std::size_t pos = 0;
  const auto year = digits(s, pos, 4);
  if (!year || pos >= s.size() || s[pos++] != '-') return std::nullopt;
  const auto month = digits(s, pos, 2);
  if (!month || pos >= s.size() || s[pos++] != '-') return std::nullopt;
  const auto day = digits(s, pos, 2);
  if (!day || *month < 1 || *month > 12 || *day < 1 ||
      static_cast<unsigned>(*day) > days_in_month(*year, static_cast<unsigned>(*month))) {
    return std::nullopt;
  }
  std::int64_t seconds = days_from_civil(*year, static_cast<unsigned>(*month), static_cast<unsigned>(*day)) * 86400;
  if (pos == s.size()) return seconds;
  if (s[pos] != 'T' && s[pos] != ' ') return std::nullopt;
  ++pos;
  const auto hour = digits(s, pos, 2);
  if (!hour || pos >= s.size() || s[pos++] != ':') return std::nullopt;
  const auto minute = digits(s, pos, 2);
  if (!minute) return std::nullopt;
  int second = 0;
  if (pos < s.size() && s[pos] == ':') {
    ++pos;
    const auto sec = digits(s, pos, 2);
    if (!sec) return std::nullopt;
    second = *sec;
    if (pos < s.size() && (s[pos] == '.' || s[pos] == ',')) {
      ++pos;
      const std::size_t start = pos;
      while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
      if (pos == start) return std::nullopt;
    }
  }
  if (*hour > 23 || *minute > 59 || second > 60) return std::nullopt;
  seconds += *hour * 3600 + *minute * 60 + second;
  if (pos == s.size()) return seconds;
  if (s[pos] == 'Z') return pos + 1 == s.size() ? std::optional<std::int64_t>(seconds) : std::nullopt;
  if (s[pos] != '+' && s[pos] != '-') return std::nullopt;
  const int sign = s[pos++] == '+' ? 1 : -1;
  const auto off_hour = digits(s, pos, 2);
  if (!off_hour) return std::nullopt;
  if (pos < s.size() && s[pos] == ':') ++pos;
  const auto off_minute = digits(s, pos, 2);
  if (!off_minute || pos != s.size() || *off_hour > 23 || *off_minute > 59) return std::nullopt;
  return seconds - sign * (*off_hour * 3600 + *off_minute * 60);
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

std::optional<std::int64_t> parse_timestamp(const std::string& text) {
  const std::string s = trim(text);
  if (s.empty()) return std::nullopt;
  if (s.find('-', 1) != std::string::npos || s.find(':') != std::string::npos) return parse_iso8601(s);

  const char* begin = s.data();
  const char* end = begin + s.size();
  const auto dot = s.find('.');
  const char* int_end = dot == std::string::npos ? end : begin + dot;
  std::int64_t seconds = 0;
  const auto [ptr, ec] = std::from_chars(begin, int_end, seconds);
  if (ec != std::errc() || ptr != int_end || begin == int_end) return std::nullopt;
  if (dot != std::string::npos) {
    bool nonzero = false;
    if (int_end + 1 == end) return std::nullopt;
    for (const char* p = int_end + 1; p != end; ++p) {
      if (*p < '0' || *p > '9') return std::nullopt;
      nonzero |= *p != '0';
    }
    if (nonzero && s[0] == '-') --seconds;
  }
  return seconds;
}

// ---------------------------------------------------------------------------
// Ingestion

std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::sum: return "sum";
    case Aggregation::max: return "max";
    case Aggregation::count: return "count";
  }
  return "unknown";
}

Aggregation parse_aggregation(const std::string& text) {
  if (text == "sum") return Aggregation::sum;
  if (text == "max") return Aggregation::max;
  if (text == "count") return Aggregation::count;
  throw ValidationError("unknown aggregation '" + text + "' (expected sum, max or count)");
}

bool ExtremeRule::matches(double value) const {
  switch (comparison) {
    case Comparison::greater: return value > threshold;
    case Comparison::greater_equal: return value >= threshold;
    case Comparison::less: return value < threshold;
    case Comparison::less_equal: return value <= threshold;
  }
  return false;
}

void IngestSpec::validate() const {
  if (bin_seconds <= 0) throw ValidationError("bin_seconds must be positive");
  if (features.empty()) throw ValidationError("ingest needs at least one feature");
  if (aggregations.size() != features.size()) {
    throw ValidationError("aggregations must list one entry per feature");
  }
  std::set<std::string> names(features.begin(), features.end());
  if (names.size() != features.size()) throw ValidationError("feature names must be unique");
  if (extreme && !names.count(extreme->feature)) {
    throw ValidationError("extreme rule names unknown feature '" + extreme->feature + "'");
  }
  if (grid) grid->validate();
  if (!(normalization_fraction > 0.0 && normalization_fraction <= 1.0)) {
    throw ValidationError("normalization_fraction must lie in (0, 1]");
  }
}

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  if (trim(text).empty()) return out;
  for (auto& field : split_csv_line(text)) out.push_back(trim(field));
  return out;
}

Comparison parse_comparison(const std::string& op) {
  if (op == ">") return Comparison::greater;
  if (op == ">=") return Comparison::greater_equal;
  if (op == "<") return Comparison::less;
  if (op == "<=") return Comparison::less_equal;
  throw ValidationError("unknown extreme_op '" + op + "' (expected >, >=, < or <=)");
}

}  // namespace

IngestSpec IngestSpec::from_key_values(const KeyValues& kv) {
  IngestSpec spec;
  spec.bin_seconds = static_cast<std::int64_t>(kv.get_uint("bin_seconds", 3600));
  spec.features = split_list(kv.get_string("features", ""));
  const auto aggregations = split_list(kv.get_string("aggregations", ""));
  if (aggregations.empty()) {
    spec.aggregations.assign(spec.features.size(), Aggregation::sum);
  } else {
    for (const auto& a : aggregations) spec.aggregations.push_back(parse_aggregation(a));
  }
  if (kv.contains("extreme_feature")) {
    ExtremeRule rule;
    rule.feature = kv.get_string("extreme_feature", "");
    rule.comparison = parse_comparison(kv.get_string("extreme_op", ">="));
    if (!kv.contains("extreme_threshold")) throw ValidationError("extreme_feature requires extreme_threshold");
    rule.threshold = kv.get_double("extreme_threshold", 0.0);
    spec.extreme = rule;
  }
  if (kv.contains("grid_rows") || kv.contains("grid_cols")) {
    GridBounds g;
    g.lon_min = kv.get_double("grid_lon_min", g.lon_min);
    g.lon_max = kv.get_double("grid_lon_max", g.lon_max);
    g.lat_min = kv.get_double("grid_lat_min", g.lat_min);
    g.lat_max = kv.get_double("grid_lat_max", g.lat_max);
    g.rows = kv.get_uint("grid_rows", 1);
    g.cols = kv.get_uint("grid_cols", 1);
    spec.grid = g;
  }
  spec.timestamp_column = kv.get_string("timestamp_column", spec.timestamp_column);
  spec.longitude_column = kv.get_string("longitude_column", spec.longitude_column);
  spec.latitude_column = kv.get_string("latitude_column", spec.latitude_column);
  spec.area_column = kv.get_string("area_column", spec.area_column);
  spec.normalization_fraction = kv.get_double("normalization_fraction", spec.normalization_fraction);
  spec.validate();
  return spec;
}

namespace {

struct Event {
  std::int64_t bin;
  std::size_t node;
  std::vector<double> values;

  bool operator<(const Event& o) const {
    return std::tie(bin, node, values) < std::tie(o.bin, o.node, o.values);
  }
};

}  // namespace

IngestResult ingest_events(std::istream& csv, const IngestSpec& spec, const GraphSpec& graph) {
  spec.validate();
  if (spec.grid && spec.grid->rows * spec.grid->cols != graph.size()) {
    throw ValidationError("grid has " + std::to_string(spec.grid->rows * spec.grid->cols) + " cells but graph has " +
                          std::to_string(graph.size()) + " nodes");
  }
  std::string line;
  if (!std::getline(csv, line)) throw DataError("event file is empty (a header row is required)");
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name, bool required) -> std::optional<std::size_t> {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it != header.end()) return static_cast<std::size_t>(it - header.begin());
    if (required) throw DataError("event file lacks column '" + name + "'");
    return std::nullopt;
  };

  const std::size_t c_count = spec.features.size();
  const auto time_col = *column(spec.timestamp_column, true);
  std::optional<std::size_t> lon_col, lat_col, area_col;
  if (spec.grid) {
    lon_col = column(spec.longitude_column, true);
    lat_col = column(spec.latitude_column, true);
  } else {
    area_col = column(spec.area_column, true);
  }
  std::vector<std::optional<std::size_t>> feature_cols;
  for (std::size_t c = 0; c < c_count; ++c) {
    feature_cols.push_back(column(spec.features[c], spec.aggregations[c] != Aggregation::count));
  }
  std::optional<std::size_t> extreme_index;
  if (spec.extreme) {
    extreme_index = static_cast<std::size_t>(
        std::find(spec.features.begin(), spec.features.end(), spec.extreme->feature) - spec.features.begin());
    if (!feature_cols[*extreme_index]) throw DataError("extreme feature column is missing");
  }

  std::map<std::string, std::size_t> area_index;
  for (std::size_t i = 0; i < graph.size(); ++i) area_index.emplace(graph.node_ids()[i], i);

  IngestResult result;
  std::vector<Event> events;
  while (std::getline(csv, line)) {
    if (trim(line).empty()) continue;
    ++result.rows_read;
    std::vector<std::string> fields;
    try {
      fields = split_csv_line(line);
    } catch (const DataError&) {
      ++result.skipped_unparseable;
      continue;
    }
    auto field = [&](std::size_t i) -> const std::string* { return i < fields.size() ? &fields[i] : nullptr; };
    const auto* ts = field(time_col);
    const auto when = ts ? parse_timestamp(*ts) : std::nullopt;
    Event ev{0, 0, std::vector<double>(c_count, 0.0)};
    bool ok = when.has_value();
    for (std::size_t c = 0; ok && c < c_count; ++c) {
      if (!feature_cols[c]) continue;
      const auto* text = field(*feature_cols[c]);
      const auto v = text ? parse_number(*text) : std::nullopt;
      if (!v) {
        ok = false;
      } else {
        ev.values[c] = *v;
      }
    }
    std::optional<std::size_t> node;
    if (ok && spec.grid) {
      const auto* lon_text = field(*lon_col);
      const auto* lat_text = field(*lat_col);
      const auto lon = lon_text ? parse_number(*lon_text) : std::nullopt;
      const auto lat = lat_text ? parse_number(*lat_text) : std::nullopt;
      if (!lon || !lat) {
        ok = false;
      } else {
        node = spec.grid->locate(*lon, *lat);
      }
    } else if (ok) {
      const auto* area = field(*area_col);
      if (!area || area->empty()) {
        ok = false;
      } else if (const auto it = area_index.find(*area); it != area_index.end()) {
        node = it->second;
      }
    }
    if (!ok) {
      ++result.skipped_unparseable;
      continue;
    }
    if (!node) {
      ++result.skipped_outside;
      continue;
    }
    ev.bin = floor_div(*when, spec.bin_seconds);
    ev.node = *node;
    events.push_back(std::move(ev));
  }
  if (events.empty()) throw DataError("no usable events in input");

  // A canonical order makes floating-point aggregation independent of row order.
  std::sort(events.begin(), events.end());
  const std::int64_t first_bin = events.front().bin;
  const std::int64_t last_bin = events.back().bin;
  const auto frames = static_cast<std::size_t>(last_bin - first_bin + 1);
  const std::size_t n_count = graph.size();
  const std::size_t frame_size = n_count * c_count;

  std::vector<double> raw(frames * frame_size, 0.0);
  std::vector<std::uint8_t> seen(frames * n_count, 0);
  FrameSeries& series = result.series;
  series.labels.assign(frames, 0);
  for (const auto& ev : events) {
    const auto f = static_cast<std::size_t>(ev.bin - first_bin);
    double* cell = &raw[f * frame_size + ev.node * c_count];
    const bool first = !seen[f * n_count + ev.node];
    seen[f * n_count + ev.node] = 1;
    for (std::size_t c = 0; c < c_count; ++c) {
      switch (spec.aggregations[c]) {
        case Aggregation::sum: cell[c] += ev.values[c]; break;
        case Aggregation::max: cell[c] = first ? ev.values[c] : std::max(cell[c], ev.values[c]); break;
        case Aggregation::count: cell[c] += 1.0; break;
      }
    }
    if (extreme_index && spec.extreme->matches(ev.values[*extreme_index])) series.labels[f] = 1;
  }

  series.graph = graph;
  series.feature_names = spec.features;
  const auto limit = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(spec.normalization_fraction * static_cast<double>(frames))));
  series.normalization = feature_ranges(raw, frame_size, c_count, limit);
  normalize_into(raw, c_count, series.normalization, series.values);
  series.timestamps.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    series.timestamps[f] = (first_bin + static_cast<std::int64_t>(f)) * spec.bin_seconds;
  }
  series.validate();
  return result;
}

// ---------------------------------------------------------------------------
// Normalization and splitting

std::vector<FeatureRange> feature_ranges(std::span<const double> raw, std::size_t frame_size, std::size_t features,
                                         std::size_t frame_limit) {
  std::vector<FeatureRange> ranges(features, FeatureRange{0.0, 0.0});
  const std::size_t limit = std::min(raw.size(), frame_limit * frame_size);
  if (limit == 0) return ranges;
  for (std::size_t c = 0; c < features; ++c) ranges[c] = {raw[c], raw[c]};
  for (std::size_t i = 0; i < limit; ++i) {
    auto& r = ranges[i % features];
    r.min = std::min(r.min, raw[i]);
    r.max = std::max(r.max, raw[i]);
  }
  return ranges;
}

std::size_t normalize_into(std::span<const double> raw, std::size_t features, const std::vector<FeatureRange>& ranges,
                           std::vector<float>& out) {
  out.resize(raw.size());
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& r = ranges[i % features];
    double v = 0.0;
    if (r.max > r.min) {
      v = (raw[i] - r.min) / (r.max - r.min);
    } else if (raw[i] != r.min) {
      v = raw[i] < r.min ? -1.0 : 2.0;
    }
    if (v < 0.0 || v > 1.0) {
      ++clamped;
      v = std::clamp(v, 0.0, 1.0);
    }
    out[i] = static_cast<float>(v);
  }
  return clamped;
}

SplitResult split(const FrameSeries& series, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("train fraction must lie in (0, 1)");
  const std::size_t frames = series.frame_count();
  const auto cut = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(frames)));
  if (cut == 0 || cut == frames) {
    throw DataError("split of " + std::to_string(frames) + " frames at " + std::to_string(train_fraction) +
                    " leaves one side empty");
  }
  const std::size_t fs = series.frame_size();
  const std::size_t c_count = series.features();

  // Train-side range of the stored values, per feature.
  std::vector<FeatureRange> local(c_count, FeatureRange{1.0, 0.0});
  for (std::size_t i = 0; i < cut * fs; ++i) {
    auto& r = local[i % c_count];
    r.min = std::min<double>(r.min, series.values[i]);
    r.max = std::max<double>(r.max, series.values[i]);
  }

  SplitResult result;
  auto side = [&](std::size_t begin, std::size_t end) {
    FrameSeries s;
    s.graph = series.graph;
    s.feature_names = series.feature_names;
    s.labels.assign(series.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    series.labels.begin() + static_cast<std::ptrdiff_t>(end));
    s.timestamps.assign(series.timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                        series.timestamps.begin() + static_cast<std::ptrdiff_t>(end));
    s.values.resize((end - begin) * fs);
    return s;
  };
  result.train = side(0, cut);
  result.test = side(cut, frames);

  std::vector<FeatureRange> composed(c_count);
  for (std::size_t c = 0; c < c_count; ++c) {
    const auto& raw = series.normalization[c];
    const double width = raw.max - raw.min;
    composed[c] = {raw.min + local[c].min * width, raw.min + local[c].max * width};
    if (local[c].min == 0.0 && local[c].max == 1.0) composed[c] = raw;
  }
  result.train.normalization = composed;
  result.test.normalization = composed;

  auto rescale = [&](std::size_t i) -> double {
    const auto& r = local[i % c_count];
    const double v = series.values[i];
    if (r.min == 0.0 && r.max == 1.0) return v;
    if (r.max > r.min) return (v - r.min) / (r.max - r.min);
    return v == r.min ? 0.0 : (v < r.min ? -1.0 : 2.0);
  };
  for (std::size_t i = 0; i < cut * fs; ++i) result.train.values[i] = static_cast<float>(rescale(i));
  for (std::size_t i = cut * fs; i < frames * fs; ++i) {
    double v = rescale(i);
    if (v < 0.0 || v > 1.0) {
      ++result.clamped;
      v = std::clamp(v, 0.0, 1.0);
    }
    result.test.values[i - cut * fs] = static_cast<float>(v);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Synthetic presets

double preset_default_rate(const std::string& preset) {
  if (preset == "grid16") return 0.0925;
  if (preset == "area45") return 0.0186;
  throw ValidationError("unknown preset '" + preset + "' (expected grid16 or area45)");
}

namespace {

GraphSpec area45_graph() {
  constexpr std::size_t rows = 5;
  constexpr std::size_t cols = 9;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < rows * cols; ++i) {
    ids.push_back((i + 1 < 10 ? "A0" : "A") + std::to_string(i + 1));
  }
  EdgeList edges;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      if (c + 1 < cols) edges.emplace_back(ids[i], ids[i + 1]);
      if (r + 1 < rows) edges.emplace_back(ids[i], ids[i + cols]);
      if (r + 1 < rows && c + 1 < cols) edges.emplace_back(ids[i], ids[i + cols + 1]);
      if (r + 1 < rows && c > 0) edges.emplace_back(ids[i], ids[i + cols - 1]);
    }
  }
  return build_area_graph(edges, ids);
}

}  // namespace

FrameSeries synthesize(const SynthOptions& options) {
  const double rate = options.rate.value_or(preset_default_rate(options.preset));
  if (!(rate >= 0.0 && rate < 1.0)) throw ValidationError("spike rate must lie in [0, 1)");
  if (options.frames < 2) throw ValidationError("synthetic series needs at least 2 frames");

  FrameSeries series;
  if (options.preset == "grid16") {
    series.graph = build_grid_graph(-120.0, -116.0, 32.0, 36.0, 4, 4);
    series.feature_names = {"magnitude", "depth", "significance"};
  } else if (options.preset == "area45") {
    series.graph = area45_graph();
    series.feature_names = {"crashes", "injured", "killed", "pedestrians", "cyclists", "motorists"};
  } else {
    preset_default_rate(options.preset);
  }

  Rng rng(options.seed);
  const std::size_t frames = options.frames;
  const std::size_t n_count = series.nodes();
  const std::size_t c_count = series.features();
  const std::size_t fs = n_count * c_count;
  constexpr double kPeriod = 24.0;
  constexpr double kPersistence = 0.8;
  constexpr double kNoise = 0.01;

  std::vector<double> base(fs), amplitude(fs), phase(n_count), state(fs, 0.0);
  for (std::size_t i = 0; i < fs; ++i) {
    base[i] = 0.3 + 0.1 * rng.uniform();
    amplitude[i] = 0.15 + 0.1 * rng.uniform();
  }
  for (auto& p : phase) p = 2.0 * std::numbers::pi * rng.uniform();

  std::vector<double> raw(frames * fs);
  for (std::size_t f = 0; f < frames; ++f) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(f) / kPeriod;
    for (std::size_t i = 0; i < fs; ++i) {
      state[i] = kPersistence * state[i] + kNoise * rng.normal();
      raw[f * fs + i] = base[i] + amplitude[i] * std::sin(angle + phase[i / c_count]) + state[i];
    }
  }

  // Exactly round(rate * frames) spike frames, chosen by a partial shuffle.
  const auto spikes = static_cast<std::size_t>(std::llround(rate * static_cast<double>(frames)));
  std::vector<std::size_t> order(frames);
  for (std::size_t f = 0; f < frames; ++f) order[f] = f;
  for (std::size_t k = 0; k < spikes; ++k) std::swap(order[k], order[k + rng.below(frames - k)]);
  series.labels.assign(frames, 0);
  const auto& adjacency = series.graph.adjacency();
  for (std::size_t k = 0; k < spikes; ++k) {
    const std::size_t f = order[k];
    const auto center = static_cast<std::size_t>(rng.below(n_count));
    const double strength = 0.8 + 0.4 * rng.uniform();
    series.labels[f] = 1;
    for (std::size_t n = 0; n < n_count; ++n) {
      double weight = n == center ? 1.0 : 0.0;
      if (adjacency(static_cast<Eigen::Index>(center), static_cast<Eigen::Index>(n)) > 0.0) weight = 0.5;
      if (weight == 0.0) continue;
      for (std::size_t c = 0; c < c_count; ++c) raw[f * fs + n * c_count + c] += weight * strength;
    }
  }

  series.normalization = feature_ranges(raw, fs, c_count, frames);
  normalize_into(raw, c_count, series.normalization, series.values);
  constexpr std::int64_t kStart = 1577836800;  // 2020-01-01T00:00:00Z
  series.timestamps.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) series.timestamps[f] = kStart + static_cast<std::int64_t>(f) * 3600;
  series.validate();
  return series;
}

// ---------------------------------------------------------------------------
// Dataset container

namespace {

constexpr char kDatasetMagic[9] = "GTRSDATA";

}  // namespace

void write_dataset(std::ostream& out, const FrameSeries& series) {
  series.validate();
  BinaryWriter w(out);
  w.magic(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u64(series.nodes());
  w.u64(series.features());
  w.u64(series.frame_count());
  for (const auto& name : series.feature_names) w.str(name);
  for (const auto& r : series.normalization) {
    w.f64(r.min);
    w.f64(r.max);
  }
  const auto& a = series.graph.adjacency();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) w.f64(a(i, j));
  }
  for (const auto& id : series.graph.node_ids()) w.str(id);
  for (float v : series.values) w.f32(v);
  w.bytes(series.labels.data(), series.labels.size());
  for (auto t : series.timestamps) w.i64(t);
  if (!out) throw DataError("failed writing dataset");
}

FrameSeries read_dataset(std::istream& in) {
  BinaryReader r(in);
  r.expect_magic(kDatasetMagic, "dataset");
  const auto version = r.u32();
  if (version != kDatasetVersion) throw DataError("unsupported dataset version " + std::to_string(version));
  const auto n = r.u64();
  const auto c = r.u64();
  const auto frames = r.u64();
  if (n == 0 || c == 0 || n > 100000 || c > 100000 || frames > (std::uint64_t{1} << 40) / (n * c)) {
    throw DataError("implausible dataset header");
  }
  FrameSeries s;
  for (std::uint64_t i = 0; i < c; ++i) s.feature_names.push_back(r.str());
  for (std::uint64_t i = 0; i < c; ++i) {
    const double lo = r.f64();
    const double hi = r.f64();
    s.normalization.push_back({lo, hi});
  }
  Eigen::MatrixXd a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = r.f64();
  }
  std::vector<std::string> ids;
  for (std::uint64_t i = 0; i < n; ++i) ids.push_back(r.str());
  s.graph = GraphSpec(std::move(a), std::move(ids));
  s.values.resize(frames * n * c);
  for (auto& v : s.values) v = r.f32();
  s.labels.resize(frames);
  r.bytes(s.labels.data(), s.labels.size());
  s.timestamps.resize(frames);
  for (auto& t : s.timestamps) t = r.i64();
  s.validate();
  return s;
}

void save_dataset(const std::string& path, const FrameSeries& series) {
  std::ostringstream buf(std::ios::binary);
  write_dataset(buf, series);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write dataset " + path);
  const std::string bytes = buf.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing dataset " + path);
}

FrameSeries load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path);
  return read_dataset(in);
}

}  // namespace gtrans
