#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gtrans/config.hpp"
#include "gtrans/graph.hpp"
#include "gtrans/tensor.hpp"

namespace gtrans {

/// Raw-scale range a normalized feature was mapped from: raw = min + v * (max - min).
struct FeatureRange {
  double min = 0.0;
  double max = 1.0;
  bool operator==(const FeatureRange&) const = default;
};

/// Time-ordered node-feature frames with per-frame extreme labels. Values are
/// stored normalized to [0, 1], frame-major then node-major ([F, N, C]).
struct FrameSeries {
  GraphSpec graph;
  std::vector<std::string> feature_names;
  std::vector<FeatureRange> normalization;
  std::vector<float> values;
  std::vector<std::uint8_t> labels;
  std::vector<std::int64_t> timestamps;

  std::size_t frame_count() const { return labels.size(); }
  std::size_t nodes() const { return graph.size(); }
  std::size_t features() const { return feature_names.size(); }
  std::size_t frame_size() const { return nodes() * features(); }

  std::span<const float> frame(std::size_t index) const;

  /// Frames [start, start + length) as a [length, N, C] tensor.
  template <typename Real>
  Tensor<Real> window(std::size_t start, std::size_t length) const;

  double positive_rate() const;

  /// Checks every structural invariant; throws DataError on violation.
  void validate() const;

  bool operator==(const FrameSeries&) const = default;
};

// ---------------------------------------------------------------------------
// Graph construction

/// Geographic bounding box cut into rows x cols cells. Row 0 is the southern
/// edge, column 0 the western edge; node index is row * cols + col.
struct GridBounds {
  double lon_min = 0.0;
  double lon_max = 1.0;
  double lat_min = 0.0;
  double lat_max = 1.0;
  std::size_t rows = 1;
  std::size_t cols = 1;

  void validate() const;
  /// Cell containing the point, or nothing when it lies outside. The upper
  /// bounds are inclusive.
  std::optional<std::size_t> locate(double lon, double lat) const;
};

/// 4-neighbourhood mesh with unit weights; node ids are "r<row>c<col>".
GraphSpec build_grid_graph(const GridBounds& bounds);
GraphSpec build_grid_graph(double lon_min, double lon_max, double lat_min, double lat_max, std::size_t rows,
                           std::size_t cols);

using EdgeList = std::vector<std::pair<std::string, std::string>>;

/// Unweighted symmetric adjacency over `ids`. With no ids, the node set is the
/// sorted set of ids appearing in the edge list. Duplicate edges collapse.
GraphSpec build_area_graph(const EdgeList& edges, std::vector<std::string> ids = {});

/// Reads "idA,idB" lines; blank lines and lines starting with '#' are skipped.
EdgeList parse_edge_list(std::istream& in);
EdgeList load_edge_list(const std::string& path);

// ---------------------------------------------------------------------------
// Ingestion

enum class Aggregation { sum, max, count };

enum class Comparison { greater, greater_equal, less, less_equal };

struct ExtremeRule {
  std::string feature;
  Comparison comparison = Comparison::greater_equal;
  double threshold = 0.0;

  bool matches(double value) const;
};

/// How raw event rows become frames. With a grid locator, events carry
/// longitude/latitude columns; otherwise they carry an area id column that
/// must name a graph node.
struct IngestSpec {
  std::int64_t bin_seconds = 3600;
  std::vector<std::string> features;
  std::vector<Aggregation> aggregations;
  std::optional<ExtremeRule> extreme;
  std::optional<GridBounds> grid;
  std::string timestamp_column = "timestamp";
  std::string longitude_column = "longitude";
  std::string latitude_column = "latitude";
  std::string area_column = "area_id";
  /// Leading fraction of frames whose range defines the 0-1 normalization.
  double normalization_fraction = 1.0;

  void validate() const;

  /// Keys: bin_seconds, features, aggregations, extreme_feature, extreme_op
  /// (one of > >= < <=), extreme_threshold, grid_lon_min, grid_lon_max,
  /// grid_lat_min, grid_lat_max, grid_rows, grid_cols, normalization_fraction,
  /// and the *_column names.
  static IngestSpec from_key_values(const KeyValues& kv);
};

struct IngestResult {
  FrameSeries series;
  std::size_t rows_read = 0;
  std::size_t skipped_unparseable = 0;
  std::size_t skipped_outside = 0;
};

/// Buckets events by (time bin, node), aggregates, labels frames with the
/// extreme rule on raw event values, and normalizes. Bins are aligned to
/// multiples of bin_seconds since the Unix epoch; empty bins are all-zero.
IngestResult ingest_events(std::istream& csv, const IngestSpec& spec, const GraphSpec& graph);

/// Seconds since the Unix epoch from either an integer/decimal epoch value or
/// an ISO-8601 date-time (optional fraction and Z/+hh:mm offset). Fractions
/// are truncated toward negative infinity.
std::optional<std::int64_t> parse_timestamp(const std::string& text);

std::string to_string(Aggregation a);
Aggregation parse_aggregation(const std::string& text);

// ---------------------------------------------------------------------------
// Normalization and splitting

/// Per-feature min/max over frames [0, frame_limit).
std::vector<FeatureRange> feature_ranges(std::span<const double> raw, std::size_t frame_size, std::size_t features,
                                         std::size_t frame_limit);

/// Maps raw values into [0, 1] with the given ranges, clamping values outside
/// them. Constant features map to 0. Returns the number of clamped values.
std::size_t normalize_into(std::span<const double> raw, std::size_t features, const std::vector<FeatureRange>& ranges,
                           std::vector<float>& out);

struct SplitResult {
  FrameSeries train;
  FrameSeries test;
  std::size_t clamped = 0;
};

/// Chronological split at floor(fraction * frames). Both sides are rescaled
/// so the train side spans [0, 1]; test values outside are clamped.
SplitResult split(const FrameSeries& series, double train_fraction);

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthOptions {
  std::string preset = "grid16";
  std::size_t frames = 2000;
  /// Fraction of frames carrying a spike; the preset default when unset.
  std::optional<double> rate;
  std::uint64_t seed = 0;
};

/// Presets: grid16 (4x4 grid, C=3, 9.25% spikes) and area45 (45 areas, C=6,
/// 1.86% spikes). Background is a per-node seasonal AR(1) process; a spike
/// raises one node and, at half strength, its neighbours.
FrameSeries synthesize(const SynthOptions& options);

double preset_default_rate(const std::string& preset);

// ---------------------------------------------------------------------------
// Dataset container

inline constexpr std::uint32_t kDatasetVersion = 1;

void write_dataset(std::ostream& out, const FrameSeries& series);
FrameSeries read_dataset(std::istream& in);
void save_dataset(const std::string& path, const FrameSeries& series);
FrameSeries load_dataset(const std::string& path);

}  // namespace gtrans
