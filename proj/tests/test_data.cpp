#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "gtrans/errors.hpp"
#include "gtrans/data.hpp"
#include "support.hpp"

using namespace gtrans;

namespace {

IngestSpec area_spec() {
  IngestSpec spec;
  spec.bin_seconds = 3600;
  spec.features = {"injured", "killed", "crashes"};
  spec.aggregations = {Aggregation::sum, Aggregation::max, Aggregation::count};
  spec.extreme = ExtremeRule{"killed", Comparison::greater_equal, 1.0};
  return spec;
}

GraphSpec triangle() { return build_area_graph({{"A", "B"}, {"B", "C"}, {"C", "A"}}); }

std::size_t nonzero_nodes(const FrameSeries& s, std::size_t frame) {
  std::size_t n = 0;
  for (std::size_t node = 0; node < s.nodes(); ++node) {
    bool any = false;
    for (std::size_t c = 0; c < s.features(); ++c) any |= s.frame(frame)[node * s.features() + c] != 0.0f;
    n += any ? 1 : 0;
  }
  return n;
}

}  // namespace

TEST_CASE("grid graphs have the expected edge counts") {
  CHECK(build_grid_graph(0, 1, 0, 1, 1, 1).edge_count() == 0);
  const auto g2 = build_grid_graph(0, 1, 0, 1, 2, 2);
  CHECK(g2.size() == 4);
  CHECK(g2.edge_count() == 4);
  const auto g4 = build_grid_graph(-120, -116, 32, 36, 4, 4);
  CHECK(g4.size() == 16);
  CHECK(g4.edge_count() == 24);
  CHECK(g4.adjacency() == g4.adjacency().transpose());
  CHECK(g4.node_ids()[5] == "r1c1");
  for (std::size_t r = 1; r <= 6; ++r) {
    for (std::size_t c = 1; c <= 6; ++c) {
      const auto g = build_grid_graph(0, 1, 0, 1, r, c);
      CHECK(g.edge_count() == r * (c - 1) + c * (r - 1));
      CHECK(static_cast<std::size_t>((g.adjacency().array() > 0).count()) == 2 * (r * (c - 1) + c * (r - 1)));
    }
  }
}

TEST_CASE("grid cells are located with inclusive upper bounds") {
  GridBounds b{-120, -116, 32, 36, 4, 4};
  CHECK(b.locate(-120, 32) == 0u);
  CHECK(b.locate(-116, 36) == 15u);
  CHECK(b.locate(-119.5, 33.5) == 4u);  // row 1 (latitude), column 0
  CHECK_FALSE(b.locate(-121, 33).has_value());
  CHECK_FALSE(b.locate(-118, 36.01).has_value());
  GridBounds bad{1, 0, 0, 1, 1, 1};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("area graphs from edge lists") {
  const auto t = triangle();
  CHECK(t.size() == 3);
  CHECK(static_cast<int>((t.adjacency().array() > 0).count()) == 6);
  const auto dup = build_area_graph({{"A", "B"}, {"B", "A"}, {"A", "B"}, {"B", "C"}});
  CHECK(dup.edge_count() == 2);
  CHECK_THROWS_AS(build_area_graph({{"A", "A"}}), ValidationError);
  CHECK_THROWS_AS(build_area_graph({{"A", "Z"}}, {"A", "B"}), ValidationError);
  const auto empty = build_area_graph({}, {"A", "B", "C"});
  CHECK(empty.edge_count() == 0);
  CHECK_THROWS_AS(propagation_matrix(empty), DegenerateGraphError);
  std::istringstream text("# comment\nA,B\n\nB , C\n");
  const auto edges = parse_edge_list(text);
  CHECK(edges.size() == 2);
  CHECK(edges[1].first == "B");
  CHECK(edges[1].second == "C");
}

TEST_CASE("a single event makes one nonzero node in one frame") {
  std::istringstream csv("timestamp,area_id,injured,killed\n2021-03-04T05:06:07Z,B,2,0\n");
  const auto r = ingest_events(csv, area_spec(), triangle());
  CHECK(r.rows_read == 1);
  CHECK(r.series.frame_count() == 1);
  CHECK(nonzero_nodes(r.series, 0) == 1);
  CHECK(r.series.labels[0] == 0);
  CHECK(r.series.timestamps[0] == 1614834000);  // 2021-03-04T05:00:00Z
}

TEST_CASE("ingestion aggregates, labels and normalizes") {
  std::istringstream csv(
      "timestamp,area_id,injured,killed\n"
      "0,A,1,0\n"
      "10,A,2,1\n"
      "7200,B,4,0\n"
      "7300,C,0,0\n"
      "bad,A,1,1\n"
      "7300,Q,1,1\n");
  const auto r = ingest_events(csv, area_spec(), triangle());
  const auto& s = r.series;
  CHECK(r.rows_read == 6);
  CHECK(r.skipped_unparseable == 1);
  CHECK(r.skipped_outside == 1);
  REQUIRE(s.frame_count() == 3);  // bins 0, 1 (empty), 2
  CHECK(s.labels == std::vector<std::uint8_t>{1, 0, 0});
  CHECK(s.timestamps == std::vector<std::int64_t>{0, 3600, 7200});
  // Raw frame 0, node A: injured 3, killed max 1, crashes 2. Ranges: injured [0,4], killed [0,1], crashes [0,2].
  CHECK(s.normalization[0] == FeatureRange{0, 4});
  CHECK(s.normalization[1] == FeatureRange{0, 1});
  CHECK(s.normalization[2] == FeatureRange{0, 2});
  CHECK(s.frame(0)[0] == 0.75f);
  CHECK(s.frame(0)[1] == 1.0f);
  CHECK(s.frame(0)[2] == 1.0f);
  for (float v : s.frame(1)) CHECK(v == 0.0f);
  CHECK(s.frame(2)[3] == 1.0f);  // B injured 4 -> max
  CHECK(s.frame(2)[5] == 0.5f);  // B one crash
  CHECK(*std::max_element(s.values.begin(), s.values.end()) == 1.0f);
  CHECK(*std::min_element(s.values.begin(), s.values.end()) == 0.0f);
}

TEST_CASE("ingestion does not depend on row order") {
  std::vector<std::string> rows;
  Rng rng(3);
  const char* ids[] = {"A", "B", "C"};
  for (int i = 0; i < 60; ++i) {
    rows.push_back(std::to_string(rng.below(20000)) + "," + ids[rng.below(3)] + "," +
                   std::to_string(rng.uniform(0, 3)) + "," + std::to_string(rng.below(2)));
  }
  auto run = [&](const std::vector<std::string>& order) {
    std::string text = "timestamp,area_id,injured,killed\n";
    for (const auto& r : order) text += r + "\n";
    std::istringstream in(text);
    return ingest_events(in, area_spec(), triangle()).series;
  };
  const auto a = run(rows);
  auto shuffled = rows;
  rng.shuffle(shuffled);
  CHECK(run(shuffled) == a);
}

TEST_CASE("grid ingestion locates events by coordinates") {
  IngestSpec spec;
  spec.features = {"magnitude"};
  spec.aggregations = {Aggregation::max};
  spec.grid = GridBounds{-120, -116, 32, 36, 4, 4};
  spec.extreme = ExtremeRule{"magnitude", Comparison::greater, 4.0};
  std::istringstream csv(
      "timestamp,longitude,latitude,magnitude\n"
      "100,-119.5,32.5,2.0\n"
      "4000,-116.2,35.9,4.5\n"
      "4100,-110,35,9.0\n");
  const auto r = ingest_events(csv, spec, build_grid_graph(*spec.grid));
  CHECK(r.skipped_outside == 1);
  REQUIRE(r.series.frame_count() == 2);
  CHECK(r.series.labels == std::vector<std::uint8_t>{0, 1});
  CHECK(r.series.frame(0)[0] == doctest::Approx(2.0 / 4.5));  // empty cells hold the minimum 0
  CHECK(r.series.frame(1)[15] == 1.0f);
}

TEST_CASE("ingest specs from key-value text") {
  const auto kv = KeyValues::parse(
      "bin_seconds = 600\nfeatures = a, b\naggregations = sum, count\nextreme_feature = a\n"
      "extreme_op = >\nextreme_threshold = 2.5\n");
  const auto spec = IngestSpec::from_key_values(kv);
  CHECK(spec.bin_seconds == 600);
  CHECK(spec.features == std::vector<std::string>{"a", "b"});
  CHECK(spec.aggregations[1] == Aggregation::count);
  REQUIRE(spec.extreme.has_value());
  CHECK(spec.extreme->matches(2.6));
  CHECK_FALSE(spec.extreme->matches(2.5));
  CHECK_THROWS_AS(IngestSpec::from_key_values(KeyValues::parse("features = a\naggregations = sum, sum\n")),
                  ValidationError);
  std::istringstream empty("timestamp,area_id,a\n");
  CHECK_THROWS_AS(ingest_events(empty, spec, triangle()), DataError);
}

TEST_CASE("timestamp parsing") {
  CHECK(parse_timestamp("0") == 0);
  CHECK(parse_timestamp("1577836800") == 1577836800);
  CHECK(parse_timestamp("12.9") == 12);
  CHECK(parse_timestamp("-0.5") == -1);
  CHECK(parse_timestamp("2020-01-01T00:00:00Z") == 1577836800);
  CHECK(parse_timestamp("2020-01-01 00:00:00") == 1577836800);
  CHECK(parse_timestamp("2020-02-29T12:30:45.75Z") == 1582979445);
  CHECK(parse_timestamp("2020-01-01T02:00:00+02:00") == 1577836800);
  CHECK(parse_timestamp("1969-12-31T23:59:59Z") == -1);
  CHECK_FALSE(parse_timestamp("yesterday").has_value());
  CHECK_FALSE(parse_timestamp("2020-13-01T00:00:00Z").has_value());
}

TEST_CASE("normalization clamps and maps constant features to zero") {
  const std::vector<double> raw{0, 5, 10, 5, 20, 5};  // 3 frames, 2 features; feature 1 constant
  const auto ranges = feature_ranges(raw, 2, 2, 2);
  CHECK(ranges[0] == FeatureRange{0, 10});
  CHECK(ranges[1] == FeatureRange{5, 5});
  std::vector<float> out;
  const auto clamped = normalize_into(raw, 2, ranges, out);
  CHECK(clamped == 1);
  CHECK(out == std::vector<float>{0.0f, 0.0f, 1.0f, 0.0f, 1.0f, 0.0f});
}

TEST_CASE("chronological split sizes") {
  SynthOptions o;
  o.frames = 25515;
  o.seed = 1;
  const auto big = synthesize(o);
  const auto s = split(big, 5.0 / 6.0);
  CHECK(s.train.frame_count() == 21262);
  CHECK(s.test.frame_count() == 4253);
  CHECK(s.train.timestamps.back() < s.test.timestamps.front());
  CHECK_THROWS_AS(split(big, 1.0), ValidationError);
  CHECK_THROWS_AS(split(big, 0.0), ValidationError);
  const auto tiny = testing::tiny_series(2, 1, 3, 1);
  CHECK_THROWS_AS(split(tiny, 0.2), DataError);
}

TEST_CASE("split rescales to the training range and clamps test values") {
  auto s = testing::tiny_series(2, 1, 10, 2);
  for (std::size_t f = 0; f < 10; ++f) {
    s.values[f * 2] = static_cast<float>(f) / 9.0f;  // rising trend
    s.values[f * 2 + 1] = 0.1f;
  }
  s.normalization = {FeatureRange{100, 1000}};
  s.feature_names = {"f0"};
  const auto r = split(s, 0.5);
  for (float v : r.train.values) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(*std::max_element(r.train.values.begin(), r.train.values.end()) == 1.0f);
  CHECK(r.clamped == 5);  // the five later, larger trend values
  for (float v : r.test.values) CHECK(v <= 1.0f);
  CHECK(r.train.normalization == r.test.normalization);
  // Composed ranges still map normalized values back to raw units.
  const auto& n = r.train.normalization[0];
  CHECK(n.min == doctest::Approx(100.0));
  CHECK(n.max == doctest::Approx(100.0 + 900.0 * 4.0 / 9.0).epsilon(1e-6));
}

TEST_CASE("synthetic presets") {
  SynthOptions o;
  o.frames = 400;
  o.seed = 7;
  const auto a = synthesize(o);
  const auto b = synthesize(o);
  CHECK(a == b);
  CHECK(a.nodes() == 16);
  CHECK(a.features() == 3);
  CHECK_NOTHROW(a.validate());
  o.seed = 8;
  CHECK_FALSE(synthesize(o) == a);

  o.preset = "area45";
  const auto c = synthesize(o);
  CHECK(c.nodes() == 45);
  CHECK(c.features() == 6);
  CHECK(c.graph.node_ids().front() == "A01");
  CHECK(c.graph.node_ids().back() == "A45");

  o.rate = 0.0;
  const auto quiet = synthesize(o);
  CHECK(std::count(quiet.labels.begin(), quiet.labels.end(), 1) == 0);

  o.preset = "grid99";
  CHECK_THROWS_AS(synthesize(o), ValidationError);
}

TEST_CASE("synthetic label rate honors the configured rate") {
  for (const char* preset : {"grid16", "area45"}) {
    SynthOptions o;
    o.preset = preset;
    o.frames = 12000;
    o.seed = 3;
    const auto s = synthesize(o);
    CHECK(std::abs(s.positive_rate() - preset_default_rate(preset)) <= 0.005);
    o.rate = 0.05;
    CHECK(std::abs(synthesize(o).positive_rate() - 0.05) <= 0.005);
  }
  CHECK(preset_default_rate("area45") == 0.0186);
}

TEST_CASE("synthetic spikes stand out in their frames") {
  SynthOptions o;
  o.frames = 300;
  o.rate = 0.05;
  o.seed = 5;
  const auto s = synthesize(o);
  double spike_max = 0.0;
  double calm_max = 0.0;
  std::size_t spikes = 0;
  for (std::size_t f = 0; f < s.frame_count(); ++f) {
    const auto frame = s.frame(f);
    double m = *std::max_element(frame.begin(), frame.end());
    if (s.labels[f]) {
      spike_max += m;
      ++spikes;
    } else {
      calm_max += m;
    }
  }
  CHECK(spikes == 15);
  CHECK(spike_max / static_cast<double>(spikes) > calm_max / static_cast<double>(s.frame_count() - spikes) + 0.2);
}

TEST_CASE("dataset container round-trips bit-exactly") {
  SynthOptions o;
  o.preset = "area45";
  o.frames = 120;
  o.seed = 2;
  const auto s = synthesize(o);
  std::stringstream buf;
  write_dataset(buf, s);
  const auto bytes = buf.str();
  const auto back = read_dataset(buf);
  CHECK(back == s);
  std::stringstream again;
  write_dataset(again, back);
  CHECK(again.str() == bytes);
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(read_dataset(truncated), DataError);
}

TEST_CASE("series validation") {
  auto s = testing::tiny_series(2, 2, 5, 1);
  CHECK_NOTHROW(s.validate());
  auto bad = s;
  bad.values[3] = 1.5f;
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = s;
  bad.timestamps[2] = bad.timestamps[1];
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = s;
  bad.labels.pop_back();
  CHECK_THROWS_AS(bad.validate(), DataError);
  const auto w = s.window<float>(1, 3);
  CHECK(w.shape() == Shape{3, 2, 2});
  CHECK(w[0] == s.values[4]);
}
