#include <doctest.h>

#include <sstream>

#include "gtrans/errors.hpp"
#include "gtrans/training.hpp"
#include "support.hpp"

using namespace gtrans;

namespace {

ModelConfig tiny_config(ModelKind kind = ModelKind::gtrans) {
  ModelConfig c;
  c.kind = kind;
  c.window = 4;
  c.nodes = 3;
  c.features = 2;
  c.embed_dim = 2;
  c.heads = 1;
  c.encoder_blocks = 1;
  c.decoder_blocks = 1;
  c.epochs = 3;
  c.batch_size = 4;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("window enumeration") {
  const auto w = make_windows(10, 4);
  REQUIRE(w.size() == 6);
  for (std::size_t k = 0; k < 6; ++k) {
    CHECK(w[k].source_start == k);
    CHECK(w[k].length == 4);
    CHECK(w[k].target_start() == k + 1);
    CHECK(w[k].nowcast_frame() == k + 4);
  }
  CHECK(make_windows(5, 4).size() == 1);
  CHECK_THROWS_AS(make_windows(4, 4), DataError);
}

TEST_CASE("stacked targets are the sources shifted by one frame") {
  const auto series = testing::tiny_series(3, 2, 9, 1);
  const auto windows = make_windows(series, 4);
  const auto x = stack_windows<float>(series, windows, false);
  const auto y = stack_windows<float>(series, windows, true);
  CHECK(x.shape() == Shape{5, 4, 3, 2});
  const std::size_t fs = 6;
  for (std::size_t b = 0; b < 5; ++b) {
    for (std::size_t t = 0; t < 4; ++t) {
      for (std::size_t i = 0; i < fs; ++i) {
        CHECK(x[(b * 4 + t) * fs + i] == series.values[(b + t) * fs + i]);
        CHECK(y[(b * 4 + t) * fs + i] == series.values[(b + t + 1) * fs + i]);
      }
    }
  }
}

TEST_CASE("loss worked examples") {
  const Tensor<double> p({1, 1, 1}, {3.0});
  const Tensor<double> t({1, 1, 1}, {1.0});
  CHECK(training_loss(p, t, 0.5).item() == doctest::Approx(5.5));
  CHECK(training_loss(p, t, 1.0).item() == doctest::Approx(2.0));
  CHECK(training_loss(t, t, 1.0).item() == 0.0);
  Rng rng(2);
  const auto a = testing::random_tensor({2, 3, 4}, rng);
  const auto b = testing::random_tensor({2, 3, 4}, rng);
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= static_cast<double>(a.size());
  CHECK(training_loss(a, b, 1.0).item() == doctest::Approx(0.5 * mse).epsilon(1e-14));
  for (double lambda : {0.0, 0.3, 0.9}) CHECK(training_loss(a, b, lambda).item() >= 0.0);
}

TEST_CASE("plateau schedule halves after five stale epochs and respects the floor") {
  PlateauSchedule s;
  double lr = 1e-3;
  lr = s.update(1.0, lr);
  CHECK(lr == 1e-3);
  for (int i = 0; i < 4; ++i) lr = s.update(1.0, lr);
  CHECK(lr == 1e-3);
  lr = s.update(1.0, lr);
  CHECK(lr == 5e-4);
  // The stale counter restarts after a reduction.
  for (int i = 0; i < 4; ++i) lr = s.update(1.0, lr);
  CHECK(lr == 5e-4);
  lr = s.update(1.0 - 1e-9, lr);  // below min_delta: still stale
  CHECK(lr == 2.5e-4);
  lr = s.update(0.5, lr);
  for (int i = 0; i < 4; ++i) lr = s.update(0.4, lr);
  CHECK(lr == 2.5e-4);

  PlateauSchedule floor;
  double small = 1.5e-6;
  floor.update(1.0, small);
  for (int i = 0; i < 5; ++i) small = floor.update(2.0, small);
  CHECK(small == 1e-6);
}

TEST_CASE("zero epochs leave parameters untouched") {
  const auto series = testing::tiny_series(3, 2, 12, 3);
  auto config = tiny_config();
  config.epochs = 0;
  auto model = make_forecaster<float>(config);
  const auto before = parameter_checksum(*model);
  const auto report = train(*model, series, series.graph);
  CHECK(report.epochs.empty());
  CHECK(parameter_checksum(*model) == before);
}

TEST_CASE("training is bit-reproducible for a seed, including dropout") {
  const auto series = testing::tiny_series(3, 2, 16, 4);
  for (auto kind : {ModelKind::gtrans, ModelKind::mlp_ae, ModelKind::lstm_ae, ModelKind::gcn_lstm}) {
    auto config = tiny_config(kind);
    config.dropout = 0.2;
    auto a = make_forecaster<float>(config);
    auto b = make_forecaster<float>(config);
    const auto ra = train(*a, series, series.graph);
    const auto rb = train(*b, series, series.graph);
    CHECK(ra.checksum == rb.checksum);
    CHECK(parameter_checksum(*a) == parameter_checksum(*b));
    std::ostringstream ca, cb;
    write_checkpoint(ca, *a);
    write_checkpoint(cb, *b);
    CHECK(ca.str() == cb.str());
    for (std::size_t e = 0; e < ra.epochs.size(); ++e) CHECK(ra.epochs[e].loss == rb.epochs[e].loss);
  }
}

TEST_CASE("epoch records, callback and learning-rate history") {
  const auto series = testing::tiny_series(3, 2, 14, 5);
  auto config = tiny_config();
  config.epochs = 4;
  auto model = make_forecaster<float>(config);
  std::size_t calls = 0;
  const auto report = train(*model, series, series.graph, [&](const EpochRecord& r) {
    CHECK(r.epoch == calls);
    ++calls;
    return calls < 3;
  });
  CHECK(calls == 3);
  CHECK(report.stopped_early);
  REQUIRE(report.epochs.size() == 3);
  for (const auto& e : report.epochs) {
    CHECK(e.learning_rate == config.learning_rate);
    CHECK(e.loss > 0.0);
  }
  std::ostringstream out;
  write_train_report(out, report);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,loss,learning_rate");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 3);
}

TEST_CASE("learning rate decays on a plateau during training") {
  auto series = testing::tiny_series(3, 2, 12, 6);
  std::fill(series.values.begin(), series.values.end(), 0.5f);
  auto config = tiny_config(ModelKind::mlp_ae);
  config.epochs = 120;
  config.lambda = 1.0;
  config.learning_rate = 1e-2;
  config.dropout = 0.0;
  auto model = make_forecaster<float>(config);
  const auto report = train(*model, series, series.graph);
  // Replaying the schedule over the recorded losses reproduces the recorded rates.
  PlateauSchedule s;
  double lr = config.learning_rate;
  bool decayed = false;
  for (const auto& e : report.epochs) {
    CHECK(e.learning_rate == lr);
    lr = s.update(e.loss, lr);
    decayed |= lr < config.learning_rate;
  }
  CHECK(decayed);
}

TEST_CASE("constant series converges to a small loss within 50 epochs") {
  auto series = testing::tiny_series(3, 2, 24, 7);
  std::fill(series.values.begin(), series.values.end(), 0.3f);
  auto config = tiny_config();
  config.epochs = 50;
  config.lambda = 1.0;
  config.dropout = 0.0;
  config.learning_rate = 5e-3;
  auto model = make_forecaster<float>(config);
  const auto report = train(*model, series, series.graph);
  CHECK(report.epochs.back().loss <= 1e-3);
  CHECK(evaluate_mse(*model, series, series.graph) <= 2e-3);
}

TEST_CASE("training rejects series that cannot be windowed") {
  const auto series = testing::tiny_series(3, 2, 4, 8);
  auto model = make_forecaster<float>(tiny_config());
  CHECK_THROWS_AS(train(*model, series, series.graph), DataError);
}
