#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <vector>

#include "gtrans/data.hpp"
#include "gtrans/models.hpp"

namespace gtrans {

/// A source window of `length` frames starting at `source_start`, paired with
/// the target window one frame later.
struct WindowPair {
  std::size_t source_start = 0;
  std::size_t length = 0;

  std::size_t target_start() const { return source_start + 1; }
  /// The frame the last target position nowcasts.
  std::size_t nowcast_frame() const { return source_start + length; }
  bool operator==(const WindowPair&) const = default;
};

/// Stride-1 windows; there are frame_count - window of them.
std::vector<WindowPair> make_windows(std::size_t frame_count, std::size_t window);
std::vector<WindowPair> make_windows(const FrameSeries& series, std::size_t window);

/// Sources (or targets) of the given windows as a [B, T, N, C] tensor.
template <typename Real>
Tensor<Real> stack_windows(const FrameSeries& series, std::span<const WindowPair> windows, bool targets);

/// lambda * 0.5 * mean((target - pred)^2) + (1 - lambda) * mean(pred^2).
template <typename Real>
Tensor<Real> training_loss(const Tensor<Real>& pred, const Tensor<Real>& target, double lambda);

/// Halves the learning rate after `patience` consecutive epochs without a
/// strict improvement of more than `min_delta` over the best loss so far.
class PlateauSchedule {
 public:
  struct Options {
    std::size_t patience = 5;
    double factor = 0.5;
    double floor = 1e-6;
    double min_delta = 1e-8;
  };

  PlateauSchedule() = default;
  explicit PlateauSchedule(Options options) : options_(options) {}

  /// Records an epoch loss and returns the learning rate for the next epoch.
  double update(double loss, double learning_rate);

 private:
  Options options_;
  double best_ = 0.0;
  bool has_best_ = false;
  std::size_t stale_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double seconds = 0.0;
  std::uint64_t checksum = 0;
  bool stopped_early = false;
};

/// Called after every epoch; returning false ends training.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Mini-batch ADAM on (source, shifted target) windows using the model's
/// config for epochs, batch size, lambda and learning rate. Shuffling and
/// dropout draw from a stream seeded by the config seed.
TrainReport train(Forecaster<float>& model, const FrameSeries& data, const GraphSpec& g,
                  const EpochCallback& on_epoch = {});

/// Mean squared error of evaluation-mode predictions against targets over
/// every window of the series.
double evaluate_mse(const Forecaster<float>& model, const FrameSeries& data, const GraphSpec& g,
                    std::size_t batch_size = 64);

/// Writes "epoch,loss,learning_rate" records with a header row.
void write_train_report(std::ostream& out, const TrainReport& report);

}  // namespace gtrans
