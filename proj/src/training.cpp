#include "gtrans/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "gtrans/errors.hpp"
#include "gtrans/optim.hpp"

namespace gtrans {

std::vector<WindowPair> make_windows(std::size_t frame_count, std::size_t window) {
  if (window < 1) throw ValidationError("window must be at least 1");
  if (frame_count < window + 1) {
    throw DataError("series of " + std::to_string(frame_count) + " frames is too short for windows of " +
                    std::to_string(window) + " (needs at least " + std::to_string(window + 1) + ")");
  }
  std::vector<WindowPair> out;
  out.reserve(frame_count - window);
  for (std::size_t k = 0; k + window < frame_count; ++k) out.push_back({k, window});
  return out;
}

std::vector<WindowPair> make_windows(const FrameSeries& series, std::size_t window) {
  return make_windows(series.frame_count(), window);
}

template <typename Real>
Tensor<Real> stack_windows(const FrameSeries& series, std::span<const WindowPair> windows, bool targets) {
  if (windows.empty()) throw ContractError("no windows to stack");
  const std::size_t length = windows.front().length;
  const std::size_t fs = series.frame_size();
  std::vector<Real> values;
  values.reserve(windows.size() * length * fs);
  for (const auto& w : windows) {
    if (w.length != length) throw ContractError("windows in one batch must share a length");
    const std::size_t start = targets ? w.target_start() : w.source_start;
    if (start + length > series.frame_count()) throw DataError("window runs past the end of the series");
    const auto first = series.values.begin() + static_cast<std::ptrdiff_t>(start * fs);
    values.insert(values.end(), first, first + static_cast<std::ptrdiff_t>(length * fs));
  }
  return Tensor<Real>({windows.size(), length, series.nodes(), series.features()}, std::move(values));
}

template <typename Real>
Tensor<Real> training_loss(const Tensor<Real>& pred, const Tensor<Real>& target, double lambda) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("loss shapes differ: " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda must lie in [0, 1]");
  const auto reconstruction = scale(mean(square(sub(target, pred))), static_cast<Real>(0.5 * lambda));
  if (lambda == 1.0) return reconstruction;
  return add(reconstruction, scale(mean(square(pred)), static_cast<Real>(1.0 - lambda)));
}

template Tensor<float> stack_windows<float>(const FrameSeries&, std::span<const WindowPair>, bool);
template Tensor<double> stack_windows<double>(const FrameSeries&, std::span<const WindowPair>, bool);
template Tensor<float> training_loss<float>(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> training_loss<double>(const Tensor<double>&, const Tensor<double>&, double);

double PlateauSchedule::update(double loss, double learning_rate) {
  if (!has_best_ || loss < best_ - options_.min_delta) {
    best_ = loss;
    has_best_ = true;
    stale_ = 0;
    return learning_rate;
  }
  if (++stale_ < options_.patience) return learning_rate;
  stale_ = 0;
  return std::max(learning_rate * options_.factor, options_.floor);
}

TrainReport train(Forecaster<float>& model, const FrameSeries& data, const GraphSpec& g,
                  const EpochCallback& on_epoch) {
  const auto& config = model.config();
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const auto windows = make_windows(data, config.window);

  Adam<float> optimizer(model.parameter_tensors(), AdamOptions{config.learning_rate});
  PlateauSchedule schedule;
  // Separate stream from initialization so the epoch count does not alter
  // the initial weights of other runs with the same seed.
  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainReport report;
  std::vector<WindowPair> batch;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(windows[order[i]]);
      const auto source = stack_windows<float>(data, batch, false);
      const auto target = stack_windows<float>(data, batch, true);
      try {
        optimizer.zero_grad();
        const auto pred = model.forward(source, g, ForwardMode{true, &rng});
        const auto loss = training_loss(pred, target, config.lambda);
        loss.backward();
        optimizer.step();
        total += static_cast<double>(loss.item()) * static_cast<double>(end - begin);
      } catch (const NumericError& e) {
        throw TrainingError(epoch, std::string("loss diverged: ") + e.what());
      }
    }
    const double epoch_loss = total / static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss)) throw TrainingError(epoch, "loss is not finite");
    const EpochRecord record{epoch, epoch_loss, optimizer.learning_rate()};
    report.epochs.push_back(record);
    optimizer.set_learning_rate(schedule.update(epoch_loss, optimizer.learning_rate()));
    if (on_epoch && !on_epoch(record)) {
      report.stopped_early = epoch + 1 < config.epochs;
      break;
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  report.checksum = parameter_checksum(model);
  return report;
}

double evaluate_mse(const Forecaster<float>& model, const FrameSeries& data, const GraphSpec& g,
                    std::size_t batch_size) {
  NoGradGuard no_grad;
  const auto windows = make_windows(data, model.config().window);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
    const std::size_t end = std::min(windows.size(), begin + batch_size);
    const std::span<const WindowPair> batch(windows.data() + begin, end - begin);
    const auto pred = model.forward(stack_windows<float>(data, batch, false), g);
    const auto target = stack_windows<float>(data, batch, true);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = static_cast<double>(target[i]) - static_cast<double>(pred[i]);
      sum += d * d;
    }
    count += pred.size();
  }
  return sum / static_cast<double>(count);
}

void write_train_report(std::ostream& out, const TrainReport& report) {
  out << "epoch,loss,learning_rate\n";
  for (const auto& r : report.epochs) {
    out << r.epoch << ',' << format_double(r.loss) << ',' << format_double(r.learning_rate) << '\n';
  }
}

}  // namespace gtrans
