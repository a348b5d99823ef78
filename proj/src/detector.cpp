#include "gtrans/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gtrans/binary_io.hpp"
#include "gtrans/errors.hpp"
#include "gtrans/training.hpp"

namespace gtrans {

std::string to_string(ThresholdMethod method) {
  return method == ThresholdMethod::quantile ? "quantile" : "scaled-mean";
}

ThresholdMethod parse_threshold_method(const std::string& name) {
  if (name == "quantile") return ThresholdMethod::quantile;
  if (name == "scaled-mean") return ThresholdMethod::scaled_mean;
  throw ValidationError("unknown threshold method '" + name + "' (expected quantile or scaled-mean)");
}

Eigen::VectorXd absolute_error(std::span<const float> target, std::span<const float> prediction) {
  if (target.size() != prediction.size()) throw DimensionError("error vectors differ in length");
  Eigen::VectorXd out(static_cast<Eigen::Index>(target.size()));
  for (std::size_t i = 0; i < target.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) = std::abs(static_cast<double>(target[i]) - static_cast<double>(prediction[i]));
  }
  return out;
}

Eigen::MatrixXd reconstruction_errors(const Forecaster<float>& model, const FrameSeries& data, const GraphSpec& g,
                                      std::size_t batch_size) {
  NoGradGuard no_grad;
  const std::size_t window = model.config().window;
  const auto windows = make_windows(data, window);
  const std::size_t fs = data.frame_size();
  Eigen::MatrixXd errors(static_cast<Eigen::Index>(windows.size()), static_cast<Eigen::Index>(fs));
  for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
    const std::size_t end = std::min(windows.size(), begin + batch_size);
    const std::span<const WindowPair> batch(windows.data() + begin, end - begin);
    const auto pred = model.forward(stack_windows<float>(data, batch, false), g);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto target = data.frame(batch[b].nowcast_frame());
      const auto last = pred.data().subspan(((b + 1) * window - 1) * fs, fs);
      errors.row(static_cast<Eigen::Index>(begin + b)) = absolute_error(target, last).transpose();
    }
  }
  return errors;
}

std::vector<std::uint8_t> nowcast_labels(const FrameSeries& data, std::size_t window) {
  std::vector<std::uint8_t> out;
  for (const auto& w : make_windows(data, window)) out.push_back(data.labels[w.nowcast_frame()]);
  return out;
}

ErrorStatistics fit_statistics(const Eigen::MatrixXd& errors) {
  if (errors.rows() < 2) throw DataError("fitting error statistics needs at least 2 error vectors");
  if (!errors.allFinite()) throw NumericError("error vectors contain non-finite values");
  ErrorStatistics s;
  s.mean = errors.colwise().mean().transpose();
  const Eigen::MatrixXd centered = errors.rowwise() - s.mean.transpose();
  s.covariance = (centered.transpose() * centered) / static_cast<double>(errors.rows() - 1);
  s.covariance = 0.5 * (s.covariance + s.covariance.transpose());
  const auto dim = static_cast<double>(errors.cols());
  s.ridge = std::max(1e-6 * s.covariance.trace() / dim, 1e-12);
  s.covariance.diagonal().array() += s.ridge;
  const Eigen::LLT<Eigen::MatrixXd> llt(s.covariance);
  if (llt.info() != Eigen::Success) throw NumericError("regularized error covariance is not positive definite");
  s.precision = llt.solve(Eigen::MatrixXd::Identity(errors.cols(), errors.cols()));
  s.precision = 0.5 * (s.precision + s.precision.transpose());
  return s;
}

double mahalanobis(const Eigen::VectorXd& e, const Eigen::VectorXd& mean, const Eigen::MatrixXd& precision) {
  if (e.size() != mean.size() || precision.rows() != e.size() || precision.cols() != e.size()) {
    throw DimensionError("mahalanobis operands disagree in dimension");
  }
  if (!e.allFinite() || !mean.allFinite()) throw NumericError("mahalanobis of non-finite input");
  const Eigen::VectorXd d = e - mean;
  return std::sqrt(std::max(0.0, d.dot(precision * d)));
}

std::vector<double> mahalanobis_distances(const Eigen::MatrixXd& errors, const ErrorStatistics& stats) {
  std::vector<double> out(static_cast<std::size_t>(errors.rows()));
  for (Eigen::Index i = 0; i < errors.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = mahalanobis(errors.row(i).transpose(), stats.mean, stats.precision);
  }
  return out;
}

double select_threshold(std::span<const double> distances, double extreme_rate, ThresholdMethod method,
                        double scale) {
  if (distances.empty()) throw DataError("no distances to threshold");
  if (method == ThresholdMethod::scaled_mean) {
    if (!(scale >= 0.0)) throw ValidationError("threshold scale must be non-negative");
    return scale * std::accumulate(distances.begin(), distances.end(), 0.0) / static_cast<double>(distances.size());
  }
  if (!(extreme_rate > 0.0 && extreme_rate < 1.0)) throw ValidationError("extreme rate must lie in (0, 1)");
  std::vector<double> sorted(distances.begin(), distances.end());
  std::sort(sorted.begin(), sorted.end());
  const double position = (1.0 - extreme_rate) * static_cast<double>(sorted.size() - 1);
  // The epsilon absorbs representation error, e.g. 0.9 * 99 = 89.10000000000001.
  const auto index = static_cast<std::size_t>(std::floor(position + 1e-9));
  return sorted[std::min(index, sorted.size() - 1)];
}

std::vector<std::uint8_t> classify(std::span<const double> distances, double epsilon) {
  std::vector<std::uint8_t> out(distances.size());
  for (std::size_t i = 0; i < distances.size(); ++i) out[i] = distances[i] > epsilon ? 1 : 0;
  return out;
}

DetectionArtifacts fit_detector(const Forecaster<float>& model, const FrameSeries& data, const GraphSpec& g,
                                const DetectorOptions& options) {
  DetectionArtifacts a;
  a.method = options.method;
  a.threshold_scale = options.threshold_scale;
  a.extreme_rate = options.extreme_rate;
  if (a.extreme_rate < 0.0) {
    const auto labels = nowcast_labels(data, model.config().window);
    a.extreme_rate = static_cast<double>(std::count(labels.begin(), labels.end(), 1)) /
                     static_cast<double>(labels.size());
    if (a.method == ThresholdMethod::quantile && a.extreme_rate == 0.0) {
      throw DataError("training data has no extreme frames; pass an explicit extreme rate");
    }
  }
  const auto errors = reconstruction_errors(model, data, g);
  a.stats = fit_statistics(errors);
  const auto distances = mahalanobis_distances(errors, a.stats);
  a.epsilon = select_threshold(distances, a.extreme_rate, a.method, a.threshold_scale);
  return a;
}

std::vector<std::uint8_t> predict(const Forecaster<float>& model, const DetectionArtifacts& artifacts,
                                  const FrameSeries& data, const GraphSpec& g) {
  if (!artifacts.fitted()) throw ContractError("detector artifacts are not fitted");
  if (static_cast<std::size_t>(artifacts.stats.mean.size()) != data.frame_size()) {
    throw DimensionError("detector was fitted on " + std::to_string(artifacts.stats.mean.size()) +
                         "-value frames, data has " + std::to_string(data.frame_size()));
  }
  const auto distances = mahalanobis_distances(reconstruction_errors(model, data, g), artifacts.stats);
  return classify(distances, artifacts.epsilon);
}

// ---------------------------------------------------------------------------
// Container: magic, version, method, scalars, then named f64 matrix records.

namespace {

constexpr char kArtifactsMagic[9] = "GTRSDETA";

void write_matrix(BinaryWriter& w, const std::string& name, const Eigen::MatrixXd& m) {
  w.str(name);
  w.u64(static_cast<std::uint64_t>(m.rows()));
  w.u64(static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) w.f64(m(i, j));
  }
}

Eigen::MatrixXd read_matrix(BinaryReader& r, const std::string& expected) {
  const auto name = r.str();
  if (name != expected) throw DataError("artifacts: expected record '" + expected + "', found '" + name + "'");
  const auto rows = r.u64();
  const auto cols = r.u64();
  if (rows > 1u << 16 || cols > 1u << 16) throw DataError("artifacts: implausible matrix size");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.f64();
  }
  return m;
}

}  // namespace

void write_artifacts(std::ostream& out, const DetectionArtifacts& a) {
  if (!a.fitted()) throw ContractError("cannot save unfitted detector artifacts");
  BinaryWriter w(out);
  w.magic(kArtifactsMagic);
  w.u32(kArtifactsVersion);
  w.str(to_string(a.method));
  w.f64(a.epsilon);
  w.f64(a.extreme_rate);
  w.f64(a.threshold_scale);
  w.f64(a.stats.ridge);
  write_matrix(w, "mean", a.stats.mean);
  write_matrix(w, "covariance", a.stats.covariance);
  write_matrix(w, "precision", a.stats.precision);
  if (!out) throw DataError("failed writing detector artifacts");
}

DetectionArtifacts read_artifacts(std::istream& in) {
  BinaryReader r(in);
  r.expect_magic(kArtifactsMagic, "detector artifacts");
  const auto version = r.u32();
  if (version != kArtifactsVersion) throw DataError("unsupported artifacts version " + std::to_string(version));
  DetectionArtifacts a;
  a.method = parse_threshold_method(r.str());
  a.epsilon = r.f64();
  a.extreme_rate = r.f64();
  a.threshold_scale = r.f64();
  a.stats.ridge = r.f64();
  const Eigen::MatrixXd mean = read_matrix(r, "mean");
  if (mean.cols() != 1) throw DataError("artifacts: mean must be a column vector");
  a.stats.mean = mean.col(0);
  a.stats.covariance = read_matrix(r, "covariance");
  a.stats.precision = read_matrix(r, "precision");
  const auto dim = a.stats.mean.size();
  if (a.stats.covariance.rows() != dim || a.stats.covariance.cols() != dim || a.stats.precision.rows() != dim ||
      a.stats.precision.cols() != dim) {
    throw DataError("artifacts: matrix dimensions disagree");
  }
  if (!(a.epsilon >= 0.0)) throw DataError("artifacts: threshold must be non-negative");
  return a;
}

void save_artifacts(const std::string& path, const DetectionArtifacts& artifacts) {
  std::ostringstream buf(std::ios::binary);
  write_artifacts(buf, artifacts);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write artifacts " + path);
  const std::string bytes = buf.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing artifacts " + path);
}

DetectionArtifacts load_artifacts(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open artifacts " + path);
  return read_artifacts(in);
}

}  // namespace gtrans
