#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gtrans/data.hpp"
#include "gtrans/models.hpp"

namespace gtrans {

enum class ThresholdMethod { quantile, scaled_mean };

std::string to_string(ThresholdMethod method);
ThresholdMethod parse_threshold_method(const std::string& name);

/// Elementwise |target - prediction|.
Eigen::VectorXd absolute_error(std::span<const float> target, std::span<const float> prediction);

/// One row per window: the absolute error of the last (nowcast) frame,
/// flattened to N * C values.
Eigen::MatrixXd reconstruction_errors(const Forecaster<float>& model, const FrameSeries& data, const GraphSpec& g,
                                      std::size_t batch_size = 64);

/// Labels of the frames nowcast by each window, aligned with reconstruction_errors.
std::vector<std::uint8_t> nowcast_labels(const FrameSeries& data, std::size_t window);

struct ErrorStatistics {
  Eigen::VectorXd mean;
  /// Sample covariance (divisor n - 1) with the ridge already on the diagonal.
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd precision;
  double ridge = 0.0;
};

/// Ridge = max(1e-6 * trace / dim, 1e-12); the floor keeps zero-variance
/// errors invertible.
ErrorStatistics fit_statistics(const Eigen::MatrixXd& errors);

double mahalanobis(const Eigen::VectorXd& e, const Eigen::VectorXd& mean, const Eigen::MatrixXd& precision);

/// Distance of every row of `errors`.
std::vector<double> mahalanobis_distances(const Eigen::MatrixXd& errors, const ErrorStatistics& stats);

/// quantile: lower-interpolated (1 - extreme_rate) empirical quantile.
/// scaled_mean: scale * mean(distances).
double select_threshold(std::span<const double> distances, double extreme_rate, ThresholdMethod method,
                        double scale = 1.0);

/// 1 where distance > epsilon; a distance equal to epsilon is normal.
std::vector<std::uint8_t> classify(std::span<const double> distances, double epsilon);

struct DetectionArtifacts {
  ErrorStatistics stats;
  double epsilon = 0.0;
  ThresholdMethod method = ThresholdMethod::quantile;
  double extreme_rate = 0.0;
  double threshold_scale = 1.0;

  bool fitted() const { return stats.mean.size() > 0; }
};

struct DetectorOptions {
  ThresholdMethod method = ThresholdMethod::quantile;
  /// Negative means: use the positive-label fraction of the fitting data.
  double extreme_rate = -1.0;
  double threshold_scale = 1.0;
};

/// Fits error statistics and the threshold on `data` (the training split).
DetectionArtifacts fit_detector(const Forecaster<float>& model, const FrameSeries& data, const GraphSpec& g,
                                const DetectorOptions& options = {});

/// Per-window predicted labels, aligned with nowcast_labels.
std::vector<std::uint8_t> predict(const Forecaster<float>& model, const DetectionArtifacts& artifacts,
                                  const FrameSeries& data, const GraphSpec& g);

inline constexpr std::uint32_t kArtifactsVersion = 1;

void write_artifacts(std::ostream& out, const DetectionArtifacts& artifacts);
DetectionArtifacts read_artifacts(std::istream& in);
void save_artifacts(const std::string& path, const DetectionArtifacts& artifacts);
DetectionArtifacts load_artifacts(const std::string& path);

}  // namespace gtrans
