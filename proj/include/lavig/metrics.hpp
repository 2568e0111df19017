#pragma once

// Reconstruction and video-quality metrics on normalized fields, aggregated per
// rollout stage as mean and population standard deviation.

#include <filesystem>
#include <string>
#include <vector>

#include "lavig/diffusion.hpp"
#include "lavig/tensor.hpp"

namespace lavig::metrics {

double mse(const Tensor& pred, const Tensor& truth);
double mae(const Tensor& pred, const Tensor& truth);
double rmse(const Tensor& pred, const Tensor& truth);

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(L^2 / MSE), or kPsnrCap when MSE < L^2 * 1e-10.
double psnr_from_mse(double mse, double data_range);
double psnr(const Tensor& pred, const Tensor& truth, double data_range);

/// Gaussian window weights (size x size, sigma), normalized to sum 1.
std::vector<double> gaussian_window(int size, double sigma);

/// Single-scale SSIM over the trailing two axes (every leading index is a
/// separate image): 11x11 Gaussian window with sigma 1.5, valid positions only,
/// C1 = (0.01 L)^2, C2 = (0.03 L)^2. Images smaller than the window use a
/// min(11, H, W) window with renormalized weights.
double ssim(const Tensor& pred, const Tensor& truth, double data_range);

/// Data range of a normalized field: 1 for saturation in [0, 1], 2 for pressure in [-1, 1].
double field_range(const std::string& field);

struct MetricValues {
  double mse = 0, mae = 0, rmse = 0, ssim = 0, psnr = 0;
};
MetricValues evaluate(const Tensor& pred, const Tensor& truth, double data_range);

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> n{"MSE", "MAE", "RMSE", "SSIM", "PSNR"};
  return n;
}

struct MetricRow {
  std::string method;
  std::string field;  // saturation | pressure
  int stage = 0;      // 1-based
  int pred_frames = 0;
  std::string metric;
  double mean = 0.0;
  double std = 0.0;
};

struct MetricReport {
  std::string units = "normalized";
  std::vector<MetricRow> rows;
  /// Per-sample values in the order samples were given, parallel to rows.
  std::vector<std::vector<double>> per_sample;

  std::string to_csv() const;
  static MetricReport from_csv(const std::string& text);
  /// Plain-text table, one line per (field, stage) with mean +- std for every metric.
  std::string summary() const;
};

/// Both fields of one clip, normalized, [T, 1, H, W].
struct ClipFields {
  Tensor saturation;
  Tensor pressure;
};

/// For stage k, every metric is computed per sample over the predicted frames
/// [F_c, lengths[k]) only, then aggregated across samples.
MetricReport evaluate_rollout(const std::vector<ClipFields>& pred, const std::vector<ClipFields>& truth,
                              const diffusion::RolloutPlan& plan, const std::string& method);

/// Population (N divisor) mean and standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& v);

}  // namespace lavig::metrics
