#pragma once

// Synthetic CO2 plume videos (saturation + pressure build-up), normalization,
// dataset splits and the on-disk dataset layout.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "lavig/config.hpp"
#include "lavig/tensor.hpp"

namespace lavig::data {

struct GridSpec {
  int height = 32;
  int width = 64;
  int frames = 24;  // time samples on the generator's time grid
  int well_column = 0;
  double t_end = 30.0;

  /// Throws ShapeError unless the grid is usable with a downsample factor.
  void validate(int downsample_factor = 8) const;
};

/// t_f = exp(linspace(ln 1, ln t_end, frames)).
std::vector<double> frame_times(const GridSpec& grid);

struct PlumeParams {
  std::uint64_t seed = 0;
  double plume_rate = 6.0;    // plume radius growth, cells per sqrt(time)
  double sat_exponent = 1.5;  // gamma
  std::vector<double> perm_profile;  // one multiplier per row, in (0, 1]
  double pressure_amp = 1.0;
  double pressure_decay = 8.0;  // cells
};

struct PlumeRanges {
  double rate_min = 4, rate_max = 10;
  double gamma_min = 1, gamma_max = 2;
  double perm_min = 0.5, perm_max = 1.0;
  double amp_min = 0.5, amp_max = 2;
  double decay_min = 4, decay_max = 16;

  static PlumeRanges from_config(const Config& cfg);
};

class GenerationError : public std::runtime_error {
 public:
  GenerationError(const std::string& parameter, const std::string& detail);
  const std::string& parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

PlumeParams draw_plume_params(const GridSpec& grid, const PlumeRanges& ranges, std::uint64_t seed);

struct CaseFields {
  Tensor saturation;  // [F, 1, H, W]
  Tensor pressure;    // [F, 1, H, W], build-up over initial pressure
};

/// Physical-unit fields on every frame of the grid's time axis.
CaseFields generate_case(const GridSpec& grid, const PlumeParams& params);

enum class FieldKind { saturation, pressure };
const char* field_name(FieldKind kind);

enum class NormKind { minmax01, minmax_sym };

struct NormStats {
  double min = 0.0;
  double max = 1.0;
  NormKind kind = NormKind::minmax01;
};

NormKind norm_kind_for(FieldKind kind);
/// Global min/max over every element of the given tensors.
NormStats fit_norm(FieldKind kind, const std::vector<const Tensor*>& tensors);
Tensor normalize(const Tensor& t, const NormStats& s);
Tensor denormalize(const Tensor& t, const NormStats& s);
double normalize_value(double v, const NormStats& s);
double denormalize_value(double v, const NormStats& s);

struct DatasetSplit {
  std::vector<int> train_ids, val_ids, test_ids;
  std::uint64_t seed = 0;
};

/// Validation and test each receive round(n / 11) cases (at least one), the
/// training set the rest; membership follows a seeded permutation.
DatasetSplit split_dataset(int n, std::uint64_t seed);

// ---- dataset directory ------------------------------------------------------

std::string case_file(int id, FieldKind kind);

/// A dataset directory: case_<id>_{sat,dp}.lvgf, norm.lvgf, split.txt, config.txt.
struct Dataset {
  std::filesystem::path dir;
  int n_cases = 0;
  NormStats sat_norm;
  NormStats dp_norm;
  DatasetSplit split;

  const NormStats& norm(FieldKind kind) const { return kind == FieldKind::saturation ? sat_norm : dp_norm; }
  std::vector<int> all_ids() const;
  /// Physical-unit clip as stored.
  Tensor load_raw(int id, FieldKind kind) const;
  /// Normalized clip.
  Tensor load(int id, FieldKind kind) const;
};

/// Generates `n_cases` cases into `dir`. Stored clips hold the first
/// `clip_frames` frames; normalization statistics cover every generated frame of
/// the training cases.
Dataset generate_dataset(const Config& cfg, const std::filesystem::path& dir, int n_cases);
Dataset open_dataset(const std::filesystem::path& dir);

GridSpec grid_from_config(const Config& cfg);

void write_split(const std::filesystem::path& path, const DatasetSplit& split);
DatasetSplit read_split(const std::filesystem::path& path);

}  // namespace lavig::data
