#include "lavig/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lavig/lvgf.hpp"
#include "lavig/rng.hpp"

namespace lavig::data {

namespace fs = std::filesystem;

void GridSpec::validate(int f) const {
  if (height < 8 || width < 8) throw ShapeError("grid must be at least 8x8");
  if (f <= 0 || height % f != 0 || width % f != 0)
    throw ShapeError("grid " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by the downsample factor " + std::to_string(f));
  if (frames < 2) throw ShapeError("grid needs at least 2 frames");
  if (well_column < 0 || well_column >= width) throw ShapeError("well column outside the grid");
  if (!(t_end > 1.0) || !std::isfinite(t_end)) throw ShapeError("t_end must be finite and > 1");
}

std::vector<double> frame_times(const GridSpec& grid) {
  std::vector<double> t(static_cast<std::size_t>(grid.frames));
  const double hi = std::log(grid.t_end);
  for (int f = 0; f < grid.frames; ++f) t[static_cast<std::size_t>(f)] = std::exp(hi * f / (grid.frames - 1));
  t.front() = 1.0;
  t.back() = grid.t_end;
  return t;
}

PlumeRanges PlumeRanges::from_config(const Config& cfg) {
  PlumeRanges r;
  r.rate_min = cfg.f64("data.rate_min");
  r.rate_max = cfg.f64("data.rate_max");
  r.gamma_min = cfg.f64("data.gamma_min");
  r.gamma_max = cfg.f64("data.gamma_max");
  r.perm_min = cfg.f64("data.perm_min");
  r.perm_max = cfg.f64("data.perm_max");
  r.amp_min = cfg.f64("data.amp_min");
  r.amp_max = cfg.f64("data.amp_max");
  r.decay_min = cfg.f64("data.decay_min");
  r.decay_max = cfg.f64("data.decay_max");
  return r;
}

GenerationError::GenerationError(const std::string& parameter, const std::string& detail)
    : std::runtime_error("invalid plume parameter '" + parameter + "': " + detail), parameter_(parameter) {}

PlumeParams draw_plume_params(const GridSpec& grid, const PlumeRanges& r, std::uint64_t seed) {
  CounterRng rng(seed, 0x706c756d65ull);
  PlumeParams p;
  p.seed = seed;
  p.plume_rate = rng.uniform(r.rate_min, r.rate_max);
  p.sat_exponent = rng.uniform(r.gamma_min, r.gamma_max);
  p.pressure_amp = rng.uniform(r.amp_min, r.amp_max);
  p.pressure_decay = rng.uniform(r.decay_min, r.decay_max);
  p.perm_profile.resize(static_cast<std::size_t>(grid.height));
  for (auto& k : p.perm_profile) k = rng.uniform(r.perm_min, r.perm_max);
  return p;
}

namespace {

void require_positive(const char* name, double v) {
  if (!std::isfinite(v)) throw GenerationError(name, "not finite");
  if (!(v > 0.0)) throw GenerationError(name, "must be > 0");
}

}  // namespace

CaseFields generate_case(const GridSpec& grid, const PlumeParams& p) {
  grid.validate(1);
  require_positive("plume_rate", p.plume_rate);
  require_positive("sat_exponent", p.sat_exponent);
  require_positive("pressure_amp", p.pressure_amp);
  require_positive("pressure_decay", p.pressure_decay);
  if (p.perm_profile.size() != static_cast<std::size_t>(grid.height))
    throw GenerationError("perm_profile", "needs one multiplier per row");
  double kmax = 0.0;
  for (double k : p.perm_profile) {
    if (!std::isfinite(k) || !(k > 0.0) || k > 1.0) throw GenerationError("perm_profile", "multipliers must lie in (0, 1]");
    kmax = std::max(kmax, k);
  }
  if (kmax * p.plume_rate * std::sqrt(grid.t_end) > 2.0 * grid.width)
    throw GenerationError("plume_rate", "final plume radius exceeds twice the grid width");

  const auto times = frame_times(grid);
  const std::int64_t F = grid.frames, H = grid.height, W = grid.width;
  CaseFields out{Tensor({F, 1, H, W}), Tensor({F, 1, H, W})};
  for (std::int64_t f = 0; f < F; ++f) {
    const double st = std::sqrt(times[static_cast<std::size_t>(f)]);
    for (std::int64_t i = 0; i < H; ++i) {
      const double radius = p.perm_profile[static_cast<std::size_t>(i)] * p.plume_rate * st;
      for (std::int64_t j = 0; j < W; ++j) {
        const double r = std::abs(static_cast<double>(j - grid.well_column));
        const double s = std::pow(std::clamp(1.0 - r / radius, 0.0, 1.0), p.sat_exponent);
        const double dp = p.pressure_amp * st / (1.0 + r / p.pressure_decay);
        const std::size_t idx = static_cast<std::size_t>((f * H + i) * W + j);
        out.saturation[idx] = static_cast<float>(s);
        out.pressure[idx] = static_cast<float>(dp);
      }
    }
  }
  if (!out.saturation.all_finite()) throw GenerationError("sat_exponent", "produced non-finite saturation");
  if (!out.pressure.all_finite()) throw GenerationError("pressure_amp", "produced non-finite pressure");
  return out;
}

const char* field_name(FieldKind kind) { return kind == FieldKind::saturation ? "saturation" : "pressure"; }

NormKind norm_kind_for(FieldKind kind) {
  return kind == FieldKind::saturation ? NormKind::minmax01 : NormKind::minmax_sym;
}

NormStats fit_norm(FieldKind kind, const std::vector<const Tensor*>& tensors) {
  double lo = INFINITY, hi = -INFINITY;
  for (const Tensor* t : tensors)
    for (float v : t->values()) {
      if (!std::isfinite(v)) throw std::invalid_argument("cannot fit normalization on non-finite values");
      lo = std::min(lo, static_cast<double>(v));
      hi = std::max(hi, static_cast<double>(v));
    }
  if (!(hi > lo)) throw std::invalid_argument(std::string("degenerate value range for ") + field_name(kind));
  return NormStats{lo, hi, norm_kind_for(kind)};
}

double normalize_value(double v, const NormStats& s) {
  if (!(s.max > s.min)) throw std::invalid_argument("degenerate normalization range");
  const double u = (v - s.min) / (s.max - s.min);
  return s.kind == NormKind::minmax01 ? u : 2.0 * u - 1.0;
}

double denormalize_value(double v, const NormStats& s) {
  if (!(s.max > s.min)) throw std::invalid_argument("degenerate normalization range");
  const double u = s.kind == NormKind::minmax01 ? v : 0.5 * (v + 1.0);
  return s.min + u * (s.max - s.min);
}

Tensor normalize(const Tensor& t, const NormStats& s) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<float>(normalize_value(t[i], s));
  return out;
}

Tensor denormalize(const Tensor& t, const NormStats& s) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<float>(denormalize_value(t[i], s));
  return out;
}

DatasetSplit split_dataset(int n, std::uint64_t seed) {
  if (n < 3) throw std::invalid_argument("split_dataset needs at least 3 samples, got " + std::to_string(n));
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  CounterRng rng(seed, 0x73706c6974ull);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  const int held = std::max(1, static_cast<int>(std::lround(n / 11.0)));
  const int n_train = n - 2 * held;
  DatasetSplit s;
  s.seed = seed;
  s.train_ids.assign(perm.begin(), perm.begin() + n_train);
  s.val_ids.assign(perm.begin() + n_train, perm.begin() + n_train + held);
  s.test_ids.assign(perm.begin() + n_train + held, perm.end());
  std::sort(s.train_ids.begin(), s.train_ids.end());
  std::sort(s.val_ids.begin(), s.val_ids.end());
  std::sort(s.test_ids.begin(), s.test_ids.end());
  return s;
}

std::string case_file(int id, FieldKind kind) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "case_%04d_%s.lvgf", id, kind == FieldKind::saturation ? "sat" : "dp");
  return buf;
}

std::vector<int> Dataset::all_ids() const {
  std::vector<int> ids(static_cast<std::size_t>(n_cases));
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

Tensor Dataset::load_raw(int id, FieldKind kind) const { return lvgf::load_tensor(dir / case_file(id, kind)); }

Tensor Dataset::load(int id, FieldKind kind) const { return normalize(load_raw(id, kind), norm(kind)); }

GridSpec grid_from_config(const Config& cfg) {
  GridSpec g;
  g.height = cfg.i32("data.height");
  g.width = cfg.i32("data.width");
  g.frames = cfg.i32("data.time_frames");
  g.well_column = cfg.i32("data.well_column");
  g.t_end = cfg.f64("data.t_end");
  return g;
}

namespace {

void write_ids(std::ostream& os, const char* label, const std::vector<int>& ids) {
  os << label << ":";
  for (int id : ids) os << " " << id;
  os << "\n";
}

std::uint64_t case_seed(std::uint64_t seed, int id) { return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(id) + 1)); }

}  // namespace

void write_split(const fs::path& path, const DatasetSplit& split) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "seed: " << split.seed << "\n";
  write_ids(os, "train", split.train_ids);
  write_ids(os, "val", split.val_ids);
  write_ids(os, "test", split.test_ids);
}

DatasetSplit read_split(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  DatasetSplit s;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string label;
    ls >> label;
    if (label == "seed:") {
      ls >> s.seed;
      continue;
    }
    std::vector<int>* target = label == "train:" ? &s.train_ids
                               : label == "val:" ? &s.val_ids
                               : label == "test:" ? &s.test_ids
                                                  : nullptr;
    if (!target) throw std::runtime_error("malformed split file " + path.string() + ": " + line);
    int id = 0;
    while (ls >> id) target->push_back(id);
  }
  return s;
}

Dataset generate_dataset(const Config& cfg, const fs::path& dir, int n_cases) {
  if (n_cases < 3) throw std::invalid_argument("need at least 3 cases, got " + std::to_string(n_cases));
  const GridSpec grid = grid_from_config(cfg);
  grid.validate(8);
  const int clip_frames = cfg.i32("data.clip_frames");
  if (clip_frames < 2 || clip_frames > grid.frames)
    throw ConfigError("data.clip_frames must lie in [2, data.time_frames]");
  const auto seed = static_cast<std::uint64_t>(cfg.i64("seed"));
  const PlumeRanges ranges = PlumeRanges::from_config(cfg);

  Dataset ds;
  ds.dir = dir;
  ds.n_cases = n_cases;
  ds.split = split_dataset(n_cases, seed);
  fs::create_directories(dir);

  std::vector<CaseFields> train_fields;
  for (int id = 0; id < n_cases; ++id) {
    CaseFields c = generate_case(grid, draw_plume_params(grid, ranges, case_seed(seed, id)));
    lvgf::save_tensor(dir / case_file(id, FieldKind::saturation), c.saturation.slice0(0, clip_frames));
    lvgf::save_tensor(dir / case_file(id, FieldKind::pressure), c.pressure.slice0(0, clip_frames));
    if (std::binary_search(ds.split.train_ids.begin(), ds.split.train_ids.end(), id))
      train_fields.push_back(std::move(c));
  }
  std::vector<const Tensor*> sat, dp;
  for (const auto& c : train_fields) {
    sat.push_back(&c.saturation);
    dp.push_back(&c.pressure);
  }
  ds.sat_norm = fit_norm(FieldKind::saturation, sat);
  ds.dp_norm = fit_norm(FieldKind::pressure, dp);
  lvgf::save_tensor(dir / "norm.lvgf",
                    Tensor({4}, {static_cast<float>(ds.sat_norm.min), static_cast<float>(ds.sat_norm.max),
                                 static_cast<float>(ds.dp_norm.min), static_cast<float>(ds.dp_norm.max)}));
  write_split(dir / "split.txt", ds.split);
  std::ofstream(dir / "config.txt", std::ios::binary | std::ios::trunc) << cfg.to_text();
  // Statistics are reloaded from their float32 form so that a fresh
  // open_dataset() normalizes identically.
  return open_dataset(dir);
}

Dataset open_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "norm.lvgf")) throw std::runtime_error("not a dataset directory (no norm.lvgf): " + dir.string());
  Dataset ds;
  ds.dir = dir;
  const Tensor norm = lvgf::load_tensor(dir / "norm.lvgf");
  if (norm.shape() != Shape{4}) throw ShapeError("norm.lvgf must hold 4 values");
  ds.sat_norm = NormStats{norm[0], norm[1], NormKind::minmax01};
  ds.dp_norm = NormStats{norm[2], norm[3], NormKind::minmax_sym};
  ds.split = read_split(dir / "split.txt");
  int n = 0;
  while (fs::exists(dir / case_file(n, FieldKind::saturation))) ++n;
  ds.n_cases = n;
  return ds;
}

}  // namespace lavig::data
