#include "lavig/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace lavig::metrics {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

/// Frames [first, first + count) of a [T, ...] clip.
Tensor frames(const Tensor& clip, int first, int count) { return clip.slice0(first, count); }

/// SSIM map mean for one H x W image pair, separable weighted sums in double.
double ssim_image(const float* x, const float* y, int H, int W, int k, const std::vector<double>& g1,
                  double c1, double c2, double& positions) {
  const int oh = H - k + 1, ow = W - k + 1;
  // Horizontal pass over every row for the five moment images.
  std::vector<double> hx(static_cast<std::size_t>(H * ow)), hy(hx.size()), hxx(hx.size()), hyy(hx.size()),
      hxy(hx.size());
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < ow; ++c) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      for (int j = 0; j < k; ++j) {
        const double w = g1[static_cast<std::size_t>(j)];
        const double a = x[r * W + c + j], b = y[r * W + c + j];
        sx += w * a;
        sy += w * b;
        sxx += w * a * a;
        syy += w * b * b;
        sxy += w * a * b;
      }
      const std::size_t o = static_cast<std::size_t>(r * ow + c);
      hx[o] = sx;
      hy[o] = sy;
      hxx[o] = sxx;
      hyy[o] = syy;
      hxy[o] = sxy;
    }
  double total = 0.0;
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      double mx = 0, my = 0, exx = 0, eyy = 0, exy = 0;
      for (int i = 0; i < k; ++i) {
        const double w = g1[static_cast<std::size_t>(i)];
        const std::size_t o = static_cast<std::size_t>((r + i) * ow + c);
        mx += w * hx[o];
        my += w * hy[o];
        exx += w * hxx[o];
        eyy += w * hyy[o];
        exy += w * hxy[o];
      }
      const double vx = exx - mx * mx, vy = eyy - my * my, cov = exy - mx * my;
      total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  positions += static_cast<double>(oh) * ow;
  return total;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

double mse(const Tensor& pred, const Tensor& truth) {
  require_same_shape(pred, truth, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = double(pred[i]) - double(truth[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

double mae(const Tensor& pred, const Tensor& truth) {
  require_same_shape(pred, truth, "mae");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(double(pred[i]) - double(truth[i]));
  return acc / static_cast<double>(pred.size());
}

double rmse(const Tensor& pred, const Tensor& truth) { return std::sqrt(mse(pred, truth)); }

double psnr_from_mse(double m, double L) {
  if (!(L > 0.0)) throw std::invalid_argument("PSNR data range must be positive");
  if (m < L * L * 1e-10) return kPsnrCap;
  return 10.0 * std::log10(L * L / m);
}

double psnr(const Tensor& pred, const Tensor& truth, double L) { return psnr_from_mse(mse(pred, truth), L); }

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size * size));
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      const double v = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2.0 * sigma * sigma));
      w[static_cast<std::size_t>(i * size + j)] = v;
      sum += v;
    }
  for (auto& v : w) v /= sum;
  return w;
}

double ssim(const Tensor& pred, const Tensor& truth, double L) {
  require_same_shape(pred, truth, "ssim");
  if (pred.rank() < 2) throw ShapeError("SSIM needs images with at least two axes");
  const int H = static_cast<int>(pred.dim(pred.rank() - 2)), W = static_cast<int>(pred.dim(pred.rank() - 1));
  const int k = std::min({kWindow, H, W});
  // The 2-D Gaussian is separable; the 1-D factor is renormalized for the window size in use.
  std::vector<double> g1(static_cast<std::size_t>(k));
  double s = 0.0;
  for (int i = 0; i < k; ++i) {
    const double d = i - (k - 1) / 2.0;
    g1[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    s += g1[static_cast<std::size_t>(i)];
  }
  for (auto& v : g1) v /= s;
  const double c1 = (0.01 * L) * (0.01 * L), c2 = (0.03 * L) * (0.03 * L);
  const std::size_t per = static_cast<std::size_t>(H * W);
  const std::size_t n_images = pred.size() / per;
  double total = 0.0, positions = 0.0;
  for (std::size_t n = 0; n < n_images; ++n)
    total += ssim_image(pred.data() + n * per, truth.data() + n * per, H, W, k, g1, c1, c2, positions);
  return total / positions;
}

double field_range(const std::string& field) {
  if (field == "saturation") return 1.0;
  if (field == "pressure") return 2.0;
  throw std::invalid_argument("unknown field " + field);
}

MetricValues evaluate(const Tensor& pred, const Tensor& truth, double L) {
  MetricValues v;
  v.mse = mse(pred, truth);
  v.mae = mae(pred, truth);
  v.rmse = std::sqrt(v.mse);
  v.ssim = ssim(pred, truth, L);
  v.psnr = psnr_from_mse(v.mse, L);
  return v;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  return {m, std::sqrt(var / static_cast<double>(v.size()))};
}

MetricReport evaluate_rollout(const std::vector<ClipFields>& pred, const std::vector<ClipFields>& truth,
                              const diffusion::RolloutPlan& plan, const std::string& method) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("have " + std::to_string(pred.size()) + " predicted clips but " +
                                std::to_string(truth.size()) + " ground-truth clips");
  if (pred.empty()) throw std::invalid_argument("no clips to evaluate");
  const int total = plan.total_frames();
  for (std::size_t s = 0; s < pred.size(); ++s)
    for (const Tensor* t : {&pred[s].saturation, &pred[s].pressure, &truth[s].saturation, &truth[s].pressure})
      if (t->rank() < 3 || t->dim(0) < total)
        throw ShapeError("clip " + std::to_string(s) + " has shape " + shape_str(t->shape()) + ", plan needs " +
                         std::to_string(total) + " frames");

  MetricReport report;
  for (const std::string field : {"saturation", "pressure"}) {
    const double L = field_range(field);
    for (int k = 0; k < plan.n_steps; ++k) {
      const int n_pred = plan.pred_frames * (k + 1);
      std::vector<std::vector<double>> values(5);
      for (std::size_t s = 0; s < pred.size(); ++s) {
        const Tensor& p = field == "saturation" ? pred[s].saturation : pred[s].pressure;
        const Tensor& t = field == "saturation" ? truth[s].saturation : truth[s].pressure;
        const MetricValues v = evaluate(frames(p, plan.context_frames, n_pred), frames(t, plan.context_frames, n_pred), L);
        values[0].push_back(v.mse);
        values[1].push_back(v.mae);
        values[2].push_back(v.rmse);
        values[3].push_back(v.ssim);
        values[4].push_back(v.psnr);
      }
      for (std::size_t m = 0; m < 5; ++m) {
        auto [mean, sd] = mean_std(values[m]);
        report.rows.push_back({method, field, k + 1, n_pred, metric_names()[m], mean, sd});
        report.per_sample.push_back(values[m]);
      }
    }
  }
  return report;
}

std::string MetricReport::to_csv() const {
  std::string out = "# units: " + units + "\nmethod,field,stage,pred_frames,metric,mean,std\n";
  for (const auto& r : rows)
    out += r.method + "," + r.field + "," + std::to_string(r.stage) + "," + std::to_string(r.pred_frames) + "," +
           r.metric + "," + fmt(r.mean) + "," + fmt(r.std) + "\n";
  return out;
}

MetricReport MetricReport::from_csv(const std::string& text) {
  MetricReport rep;
  std::istringstream in(text);
  std::string line;
  bool header = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string tag = "# units: ";
      if (line.rfind(tag, 0) == 0) rep.units = line.substr(tag.size());
      continue;
    }
    if (!header) {
      if (line != "method,field,stage,pred_frames,metric,mean,std")
        throw std::runtime_error("metric report: unexpected header '" + line + "'");
      header = true;
      continue;
    }
    auto c = split_csv(line);
    if (c.size() != 7) throw std::runtime_error("metric report line " + std::to_string(line_no) + ": expected 7 columns");
    rep.rows.push_back({c[0], c[1], std::stoi(c[2]), std::stoi(c[3]), c[4], std::stod(c[5]), std::stod(c[6])});
  }
  if (!header) throw std::runtime_error("metric report: missing header");
  return rep;
}

std::string MetricReport::summary() const {
  // (method, field, stage) -> metric -> "mean +- std"
  std::map<std::tuple<std::string, std::string, int>, std::pair<int, std::map<std::string, std::string>>> table;
  std::vector<std::tuple<std::string, std::string, int>> order;
  for (const auto& r : rows) {
    auto key = std::make_tuple(r.method, r.field, r.stage);
    if (!table.count(key)) order.push_back(key);
    char buf[64];
    if (r.metric == "PSNR")
      std::snprintf(buf, sizeof buf, "%.2f +- %.2f", r.mean, r.std);
    else
      std::snprintf(buf, sizeof buf, "%.4g +- %.2g", r.mean, r.std);
    table[key].first = r.pred_frames;
    table[key].second[r.metric] = buf;
  }
  std::string out = "units: " + units + "\n";
  char line[512];
  std::snprintf(line, sizeof line, "%-12s %-10s %5s %5s", "method", "field", "stage", "pred");
  out += line;
  for (const auto& m : metric_names()) {
    std::snprintf(line, sizeof line, "  %-20s", m.c_str());
    out += line;
  }
  out += "\n";
  for (const auto& key : order) {
    const auto& [pred_frames, cells] = table[key];
    std::snprintf(line, sizeof line, "%-12s %-10s %5d %5d", std::get<0>(key).c_str(), std::get<1>(key).c_str(),
                  std::get<2>(key), pred_frames);
    out += line;
    for (const auto& m : metric_names()) {
      auto it = cells.find(m);
      std::snprintf(line, sizeof line, "  %-20s", it == cells.end() ? "-" : it->second.c_str());
      out += line;
    }
    out += "\n";
  }
  return out;
}

}  // namespace lavig::metrics
