#include "lavig/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <regex>
#include <set>
#include <sstream>

#include "lavig/checkpoint.hpp"
#include "lavig/data.hpp"
#include "lavig/diffusion.hpp"
#include "lavig/image.hpp"
#include "lavig/lvgf.hpp"
#include "lavig/metrics.hpp"
#include "lavig/training.hpp"

namespace lavig::cli {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSampleStream = 0x73616d70ull;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;

  void attach(CLI::App* sub) {
    sub->add_option("--config", file, "key=value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--set", sets, "override one key, KEY=VALUE (repeatable)");
  }

  Config resolve() const {
    Config c = file.empty() ? Config() : Config::from_file(file);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects KEY=VALUE, got '" + kv + "'");
      c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return c;
  }
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// A checkpoint directory, or a stage output directory that contains one.
fs::path checkpoint_dir(const std::string& arg) {
  fs::path p(arg);
  if (!ckpt::exists(p) && ckpt::exists(p / "checkpoint")) return p / "checkpoint";
  return p;
}

diffusion::RolloutPlan parse_plan(const std::string& text, const Config& cfg) {
  if (text.empty())
    return diffusion::build_rollout_plan(cfg.i32("rollout.context_frames"), cfg.i32("rollout.pred_frames"),
                                         cfg.i32("rollout.steps"));
  std::vector<int> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      v.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw UsageError("--plan expects F_c,F_p,steps, got '" + text + "'");
    }
  }
  if (v.size() != 3) throw UsageError("--plan expects F_c,F_p,steps, got '" + text + "'");
  try {
    return diffusion::build_rollout_plan(v[0], v[1], v[2]);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

void set_plan(Config& cfg, const diffusion::RolloutPlan& plan) {
  cfg.set("rollout.context_frames", std::to_string(plan.context_frames));
  cfg.set("rollout.pred_frames", std::to_string(plan.pred_frames));
  cfg.set("rollout.steps", std::to_string(plan.n_steps));
}

/// Case ids with both field files present in `dir`.
std::vector<int> case_ids(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("not a directory: " + dir.string());
  static const std::regex pat(R"(case_(\d{4})_sat\.lvgf)");
  std::set<int> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, pat)) {
      const int id = std::stoi(m[1]);
      if (fs::exists(dir / data::case_file(id, data::FieldKind::pressure))) ids.insert(id);
    }
  }
  return {ids.begin(), ids.end()};
}

std::string id_list(const std::vector<int>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) out += (i ? " " : "") + std::to_string(ids[i]);
  return out;
}

void write_frame_images(const fs::path& dir, const Tensor& sat, const Tensor& dp) {
  fs::create_directories(dir);
  const int H = static_cast<int>(sat.dim(2)), W = static_cast<int>(sat.dim(3));
  const std::size_t per = static_cast<std::size_t>(H * W);
  char name[32];
  for (std::int64_t f = 0; f < sat.dim(0); ++f) {
    std::snprintf(name, sizeof name, "sat_f%02d.pgm", static_cast<int>(f));
    image::write_pgm(dir / name, image::to_gray(sat.data() + f * per, H, W, 0.0f, 1.0f));
    std::snprintf(name, sizeof name, "dp_f%02d.pgm", static_cast<int>(f));
    image::write_pgm(dir / name, image::to_gray(dp.data() + f * per, H, W, -1.0f, 1.0f));
  }
}

void save_case(const fs::path& out, int id, const Tensor& sat_norm, const Tensor& dp_norm,
               const data::NormStats& sn, const data::NormStats& dn) {
  lvgf::save_tensor(out / data::case_file(id, data::FieldKind::saturation), data::denormalize(sat_norm, sn));
  lvgf::save_tensor(out / data::case_file(id, data::FieldKind::pressure), data::denormalize(dp_norm, dn));
  char dir[32];
  std::snprintf(dir, sizeof dir, "case_%04d", id);
  write_frame_images(out / "images" / dir, sat_norm, dp_norm);
}

void save_norm(const fs::path& out, const data::NormStats& sn, const data::NormStats& dn) {
  lvgf::save_tensor(out / "norm.lvgf", Tensor({4}, {static_cast<float>(sn.min), static_cast<float>(sn.max),
                                                    static_cast<float>(dn.min), static_cast<float>(dn.max)}));
}

train::TrainOptions train_options(const std::string& out, const std::string& resume, const char* tag, int epochs) {
  train::TrainOptions o;
  o.out_dir = out;
  if (!resume.empty()) o.resume_dir = checkpoint_dir(resume);
  o.on_epoch = [tag, epochs](const train::EpochRecord& r) {
    std::printf("[%s] epoch %d/%d loss %.6g (%.1f s)\n", tag, r.epoch, epochs, r.loss, r.seconds);
    std::fflush(stdout);
  };
  return o;
}

// ---- commands -----------------------------------------------------------------

int cmd_gen_data(const Config& cfg, const std::string& out, int n_cases) {
  if (n_cases < 1) throw UsageError("--n-cases must be at least 1");
  auto ds = data::generate_dataset(cfg, out, n_cases);
  std::printf("wrote %d cases (%zu train / %zu val / %zu test) to %s\n", ds.n_cases, ds.split.train_ids.size(),
              ds.split.val_ids.size(), ds.split.test_ids.size(), out.c_str());
  return kExitOk;
}

int cmd_train_ae(const Config& cfg, train::Stage stage, const std::string& data_dir, const std::string& out,
                 const std::string& resume) {
  auto ds = data::open_dataset(data_dir);
  const auto tc = train::train_config_from(cfg, stage);
  train::train_autoencoder(cfg, ds, stage, train_options(out, resume, train::stage_name(stage), tc.epochs));
  return kExitOk;
}

int cmd_train_vdit(const Config& cfg, const std::string& data_dir, const std::string& out, const std::string& vae,
                   const std::string& vqvae, const std::string& resume) {
  if (vae.empty()) throw UsageError("train-vdit needs the train-vae checkpoint (--vae)");
  if (vqvae.empty()) throw UsageError("train-vdit needs the train-vqvae checkpoint (--vqvae)");
  auto ds = data::open_dataset(data_dir);
  const auto tc = train::train_config_from(cfg, train::Stage::vdit_pretrain);
  train::train_vdit(cfg, ds, {checkpoint_dir(vae), checkpoint_dir(vqvae), {}}, train::MaskMode::none,
                    train_options(out, resume, "vdit", tc.epochs));
  return kExitOk;
}

int cmd_finetune(const Config& cfg, const std::string& data_dir, const std::string& out, const std::string& init,
                 const std::string& resume) {
  if (init.empty()) throw UsageError("finetune-ar needs a pre-trained model from train-vdit (--init)");
  auto ds = data::open_dataset(data_dir);
  const auto tc = train::train_config_from(cfg, train::Stage::vdit_finetune);
  train::train_vdit(cfg, ds, {{}, {}, checkpoint_dir(init)}, train::MaskMode::ar,
                    train_options(out, resume, "finetune", tc.epochs));
  return kExitOk;
}

int cmd_sample(Config cfg, const std::string& ckpt, int n, std::uint64_t seed, const std::string& out) {
  if (n < 1) throw UsageError("--n must be at least 1");
  train::Bundle b = train::load_bundle(checkpoint_dir(ckpt));
  const auto sched = train::schedule_from(b.config);
  const auto codec = b.codec();
  const int f = b.vae.spec().factor();
  const Shape shape{1, b.clip_frames, codec.channels(), b.config.i32("data.height") / f,
                    b.config.i32("data.width") / f};
  fs::create_directories(out);
  const CounterRng base(seed, kSampleStream);
  for (int i = 0; i < n; ++i) {
    Tensor noise(shape);
    CounterRng rng = base.fork(static_cast<std::uint64_t>(i));
    rng.fill_normal(noise);
    Tensor z = diffusion::sample(train::velocity_fn(b.model), noise, sched);
    z.reshape({shape[1], shape[2], shape[3], shape[4]});
    auto [sat, dp] = codec.decode(b.scaler.invert(z));
    save_case(out, i, sat, dp, b.sat_norm, b.dp_norm);
  }
  save_norm(out, b.sat_norm, b.dp_norm);
  cfg.set("seed", std::to_string(seed));
  write_text(fs::path(out) / "config.txt", cfg.to_text());
  std::printf("wrote %d clips of %d frames to %s\n", n, b.clip_frames, out.c_str());
  return kExitOk;
}

std::vector<int> select_cases(const data::Dataset& ds, const std::string& which) {
  if (which == "test") return ds.split.test_ids;
  if (which == "val") return ds.split.val_ids;
  if (which == "train") return ds.split.train_ids;
  if (which == "all") return ds.all_ids();
  std::vector<int> ids;
  std::stringstream ss(which);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      ids.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw UsageError("--cases expects test, val, train, all or a comma-separated id list");
    }
    if (ids.back() < 0 || ids.back() >= ds.n_cases) throw UsageError("case " + item + " is not in the dataset");
  }
  return ids;
}

int cmd_rollout(Config cfg, const std::string& ckpt, const std::string& context, const std::string& plan_text,
                std::uint64_t seed, const std::string& out, const std::string& which) {
  train::Bundle b = train::load_bundle(checkpoint_dir(ckpt));
  const auto plan = parse_plan(plan_text, b.config);
  if (plan.window() > b.model.config().max_frames)
    throw UsageError("rollout window of " + std::to_string(plan.window()) + " frames exceeds the model's " +
                     std::to_string(b.model.config().max_frames) + "-frame horizon");
  auto ds = data::open_dataset(context);
  const auto sched = train::schedule_from(b.config);
  const auto codec = b.codec();
  const auto ids = select_cases(ds, which);
  fs::create_directories(out);
  for (int id : ids) {
    Tensor sat = ds.load(id, data::FieldKind::saturation), dp = ds.load(id, data::FieldKind::pressure);
    if (sat.dim(0) < plan.context_frames)
      throw std::invalid_argument("case " + std::to_string(id) + " has " + std::to_string(sat.dim(0)) +
                                  " frames, the context needs " + std::to_string(plan.context_frames));
    Tensor z = b.scaler.apply(codec.encode(sat.slice0(0, plan.context_frames), dp.slice0(0, plan.context_frames)));
    auto r = diffusion::autoregressive_rollout(train::velocity_fn(b.model), z, plan, sched, seed,
                                               static_cast<std::uint64_t>(id));
    auto [psat, pdp] = codec.decode(b.scaler.invert(r.clip));
    save_case(out, id, psat, pdp, ds.sat_norm, ds.dp_norm);
    std::printf("case %d: %d frames\n", id, plan.total_frames());
    std::fflush(stdout);
  }
  save_norm(out, ds.sat_norm, ds.dp_norm);
  set_plan(cfg, plan);
  cfg.set("seed", std::to_string(seed));
  write_text(fs::path(out) / "config.txt", cfg.to_text());
  return kExitOk;
}

struct LoadedPair {
  std::vector<int> ids;
  std::vector<metrics::ClipFields> pred, truth;
};

LoadedPair load_pair(const std::string& pred_dir, const std::string& truth_dir) {
  auto ds = data::open_dataset(truth_dir);
  LoadedPair lp;
  lp.ids = case_ids(pred_dir);
  if (lp.ids.empty()) throw std::runtime_error("no predicted clips in " + pred_dir);
  const auto truth_ids = case_ids(truth_dir);
  std::vector<int> missing;
  for (int id : lp.ids)
    if (!std::binary_search(truth_ids.begin(), truth_ids.end(), id)) missing.push_back(id);
  if (!missing.empty())
    throw std::runtime_error("ground truth lacks cases present in the predictions: " + id_list(missing));
  for (int id : lp.ids) {
    auto load = [&](const std::string& dir, data::FieldKind k) {
      return data::normalize(lvgf::load_tensor(fs::path(dir) / data::case_file(id, k)), ds.norm(k));
    };
    lp.pred.push_back({load(pred_dir, data::FieldKind::saturation), load(pred_dir, data::FieldKind::pressure)});
    lp.truth.push_back({load(truth_dir, data::FieldKind::saturation), load(truth_dir, data::FieldKind::pressure)});
  }
  return lp;
}

int cmd_eval(Config cfg, const std::string& pred, const std::string& truth, const std::string& plan_text,
             const std::string& out) {
  const auto plan = parse_plan(plan_text, cfg);
  auto lp = load_pair(pred, truth);
  auto rep = metrics::evaluate_rollout(lp.pred, lp.truth, plan, cfg.str("eval.method"));
  fs::create_directories(out);
  write_text(fs::path(out) / "metrics.csv", rep.to_csv());
  write_text(fs::path(out) / "summary.txt", rep.summary());
  set_plan(cfg, plan);
  write_text(fs::path(out) / "config.txt", cfg.to_text());
  std::fputs(rep.summary().c_str(), stdout);
  return kExitOk;
}

image::Gray strip_for(const Tensor& pred, const Tensor& truth, const diffusion::RolloutPlan& plan, float lo, float hi) {
  const int H = static_cast<int>(pred.dim(2)), W = static_cast<int>(pred.dim(3));
  const std::size_t per = static_cast<std::size_t>(H * W);
  std::vector<image::Gray> prow, trow, erow;
  std::vector<float> err(per);
  for (int f = plan.context_frames; f < plan.total_frames(); ++f) {
    const float* p = pred.data() + static_cast<std::size_t>(f) * per;
    const float* t = truth.data() + static_cast<std::size_t>(f) * per;
    for (std::size_t i = 0; i < per; ++i) err[i] = std::abs(p[i] - t[i]);
    prow.push_back(image::to_gray(p, H, W, lo, hi));
    trow.push_back(image::to_gray(t, H, W, lo, hi));
    erow.push_back(image::to_gray(err.data(), H, W, 0.0f, hi - lo));
  }
  return image::stack_rows({image::stack_cols(prow), image::stack_cols(trow), image::stack_cols(erow)}, 2);
}

int cmd_report(Config cfg, const std::string& in, const std::string& out, const std::string& pred,
               const std::string& truth, const std::string& plan_text) {
  fs::path csv(in);
  if (fs::is_directory(csv)) csv /= "metrics.csv";
  auto rep = metrics::MetricReport::from_csv(read_text(csv));
  fs::create_directories(out);
  write_text(fs::path(out) / "summary.txt", rep.summary());
  std::fputs(rep.summary().c_str(), stdout);
  if (!pred.empty() || !truth.empty()) {
    if (pred.empty() || truth.empty()) throw UsageError("image strips need both --pred and --truth");
    const auto plan = parse_plan(plan_text, cfg);
    set_plan(cfg, plan);
    auto lp = load_pair(pred, truth);
    fs::create_directories(fs::path(out) / "strips");
    char name[48];
    for (std::size_t i = 0; i < lp.ids.size(); ++i) {
      std::snprintf(name, sizeof name, "case_%04d_sat.pgm", lp.ids[i]);
      image::write_pgm(fs::path(out) / "strips" / name,
                       strip_for(lp.pred[i].saturation, lp.truth[i].saturation, plan, 0.0f, 1.0f));
      std::snprintf(name, sizeof name, "case_%04d_dp.pgm", lp.ids[i]);
      image::write_pgm(fs::path(out) / "strips" / name,
                       strip_for(lp.pred[i].pressure, lp.truth[i].pressure, plan, -1.0f, 1.0f));
    }
  }
  write_text(fs::path(out) / "config.txt", cfg.to_text());
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Latent video diffusion surrogate for CO2 plume saturation and pressure fields", "lavig"};
  app.require_subcommand(1);

  ConfigArgs common;
  std::string out, data_dir, resume, vae, vqvae, init, ckpt, context, plan, pred, truth, in, cases = "test";
  int n_cases = 0, n = 0;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic plume dataset");
  common.attach(gen);
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--n-cases", n_cases, "number of cases")->required();

  auto* tvae = app.add_subcommand("train-vae", "train the pressure VAE");
  auto* tvq = app.add_subcommand("train-vqvae", "train the saturation VQ-VAE");
  for (auto* sub : {tvae, tvq}) {
    common.attach(sub);
    sub->add_option("--data", data_dir, "dataset directory")->required();
    sub->add_option("--out", out, "output directory")->required();
    sub->add_option("--resume", resume, "continue from an interrupted run's checkpoint");
  }
  auto* tvdit = app.add_subcommand("train-vdit", "pre-train the video diffusion transformer");
  common.attach(tvdit);
  tvdit->add_option("--data", data_dir, "dataset directory")->required();
  tvdit->add_option("--out", out, "output directory")->required();
  tvdit->add_option("--vae", vae, "train-vae output");
  tvdit->add_option("--vqvae", vqvae, "train-vqvae output");
  tvdit->add_option("--resume", resume, "continue from an interrupted run's checkpoint");

  auto* ft = app.add_subcommand("finetune-ar", "masked autoregressive fine-tuning");
  common.attach(ft);
  ft->add_option("--data", data_dir, "dataset directory")->required();
  ft->add_option("--out", out, "output directory")->required();
  ft->add_option("--init", init, "train-vdit output");
  ft->add_option("--resume", resume, "continue from an interrupted run's checkpoint");

  auto* smp = app.add_subcommand("sample", "unconditional clip generation");
  common.attach(smp);
  smp->add_option("--ckpt", ckpt, "train-vdit or finetune-ar output")->required();
  smp->add_option("--n", n, "number of clips")->required();
  smp->add_option("--seed", seed, "noise seed");
  smp->add_option("--out", out, "output directory")->required();

  auto* roll = app.add_subcommand("rollout", "conditional sliding-window generation");
  common.attach(roll);
  roll->add_option("--ckpt", ckpt, "finetune-ar output")->required();
  roll->add_option("--context", context, "dataset supplying the context frames")->required();
  roll->add_option("--plan", plan, "F_c,F_p,steps (default from the model's config)");
  roll->add_option("--cases", cases, "test (default), val, train, all, or comma-separated ids");
  roll->add_option("--seed", seed, "noise seed");
  roll->add_option("--out", out, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "per-stage metrics of rollouts against ground truth");
  common.attach(ev);
  ev->add_option("--pred", pred, "rollout output")->required();
  ev->add_option("--truth", truth, "dataset with the true clips")->required();
  ev->add_option("--plan", plan, "F_c,F_p,steps (default from config)");
  ev->add_option("--out", out, "output directory")->required();

  auto* rep = app.add_subcommand("report", "summary table and image strips");
  common.attach(rep);
  rep->add_option("--in", in, "metrics.csv or an eval output directory")->required();
  rep->add_option("--out", out, "output directory")->required();
  rep->add_option("--pred", pred, "rollout output, for image strips");
  rep->add_option("--truth", truth, "dataset with the true clips, for image strips");
  rep->add_option("--plan", plan, "F_c,F_p,steps (default from config)");

  std::vector<const char*> argv{"lavig"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const Config cfg = common.resolve();
    if (gen->parsed()) return cmd_gen_data(cfg, out, n_cases);
    if (tvae->parsed()) return cmd_train_ae(cfg, train::Stage::vae, data_dir, out, resume);
    if (tvq->parsed()) return cmd_train_ae(cfg, train::Stage::vqvae, data_dir, out, resume);
    if (tvdit->parsed()) return cmd_train_vdit(cfg, data_dir, out, vae, vqvae, resume);
    if (ft->parsed()) return cmd_finetune(cfg, data_dir, out, init, resume);
    if (smp->parsed()) return cmd_sample(cfg, ckpt, n, seed, out);
    if (roll->parsed()) return cmd_rollout(cfg, ckpt, context, plan, seed, out, cases);
    if (ev->parsed()) return cmd_eval(cfg, pred, truth, plan, out);
    if (rep->parsed()) return cmd_report(cfg, in, out, pred, truth, plan);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "lavig: %s\n", e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "lavig: configuration error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "lavig: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "lavig: error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}

}  // namespace lavig::cli
