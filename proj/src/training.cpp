#include "lavig/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lavig/checkpoint.hpp"
#include "lavig/ops.hpp"
#include "lavig/optim.hpp"

namespace lavig::train {

namespace {

constexpr std::uint64_t kShuffleStream = 0x73687566ull;
constexpr std::uint64_t kStepStream = 0x73746570ull;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
  if (!f) throw std::runtime_error("write failed: " + p.string());
}

std::vector<int> shuffled(int n, const CounterRng& base, int epoch) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  CounterRng rng = base.fork(static_cast<std::uint64_t>(epoch));
  for (int i = n - 1; i > 0; --i)
    std::swap(idx[static_cast<std::size_t>(i)], idx[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  return idx;
}

/// Rows `items` of a [N, ...] tensor stacked into [B, ...].
Tensor gather_rows(const Tensor& all, const std::vector<int>& items) {
  Shape s = all.shape();
  const std::size_t per = all.size() / static_cast<std::size_t>(s[0]);
  s[0] = static_cast<std::int64_t>(items.size());
  Tensor out(s);
  for (std::size_t b = 0; b < items.size(); ++b)
    std::memcpy(out.data() + b * per, all.data() + static_cast<std::size_t>(items[b]) * per, per * sizeof(float));
  return out;
}

std::string join_floats(const std::vector<float>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

std::vector<float> parse_floats(const std::string& s) {
  std::vector<float> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stof(item));
  return out;
}

struct StepOut {
  ag::Var loss;
  std::vector<double> components;
};

using StepFn = std::function<StepOut(ag::Graph&, const std::vector<int>& items, CounterRng& rng)>;

struct LoopSpec {
  const TrainConfig* tc;
  nn::ParamStore* params;
  int n_items;
  std::vector<std::string> component_names;
  StepFn step;
  std::string config_text;
  ckpt::State extra_state;
  std::function<void(const fs::path&)> after_save;  // writes companion files into the checkpoint
};

optim::AdamConfig adam_config(const TrainConfig& tc) {
  optim::AdamConfig a;
  a.lr = static_cast<float>(tc.lr);
  a.beta1 = static_cast<float>(tc.beta1);
  a.beta2 = static_cast<float>(tc.beta2);
  a.weight_decay = tc.optimizer == "adamw" ? static_cast<float>(tc.weight_decay) : 0.0f;
  return a;
}

TrainLog run_loop(const LoopSpec& spec, const TrainOptions& opts) {
  const TrainConfig& tc = *spec.tc;
  optim::Adam opt(*spec.params, adam_config(tc));
  TrainLog log{spec.component_names, {}};
  int start_epoch = 0;
  if (!opts.resume_dir.empty()) {
    auto st = ckpt::read_state(opts.resume_dir);
    if (st.count("stage") == 0 || st.at("stage") != stage_name(tc.stage))
      throw TrainingError("resume checkpoint " + opts.resume_dir.string() + " is not a " + stage_name(tc.stage) +
                          " checkpoint");
    ckpt::load(opts.resume_dir, *spec.params, &opt);
    start_epoch = std::stoi(st.at("epoch"));
    opt.set_steps_taken(std::stoll(st.at("optim.steps")));
    log = TrainLog::from_csv(read_file(opts.resume_dir / "train_log.csv"));
  }

  const CounterRng shuffle_base(tc.seed, kShuffleStream);
  const CounterRng step_base(tc.seed, kStepStream);
  const int last = opts.stop_after_epoch > 0 ? std::min(tc.epochs, opts.stop_after_epoch) : tc.epochs;
  for (int epoch = start_epoch; epoch < last; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = shuffled(spec.n_items, shuffle_base, epoch);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.components.assign(spec.component_names.size(), 0.0);
    for (int start = 0, batch = 0; start < spec.n_items; start += tc.batch_size, ++batch) {
      const int end = std::min(spec.n_items, start + tc.batch_size);
      std::vector<int> items(order.begin() + start, order.begin() + end);
      CounterRng rng = step_base.fork(static_cast<std::uint64_t>(opt.steps_taken()));
      spec.params->zero_grad();
      ag::Graph g;
      StepOut out = spec.step(g, items, rng);
      const double loss = out.loss.value()[0];
      if (!std::isfinite(loss))
        throw TrainingError(std::string(stage_name(tc.stage)) + ": non-finite loss at epoch " +
                            std::to_string(epoch + 1) + ", batch " + std::to_string(batch + 1));
      g.backward(out.loss);
      optim::clip_grad_norm(*spec.params, tc.grad_clip);
      opt.step();
      const double w = static_cast<double>(items.size()) / spec.n_items;
      rec.loss += w * loss;
      for (std::size_t c = 0; c < out.components.size(); ++c) rec.components[c] += w * out.components[c];
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.records.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);
  }

  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    const fs::path ck = opts.out_dir / "checkpoint";
    ckpt::State st = spec.extra_state;
    st["stage"] = stage_name(tc.stage);
    st["epoch"] = std::to_string(last);
    st["epochs_planned"] = std::to_string(tc.epochs);
    st["seed"] = std::to_string(tc.seed);
    ckpt::save(ck, *spec.params, &opt, st, spec.config_text);
    log.write_csv(ck / "train_log.csv");
    if (spec.after_save) spec.after_save(ck);
    log.write_csv(opts.out_dir / "train_log.csv");
    log.write_timing(opts.out_dir / "timing.csv");
    write_file(opts.out_dir / "config.txt", spec.config_text);
  }
  return log;
}

/// Every frame of the given cases, [N * F, 1, H, W].
Tensor all_frames(const data::Dataset& ds, const std::vector<int>& ids, data::FieldKind kind) {
  std::vector<Tensor> clips;
  for (int id : ids) clips.push_back(ds.load(id, kind));
  return concat0(clips);
}

Config config_of(const fs::path& ckpt_dir) {
  Config c;
  c.merge_text(ckpt::read_config_text(ckpt_dir), (ckpt_dir / "config.txt").string());
  return c;
}

/// Re-saves an autoencoder checkpoint (parameters, state, config) under `dst`.
void copy_checkpoint(const fs::path& src, const nn::ParamStore& params, const fs::path& dst) {
  auto st = ckpt::read_state(src);
  st.erase("optim.steps");
  ckpt::save(dst, params, nullptr, st, ckpt::read_config_text(src));
}

void require_checkpoint(const fs::path& dir, const char* stage) {
  if (dir.empty() || !ckpt::exists(dir))
    throw std::invalid_argument(std::string("missing ") + stage + " checkpoint" +
                                (dir.empty() ? std::string() : ": " + dir.string()));
}

}  // namespace

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::vae: return "vae";
    case Stage::vqvae: return "vqvae";
    case Stage::vdit_pretrain: return "vdit_pretrain";
    case Stage::vdit_finetune: return "vdit_finetune";
  }
  return "?";
}

const char* stage_key(Stage s) {
  switch (s) {
    case Stage::vae: return "vae";
    case Stage::vqvae: return "vqvae";
    case Stage::vdit_pretrain: return "vdit";
    case Stage::vdit_finetune: return "finetune";
  }
  return "?";
}

void TrainConfig::validate() const {
  const std::string p = std::string("train.") + stage_key(stage) + ".";
  if (epochs < 1) throw ConfigError(p + "epochs must be >= 1");
  if (batch_size < 1) throw ConfigError(p + "batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError(p + "lr must be > 0");
  if (optimizer != "adam" && optimizer != "adamw") throw ConfigError(p + "optimizer must be adam or adamw");
  if (optimizer == "adam" && weight_decay != 0.0)
    throw ConfigError(p + "weight_decay needs optimizer=adamw (decay is decoupled)");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError(p + "betas must lie in [0, 1)");
  if (precision != "fp32") throw ConfigError(p + "precision must be fp32");
}

TrainConfig train_config_from(const Config& cfg, Stage stage) {
  const std::string p = std::string("train.") + stage_key(stage) + ".";
  TrainConfig tc;
  tc.stage = stage;
  tc.epochs = cfg.i32(p + "epochs");
  tc.batch_size = cfg.i32(p + "batch_size");
  tc.lr = cfg.f64(p + "lr");
  tc.optimizer = cfg.str(p + "optimizer");
  tc.beta1 = cfg.f64(p + "beta1");
  tc.beta2 = cfg.f64(p + "beta2");
  tc.weight_decay = cfg.f64(p + "weight_decay");
  tc.grad_clip = cfg.f64(p + "grad_clip");
  tc.precision = cfg.str(p + "precision");
  tc.seed = static_cast<std::uint64_t>(cfg.i64("seed"));
  tc.validate();
  return tc;
}

// ---- TrainLog -----------------------------------------------------------------

std::string TrainLog::to_csv() const {
  std::string out = "epoch,loss";
  for (const auto& n : component_names) out += "," + n;
  out += "\n";
  for (const auto& r : records) {
    out += std::to_string(r.epoch) + "," + fmt(r.loss);
    for (double c : r.components) out += "," + fmt(c);
    out += "\n";
  }
  return out;
}

TrainLog TrainLog::from_csv(const std::string& text) {
  TrainLog log;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("epoch,loss", 0) != 0) throw std::runtime_error("not a training log");
  {
    std::stringstream hs(line.substr(10));
    std::string name;
    while (std::getline(hs, name, ','))
      if (!name.empty()) log.component_names.push_back(name);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    EpochRecord r;
    std::getline(ls, cell, ',');
    r.epoch = std::stoi(cell);
    std::getline(ls, cell, ',');
    r.loss = std::stod(cell);
    while (std::getline(ls, cell, ',')) r.components.push_back(std::stod(cell));
    if (r.components.size() != log.component_names.size())
      throw std::runtime_error("training log row has " + std::to_string(r.components.size()) + " components, expected " +
                               std::to_string(log.component_names.size()));
    log.records.push_back(r);
  }
  return log;
}

void TrainLog::write_csv(const fs::path& path) const { write_file(path, to_csv()); }

void TrainLog::write_timing(const fs::path& path) const {
  std::string out = "epoch,seconds\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%d,%.3f\n", r.epoch, r.seconds);
    out += buf;
  }
  write_file(path, out);
}

// ---- Stage I ----------------------------------------------------------------

TrainLog train_autoencoder(const Config& cfg, const data::Dataset& ds, Stage stage, const TrainOptions& opts) {
  if (stage != Stage::vae && stage != Stage::vqvae) throw std::invalid_argument("not an autoencoder stage");
  const TrainConfig tc = train_config_from(cfg, stage);
  const bool is_vae = stage == Stage::vae;
  const Tensor frames =
      all_frames(ds, ds.split.train_ids, is_vae ? data::FieldKind::pressure : data::FieldKind::saturation);
  const ae::ConvStackSpec spec = ae::conv_stack_from_config(cfg, is_vae ? "vae" : "vqvae");
  spec.check_input(frames.dim(2), frames.dim(3));

  LoopSpec ls;
  ls.tc = &tc;
  ls.n_items = static_cast<int>(frames.dim(0));
  ls.config_text = cfg.to_text();
  ls.extra_state["field"] = is_vae ? "pressure" : "saturation";

  if (is_vae) {
    ae::Vae vae = ae::make_vae(cfg);
    const double beta = cfg.f64("vae.beta");
    const std::int64_t f = spec.factor(), C = vae.latent_channels();
    ls.params = &vae.params();
    ls.component_names = {"recon", "kl", "beta_kl"};
    ls.step = [&](ag::Graph& g, const std::vector<int>& items, CounterRng& rng) {
      Tensor x = gather_rows(frames, items);
      Tensor eps({x.dim(0), C, x.dim(2) / f, x.dim(3) / f});
      rng.fill_normal(eps);
      auto s = ae::vae_forward(g, vae, x, eps, beta);
      return StepOut{s.total, {s.report.recon, s.report.kl_or_codebook, beta * s.report.kl_or_codebook}};
    };
    return run_loop(ls, opts);
  }
  ae::VqVae vq = ae::make_vqvae(cfg);
  const double beta = cfg.f64("vqvae.beta");
  ls.params = &vq.params();
  ls.component_names = {"recon", "codebook", "commit"};
  ls.step = [&](ag::Graph& g, const std::vector<int>& items, CounterRng&) {
    auto s = ae::vqvae_forward(g, vq, gather_rows(frames, items), beta);
    return StepOut{s.total, {s.report.recon, s.report.kl_or_codebook, s.report.commit}};
  };
  return run_loop(ls, opts);
}

ae::Vae load_vae(const fs::path& ckpt_dir) {
  require_checkpoint(ckpt_dir, "train-vae");
  ae::Vae vae = ae::make_vae(config_of(ckpt_dir));
  ckpt::load(ckpt_dir, vae.params(), nullptr);
  return vae;
}

ae::VqVae load_vqvae(const fs::path& ckpt_dir) {
  require_checkpoint(ckpt_dir, "train-vqvae");
  ae::VqVae vq = ae::make_vqvae(config_of(ckpt_dir));
  ckpt::load(ckpt_dir, vq.params(), nullptr);
  return vq;
}

// ---- latents ------------------------------------------------------------------

LatentScaler LatentScaler::fit(const std::vector<Tensor>& clips) {
  if (clips.empty()) throw std::invalid_argument("no latent clips to fit a scaler on");
  const Shape& s = clips.front().shape();
  const int r = static_cast<int>(s.size());
  const std::int64_t C = s[static_cast<std::size_t>(r - 3)], hw = s[static_cast<std::size_t>(r - 2)] * s.back();
  std::vector<double> sum(static_cast<std::size_t>(C)), sq(static_cast<std::size_t>(C));
  double count = 0.0;
  for (const auto& clip : clips) {
    const std::size_t frames = clip.size() / static_cast<std::size_t>(C * hw);
    for (std::size_t f = 0; f < frames; ++f)
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t i = 0; i < hw; ++i) {
          const double v = clip[(f * static_cast<std::size_t>(C) + static_cast<std::size_t>(c)) *
                                    static_cast<std::size_t>(hw) + static_cast<std::size_t>(i)];
          sum[static_cast<std::size_t>(c)] += v;
          sq[static_cast<std::size_t>(c)] += v * v;
        }
    count += static_cast<double>(frames * static_cast<std::size_t>(hw));
  }
  LatentScaler sc;
  for (std::size_t c = 0; c < static_cast<std::size_t>(C); ++c) {
    const double m = sum[c] / count;
    const double var = std::max(0.0, sq[c] / count - m * m);
    sc.mean.push_back(static_cast<float>(m));
    sc.stddev.push_back(static_cast<float>(std::max(std::sqrt(var), 1e-6)));
  }
  return sc;
}

Tensor LatentScaler::apply(const Tensor& clip) const {
  const std::size_t C = mean.size();
  const Shape& s = clip.shape();
  if (s.size() < 3 || static_cast<std::size_t>(s[s.size() - 3]) != C)
    throw ShapeError("latent scaler has " + std::to_string(C) + " channels, clip is " + shape_str(s));
  const std::size_t hw = static_cast<std::size_t>(s[s.size() - 2] * s.back());
  Tensor out(s);
  for (std::size_t i = 0; i < clip.size(); ++i) {
    const std::size_t c = (i / hw) % C;
    out[i] = (clip[i] - mean[c]) / stddev[c];
  }
  return out;
}

Tensor LatentScaler::invert(const Tensor& clip) const {
  const std::size_t C = mean.size();
  const Shape& s = clip.shape();
  if (s.size() < 3 || static_cast<std::size_t>(s[s.size() - 3]) != C)
    throw ShapeError("latent scaler has " + std::to_string(C) + " channels, clip is " + shape_str(s));
  const std::size_t hw = static_cast<std::size_t>(s[s.size() - 2] * s.back());
  Tensor out(s);
  for (std::size_t i = 0; i < clip.size(); ++i) {
    const std::size_t c = (i / hw) % C;
    out[i] = clip[i] * stddev[c] + mean[c];
  }
  return out;
}

Tensor FrameCodec::encode(const Tensor& saturation, const Tensor& pressure) const {
  require_same_shape(saturation, pressure, "field clips");
  Tensor zg = vqvae->encode_quantized(saturation);
  Tensor zp = vae->encode_mean(pressure);
  if (zg.dim(0) != zp.dim(0) || zg.dim(2) != zp.dim(2) || zg.dim(3) != zp.dim(3))
    throw ShapeError("autoencoder latents disagree: " + shape_str(zg.shape()) + " vs " + shape_str(zp.shape()));
  const std::int64_t F = zg.dim(0), Cg = zg.dim(1), Cp = zp.dim(1);
  const std::size_t hw = static_cast<std::size_t>(zg.dim(2) * zg.dim(3));
  Tensor out({F, Cg + Cp, zg.dim(2), zg.dim(3)});
  for (std::int64_t f = 0; f < F; ++f) {
    float* dst = out.data() + static_cast<std::size_t>(f * (Cg + Cp)) * hw;
    std::memcpy(dst, zg.data() + static_cast<std::size_t>(f * Cg) * hw, static_cast<std::size_t>(Cg) * hw * sizeof(float));
    std::memcpy(dst + static_cast<std::size_t>(Cg) * hw, zp.data() + static_cast<std::size_t>(f * Cp) * hw,
                static_cast<std::size_t>(Cp) * hw * sizeof(float));
  }
  return out;
}

std::pair<Tensor, Tensor> FrameCodec::decode(const Tensor& latent) const {
  const std::int64_t Cg = gas_channels(), Cp = pressure_channels();
  if (latent.rank() != 4 || latent.dim(1) != Cg + Cp)
    throw ShapeError("latent clip must be [F, " + std::to_string(Cg + Cp) + ", h, w], got " +
                     shape_str(latent.shape()));
  const std::int64_t F = latent.dim(0);
  const std::size_t hw = static_cast<std::size_t>(latent.dim(2) * latent.dim(3));
  Tensor zg({F, Cg, latent.dim(2), latent.dim(3)}), zp({F, Cp, latent.dim(2), latent.dim(3)});
  for (std::int64_t f = 0; f < F; ++f) {
    const float* src = latent.data() + static_cast<std::size_t>(f * (Cg + Cp)) * hw;
    std::memcpy(zg.data() + static_cast<std::size_t>(f * Cg) * hw, src, static_cast<std::size_t>(Cg) * hw * sizeof(float));
    std::memcpy(zp.data() + static_cast<std::size_t>(f * Cp) * hw, src + static_cast<std::size_t>(Cg) * hw,
                static_cast<std::size_t>(Cp) * hw * sizeof(float));
  }
  // Generated saturation latents are snapped to the codebook, as the decoder was trained on.
  Tensor sat = vqvae->decode(ae::quantize(zg, vqvae->codebook()).z_q);
  Tensor dp = vae->decode(zp);
  for (auto& v : sat.values()) v = std::clamp(v, 0.0f, 1.0f);
  for (auto& v : dp.values()) v = std::clamp(v, -1.0f, 1.0f);
  return {std::move(sat), std::move(dp)};
}

std::vector<Tensor> encode_dataset(const FrameCodec& codec, const std::vector<int>& ids) {
  std::vector<Tensor> out;
  for (int id : ids)
    out.push_back(codec.encode(codec.ds->load(id, data::FieldKind::saturation), codec.ds->load(id, data::FieldKind::pressure)));
  return out;
}

// ---- Stages II and III --------------------------------------------------------

diffusion::Schedule schedule_from(const Config& cfg) {
  diffusion::Schedule s;
  s.T = cfg.f64("diffusion.T");
  s.n_sample_steps = cfg.i32("diffusion.sample_steps");
  s.validate();
  return s;
}

diffusion::VelocityFn velocity_fn(const vdit::VDiT& model) {
  return [&model](const Tensor& z, const std::vector<float>& t) { return model.forward(z, t); };
}

Bundle load_bundle(const fs::path& ckpt_dir) {
  require_checkpoint(ckpt_dir, "train-vdit");
  Config cfg = config_of(ckpt_dir);
  const auto st = ckpt::read_state(ckpt_dir);
  ae::Vae vae = load_vae(ckpt_dir / "vae");
  ae::VqVae vq = load_vqvae(ckpt_dir / "vqvae");
  const int clip_frames = std::stoi(st.at("latent.clip_frames"));
  const int f = vae.spec().factor();
  auto vcfg = vdit::vdit_config_from(cfg, vq.latent_channels() + vae.latent_channels(), cfg.i32("data.height") / f,
                                     cfg.i32("data.width") / f, clip_frames);
  vdit::VDiT model(vcfg, static_cast<std::uint64_t>(cfg.i64("seed")));
  ckpt::load(ckpt_dir, model.params(), nullptr);
  LatentScaler sc{parse_floats(st.at("latent.mean")), parse_floats(st.at("latent.std"))};
  const auto sat = parse_floats(st.at("norm.saturation")), dp = parse_floats(st.at("norm.pressure"));
  return Bundle{std::move(cfg),
                std::move(vae),
                std::move(vq),
                std::move(model),
                std::move(sc),
                clip_frames,
                {sat.at(0), sat.at(1), data::NormKind::minmax01},
                {dp.at(0), dp.at(1), data::NormKind::minmax_sym}};
}

TrainLog train_vdit(const Config& cfg, const data::Dataset& ds, const AeSources& src, MaskMode mode,
                    const TrainOptions& opts) {
  const Stage stage = mode == MaskMode::ar ? Stage::vdit_finetune : Stage::vdit_pretrain;
  const TrainConfig tc = train_config_from(cfg, stage);

  fs::path vae_dir = src.vae_dir, vq_dir = src.vqvae_dir;
  Config arch = cfg;
  if (mode == MaskMode::ar) {
    require_checkpoint(src.init_dir, "train-vdit");
    vae_dir = src.init_dir / "vae";
    vq_dir = src.init_dir / "vqvae";
    // Architecture follows the pre-trained model; optimization settings come from cfg.
    arch = config_of(src.init_dir);
  }
  ae::Vae vae = load_vae(vae_dir);
  ae::VqVae vq = load_vqvae(vq_dir);
  const auto vae_print = vae.params().fingerprint(), vq_print = vq.params().fingerprint();

  FrameCodec codec{&vae, &vq, &ds};
  std::vector<Tensor> raw = encode_dataset(codec, ds.split.train_ids);
  if (raw.empty()) throw std::invalid_argument("training split is empty");
  const Shape clip_shape = raw.front().shape();  // [F, C, h, w]
  const int F = static_cast<int>(clip_shape[0]);

  LatentScaler scaler;
  if (mode == MaskMode::ar) {
    const auto st = ckpt::read_state(src.init_dir);
    scaler = LatentScaler{parse_floats(st.at("latent.mean")), parse_floats(st.at("latent.std"))};
    if (std::stoi(st.at("latent.clip_frames")) != F)
      throw ConfigError("pre-trained model expects " + st.at("latent.clip_frames") + "-frame clips, data has " +
                        std::to_string(F));
  } else {
    scaler = LatentScaler::fit(raw);
  }
  std::vector<Tensor> scaled;
  for (const auto& c : raw) scaled.push_back(scaler.apply(c));
  const Tensor latents = stack0(scaled);  // [N, F, C, h, w]

  auto vcfg = vdit::vdit_config_from(arch, static_cast<int>(clip_shape[1]), static_cast<int>(clip_shape[2]),
                                     static_cast<int>(clip_shape[3]), F);
  vdit::VDiT model(vcfg, static_cast<std::uint64_t>(arch.i64("seed")));
  if (mode == MaskMode::ar && opts.resume_dir.empty()) ckpt::load(src.init_dir, model.params(), nullptr);

  int context = 0;
  if (mode == MaskMode::ar) {
    context = cfg.i32("rollout.context_frames");
    if (context < 1 || context >= F)
      throw ConfigError("rollout.context_frames must be in [1, " + std::to_string(F - 1) + "] for " +
                        std::to_string(F) + "-frame clips");
  }
  const diffusion::Schedule sched = schedule_from(arch);

  // The stored config mixes the architecture of the model with this run's settings.
  Config stored = cfg;
  for (const auto& [k, v] : arch.entries())
    if (k.rfind("vdit.", 0) == 0 || k.rfind("diffusion.", 0) == 0 || k.rfind("data.", 0) == 0 ||
        k.rfind("vae.", 0) == 0 || k.rfind("vqvae.", 0) == 0)
      stored.set(k, v);
  stored.set("seed", arch.str("seed"));

  LoopSpec ls;
  ls.tc = &tc;
  ls.params = &model.params();
  ls.n_items = static_cast<int>(latents.dim(0));
  ls.component_names = {"rf"};
  ls.config_text = stored.to_text();
  ls.extra_state["latent.mean"] = join_floats(scaler.mean);
  ls.extra_state["latent.std"] = join_floats(scaler.stddev);
  ls.extra_state["latent.clip_frames"] = std::to_string(F);
  ls.extra_state["latent.gas_channels"] = std::to_string(vq.latent_channels());
  ls.extra_state["latent.pressure_channels"] = std::to_string(vae.latent_channels());
  ls.extra_state["mask.context_frames"] = std::to_string(context);
  ls.extra_state["norm.saturation"] =
      join_floats({static_cast<float>(ds.sat_norm.min), static_cast<float>(ds.sat_norm.max)});
  ls.extra_state["norm.pressure"] = join_floats({static_cast<float>(ds.dp_norm.min), static_cast<float>(ds.dp_norm.max)});
  ls.after_save = [&](const fs::path& ck) {
    copy_checkpoint(vae_dir, vae.params(), ck / "vae");
    copy_checkpoint(vq_dir, vq.params(), ck / "vqvae");
  };
  ls.step = [&](ag::Graph& g, const std::vector<int>& items, CounterRng& rng) {
    Tensor z0 = gather_rows(latents, items);
    std::vector<float> t(items.size());
    for (auto& v : t) v = static_cast<float>(sched.T * rng.uniform());
    Tensor eps(z0.shape());
    rng.fill_normal(eps);
    const std::int64_t B = z0.dim(0);
    if (mode == MaskMode::ar) {
      auto mask = diffusion::FrameMask::prefix(B, F, context);
      Tensor zt = diffusion::masked_train_step_inputs(z0, eps, t, mask, sched);
      ag::Var loss = diffusion::rf_loss_masked(model.forward(g, g.constant(zt), t), z0, eps, mask);
      return StepOut{loss, {loss.value()[0]}};
    }
    Tensor zt = diffusion::corrupt(z0, eps, t, sched);
    ag::Var loss = diffusion::rf_loss(model.forward(g, g.constant(zt), t), z0, eps);
    return StepOut{loss, {loss.value()[0]}};
  };
  TrainLog log = run_loop(ls, opts);
  if (vae.params().fingerprint() != vae_print || vq.params().fingerprint() != vq_print)
    throw TrainingError("autoencoder parameters changed during transformer training");
  return log;
}

}  // namespace lavig::train
