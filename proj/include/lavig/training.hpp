#pragma once

// Optimization loops for the autoencoders, transformer pre-training and masked
// autoregressive fine-tuning, with resumable checkpoints and CSV training logs.
//
// Every random draw is keyed by (seed, epoch) for shuffling and (seed, global
// step) for noise, so a run resumed from a checkpoint continues exactly where
// an uninterrupted run would be.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lavig/autoencoders.hpp"
#include "lavig/config.hpp"
#include "lavig/data.hpp"
#include "lavig/diffusion.hpp"
#include "lavig/vdit.hpp"

namespace lavig::train {

namespace fs = std::filesystem;

enum class Stage { vae, vqvae, vdit_pretrain, vdit_finetune };
const char* stage_name(Stage s);
/// Config section: train.<key>.*
const char* stage_key(Stage s);

struct TrainConfig {
  Stage stage = Stage::vae;
  int epochs = 1;
  int batch_size = 1;
  double lr = 1e-4;
  std::string optimizer = "adam";  // adam | adamw
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double grad_clip = 0.0;  // <= 0 disables clipping
  std::uint64_t seed = 7;
  std::string precision = "fp32";

  void validate() const;
};

TrainConfig train_config_from(const Config& cfg, Stage stage);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double loss = 0.0;
  std::vector<double> components;
  double seconds = 0.0;
};

/// Per-epoch sample-weighted means. The CSV omits wall time so that reruns are
/// byte-identical; timings go to a separate file.
struct TrainLog {
  std::vector<std::string> component_names;
  std::vector<EpochRecord> records;

  std::string to_csv() const;
  static TrainLog from_csv(const std::string& text);
  void write_csv(const fs::path& path) const;
  void write_timing(const fs::path& path) const;
};

struct TrainOptions {
  fs::path out_dir;     // checkpoint/ train_log.csv timing.csv config.txt
  fs::path resume_dir;  // a checkpoint written by an earlier, interrupted run
  int stop_after_epoch = -1;  // end early after this many epochs (checkpoint is still written)
  std::function<void(const EpochRecord&)> on_epoch;
};

// ---- Stage I ----------------------------------------------------------------

/// Trains the VAE on normalized pressure frames (stage vae) or the VQ-VAE on
/// normalized saturation frames (stage vqvae) of the training split, treating
/// every frame of every clip as an independent sample.
TrainLog train_autoencoder(const Config& cfg, const data::Dataset& ds, Stage stage, const TrainOptions& opts);

ae::Vae load_vae(const fs::path& ckpt_dir);
ae::VqVae load_vqvae(const fs::path& ckpt_dir);

// ---- latents ------------------------------------------------------------------

/// Per-channel affine map that gives the training latents zero mean and unit
/// variance, so they match the scale of the Gaussian noise.
struct LatentScaler {
  std::vector<float> mean;
  std::vector<float> stddev;

  static LatentScaler fit(const std::vector<Tensor>& clips);
  /// Clips are [..., C, h, w].
  Tensor apply(const Tensor& clip) const;
  Tensor invert(const Tensor& clip) const;
};

struct FrameCodec {
  const ae::Vae* vae = nullptr;
  const ae::VqVae* vqvae = nullptr;
  const data::Dataset* ds = nullptr;

  int gas_channels() const { return vqvae->latent_channels(); }
  int pressure_channels() const { return vae->latent_channels(); }
  int channels() const { return gas_channels() + pressure_channels(); }

  /// Normalized frames [F, 1, H, W] of both fields -> latent clip [F, C_gas + C_p, h, w]
  /// (quantized VQ-VAE latent first, VAE mean second).
  Tensor encode(const Tensor& saturation, const Tensor& pressure) const;
  /// Latent clip -> normalized frames, saturation clamped to [0, 1] and pressure to [-1, 1].
  std::pair<Tensor, Tensor> decode(const Tensor& latent) const;
};

/// Raw (unscaled) latent clips of the given cases.
std::vector<Tensor> encode_dataset(const FrameCodec& codec, const std::vector<int>& ids);

// ---- Stages II and III --------------------------------------------------------

enum class MaskMode { none, ar };

/// Everything needed to sample: transformer, both autoencoders and the latent scaler.
struct Bundle {
  Config config;  // resolved configuration the transformer was built from
  ae::Vae vae;
  ae::VqVae vqvae;
  vdit::VDiT model;
  LatentScaler scaler;
  int clip_frames = 0;
  data::NormStats sat_norm;  // normalization of the training data, for unconditional samples
  data::NormStats dp_norm;

  FrameCodec codec() const { return FrameCodec{&vae, &vqvae, nullptr}; }
};

Bundle load_bundle(const fs::path& ckpt_dir);

struct AeSources {
  fs::path vae_dir;
  fs::path vqvae_dir;
  fs::path init_dir;  // pre-trained transformer checkpoint (ar mode)
};

/// Pre-training (mode none) draws t ~ U(0, T) and regresses z0 - eps on every
/// frame. Fine-tuning (mode ar) starts from `init_dir`, keeps the first
/// rollout.context_frames frames noise-free and scores only the rest. The
/// autoencoders are only used to encode latents and are never updated.
TrainLog train_vdit(const Config& cfg, const data::Dataset& ds, const AeSources& src, MaskMode mode,
                    const TrainOptions& opts);

diffusion::Schedule schedule_from(const Config& cfg);
diffusion::VelocityFn velocity_fn(const vdit::VDiT& model);

}  // namespace lavig::train
