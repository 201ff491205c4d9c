#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tscodec/data.hpp"
#include "tscodec/discriminators.hpp"
#include "tscodec/losses.hpp"
#include "tscodec/model.hpp"
#include "tscodec/rvq.hpp"

namespace tscodec::train {

struct AdamState {
  std::vector<float> m;
  std::vector<float> v;
  std::int64_t t = 0;
};

class Adam {
 public:
  Adam(double learning_rate, double beta1, double beta2, double epsilon = 1e-8);

  // params -= lr * mhat / (sqrt(vhat) + eps)
  void step(std::span<float> params, std::span<const float> grads, AdamState& state) const;

 private:
  double lr_, b1_, b2_, eps_;
};

struct StageOneConfig {
  int steps = 2000;
  int batch_size = 8;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  bool quantizer_dropout = true;
  // k-means initialisation uses at least init_factor * N encoded frames.
  int init_factor = 2;
  // Held-out examples scored before and after training (0 disables).
  int eval_examples = 8;
  data::NoiseMixSpec mix;
  losses::SpectralLossConfig spectral;

  void validate() const;
};

struct StageTwoConfig {
  int steps = 1000;
  int batch_size = 8;
  double generator_learning_rate = 1e-4;
  double discriminator_learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  bool quantizer_dropout = true;
  // Start G_p from a copy of G_d instead of a fresh initialisation.
  bool warm_start = false;
  losses::LossWeights weights;
  data::NoiseMixSpec mix;
  losses::SpectralLossConfig spectral;

  void validate() const;
};

struct Checkpoint {
  int stage = 1;
  std::int64_t step = 0;
  model::ModelConfig model;
  rvq::QuantizerConfig quantizer;
  disc::DiscriminatorSetConfig discriminators;
  StageOneConfig stage1;
  StageTwoConfig stage2;

  std::vector<float> encoder;
  std::vector<float> decoder_d;
  // Stage 2 only.
  std::vector<float> decoder_p;
  std::vector<float> disc_params;
  rvq::Codebook codebook;

  AdamState encoder_opt;
  AdamState decoder_d_opt;
  AdamState decoder_p_opt;
  AdamState disc_opt;

  bool has_perceptual_decoder() const { return !decoder_p.empty(); }
  model::ParameterDigest encoder_digest() const { return model::parameter_digest(encoder); }
  model::ParameterDigest codebook_digest() const { return codebook.digest(); }
  // Checks array sizes against the configs.
  void validate() const;
};

// Binary layout: magic, format version, JSON config snapshot, named float32
// sections each followed by its digest, and a digest of the whole file.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// JSON snapshot of every config in the checkpoint (no parameters).
std::string config_snapshot(const Checkpoint& ckpt);

struct StepLog {
  int stage = 1;
  int step = 0;
  int nq = 0;
  double l_dis = 0.0;
  double l_adv = 0.0;
  double l_feat = 0.0;
  // Weighted generator total (stage 2) or l_dis (stage 1).
  double total = 0.0;
  // Discriminator hinge loss (stage 2).
  double l_disc = 0.0;
  model::ParameterDigest encoder_digest = 0;
  model::ParameterDigest codebook_digest = 0;
};

using ProgressFn = std::function<void(const StepLog&)>;

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepLog> log;
  // Mean L_dis on held-out examples with all quantizers active.
  double eval_initial = 0.0;
  double eval_final = 0.0;
};

// Uniform over {1, ..., nq}.
int sample_active_quantizers(int nq, std::mt19937_64& rng);

TrainResult train_stage1(const std::vector<data::LoadedRecord>& corpus, const model::ModelConfig& model_cfg,
                         const rvq::QuantizerConfig& quant_cfg, const StageOneConfig& cfg,
                         const ProgressFn& progress = {});

TrainResult train_stage2(const Checkpoint& stage1, const std::vector<data::LoadedRecord>& corpus,
                         const disc::DiscriminatorSetConfig& disc_cfg, const StageTwoConfig& cfg,
                         const ProgressFn& progress = {});

// encode -> quantize(nq) -> decode with G_d (or G_p when perceptual).
signal::Waveform reconstruct(const Checkpoint& ckpt, const signal::Waveform& input, int nq,
                             bool perceptual);

// Mean multiscale spectral loss of the reconstruction against each target.
double mean_distortion(const Checkpoint& ckpt, const std::vector<data::Example>& examples, int nq,
                       bool perceptual, const losses::SpectralLossConfig& spectral);

// Batch `step` of a training stage; depends only on (corpus, seed, stage, step).
std::vector<data::Example> training_batch(const std::vector<data::LoadedRecord>& corpus,
                                          const data::NoiseMixSpec& mix, std::uint64_t seed, int stage,
                                          int step, int batch_size);

// Example stream used for held-out evaluation, disjoint from training draws.
std::vector<data::Example> heldout_examples(const std::vector<data::LoadedRecord>& corpus,
                                            const data::NoiseMixSpec& mix, std::uint64_t seed, int count);

}  // namespace tscodec::train
