#include "tscodec/trainer.hpp"

#include <cmath>

#include "tscodec/error.hpp"

namespace tscodec::train {

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(mix64(mix64(seed) ^ a) ^ b);
}

// Stream identifiers for the different random draws.
constexpr std::uint64_t kInitStream = 0x1001;
constexpr std::uint64_t kHeldoutStream = 0x1002;
constexpr std::uint64_t kQuantizerStream = 0x1003;
constexpr std::uint64_t kWeightStream = 0x1004;
constexpr std::uint64_t kReseedStream = 0x1005;

void check_finite(double v, const char* what, int stage, int step) {
  if (!std::isfinite(v)) {
    throw RuntimeFailure("stage " + std::to_string(stage) + " diverged at step " + std::to_string(step) +
                         ": " + what + " is not finite");
  }
}

void scale(std::vector<float>& v, float s) {
  for (auto& x : v) x *= s;
}

std::vector<float> padded_to(const std::vector<float>& x, std::size_t n) {
  std::vector<float> out(n, 0.0f);
  std::copy_n(x.begin(), std::min(n, x.size()), out.begin());
  return out;
}

struct EncodedBatch {
  std::vector<nn::Cache<float>> caches;
  RowMatrix<float> z;  // all frames of the batch stacked
  std::vector<Index> offsets;
  std::vector<Index> frames;
};

EncodedBatch encode_batch(const model::Encoder<float>& enc, std::span<const float> params,
                          const std::vector<data::Example>& batch, bool keep_caches) {
  EncodedBatch out;
  std::vector<RowMatrix<float>> parts;
  Index total = 0;
  for (const auto& ex : batch) {
    const auto padded = model::pad_to_stride<float>(std::span<const float>(ex.input.samples), enc.config());
    nn::Cache<float> cache;
    const auto z = enc.forward(params, padded, cache);
    parts.push_back(z.data.transpose());
    out.offsets.push_back(total);
    out.frames.push_back(z.data.cols());
    total += z.data.cols();
    if (keep_caches) out.caches.push_back(std::move(cache));
  }
  out.z.resize(total, enc.config().latent_dim);
  for (std::size_t i = 0; i < parts.size(); ++i) out.z.middleRows(out.offsets[i], out.frames[i]) = parts[i];
  return out;
}

nn::Tensor<float> latent_tensor(const RowMatrix<float>& rows) {
  nn::Tensor<float> t;
  t.data = rows.transpose();
  return t;
}

void ensure_state(AdamState& s, std::size_t n) {
  if (s.m.size() != n) {
    s.m.assign(n, 0.0f);
    s.v.assign(n, 0.0f);
    s.t = 0;
  }
}

}  // namespace

Adam::Adam(double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(epsilon) {
  if (!(lr_ > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (!(b1_ >= 0.0 && b1_ < 1.0 && b2_ >= 0.0 && b2_ < 1.0)) throw InvalidArgument("adam betas must be in [0, 1)");
}

void Adam::step(std::span<float> params, std::span<const float> grads, AdamState& state) const {
  if (grads.size() != params.size()) throw InvalidArgument("gradient size does not match parameters");
  ensure_state(state, params.size());
  ++state.t;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(state.t));
  const auto b1 = static_cast<float>(b1_);
  const auto b2 = static_cast<float>(b2_);
  const auto step = static_cast<float>(lr_ / c1);
  const auto inv_c2 = static_cast<float>(1.0 / c2);
  const auto eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1.0f - b1) * grads[i];
    state.v[i] = b2 * state.v[i] + (1.0f - b2) * grads[i] * grads[i];
    params[i] -= step * state.m[i] / (std::sqrt(state.v[i] * inv_c2) + eps);
  }
}

void StageOneConfig::validate() const {
  if (steps < 1) throw InvalidArgument("stage-1 steps must be >= 1");
  if (batch_size < 1) throw InvalidArgument("stage-1 batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidArgument("stage-1 learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw InvalidArgument("adam betas must be in [0, 1)");
  if (init_factor < 1) throw InvalidArgument("init_factor must be >= 1");
  if (eval_examples < 0) throw InvalidArgument("eval_examples must be >= 0");
  mix.validate();
  spectral.validate();
}

void StageTwoConfig::validate() const {
  if (steps < 1) throw InvalidArgument("stage-2 steps must be >= 1");
  if (batch_size < 1) throw InvalidArgument("stage-2 batch_size must be >= 1");
  if (!(generator_learning_rate > 0.0) || !(discriminator_learning_rate > 0.0)) {
    throw InvalidArgument("stage-2 learning rates must be > 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw InvalidArgument("adam betas must be in [0, 1)");
  weights.validate();
  mix.validate();
  spectral.validate();
}

int sample_active_quantizers(int nq, std::mt19937_64& rng) {
  if (nq < 1) throw InvalidArgument("number of quantizers must be >= 1");
  return std::uniform_int_distribution<int>(1, nq)(rng);
}

std::vector<data::Example> training_batch(const std::vector<data::LoadedRecord>& corpus,
                                          const data::NoiseMixSpec& mix, std::uint64_t seed, int stage,
                                          int step, int batch_size) {
  std::vector<data::Example> batch;
  const auto s = stream_seed(seed, static_cast<std::uint64_t>(stage));
  for (int j = 0; j < batch_size; ++j) {
    batch.push_back(data::draw_example(corpus, mix, s,
                                       static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(batch_size) +
                                           static_cast<std::uint64_t>(j)));
  }
  return batch;
}

std::vector<data::Example> heldout_examples(const std::vector<data::LoadedRecord>& corpus,
                                            const data::NoiseMixSpec& mix, std::uint64_t seed, int count) {
  std::vector<data::Example> out;
  for (int i = 0; i < count; ++i) {
    out.push_back(data::draw_example(corpus, mix, stream_seed(seed, kHeldoutStream), static_cast<std::uint64_t>(i)));
  }
  return out;
}

signal::Waveform reconstruct(const Checkpoint& ckpt, const signal::Waveform& input, int nq, bool perceptual) {
  if (perceptual && !ckpt.has_perceptual_decoder()) {
    throw InvalidArgument("checkpoint has no perceptual decoder (stage-2 training has not been run)");
  }
  const model::Encoder<float> enc(ckpt.model);
  const model::Decoder<float> dec(ckpt.model);
  const auto z = model::encode(input, enc, ckpt.encoder);
  const auto q = rvq::quantize(z, ckpt.codebook, nq);
  return model::decode(q.quantized, dec, perceptual ? ckpt.decoder_p : ckpt.decoder_d);
}

double mean_distortion(const Checkpoint& ckpt, const std::vector<data::Example>& examples, int nq,
                       bool perceptual, const losses::SpectralLossConfig& spectral) {
  if (examples.empty()) throw InvalidArgument("no examples to evaluate");
  double acc = 0.0;
  for (const auto& ex : examples) {
    const auto y = reconstruct(ckpt, ex.input, nq, perceptual);
    const signal::Waveform target{padded_to(ex.target.samples, y.samples.size()), y.sample_rate};
    acc += losses::multiscale_spectral_loss(target, y, spectral);
  }
  return acc / static_cast<double>(examples.size());
}

TrainResult train_stage1(const std::vector<data::LoadedRecord>& corpus, const model::ModelConfig& model_cfg,
                         const rvq::QuantizerConfig& quant_cfg, const StageOneConfig& cfg,
                         const ProgressFn& progress) {
  if (corpus.empty()) throw InvalidArgument("training corpus is empty");
  model_cfg.validate();
  quant_cfg.validate();
  cfg.validate();

  TrainResult result;
  Checkpoint& ck = result.checkpoint;
  ck.stage = 1;
  ck.model = model_cfg;
  ck.quantizer = quant_cfg;
  ck.stage1 = cfg;
  const model::Encoder<float> enc(model_cfg);
  const model::Decoder<float> dec(model_cfg);
  ck.encoder = enc.init_parameters(stream_seed(cfg.seed, kWeightStream, 0));
  ck.decoder_d = dec.init_parameters(stream_seed(cfg.seed, kWeightStream, 1));
  ck.codebook = rvq::Codebook(quant_cfg.num_quantizers, quant_cfg.codebook_size, model_cfg.latent_dim);

  // k-means++ initialisation on frames of the untrained encoder
  {
    const Index wanted = static_cast<Index>(cfg.init_factor) * quant_cfg.codebook_size;
    std::vector<data::Example> init;
    Index frames = 0;
    for (std::uint64_t i = 0; frames < wanted; ++i) {
      init.push_back(data::draw_example(corpus, cfg.mix, stream_seed(cfg.seed, kInitStream), i));
      frames += model::output_frames(init.back().input.samples.size(), model_cfg);
    }
    const auto encoded = encode_batch(enc, ck.encoder, init, false);
    rvq::kmeans_init(ck.codebook, encoded.z, stream_seed(cfg.seed, kInitStream, 1));
  }

  const auto heldout = heldout_examples(corpus, cfg.mix, cfg.seed, cfg.eval_examples);
  if (!heldout.empty()) {
    result.eval_initial = mean_distortion(ck, heldout, quant_cfg.num_quantizers, false, cfg.spectral);
  }

  const Adam adam(cfg.learning_rate, cfg.beta1, cfg.beta2);
  std::mt19937_64 nq_rng(stream_seed(cfg.seed, kQuantizerStream));
  std::mt19937_64 reseed_rng(stream_seed(cfg.seed, kReseedStream));
  const bool dropout = cfg.quantizer_dropout && quant_cfg.dropout_enabled;
  const float inv_batch = 1.0f / static_cast<float>(cfg.batch_size);
  const auto beta = static_cast<float>(quant_cfg.commitment_weight);

  for (int step = 0; step < cfg.steps; ++step) {
    const int nq = dropout ? sample_active_quantizers(quant_cfg.num_quantizers, nq_rng) : quant_cfg.num_quantizers;
    const auto batch = training_batch(corpus, cfg.mix, cfg.seed, 1, step, cfg.batch_size);
    auto encoded = encode_batch(enc, ck.encoder, batch, true);
    const auto qres = rvq::quantize(encoded.z, ck.codebook, nq);

    std::vector<float> grad_e(ck.encoder.size(), 0.0f);
    std::vector<float> grad_d(ck.decoder_d.size(), 0.0f);
    double loss = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const RowMatrix<float> q = qres.quantized.middleRows(encoded.offsets[j], encoded.frames[j]);
      nn::Cache<float> dcache;
      const auto y = dec.forward(ck.decoder_d, latent_tensor(q), dcache);
      const auto target = padded_to(batch[j].target.samples, static_cast<std::size_t>(y.data.size()));
      std::vector<float> g;
      const float l = losses::multiscale_spectral_loss<float>(
          target, std::span<const float>(y.data.data(), static_cast<std::size_t>(y.data.size())), cfg.spectral, &g);
      check_finite(l, "L_dis", 1, step);
      loss += l;
      scale(g, inv_batch);
      // straight-through: the gradient at the quantized latent goes to z
      auto grad_latent = dec.backward(ck.decoder_d, dcache, g, grad_d);
      if (beta > 0.0f) {
        const RowMatrix<float> z = encoded.z.middleRows(encoded.offsets[j], encoded.frames[j]);
        grad_latent.data += (2.0f * beta * inv_batch) * (z - q).transpose();
      }
      enc.backward(ck.encoder, encoded.caches[j], grad_latent, grad_e);
    }
    loss /= static_cast<double>(batch.size());

    adam.step(ck.encoder, grad_e, ck.encoder_opt);
    adam.step(ck.decoder_d, grad_d, ck.decoder_d_opt);
    rvq::ema_update(ck.codebook, qres, quant_cfg.ema_decay);
    for (int k = 0; k < nq; ++k) {
      rvq::reseed_dead_codes(ck.codebook, k, qres.stage_inputs[static_cast<std::size_t>(k)],
                             quant_cfg.dead_code_threshold, reseed_rng);
    }
    ck.step = step + 1;

    StepLog log;
    log.stage = 1;
    log.step = step;
    log.nq = nq;
    log.l_dis = loss;
    log.total = loss;
    log.encoder_digest = ck.encoder_digest();
    log.codebook_digest = ck.codebook_digest();
    result.log.push_back(log);
    if (progress) progress(log);
  }

  if (!heldout.empty()) {
    result.eval_final = mean_distortion(ck, heldout, quant_cfg.num_quantizers, false, cfg.spectral);
  }
  return result;
}

TrainResult train_stage2(const Checkpoint& stage1, const std::vector<data::LoadedRecord>& corpus,
                         const disc::DiscriminatorSetConfig& disc_cfg, const StageTwoConfig& cfg,
                         const ProgressFn& progress) {
  if (corpus.empty()) throw InvalidArgument("training corpus is empty");
  stage1.validate();
  disc_cfg.validate();
  cfg.validate();

  TrainResult result;
  Checkpoint& ck = result.checkpoint;
  ck = stage1;
  ck.stage = 2;
  ck.step = 0;
  ck.discriminators = disc_cfg;
  ck.stage2 = cfg;
  const model::Encoder<float> enc(ck.model);
  const model::Decoder<float> dec(ck.model);
  const disc::DiscriminatorSet<float> discs(disc_cfg);
  if (cfg.warm_start) {
    ck.decoder_p = ck.decoder_d;
  } else {
    ck.decoder_p = dec.init_parameters(stream_seed(cfg.seed, kWeightStream, 2));
  }
  ck.disc_params = discs.init_parameters(stream_seed(cfg.seed, kWeightStream, 3));
  ck.decoder_p_opt = AdamState{};
  ck.disc_opt = AdamState{};

  const auto frozen_encoder = stage1.encoder_digest();
  const auto frozen_codebook = stage1.codebook_digest();
  const Adam adam_g(cfg.generator_learning_rate, cfg.beta1, cfg.beta2);
  const Adam adam_d(cfg.discriminator_learning_rate, cfg.beta1, cfg.beta2);
  std::mt19937_64 nq_rng(stream_seed(cfg.seed, kQuantizerStream, 2));
  const bool dropout = cfg.quantizer_dropout && ck.quantizer.dropout_enabled;
  const float inv_batch = 1.0f / static_cast<float>(cfg.batch_size);
  const auto& w = cfg.weights;

  for (int step = 0; step < cfg.steps; ++step) {
    const int nq = dropout ? sample_active_quantizers(ck.quantizer.num_quantizers, nq_rng) : ck.quantizer.num_quantizers;
    const auto batch = training_batch(corpus, cfg.mix, cfg.seed, 2, step, cfg.batch_size);
    const auto encoded = encode_batch(enc, ck.encoder, batch, false);
    const auto qres = rvq::quantize(encoded.z, ck.codebook, nq);

    std::vector<nn::Cache<float>> gcaches(batch.size());
    std::vector<std::vector<float>> fakes(batch.size()), reals(batch.size());
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const RowMatrix<float> q = qres.quantized.middleRows(encoded.offsets[j], encoded.frames[j]);
      const auto y = dec.forward(ck.decoder_p, latent_tensor(q), gcaches[j]);
      fakes[j].assign(y.data.data(), y.data.data() + y.data.size());
      reals[j] = padded_to(batch[j].target.samples, fakes[j].size());
    }

    // discriminator step on the detached generator output
    std::vector<float> grad_disc(ck.disc_params.size(), 0.0f);
    double l_disc = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
      disc::DiscriminatorSet<float>::Cache creal, cfake;
      const auto real = discs.forward(ck.disc_params, reals[j], creal);
      const auto fake = discs.forward(ck.disc_params, fakes[j], cfake);
      losses::LogitSet<float> gr, gf;
      const float l = losses::discriminator_loss<float>(real.logits, fake.logits, &gr, &gf);
      check_finite(l, "discriminator loss", 2, step);
      l_disc += l;
      for (auto& v : gr) scale(v, inv_batch);
      for (auto& v : gf) scale(v, inv_batch);
      discs.backward(ck.disc_params, creal, gr, {}, grad_disc);
      discs.backward(ck.disc_params, cfake, gf, {}, grad_disc);
    }
    adam_d.step(ck.disc_params, grad_disc, ck.disc_opt);

    // generator step against the updated discriminators
    std::vector<float> grad_p(ck.decoder_p.size(), 0.0f);
    std::vector<float> scratch(ck.disc_params.size(), 0.0f);
    double l_adv = 0.0, l_feat = 0.0, l_dis = 0.0, total = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
      disc::DiscriminatorSet<float>::Cache creal, cfake;
      const auto real = discs.forward(ck.disc_params, reals[j], creal);
      const auto fake = discs.forward(ck.disc_params, fakes[j], cfake);
      losses::LogitSet<float> g_adv;
      losses::FeatureStack<float> g_feat;
      std::vector<float> g_dis;
      const float adv = losses::generator_adv_loss<float>(fake.logits, &g_adv);
      const float feat = losses::feature_matching_loss<float>(real.features, fake.features, &g_feat);
      const float dis = losses::multiscale_spectral_loss<float>(reals[j], fakes[j], cfg.spectral, &g_dis);
      const double tot = losses::generator_total_loss(adv, feat, dis, w);
      check_finite(tot, "generator loss", 2, step);
      l_adv += adv;
      l_feat += feat;
      l_dis += dis;
      total += tot;

      for (auto& v : g_adv) scale(v, static_cast<float>(w.adv) * inv_batch);
      for (auto& layer : g_feat) {
        for (auto& m : layer) m *= static_cast<float>(w.feat) * inv_batch;
      }
      auto grad_y = discs.backward(ck.disc_params, cfake, g_adv, g_feat, scratch);
      const auto wd = static_cast<float>(w.dis) * inv_batch;
      for (std::size_t i = 0; i < grad_y.size(); ++i) grad_y[i] += wd * g_dis[i];
      dec.backward(ck.decoder_p, gcaches[j], grad_y, grad_p);
    }
    adam_g.step(ck.decoder_p, grad_p, ck.decoder_p_opt);
    ck.step = step + 1;

    StepLog log;
    log.stage = 2;
    log.step = step;
    log.nq = nq;
    const double n = static_cast<double>(batch.size());
    log.l_adv = l_adv / n;
    log.l_feat = l_feat / n;
    log.l_dis = l_dis / n;
    log.total = total / n;
    log.l_disc = l_disc / n;
    log.encoder_digest = ck.encoder_digest();
    log.codebook_digest = ck.codebook_digest();
    if (log.encoder_digest != frozen_encoder || log.codebook_digest != frozen_codebook) {
      throw VerificationError("frozen parameters drifted at stage-2 step " + std::to_string(step));
    }
    result.log.push_back(log);
    if (progress) progress(log);
  }
  return result;
}

}  // namespace tscodec::train
