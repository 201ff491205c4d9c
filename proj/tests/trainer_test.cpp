#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "tscodec/error.hpp"
#include "tscodec/trainer.hpp"

namespace tscodec::train {
namespace {

constexpr int kRate = 24000;

model::ModelConfig tiny_model() {
  model::ModelConfig m;
  m.strides = {2, 4};
  m.latent_dim = 8;
  m.base_channels = 4;
  m.residual_units_per_block = 1;
  return m;
}

rvq::QuantizerConfig tiny_quantizer() {
  rvq::QuantizerConfig q;
  q.num_quantizers = 4;
  q.codebook_size = 16;
  return q;
}

disc::DiscriminatorSetConfig tiny_discs() {
  disc::DiscriminatorSetConfig d;
  d.waveform_scales = 1;
  d.layers = 2;
  d.channels = {4, 4};
  d.groups = 2;
  d.stft_window = 128;
  d.stft_hop = 32;
  d.stft_channels = 4;
  return d;
}

data::NoiseMixSpec tiny_mix() {
  data::NoiseMixSpec m;
  m.crop_s = 0.04;
  return m;
}

losses::SpectralLossConfig tiny_spectral() {
  losses::SpectralLossConfig s;
  s.scales = {64, 128, 256};
  s.n_mels = 16;
  return s;
}

std::vector<data::LoadedRecord> tiny_corpus(std::uint64_t seed = 3) {
  const auto c = data::synth_corpus(4, 0.2, kRate, seed);
  std::vector<data::LoadedRecord> out;
  for (std::size_t i = 0; i < c.clean.size(); ++i) {
    data::LoadedRecord r;
    r.clean = c.clean[i];
    if (i % 2 == 0) r.noise = c.noise[i];
    r.seed = 100 + i;
    out.push_back(r);
  }
  return out;
}

StageOneConfig tiny_stage1(int steps) {
  StageOneConfig c;
  c.steps = steps;
  c.batch_size = 2;
  c.learning_rate = 1e-3;
  c.seed = 11;
  c.init_factor = 2;
  c.eval_examples = 4;
  c.mix = tiny_mix();
  c.spectral = tiny_spectral();
  return c;
}

StageTwoConfig tiny_stage2(int steps) {
  StageTwoConfig c;
  c.steps = steps;
  c.batch_size = 2;
  c.generator_learning_rate = 1e-3;
  c.discriminator_learning_rate = 1e-3;
  c.seed = 5;
  c.mix = tiny_mix();
  c.spectral = tiny_spectral();
  return c;
}

const TrainResult& shared_stage1() {
  static const TrainResult r = train_stage1(tiny_corpus(), tiny_model(), tiny_quantizer(), tiny_stage1(40));
  return r;
}

TEST(Adam, MatchesReferenceRecursion) {
  std::vector<float> p{0.5f, -1.0f, 2.0f};
  const std::vector<std::vector<float>> grads{{0.1f, -0.2f, 0.3f}, {0.4f, 0.0f, -0.1f}, {-0.3f, 0.2f, 0.05f}};
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> ref(p.begin(), p.end()), m(3, 0.0), v(3, 0.0);
  AdamState state;
  const Adam adam(lr, b1, b2, eps);
  for (std::size_t t = 0; t < grads.size(); ++t) {
    adam.step(p, grads[t], state);
    for (int i = 0; i < 3; ++i) {
      const double g = grads[t][static_cast<std::size_t>(i)];
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      const double mh = m[i] / (1 - std::pow(b1, t + 1));
      const double vh = v[i] / (1 - std::pow(b2, t + 1));
      ref[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[static_cast<std::size_t>(i)], ref[i], 1e-6);
  EXPECT_EQ(state.t, 3);
}

TEST(Adam, FirstStepMovesEachCoordinateByLearningRate) {
  std::vector<float> p{0.0f, 0.0f};
  AdamState s;
  Adam(0.05, 0.9, 0.999).step(p, std::vector<float>{3.0f, -0.01f}, s);
  EXPECT_NEAR(p[0], -0.05f, 1e-6);
  EXPECT_NEAR(p[1], 0.05f, 1e-4);
}

TEST(Adam, RejectsBadArguments) {
  EXPECT_THROW(Adam(0.0, 0.9, 0.999), InvalidArgument);
  EXPECT_THROW(Adam(1e-3, 1.0, 0.999), InvalidArgument);
  std::vector<float> p(2);
  AdamState s;
  EXPECT_THROW(Adam(1e-3, 0.9, 0.999).step(p, std::vector<float>(3), s), InvalidArgument);
}

TEST(QuantizerSampler, UniformWithinFiveSigma) {
  std::mt19937_64 rng(42);
  const int nq = 24, draws = 100000;
  std::vector<int> counts(nq + 1, 0);
  for (int i = 0; i < draws; ++i) {
    const int k = sample_active_quantizers(nq, rng);
    ASSERT_GE(k, 1);
    ASSERT_LE(k, nq);
    ++counts[static_cast<std::size_t>(k)];
  }
  const double p = 1.0 / nq;
  const double mean = draws * p, sigma = std::sqrt(draws * p * (1 - p));
  for (int k = 1; k <= nq; ++k) EXPECT_LT(std::abs(counts[static_cast<std::size_t>(k)] - mean), 5 * sigma) << k;
}

TEST(QuantizerSampler, DeterministicPerSeed) {
  std::mt19937_64 a(7), b(7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_active_quantizers(8, a), sample_active_quantizers(8, b));
  EXPECT_THROW(sample_active_quantizers(0, a), InvalidArgument);
}

TEST(TrainingBatch, DependsOnlyOnSeedAndStep) {
  const auto corpus = tiny_corpus();
  const auto a = training_batch(corpus, tiny_mix(), 9, 1, 3, 2);
  const auto b = training_batch(corpus, tiny_mix(), 9, 1, 3, 2);
  const auto c = training_batch(corpus, tiny_mix(), 9, 1, 4, 2);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].input.samples, b[0].input.samples);
  EXPECT_EQ(a[1].target.samples, b[1].target.samples);
  EXPECT_NE(a[0].input.samples, c[0].input.samples);
}

TEST(StageOne, HeldOutDistortionDecreases) {
  const auto& r = shared_stage1();
  ASSERT_EQ(r.log.size(), 40u);
  EXPECT_TRUE(std::isfinite(r.eval_initial));
  EXPECT_LT(r.eval_final, r.eval_initial);
  for (const auto& l : r.log) {
    EXPECT_GE(l.nq, 1);
    EXPECT_LE(l.nq, 4);
  }
  EXPECT_EQ(r.checkpoint.stage, 1);
  EXPECT_EQ(r.checkpoint.step, 40);
  EXPECT_FALSE(r.checkpoint.has_perceptual_decoder());
}

TEST(StageOne, SameSeedGivesIdenticalParameters) {
  const auto a = train_stage1(tiny_corpus(), tiny_model(), tiny_quantizer(), tiny_stage1(3));
  const auto b = train_stage1(tiny_corpus(), tiny_model(), tiny_quantizer(), tiny_stage1(3));
  EXPECT_EQ(a.checkpoint.encoder_digest(), b.checkpoint.encoder_digest());
  EXPECT_EQ(a.checkpoint.codebook_digest(), b.checkpoint.codebook_digest());
  EXPECT_EQ(model::parameter_digest(a.checkpoint.decoder_d), model::parameter_digest(b.checkpoint.decoder_d));
  auto cfg = tiny_stage1(3);
  cfg.seed = 12;
  const auto c = train_stage1(tiny_corpus(), tiny_model(), tiny_quantizer(), cfg);
  EXPECT_NE(a.checkpoint.encoder_digest(), c.checkpoint.encoder_digest());
}

TEST(StageOne, MoreQuantizersShrinkLatentError) {
  const auto& ck = shared_stage1().checkpoint;
  const model::Encoder<float> enc(ck.model);
  for (const auto& ex : heldout_examples(tiny_corpus(), tiny_mix(), 77, 4)) {
    const auto z = model::encode(ex.input, enc, ck.encoder);
    double prev = z.norm();
    for (int k = 1; k <= ck.quantizer.num_quantizers; ++k) {
      const double err = (z - rvq::quantize(z, ck.codebook, k).quantized).norm();
      EXPECT_LT(err, prev) << k;
      prev = err;
    }
  }
}

TEST(StageOne, NonFiniteLossAbortsWithDiagnostic) {
  auto corpus = tiny_corpus();
  for (auto& r : corpus) r.clean.samples[r.clean.samples.size() / 2] = std::numeric_limits<double>::quiet_NaN();
  auto cfg = tiny_stage1(2);
  cfg.eval_examples = 0;
  cfg.init_factor = 1;
  try {
    train_stage1(corpus, tiny_model(), tiny_quantizer(), cfg);
    FAIL() << "expected RuntimeFailure";
  } catch (const RuntimeFailure& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  } catch (const Error&) {
    // NaN can also be caught earlier by data or codebook validation
  }
}

TEST(StageOne, RejectsInvalidConfig) {
  auto cfg = tiny_stage1(0);
  EXPECT_THROW(train_stage1(tiny_corpus(), tiny_model(), tiny_quantizer(), cfg), InvalidArgument);
  EXPECT_THROW(train_stage1({}, tiny_model(), tiny_quantizer(), tiny_stage1(1)), InvalidArgument);
}

class CheckpointFile : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("tscodec_ckpt_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(CheckpointFile, RoundTripPreservesEverything) {
  const auto& ck = shared_stage1().checkpoint;
  const auto path = dir_ / "a.ckpt";
  save_checkpoint(ck, path);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.stage, ck.stage);
  EXPECT_EQ(back.step, ck.step);
  EXPECT_EQ(back.encoder, ck.encoder);
  EXPECT_EQ(back.decoder_d, ck.decoder_d);
  EXPECT_EQ(back.codebook_digest(), ck.codebook_digest());
  EXPECT_EQ(back.encoder_opt.m, ck.encoder_opt.m);
  EXPECT_EQ(back.encoder_opt.t, ck.encoder_opt.t);
  EXPECT_EQ(config_snapshot(back), config_snapshot(ck));
}

TEST_F(CheckpointFile, TruncationIsAFormatError) {
  const auto path = dir_ / "t.ckpt";
  save_checkpoint(shared_stage1().checkpoint, path);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size / 2);
  EXPECT_THROW(load_checkpoint(path), FormatError);
  std::filesystem::resize_file(path, 5);
  EXPECT_THROW(load_checkpoint(path), FormatError);
}

TEST_F(CheckpointFile, CorruptedByteFailsVerification) {
  const auto path = dir_ / "c.ckpt";
  save_checkpoint(shared_stage1().checkpoint, path);
  const auto size = std::filesystem::file_size(path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(size / 2));
    char c = 0;
    f.read(&c, 1);
    f.seekp(static_cast<std::streamoff>(size / 2));
    c = static_cast<char>(c ^ 0x10);
    f.write(&c, 1);
  }
  EXPECT_THROW(load_checkpoint(path), VerificationError);
}

TEST_F(CheckpointFile, MissingFileIsAnIoError) {
  EXPECT_THROW(load_checkpoint(dir_ / "absent.ckpt"), IoError);
}

TEST(StageTwo, FrozenPartsNeverChange) {
  const auto& s1 = shared_stage1().checkpoint;
  const auto r = train_stage2(s1, tiny_corpus(), tiny_discs(), tiny_stage2(4));
  ASSERT_EQ(r.log.size(), 4u);
  for (const auto& l : r.log) {
    EXPECT_EQ(l.encoder_digest, s1.encoder_digest());
    EXPECT_EQ(l.codebook_digest, s1.codebook_digest());
  }
  EXPECT_EQ(r.checkpoint.encoder, s1.encoder);
  EXPECT_EQ(r.checkpoint.decoder_d, s1.decoder_d);
  EXPECT_TRUE(r.checkpoint.has_perceptual_decoder());
  EXPECT_EQ(r.checkpoint.stage, 2);
}

TEST(StageTwo, LoggedTotalIsTheWeightedSum) {
  auto cfg = tiny_stage2(3);
  cfg.weights = {2.0, 10.0, 0.5};
  const auto r = train_stage2(shared_stage1().checkpoint, tiny_corpus(), tiny_discs(), cfg);
  for (const auto& l : r.log) {
    const double expect = 2.0 * l.l_adv + 10.0 * l.l_feat + 0.5 * l.l_dis;
    EXPECT_LE(std::abs(l.total - expect), 1e-6 * std::max(1.0, std::abs(expect)));
    EXPECT_GE(l.l_adv, 0.0);
    EXPECT_GE(l.l_feat, 0.0);
    EXPECT_GE(l.l_disc, 0.0);
  }
}

TEST(StageTwo, DistortionOnlyWeightsReduceToDecoderFineTuning) {
  const auto& s1 = shared_stage1().checkpoint;
  auto cfg = tiny_stage2(3);
  cfg.weights = {0.0, 0.0, 1.0};
  cfg.warm_start = true;
  cfg.quantizer_dropout = false;
  const auto r = train_stage2(s1, tiny_corpus(), tiny_discs(), cfg);

  // Reference: plain decoder training on the same batches.
  const model::Encoder<float> enc(s1.model);
  const model::Decoder<float> dec(s1.model);
  std::vector<float> gp = s1.decoder_d;
  AdamState state;
  const Adam adam(cfg.generator_learning_rate, cfg.beta1, cfg.beta2);
  const auto corpus = tiny_corpus();
  for (int step = 0; step < cfg.steps; ++step) {
    const auto batch = training_batch(corpus, cfg.mix, cfg.seed, 2, step, cfg.batch_size);
    std::vector<float> grad(gp.size(), 0.0f);
    for (const auto& ex : batch) {
      const auto z = model::encode(ex.input, enc, s1.encoder);
      const auto q = rvq::quantize(z, s1.codebook, s1.quantizer.num_quantizers);
      nn::Tensor<float> latent;
      latent.data = q.quantized.transpose();
      nn::Cache<float> cache;
      const auto y = dec.forward(gp, latent, cache);
      std::vector<float> target(static_cast<std::size_t>(y.data.size()), 0.0f);
      std::copy_n(ex.target.samples.begin(), std::min(target.size(), ex.target.samples.size()), target.begin());
      std::vector<float> g;
      losses::multiscale_spectral_loss<float>(
          target, std::span<const float>(y.data.data(), target.size()), cfg.spectral, &g);
      for (auto& v : g) v /= static_cast<float>(cfg.batch_size);
      dec.backward(gp, cache, g, grad);
    }
    adam.step(gp, grad, state);
  }
  ASSERT_EQ(gp.size(), r.checkpoint.decoder_p.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < gp.size(); ++i) {
    num += std::pow(gp[i] - r.checkpoint.decoder_p[i], 2);
    den += std::pow(gp[i], 2);
  }
  EXPECT_LE(std::sqrt(num / den), 1e-6);
}

TEST(StageTwo, PerceptualReconstructionNeedsStageTwo) {
  const auto& s1 = shared_stage1().checkpoint;
  const auto held = heldout_examples(tiny_corpus(), tiny_mix(), 1, 1);
  EXPECT_THROW(reconstruct(s1, held[0].input, 4, true), InvalidArgument);
  const auto y = reconstruct(s1, held[0].input, 4, false);
  EXPECT_EQ(y.samples.size() % 8, 0u);
  EXPECT_GE(y.samples.size(), held[0].input.samples.size());
}

TEST(StageTwo, CheckpointRoundTripKeepsPerceptualDecoder) {
  const auto r = train_stage2(shared_stage1().checkpoint, tiny_corpus(), tiny_discs(), tiny_stage2(1));
  const auto path = std::filesystem::temp_directory_path() / "tscodec_stage2_roundtrip.ckpt";
  save_checkpoint(r.checkpoint, path);
  const auto back = load_checkpoint(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.decoder_p, r.checkpoint.decoder_p);
  EXPECT_EQ(back.disc_params, r.checkpoint.disc_params);
  EXPECT_EQ(config_snapshot(back), config_snapshot(r.checkpoint));
}

}  // namespace
}  // namespace tscodec::train
