#include "tscodec/signal.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace tscodec;
using namespace tscodec::signal;

namespace {

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("tscodec_signal_" + name);
}

// Writes a WAV header by hand so load_wav is tested independently of save_wav.
void write_raw_wav(const fs::path& path, std::uint16_t format, std::uint16_t channels,
                   std::uint32_t rate, std::uint16_t bits, const std::vector<std::int16_t>& data) {
  std::ofstream out(path, std::ios::binary);
  auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
  const std::uint32_t bytes = static_cast<std::uint32_t>(data.size() * 2);
  out.write("RIFF", 4);
  u32(36 + bytes);
  out.write("WAVEfmt ", 8);
  u32(16);
  u16(format);
  u16(channels);
  u32(rate);
  u32(rate * channels * bits / 8);
  u16(static_cast<std::uint16_t>(channels * bits / 8));
  u16(bits);
  out.write("data", 4);
  u32(bytes);
  out.write(reinterpret_cast<const char*>(data.data()), bytes);
}

}  // namespace

TEST(Wav, LoadsSilence) {
  const auto path = temp_path("silence.wav");
  write_raw_wav(path, 1, 1, 24000, 16, std::vector<std::int16_t>(24000, 0));
  const Waveform w = load_wav(path);
  EXPECT_EQ(w.sample_rate, 24000);
  ASSERT_EQ(w.samples.size(), 24000u);
  for (float s : w.samples) EXPECT_EQ(s, 0.0f);
}

TEST(Wav, FullScaleScaling) {
  const auto path = temp_path("fullscale.wav");
  write_raw_wav(path, 1, 1, 16000, 16, {32767, -32768, 1});
  const Waveform w = load_wav(path);
  EXPECT_FLOAT_EQ(w.samples[0], 32767.0f / 32768.0f);
  EXPECT_FLOAT_EQ(w.samples[1], -1.0f);
  EXPECT_FLOAT_EQ(w.samples[2], 1.0f / 32768.0f);
}

TEST(Wav, DistinctErrors) {
  EXPECT_THROW(load_wav(temp_path("does_not_exist.wav")), WavMissingFile);
  const auto stereo = temp_path("stereo.wav");
  write_raw_wav(stereo, 1, 2, 24000, 16, {0, 0, 0, 0});
  try {
    load_wav(stereo);
    FAIL() << "stereo accepted";
  } catch (const WavNotMono& e) {
    EXPECT_NE(std::string(e.what()).find("non-mono"), std::string::npos);
  }
  const auto eight_bit = temp_path("u8.wav");
  write_raw_wav(eight_bit, 1, 1, 24000, 8, {0, 0});
  EXPECT_THROW(load_wav(eight_bit), WavUnsupportedEncoding);
  const auto ieee = temp_path("float.wav");
  write_raw_wav(ieee, 3, 1, 24000, 32, {0, 0, 0, 0});
  EXPECT_THROW(load_wav(ieee), WavUnsupportedEncoding);
}

TEST(Wav, RoundTripSilenceIsExact) {
  Waveform w{std::vector<float>(1000, 0.0f), 24000};
  const auto path = temp_path("rt_silence.wav");
  EXPECT_EQ(save_wav(w, path), 0u);
  const Waveform r = load_wav(path);
  EXPECT_EQ(r.samples, w.samples);
}

TEST(Wav, RoundTripWithinQuantizationBound) {
  const auto x = oracle_util::random_signal(5000, 7, 0.999);
  Waveform w{std::vector<float>(x.begin(), x.end()), 22050};
  const auto path = temp_path("rt_random.wav");
  save_wav(w, path);
  const Waveform r = load_wav(path);
  ASSERT_EQ(r.samples.size(), w.samples.size());
  EXPECT_EQ(r.sample_rate, 22050);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_LE(std::abs(r.samples[i] - w.samples[i]), 1.0 / 32768.0);
  }
}

TEST(Wav, ClipsOutOfRange) {
  Waveform w{{1.5f, -2.0f, 0.25f}, 24000};
  const auto path = temp_path("clip.wav");
  EXPECT_EQ(save_wav(w, path), 2u);
  const Waveform r = load_wav(path);
  EXPECT_FLOAT_EQ(r.samples[0], 32767.0f / 32768.0f);
  EXPECT_FLOAT_EQ(r.samples[1], -1.0f);
  EXPECT_FLOAT_EQ(r.samples[2], 0.25f);
}

TEST(Stft, ZeroInputGivesZeroMagnitudes) {
  std::vector<double> x(500, 0.0);
  const auto spec = stft<double>(std::span<const double>(x), 128, 32);
  EXPECT_EQ(spec.magnitudes.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Stft, FrameCount) {
  std::vector<float> x(1024, 0.1f);
  EXPECT_EQ(stft<float>(std::span<const float>(x), 64, 16).frames(), 64);
  EXPECT_EQ(stft_frame_count(1025, 16), 65);
  EXPECT_EQ(stft<float>(std::span<const float>(x), 64, 16).bins(), 33);
}

TEST(Stft, CosineAtBinFourPeaksAtBinFour) {
  const int s = 64;
  std::vector<double> x(640);
  for (std::size_t n = 0; n < x.size(); ++n) x[n] = std::cos(2.0 * std::numbers::pi * 4.0 * n / s);
  const auto spec = stft<double>(std::span<const double>(x), s, 16);
  const auto oracle = oracle_util::naive_stft(x, s, 16);
  for (Index t = 0; t < spec.frames(); ++t) {
    Index arg = 0;
    spec.magnitudes.row(t).maxCoeff(&arg);
    EXPECT_EQ(arg, 4) << "frame " << t;
    const auto& o = oracle[static_cast<std::size_t>(t)];
    EXPECT_EQ(std::max_element(o.begin(), o.end()) - o.begin(), 4);
  }
}

TEST(Stft, MatchesNaiveDft) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 12; ++trial) {
    const int s = 64 << (trial % 4);
    const std::size_t len = 1 + rng() % 1500;
    const int hop = s / 4;
    const auto x = oracle_util::random_signal(len, 100 + trial);
    const auto spec = stft<double>(std::span<const double>(x), s, hop);
    const auto oracle = oracle_util::naive_stft(x, s, hop);
    std::vector<double> got, want;
    for (Index t = 0; t < spec.frames(); ++t) {
      for (Index k = 0; k < spec.bins(); ++k) {
        got.push_back(spec.magnitudes(t, k));
        want.push_back(oracle[t][k]);
      }
    }
    EXPECT_LE(oracle_util::relative_error(got, want), 1e-10) << "s=" << s << " len=" << len;
  }
}

TEST(Stft, TrailingZerosDoNotAffectInteriorFrames) {
  const int s = 256, hop = 64;
  auto x = oracle_util::random_signal(2000, 11);
  const auto a = stft<double>(std::span<const double>(x), s, hop);
  x.resize(3000, 0.0);
  const auto b = stft<double>(std::span<const double>(x), s, hop);
  for (Index t = 0; t < a.frames(); ++t) {
    const Index start = t * hop - s / 2;
    if (start < 0 || start + s > 2000) continue;
    EXPECT_LE((a.magnitudes.row(t) - b.magnitudes.row(t)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Stft, RejectsBadArguments) {
  std::vector<float> x(100, 0.0f);
  EXPECT_THROW(stft<float>(std::span<const float>(x), 100, 25), InvalidArgument);
  EXPECT_THROW(stft<float>(std::span<const float>(x), 4096, 25), InvalidArgument);
  EXPECT_THROW(stft<float>(std::span<const float>(x), 64, 0), InvalidArgument);
  std::vector<float> empty;
  EXPECT_THROW(stft<float>(std::span<const float>(empty), 64, 16), InvalidArgument);
}

TEST(Stft, BackwardMatchesFiniteDifferences) {
  const auto x = oracle_util::random_signal(200, 5);
  const int s = 64, hop = 16;
  RowMatrix<double> probe = RowMatrix<double>::Random(stft_frame_count(x.size(), hop), s / 2 + 1);
  auto f = [&](const std::vector<double>& v) {
    return stft<double>(std::span<const double>(v), s, hop).magnitudes.cwiseProduct(probe).sum();
  };
  const auto spec = stft_complex<double>(std::span<const double>(x), s, hop);
  const auto grad = stft_magnitude_backward<double>(spec, probe);
  const auto fd = oracle_util::finite_difference(f, x);
  EXPECT_LE(oracle_util::relative_error(grad, fd), 1e-6);
}

TEST(Mel, EveryRowHasSupport) {
  for (int s = 64; s <= 2048; s *= 2) {
    const MelFilterbank bank(24000, s, std::min(64, s / 2 + 1));
    for (Index m = 0; m < bank.n_mels(); ++m) {
      EXPECT_GT(bank.weights().row(m).maxCoeff(), 0.0) << "s=" << s << " row " << m;
    }
    EXPECT_GE(bank.weights().minCoeff(), 0.0);
  }
}

TEST(Mel, ZeroInputGivesZero) {
  std::vector<double> x(4000, 0.0);
  const auto mel = mel_spectrogram<double>(std::span<const double>(x), 24000, 512, 64);
  EXPECT_EQ(mel.magnitudes.cols(), 64);
  EXPECT_EQ(mel.magnitudes.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mel, SingleBinExcitesOnlyOverlappingRows) {
  const MelFilterbank bank(24000, 1024, 64);
  for (Index bin : {3, 40, 200, 500}) {
    RowMatrix<double> mag = RowMatrix<double>::Zero(1, bank.bins());
    mag(0, bin) = 1.0;
    const auto mel = bank.apply<double>(mag);
    for (Index m = 0; m < bank.n_mels(); ++m) {
      EXPECT_EQ(mel(0, m) > 0.0, bank.weights()(m, bin) > 0.0) << "bin " << bin << " mel " << m;
    }
  }
}

TEST(Mel, ToneExcitesRowsCoveringItsBins) {
  const int s = 512;
  const int bin = 37;
  std::vector<double> x(4096);
  for (std::size_t n = 0; n < x.size(); ++n) x[n] = std::cos(2.0 * std::numbers::pi * bin * n / s);
  const MelFilterbank bank(24000, s, 64);
  const auto mag = stft<double>(std::span<const double>(x), s, s / 4).magnitudes;
  const auto mel = bank.apply<double>(mag);
  const Index t = 4;  // an interior frame
  for (Index m = 0; m < bank.n_mels(); ++m) {
    double covered = 0.0;
    for (int k = bin - 1; k <= bin + 1; ++k) covered += bank.weights()(m, k);
    if (covered > 0.0) {
      EXPECT_GT(mel(t, m), 1e-3);
    } else {
      EXPECT_LT(mel(t, m), 1e-9 * mel.row(t).maxCoeff());
    }
  }
}

TEST(Mel, NonNegativeAndLinear) {
  const MelFilterbank bank(24000, 256, 64);
  RowMatrix<double> u = RowMatrix<double>::Random(5, bank.bins()).cwiseAbs();
  RowMatrix<double> v = RowMatrix<double>::Random(5, bank.bins()).cwiseAbs();
  const double a = 0.3, b = 2.5;
  const RowMatrix<double> lhs = bank.apply<double>((a * u + b * v).eval());
  const RowMatrix<double> rhs = a * bank.apply<double>(u) + b * bank.apply<double>(v);
  EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GE(bank.apply<double>(u).minCoeff(), 0.0);

  const auto x = oracle_util::random_signal(3000, 9);
  const auto mel = mel_spectrogram<double>(std::span<const double>(x), 24000, 256, 64);
  EXPECT_GE(mel.magnitudes.minCoeff(), 0.0);
}

TEST(Mel, RejectsTooManyMels) {
  std::vector<double> x(1000, 0.1);
  EXPECT_THROW(mel_spectrogram<double>(std::span<const double>(x), 24000, 64, 64), InvalidArgument);
  EXPECT_NO_THROW(mel_spectrogram<double>(std::span<const double>(x), 24000, 64, 33));
}
