#pragma once

#include <span>
#include <vector>

#include "tscodec/signal.hpp"
#include "tscodec/tensor.hpp"

namespace tscodec::losses {

struct SpectralLossConfig {
  std::vector<int> scales{64, 128, 256, 512, 1024, 2048};
  double epsilon = 1e-5;
  int n_mels = 64;
  bool use_mel = true;
  int sample_rate = 24000;

  static double alpha(int scale);
  // Mel rows used at a given scale; capped at the number of STFT bins.
  int mels_for_scale(int scale) const;
  void validate() const;
};

struct LossWeights {
  double adv = 1.0;
  double feat = 100.0;
  double dis = 1.0;

  void validate() const;
};

// Logits per discriminator: [k][t].
template <typename T>
using LogitSet = std::vector<std::vector<T>>;

// Activations per discriminator and layer: [k][l] is channels x time (for
// two-dimensional features, channels x (time * freq)).
template <typename T>
using FeatureStack = std::vector<std::vector<RowMatrix<T>>>;

// l1 distance plus alpha-weighted squared log distance between two
// non-negative frames x bins matrices. Writes d/d(estimate) when requested.
template <typename T>
T spectral_distance(const RowMatrix<T>& reference, const RowMatrix<T>& estimate, T alpha,
                    T epsilon, RowMatrix<T>* grad_estimate = nullptr);

// Sum over scales of spectral_distance with alpha_s = sqrt(s / 2), applied to
// mel (or linear) magnitudes with hop s / 4.
template <typename T>
T multiscale_spectral_loss(std::span<const T> reference, std::span<const T> estimate,
                           const SpectralLossConfig& cfg, std::vector<T>* grad_estimate = nullptr);

double multiscale_spectral_loss(const signal::Waveform& reference,
                                const signal::Waveform& estimate, const SpectralLossConfig& cfg);

// Hinge generator loss: mean over discriminators of mean_t max(0, 1 - D).
template <typename T>
T generator_adv_loss(const LogitSet<T>& fake, LogitSet<T>* grad_fake = nullptr);

// Mean absolute feature difference averaged over channels, time and layers.
template <typename T>
T feature_matching_loss(const FeatureStack<T>& real, const FeatureStack<T>& fake,
                        FeatureStack<T>* grad_fake = nullptr);

template <typename T>
T discriminator_loss(const LogitSet<T>& real, const LogitSet<T>& fake,
                     LogitSet<T>* grad_real = nullptr, LogitSet<T>* grad_fake = nullptr);

double generator_total_loss(double adv, double feat, double dis, const LossWeights& w);

// Scale-invariant SNR in dB, clamped to [-100, 100].
double si_snr(std::span<const float> reference, std::span<const float> estimate);

inline constexpr double kSiSnrCapDb = 100.0;

}  // namespace tscodec::losses
