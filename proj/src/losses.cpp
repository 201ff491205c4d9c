#include "tscodec/losses.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "tscodec/error.hpp"

namespace tscodec::losses {

double SpectralLossConfig::alpha(int scale) { return std::sqrt(scale / 2.0); }

int SpectralLossConfig::mels_for_scale(int scale) const {
  return std::min(n_mels, scale / 2 + 1);
}

void SpectralLossConfig::validate() const {
  if (scales.empty()) throw InvalidArgument("spectral loss needs at least one scale");
  for (int s : scales) {
    if (!signal::is_valid_window_length(s)) {
      throw InvalidArgument("spectral loss scale " + std::to_string(s) +
                            " is not a power of two in [64, 2048]");
    }
  }
  if (!(epsilon > 0.0)) throw InvalidArgument("spectral loss epsilon must be positive");
  if (use_mel && n_mels < 1) throw InvalidArgument("n_mels must be >= 1");
  if (sample_rate <= 0) throw InvalidArgument("sample rate must be positive");
}

void LossWeights::validate() const {
  for (double v : {adv, feat, dis}) {
    if (!std::isfinite(v) || v < 0.0) throw InvalidArgument("loss weights must be finite and >= 0");
  }
  if (adv == 0.0 && feat == 0.0 && dis == 0.0) {
    throw InvalidArgument("loss weights must not all be zero");
  }
}

template <typename T>
T spectral_distance(const RowMatrix<T>& reference, const RowMatrix<T>& estimate, T alpha,
                    T epsilon, RowMatrix<T>* grad_estimate) {
  if (reference.rows() != estimate.rows() || reference.cols() != estimate.cols()) {
    throw InvalidArgument("spectrogram shapes differ");
  }
  T l1 = T(0);
  T log_sq = T(0);
  if (grad_estimate) grad_estimate->resize(estimate.rows(), estimate.cols());
  for (Index i = 0; i < reference.rows(); ++i) {
    for (Index j = 0; j < reference.cols(); ++j) {
      const T a = reference(i, j);
      const T b = estimate(i, j);
      const T diff = a - b;
      const T log_diff = std::log(b + epsilon) - std::log(a + epsilon);
      l1 += std::abs(diff);
      log_sq += log_diff * log_diff;
      if (grad_estimate) {
        const T sign = diff > T(0) ? T(-1) : (diff < T(0) ? T(1) : T(0));
        (*grad_estimate)(i, j) = sign + alpha * T(2) * log_diff / (b + epsilon);
      }
    }
  }
  return l1 + alpha * log_sq;
}

template <typename T>
T multiscale_spectral_loss(std::span<const T> reference, std::span<const T> estimate,
                           const SpectralLossConfig& cfg, std::vector<T>* grad_estimate) {
  cfg.validate();
  if (reference.size() != estimate.size()) {
    throw InvalidArgument("spectral loss length mismatch: " + std::to_string(reference.size()) +
                          " vs " + std::to_string(estimate.size()));
  }
  if (reference.empty()) throw InvalidArgument("spectral loss on empty waveforms");
  if (grad_estimate) grad_estimate->assign(estimate.size(), T(0));

  T total = T(0);
  for (int s : cfg.scales) {
    const int hop = s / 4;
    const auto ref_spec = signal::stft_complex<T>(reference, s, hop);
    const auto est_spec = signal::stft_complex<T>(estimate, s, hop);
    RowMatrix<T> a = ref_spec.values.cwiseAbs();
    RowMatrix<T> b = est_spec.values.cwiseAbs();
    std::optional<signal::MelFilterbank> bank;
    if (cfg.use_mel) {
      bank.emplace(cfg.sample_rate, s, cfg.mels_for_scale(s));
      a = bank->apply<T>(a);
      b = bank->apply<T>(b);
    }
    const T alpha = static_cast<T>(SpectralLossConfig::alpha(s));
    const T eps = static_cast<T>(cfg.epsilon);
    if (!grad_estimate) {
      total += spectral_distance<T>(a, b, alpha, eps, nullptr);
      continue;
    }
    RowMatrix<T> g;
    total += spectral_distance<T>(a, b, alpha, eps, &g);
    if (bank) g = bank->apply_transpose<T>(g);
    const auto gx = signal::stft_magnitude_backward<T>(est_spec, g);
    for (std::size_t i = 0; i < gx.size(); ++i) (*grad_estimate)[i] += gx[i];
  }
  return total;
}

double multiscale_spectral_loss(const signal::Waveform& reference,
                                const signal::Waveform& estimate, const SpectralLossConfig& cfg) {
  if (reference.sample_rate != estimate.sample_rate) {
    throw InvalidArgument("spectral loss sample-rate mismatch");
  }
  SpectralLossConfig c = cfg;
  c.sample_rate = reference.sample_rate;
  const auto ref = cast_vector<double>(reference.samples);
  const auto est = cast_vector<double>(estimate.samples);
  return multiscale_spectral_loss<double>(std::span<const double>(ref),
                                          std::span<const double>(est), c, nullptr);
}

template <typename T>
T generator_adv_loss(const LogitSet<T>& fake, LogitSet<T>* grad_fake) {
  if (fake.empty()) throw InvalidArgument("generator adversarial loss on an empty logit set");
  const T k_inv = T(1) / static_cast<T>(fake.size());
  if (grad_fake) grad_fake->assign(fake.size(), {});
  T total = T(0);
  for (std::size_t k = 0; k < fake.size(); ++k) {
    const auto& logits = fake[k];
    if (logits.empty()) throw InvalidArgument("discriminator produced no logits");
    const T t_inv = T(1) / static_cast<T>(logits.size());
    T sum = T(0);
    if (grad_fake) (*grad_fake)[k].assign(logits.size(), T(0));
    for (std::size_t t = 0; t < logits.size(); ++t) {
      const T margin = T(1) - logits[t];
      if (margin > T(0)) {
        sum += margin;
        if (grad_fake) (*grad_fake)[k][t] = -k_inv * t_inv;
      }
    }
    total += sum * t_inv;
  }
  return total * k_inv;
}

template <typename T>
T feature_matching_loss(const FeatureStack<T>& real, const FeatureStack<T>& fake,
                        FeatureStack<T>* grad_fake) {
  if (real.size() != fake.size() || real.empty()) {
    throw InvalidArgument("feature stacks differ in discriminator count");
  }
  std::size_t layers = 0;
  for (std::size_t k = 0; k < real.size(); ++k) {
    if (real[k].size() != fake[k].size()) throw InvalidArgument("feature stacks differ in depth");
    for (std::size_t l = 0; l < real[k].size(); ++l) {
      if (real[k][l].rows() != fake[k][l].rows() || real[k][l].cols() != fake[k][l].cols()) {
        throw InvalidArgument("feature shapes differ at discriminator " + std::to_string(k) +
                              ", layer " + std::to_string(l));
      }
      if (real[k][l].size() == 0) throw InvalidArgument("empty feature layer");
    }
    layers += real[k].size();
  }
  if (layers == 0) throw InvalidArgument("feature stacks contain no layers");
  const T layer_inv = T(1) / static_cast<T>(layers);
  if (grad_fake) grad_fake->assign(fake.size(), {});
  T total = T(0);
  for (std::size_t k = 0; k < real.size(); ++k) {
    if (grad_fake) (*grad_fake)[k].resize(fake[k].size());
    for (std::size_t l = 0; l < real[k].size(); ++l) {
      const auto diff = (real[k][l] - fake[k][l]).eval();
      const T n_inv = T(1) / static_cast<T>(diff.size());
      total += diff.cwiseAbs().sum() * n_inv;
      if (grad_fake) {
        const T scale = layer_inv * n_inv;
        (*grad_fake)[k][l] = diff.unaryExpr([scale](T d) {
          return d > T(0) ? -scale : (d < T(0) ? scale : T(0));
        });
      }
    }
  }
  return total * layer_inv;
}

template <typename T>
T discriminator_loss(const LogitSet<T>& real, const LogitSet<T>& fake, LogitSet<T>* grad_real,
                     LogitSet<T>* grad_fake) {
  if (real.size() != fake.size()) {
    throw InvalidArgument("discriminator loss: " + std::to_string(real.size()) +
                          " real vs " + std::to_string(fake.size()) + " fake discriminators");
  }
  if (real.empty()) throw InvalidArgument("discriminator loss on an empty logit set");
  const T k_inv = T(1) / static_cast<T>(real.size());
  if (grad_real) grad_real->assign(real.size(), {});
  if (grad_fake) grad_fake->assign(fake.size(), {});
  T total = T(0);
  auto hinge = [&](const std::vector<T>& logits, T sign, std::vector<T>* grad) {
    if (logits.empty()) throw InvalidArgument("discriminator produced no logits");
    const T t_inv = T(1) / static_cast<T>(logits.size());
    if (grad) grad->assign(logits.size(), T(0));
    T sum = T(0);
    for (std::size_t t = 0; t < logits.size(); ++t) {
      // sign = -1 for real (1 - D), +1 for fake (1 + D)
      const T margin = T(1) + sign * logits[t];
      if (margin > T(0)) {
        sum += margin;
        if (grad) (*grad)[t] = sign * k_inv * t_inv;
      }
    }
    return sum * t_inv;
  };
  for (std::size_t k = 0; k < real.size(); ++k) {
    total += hinge(real[k], T(-1), grad_real ? &(*grad_real)[k] : nullptr);
    total += hinge(fake[k], T(1), grad_fake ? &(*grad_fake)[k] : nullptr);
  }
  return total * k_inv;
}

double generator_total_loss(double adv, double feat, double dis, const LossWeights& w) {
  return w.adv * adv + w.feat * feat + w.dis * dis;
}

double si_snr(std::span<const float> reference, std::span<const float> estimate) {
  if (reference.size() != estimate.size()) throw InvalidArgument("si-snr length mismatch");
  double ref_energy = 0.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    ref_energy += static_cast<double>(reference[i]) * reference[i];
    dot += static_cast<double>(reference[i]) * estimate[i];
  }
  if (ref_energy == 0.0) throw InvalidArgument("si-snr reference is all zero");
  const double scale = dot / ref_energy;
  double target_energy = 0.0;
  double residual_energy = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double target = scale * reference[i];
    const double residual = estimate[i] - target;
    target_energy += target * target;
    residual_energy += residual * residual;
  }
  if (residual_energy <= target_energy * 1e-10) return kSiSnrCapDb;
  if (target_energy <= residual_energy * 1e-10) return -kSiSnrCapDb;
  return std::clamp(10.0 * std::log10(target_energy / residual_energy), -kSiSnrCapDb, kSiSnrCapDb);
}

#define TSCODEC_LOSSES_INSTANTIATE(T)                                                          \
  template T spectral_distance<T>(const RowMatrix<T>&, const RowMatrix<T>&, T, T, RowMatrix<T>*); \
  template T multiscale_spectral_loss<T>(std::span<const T>, std::span<const T>,                \
                                         const SpectralLossConfig&, std::vector<T>*);           \
  template T generator_adv_loss<T>(const LogitSet<T>&, LogitSet<T>*);                           \
  template T feature_matching_loss<T>(const FeatureStack<T>&, const FeatureStack<T>&,           \
                                      FeatureStack<T>*);                                        \
  template T discriminator_loss<T>(const LogitSet<T>&, const LogitSet<T>&, LogitSet<T>*,        \
                                   LogitSet<T>*);

TSCODEC_LOSSES_INSTANTIATE(float)
TSCODEC_LOSSES_INSTANTIATE(double)

#undef TSCODEC_LOSSES_INSTANTIATE

}  // namespace tscodec::losses
