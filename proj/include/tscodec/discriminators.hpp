#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tscodec/losses.hpp"
#include "tscodec/nn.hpp"
#include "tscodec/signal.hpp"

namespace tscodec::disc {

struct DiscriminatorSetConfig {
  // Waveform discriminators at scales 1, 2, 4, ... plus one STFT discriminator.
  int waveform_scales = 3;
  // Strided layers per discriminator (feature layers L).
  int layers = 4;
  std::vector<int> channels{16, 32, 64, 64};
  int waveform_kernel = 15;
  int waveform_stride = 4;
  int groups = 4;
  int stft_window = 1024;
  int stft_hop = 256;
  int stft_channels = 16;

  int count() const { return waveform_scales + 1; }
  // Shortest input for which every discriminator emits a logit.
  std::size_t min_input_length() const;
  void validate() const;
};

template <typename T>
struct DiscriminatorOutput {
  losses::LogitSet<T> logits;
  losses::FeatureStack<T> features;
};

// Average pooling by two; length halves (floor).
template <typename T>
std::vector<T> downsample2(std::span<const T> x);
signal::Waveform downsample2(const signal::Waveform& w);

// Index 0 is the STFT discriminator, 1..scales the waveform ones from the
// original rate downwards.
template <typename T>
class DiscriminatorSet {
 public:
  struct Cache {
    std::vector<nn::Cache<T>> nets;
    signal::ComplexSpectrogram<T> spec;
    std::size_t length = 0;
  };

  explicit DiscriminatorSet(const DiscriminatorSetConfig& cfg);

  Index parameter_count() const { return layout_.size(); }
  std::vector<T> init_parameters(std::uint64_t seed) const;

  DiscriminatorOutput<T> forward(std::span<const T> params, std::span<const T> x, Cache& cache) const;

  // Either gradient set may be empty (treated as zero). Accumulates into
  // grad_params and returns the gradient with respect to x.
  std::vector<T> backward(std::span<const T> params, const Cache& cache,
                          const losses::LogitSet<T>& grad_logits,
                          const losses::FeatureStack<T>& grad_features,
                          std::span<T> grad_params) const;

  const DiscriminatorSetConfig& config() const { return cfg_; }

 private:
  DiscriminatorSetConfig cfg_;
  nn::ParamLayout layout_;
  std::vector<nn::Sequential<T>> nets_;
};

}  // namespace tscodec::disc
