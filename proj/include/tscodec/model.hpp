#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tscodec/nn.hpp"
#include "tscodec/signal.hpp"

namespace tscodec::model {

struct ModelConfig {
  std::vector<int> strides{2, 4, 5, 8};
  int latent_dim = 256;
  int base_channels = 8;
  int residual_units_per_block = 3;
  int sample_rate = 24000;

  int total_stride() const;
  // Latent frames per second (S in the bitrate formula).
  double frame_rate() const { return static_cast<double>(sample_rate) / total_stride(); }
  void validate() const;
};

// frames x latent_dim
using LatentSequence = RowMatrix<float>;

// ceil(length / total_stride)
Index output_frames(std::size_t length, const ModelConfig& cfg);

template <typename T>
std::vector<T> pad_to_stride(std::span<const T> samples, const ModelConfig& cfg);

// Causal convolutional encoder: input conv, one block per stride (residual
// units then a strided conv that doubles the channel count), output conv to
// latent_dim channels.
template <typename T>
class Encoder {
 public:
  explicit Encoder(const ModelConfig& cfg);

  Index parameter_count() const { return layout_.size(); }
  std::vector<T> init_parameters(std::uint64_t seed) const;

  // Input must already be padded to a multiple of the total stride.
  // Returns latent_dim x frames.
  nn::Tensor<T> forward(std::span<const T> params, std::span<const T> padded,
                        nn::Cache<T>& cache) const;
  std::vector<T> backward(std::span<const T> params, const nn::Cache<T>& cache,
                          const nn::Tensor<T>& grad_latent, std::span<T> grad_params) const;

  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  nn::ParamLayout layout_;
  nn::Sequential<T> net_;
};

// Mirror of the encoder with causal transposed convolutions for upsampling.
template <typename T>
class Decoder {
 public:
  explicit Decoder(const ModelConfig& cfg);

  Index parameter_count() const { return layout_.size(); }
  std::vector<T> init_parameters(std::uint64_t seed) const;

  // latent_dim x frames -> 1 x frames * total_stride
  nn::Tensor<T> forward(std::span<const T> params, const nn::Tensor<T>& latent,
                        nn::Cache<T>& cache) const;
  nn::Tensor<T> backward(std::span<const T> params, const nn::Cache<T>& cache,
                         std::span<const T> grad_signal, std::span<T> grad_params) const;

  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  nn::ParamLayout layout_;
  nn::Sequential<T> net_;
};

LatentSequence encode(const signal::Waveform& w, const Encoder<float>& encoder,
                      std::span<const float> params);

signal::Waveform decode(const LatentSequence& z, const Decoder<float>& decoder,
                        std::span<const float> params);

// 64-bit FNV-1a over the element count and little-endian IEEE bytes.
using ParameterDigest = std::uint64_t;
ParameterDigest parameter_digest(std::span<const float> params);
std::string digest_hex(ParameterDigest d);

}  // namespace tscodec::model
