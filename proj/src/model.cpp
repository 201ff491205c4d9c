#include "tscodec/model.hpp"

#include <bit>
#include <cstring>
#include <numeric>
#include <random>

#include "tscodec/error.hpp"

namespace tscodec::model {

int ModelConfig::total_stride() const {
  return std::accumulate(strides.begin(), strides.end(), 1, std::multiplies<>());
}

void ModelConfig::validate() const {
  if (strides.empty()) throw InvalidArgument("model needs at least one stride");
  for (int s : strides) {
    if (s < 1) throw InvalidArgument("model strides must be >= 1");
  }
  if (latent_dim < 1) throw InvalidArgument("latent_dim must be >= 1");
  if (base_channels < 1) throw InvalidArgument("base_channels must be >= 1");
  if (residual_units_per_block < 0) throw InvalidArgument("residual_units_per_block must be >= 0");
  if (sample_rate <= 0) throw InvalidArgument("sample_rate must be positive");
  if (total_stride() > 65535) throw InvalidArgument("total stride must fit in 16 bits");
}

Index output_frames(std::size_t length, const ModelConfig& cfg) {
  if (length == 0) throw InvalidArgument("waveform length must be >= 1");
  const auto hop = static_cast<std::size_t>(cfg.total_stride());
  return static_cast<Index>((length + hop - 1) / hop);
}

template <typename T>
std::vector<T> pad_to_stride(std::span<const T> samples, const ModelConfig& cfg) {
  const auto frames = output_frames(samples.size(), cfg);
  std::vector<T> out(static_cast<std::size_t>(frames * cfg.total_stride()), T(0));
  std::copy(samples.begin(), samples.end(), out.begin());
  return out;
}

namespace {

int dilation_for(int unit) {
  int d = 1;
  for (int i = 0; i < unit; ++i) d *= 3;
  return d;
}

}  // namespace

template <typename T>
Encoder<T>::Encoder(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  int ch = cfg_.base_channels;
  net_.template add<nn::Conv1d<T>>(layout_, nn::causal_conv(1, ch, 7));
  for (int stride : cfg_.strides) {
    for (int u = 0; u < cfg_.residual_units_per_block; ++u) {
      net_.template add<nn::ResidualUnit<T>>(layout_, ch, dilation_for(u));
    }
    net_.template add<nn::Elu<T>>();
    net_.template add<nn::Conv1d<T>>(layout_, nn::causal_conv(ch, 2 * ch, 2 * stride, stride));
    ch *= 2;
  }
  net_.template add<nn::Elu<T>>();
  net_.template add<nn::Conv1d<T>>(layout_, nn::causal_conv(ch, cfg_.latent_dim, 3));
}

template <typename T>
std::vector<T> Encoder<T>::init_parameters(std::uint64_t seed) const {
  std::vector<T> params(static_cast<std::size_t>(layout_.size()));
  std::mt19937_64 rng(seed);
  net_.init(params, rng);
  return params;
}

template <typename T>
nn::Tensor<T> Encoder<T>::forward(std::span<const T> params, std::span<const T> padded,
                                  nn::Cache<T>& cache) const {
  if (static_cast<Index>(params.size()) != layout_.size()) {
    throw InvalidArgument("encoder parameter count " + std::to_string(params.size()) +
                          " does not match config (" + std::to_string(layout_.size()) + ")");
  }
  if (padded.empty() || padded.size() % static_cast<std::size_t>(cfg_.total_stride()) != 0) {
    throw InvalidArgument("encoder input must be a non-empty multiple of the total stride");
  }
  return net_.forward(params, nn::make_signal<T>(padded), cache);
}

template <typename T>
std::vector<T> Encoder<T>::backward(std::span<const T> params, const nn::Cache<T>& cache,
                                    const nn::Tensor<T>& grad_latent,
                                    std::span<T> grad_params) const {
  const auto g = net_.backward(params, cache, grad_latent, grad_params);
  return std::vector<T>(g.data.data(), g.data.data() + g.data.size());
}

template <typename T>
Decoder<T>::Decoder(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  int ch = cfg_.base_channels << cfg_.strides.size();
  net_.template add<nn::Conv1d<T>>(layout_, nn::causal_conv(cfg_.latent_dim, ch, 7));
  for (auto it = cfg_.strides.rbegin(); it != cfg_.strides.rend(); ++it) {
    net_.template add<nn::Elu<T>>();
    net_.template add<nn::ConvTranspose1d<T>>(layout_, ch, ch / 2, *it);
    ch /= 2;
    for (int u = 0; u < cfg_.residual_units_per_block; ++u) {
      net_.template add<nn::ResidualUnit<T>>(layout_, ch, dilation_for(u));
    }
  }
  net_.template add<nn::Elu<T>>();
  net_.template add<nn::Conv1d<T>>(layout_, nn::causal_conv(ch, 1, 7));
}

template <typename T>
std::vector<T> Decoder<T>::init_parameters(std::uint64_t seed) const {
  std::vector<T> params(static_cast<std::size_t>(layout_.size()));
  std::mt19937_64 rng(seed);
  net_.init(params, rng);
  return params;
}

template <typename T>
nn::Tensor<T> Decoder<T>::forward(std::span<const T> params, const nn::Tensor<T>& latent,
                                  nn::Cache<T>& cache) const {
  if (static_cast<Index>(params.size()) != layout_.size()) {
    throw InvalidArgument("decoder parameter count " + std::to_string(params.size()) +
                          " does not match config (" + std::to_string(layout_.size()) + ")");
  }
  if (latent.channels() != cfg_.latent_dim || latent.data.cols() < 1) {
    throw InvalidArgument("decoder input must be latent_dim x frames with frames >= 1");
  }
  return net_.forward(params, latent, cache);
}

template <typename T>
nn::Tensor<T> Decoder<T>::backward(std::span<const T> params, const nn::Cache<T>& cache,
                                   std::span<const T> grad_signal,
                                   std::span<T> grad_params) const {
  return net_.backward(params, cache, nn::make_signal<T>(grad_signal), grad_params);
}

LatentSequence encode(const signal::Waveform& w, const Encoder<float>& encoder,
                      std::span<const float> params) {
  signal::validate(w);
  const auto padded = pad_to_stride<float>(std::span<const float>(w.samples), encoder.config());
  nn::Cache<float> cache;
  const auto z = encoder.forward(params, padded, cache);
  return z.data.transpose();
}

signal::Waveform decode(const LatentSequence& z, const Decoder<float>& decoder,
                        std::span<const float> params) {
  if (z.rows() < 1) throw InvalidArgument("latent sequence has no frames");
  if (z.cols() != decoder.config().latent_dim) {
    throw InvalidArgument("latent dimension " + std::to_string(z.cols()) + " does not match " +
                          std::to_string(decoder.config().latent_dim));
  }
  nn::Tensor<float> latent;
  latent.data = z.transpose();
  nn::Cache<float> cache;
  const auto y = decoder.forward(params, latent, cache);
  signal::Waveform out;
  out.sample_rate = decoder.config().sample_rate;
  out.samples.assign(y.data.data(), y.data.data() + y.data.size());
  return out;
}

ParameterDigest parameter_digest(std::span<const float> params) {
  constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
  constexpr std::uint64_t kPrime = 0x100000001b3ULL;
  std::uint64_t h = kOffset;
  auto mix = [&](std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) {
      h ^= (v >> (8 * i)) & 0xFFU;
      h *= kPrime;
    }
  };
  mix(static_cast<std::uint64_t>(params.size()), 8);
  for (float p : params) mix(std::bit_cast<std::uint32_t>(p), 4);
  return h;
}

std::string digest_hex(ParameterDigest d) {
  static const char* kHex = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = kHex[d & 0xF];
    d >>= 4;
  }
  return s;
}

template std::vector<float> pad_to_stride<float>(std::span<const float>, const ModelConfig&);
template std::vector<double> pad_to_stride<double>(std::span<const double>, const ModelConfig&);
template class Encoder<float>;
template class Encoder<double>;
template class Decoder<float>;
template class Decoder<double>;

}  // namespace tscodec::model
