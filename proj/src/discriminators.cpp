#include "tscodec/discriminators.hpp"

#include "tscodec/error.hpp"

namespace tscodec::disc {

std::size_t DiscriminatorSetConfig::min_input_length() const {
  return std::size_t{1} << waveform_scales;
}

void DiscriminatorSetConfig::validate() const {
  if (waveform_scales < 1) throw InvalidArgument("need at least one waveform discriminator (K >= 2)");
  if (layers < 2) throw InvalidArgument("discriminators need at least 2 layers");
  if (static_cast<int>(channels.size()) != layers) {
    throw InvalidArgument("channel schedule must list one width per layer");
  }
  if (groups < 1) throw InvalidArgument("groups must be >= 1");
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] < 1 || (i > 0 && (channels[i] % groups != 0 || channels[i - 1] % groups != 0))) {
      throw InvalidArgument("discriminator channels must be positive and divisible by groups");
    }
  }
  if (waveform_kernel < 1 || waveform_stride < 1) throw InvalidArgument("invalid waveform conv shape");
  if (!signal::is_valid_window_length(stft_window)) {
    throw InvalidArgument("stft discriminator window must be a power of two in [64, 2048]");
  }
  if (stft_hop < 1 || stft_channels < 1) throw InvalidArgument("invalid stft discriminator shape");
}

template <typename T>
std::vector<T> downsample2(std::span<const T> x) {
  if (x.size() < 2) throw InvalidArgument("downsample2 needs at least 2 samples");
  std::vector<T> out(x.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x[2 * i] + x[2 * i + 1]) / T(2);
  return out;
}

signal::Waveform downsample2(const signal::Waveform& w) {
  return {downsample2<float>(std::span<const float>(w.samples)), w.sample_rate / 2};
}

namespace {

template <typename T>
std::vector<T> downsample2_backward(std::span<const T> grad, std::size_t input_length) {
  std::vector<T> out(input_length, T(0));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    out[2 * i] = grad[i] / T(2);
    out[2 * i + 1] = grad[i] / T(2);
  }
  return out;
}

// Layer index of the activation that follows strided layer l.
std::size_t feature_layer(int l) { return static_cast<std::size_t>(2 * l + 1); }

}  // namespace

template <typename T>
DiscriminatorSet<T>::DiscriminatorSet(const DiscriminatorSetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  nets_.resize(static_cast<std::size_t>(cfg_.count()));

  auto& stft_net = nets_[0];
  Index width = cfg_.stft_window / 2 + 1;
  for (int l = 0; l < cfg_.layers; ++l) {
    nn::Conv2dSpec s;
    s.in_channels = l == 0 ? 1 : cfg_.stft_channels;
    s.out_channels = cfg_.stft_channels;
    s.kernel_h = 3;
    s.kernel_w = 9;
    s.stride_h = 1;
    s.stride_w = l == 0 ? 1 : 2;
    s.pad_h = 1;
    s.pad_w = 4;
    const auto& conv = stft_net.template add<nn::Conv2d<T>>(layout_, s);
    width = conv.output_width(width);
    stft_net.template add<nn::LeakyRelu<T>>();
  }
  nn::Conv2dSpec head;
  head.in_channels = cfg_.stft_channels;
  head.kernel_h = 3;
  head.kernel_w = static_cast<int>(width);
  head.pad_h = 1;
  stft_net.template add<nn::Conv2d<T>>(layout_, head);

  for (int k = 1; k < cfg_.count(); ++k) {
    auto& net = nets_[static_cast<std::size_t>(k)];
    for (int l = 0; l < cfg_.layers; ++l) {
      const int in = l == 0 ? 1 : cfg_.channels[static_cast<std::size_t>(l - 1)];
      net.template add<nn::Conv1d<T>>(
          layout_, nn::centered_conv(in, cfg_.channels[static_cast<std::size_t>(l)],
                                     cfg_.waveform_kernel, cfg_.waveform_stride,
                                     l == 0 ? 1 : cfg_.groups));
      net.template add<nn::LeakyRelu<T>>();
    }
    net.template add<nn::Conv1d<T>>(layout_, nn::centered_conv(cfg_.channels.back(), 1, 3));
  }
}

template <typename T>
std::vector<T> DiscriminatorSet<T>::init_parameters(std::uint64_t seed) const {
  std::vector<T> params(static_cast<std::size_t>(layout_.size()));
  std::mt19937_64 rng(seed);
  for (const auto& net : nets_) net.init(params, rng);
  return params;
}

template <typename T>
DiscriminatorOutput<T> DiscriminatorSet<T>::forward(std::span<const T> params, std::span<const T> x,
                                                    Cache& cache) const {
  if (static_cast<Index>(params.size()) != layout_.size()) {
    throw InvalidArgument("discriminator parameter count " + std::to_string(params.size()) +
                          " does not match config (" + std::to_string(layout_.size()) + ")");
  }
  if (x.size() < cfg_.min_input_length()) {
    throw InvalidArgument("discriminator input too short: " + std::to_string(x.size()) +
                          " samples, need " + std::to_string(cfg_.min_input_length()));
  }
  cache = Cache{};
  cache.length = x.size();
  cache.nets.resize(nets_.size());
  DiscriminatorOutput<T> out;
  out.logits.resize(nets_.size());
  out.features.resize(nets_.size());

  auto collect = [&](std::size_t k, const nn::Tensor<T>& y) {
    out.logits[k].assign(y.data.data(), y.data.data() + y.data.size());
    for (int l = 0; l < cfg_.layers; ++l) {
      out.features[k].push_back(nn::Sequential<T>::output_of(cache.nets[k], feature_layer(l)).data);
    }
  };

  cache.spec = signal::stft_complex<T>(x, cfg_.stft_window, cfg_.stft_hop);
  const auto mag = signal::magnitude(cache.spec).magnitudes;
  nn::Tensor<T> image;
  image.height = mag.rows();
  image.data = Eigen::Map<const RowMatrix<T>>(mag.data(), 1, mag.size());
  collect(0, nets_[0].forward(params, image, cache.nets[0]));

  std::vector<T> scaled(x.begin(), x.end());
  for (std::size_t k = 1; k < nets_.size(); ++k) {
    if (k > 1) scaled = downsample2<T>(scaled);
    collect(k, nets_[k].forward(params, nn::make_signal<T>(scaled), cache.nets[k]));
  }
  return out;
}

template <typename T>
std::vector<T> DiscriminatorSet<T>::backward(std::span<const T> params, const Cache& cache,
                                             const losses::LogitSet<T>& grad_logits,
                                             const losses::FeatureStack<T>& grad_features,
                                             std::span<T> grad_params) const {
  if (!grad_logits.empty() && grad_logits.size() != nets_.size()) {
    throw InvalidArgument("logit gradient has the wrong number of discriminators");
  }
  if (!grad_features.empty() && grad_features.size() != nets_.size()) {
    throw InvalidArgument("feature gradient has the wrong number of discriminators");
  }
  auto net_grad = [&](std::size_t k) {
    const auto& c = cache.nets[k];
    const auto& last = nn::Sequential<T>::output_of(c, nets_[k].size() - 1);
    nn::Tensor<T> g;
    g.height = last.height;
    if (!grad_logits.empty()) {
      const auto& gl = grad_logits[k];
      if (static_cast<Index>(gl.size()) != last.data.size()) {
        throw InvalidArgument("logit gradient length mismatch");
      }
      g.data = Eigen::Map<const RowMatrix<T>>(gl.data(), last.data.rows(), last.data.cols());
    }
    std::vector<nn::Tensor<T>> taps(nets_[k].size());
    if (!grad_features.empty()) {
      if (static_cast<int>(grad_features[k].size()) != cfg_.layers) {
        throw InvalidArgument("feature gradient layer count mismatch");
      }
      for (int l = 0; l < cfg_.layers; ++l) {
        const auto& f = nn::Sequential<T>::output_of(c, feature_layer(l));
        const auto& gf = grad_features[k][static_cast<std::size_t>(l)];
        if (gf.size() == 0) continue;
        if (gf.rows() != f.data.rows() || gf.cols() != f.data.cols()) {
          throw InvalidArgument("feature gradient shape mismatch");
        }
        taps[feature_layer(l)].height = f.height;
        taps[feature_layer(l)].data = gf;
      }
    }
    return nets_[k].backward_with_taps(params, c, g, taps, grad_params);
  };

  const auto g_img = net_grad(0);
  const RowMatrix<T> g_mag = Eigen::Map<const RowMatrix<T>>(
      g_img.data.data(), cache.spec.values.rows(), cache.spec.values.cols());
  std::vector<T> grad = signal::stft_magnitude_backward<T>(cache.spec, g_mag);

  // waveform discriminators, coarsest first, chained through the pooling
  std::vector<T> carry;
  for (std::size_t k = nets_.size() - 1; k >= 1; --k) {
    const auto g = net_grad(k);
    std::vector<T> gk(g.data.data(), g.data.data() + g.data.size());
    if (!carry.empty()) {
      for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += carry[i];
    }
    if (k == 1) {
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += gk[i];
    } else {
      const std::size_t in_len = cache.length >> (k - 2);
      carry = downsample2_backward<T>(gk, in_len);
    }
  }
  return grad;
}

template std::vector<float> downsample2<float>(std::span<const float>);
template std::vector<double> downsample2<double>(std::span<const double>);
template class DiscriminatorSet<float>;
template class DiscriminatorSet<double>;

}  // namespace tscodec::disc
