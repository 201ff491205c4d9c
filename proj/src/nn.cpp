#include "tscodec/nn.hpp"

#include <cmath>

#include "tscodec/error.hpp"

namespace tscodec::nn {

namespace {

template <typename T>
void uniform_fill(std::span<T> out, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : out) v = static_cast<T>(dist(rng));
}

template <typename T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMatrix<T>>;

}  // namespace

template <typename T>
Tensor<T> make_signal(std::span<const T> samples) {
  Tensor<T> t;
  t.data = Eigen::Map<const RowMatrix<T>>(samples.data(), 1, static_cast<Index>(samples.size()));
  return t;
}

Conv1dSpec causal_conv(int in, int out, int kernel, int stride, int dilation) {
  Conv1dSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = kernel;
  s.stride = stride;
  s.dilation = dilation;
  s.pad_left = (kernel - 1) * dilation - (stride - 1);
  if (s.pad_left < 0) throw InvalidArgument("causal conv needs (kernel - 1) * dilation >= stride - 1");
  s.pad_right = 0;
  return s;
}

Conv1dSpec centered_conv(int in, int out, int kernel, int stride, int groups) {
  Conv1dSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = kernel;
  s.stride = stride;
  s.groups = groups;
  s.pad_left = (kernel - 1) / 2;
  s.pad_right = (kernel - 1) - s.pad_left;
  return s;
}

// ---------------------------------------------------------------- Conv1d

template <typename T>
Conv1d<T>::Conv1d(ParamLayout& layout, const Conv1dSpec& spec) : spec_(spec) {
  if (spec.groups < 1 || spec.in_channels % spec.groups != 0 ||
      spec.out_channels % spec.groups != 0) {
    throw InvalidArgument("conv channels must be divisible by groups");
  }
  if (spec.kernel < 1 || spec.stride < 1 || spec.dilation < 1) {
    throw InvalidArgument("conv kernel, stride and dilation must be >= 1");
  }
  weight_offset_ = layout.allocate(static_cast<Index>(spec.out_channels) *
                                   (spec.in_channels / spec.groups) * spec.kernel);
  bias_offset_ = layout.allocate(spec.out_channels);
}

template <typename T>
Index Conv1d<T>::output_length(Index input_length) const {
  const Index span = static_cast<Index>(spec_.kernel - 1) * spec_.dilation + 1;
  const Index padded = input_length + spec_.pad_left + spec_.pad_right;
  if (padded < span) return 0;
  return (padded - span) / spec_.stride + 1;
}

template <typename T>
RowMatrix<T> Conv1d<T>::im2col(const RowMatrix<T>& x, int group, Index out_len) const {
  const int cin_g = spec_.in_channels / spec_.groups;
  const Index length = x.cols();
  RowMatrix<T> col(static_cast<Index>(cin_g) * spec_.kernel, out_len);
  for (int c = 0; c < cin_g; ++c) {
    const auto row = x.row(static_cast<Index>(group) * cin_g + c);
    for (int k = 0; k < spec_.kernel; ++k) {
      T* dst = col.row(static_cast<Index>(c) * spec_.kernel + k).data();
      const Index offset = static_cast<Index>(k) * spec_.dilation - spec_.pad_left;
      for (Index j = 0; j < out_len; ++j) {
        const Index idx = j * spec_.stride + offset;
        dst[j] = (idx >= 0 && idx < length) ? row(idx) : T(0);
      }
    }
  }
  return col;
}

template <typename T>
Tensor<T> Conv1d<T>::forward(std::span<const T> params, const Tensor<T>& x, Cache<T>& cache) const {
  if (x.channels() != spec_.in_channels || x.height != 1) {
    throw InvalidArgument("conv1d input has " + std::to_string(x.channels()) +
                          " channels, expected " + std::to_string(spec_.in_channels));
  }
  const Index out_len = output_length(x.data.cols());
  if (out_len < 1) throw InvalidArgument("conv1d input too short");
  const int g = spec_.groups;
  const Index cout_g = spec_.out_channels / g;
  const Index cols_g = static_cast<Index>(spec_.in_channels / g) * spec_.kernel;
  Tensor<T> y;
  y.data.resize(spec_.out_channels, out_len);
  for (int gi = 0; gi < g; ++gi) {
    const ConstMap<T> w(params.data() + weight_offset_ + gi * cout_g * cols_g, cout_g, cols_g);
    y.data.middleRows(gi * cout_g, cout_g).noalias() = w * im2col(x.data, gi, out_len);
  }
  const Eigen::Map<const ColVector<T>> b(params.data() + bias_offset_, spec_.out_channels);
  y.data.colwise() += b;
  cache.saved = {x};
  return y;
}

template <typename T>
Tensor<T> Conv1d<T>::backward(std::span<const T> params, const Cache<T>& cache,
                              const Tensor<T>& grad_out, std::span<T> grad_params) const {
  const RowMatrix<T>& x = cache.saved.at(0).data;
  const Index out_len = grad_out.data.cols();
  const int g = spec_.groups;
  const Index cout_g = spec_.out_channels / g;
  const int cin_g = spec_.in_channels / g;
  const Index cols_g = static_cast<Index>(cin_g) * spec_.kernel;
  const Index length = x.cols();

  Tensor<T> gx;
  gx.data = RowMatrix<T>::Zero(x.rows(), length);
  for (int gi = 0; gi < g; ++gi) {
    const ConstMap<T> w(params.data() + weight_offset_ + gi * cout_g * cols_g, cout_g, cols_g);
    MutMap<T> gw(grad_params.data() + weight_offset_ + gi * cout_g * cols_g, cout_g, cols_g);
    const auto gy = grad_out.data.middleRows(gi * cout_g, cout_g);
    gw.noalias() += gy * im2col(x, gi, out_len).transpose();
    const RowMatrix<T> gcol = w.transpose() * gy;
    for (int c = 0; c < cin_g; ++c) {
      T* dst = gx.data.row(static_cast<Index>(gi) * cin_g + c).data();
      for (int k = 0; k < spec_.kernel; ++k) {
        const T* src = gcol.row(static_cast<Index>(c) * spec_.kernel + k).data();
        const Index offset = static_cast<Index>(k) * spec_.dilation - spec_.pad_left;
        for (Index j = 0; j < out_len; ++j) {
          const Index idx = j * spec_.stride + offset;
          if (idx >= 0 && idx < length) dst[idx] += src[j];
        }
      }
    }
  }
  Eigen::Map<ColVector<T>> gb(grad_params.data() + bias_offset_, spec_.out_channels);
  gb += grad_out.data.rowwise().sum();
  return gx;
}

template <typename T>
void Conv1d<T>::init(std::span<T> params, std::mt19937_64& rng) const {
  const Index fan_in = static_cast<Index>(spec_.in_channels / spec_.groups) * spec_.kernel;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  const Index nw = static_cast<Index>(spec_.out_channels) * fan_in;
  uniform_fill(params.subspan(weight_offset_, nw), bound, rng);
  uniform_fill(params.subspan(bias_offset_, spec_.out_channels), bound, rng);
}

// ------------------------------------------------------- ConvTranspose1d

template <typename T>
ConvTranspose1d<T>::ConvTranspose1d(ParamLayout& layout, int in_channels, int out_channels,
                                    int stride)
    : in_(in_channels), out_(out_channels), stride_(stride), kernel_(2 * stride) {
  if (stride < 1) throw InvalidArgument("transposed conv stride must be >= 1");
  weight_offset_ = layout.allocate(static_cast<Index>(in_) * out_ * kernel_);
  bias_offset_ = layout.allocate(out_);
}

template <typename T>
Tensor<T> ConvTranspose1d<T>::forward(std::span<const T> params, const Tensor<T>& x,
                                      Cache<T>& cache) const {
  if (x.channels() != in_ || x.height != 1) throw InvalidArgument("conv-transpose channel mismatch");
  const Index lin = x.data.cols();
  const Index lout = lin * stride_;
  const ConstMap<T> w(params.data() + weight_offset_, in_, static_cast<Index>(out_) * kernel_);
  const RowMatrix<T> cols = w.transpose() * x.data;  // (out * K) x lin
  Tensor<T> y;
  y.data = RowMatrix<T>::Zero(out_, lout);
  for (int co = 0; co < out_; ++co) {
    T* dst = y.data.row(co).data();
    for (int k = 0; k < kernel_; ++k) {
      const T* src = cols.row(static_cast<Index>(co) * kernel_ + k).data();
      for (Index t = 0; t < lin; ++t) {
        const Index idx = t * stride_ + k;
        if (idx < lout) dst[idx] += src[t];
      }
    }
  }
  const Eigen::Map<const ColVector<T>> b(params.data() + bias_offset_, out_);
  y.data.colwise() += b;
  cache.saved = {x};
  return y;
}

template <typename T>
Tensor<T> ConvTranspose1d<T>::backward(std::span<const T> params, const Cache<T>& cache,
                                       const Tensor<T>& grad_out, std::span<T> grad_params) const {
  const RowMatrix<T>& x = cache.saved.at(0).data;
  const Index lin = x.cols();
  const Index lout = lin * stride_;
  RowMatrix<T> gcols(static_cast<Index>(out_) * kernel_, lin);
  for (int co = 0; co < out_; ++co) {
    const T* src = grad_out.data.row(co).data();
    for (int k = 0; k < kernel_; ++k) {
      T* dst = gcols.row(static_cast<Index>(co) * kernel_ + k).data();
      for (Index t = 0; t < lin; ++t) {
        const Index idx = t * stride_ + k;
        dst[t] = idx < lout ? src[idx] : T(0);
      }
    }
  }
  const ConstMap<T> w(params.data() + weight_offset_, in_, static_cast<Index>(out_) * kernel_);
  MutMap<T> gw(grad_params.data() + weight_offset_, in_, static_cast<Index>(out_) * kernel_);
  gw.noalias() += x * gcols.transpose();
  Eigen::Map<ColVector<T>> gb(grad_params.data() + bias_offset_, out_);
  gb += grad_out.data.rowwise().sum();
  Tensor<T> gx;
  gx.data = w * gcols;
  return gx;
}

template <typename T>
void ConvTranspose1d<T>::init(std::span<T> params, std::mt19937_64& rng) const {
  // Each output sample receives in_ * kernel_ / stride_ contributions.
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_) * kernel_ / stride_);
  uniform_fill(params.subspan(weight_offset_, static_cast<Index>(in_) * out_ * kernel_), bound, rng);
  uniform_fill(params.subspan(bias_offset_, out_), bound, rng);
}

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(ParamLayout& layout, const Conv2dSpec& spec) : spec_(spec) {
  weight_offset_ = layout.allocate(static_cast<Index>(spec.out_channels) * spec.in_channels *
                                   spec.kernel_h * spec.kernel_w);
  bias_offset_ = layout.allocate(spec.out_channels);
}

template <typename T>
Index Conv2d<T>::output_height(Index h) const {
  const Index padded = h + 2 * spec_.pad_h;
  return padded < spec_.kernel_h ? 0 : (padded - spec_.kernel_h) / spec_.stride_h + 1;
}

template <typename T>
Index Conv2d<T>::output_width(Index w) const {
  const Index padded = w + 2 * spec_.pad_w;
  return padded < spec_.kernel_w ? 0 : (padded - spec_.kernel_w) / spec_.stride_w + 1;
}

namespace {

struct Geometry2d {
  Index h, w, oh, ow;
};

template <typename T>
RowMatrix<T> im2col2d(const RowMatrix<T>& x, const Conv2dSpec& s, const Geometry2d& g) {
  RowMatrix<T> col(static_cast<Index>(s.in_channels) * s.kernel_h * s.kernel_w, g.oh * g.ow);
  for (int c = 0; c < s.in_channels; ++c) {
    const T* src = x.row(c).data();
    for (int kh = 0; kh < s.kernel_h; ++kh) {
      for (int kw = 0; kw < s.kernel_w; ++kw) {
        T* dst = col.row((static_cast<Index>(c) * s.kernel_h + kh) * s.kernel_w + kw).data();
        for (Index i = 0; i < g.oh; ++i) {
          const Index r = i * s.stride_h + kh - s.pad_h;
          for (Index j = 0; j < g.ow; ++j) {
            const Index q = j * s.stride_w + kw - s.pad_w;
            dst[i * g.ow + j] = (r >= 0 && r < g.h && q >= 0 && q < g.w) ? src[r * g.w + q] : T(0);
          }
        }
      }
    }
  }
  return col;
}

}  // namespace

template <typename T>
Tensor<T> Conv2d<T>::forward(std::span<const T> params, const Tensor<T>& x, Cache<T>& cache) const {
  if (x.channels() != spec_.in_channels) throw InvalidArgument("conv2d channel mismatch");
  const Geometry2d g{x.height, x.width(), output_height(x.height), output_width(x.width())};
  if (g.oh < 1 || g.ow < 1) throw InvalidArgument("conv2d input too small");
  const Index cols = static_cast<Index>(spec_.in_channels) * spec_.kernel_h * spec_.kernel_w;
  const ConstMap<T> w(params.data() + weight_offset_, spec_.out_channels, cols);
  Tensor<T> y;
  y.height = g.oh;
  y.data.noalias() = w * im2col2d(x.data, spec_, g);
  const Eigen::Map<const ColVector<T>> b(params.data() + bias_offset_, spec_.out_channels);
  y.data.colwise() += b;
  cache.saved = {x};
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(std::span<const T> params, const Cache<T>& cache,
                              const Tensor<T>& grad_out, std::span<T> grad_params) const {
  const Tensor<T>& x = cache.saved.at(0);
  const Geometry2d g{x.height, x.width(), output_height(x.height), output_width(x.width())};
  const Index cols = static_cast<Index>(spec_.in_channels) * spec_.kernel_h * spec_.kernel_w;
  const ConstMap<T> w(params.data() + weight_offset_, spec_.out_channels, cols);
  MutMap<T> gw(grad_params.data() + weight_offset_, spec_.out_channels, cols);
  gw.noalias() += grad_out.data * im2col2d(x.data, spec_, g).transpose();
  Eigen::Map<ColVector<T>> gb(grad_params.data() + bias_offset_, spec_.out_channels);
  gb += grad_out.data.rowwise().sum();

  const RowMatrix<T> gcol = w.transpose() * grad_out.data;
  Tensor<T> gx;
  gx.height = x.height;
  gx.data = RowMatrix<T>::Zero(x.data.rows(), x.data.cols());
  const auto& s = spec_;
  for (int c = 0; c < s.in_channels; ++c) {
    T* dst = gx.data.row(c).data();
    for (int kh = 0; kh < s.kernel_h; ++kh) {
      for (int kw = 0; kw < s.kernel_w; ++kw) {
        const T* src = gcol.row((static_cast<Index>(c) * s.kernel_h + kh) * s.kernel_w + kw).data();
        for (Index i = 0; i < g.oh; ++i) {
          const Index r = i * s.stride_h + kh - s.pad_h;
          if (r < 0 || r >= g.h) continue;
          for (Index j = 0; j < g.ow; ++j) {
            const Index q = j * s.stride_w + kw - s.pad_w;
            if (q >= 0 && q < g.w) dst[r * g.w + q] += src[i * g.ow + j];
          }
        }
      }
    }
  }
  return gx;
}

template <typename T>
void Conv2d<T>::init(std::span<T> params, std::mt19937_64& rng) const {
  const Index fan_in = static_cast<Index>(spec_.in_channels) * spec_.kernel_h * spec_.kernel_w;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  uniform_fill(params.subspan(weight_offset_, fan_in * spec_.out_channels), bound, rng);
  uniform_fill(params.subspan(bias_offset_, spec_.out_channels), bound, rng);
}

// ----------------------------------------------------------- activations

template <typename T>
Tensor<T> Elu<T>::forward(std::span<const T>, const Tensor<T>& x, Cache<T>& cache) const {
  Tensor<T> y;
  y.height = x.height;
  y.data = x.data.unaryExpr([](T v) { return v > T(0) ? v : std::expm1(v); });
  cache.saved = {x};
  return y;
}

template <typename T>
Tensor<T> Elu<T>::backward(std::span<const T>, const Cache<T>& cache, const Tensor<T>& grad_out,
                           std::span<T>) const {
  const auto& x = cache.saved.at(0).data;
  Tensor<T> gx;
  gx.height = grad_out.height;
  gx.data = grad_out.data.binaryExpr(x, [](T g, T v) { return v > T(0) ? g : g * std::exp(v); });
  return gx;
}

template <typename T>
Tensor<T> LeakyRelu<T>::forward(std::span<const T>, const Tensor<T>& x, Cache<T>& cache) const {
  Tensor<T> y;
  y.height = x.height;
  const T slope = slope_;
  y.data = x.data.unaryExpr([slope](T v) { return v > T(0) ? v : slope * v; });
  cache.saved = {x};
  return y;
}

template <typename T>
Tensor<T> LeakyRelu<T>::backward(std::span<const T>, const Cache<T>& cache,
                                 const Tensor<T>& grad_out, std::span<T>) const {
  const auto& x = cache.saved.at(0).data;
  const T slope = slope_;
  Tensor<T> gx;
  gx.height = grad_out.height;
  gx.data = grad_out.data.binaryExpr(x, [slope](T g, T v) { return v > T(0) ? g : slope * g; });
  return gx;
}

// ------------------------------------------------------------ Sequential

template <typename T>
Tensor<T> Sequential<T>::forward(std::span<const T> params, const Tensor<T>& x,
                                 Cache<T>& cache) const {
  cache.saved.clear();
  cache.saved.reserve(layers_.size() + 1);
  cache.saved.push_back(x);
  cache.children.assign(layers_.size(), Cache<T>{});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    cache.saved.push_back(layers_[i]->forward(params, cache.saved.back(), cache.children[i]));
  }
  return cache.saved.back();
}

template <typename T>
Tensor<T> Sequential<T>::backward(std::span<const T> params, const Cache<T>& cache,
                                  const Tensor<T>& grad_out, std::span<T> grad_params) const {
  return backward_with_taps(params, cache, grad_out, {}, grad_params);
}

template <typename T>
Tensor<T> Sequential<T>::backward_with_taps(std::span<const T> params, const Cache<T>& cache,
                                            const Tensor<T>& grad_out,
                                            const std::vector<Tensor<T>>& extra,
                                            std::span<T> grad_params) const {
  Tensor<T> g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (i < extra.size() && extra[i].data.size() > 0) {
      if (g.data.size() == 0) {
        g = extra[i];
      } else {
        g.data += extra[i].data;
      }
    }
    if (g.data.size() == 0) {
      // Nothing flows into this layer yet; treat as zero gradient.
      const auto& out = output_of(cache, i);
      g.height = out.height;
      g.data = RowMatrix<T>::Zero(out.data.rows(), out.data.cols());
    }
    g = layers_[i]->backward(params, cache.children[i], g, grad_params);
  }
  return g;
}

template <typename T>
void Sequential<T>::init(std::span<T> params, std::mt19937_64& rng) const {
  for (const auto& layer : layers_) layer->init(params, rng);
}

// ---------------------------------------------------------- ResidualUnit

template <typename T>
ResidualUnit<T>::ResidualUnit(ParamLayout& layout, int channels, int dilation) {
  body_.template add<Elu<T>>();
  body_.template add<Conv1d<T>>(layout, causal_conv(channels, channels, 7, 1, dilation));
  body_.template add<Elu<T>>();
  body_.template add<Conv1d<T>>(layout, causal_conv(channels, channels, 1));
}

template <typename T>
Tensor<T> ResidualUnit<T>::forward(std::span<const T> params, const Tensor<T>& x,
                                   Cache<T>& cache) const {
  cache.children.assign(1, Cache<T>{});
  Tensor<T> y = body_.forward(params, x, cache.children[0]);
  y.data += x.data;
  return y;
}

template <typename T>
Tensor<T> ResidualUnit<T>::backward(std::span<const T> params, const Cache<T>& cache,
                                    const Tensor<T>& grad_out, std::span<T> grad_params) const {
  Tensor<T> gx = body_.backward(params, cache.children.at(0), grad_out, grad_params);
  gx.data += grad_out.data;
  return gx;
}

template <typename T>
void ResidualUnit<T>::init(std::span<T> params, std::mt19937_64& rng) const {
  body_.init(params, rng);
}

#define TSCODEC_NN_INSTANTIATE(T)                            \
  template Tensor<T> make_signal<T>(std::span<const T>);      \
  template class Conv1d<T>;                                   \
  template class ConvTranspose1d<T>;                          \
  template class Conv2d<T>;                                   \
  template class Elu<T>;                                      \
  template class LeakyRelu<T>;                                \
  template class Sequential<T>;                               \
  template class ResidualUnit<T>;

TSCODEC_NN_INSTANTIATE(float)
TSCODEC_NN_INSTANTIATE(double)

#undef TSCODEC_NN_INSTANTIATE

}  // namespace tscodec::nn
