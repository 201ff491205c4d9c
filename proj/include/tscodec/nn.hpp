#pragma once

// Minimal layer library with hand-written backward passes. Parameters of a
// network live in one flat vector; layers only remember their offsets into
// it, so optimizers, digests and checkpoints operate on plain arrays.

#include <memory>
#include <random>
#include <span>
#include <vector>

#include "tscodec/tensor.hpp"

namespace tscodec::nn {

// channels x (height * width). One-dimensional signals use height == 1.
template <typename T>
struct Tensor {
  RowMatrix<T> data;
  Index height = 1;

  Index channels() const { return data.rows(); }
  Index width() const { return height == 0 ? 0 : data.cols() / height; }
};

template <typename T>
Tensor<T> make_signal(std::span<const T> samples);

class ParamLayout {
 public:
  Index allocate(Index count) {
    const Index offset = size_;
    size_ += count;
    return offset;
  }
  Index size() const { return size_; }

 private:
  Index size_ = 0;
};

template <typename T>
struct Cache {
  std::vector<Tensor<T>> saved;
  std::vector<Cache<T>> children;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor<T> forward(std::span<const T> params, const Tensor<T>& x,
                            Cache<T>& cache) const = 0;

  // Accumulates into grad_params and returns the gradient with respect to the
  // layer input.
  virtual Tensor<T> backward(std::span<const T> params, const Cache<T>& cache,
                             const Tensor<T>& grad_out, std::span<T> grad_params) const = 0;

  virtual void init(std::span<T> /*params*/, std::mt19937_64& /*rng*/) const {}
};

struct Conv1dSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 1;
  int stride = 1;
  int dilation = 1;
  int groups = 1;
  int pad_left = 0;
  int pad_right = 0;
};

// Padding that makes output t depend only on inputs up to (t + 1) * stride - 1.
Conv1dSpec causal_conv(int in, int out, int kernel, int stride = 1, int dilation = 1);
// Symmetric zero padding; output length ceil(len / stride).
Conv1dSpec centered_conv(int in, int out, int kernel, int stride = 1, int groups = 1);

template <typename T>
class Conv1d final : public Layer<T> {
 public:
  Conv1d(ParamLayout& layout, const Conv1dSpec& spec);

  Tensor<T> forward(std::span<const T> params, const Tensor<T>& x, Cache<T>& cache) const override;
  Tensor<T> backward(std::span<const T> params, const Cache<T>& cache, const Tensor<T>& grad_out,
                     std::span<T> grad_params) const override;
  void init(std::span<T> params, std::mt19937_64& rng) const override;

  Index output_length(Index input_length) const;
  const Conv1dSpec& spec() const { return spec_; }

 private:
  RowMatrix<T> im2col(const RowMatrix<T>& x, int group, Index out_len) const;

  Conv1dSpec spec_;
  Index weight_offset_;
  Index bias_offset_;
};

// Causal transposed convolution with kernel 2 * stride; output length is
// input length * stride.
template <typename T>
class ConvTranspose1d final : public Layer<T> {
 public:
  ConvTranspose1d(ParamLayout& layout, int in_channels, int out_channels, int stride);

  Tensor<T> forward(std::span<const T> params, const Tensor<T>& x, Cache<T>& cache) const override;
  Tensor<T> backward(std::span<const T> params, const Cache<T>& cache, const Tensor<T>& grad_out,
                     std::span<T> grad_params) const override;
  void init(std::span<T> params, std::mt19937_64& rng) const override;

 private:
  int in_;
  int out_;
  int stride_;
  int kernel_;
  Index weight_offset_;
  Index bias_offset_;
};

struct Conv2dSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 0;
  int pad_w = 0;
};

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(ParamLayout& layout, const Conv2dSpec& spec);

  Tensor<T> forward(std::span<const T> params, const Tensor<T>& x, Cache<T>& cache) const override;
  Tensor<T> backward(std::span<const T> params, const Cache<T>& cache, const Tensor<T>& grad_out,
                     std::span<T> grad_params) const override;
  void init(std::span<T> params, std::mt19937_64& rng) const override;

  Index output_height(Index h) const;
  Index output_width(Index w) const;

 private:
  Conv2dSpec spec_;
  Index weight_offset_;
  Index bias_offset_;
};

template <typename T>
class Elu final : public Layer<T> {
 public:
  Tensor<T> forward(std::span<const T> params, const Tensor<T>& x, Cache<T>& cache) const override;
  Tensor<T> backward(std::span<const T> params, const Cache<T>& cache, const Tensor<T>& grad_out,
                     std::span<T> grad_params) const override;
};

template <typename T>
class LeakyRelu final : public Layer<T> {
 public:
  explicit LeakyRelu(T slope = T(0.2)) : slope_(slope) {}
  Tensor<T> forward(std::span<const T> params, const Tensor<T>& x, Cache<T>& cache) const override;
  Tensor<T> backward(std::span<const T> params, const Cache<T>& cache, const Tensor<T>& grad_out,
                     std::span<T> grad_params) const override;

 private:
  T slope_;
};

template <typename T>
class Sequential final : public Layer<T> {
 public:
  Sequential() = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  std::size_t size() const { return layers_.size(); }

  Tensor<T> forward(std::span<const T> params, const Tensor<T>& x, Cache<T>& cache) const override;
  Tensor<T> backward(std::span<const T> params, const Cache<T>& cache, const Tensor<T>& grad_out,
                     std::span<T> grad_params) const override;
  void init(std::span<T> params, std::mt19937_64& rng) const override;

  // Output of layer i from a cache filled by forward(); cache.saved[i + 1].
  static const Tensor<T>& output_of(const Cache<T>& cache, std::size_t i) {
    return cache.saved[i + 1];
  }

  // Backward pass that also injects gradients at intermediate outputs.
  // extra[i], when non-empty, is added to the gradient of layer i's output.
  Tensor<T> backward_with_taps(std::span<const T> params, const Cache<T>& cache,
                               const Tensor<T>& grad_out, const std::vector<Tensor<T>>& extra,
                               std::span<T> grad_params) const;

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

// y = x + body(x) with body = ELU, causal conv (kernel 7, dilation d), ELU,
// conv (kernel 1).
template <typename T>
class ResidualUnit final : public Layer<T> {
 public:
  ResidualUnit(ParamLayout& layout, int channels, int dilation);

  Tensor<T> forward(std::span<const T> params, const Tensor<T>& x, Cache<T>& cache) const override;
  Tensor<T> backward(std::span<const T> params, const Cache<T>& cache, const Tensor<T>& grad_out,
                     std::span<T> grad_params) const override;
  void init(std::span<T> params, std::mt19937_64& rng) const override;

 private:
  Sequential<T> body_;
};

}  // namespace tscodec::nn
