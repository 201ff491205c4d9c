#include "tscodec/nn.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace tscodec;
using namespace tscodec::nn;
namespace ou = tscodec::oracle_util;

namespace {

// Checks input and parameter gradients of a layer against finite differences
// of <probe, layer(x)>.
void check_layer_gradients(const Layer<double>& layer, Index param_count, Index channels,
                           Index height, Index width, std::uint64_t seed, double tol = 1e-6) {
  std::mt19937_64 rng(seed);
  std::vector<double> params(static_cast<std::size_t>(param_count));
  layer.init(params, rng);
  Tensor<double> x;
  x.height = height;
  x.data = RowMatrix<double>::Random(channels, height * width);
  Cache<double> cache;
  const Tensor<double> y = layer.forward(params, x, cache);
  const RowMatrix<double> probe = RowMatrix<double>::Random(y.data.rows(), y.data.cols());

  std::vector<double> grad_params(params.size(), 0.0);
  Tensor<double> gy;
  gy.height = y.height;
  gy.data = probe;
  const Tensor<double> gx = layer.backward(params, cache, gy, grad_params);

  auto eval = [&](const std::vector<double>& p, const RowMatrix<double>& input) {
    Cache<double> c;
    Tensor<double> in;
    in.height = height;
    in.data = input;
    return layer.forward(p, in, c).data.cwiseProduct(probe).sum();
  };
  std::vector<double> xflat(x.data.data(), x.data.data() + x.data.size());
  const auto fd_x = ou::finite_difference(
      [&](const std::vector<double>& v) {
        return eval(params, Eigen::Map<const RowMatrix<double>>(v.data(), channels, height * width));
      },
      xflat);
  std::vector<double> gxflat(gx.data.data(), gx.data.data() + gx.data.size());
  EXPECT_LE(ou::relative_error(gxflat, fd_x), tol);
  if (param_count > 0) {
    const auto fd_p = ou::finite_difference([&](const std::vector<double>& p) { return eval(p, x.data); },
                                            params);
    EXPECT_LE(ou::relative_error(grad_params, fd_p), tol);
  }
}

}  // namespace

TEST(Conv1d, MatchesDirectConvolution) {
  ParamLayout layout;
  Conv1dSpec spec;
  spec.in_channels = 4;
  spec.out_channels = 6;
  spec.kernel = 5;
  spec.stride = 2;
  spec.dilation = 2;
  spec.groups = 2;
  spec.pad_left = 3;
  spec.pad_right = 1;
  const Conv1d<double> conv(layout, spec);
  std::mt19937_64 rng(1);
  std::vector<double> params(static_cast<std::size_t>(layout.size()));
  conv.init(params, rng);
  Tensor<double> x;
  x.data = RowMatrix<double>::Random(4, 23);
  Cache<double> cache;
  const auto y = conv.forward(params, x, cache);
  ASSERT_EQ(y.data.cols(), conv.output_length(23));
  // weights laid out [co][ci_in_group][k], bias after
  const int cin_g = 2, cout_g = 3;
  const std::size_t bias = 6 * cin_g * 5;
  for (int co = 0; co < 6; ++co) {
    const int g = co / cout_g;
    for (Index j = 0; j < y.data.cols(); ++j) {
      double acc = params[bias + co];
      for (int c = 0; c < cin_g; ++c) {
        for (int k = 0; k < 5; ++k) {
          const Index idx = j * 2 + k * 2 - 3;
          if (idx < 0 || idx >= 23) continue;
          acc += params[(co * cin_g + c) * 5 + k] * x.data(g * cin_g + c, idx);
        }
      }
      EXPECT_NEAR(y.data(co, j), acc, 1e-12);
    }
  }
}

TEST(Conv1d, CausalOutputIgnoresFuture) {
  ParamLayout layout;
  const Conv1d<double> conv(layout, causal_conv(2, 3, 8, 4));
  std::mt19937_64 rng(2);
  std::vector<double> params(static_cast<std::size_t>(layout.size()));
  conv.init(params, rng);
  Tensor<double> x;
  x.data = RowMatrix<double>::Random(2, 40);
  Cache<double> c1, c2;
  const auto y1 = conv.forward(params, x, c1);
  EXPECT_EQ(y1.data.cols(), 10);
  x.data.col(20).setConstant(5.0);  // affects outputs j with (j + 1) * 4 - 1 >= 20
  const auto y2 = conv.forward(params, x, c2);
  for (Index j = 0; j < 10; ++j) {
    if ((j + 1) * 4 - 1 < 20) {
      EXPECT_EQ((y1.data.col(j) - y2.data.col(j)).norm(), 0.0);
    }
  }
}

TEST(Conv1d, Gradients) {
  ParamLayout layout;
  Conv1dSpec spec = centered_conv(4, 6, 5, 2, 2);
  spec.dilation = 1;
  const Conv1d<double> conv(layout, spec);
  check_layer_gradients(conv, layout.size(), 4, 1, 17, 3);

  ParamLayout causal_layout;
  const Conv1d<double> causal(causal_layout, causal_conv(3, 2, 7, 1, 3));
  check_layer_gradients(causal, causal_layout.size(), 3, 1, 30, 4);
}

TEST(ConvTranspose1d, LengthCausalityAndGradients) {
  ParamLayout layout;
  const ConvTranspose1d<double> up(layout, 3, 2, 4);
  std::mt19937_64 rng(5);
  std::vector<double> params(static_cast<std::size_t>(layout.size()));
  up.init(params, rng);
  Tensor<double> x;
  x.data = RowMatrix<double>::Random(3, 6);
  Cache<double> c1, c2;
  const auto y1 = up.forward(params, x, c1);
  EXPECT_EQ(y1.data.cols(), 24);
  x.data.col(3).setConstant(2.0);
  const auto y2 = up.forward(params, x, c2);
  EXPECT_EQ((y1.data.leftCols(12) - y2.data.leftCols(12)).norm(), 0.0);
  check_layer_gradients(up, layout.size(), 3, 1, 6, 6);
}

TEST(Conv2d, Gradients) {
  ParamLayout layout;
  Conv2dSpec spec;
  spec.in_channels = 2;
  spec.out_channels = 3;
  spec.kernel_h = 3;
  spec.kernel_w = 4;
  spec.stride_h = 1;
  spec.stride_w = 2;
  spec.pad_h = 1;
  spec.pad_w = 1;
  const Conv2d<double> conv(layout, spec);
  check_layer_gradients(conv, layout.size(), 2, 5, 9, 7);
}

TEST(Activations, Gradients) {
  const Elu<double> elu;
  check_layer_gradients(elu, 0, 2, 1, 11, 8);
  const LeakyRelu<double> lrelu(0.2);
  check_layer_gradients(lrelu, 0, 2, 3, 4, 9);
}

TEST(Sequential, ResidualStackGradients) {
  ParamLayout layout;
  Sequential<double> net;
  net.add<Conv1d<double>>(layout, causal_conv(1, 3, 7));
  net.add<ResidualUnit<double>>(layout, 3, 3);
  net.add<Elu<double>>();
  net.add<Conv1d<double>>(layout, causal_conv(3, 4, 4, 2));
  net.add<ConvTranspose1d<double>>(layout, 4, 2, 2);
  check_layer_gradients(net, layout.size(), 1, 1, 24, 10);
}

TEST(Sequential, TapsInjectGradients) {
  ParamLayout layout;
  Sequential<double> net;
  net.add<Conv1d<double>>(layout, centered_conv(1, 2, 3));
  net.add<LeakyRelu<double>>();
  net.add<Conv1d<double>>(layout, centered_conv(2, 1, 3));
  std::mt19937_64 rng(11);
  std::vector<double> params(static_cast<std::size_t>(layout.size()));
  net.init(params, rng);
  const auto x = ou::random_signal(16, 12);
  const RowMatrix<double> probe_mid = RowMatrix<double>::Random(2, 16);
  const RowMatrix<double> probe_out = RowMatrix<double>::Random(1, 16);
  auto f = [&](const std::vector<double>& v) {
    Cache<double> c;
    const auto y = net.forward(params, make_signal<double>(v), c);
    return y.data.cwiseProduct(probe_out).sum() +
           Sequential<double>::output_of(c, 1).data.cwiseProduct(probe_mid).sum();
  };
  Cache<double> cache;
  net.forward(params, make_signal<double>(x), cache);
  std::vector<Tensor<double>> taps(3);
  taps[1].data = probe_mid;
  Tensor<double> gout;
  gout.data = probe_out;
  std::vector<double> gp(params.size(), 0.0);
  const auto gx = net.backward_with_taps(params, cache, gout, taps, gp);
  std::vector<double> g(gx.data.data(), gx.data.data() + gx.data.size());
  EXPECT_LE(ou::relative_error(g, ou::finite_difference(f, x)), 1e-6);
}
