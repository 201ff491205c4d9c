#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "tscodec/error.hpp"
#include "tscodec/rdp_oracle.hpp"

namespace tscodec::rdp {
namespace {

DiscreteLaw law(std::vector<double> v, std::vector<double> p) { return DiscreteLaw{std::move(v), std::move(p)}; }
const DiscreteLaw kNoNoise = law({0.0}, {1.0});

Instance binary(int m) { return Instance{law({0.0, 1.0}, {0.5, 0.5}), kNoNoise, m}; }
Instance symmetric_noisy() { return Instance{law({-1.0, 1.0}, {0.5, 0.5}), law({-1.0, 1.0}, {0.5, 0.5}), 2}; }
// Observed support {-2, -1, 0, 1}; three codewords.
Instance asymmetric_noisy() {
  return Instance{law({-1.0, 0.0}, {0.25, 0.75}), law({-1.0, 0.0, 1.0}, {0.25, 0.25, 0.5}), 3};
}

Instance random_instance(std::mt19937_64& rng) {
  auto draw = [&](int max_support) {
    std::uniform_int_distribution<int> size(1, max_support);
    std::uniform_real_distribution<double> value(-2.0, 2.0), weight(0.05, 1.0);
    const int n = size(rng);
    std::vector<double> v, p;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      v.push_back(value(rng));
      p.push_back(weight(rng));
      total += p.back();
    }
    for (auto& x : p) x /= total;
    return make_law(v, p);
  };
  Instance inst{draw(4), draw(3), 1};
  const int support = static_cast<int>(posterior_denoise(inst).observed.size());
  inst.codewords = std::uniform_int_distribution<int>(1, std::min(3, support))(rng);
  return inst;
}

TEST(Posterior, NoiselessIsIdentity) {
  const Instance inst{law({-1.0, 0.5, 2.0}, {0.2, 0.3, 0.5}), kNoNoise, 1};
  const auto p = posterior_denoise(inst);
  EXPECT_EQ(p.observed, inst.source.values);
  EXPECT_EQ(p.mean, inst.source.values);
  EXPECT_EQ(p.prob, inst.source.pmf);
}

TEST(Posterior, SymmetricNoiseHandComputed) {
  const auto p = posterior_denoise(symmetric_noisy());
  ASSERT_EQ(p.observed, (std::vector<double>{-2.0, 0.0, 2.0}));
  EXPECT_DOUBLE_EQ(p.prob[0], 0.25);
  EXPECT_DOUBLE_EQ(p.prob[1], 0.5);
  EXPECT_DOUBLE_EQ(p.prob[2], 0.25);
  EXPECT_DOUBLE_EQ(p.mean[0], -1.0);
  EXPECT_DOUBLE_EQ(p.mean[1], 0.0);
  EXPECT_DOUBLE_EQ(p.mean[2], 1.0);
}

TEST(Posterior, ConstantSourceGivesConstantEstimate) {
  const auto p = posterior_denoise(Instance{law({0.7}, {1.0}), law({-1.0, 0.0, 3.0}, {0.2, 0.5, 0.3}), 1});
  for (double m : p.mean) EXPECT_DOUBLE_EQ(m, 0.7);
}

TEST(MmseCodec, BinarySourceSingleCodeword) {
  const auto r = mmse_codec(binary(1));
  EXPECT_DOUBLE_EQ(r.d_inf, 0.25);
  ASSERT_EQ(r.optimal.size(), 1u);
}

TEST(MmseCodec, BinarySourceTwoCodewordsIsLossless) {
  EXPECT_NEAR(mmse_codec(binary(2)).d_inf, 0.0, 1e-15);
}

TEST(MmseCodec, SymmetricNoisyPartitions) {
  const auto r = mmse_codec(symmetric_noisy());
  EXPECT_NEAR(r.d_inf, 2.0 / 3.0, 1e-15);
  // Each partition appears under both codeword labelings.
  ASSERT_EQ(r.optimal.size(), 4u);
  for (const auto& e : r.optimal) {
    const bool low = e[0] == e[1] && e[1] != e[2];
    const bool high = e[0] != e[1] && e[1] == e[2];
    EXPECT_TRUE(low || high);
  }
}

TEST(MmseCodec, RejectsOversizedInstances) {
  std::vector<double> v{0, 1, 2, 3}, n{0, 0.25, 0.5, 0.125};
  const Instance big{law(v, {0.25, 0.25, 0.25, 0.25}), make_law(n, {0.25, 0.25, 0.25, 0.25}), 3};
  EXPECT_THROW(mmse_codec(big), InvalidArgument);
}

TEST(Decomposition, HandComputedInstance) {
  const auto d = check_decomposition(symmetric_noisy(), {0, 0, 1});
  EXPECT_NEAR(d.lhs, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(d.denoise, 0.5, 1e-15);
  EXPECT_NEAR(d.quantize, 1.0 / 6.0, 1e-15);
  EXPECT_LE(d.residual, 1e-12);
}

TEST(Decomposition, NoiselessHasNoDenoisingError) {
  const Instance inst{law({-1.0, 0.0, 2.0}, {0.25, 0.25, 0.5}), kNoNoise, 2};
  const auto d = check_decomposition(inst, {0, 0, 1});
  EXPECT_EQ(d.denoise, 0.0);
  EXPECT_NEAR(d.lhs, 0.5 * 0.25, 1e-15);
}

TEST(Decomposition, HoldsOnRandomInstances) {
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 100; ++t) {
    const auto inst = random_instance(rng);
    const auto post = posterior_denoise(inst);
    EncoderMap enc(post.observed.size());
    for (auto& e : enc) e = std::uniform_int_distribution<int>(0, inst.codewords - 1)(rng);
    EXPECT_LE(check_decomposition(inst, enc).residual, 1e-9) << instance_json(inst);
    for (const auto& opt : mmse_codec(inst).optimal) EXPECT_LE(check_decomposition(inst, opt).residual, 1e-9);
  }
}

TEST(Coupling, MatchesBruteForceOverDiscretisedPlans) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 60; ++t) {
    auto draw = [&](int n) {
      std::vector<int> w(static_cast<std::size_t>(n), 1);
      for (int k = n; k < 8; ++k) ++w[std::uniform_int_distribution<std::size_t>(0, w.size() - 1)(rng)];
      std::vector<double> v, p;
      for (int i = 0; i < n; ++i) {
        v.push_back(std::uniform_real_distribution<double>(-2, 2)(rng));
        p.push_back(w[static_cast<std::size_t>(i)] / 8.0);
      }
      return make_law(v, p);
    };
    const auto a = draw(1 + t % 3);
    const auto b = draw(1 + (t / 3) % 3);
    // Enumerate plans with masses on a 1/64 grid; rows filled greedily, last column forced.
    const int na = static_cast<int>(a.size()), nb = static_cast<int>(b.size());
    std::vector<int> ra, cb;
    for (double p : a.pmf) ra.push_back(static_cast<int>(std::lround(p * 64)));
    for (double p : b.pmf) cb.push_back(static_cast<int>(std::lround(p * 64)));
    double best = INFINITY;
    std::vector<int> cells(static_cast<std::size_t>(na * nb), 0);
    std::function<void(int)> rec = [&](int k) {
      if (k == na * nb) {
        for (int j = 0; j < nb; ++j) {
          int s = 0;
          for (int i = 0; i < na; ++i) s += cells[static_cast<std::size_t>(i * nb + j)];
          if (s != cb[static_cast<std::size_t>(j)]) return;
        }
        double c = 0.0;
        for (int i = 0; i < na; ++i) {
          for (int j = 0; j < nb; ++j) {
            const double d = a.values[static_cast<std::size_t>(i)] - b.values[static_cast<std::size_t>(j)];
            c += cells[static_cast<std::size_t>(i * nb + j)] / 64.0 * d * d;
          }
        }
        best = std::min(best, c);
        return;
      }
      const int i = k / nb, j = k % nb;
      int used = 0;
      for (int jj = 0; jj < j; ++jj) used += cells[static_cast<std::size_t>(i * nb + jj)];
      const int left = ra[static_cast<std::size_t>(i)] - used;
      if (j == nb - 1) {
        cells[static_cast<std::size_t>(k)] = left;
        rec(k + 1);
        return;
      }
      for (int m = 0; m <= left; ++m) {
        cells[static_cast<std::size_t>(k)] = m;
        rec(k + 1);
      }
    };
    rec(0);
    const auto c = monotone_coupling(a, b);
    EXPECT_NEAR(c.cost, best, 1e-12);
    for (std::size_t i = 0; i < a.size(); ++i) {
      double row = 0.0;
      for (double m : c.mass[i]) row += m;
      EXPECT_NEAR(row, a.pmf[i], 1e-12);
    }
  }
}

TEST(Perception, BinarySourceSingleCodeword) {
  const auto r = perception_opt_distortion(binary(1), {0, 0});
  EXPECT_DOUBLE_EQ(r.d_0, 0.5);
  EXPECT_DOUBLE_EQ(r.kernel[0][0], 0.5);
  EXPECT_DOUBLE_EQ(r.kernel[0][1], 0.5);
}

TEST(Perception, SymmetricNoisyHandComputed) {
  const auto r = perception_opt_distortion(symmetric_noisy(), {0, 0, 1});
  EXPECT_NEAR(r.w2_squared, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.d_0, 4.0 / 3.0, 1e-15);
}

TEST(Perception, LosslessEncoderNeedsNoTransport) {
  const Instance inst{law({-1.0, 0.0, 2.0}, {0.25, 0.25, 0.5}), kNoNoise, 3};
  EXPECT_NEAR(perception_opt_distortion(inst, {0, 1, 2}).d_0, 0.0, 1e-15);
}

TEST(Perception, OutputLawEqualsSourceOnGrid) {
  for (const auto& inst : theory_grid(GridSpec{})) {
    const auto codec = mmse_codec(inst);
    const auto r = perception_opt_distortion(inst, codec.optimal.front());
    for (std::size_t i = 0; i < inst.source.size(); ++i) {
      ASSERT_LE(std::abs(r.output_law[i] - inst.source.pmf[i]), 1e-12);
    }
  }
}

TEST(PosteriorSampling, BinarySourceSingleCodeword) {
  const auto r = posterior_sampling_check(binary(1), {0, 0});
  EXPECT_DOUBLE_EQ(r.d_ps, 0.5);
  EXPECT_DOUBLE_EQ(r.d_inf, 0.25);
  EXPECT_EQ(r.marginal_residual, 0.0);
  EXPECT_EQ(r.joint_residual, 0.0);
}

TEST(PosteriorSampling, NeverBeatsOptimalTransport) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 100; ++t) {
    const auto inst = random_instance(rng);
    for (const auto& e : mmse_codec(inst).optimal) {
      const auto r = posterior_sampling_check(inst, e);
      EXPECT_GE(r.gap, -1e-12);
      EXPECT_NEAR(r.d_ps, 2.0 * r.d_inf, 1e-12);
      EXPECT_LE(r.d_inf, r.d_0 + 1e-12);
      EXPECT_LE(r.marginal_residual, 1e-12);
    }
  }
}

TEST(Transfer, SingleEncoderTriviallyHolds) {
  const auto r = verify_optimality_transfer(Instance{law({0.0, 1.0}, {0.5, 0.5}), kNoNoise, 1});
  EXPECT_TRUE(r.holds);
  EXPECT_EQ(r.encoders.size(), 1u);
}

TEST(Transfer, SymmetricNoisyHolds) {
  const auto r = verify_optimality_transfer(symmetric_noisy());
  EXPECT_TRUE(r.holds);
  EXPECT_EQ(r.a_inf.size(), 4u);
}

// Exact rationals for this instance: min d_inf = 1/8 via {-2},{-1,0},{1} with
// d_0 = 1/4, while {-2},{-1,1},{0} reaches d_0 = 9/40.
TEST(Transfer, OperationalCounterexample) {
  const auto r = verify_optimality_transfer(asymmetric_noisy());
  EXPECT_NEAR(r.d_inf_min, 1.0 / 8.0, 1e-15);
  EXPECT_NEAR(r.d_0_min, 9.0 / 40.0, 1e-15);
  EXPECT_FALSE(r.holds);
  for (std::size_t k : r.a_inf) EXPECT_NEAR(r.encoders[k].d_0, 0.25, 1e-15);
}

TEST(Grid, DefaultSizeAndValidity) {
  const auto grid = theory_grid(GridSpec{});
  EXPECT_EQ(grid.size(), 1206u);
  for (const auto& inst : grid) {
    EXPECT_NO_THROW(inst.validate());
    EXPECT_LE(inst.codewords, 3);
  }
  GridSpec big;
  big.base_values = {-2, -1, 0, 1, 2};
  big.max_source_support = 5;
  big.max_noise_support = 5;
  big.max_codewords = 4;
  EXPECT_THROW(theory_grid(big), InvalidArgument);
}

// Independent brute force over every encoder, used to cross-check the sweep.
struct Brute {
  double d_inf = INFINITY, d_0 = INFINITY;
  bool holds = true;
};

Brute brute(const Instance& inst) {
  const auto post = posterior_denoise(inst);
  const std::size_t n = post.observed.size();
  std::vector<std::pair<double, double>> all;
  std::vector<int> enc(n, 0);
  while (true) {
    std::vector<double> pz(static_cast<std::size_t>(inst.codewords)), sz(pz.size());
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < inst.source.size(); ++i) {
        pz[static_cast<std::size_t>(enc[j])] += post.joint[j][i];
        sz[static_cast<std::size_t>(enc[j])] += post.joint[j][i] * inst.source.values[i];
      }
    }
    double di = 0.0;
    std::vector<double> mv, mp;
    for (std::size_t j = 0; j < n; ++j) {
      const auto z = static_cast<std::size_t>(enc[j]);
      for (std::size_t i = 0; i < inst.source.size(); ++i) {
        const double d = inst.source.values[i] - sz[z] / pz[z];
        di += post.joint[j][i] * d * d;
      }
    }
    for (std::size_t z = 0; z < pz.size(); ++z) {
      if (pz[z] > 0) {
        mv.push_back(sz[z] / pz[z]);
        mp.push_back(pz[z]);
      }
    }
    // Quantile transport through inverse cdfs sampled at all breakpoints.
    const auto m = make_law(mv, mp);
    std::vector<double> levels{0.0};
    double c = 0.0;
    for (double p : m.pmf) levels.push_back(c += p);
    c = 0.0;
    for (double p : inst.source.pmf) levels.push_back(c += p);
    std::sort(levels.begin(), levels.end());
    auto quantile = [](const DiscreteLaw& l, double u) {
      double cum = 0.0;
      for (std::size_t i = 0; i < l.size(); ++i) {
        cum += l.pmf[i];
        if (u < cum) return l.values[i];
      }
      return l.values.back();
    };
    double w = 0.0;
    for (std::size_t k = 1; k < levels.size(); ++k) {
      const double du = std::min(levels[k], 1.0) - levels[k - 1];
      if (du <= 1e-15) continue;
      const double u = 0.5 * (levels[k - 1] + std::min(levels[k], 1.0));
      const double d = quantile(m, u) - quantile(inst.source, u);
      w += du * d * d;
    }
    all.emplace_back(di, di + w);
    std::size_t k = 0;
    while (k < n && ++enc[k] == inst.codewords) enc[k++] = 0;
    if (k == n) break;
  }
  Brute b;
  for (const auto& [a, z] : all) {
    b.d_inf = std::min(b.d_inf, a);
    b.d_0 = std::min(b.d_0, z);
  }
  for (const auto& [a, z] : all) {
    if (a <= b.d_inf + 1e-12 && z > b.d_0 + 1e-12) b.holds = false;
  }
  return b;
}

TEST(Sweep, AgreesWithIndependentBruteForce) {
  const auto grid = theory_grid(GridSpec{});
  const auto result = sweep(grid);
  ASSERT_EQ(result.instances.size(), grid.size());
  std::size_t failures = 0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const auto b = brute(grid[k]);
    const auto& r = result.instances[k];
    EXPECT_NEAR(r.d_inf, b.d_inf, 1e-12);
    EXPECT_NEAR(r.d_0, b.d_0, 1e-12);
    EXPECT_EQ(r.transfer_holds, b.holds);
    failures += b.holds ? 0 : 1;
  }
  EXPECT_EQ(result.transfer_failures, failures);
  EXPECT_EQ(result.decomposition_failures, 0u);
  EXPECT_EQ(result.endpoint_failures, 0u);
}

TEST(Sweep, InjectedFaultIsReported) {
  GridSpec small;
  small.max_source_support = 2;
  small.max_noise_support = 1;
  small.max_codewords = 2;
  SweepOptions opt;
  opt.inject_fault = true;
  const auto r = sweep(theory_grid(small), opt);
  EXPECT_GT(r.decomposition_failures, 0u);
  EXPECT_FALSE(r.passed());
  EXPECT_NE(sweep_report_json(r).find("\"decomposition_failures\""), std::string::npos);
}

TEST(InstanceJson, RoundTripAndErrors) {
  const auto inst = asymmetric_noisy();
  const auto back = parse_instance_json(instance_json(inst));
  EXPECT_EQ(back.source.values, inst.source.values);
  EXPECT_EQ(back.noise.pmf, inst.noise.pmf);
  EXPECT_EQ(back.codewords, 3);
  const auto noiseless = parse_instance_json(R"({"source": {"values": [1, 0], "pmf": [0.5, 0.5]}, "codewords": 1})");
  EXPECT_EQ(noiseless.source.values, (std::vector<double>{0.0, 1.0}));
  EXPECT_THROW(parse_instance_json("{"), InvalidArgument);
  EXPECT_THROW(parse_instance_json(R"({"source": {"values": [0], "pmf": [0.5]}, "codewords": 1})"),
               InvalidArgument);
  EXPECT_THROW(parse_instance_json(R"({"source": {"values": [0, 1], "pmf": [0.5, 0.5]}, "codewords": 3})"),
               InvalidArgument);
}

}  // namespace
}  // namespace tscodec::rdp
