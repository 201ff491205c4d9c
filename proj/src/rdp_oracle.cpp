#include "tscodec/rdp_oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>

#include "tscodec/error.hpp"

namespace tscodec::rdp {

namespace {

struct Weighted {
  double value;
  double mass;
  std::size_t id;
};

// Quantile coupling of two mass lists already sorted by value. Zero masses
// are skipped; rounding leftovers at the top of the cdf are dropped.
std::vector<std::vector<double>> quantile_coupling(const std::vector<Weighted>& a, const std::vector<Weighted>& b,
                                                   std::size_t rows, std::size_t cols, double& cost) {
  std::vector<std::vector<double>> mass(rows, std::vector<double>(cols, 0.0));
  cost = 0.0;
  std::size_t i = 0, j = 0;
  if (a.empty() || b.empty()) return mass;
  double ca = a[0].mass, cb = b[0].mass, prev = 0.0;
  while (i < a.size() && j < b.size()) {
    const double level = std::min(ca, cb);
    const double m = level - prev;
    if (m > 0.0) {
      mass[a[i].id][b[j].id] += m;
      const double d = a[i].value - b[j].value;
      cost += m * d * d;
      prev = level;
    }
    const bool next_a = ca <= level;
    const bool next_b = cb <= level;
    if (next_a && ++i < a.size()) ca += a[i].mass;
    if (next_b && ++j < b.size()) cb += b[j].mass;
  }
  return mass;
}

std::vector<Weighted> weighted(const std::vector<double>& values, const std::vector<double>& masses) {
  std::vector<Weighted> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (masses[i] > 0.0) out.push_back({values[i], masses[i], i});
  }
  std::stable_sort(out.begin(), out.end(), [](const Weighted& x, const Weighted& y) { return x.value < y.value; });
  return out;
}

double encoder_count(const Instance& inst, std::size_t support) {
  return std::pow(static_cast<double>(inst.codewords), static_cast<double>(support));
}

// Advances a mixed-radix counter; false after the last encoder.
bool next_encoder(EncoderMap& enc, int codewords) {
  for (auto& e : enc) {
    if (++e < codewords) return true;
    e = 0;
  }
  return false;
}

void check_encoder(const Posterior& post, const EncoderMap& enc, int codewords) {
  if (enc.size() != post.observed.size()) {
    throw InvalidArgument("encoder must map each of the " + std::to_string(post.observed.size()) +
                          " observed support points");
  }
  for (int z : enc) {
    if (z < 0 || z >= codewords) throw InvalidArgument("encoder codeword out of range");
  }
}

std::vector<std::vector<double>> source_codeword_joint(const Instance& inst, const Posterior& post,
                                                       const EncoderMap& enc) {
  std::vector<std::vector<double>> q(static_cast<std::size_t>(inst.codewords),
                                     std::vector<double>(inst.source.size(), 0.0));
  for (std::size_t j = 0; j < enc.size(); ++j) {
    for (std::size_t i = 0; i < inst.source.size(); ++i) q[static_cast<std::size_t>(enc[j])][i] += post.joint[j][i];
  }
  return q;
}

void compositions(int total, int parts, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
  if (parts == 1) {
    if (total >= 1) {
      cur.push_back(total);
      out.push_back(cur);
      cur.pop_back();
    }
    return;
  }
  for (int c = 1; c <= total - parts + 1; ++c) {
    cur.push_back(c);
    compositions(total - c, parts - 1, cur, out);
    cur.pop_back();
  }
}

void subsets(const std::vector<double>& base, std::size_t k, std::size_t start, std::vector<double>& cur,
             std::vector<std::vector<double>>& out) {
  if (cur.size() == k) {
    out.push_back(cur);
    return;
  }
  for (std::size_t i = start; i < base.size(); ++i) {
    cur.push_back(base[i]);
    subsets(base, k, i + 1, cur, out);
    cur.pop_back();
  }
}

std::vector<DiscreteLaw> grid_laws(const std::vector<double>& base, double scale, int max_support, int denominator) {
  std::vector<DiscreteLaw> out;
  for (int k = 1; k <= max_support; ++k) {
    std::vector<std::vector<double>> sets;
    std::vector<double> cur;
    subsets(base, static_cast<std::size_t>(k), 0, cur, sets);
    std::vector<std::vector<int>> pmfs;
    std::vector<int> c;
    compositions(denominator, k, c, pmfs);
    for (const auto& s : sets) {
      for (const auto& p : pmfs) {
        DiscreteLaw law;
        for (std::size_t i = 0; i < s.size(); ++i) {
          law.values.push_back(s[i] * scale);
          law.pmf.push_back(static_cast<double>(p[i]) / denominator);
        }
        out.push_back(law);
      }
    }
  }
  return out;
}

}  // namespace

double DiscreteLaw::mean() const {
  double m = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) m += values[i] * pmf[i];
  return m;
}

void DiscreteLaw::validate(const char* what) const {
  const std::string name(what);
  if (values.empty()) throw InvalidArgument(name + " has empty support");
  if (values.size() != pmf.size()) throw InvalidArgument(name + " values and pmf differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw InvalidArgument(name + " has a non-finite value");
    if (i > 0 && !(values[i] > values[i - 1])) throw InvalidArgument(name + " values must be sorted and distinct");
    if (!(pmf[i] >= 0.0)) throw InvalidArgument(name + " pmf entries must be >= 0");
    total += pmf[i];
  }
  if (std::abs(total - 1.0) > 1e-12) throw InvalidArgument(name + " pmf must sum to 1");
}

DiscreteLaw make_law(std::vector<double> values, std::vector<double> pmf) {
  if (values.size() != pmf.size()) throw InvalidArgument("values and pmf differ in length");
  std::map<double, double> merged;
  for (std::size_t i = 0; i < values.size(); ++i) merged[values[i]] += pmf[i];
  DiscreteLaw law;
  for (const auto& [v, p] : merged) {
    law.values.push_back(v);
    law.pmf.push_back(p);
  }
  return law;
}

void Instance::validate() const {
  source.validate("source");
  noise.validate("noise");
  if (codewords < 1) throw InvalidArgument("codeword budget must be >= 1");
  std::vector<double> sums;
  for (double x : source.values) {
    for (double n : noise.values) sums.push_back(x + n);
  }
  std::sort(sums.begin(), sums.end());
  sums.erase(std::unique(sums.begin(), sums.end()), sums.end());
  if (sums.size() > kMaxObservedSupport) {
    throw InvalidArgument("observed support has " + std::to_string(sums.size()) + " points (limit " +
                          std::to_string(kMaxObservedSupport) + ")");
  }
  if (static_cast<std::size_t>(codewords) > sums.size()) {
    throw InvalidArgument("codeword budget exceeds the observed support size");
  }
}

Posterior posterior_denoise(const Instance& inst) {
  inst.validate();
  std::map<double, std::vector<double>> by_obs;
  for (std::size_t i = 0; i < inst.source.size(); ++i) {
    for (std::size_t k = 0; k < inst.noise.size(); ++k) {
      auto& row = by_obs[inst.source.values[i] + inst.noise.values[k]];
      row.resize(inst.source.size(), 0.0);
      row[i] += inst.source.pmf[i] * inst.noise.pmf[k];
    }
  }
  Posterior post;
  for (auto& [obs, row] : by_obs) {
    const double p = std::accumulate(row.begin(), row.end(), 0.0);
    if (p <= 0.0) continue;
    double m = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) m += row[i] * inst.source.values[i];
    post.observed.push_back(obs);
    post.prob.push_back(p);
    post.mean.push_back(m / p);
    post.joint.push_back(std::move(row));
  }
  return post;
}

EncoderStats encoder_stats(const Instance& inst, const Posterior& post, const EncoderMap& enc) {
  check_encoder(post, enc, inst.codewords);
  const auto q = source_codeword_joint(inst, post, enc);
  EncoderStats s;
  s.prob.assign(q.size(), 0.0);
  s.mean.assign(q.size(), 0.0);
  for (std::size_t z = 0; z < q.size(); ++z) {
    double sx = 0.0;
    for (std::size_t i = 0; i < q[z].size(); ++i) {
      s.prob[z] += q[z][i];
      sx += q[z][i] * inst.source.values[i];
    }
    if (s.prob[z] > 0.0) s.mean[z] = sx / s.prob[z];
  }
  for (std::size_t z = 0; z < q.size(); ++z) {
    for (std::size_t i = 0; i < q[z].size(); ++i) {
      const double d = inst.source.values[i] - s.mean[z];
      s.d_inf += q[z][i] * d * d;
    }
  }
  return s;
}

MmseCodec mmse_codec(const Instance& inst, double tol) {
  const auto post = posterior_denoise(inst);
  if (encoder_count(inst, post.observed.size()) > kMaxEncoders) {
    throw InvalidArgument("instance too large for exhaustive search");
  }
  std::vector<std::pair<EncoderMap, double>> all;
  EncoderMap enc(post.observed.size(), 0);
  double best = INFINITY;
  do {
    const double d = encoder_stats(inst, post, enc).d_inf;
    best = std::min(best, d);
    all.emplace_back(enc, d);
  } while (next_encoder(enc, inst.codewords));
  MmseCodec out;
  out.d_inf = best;
  for (auto& [e, d] : all) {
    if (d <= best + tol) out.optimal.push_back(std::move(e));
  }
  return out;
}

Decomposition check_decomposition(const Instance& inst, const EncoderMap& enc) {
  const auto post = posterior_denoise(inst);
  const auto s = encoder_stats(inst, post, enc);
  Decomposition d;
  for (std::size_t j = 0; j < post.observed.size(); ++j) {
    const double mse = s.mean[static_cast<std::size_t>(enc[j])];
    for (std::size_t i = 0; i < inst.source.size(); ++i) {
      const double x = inst.source.values[i];
      d.lhs += post.joint[j][i] * (x - mse) * (x - mse);
      d.denoise += post.joint[j][i] * (x - post.mean[j]) * (x - post.mean[j]);
    }
    d.quantize += post.prob[j] * (post.mean[j] - mse) * (post.mean[j] - mse);
  }
  d.rhs = d.denoise + d.quantize;
  d.residual = std::abs(d.lhs - d.rhs);
  return d;
}

Coupling monotone_coupling(const DiscreteLaw& a, const DiscreteLaw& b) {
  a.validate("first law");
  b.validate("second law");
  Coupling c;
  c.from = a.values;
  c.to = b.values;
  c.mass = quantile_coupling(weighted(a.values, a.pmf), weighted(b.values, b.pmf), a.size(), b.size(), c.cost);
  return c;
}

PerceptionDecoder perception_opt_distortion(const Instance& inst, const EncoderMap& enc) {
  const auto post = posterior_denoise(inst);
  const auto s = encoder_stats(inst, post, enc);
  PerceptionDecoder out;
  const auto plan = quantile_coupling(weighted(s.mean, s.prob), weighted(inst.source.values, inst.source.pmf),
                                      s.prob.size(), inst.source.size(), out.w2_squared);
  out.d_0 = s.d_inf + out.w2_squared;
  out.kernel.assign(s.prob.size(), std::vector<double>(inst.source.size(), 0.0));
  out.output_law.assign(inst.source.size(), 0.0);
  for (std::size_t z = 0; z < s.prob.size(); ++z) {
    double row = 0.0;
    for (double m : plan[z]) row += m;
    for (std::size_t i = 0; i < inst.source.size(); ++i) {
      out.kernel[z][i] = row > 0.0 ? plan[z][i] / row : 1.0 / static_cast<double>(inst.source.size());
      out.output_law[i] += s.prob[z] * out.kernel[z][i];
    }
  }
  return out;
}

PosteriorSampling posterior_sampling_check(const Instance& inst, const EncoderMap& enc) {
  const auto post = posterior_denoise(inst);
  const auto s = encoder_stats(inst, post, enc);
  const auto q = source_codeword_joint(inst, post, enc);
  const auto& xs = inst.source.values;

  // Group codewords whose conditional means coincide: X_mse takes one value per group.
  std::vector<double> group_value;
  std::vector<std::vector<double>> group_joint;
  for (std::size_t z = 0; z < q.size(); ++z) {
    if (s.prob[z] <= 0.0) continue;
    std::size_t g = 0;
    while (g < group_value.size() && std::abs(group_value[g] - s.mean[z]) > kTieTolerance) ++g;
    if (g == group_value.size()) {
      group_value.push_back(s.mean[z]);
      group_joint.emplace_back(xs.size(), 0.0);
    }
    for (std::size_t i = 0; i < xs.size(); ++i) group_joint[g][i] += q[z][i];
  }

  PosteriorSampling out;
  out.d_inf = s.d_inf;
  out.d_0 = perception_opt_distortion(inst, enc).d_0;
  std::vector<double> marginal(xs.size(), 0.0);
  for (std::size_t g = 0; g < group_value.size(); ++g) {
    const double pg = std::accumulate(group_joint[g].begin(), group_joint[g].end(), 0.0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double cond = group_joint[g][i] / pg;
      // X_ps drawn from p(x | X_mse), independently of X given X_mse
      const double sampled = pg * cond;
      marginal[i] += sampled;
      out.joint_residual = std::max(out.joint_residual, std::abs(sampled - group_joint[g][i]));
      for (std::size_t k = 0; k < xs.size(); ++k) {
        const double d = xs[i] - xs[k];
        out.d_ps += pg * cond * (group_joint[g][k] / pg) * d * d;
      }
    }
  }
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out.marginal_residual = std::max(out.marginal_residual, std::abs(marginal[i] - inst.source.pmf[i]));
  }
  out.gap = out.d_ps - out.d_0;
  return out;
}

TransferReport verify_optimality_transfer(const Instance& inst, double tol) {
  const auto post = posterior_denoise(inst);
  if (encoder_count(inst, post.observed.size()) > kMaxEncoders) {
    throw InvalidArgument("instance too large for exhaustive search");
  }
  TransferReport r;
  r.d_inf_min = INFINITY;
  r.d_0_min = INFINITY;
  EncoderMap enc(post.observed.size(), 0);
  do {
    const auto s = encoder_stats(inst, post, enc);
    double w2 = 0.0;
    quantile_coupling(weighted(s.mean, s.prob), weighted(inst.source.values, inst.source.pmf), s.prob.size(),
                      inst.source.size(), w2);
    EncoderReport e{enc, s.d_inf, s.d_inf + w2};
    r.d_inf_min = std::min(r.d_inf_min, e.d_inf);
    r.d_0_min = std::min(r.d_0_min, e.d_0);
    r.encoders.push_back(std::move(e));
  } while (next_encoder(enc, inst.codewords));

  for (std::size_t k = 0; k < r.encoders.size(); ++k) {
    const bool in_inf = r.encoders[k].d_inf <= r.d_inf_min + tol;
    const bool in_0 = r.encoders[k].d_0 <= r.d_0_min + tol;
    if (in_inf) r.a_inf.push_back(k);
    if (in_0) r.a_0.push_back(k);
    if (in_inf && !in_0) r.witnesses.push_back(k);
  }
  r.holds = r.witnesses.empty();
  return r;
}

void GridSpec::validate() const {
  if (base_values.empty()) throw InvalidArgument("grid needs at least one base value");
  if (noise_scales.empty()) throw InvalidArgument("grid needs at least one noise scale");
  if (max_source_support < 1 || max_noise_support < 1 || max_codewords < 1 || pmf_denominator < 1) {
    throw InvalidArgument("grid sizes must be >= 1");
  }
  if (max_source_support > static_cast<int>(base_values.size()) ||
      max_noise_support > static_cast<int>(base_values.size())) {
    throw InvalidArgument("grid support exceeds the number of base values");
  }
  const double worst = std::pow(static_cast<double>(max_codewords),
                                std::min<double>(kMaxObservedSupport, static_cast<double>(max_source_support) *
                                                                          max_noise_support));
  if (worst > kMaxEncoders) throw InvalidArgument("grid too large for exhaustive search");
}

std::vector<Instance> theory_grid(const GridSpec& spec) {
  spec.validate();
  std::vector<Instance> out;
  const auto sources = grid_laws(spec.base_values, 1.0, spec.max_source_support, spec.pmf_denominator);
  for (double scale : spec.noise_scales) {
    const auto noises = grid_laws(spec.base_values, scale, spec.max_noise_support, spec.pmf_denominator);
    for (const auto& src : sources) {
      for (const auto& noise : noises) {
        std::vector<double> sums;
        for (double x : src.values) {
          for (double n : noise.values) sums.push_back(x + n);
        }
        std::sort(sums.begin(), sums.end());
        const auto support = static_cast<int>(std::unique(sums.begin(), sums.end()) - sums.begin());
        for (int m = 1; m <= std::min(spec.max_codewords, support); ++m) out.push_back(Instance{src, noise, m});
      }
    }
  }
  return out;
}

SweepResult sweep(const std::vector<Instance>& instances, const SweepOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  SweepResult result;
  for (const auto& inst : instances) {
    InstanceResult ir;
    ir.instance = inst;
    const auto t2 = verify_optimality_transfer(inst, options.tie_tolerance);
    ir.encoders = t2.encoders.size();
    ir.d_inf = t2.d_inf_min;
    ir.d_0 = t2.d_0_min;
    ir.transfer_holds = t2.holds;
    ir.witnesses = t2.witnesses.size();
    ir.endpoints_hold = true;
    ir.d_0_of_mmse = INFINITY;
    for (std::size_t idx = 0; idx < t2.encoders.size(); ++idx) {
      auto dec = check_decomposition(inst, t2.encoders[idx].encoder);
      if (options.inject_fault) dec.residual = std::abs(dec.lhs - (dec.rhs + 1e-6));
      ir.max_decomposition_residual = std::max(ir.max_decomposition_residual, dec.residual);
    }
    for (std::size_t n = 0; n < t2.a_inf.size(); ++n) {
      const auto& e = t2.encoders[t2.a_inf[n]];
      const auto ps = posterior_sampling_check(inst, e.encoder);
      if (n == 0) ir.d_ps = ps.d_ps;
      ir.d_0_of_mmse = std::min(ir.d_0_of_mmse, e.d_0);
      ir.max_law_residual = std::max({ir.max_law_residual, ps.marginal_residual, ps.joint_residual});
      const double tol = options.endpoint_tolerance;
      if (!(e.d_inf <= e.d_0 + tol && e.d_0 <= ps.d_ps + tol && std::abs(ps.d_ps - 2.0 * e.d_inf) <= tol)) {
        ir.endpoints_hold = false;
      }
    }
    if (ir.max_law_residual > kTieTolerance) ir.endpoints_hold = false;
    if (!ir.transfer_holds) ++result.transfer_failures;
    if (ir.max_decomposition_residual > options.decomposition_tolerance) ++result.decomposition_failures;
    if (!ir.endpoints_hold) ++result.endpoint_failures;
    result.instances.push_back(std::move(ir));
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace tscodec::rdp
