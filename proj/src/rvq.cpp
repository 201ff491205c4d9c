#include "tscodec/rvq.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <utility>

#include "tscodec/error.hpp"

namespace tscodec::rvq {

int QuantizerConfig::bits_per_index() const {
  return std::countr_zero(static_cast<unsigned>(codebook_size));
}

void QuantizerConfig::validate() const {
  if (num_quantizers < 1 || num_quantizers > 255) {
    throw InvalidArgument("num_quantizers must be in [1, 255]");
  }
  if (codebook_size < 2 || !std::has_single_bit(static_cast<unsigned>(codebook_size)) ||
      codebook_size > (1 << 16)) {
    throw InvalidArgument("codebook_size must be a power of two in [2, 65536]");
  }
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw InvalidArgument("ema_decay must be in [0, 1)");
  if (!(dead_code_threshold >= 0.0)) throw InvalidArgument("dead_code_threshold must be >= 0");
  if (!(commitment_weight >= 0.0)) throw InvalidArgument("commitment_weight must be >= 0");
}

Codebook::Codebook(int num_quantizers, int codebook_size, int dim)
    : nq_(num_quantizers), n_(codebook_size), dim_(dim) {
  if (nq_ < 1 || n_ < 2 || dim_ < 1) throw InvalidArgument("invalid codebook shape");
  const auto stride = static_cast<std::size_t>(n_) * dim_;
  entries_.assign(stride * nq_, 0.0f);
  counts_.assign(static_cast<std::size_t>(n_) * nq_, 0.0f);
  sums_.assign(stride * nq_, 0.0f);
}

Eigen::Map<RowMatrix<float>> Codebook::stage(int k) {
  return {entries_.data() + static_cast<std::size_t>(k) * n_ * dim_, n_, dim_};
}

Eigen::Map<const RowMatrix<float>> Codebook::stage(int k) const {
  return {entries_.data() + static_cast<std::size_t>(k) * n_ * dim_, n_, dim_};
}

std::span<float> Codebook::counts(int k) {
  return std::span<float>(counts_).subspan(static_cast<std::size_t>(k) * n_, n_);
}

std::span<const float> Codebook::counts(int k) const {
  return std::span<const float>(counts_).subspan(static_cast<std::size_t>(k) * n_, n_);
}

Eigen::Map<RowMatrix<float>> Codebook::sums(int k) {
  return {sums_.data() + static_cast<std::size_t>(k) * n_ * dim_, n_, dim_};
}

void Codebook::reset_statistics() {
  std::fill(counts_.begin(), counts_.end(), 1.0f);
  sums_ = entries_;
}

model::ParameterDigest Codebook::digest() const {
  std::vector<float> all;
  all.reserve(entries_.size() + counts_.size() + sums_.size() + 3);
  all.push_back(static_cast<float>(nq_));
  all.push_back(static_cast<float>(n_));
  all.push_back(static_cast<float>(dim_));
  all.insert(all.end(), entries_.begin(), entries_.end());
  all.insert(all.end(), counts_.begin(), counts_.end());
  all.insert(all.end(), sums_.begin(), sums_.end());
  return model::parameter_digest(all);
}

void Codebook::validate() const {
  for (float v : entries_) {
    if (!std::isfinite(v)) throw InvalidArgument("codebook contains non-finite entries");
  }
  for (float c : counts_) {
    if (!(c >= 0.0f)) throw InvalidArgument("codebook EMA counts must be >= 0");
  }
}

namespace {

double exact_distance(std::span<const float> r, const Eigen::Map<const RowMatrix<float>>& stage,
                      Index j) {
  double acc = 0.0;
  for (Index d = 0; d < stage.cols(); ++d) {
    const double diff = static_cast<double>(r[static_cast<std::size_t>(d)]) - stage(j, d);
    acc += diff * diff;
  }
  return acc;
}

// Picks the exact argmin among candidates whose approximate distance is
// within a rounding margin of the approximate minimum.
std::int32_t refine(std::span<const float> r, const Eigen::Map<const RowMatrix<float>>& stage,
                    const Eigen::Ref<const Eigen::RowVectorXf>& approx, float margin) {
  const float best = approx.minCoeff();
  double exact_best = std::numeric_limits<double>::infinity();
  std::int32_t arg = 0;
  for (Index j = 0; j < approx.size(); ++j) {
    if (approx(j) > best + margin) continue;
    const double d = exact_distance(r, stage, j);
    if (d < exact_best) {
      exact_best = d;
      arg = static_cast<std::int32_t>(j);
    }
  }
  return arg;
}

float rounding_margin(float residual_sq, float max_code_sq, Index dim) {
  return 1e-5f * (residual_sq + max_code_sq) * std::sqrt(static_cast<float>(dim)) + 1e-30f;
}

}  // namespace

std::int32_t nearest_codeword(std::span<const float> residual,
                              const Eigen::Map<const RowMatrix<float>>& stage) {
  if (static_cast<Index>(residual.size()) != stage.cols()) {
    throw InvalidArgument("residual dimension mismatch");
  }
  const Eigen::Map<const Eigen::RowVectorXf> r(residual.data(), stage.cols());
  const Eigen::RowVectorXf norms = stage.rowwise().squaredNorm().transpose();
  const Eigen::RowVectorXf approx = norms - 2.0f * (r * stage.transpose());
  return refine(residual, stage, approx,
                rounding_margin(r.squaredNorm(), norms.maxCoeff(), stage.cols()));
}

QuantizeResult quantize(const model::LatentSequence& z, const Codebook& cb, int nq_active) {
  if (nq_active < 1 || nq_active > cb.num_quantizers()) {
    throw InvalidArgument("nq_active " + std::to_string(nq_active) + " outside [1, " +
                          std::to_string(cb.num_quantizers()) + "]");
  }
  if (z.cols() != cb.dim()) {
    throw InvalidArgument("latent dimension " + std::to_string(z.cols()) +
                          " does not match codebook dimension " + std::to_string(cb.dim()));
  }
  const Index frames = z.rows();
  QuantizeResult out;
  out.codes.indices.resize(frames, nq_active);
  out.quantized = model::LatentSequence::Zero(frames, cb.dim());
  out.stage_inputs.reserve(static_cast<std::size_t>(nq_active));
  RowMatrix<float> residual = z;
  for (int k = 0; k < nq_active; ++k) {
    const auto stage = cb.stage(k);
    const Eigen::RowVectorXf norms = stage.rowwise().squaredNorm().transpose();
    const float max_norm = norms.maxCoeff();
    RowMatrix<float> scores = -2.0f * (residual * stage.transpose());
    scores.rowwise() += norms;
    out.stage_inputs.push_back(residual);
    for (Index f = 0; f < frames; ++f) {
      std::span<const float> r(residual.row(f).data(), static_cast<std::size_t>(cb.dim()));
      const std::int32_t idx =
          refine(r, stage, scores.row(f),
                 rounding_margin(residual.row(f).squaredNorm(), max_norm, cb.dim()));
      out.codes.indices(f, k) = idx;
    }
    for (Index f = 0; f < frames; ++f) {
      const auto c = stage.row(out.codes.indices(f, k));
      residual.row(f) -= c;
      out.quantized.row(f) += c;
    }
  }
  return out;
}

model::LatentSequence dequantize(const CodeFrames& codes, const Codebook& cb) {
  if (codes.nq_used() > cb.num_quantizers()) {
    throw InvalidArgument("codes use more stages than the codebook has");
  }
  model::LatentSequence out = model::LatentSequence::Zero(codes.frames(), cb.dim());
  for (int k = 0; k < codes.nq_used(); ++k) {
    const auto stage = cb.stage(k);
    for (Index f = 0; f < codes.frames(); ++f) {
      const std::int32_t idx = codes.indices(f, k);
      if (idx < 0 || idx >= cb.size()) {
        throw InvalidArgument("code index " + std::to_string(idx) + " out of range [0, " +
                              std::to_string(cb.size()) + ")");
      }
      out.row(f) += stage.row(idx);
    }
  }
  return out;
}

double bitrate(int nq_used, int codebook_size, double frame_rate) {
  if (nq_used < 1 || codebook_size < 2 || !(frame_rate > 0.0)) {
    throw InvalidArgument("bitrate needs nq >= 1, N >= 2 and a positive frame rate");
  }
  return nq_used * frame_rate * std::log2(static_cast<double>(codebook_size));
}

namespace {

constexpr float kCountFloor = 1e-5f;

void ema_apply(Codebook& cb, int k, const std::vector<float>& batch_counts,
               const RowMatrix<float>& batch_sums, double decay) {
  auto counts = cb.counts(k);
  auto sums = cb.sums(k);
  auto stage = cb.stage(k);
  const auto d = static_cast<float>(decay);
  const auto w = static_cast<float>(1.0 - decay);
  for (int j = 0; j < cb.size(); ++j) {
    counts[static_cast<std::size_t>(j)] = d * counts[static_cast<std::size_t>(j)] + w * batch_counts[static_cast<std::size_t>(j)];
    sums.row(j) = d * sums.row(j) + w * batch_sums.row(j);
    if (batch_counts[static_cast<std::size_t>(j)] > 0.0f) {
      stage.row(j) = sums.row(j) / std::max(counts[static_cast<std::size_t>(j)], kCountFloor);
    }
  }
}

}  // namespace

void ema_update(Codebook& cb, std::span<const Assignment> assignments, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw InvalidArgument("ema decay must be in [0, 1)");
  for (int k = 0; k < cb.num_quantizers(); ++k) {
    std::vector<float> batch_counts(static_cast<std::size_t>(cb.size()), 0.0f);
    RowMatrix<float> batch_sums = RowMatrix<float>::Zero(cb.size(), cb.dim());
    bool touched = false;
    for (const auto& a : assignments) {
      if (a.stage != k) continue;
      if (a.index < 0 || a.index >= cb.size() || static_cast<int>(a.residual.size()) != cb.dim()) {
        throw InvalidArgument("invalid EMA assignment");
      }
      batch_counts[static_cast<std::size_t>(a.index)] += 1.0f;
      batch_sums.row(a.index) += Eigen::Map<const Eigen::RowVectorXf>(a.residual.data(), cb.dim());
      touched = true;
    }
    if (touched) ema_apply(cb, k, batch_counts, batch_sums, decay);
  }
}

void ema_update(Codebook& cb, const QuantizeResult& result, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw InvalidArgument("ema decay must be in [0, 1)");
  for (int k = 0; k < result.codes.nq_used(); ++k) {
    std::vector<float> batch_counts(static_cast<std::size_t>(cb.size()), 0.0f);
    RowMatrix<float> batch_sums = RowMatrix<float>::Zero(cb.size(), cb.dim());
    const auto& inputs = result.stage_inputs[static_cast<std::size_t>(k)];
    for (Index f = 0; f < result.codes.frames(); ++f) {
      const std::int32_t idx = result.codes.indices(f, k);
      batch_counts[static_cast<std::size_t>(idx)] += 1.0f;
      batch_sums.row(idx) += inputs.row(f);
    }
    ema_apply(cb, k, batch_counts, batch_sums, decay);
  }
}

int reseed_dead_codes(Codebook& cb, int stage, const RowMatrix<float>& pool, double threshold,
                      std::mt19937_64& rng) {
  if (pool.rows() == 0) return 0;
  auto counts = cb.counts(stage);
  auto entries = cb.stage(stage);
  auto sums = cb.sums(stage);
  std::uniform_int_distribution<Index> pick(0, pool.rows() - 1);
  int replaced = 0;
  for (int j = 0; j < cb.size(); ++j) {
    if (counts[static_cast<std::size_t>(j)] >= threshold) continue;
    entries.row(j) = pool.row(pick(rng));
    sums.row(j) = entries.row(j);
    counts[static_cast<std::size_t>(j)] = 1.0f;
    ++replaced;
  }
  return replaced;
}

void kmeans_init(Codebook& cb, const RowMatrix<float>& batch, std::uint64_t seed) {
  if (batch.rows() < cb.size()) {
    throw InvalidArgument("k-means initialisation needs at least " + std::to_string(cb.size()) +
                          " vectors, got " + std::to_string(batch.rows()));
  }
  if (batch.cols() != cb.dim()) throw InvalidArgument("k-means batch dimension mismatch");
  std::mt19937_64 rng(seed);
  RowMatrix<float> data = batch;
  const Index m = data.rows();
  for (int k = 0; k < cb.num_quantizers(); ++k) {
    auto stage = cb.stage(k);
    std::vector<double> dist(static_cast<std::size_t>(m), std::numeric_limits<double>::infinity());
    std::uniform_int_distribution<Index> uniform(0, m - 1);
    Index chosen = uniform(rng);
    for (int c = 0; c < cb.size(); ++c) {
      stage.row(c) = data.row(chosen);
      const Eigen::VectorXf d = (data.rowwise() - data.row(chosen)).rowwise().squaredNorm();
      double total = 0.0;
      for (Index i = 0; i < m; ++i) {
        dist[static_cast<std::size_t>(i)] = std::min(dist[static_cast<std::size_t>(i)], static_cast<double>(d(i)));
        total += dist[static_cast<std::size_t>(i)];
      }
      if (c + 1 == cb.size()) break;
      if (total <= 0.0) {
        chosen = uniform(rng);
        continue;
      }
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      chosen = m - 1;
      for (Index i = 0; i < m; ++i) {
        target -= dist[static_cast<std::size_t>(i)];
        if (target < 0.0 && dist[static_cast<std::size_t>(i)] > 0.0) {
          chosen = i;
          break;
        }
      }
      while (dist[static_cast<std::size_t>(chosen)] <= 0.0 && chosen > 0) --chosen;
    }
    // residuals for the next stage
    const Eigen::Map<const RowMatrix<float>> cstage = std::as_const(cb).stage(k);
    for (Index i = 0; i < m; ++i) {
      std::span<const float> r(data.row(i).data(), static_cast<std::size_t>(cb.dim()));
      data.row(i) -= cstage.row(nearest_codeword(r, cstage));
    }
  }
  cb.reset_statistics();
}

}  // namespace tscodec::rvq
