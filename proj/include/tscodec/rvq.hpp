#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "tscodec/model.hpp"
#include "tscodec/tensor.hpp"

namespace tscodec::rvq {

struct QuantizerConfig {
  int num_quantizers = 24;
  int codebook_size = 1024;
  double ema_decay = 0.99;
  bool dropout_enabled = true;
  // Codewords whose EMA count drops below this are re-seeded.
  double dead_code_threshold = 1e-3;
  // 0 disables the commitment term.
  double commitment_weight = 0.0;

  int bits_per_index() const;
  void validate() const;
};

using IndexMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// frames x nq_used stage indices.
struct CodeFrames {
  IndexMatrix indices;

  Index frames() const { return indices.rows(); }
  int nq_used() const { return static_cast<int>(indices.cols()); }
  bool operator==(const CodeFrames& o) const { return indices == o.indices; }
};

// Nq stages of N codewords each, plus the EMA statistics used to learn them.
class Codebook {
 public:
  Codebook() = default;
  Codebook(int num_quantizers, int codebook_size, int dim);

  int num_quantizers() const { return nq_; }
  int size() const { return n_; }
  int dim() const { return dim_; }

  // N x dim view of one stage.
  Eigen::Map<RowMatrix<float>> stage(int k);
  Eigen::Map<const RowMatrix<float>> stage(int k) const;
  std::span<float> counts(int k);
  std::span<const float> counts(int k) const;
  Eigen::Map<RowMatrix<float>> sums(int k);

  std::vector<float>& entries() { return entries_; }
  const std::vector<float>& entries() const { return entries_; }
  std::vector<float>& ema_counts() { return counts_; }
  const std::vector<float>& ema_counts() const { return counts_; }
  std::vector<float>& ema_sums() { return sums_; }
  const std::vector<float>& ema_sums() const { return sums_; }

  // Resets EMA statistics so that each codeword has count 1 and sum = itself.
  void reset_statistics();

  // Digest of entries and EMA state.
  model::ParameterDigest digest() const;

  void validate() const;

 private:
  int nq_ = 0;
  int n_ = 0;
  int dim_ = 0;
  std::vector<float> entries_;
  std::vector<float> counts_;
  std::vector<float> sums_;
};

struct QuantizeResult {
  model::LatentSequence quantized;
  CodeFrames codes;
  // Input residual of every active stage (stage_inputs[k] is frames x dim).
  std::vector<RowMatrix<float>> stage_inputs;
};

// Nearest codeword of one stage; ties resolve to the lowest index.
std::int32_t nearest_codeword(std::span<const float> residual, const Eigen::Map<const RowMatrix<float>>& stage);

// Greedy residual quantization with the first nq_active stages.
QuantizeResult quantize(const model::LatentSequence& z, const Codebook& cb, int nq_active);

// Sum of the referenced codewords per frame, in stage order.
model::LatentSequence dequantize(const CodeFrames& codes, const Codebook& cb);

// Nq_used * frame_rate * log2(N) bits per second.
double bitrate(int nq_used, int codebook_size, double frame_rate);

struct Assignment {
  int stage;
  std::int32_t index;
  std::vector<float> residual;
};

// Exponential moving average update of counts and sums; only codewords that
// received assignments are recomputed as sums / max(counts, eps).
void ema_update(Codebook& cb, std::span<const Assignment> assignments, double decay);

// Batch form used during training: stage k's assignments are codes column k
// against stage_inputs[k].
void ema_update(Codebook& cb, const QuantizeResult& result, double decay);

// Replaces codewords whose count is below threshold with random rows of
// pool (residuals of that stage). Returns the number replaced.
int reseed_dead_codes(Codebook& cb, int stage, const RowMatrix<float>& pool, double threshold,
                      std::mt19937_64& rng);

// k-means++ seeding: stage 0 on the batch, later stages on successive
// residuals. Requires at least N rows.
void kmeans_init(Codebook& cb, const RowMatrix<float>& batch, std::uint64_t seed);

}  // namespace tscodec::rvq
