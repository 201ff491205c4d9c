#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tscodec::rdp {

// Finite scalar law on sorted distinct support points.
struct DiscreteLaw {
  std::vector<double> values;
  std::vector<double> pmf;

  std::size_t size() const { return values.size(); }
  double mean() const;
  // Throws InvalidArgument naming `what` on unsorted/duplicate values or a bad pmf.
  void validate(const char* what) const;
};

// Sorts by value and merges duplicate points.
DiscreteLaw make_law(std::vector<double> values, std::vector<double> pmf);

// Observation X' = X + N with N independent of X; |Z| = codewords.
struct Instance {
  DiscreteLaw source;
  DiscreteLaw noise;
  int codewords = 1;

  void validate() const;
};

inline constexpr std::size_t kMaxObservedSupport = 16;
inline constexpr double kMaxEncoders = 1e6;
inline constexpr double kTieTolerance = 1e-12;

// Codeword in [0, codewords) for each observed support point (sorted).
using EncoderMap = std::vector<int>;

struct Posterior {
  std::vector<double> observed;  // support of X'
  std::vector<double> prob;      // P(X' = x')
  // joint[j][i] = P(X = source.values[i], X' = observed[j])
  std::vector<std::vector<double>> joint;
  std::vector<double> mean;  // E[X | X' = observed[j]]
};

Posterior posterior_denoise(const Instance& inst);

struct EncoderStats {
  std::vector<double> prob;  // P(Z = z)
  std::vector<double> mean;  // E[X | Z = z], 0 for unused codewords
  double d_inf = 0.0;        // E (X - m_Z)^2
};

EncoderStats encoder_stats(const Instance& inst, const Posterior& post, const EncoderMap& enc);

struct MmseCodec {
  std::vector<EncoderMap> optimal;
  double d_inf = 0.0;
};

// Exhaustive over all codewords^|support(X')| encoders.
MmseCodec mmse_codec(const Instance& inst, double tol = kTieTolerance);

struct Decomposition {
  double lhs = 0.0;
  double denoise = 0.0;   // E (X - X_deN)^2
  double quantize = 0.0;  // E (X_deN - X_mse)^2
  double rhs = 0.0;
  double residual = 0.0;
};

Decomposition check_decomposition(const Instance& inst, const EncoderMap& enc);

struct Coupling {
  std::vector<double> from;  // support of the first law
  std::vector<double> to;
  std::vector<std::vector<double>> mass;  // mass[a][b]
  double cost = 0.0;                      // sum mass * (from - to)^2
};

// Exact squared 2-Wasserstein distance via the monotone (quantile) coupling.
Coupling monotone_coupling(const DiscreteLaw& a, const DiscreteLaw& b);

struct PerceptionDecoder {
  double d_0 = 0.0;
  double w2_squared = 0.0;
  // kernel[z][i] = P(X_hat = source.values[i] | Z = z); uniform rows for unused z.
  std::vector<std::vector<double>> kernel;
  std::vector<double> output_law;
};

// Best decoder whose output law equals p_X exactly.
PerceptionDecoder perception_opt_distortion(const Instance& inst, const EncoderMap& enc);

struct PosteriorSampling {
  double d_ps = 0.0;
  double d_inf = 0.0;
  double d_0 = 0.0;
  double gap = 0.0;               // d_ps - d_0
  double marginal_residual = 0.0; // max |p_{X_ps} - p_X|
  double joint_residual = 0.0;    // max |p_{X_ps, X_mse} - p_{X, X_mse}|
};

PosteriorSampling posterior_sampling_check(const Instance& inst, const EncoderMap& enc);

struct EncoderReport {
  EncoderMap encoder;
  double d_inf = 0.0;
  double d_0 = 0.0;
};

struct TransferReport {
  bool holds = false;
  double d_inf_min = 0.0;
  double d_0_min = 0.0;
  std::vector<EncoderReport> encoders;
  std::vector<std::size_t> a_inf;      // indices into encoders
  std::vector<std::size_t> a_0;
  std::vector<std::size_t> witnesses;  // in a_inf but not in a_0
};

TransferReport verify_optimality_transfer(const Instance& inst, double tol = kTieTolerance);

struct GridSpec {
  std::vector<double> base_values{-1.0, 0.0, 1.0};
  std::vector<double> noise_scales{1.0, 0.5};
  int max_source_support = 3;
  int max_noise_support = 3;
  int max_codewords = 3;
  // pmf entries are positive multiples of 1 / pmf_denominator
  int pmf_denominator = 4;

  void validate() const;
};

// Every (source, noise, M) combination of the grid with M <= |support(X')|.
std::vector<Instance> theory_grid(const GridSpec& spec);

struct SweepOptions {
  double tie_tolerance = kTieTolerance;
  double decomposition_tolerance = 1e-9;
  double endpoint_tolerance = 1e-9;
  // Perturbs every decomposition rhs so the sweep must report failures.
  bool inject_fault = false;
};

struct InstanceResult {
  Instance instance;
  std::size_t encoders = 0;
  double d_inf = 0.0;           // min over encoders
  double d_0 = 0.0;             // min over encoders
  double d_0_of_mmse = 0.0;     // min d_0 over MSE-optimal encoders
  double d_ps = 0.0;            // of the first MSE-optimal encoder
  bool transfer_holds = false;
  double max_decomposition_residual = 0.0;
  bool endpoints_hold = false;  // d_inf <= d_0 <= d_ps = 2 d_inf for every MSE-optimal encoder
  double max_law_residual = 0.0;
  std::size_t witnesses = 0;
};

struct SweepResult {
  std::vector<InstanceResult> instances;
  std::size_t transfer_failures = 0;
  std::size_t decomposition_failures = 0;
  std::size_t endpoint_failures = 0;
  double seconds = 0.0;

  bool passed() const { return transfer_failures == 0 && decomposition_failures == 0 && endpoint_failures == 0; }
};

SweepResult sweep(const std::vector<Instance>& instances, const SweepOptions& options = {});

// Machine-readable report: summary counts plus per-instance values.
std::string sweep_report_json(const SweepResult& result);

// {"source": {"values": [...], "pmf": [...]}, "noise": {...}, "codewords": M}
Instance parse_instance_json(const std::string& text);
std::string instance_json(const Instance& inst);

}  // namespace tscodec::rdp
