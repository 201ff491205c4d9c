#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "tscodec/signal.hpp"

namespace tscodec::data {

struct NoiseMixSpec {
  double snr_lo_db = 0.0;
  double snr_hi_db = 15.0;
  double insertion_period_s = 3.0;
  double peak_target = 0.95;
  double gain_lo = 0.3;
  double gain_hi = 1.0;
  double crop_s = 0.36;

  std::size_t crop_samples(int sample_rate) const;
  void validate() const;
};

// clean + noise scaled so that 10 log10(P_clean / P_scaled) = snr_db.
double noise_scale_for_snr(std::span<const float> clean, std::span<const float> noise, double snr_db);
signal::Waveform mix_at_snr(const signal::Waveform& clean, const signal::Waveform& noise, double snr_db);

struct Example {
  signal::Waveform input;
  signal::Waveform target;
  // input - target
  signal::Waveform noise;
  std::size_t crop_start = 0;
  double gain = 1.0;
};

// Random crop, peak normalisation times a random gain, then (optionally)
// additive noise re-drawn at every insertion-period boundary of the clip.
Example prepare_example(const signal::Waveform& clean, const signal::Waveform* noise,
                        const NoiseMixSpec& spec, std::uint64_t seed);

struct Corpus {
  std::vector<signal::Waveform> clean;
  std::vector<signal::Waveform> noise;
};

// Harmonic tones (f0 in [80, 300] Hz, 3 to 6 harmonics, slow envelopes) and
// low-passed white noise. Clean and noise draw from separate seed streams.
Corpus synth_corpus(std::size_t n_clips, double duration_s, int sample_rate, std::uint64_t seed);

struct ManifestRecord {
  std::filesystem::path clean;
  std::optional<std::filesystem::path> noise;
  std::uint64_t seed = 0;
};

// One record per line: clean_path <TAB> noise_path|- <TAB> seed. Relative
// paths are resolved against the manifest's directory.
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

// Writes clean_NNNN.wav / noise_NNNN.wav and manifest.tsv into dir. A
// noisy_fraction share of the records (rounded) reference a noise clip.
std::filesystem::path write_synth_corpus(const std::filesystem::path& dir, std::size_t n_clips,
                                         double duration_s, int sample_rate, std::uint64_t seed,
                                         double noisy_fraction = 0.5);

struct LoadedRecord {
  signal::Waveform clean;
  std::optional<signal::Waveform> noise;
  std::uint64_t seed = 0;
  std::filesystem::path clean_path;
};

// Loads every file and checks sample rates and minimum durations.
std::vector<LoadedRecord> load_manifest(const std::filesystem::path& path, const NoiseMixSpec& spec,
                                        int sample_rate);

// Example `index` of a stream defined by (records, seed). Pure, so batches
// can be prepared in any order.
Example draw_example(const std::vector<LoadedRecord>& records, const NoiseMixSpec& spec,
                     std::uint64_t seed, std::uint64_t index);

}  // namespace tscodec::data
