#include "tscodec/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "tscodec/error.hpp"

namespace tscodec::data {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return splitmix(splitmix(splitmix(seed) ^ stream) ^ index);
}

double power(std::span<const float> x) {
  double acc = 0.0;
  for (float v : x) acc += static_cast<double>(v) * v;
  return x.empty() ? 0.0 : acc / static_cast<double>(x.size());
}

}  // namespace

std::size_t NoiseMixSpec::crop_samples(int sample_rate) const {
  return static_cast<std::size_t>(std::llround(crop_s * sample_rate));
}

void NoiseMixSpec::validate() const {
  if (!(snr_lo_db <= snr_hi_db) || !std::isfinite(snr_lo_db) || !std::isfinite(snr_hi_db)) {
    throw InvalidArgument("snr range must be finite with lo <= hi");
  }
  if (!(insertion_period_s > 0.0)) throw InvalidArgument("insertion period must be positive");
  if (!(peak_target > 0.0 && peak_target <= 1.0)) throw InvalidArgument("peak_target must be in (0, 1]");
  if (!(gain_lo > 0.0 && gain_lo <= gain_hi && gain_hi <= 1.0)) {
    throw InvalidArgument("gain range must satisfy 0 < lo <= hi <= 1");
  }
  if (!(crop_s > 0.0)) throw InvalidArgument("crop duration must be positive");
}

double noise_scale_for_snr(std::span<const float> clean, std::span<const float> noise, double snr_db) {
  if (clean.size() != noise.size()) throw InvalidArgument("clean and noise lengths differ");
  if (!std::isfinite(snr_db)) throw InvalidArgument("snr must be finite");
  const double pc = power(clean);
  const double pn = power(noise);
  if (pc <= 0.0) throw InvalidArgument("clean signal has zero power");
  if (pn <= 0.0) throw InvalidArgument("noise signal has zero power");
  return std::sqrt(pc / (pn * std::pow(10.0, snr_db / 10.0)));
}

signal::Waveform mix_at_snr(const signal::Waveform& clean, const signal::Waveform& noise, double snr_db) {
  if (clean.sample_rate != noise.sample_rate) throw InvalidArgument("sample rates differ");
  const double scale = noise_scale_for_snr(clean.samples, noise.samples, snr_db);
  signal::Waveform out = clean;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    out.samples[i] = static_cast<float>(clean.samples[i] + scale * noise.samples[i]);
  }
  return out;
}

Example prepare_example(const signal::Waveform& clean, const signal::Waveform* noise,
                        const NoiseMixSpec& spec, std::uint64_t seed) {
  spec.validate();
  signal::validate(clean);
  const std::size_t crop = spec.crop_samples(clean.sample_rate);
  if (clean.samples.size() < crop) {
    throw InvalidArgument("clip of " + std::to_string(clean.samples.size()) +
                          " samples is shorter than the crop (" + std::to_string(crop) + ")");
  }
  if (noise != nullptr) {
    signal::validate(*noise);
    if (noise->sample_rate != clean.sample_rate) throw InvalidArgument("noise sample rate differs");
  }
  std::mt19937_64 rng(seed);
  Example ex;
  ex.crop_start = std::uniform_int_distribution<std::size_t>(0, clean.samples.size() - crop)(rng);
  ex.gain = std::uniform_real_distribution<double>(spec.gain_lo, spec.gain_hi)(rng);

  const auto first = clean.samples.begin() + static_cast<std::ptrdiff_t>(ex.crop_start);
  std::vector<float> fragment(first, first + static_cast<std::ptrdiff_t>(crop));
  float peak = 0.0f;
  for (float v : fragment) peak = std::max(peak, std::abs(v));
  const double factor = peak > 0.0f ? spec.peak_target / peak * ex.gain : 0.0;
  for (auto& v : fragment) v = static_cast<float>(v * factor);

  ex.target = {fragment, clean.sample_rate};
  ex.input = ex.target;
  const double clean_power = power(fragment);
  if (noise != nullptr && clean_power > 0.0) {
    const auto period = static_cast<std::size_t>(std::llround(spec.insertion_period_s * clean.sample_rate));
    std::uniform_real_distribution<double> snr(spec.snr_lo_db, spec.snr_hi_db);
    const std::size_t n_noise = noise->samples.size();
    std::uniform_int_distribution<std::size_t> offset(0, n_noise - 1);
    // segments of the crop that fall into the same insertion period
    std::size_t pos = 0;
    while (pos < crop) {
      const std::size_t abs = ex.crop_start + pos;
      const std::size_t end = std::min(crop, pos + (period - abs % period));
      const std::size_t off = offset(rng);
      std::vector<float> seg(end - pos);
      for (std::size_t i = 0; i < seg.size(); ++i) seg[i] = noise->samples[(off + i) % n_noise];
      // SNR is measured against the whole crop so silent stretches stay defined
      const double pn = power(seg);
      if (pn <= 0.0) throw InvalidArgument("noise segment has zero power");
      const double scale = std::sqrt(clean_power / (pn * std::pow(10.0, snr(rng) / 10.0)));
      for (std::size_t i = 0; i < seg.size(); ++i) {
        ex.input.samples[pos + i] = static_cast<float>(fragment[pos + i] + scale * seg[i]);
      }
      pos = end;
    }
  }
  ex.noise = ex.input;
  for (std::size_t i = 0; i < crop; ++i) ex.noise.samples[i] = ex.input.samples[i] - ex.target.samples[i];
  return ex;
}

Corpus synth_corpus(std::size_t n_clips, double duration_s, int sample_rate, std::uint64_t seed) {
  if (n_clips < 1) throw InvalidArgument("n_clips must be >= 1");
  if (!(duration_s > 0.0) || sample_rate <= 0) throw InvalidArgument("duration and sample rate must be positive");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  if (n == 0) throw InvalidArgument("clip duration rounds to zero samples");
  const double sr = sample_rate;
  const double two_pi = 2.0 * std::numbers::pi;
  Corpus corpus;
  for (std::size_t c = 0; c < n_clips; ++c) {
    std::mt19937_64 rng(derive_seed(seed, 1, c));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double f0 = 80.0 + 220.0 * u(rng);
    const int harmonics = std::uniform_int_distribution<int>(3, 6)(rng);
    std::vector<double> amp(static_cast<std::size_t>(harmonics)), phase(amp.size());
    for (std::size_t h = 0; h < amp.size(); ++h) {
      amp[h] = (0.3 + 0.7 * u(rng)) / static_cast<double>(h + 1);
      phase[h] = two_pi * u(rng);
    }
    const double env_rate = 0.5 + 3.5 * u(rng);
    const double env_phase = two_pi * u(rng);
    const double peak_out = 0.5 + 0.4 * u(rng);
    std::vector<double> x(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / sr;
      double v = 0.0;
      for (std::size_t h = 0; h < amp.size(); ++h) {
        const double f = f0 * static_cast<double>(h + 1);
        if (f < sr / 2) v += amp[h] * std::sin(two_pi * f * t + phase[h]);
      }
      x[i] = v * (0.6 + 0.4 * std::sin(two_pi * env_rate * t + env_phase));
    }
    double peak = 0.0;
    for (double v : x) peak = std::max(peak, std::abs(v));
    signal::Waveform w{std::vector<float>(n), sample_rate};
    for (std::size_t i = 0; i < n; ++i) w.samples[i] = static_cast<float>(peak > 0 ? x[i] / peak * peak_out : 0.0);
    corpus.clean.push_back(std::move(w));
  }
  for (std::size_t c = 0; c < n_clips; ++c) {
    std::mt19937_64 rng(derive_seed(seed, 2, c));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    const double cutoff = std::min(500.0 + 7500.0 * u(rng), 0.45 * sr);
    const double alpha = 1.0 - std::exp(-two_pi * cutoff / sr);
    const double peak_out = 0.3 + 0.6 * u(rng);
    std::vector<double> x(n);
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s1 += alpha * (g(rng) - s1);
      s2 += alpha * (s1 - s2);
      x[i] = s2;
    }
    double peak = 0.0;
    for (double v : x) peak = std::max(peak, std::abs(v));
    signal::Waveform w{std::vector<float>(n), sample_rate};
    for (std::size_t i = 0; i < n; ++i) w.samples[i] = static_cast<float>(peak > 0 ? x[i] / peak * peak_out : 0.0);
    corpus.noise.push_back(std::move(w));
  }
  return corpus;
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  std::vector<ManifestRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      throw FormatError("manifest " + path.string() + " line " + std::to_string(line_no) +
                        ": expected clean<TAB>noise|-<TAB>seed");
    }
    ManifestRecord r;
    r.clean = resolve(fields[0]);
    if (fields[1] != "-") r.noise = resolve(fields[1]);
    try {
      std::size_t used = 0;
      r.seed = std::stoull(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError("manifest " + path.string() + " line " + std::to_string(line_no) +
                        ": invalid seed '" + fields[2] + "'");
    }
    records.push_back(std::move(r));
  }
  if (records.empty()) throw FormatError("manifest has no records: " + path.string());
  return records;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  const auto base = std::filesystem::absolute(path).parent_path().lexically_normal();
  auto rel = [&](const std::filesystem::path& p) {
    const auto abs = std::filesystem::absolute(p).lexically_normal();
    const auto r = abs.lexically_relative(base);
    return r.empty() ? abs.generic_string() : r.generic_string();
  };
  for (const auto& r : records) {
    out << rel(r.clean) << '\t' << (r.noise ? rel(*r.noise) : std::string("-")) << '\t' << r.seed << '\n';
  }
  if (!out) throw IoError("failed writing manifest: " + path.string());
}

std::filesystem::path write_synth_corpus(const std::filesystem::path& dir, std::size_t n_clips,
                                         double duration_s, int sample_rate, std::uint64_t seed,
                                         double noisy_fraction) {
  if (!(noisy_fraction >= 0.0 && noisy_fraction <= 1.0)) {
    throw InvalidArgument("noisy_fraction must be in [0, 1]");
  }
  const Corpus corpus = synth_corpus(n_clips, duration_s, sample_rate, seed);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());

  const auto noisy = static_cast<std::size_t>(std::llround(noisy_fraction * static_cast<double>(n_clips)));
  std::vector<std::size_t> order(n_clips);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 3, 0));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> has_noise(n_clips, false);
  for (std::size_t i = 0; i < noisy; ++i) has_noise[order[i]] = true;

  std::vector<ManifestRecord> records;
  for (std::size_t c = 0; c < n_clips; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "clean_%04zu.wav", c);
    ManifestRecord r;
    r.clean = dir / name;
    signal::save_wav(corpus.clean[c], r.clean);
    if (has_noise[c]) {
      std::snprintf(name, sizeof(name), "noise_%04zu.wav", c);
      r.noise = dir / name;
      signal::save_wav(corpus.noise[c], *r.noise);
    }
    r.seed = derive_seed(seed, 4, c);
    records.push_back(std::move(r));
  }
  const auto manifest = dir / "manifest.tsv";
  write_manifest(manifest, records);
  return manifest;
}

std::vector<LoadedRecord> load_manifest(const std::filesystem::path& path, const NoiseMixSpec& spec,
                                        int sample_rate) {
  spec.validate();
  const std::size_t crop = spec.crop_samples(sample_rate);
  std::vector<LoadedRecord> out;
  for (const auto& r : read_manifest(path)) {
    LoadedRecord lr;
    lr.clean = signal::load_wav(r.clean);
    lr.clean_path = r.clean;
    lr.seed = r.seed;
    if (lr.clean.sample_rate != sample_rate) {
      throw FormatError(r.clean.string() + ": sample rate " + std::to_string(lr.clean.sample_rate) +
                        " does not match " + std::to_string(sample_rate));
    }
    if (lr.clean.samples.size() < crop) {
      throw FormatError(r.clean.string() + " is shorter than the " + std::to_string(crop) + "-sample crop");
    }
    if (r.noise) {
      lr.noise = signal::load_wav(*r.noise);
      if (lr.noise->sample_rate != sample_rate) {
        throw FormatError(r.noise->string() + ": sample rate does not match " + std::to_string(sample_rate));
      }
    }
    out.push_back(std::move(lr));
  }
  return out;
}

Example draw_example(const std::vector<LoadedRecord>& records, const NoiseMixSpec& spec,
                     std::uint64_t seed, std::uint64_t index) {
  if (records.empty()) throw InvalidArgument("no records to draw from");
  const std::uint64_t h = derive_seed(seed, 5, index);
  const auto& r = records[h % records.size()];
  return prepare_example(r.clean, r.noise ? &*r.noise : nullptr, spec, derive_seed(r.seed, seed, index));
}

}  // namespace tscodec::data
