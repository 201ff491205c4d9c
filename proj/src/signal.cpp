#include "tscodec/signal.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace tscodec::signal {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

// Index into a signal of `length` samples, mirrored without repeating the edge.
Index reflect_index(Index i, Index length) {
  if (length == 1) return 0;
  const Index period = 2 * (length - 1);
  Index m = i % period;
  if (m < 0) m += period;
  if (m >= length) m = period - m;
  return m;
}

template <typename T>
Eigen::FFT<T>& fft_engine() {
  thread_local Eigen::FFT<T> engine;
  return engine;
}

void check_window(int window_length, int hop) {
  if (!is_valid_window_length(window_length)) {
    throw InvalidArgument("stft window length must be a power of two in [64, 2048], got " +
                          std::to_string(window_length));
  }
  if (hop < 1) throw InvalidArgument("stft hop must be >= 1");
}

}  // namespace

void validate(const Waveform& w) {
  if (w.sample_rate <= 0) throw InvalidArgument("sample rate must be positive");
  if (w.samples.empty()) throw InvalidArgument("waveform is empty");
  for (float s : w.samples) {
    if (!std::isfinite(s)) throw InvalidArgument("waveform contains non-finite samples");
  }
}

Waveform load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WavMissingFile("cannot open wav file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw FormatError("not a RIFF/WAVE file: " + path.string());
  }

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t available = bytes.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || available < 16) throw FormatError("truncated fmt chunk");
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == kFormatExtensible && size >= 40 && available >= 40) {
        format = read_u16(chunk + 8 + 24);  // sub-format GUID prefix
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = std::min<std::size_t>(size, available);
    }
    pos = body + size + (size & 1U);
  }
  if (!have_fmt) throw FormatError("missing fmt chunk: " + path.string());
  if (channels != 1) {
    throw WavNotMono("non-mono wav (" + std::to_string(channels) + " channels): " + path.string());
  }
  if (format != kFormatPcm || bits != 16) {
    throw WavUnsupportedEncoding("unsupported encoding (format " + std::to_string(format) + ", " +
                                 std::to_string(bits) + " bits); expected 16-bit PCM: " +
                                 path.string());
  }
  if (rate == 0) throw FormatError("zero sample rate in " + path.string());
  if (data == nullptr) throw FormatError("missing data chunk: " + path.string());

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  const std::size_t n = data_size / 2;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = static_cast<std::int16_t>(read_u16(data + 2 * i));
    w.samples[i] = static_cast<float>(v) / 32768.0f;
  }
  return w;
}

std::size_t save_wav(const Waveform& w, const std::filesystem::path& path) {
  if (w.sample_rate <= 0) throw InvalidArgument("sample rate must be positive");
  std::size_t clipped = 0;
  std::vector<unsigned char> out;
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  out.reserve(44 + 2 * n);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + 2 * n);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, 2 * n);
  for (float s : w.samples) {
    double v = std::isfinite(s) ? static_cast<double>(s) : 0.0;
    if (v > 1.0 || v < -1.0 || !std::isfinite(s)) {
      ++clipped;
      v = std::clamp(v, -1.0, 1.0);
    }
    const long q = std::clamp(std::lround(v * 32768.0), -32768L, 32767L);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot write wav file: " + path.string());
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("failed writing wav file: " + path.string());
  return clipped;
}

bool is_valid_window_length(int window_length) {
  return window_length >= 64 && window_length <= 2048 &&
         (window_length & (window_length - 1)) == 0;
}

Index stft_frame_count(std::size_t length, int hop) {
  return static_cast<Index>((length + static_cast<std::size_t>(hop) - 1) / hop);
}

template <typename T>
std::vector<T> hann_window(int length) {
  std::vector<T> w(static_cast<std::size_t>(length));
  for (int n = 0; n < length; ++n) {
    w[n] = static_cast<T>(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / length));
  }
  return w;
}

template <typename T>
ComplexSpectrogram<T> stft_complex(std::span<const T> x, int window_length, int hop) {
  check_window(window_length, hop);
  if (x.empty()) throw InvalidArgument("stft of an empty waveform");
  const auto length = static_cast<Index>(x.size());
  const Index frames = stft_frame_count(x.size(), hop);
  const Index bins = window_length / 2 + 1;
  const Index half = window_length / 2;
  const auto window = hann_window<T>(window_length);

  ComplexSpectrogram<T> out;
  out.window_length = window_length;
  out.hop = hop;
  out.signal_length = x.size();
  out.values.resize(frames, bins);

  auto& fft = fft_engine<T>();
  std::vector<std::complex<T>> buffer(static_cast<std::size_t>(window_length));
  std::vector<std::complex<T>> spectrum;
  for (Index t = 0; t < frames; ++t) {
    const Index start = t * hop - half;
    for (Index n = 0; n < window_length; ++n) {
      const Index idx = reflect_index(start + n, length);
      buffer[static_cast<std::size_t>(n)] = std::complex<T>(x[static_cast<std::size_t>(idx)] * window[n], T(0));
    }
    fft.fwd(spectrum, buffer);
    for (Index k = 0; k < bins; ++k) out.values(t, k) = spectrum[static_cast<std::size_t>(k)];
  }
  return out;
}

template <typename T>
Spectrogram<T> magnitude(const ComplexSpectrogram<T>& spec) {
  Spectrogram<T> out;
  out.window_length = spec.window_length;
  out.hop = spec.hop;
  out.magnitudes = spec.values.cwiseAbs();
  return out;
}

template <typename T>
Spectrogram<T> stft(std::span<const T> x, int window_length, int hop) {
  return magnitude(stft_complex<T>(x, window_length, hop));
}

Spectrogram<float> stft(const Waveform& w, int window_length, int hop) {
  return stft<float>(std::span<const float>(w.samples), window_length, hop);
}

template <typename T>
std::vector<T> stft_magnitude_backward(const ComplexSpectrogram<T>& spec,
                                       const RowMatrix<T>& grad_magnitudes) {
  const Index frames = spec.values.rows();
  const Index bins = spec.values.cols();
  if (grad_magnitudes.rows() != frames || grad_magnitudes.cols() != bins) {
    throw InvalidArgument("gradient shape does not match spectrogram");
  }
  const int s = spec.window_length;
  const Index half = s / 2;
  const auto length = static_cast<Index>(spec.signal_length);
  const auto window = hann_window<T>(s);

  std::vector<T> grad(spec.signal_length, T(0));
  auto& fft = fft_engine<T>();
  std::vector<std::complex<T>> g(static_cast<std::size_t>(s));
  std::vector<std::complex<T>> time;
  for (Index t = 0; t < frames; ++t) {
    std::fill(g.begin(), g.end(), std::complex<T>(0, 0));
    bool any = false;
    for (Index k = 0; k < bins; ++k) {
      const std::complex<T> v = spec.values(t, k);
      const T mag = std::abs(v);
      const T gm = grad_magnitudes(t, k);
      if (mag > T(0) && gm != T(0)) {
        g[static_cast<std::size_t>(k)] = gm * v / mag;
        any = true;
      }
    }
    if (!any) continue;
    // d|X_k|/du_n = Re(X_k / |X_k| * e^{+2 pi i k n / s}); inv() divides by s.
    fft.inv(time, g);
    const Index start = t * spec.hop - half;
    for (Index n = 0; n < s; ++n) {
      const T du = time[static_cast<std::size_t>(n)].real() * static_cast<T>(s);
      grad[static_cast<std::size_t>(reflect_index(start + n, length))] += du * window[n];
    }
  }
  return grad;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank::MelFilterbank(int sample_rate, int window_length, int n_mels)
    : sample_rate_(sample_rate), window_length_(window_length) {
  if (sample_rate <= 0) throw InvalidArgument("sample rate must be positive");
  if (!is_valid_window_length(window_length)) {
    throw InvalidArgument("mel window length must be a power of two in [64, 2048]");
  }
  const int bins = window_length / 2 + 1;
  if (n_mels < 1 || n_mels > bins) {
    throw InvalidArgument("n_mels (" + std::to_string(n_mels) + ") must be in [1, " +
                          std::to_string(bins) + "]");
  }
  const double nyquist = sample_rate / 2.0;
  const double mel_max = hz_to_mel(nyquist);
  const double bin_hz = static_cast<double>(sample_rate) / window_length;

  // Edge positions in fractional-bin units.
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[i] = mel_to_hz(mel_max * i / (n_mels + 1)) / bin_hz;
  }
  weights_ = RowMatrix<double>::Zero(n_mels, bins);
  for (int m = 0; m < n_mels; ++m) {
    const double center = edges[m + 1];
    // Each slope spans at least one bin so every filter covers an integer bin.
    const double left = std::min(edges[m], center - 1.0);
    const double right = std::max(edges[m + 2], center + 1.0);
    for (int k = 0; k < bins; ++k) {
      const double up = (k - left) / (center - left);
      const double down = (right - k) / (right - center);
      weights_(m, k) = std::max(0.0, std::min(up, down));
    }
  }
}

template <typename T>
RowMatrix<T> MelFilterbank::apply(const RowMatrix<T>& magnitudes) const {
  if (magnitudes.cols() != bins()) throw InvalidArgument("bin count mismatch in mel projection");
  return magnitudes * weights_.transpose().cast<T>();
}

template <typename T>
RowMatrix<T> MelFilterbank::apply_transpose(const RowMatrix<T>& grad_mel) const {
  if (grad_mel.cols() != n_mels()) throw InvalidArgument("mel count mismatch in mel projection");
  return grad_mel * weights_.cast<T>();
}

template <typename T>
Spectrogram<T> mel_spectrogram(std::span<const T> x, int sample_rate, int window_length,
                               int n_mels) {
  const MelFilterbank bank(sample_rate, window_length, n_mels);
  auto spec = stft<T>(x, window_length, window_length / 4);
  spec.magnitudes = bank.apply<T>(spec.magnitudes);
  return spec;
}

Spectrogram<float> mel_spectrogram(const Waveform& w, int window_length, int n_mels) {
  return mel_spectrogram<float>(std::span<const float>(w.samples), w.sample_rate, window_length,
                                n_mels);
}

#define TSCODEC_SIGNAL_INSTANTIATE(T)                                                        \
  template std::vector<T> hann_window<T>(int);                                                \
  template ComplexSpectrogram<T> stft_complex<T>(std::span<const T>, int, int);               \
  template Spectrogram<T> magnitude<T>(const ComplexSpectrogram<T>&);                         \
  template Spectrogram<T> stft<T>(std::span<const T>, int, int);                              \
  template std::vector<T> stft_magnitude_backward<T>(const ComplexSpectrogram<T>&,            \
                                                     const RowMatrix<T>&);                    \
  template RowMatrix<T> MelFilterbank::apply<T>(const RowMatrix<T>&) const;                   \
  template RowMatrix<T> MelFilterbank::apply_transpose<T>(const RowMatrix<T>&) const;         \
  template Spectrogram<T> mel_spectrogram<T>(std::span<const T>, int, int, int);

TSCODEC_SIGNAL_INSTANTIATE(float)
TSCODEC_SIGNAL_INSTANTIATE(double)

#undef TSCODEC_SIGNAL_INSTANTIATE

}  // namespace tscodec::signal
