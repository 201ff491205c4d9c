#pragma once

#include <complex>
#include <filesystem>
#include <span>
#include <vector>

#include "tscodec/error.hpp"
#include "tscodec/tensor.hpp"

namespace tscodec::signal {

// Mono audio with amplitudes nominally in [-1, 1].
struct Waveform {
  std::vector<float> samples;
  int sample_rate = 24000;

  std::size_t size() const { return samples.size(); }
  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Throws InvalidArgument when samples are empty, non-finite or the rate is
// not positive.
void validate(const Waveform& w);

class WavMissingFile : public IoError {
 public:
  using IoError::IoError;
};
class WavNotMono : public FormatError {
 public:
  using FormatError::FormatError;
};
class WavUnsupportedEncoding : public FormatError {
 public:
  using FormatError::FormatError;
};

// 16-bit PCM mono RIFF/WAVE. Samples are scaled by 1/32768.
Waveform load_wav(const std::filesystem::path& path);

// Returns the number of samples that had to be clipped into [-1, 1).
std::size_t save_wav(const Waveform& w, const std::filesystem::path& path);

// Magnitude spectrogram, frames x (window_length / 2 + 1).
template <typename T>
struct Spectrogram {
  RowMatrix<T> magnitudes;
  int window_length = 0;
  int hop = 0;

  Index frames() const { return magnitudes.rows(); }
  Index bins() const { return magnitudes.cols(); }
};

// Complex half spectrum kept around for the backward pass.
template <typename T>
struct ComplexSpectrogram {
  Eigen::Matrix<std::complex<T>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> values;
  int window_length = 0;
  int hop = 0;
  std::size_t signal_length = 0;
};

bool is_valid_window_length(int window_length);

// Number of frames produced for a signal of `length` samples.
Index stft_frame_count(std::size_t length, int hop);

// Periodic Hann window.
template <typename T>
std::vector<T> hann_window(int length);

// Centered STFT with reflect padding and a periodic Hann window. Frame t is
// centred on sample t * hop; there are ceil(len / hop) frames.
template <typename T>
ComplexSpectrogram<T> stft_complex(std::span<const T> x, int window_length, int hop);

template <typename T>
Spectrogram<T> magnitude(const ComplexSpectrogram<T>& spec);

template <typename T>
Spectrogram<T> stft(std::span<const T> x, int window_length, int hop);

Spectrogram<float> stft(const Waveform& w, int window_length, int hop);

// Vector-Jacobian product of |stft(x)| with respect to x.
template <typename T>
std::vector<T> stft_magnitude_backward(const ComplexSpectrogram<T>& spec,
                                       const RowMatrix<T>& grad_magnitudes);

// Triangular filters on the HTK mel scale spanning 0 Hz to Nyquist.
class MelFilterbank {
 public:
  MelFilterbank(int sample_rate, int window_length, int n_mels);

  int sample_rate() const { return sample_rate_; }
  int window_length() const { return window_length_; }
  Index n_mels() const { return weights_.rows(); }
  Index bins() const { return weights_.cols(); }
  const RowMatrix<double>& weights() const { return weights_; }

  // frames x bins -> frames x n_mels
  template <typename T>
  RowMatrix<T> apply(const RowMatrix<T>& magnitudes) const;

  // Transpose of apply(): frames x n_mels -> frames x bins.
  template <typename T>
  RowMatrix<T> apply_transpose(const RowMatrix<T>& grad_mel) const;

 private:
  int sample_rate_;
  int window_length_;
  RowMatrix<double> weights_;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Mel magnitudes (frames x n_mels) using hop = window_length / 4.
template <typename T>
Spectrogram<T> mel_spectrogram(std::span<const T> x, int sample_rate, int window_length,
                               int n_mels);

Spectrogram<float> mel_spectrogram(const Waveform& w, int window_length, int n_mels);

}  // namespace tscodec::signal
