#pragma once

#include "seqsleep/common.hpp"

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace seqsleep::tfr {

// One multichannel epoch of raw samples, channel-major.
struct EpochSignal {
  std::vector<std::vector<double>> samples;  // [C][N]
  double sample_rate = 100.0;

  std::size_t channels() const { return samples.size(); }
};

struct StftConfig {
  double sample_rate = 100.0;
  double win_seconds = 2.0;
  double overlap_fraction = 0.5;
  std::size_t nfft = 256;

  std::size_t window_length() const;
  std::size_t hop_length() const;
  std::size_t freq_bins() const { return nfft / 2 + 1; }
  std::size_t frames(std::size_t n_samples) const;
};

// Log-power image of one epoch. Stored channel-major with each spectral column
// contiguous: index ((c * T) + t) * F + f.
class TimeFrequencyImage {
 public:
  TimeFrequencyImage() = default;
  TimeFrequencyImage(std::size_t freq_bins, std::size_t frames, std::size_t channels);

  std::size_t freq_bins() const { return freq_bins_; }
  std::size_t frames() const { return frames_; }
  std::size_t channels() const { return channels_; }

  double& at(std::size_t f, std::size_t t, std::size_t c) {
    return values_[(c * frames_ + t) * freq_bins_ + f];
  }
  double at(std::size_t f, std::size_t t, std::size_t c) const {
    return values_[(c * frames_ + t) * freq_bins_ + f];
  }
  // Spectral column t of channel c, length F.
  std::span<const double> column(std::size_t t, std::size_t c) const {
    return {values_.data() + (c * frames_ + t) * freq_bins_, freq_bins_};
  }
  // Channel c as an [F][T] matrix.
  Matrix channel(std::size_t c) const;

  const std::vector<double>& values() const { return values_; }

 private:
  std::size_t freq_bins_ = 0;
  std::size_t frames_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> values_;
};

// Hamming window w[n] = 0.54 - 0.46 cos(2 pi n / (len - 1)).
std::vector<double> hamming_window(std::size_t length);

// In-place iterative radix-2 FFT; size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& data);

// Hamming-windowed power spectrogram in natural-log scale,
// log(|X|^2 + kLogFloor). Returns [nfft/2 + 1][T].
Matrix compute_log_spectrogram(std::span<const double> signal, const StftConfig& config);

TimeFrequencyImage epoch_to_image(const EpochSignal& epoch, const StftConfig& config);

}  // namespace seqsleep::tfr
