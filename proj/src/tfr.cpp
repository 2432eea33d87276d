#include "seqsleep/tfr.hpp"

#include <bit>
#include <cmath>
#include <numbers>

namespace seqsleep::tfr {

namespace {

std::size_t exact_count(double value, const char* what) {
  const double r = std::round(value);
  if (r < 1.0 || std::abs(value - r) > 1e-9) {
    throw UsageError(std::string("stft: ") + what + " must be a positive whole number of samples");
  }
  return static_cast<std::size_t>(r);
}

}  // namespace

std::size_t StftConfig::window_length() const {
  return exact_count(win_seconds * sample_rate, "window length");
}

std::size_t StftConfig::hop_length() const {
  if (overlap_fraction < 0.0 || overlap_fraction >= 1.0) {
    throw UsageError("stft: overlap fraction must lie in [0, 1)");
  }
  return exact_count(static_cast<double>(window_length()) * (1.0 - overlap_fraction), "hop");
}

std::size_t StftConfig::frames(std::size_t n_samples) const {
  const std::size_t win = window_length();
  if (n_samples < win) throw DataError("epoch too short");
  return (n_samples - win) / hop_length() + 1;
}

TimeFrequencyImage::TimeFrequencyImage(std::size_t freq_bins, std::size_t frames,
                                       std::size_t channels)
    : freq_bins_(freq_bins),
      frames_(frames),
      channels_(channels),
      values_(freq_bins * frames * channels, 0.0) {}

Matrix TimeFrequencyImage::channel(std::size_t c) const {
  Matrix m(freq_bins_, frames_);
  for (std::size_t t = 0; t < frames_; ++t) {
    for (std::size_t f = 0; f < freq_bins_; ++f) m(f, t) = at(f, t, c);
  }
  return m;
}

std::vector<double> hamming_window(std::size_t length) {
  std::vector<double> w(length, 1.0);
  if (length <= 1) return w;
  const double denom = static_cast<double>(length - 1);
  for (std::size_t n = 0; n < length; ++n) {
    w[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / denom);
  }
  return w;
}

void fft_inplace(std::vector<std::complex<double>>& data) {
  const std::size_t n = data.size();
  if (n == 0 || !std::has_single_bit(n)) throw UsageError("fft: size must be a power of two");

  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }

  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      // Twiddles from the angle directly; recurrences drift at 1e-13.
      const std::complex<double> w(std::cos(angle * static_cast<double>(k)),
                                   std::sin(angle * static_cast<double>(k)));
      for (std::size_t start = 0; start < n; start += len) {
        const std::complex<double> u = data[start + k];
        const std::complex<double> v = data[start + k + half] * w;
        data[start + k] = u + v;
        data[start + k + half] = u - v;
      }
    }
  }
}

Matrix compute_log_spectrogram(std::span<const double> signal, const StftConfig& config) {
  const std::size_t win = config.window_length();
  const std::size_t hop = config.hop_length();
  if (config.nfft < win) throw UsageError("stft: nfft must be at least the window length");
  if (signal.size() < win) throw DataError("epoch too short");
  for (double x : signal) {
    if (!std::isfinite(x)) throw DataError("stft: non-finite sample in signal");
  }

  const std::size_t frames = (signal.size() - win) / hop + 1;
  const std::size_t bins = config.freq_bins();
  const std::vector<double> window = hamming_window(win);

  Matrix out(bins, frames);
  std::vector<std::complex<double>> buf(config.nfft);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    for (std::size_t i = 0; i < win; ++i) buf[i] = signal[t * hop + i] * window[i];
    fft_inplace(buf);
    for (std::size_t k = 0; k < bins; ++k) out(k, t) = std::log(std::norm(buf[k]) + kLogFloor);
  }
  return out;
}

TimeFrequencyImage epoch_to_image(const EpochSignal& epoch, const StftConfig& config) {
  if (epoch.samples.empty()) throw DataError("epoch has no channels");
  const std::size_t n = epoch.samples.front().size();
  for (const auto& ch : epoch.samples) {
    if (ch.size() != n) {
      throw DataError("channel length mismatch: " + std::to_string(ch.size()) + " vs " +
                      std::to_string(n) + " samples");
    }
  }
  TimeFrequencyImage image(config.freq_bins(), config.frames(n), epoch.channels());
  for (std::size_t c = 0; c < epoch.channels(); ++c) {
    const Matrix spectrogram = compute_log_spectrogram(epoch.samples[c], config);
    for (std::size_t t = 0; t < image.frames(); ++t) {
      for (std::size_t f = 0; f < image.freq_bins(); ++f) image.at(f, t, c) = spectrogram(f, t);
    }
  }
  return image;
}

}  // namespace seqsleep::tfr
