#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "sfanc/fft.hpp"
#include "sfanc/rng.hpp"
#include "sfanc/tensor.hpp"

namespace sfanc {

constexpr double kSampleRate = 16000.0;
constexpr std::size_t kStftWin = 1024;
constexpr std::size_t kStftHop = 64;
constexpr std::size_t kFrameLen = 8000;  // 0.5 s at 16 kHz

/// One-sided complex STFT, frame-major storage.
struct Spectrogram {
  std::size_t n_freq = 0;
  std::size_t n_frames = 0;
  std::size_t win_len = 0;
  std::size_t hop = 0;
  std::vector<std::complex<double>> bins;  // [frame * n_freq + bin]

  std::complex<double> at(std::size_t frame, std::size_t bin) const {
    return bins[frame * n_freq + bin];
  }
};

inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

/// Hann-windowed STFT, no zero-padding beyond the window, one-sided bins.
/// Per frame, sum over the two-sided spectrum of |X_k|^2 equals
/// win_len * sum of |w(n)x(n)|^2 (Parseval with this scaling).
inline Spectrogram stft(std::span<const double> x, std::size_t win_len = kStftWin,
                        std::size_t hop = kStftHop) {
  if (x.size() < win_len)
    throw std::invalid_argument("stft: signal shorter than one window");
  if (!is_pow2(win_len)) throw std::invalid_argument("stft: window must be a power of two");

  Spectrogram sg;
  sg.win_len = win_len;
  sg.hop = hop;
  sg.n_freq = win_len / 2 + 1;
  sg.n_frames = (x.size() - win_len) / hop + 1;
  sg.bins.resize(sg.n_freq * sg.n_frames);

  const auto w = hann_window(win_len);
  std::vector<std::complex<double>> buf(win_len);
  for (std::size_t t = 0; t < sg.n_frames; ++t) {
    const double* frame = x.data() + t * hop;
    for (std::size_t n = 0; n < win_len; ++n) buf[n] = w[n] * frame[n];
    fft_inplace(buf, false);
    for (std::size_t k = 0; k < sg.n_freq; ++k) sg.bins[t * sg.n_freq + k] = buf[k];
  }
  return sg;
}

/// CNN input: (2J, n_freq, n_frames) with magnitude channels first, then
/// phase channels in (-pi, pi]. Phase of zero-magnitude bins is 0.
inline Tensor<float> features(const std::vector<std::vector<double>>& frame) {
  if (frame.empty()) throw std::invalid_argument("features: no channels");
  const std::size_t j_count = frame.size();
  for (const auto& ch : frame)
    if (ch.size() != kFrameLen)
      throw std::invalid_argument("features: each channel must be exactly 8000 samples");

  const std::size_t n_freq = kStftWin / 2 + 1;
  const std::size_t n_frames = (kFrameLen - kStftWin) / kStftHop + 1;
  Tensor<float> out({2 * j_count, n_freq, n_frames});

  for (std::size_t j = 0; j < j_count; ++j) {
    const Spectrogram sg = stft(frame[j]);
    float* mag = out.data.data() + j * n_freq * n_frames;
    float* ph = out.data.data() + (j_count + j) * n_freq * n_frames;
    for (std::size_t k = 0; k < n_freq; ++k) {
      for (std::size_t t = 0; t < n_frames; ++t) {
        const std::complex<double> v = sg.at(t, k);
        const double m = std::abs(v);
        double p = m > 0.0 ? std::atan2(v.imag(), v.real()) : 0.0;
        if (p == -kPi) p = kPi;
        mag[k * n_frames + t] = static_cast<float>(m);
        ph[k * n_frames + t] = static_cast<float>(p);
      }
    }
  }
  return out;
}

/// Band-limited unit-variance Gaussian noise: white noise masked to
/// [lo_hz, hi_hz] in the frequency domain (power-of-two DFT, truncated to
/// the requested length), then rescaled to unit variance.
inline std::vector<double> bandlimited_noise(double lo_hz, double hi_hz,
                                             double duration_s, double fs, Rng& rng) {
  if (!(lo_hz >= 0.0 && lo_hz < hi_hz && hi_hz <= fs / 2.0))
    throw std::invalid_argument("bandlimited_noise: need 0 <= lo < hi <= fs/2");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * fs));
  if (n == 0) throw std::invalid_argument("bandlimited_noise: zero-length request");

  const std::size_t nfft = next_pow2(std::max<std::size_t>(n, 2));
  std::vector<std::complex<double>> a(nfft);
  for (auto& v : a) v = rng.normal();
  fft_inplace(a, false);
  const double df = fs / static_cast<double>(nfft);
  for (std::size_t k = 0; k <= nfft / 2; ++k) {
    const double f = k * df;
    if (f < lo_hz || f > hi_hz) {
      a[k] = 0.0;
      if (k != 0 && k != nfft / 2) a[nfft - k] = 0.0;
    }
  }
  fft_inplace(a, true);

  std::vector<double> out(n);
  double power = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = a[i].real();
    power += out[i] * out[i];
  }
  power /= static_cast<double>(n);
  if (power <= 0.0) throw std::runtime_error("bandlimited_noise: degenerate band");
  const double scale = 1.0 / std::sqrt(power);
  for (double& v : out) v *= scale;
  return out;
}

/// Welch PSD: Hann segments, one-sided, per-Hz normalization so that the
/// integral over frequency recovers the signal variance.
struct PsdEstimate {
  std::vector<double> power;  // length seg_len/2 + 1
  double df = 0.0;            // bin spacing in Hz

  double frequency(std::size_t k) const { return df * static_cast<double>(k); }
};

inline PsdEstimate welch_psd(std::span<const double> x, double fs,
                             std::size_t seg_len = 4096, double overlap = 0.5) {
  if (x.size() < seg_len) throw std::invalid_argument("welch_psd: signal shorter than one segment");
  const auto hop = static_cast<std::size_t>(seg_len * (1.0 - overlap));
  if (hop == 0) throw std::invalid_argument("welch_psd: overlap too large");

  const auto w = hann_window(seg_len);
  double w_energy = 0.0;
  for (double v : w) w_energy += v * v;

  const std::size_t n_freq = seg_len / 2 + 1;
  PsdEstimate psd;
  psd.df = fs / static_cast<double>(seg_len);
  psd.power.assign(n_freq, 0.0);

  std::size_t n_segs = 0;
  std::vector<std::complex<double>> buf(seg_len);
  for (std::size_t start = 0; start + seg_len <= x.size(); start += hop, ++n_segs) {
    for (std::size_t i = 0; i < seg_len; ++i) buf[i] = w[i] * x[start + i];
    fft_inplace(buf, false);
    for (std::size_t k = 0; k < n_freq; ++k) {
      const double mag2 = std::norm(buf[k]);
      const double one_sided = (k == 0 || k == seg_len / 2) ? 1.0 : 2.0;
      psd.power[k] += one_sided * mag2 / (fs * w_energy);
    }
  }
  for (double& p : psd.power) p /= static_cast<double>(n_segs);
  return psd;
}

/// Mean PSD power over [lo_hz, hi_hz].
inline double band_mean_power(const PsdEstimate& psd, double lo_hz, double hi_hz) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < psd.power.size(); ++k) {
    const double f = psd.frequency(k);
    if (f >= lo_hz && f <= hi_hz) {
      sum += psd.power[k];
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("band_mean_power: empty band");
  return sum / static_cast<double>(count);
}

/// Per-window noise reduction in dB over non-overlapping windows:
/// 10*log10(sum d^2 / sum e^2), with the error power floored at 1e-12 of
/// the disturbance power (caps the series at 120 dB).
inline std::vector<double> noise_reduction_series(std::span<const double> d,
                                                  std::span<const double> e,
                                                  double fs, double window_s = 0.5) {
  if (d.size() != e.size())
    throw std::invalid_argument("noise_reduction_series: length mismatch");
  const auto win = static_cast<std::size_t>(std::llround(window_s * fs));
  if (win == 0 || d.size() < win)
    throw std::invalid_argument("noise_reduction_series: window does not fit");

  std::vector<double> nr;
  for (std::size_t start = 0; start + win <= d.size(); start += win) {
    double pd = 0.0, pe = 0.0;
    for (std::size_t i = start; i < start + win; ++i) {
      pd += d[i] * d[i];
      pe += e[i] * e[i];
    }
    if (pd <= 0.0) {
      nr.push_back(0.0);
      continue;
    }
    pe = std::max(pe, 1e-12 * pd);
    nr.push_back(10.0 * std::log10(pd / pe));
  }
  return nr;
}

inline double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace sfanc
