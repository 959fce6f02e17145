#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace sfanc {

constexpr double kPi = 3.14159265358979323846;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// In-place iterative radix-2 FFT. Forward uses the e^{-i2πkn/N} kernel;
/// the inverse applies the 1/N factor.
inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (!is_pow2(n)) throw std::invalid_argument("fft: length must be a power of two");
  if (n == 1) return;

  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }

  // precomputed half-length twiddle table keeps per-butterfly error flat
  static thread_local std::vector<std::complex<double>> twiddle;
  static thread_local std::size_t twiddle_n = 0;
  if (twiddle_n != n) {
    twiddle.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double ang = -2.0 * kPi * static_cast<double>(k) / static_cast<double>(n);
      twiddle[k] = {std::cos(ang), std::sin(ang)};
    }
    twiddle_n = n;
  }

  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t stride = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<double> w = twiddle[k * stride];
        if (inverse) w = std::conj(w);
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }

  if (inverse) {
    const double inv_n = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv_n;
  }
}

/// DFT of a real signal zero-padded to nfft (power of two); returns all
/// nfft complex bins.
inline std::vector<std::complex<double>> fft_real(std::span<const double> x,
                                                  std::size_t nfft) {
  if (x.size() > nfft) throw std::invalid_argument("fft_real: signal longer than nfft");
  std::vector<std::complex<double>> a(nfft);
  for (std::size_t i = 0; i < x.size(); ++i) a[i] = x[i];
  fft_inplace(a, false);
  return a;
}

/// Full linear convolution, length |a| + |b| - 1, via zero-padded FFT.
inline std::vector<double> fft_convolve(std::span<const double> a,
                                        std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("fft_convolve: empty input");
  const std::size_t out_len = a.size() + b.size() - 1;
  const std::size_t nfft = next_pow2(out_len);
  auto fa = fft_real(a, nfft);
  auto fb = fft_real(b, nfft);
  for (std::size_t i = 0; i < nfft; ++i) fa[i] *= fb[i];
  fft_inplace(fa, true);
  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = fa[i].real();
  return out;
}

/// Linear convolution truncated to the length of the first argument
/// (the causal "filter a stream" shape used throughout the toolkit).
inline std::vector<double> convolve_same(std::span<const double> x,
                                         std::span<const double> h) {
  auto full = fft_convolve(x, h);
  full.resize(x.size());
  return full;
}

}  // namespace sfanc
