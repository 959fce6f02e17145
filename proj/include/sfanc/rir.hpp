#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

#include "sfanc/fft.hpp"
#include "sfanc/geometry.hpp"
#include "sfanc/rng.hpp"

namespace sfanc {

/// A sampled acoustic path (source-to-mic RIR, primary path, or secondary
/// path), with its sampling rate.
struct ImpulseResponse {
  std::vector<double> taps;
  double fs = 0.0;
};

namespace detail {

// Fractional-delay interpolation kernel: 81-tap Hann-windowed sinc.
constexpr int kSincTaps = 81;
constexpr int kSincHalf = 40;

constexpr int kSincNormGrid = 256;

struct SincTables {
  double cos_tab[kSincTaps];
  double sin_tab[kSincTaps];
  double sign_over_pi[kSincTaps];
  // A pure delay conserves energy, but the Hann window sheds up to 1% of the
  // kernel norm at half-sample offsets; inv_norm rescales each image back to
  // unit kernel energy as a function of the fractional delay.
  double inv_norm[kSincNormGrid + 1];
  SincTables() {
    for (int n = 0; n < kSincTaps; ++n) {
      const double a = 2.0 * kPi * static_cast<double>(n - kSincHalf) / kSincTaps;
      cos_tab[n] = std::cos(a);
      sin_tab[n] = std::sin(a);
      // sin(pi*(k - frac)) = -(-1)^k * sin(pi*frac) for integer k
      sign_over_pi[n] = (((n - kSincHalf) & 1) ? 1.0 : -1.0) / kPi;
    }
    inv_norm[0] = 1.0;
    inv_norm[kSincNormGrid] = 1.0;
    for (int f = 1; f < kSincNormGrid; ++f) {
      const double frac = static_cast<double>(f) / kSincNormGrid;
      const double s_pf = std::sin(kPi * frac);
      double energy = 0.0;
      for (int n = 0; n < kSincTaps; ++n) {
        const double t = static_cast<double>(n - kSincHalf) - frac;
        const double hann = 0.5 + 0.5 * std::cos(2.0 * kPi * t / kSincTaps);
        const double v = hann * sign_over_pi[n] * s_pf / t;
        energy += v * v;
      }
      inv_norm[f] = 1.0 / std::sqrt(energy);
    }
  }
};

inline const SincTables& sinc_tables() {
  static const SincTables t;
  return t;
}

}  // namespace detail

/// Image-method RIR between source and receiver (both in room coordinates,
/// meters). Fractional delays use an 81-tap Hann-windowed sinc; the image
/// grid extends past the time span of n_taps so every contributing image
/// is included. rt60 == 0 is treated as anechoic (zero reflection).
inline ImpulseResponse simulate_rir(const Room& room, const Vec3& source,
                                    const Vec3& receiver, double fs,
                                    std::size_t n_taps) {
  if (n_taps == 0) throw std::invalid_argument("simulate_rir: n_taps must be > 0");
  if (!room.contains(source) || !room.contains(receiver))
    throw std::invalid_argument("simulate_rir: source and receiver must lie strictly inside the room");
  if (norm(source - receiver) < 1e-9)
    throw std::invalid_argument("simulate_rir: source and receiver coincide");

  const double beta = room.rt60 > 0.0 ? rt60_to_reflection(room)[0] : 0.0;
  const double c_ts = room.speed_of_sound / fs;  // meters per sample

  // room geometry in samples
  const double lx = room.dims[0] / c_ts;
  const double ly = room.dims[1] / c_ts;
  const double lz = room.dims[2] / c_ts;
  const double sx = source[0] / c_ts, sy = source[1] / c_ts, sz = source[2] / c_ts;
  const double rx = receiver[0] / c_ts, ry = receiver[1] / c_ts, rz = receiver[2] / c_ts;

  const double reach = static_cast<double>(n_taps) + detail::kSincTaps;
  const int n1 = beta > 0.0 ? static_cast<int>(std::ceil(reach / (2.0 * lx))) : 0;
  const int n2 = beta > 0.0 ? static_cast<int>(std::ceil(reach / (2.0 * ly))) : 0;
  const int n3 = beta > 0.0 ? static_cast<int>(std::ceil(reach / (2.0 * lz))) : 0;

  // reflection attenuation by total wall-bounce count
  std::vector<double> beta_pow(2 * (n1 + n2 + n3) + 8, 0.0);
  beta_pow[0] = 1.0;
  for (std::size_t i = 1; i < beta_pow.size(); ++i) beta_pow[i] = beta_pow[i - 1] * beta;

  ImpulseResponse ir;
  ir.fs = fs;
  ir.taps.assign(n_taps, 0.0);
  const auto& tab = detail::sinc_tables();

  for (int mx = -n1; mx <= n1; ++mx) {
    const double rmx = 2.0 * mx * lx;
    for (int my = -n2; my <= n2; ++my) {
      const double rmy = 2.0 * my * ly;
      for (int mz = -n3; mz <= n3; ++mz) {
        const double rmz = 2.0 * mz * lz;
        for (int q = 0; q <= 1; ++q) {
          const double dx = (1 - 2 * q) * sx - rx + rmx;
          const int ex = std::abs(mx - q) + std::abs(mx);
          for (int j = 0; j <= 1; ++j) {
            const double dy = (1 - 2 * j) * sy - ry + rmy;
            const int ey = std::abs(my - j) + std::abs(my);
            for (int k = 0; k <= 1; ++k) {
              const double dz = (1 - 2 * k) * sz - rz + rmz;
              const int ez = std::abs(mz - k) + std::abs(mz);
              if (beta == 0.0 && (ex + ey + ez) > 0) continue;

              const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
              const long fdist = static_cast<long>(std::floor(dist));
              if (fdist >= static_cast<long>(n_taps) + detail::kSincHalf) continue;

              const double gain =
                  beta_pow[static_cast<std::size_t>(ex + ey + ez)] /
                  (4.0 * kPi * dist * c_ts);
              const double frac = dist - static_cast<double>(fdist);

              const long base = fdist - detail::kSincHalf;
              if (frac < 1e-12) {
                const long idx = fdist;
                if (idx >= 0 && idx < static_cast<long>(n_taps))
                  ir.taps[static_cast<std::size_t>(idx)] += gain;
                continue;
              }
              const double fp = frac * detail::kSincNormGrid;
              const int fi = static_cast<int>(fp);
              const double fa = fp - fi;
              const double corr =
                  tab.inv_norm[fi] * (1.0 - fa) + tab.inv_norm[fi + 1] * fa;
              const double s_pf = corr * std::sin(kPi * frac);
              const double wf = 2.0 * kPi * frac / detail::kSincTaps;
              const double cf = std::cos(wf), sf = std::sin(wf);
              const long n_lo = base < 0 ? -base : 0;
              long n_hi = static_cast<long>(n_taps) - base;
              if (n_hi > detail::kSincTaps) n_hi = detail::kSincTaps;
              double* out = ir.taps.data() + base + n_lo;
              for (long n = n_lo; n < n_hi; ++n) {
                const double t = static_cast<double>(n - detail::kSincHalf) - frac;
                const double hann = 0.5 + 0.5 * (tab.cos_tab[n] * cf + tab.sin_tab[n] * sf);
                const double sinc = tab.sign_over_pi[n] * s_pf / t;
                *out++ += gain * hann * sinc;
              }
            }
          }
        }
      }
    }
  }
  return ir;
}

/// Reference-microphone rendering: r_j = q_j * x truncated to len(x), with
/// optional independent white Gaussian sensor noise at the given per-channel
/// SNR in dB.
inline std::vector<std::vector<double>> render_mic_signals(
    std::span<const double> x, const std::vector<ImpulseResponse>& rirs,
    std::optional<double> snr_db, Rng& rng) {
  if (x.empty()) throw std::invalid_argument("render_mic_signals: empty source signal");
  if (rirs.empty()) throw std::invalid_argument("render_mic_signals: no RIRs");
  for (const auto& r : rirs)
    if (r.fs != rirs.front().fs)
      throw std::invalid_argument("render_mic_signals: RIR sampling rates differ");

  std::vector<std::vector<double>> out;
  out.reserve(rirs.size());
  for (const auto& r : rirs) {
    auto y = convolve_same(x, r.taps);
    if (snr_db) {
      double power = 0.0;
      for (double v : y) power += v * v;
      power /= static_cast<double>(y.size());
      const double sigma = std::sqrt(power / std::pow(10.0, *snr_db / 10.0));
      for (double& v : y) v += sigma * rng.normal();
    }
    out.push_back(std::move(y));
  }
  return out;
}

}  // namespace sfanc
