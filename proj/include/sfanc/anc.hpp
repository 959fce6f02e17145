#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfanc/geometry.hpp"
#include "sfanc/rir.hpp"
#include "sfanc/rng.hpp"
#include "sfanc/signal.hpp"

namespace sfanc {

/// Most-recent-first sample history of fixed length. dot(w) pairs w[0]
/// with the newest sample, w[k] with the sample k steps back.
class HistoryBuffer {
 public:
  explicit HistoryBuffer(std::size_t len) : buf_(len, 0.0), head_(len - 1) {
    if (len == 0) throw std::invalid_argument("HistoryBuffer: zero length");
  }

  void push(double v) {
    head_ = head_ + 1 == buf_.size() ? 0 : head_ + 1;
    buf_[head_] = v;
  }

  std::size_t size() const { return buf_.size(); }

  double operator[](std::size_t k) const {  // k samples back
    return buf_[(head_ + buf_.size() - k) % buf_.size()];
  }

  double dot(std::span<const double> w) const {
    double acc = 0.0;
    const std::size_t len = buf_.size();
    const std::size_t n = std::min(w.size(), len);
    std::size_t i = 0;
    // newest..oldest split into the two contiguous runs of the ring
    for (std::size_t p = head_ + 1; p-- > 0 && i < n; ++i) acc += w[i] * buf_[p];
    for (std::size_t p = len; p-- > head_ + 1 && i < n; ++i) acc += w[i] * buf_[p];
    return acc;
  }

  /// w[k] += a * history[k] for all k; the FxLMS coefficient update.
  void axpy_into(std::span<double> w, double a) const {
    const std::size_t len = buf_.size();
    const std::size_t n = std::min(w.size(), len);
    std::size_t i = 0;
    for (std::size_t p = head_ + 1; p-- > 0 && i < n; ++i) w[i] += a * buf_[p];
    for (std::size_t p = len; p-- > head_ + 1 && i < n; ++i) w[i] += a * buf_[p];
  }

 private:
  std::vector<double> buf_;
  std::size_t head_;
};

/// J fixed control filters of common length L, tagged with the direction
/// they were trained for.
struct ControlFilterSet {
  std::vector<std::vector<double>> taps;  // J x L
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  bool converged = true;

  std::size_t channels() const { return taps.size(); }
  std::size_t length() const { return taps.empty() ? 0 : taps.front().size(); }
};

/// y(n) = sum_j r_j^T(n) w_j with histories given most-recent-first.
inline double control_output(const ControlFilterSet& w,
                             const std::vector<std::vector<double>>& ref_history) {
  if (ref_history.size() != w.channels())
    throw std::invalid_argument("control_output: channel count mismatch");
  double y = 0.0;
  for (std::size_t j = 0; j < w.channels(); ++j) {
    if (ref_history[j].size() != w.length())
      throw std::invalid_argument("control_output: history length mismatch");
    for (std::size_t k = 0; k < w.length(); ++k) y += ref_history[j][k] * w.taps[j][k];
  }
  return y;
}

/// e(n) = d(n) - y^T(n) s with the control history most-recent-first.
inline double error_sample(double d, std::span<const double> y_history,
                           std::span<const double> secondary_path) {
  if (y_history.size() != secondary_path.size())
    throw std::invalid_argument("error_sample: history length mismatch");
  double anti = 0.0;
  for (std::size_t i = 0; i < y_history.size(); ++i)
    anti += y_history[i] * secondary_path[i];
  return d - anti;
}

/// Offline filtered reference r'_j = s_hat * r_j, truncated to len(r_j).
inline std::vector<double> filtered_reference(std::span<const double> r,
                                              const ImpulseResponse& s_hat) {
  if (s_hat.taps.empty()) throw std::invalid_argument("filtered_reference: empty path");
  return convolve_same(r, s_hat.taps);
}

struct FxlmsConfig {
  double step_size = 1e-4;                   // mu
  std::size_t filter_length = 1024;          // L
  ImpulseResponse secondary_path_estimate;   // s_hat, length L_s

  void validate() const {
    if (step_size <= 0.0) throw std::invalid_argument("FxlmsConfig: step_size must be > 0");
    if (filter_length == 0) throw std::invalid_argument("FxlmsConfig: filter_length must be > 0");
    if (secondary_path_estimate.taps.empty())
      throw std::invalid_argument("FxlmsConfig: secondary path estimate is empty");
  }
};

/// Per-sample multi-reference controller state. Runs either with frozen
/// coefficients or with the FxLMS coefficient update; the simulated error
/// always uses the true secondary path, the update uses the estimate.
class AncState {
 public:
  AncState(std::size_t j_channels, std::size_t filter_length,
           ImpulseResponse secondary_path_true, ImpulseResponse secondary_path_estimate)
      : s_true_(std::move(secondary_path_true)),
        s_hat_(std::move(secondary_path_estimate)),
        y_history_(s_true_.taps.size()) {
    if (j_channels == 0 || filter_length == 0)
      throw std::invalid_argument("AncState: empty configuration");
    if (s_true_.taps.empty() || s_hat_.taps.empty())
      throw std::invalid_argument("AncState: empty secondary path");
    weights_.assign(j_channels, std::vector<double>(filter_length, 0.0));
    for (std::size_t j = 0; j < j_channels; ++j) {
      ref_history_.emplace_back(filter_length);
      ref_recent_.emplace_back(s_hat_.taps.size());
      fref_history_.emplace_back(filter_length);
    }
  }

  std::size_t channels() const { return weights_.size(); }
  std::size_t filter_length() const { return weights_.front().size(); }

  std::vector<std::vector<double>>& weights() { return weights_; }
  const std::vector<std::vector<double>>& weights() const { return weights_; }

  void set_weights(const ControlFilterSet& w) {
    if (w.channels() != channels() || w.length() != filter_length())
      throw std::invalid_argument("AncState: filter shape mismatch");
    weights_ = w.taps;
  }

  /// One controller sample: consume the J new reference samples and the
  /// disturbance, emit e(n). step_size > 0 applies the FxLMS update.
  double step(std::span<const double> r_new, double d, double step_size) {
    if (r_new.size() != channels())
      throw std::invalid_argument("AncState::step: wrong reference channel count");

    double y = 0.0;
    for (std::size_t j = 0; j < channels(); ++j) {
      ref_history_[j].push(r_new[j]);
      y += ref_history_[j].dot(weights_[j]);
    }
    y_history_.push(y);
    double anti = y_history_.dot(s_true_.taps);
    const double e = d - anti;

    if (!std::isfinite(e))
      throw std::runtime_error(
          "FxLMS diverged: non-finite error sample (step size too large?)");

    if (step_size > 0.0) {
      const double mu_e = step_size * e;
      for (std::size_t j = 0; j < channels(); ++j) {
        ref_recent_[j].push(r_new[j]);
        fref_history_[j].push(ref_recent_[j].dot(s_hat_.taps));
        fref_history_[j].axpy_into(weights_[j], mu_e);
      }
    }
    return e;
  }

 private:
  ImpulseResponse s_true_;
  ImpulseResponse s_hat_;
  std::vector<std::vector<double>> weights_;
  std::vector<HistoryBuffer> ref_history_;   // per channel, length L
  std::vector<HistoryBuffer> ref_recent_;    // per channel, length L_s
  std::vector<HistoryBuffer> fref_history_;  // filtered reference, length L
  HistoryBuffer y_history_;                  // length L_s
};

/// fxlms_step as a free operation over the state object.
inline double fxlms_step(AncState& state, std::span<const double> r_new, double d,
                         const FxlmsConfig& cfg) {
  cfg.validate();
  return state.step(r_new, d, cfg.step_size);
}

// --- acoustic scene shared by pre-training and simulation -------------------

/// Fixed room-side setup of the 4x1x1 system: reference array, secondary
/// source and error microphone positions.
struct AncAcoustics {
  Room room;
  MicArray array;
  Vec3 secondary_source;
  Vec3 error_mic;
  double fs = kSampleRate;
  std::size_t rir_taps = 4096;       // reference / primary path length
  std::size_t secondary_taps = 512;  // L_s

  void validate() const {
    if (!room.contains(secondary_source) || !room.contains(error_mic))
      throw std::invalid_argument("AncAcoustics: geometry outside the room");
    for (const auto& p : array.positions)
      if (!room.contains(p))
        throw std::invalid_argument("AncAcoustics: array outside the room");
  }
};

/// Default small-office setup used by the bundled configs and tests. The
/// array sits off the room's mid-planes on purpose: a centered array makes
/// mirrored directions acoustically near-identical, which collapses the
/// separation between matched and mismatched control filters.
inline AncAcoustics desk_acoustics(double rt60 = 0.3) {
  return AncAcoustics{Room({6.0, 4.0, 3.0}, rt60),
                      make_tetrahedral_array({2.1, 1.7, 1.3}, 0.025),
                      {2.9, 2.1, 1.4},
                      {3.2, 2.2, 1.35}};
}

struct RenderedScene {
  std::vector<std::vector<double>> refs;  // J channels
  std::vector<double> disturbance;        // primary path at the error mic
  Vec3 source_position;
};

/// Renders reference and disturbance signals for a source at the given
/// placement. Sensor noise (if any) is applied to the reference channels
/// only; the disturbance stays clean so NR measures control, not noise.
inline RenderedScene render_scene(const AncAcoustics& ac, const SourcePlacement& placement,
                                  std::span<const double> x,
                                  std::optional<double> snr_db, Rng& rng) {
  ac.validate();
  const Vec3 src = place_source(ac.array, placement);
  if (!ac.room.contains(src))
    throw std::invalid_argument("render_scene: source position outside the room");

  std::vector<ImpulseResponse> rirs;
  rirs.reserve(ac.array.positions.size());
  for (const auto& mic : ac.array.positions)
    rirs.push_back(simulate_rir(ac.room, src, mic, ac.fs, ac.rir_taps));

  RenderedScene scene;
  scene.source_position = src;
  scene.refs = render_mic_signals(x, rirs, snr_db, rng);
  const auto primary = simulate_rir(ac.room, src, ac.error_mic, ac.fs, ac.rir_taps);
  scene.disturbance = convolve_same(x, primary.taps);
  return scene;
}

inline ImpulseResponse secondary_path(const AncAcoustics& ac) {
  return simulate_rir(ac.room, ac.secondary_source, ac.error_mic, ac.fs, ac.secondary_taps);
}

// --- pre-trained control filter library --------------------------------------

constexpr std::array<double, 6> kAzimuthClassesDeg = {0, 60, 120, 180, 240, 300};
constexpr std::array<double, 3> kElevationClassesDeg = {90, 30, -30};
constexpr double kLibrarySourceDistanceM = 0.2;

struct PretrainOptions {
  double band_lo_hz = 20.0;
  double band_hi_hz = 2020.0;
  double max_seconds = 60.0;        // step cap
  double plateau_db = 0.1;          // trailing-NR improvement threshold
  int plateau_seconds = 5;
  std::uint64_t noise_seed = 1234;
};

/// Pre-trains one fixed control filter with FxLMS on band-limited noise
/// rendered from the given direction. Stops at the trailing-1 s NR plateau
/// or at the step cap (the latter clears the converged flag).
inline ControlFilterSet pretrain_filter(const AncAcoustics& ac,
                                        const SourcePlacement& direction,
                                        const FxlmsConfig& cfg,
                                        const PretrainOptions& opts = {}) {
  cfg.validate();
  Rng rng(opts.noise_seed);
  const auto x = bandlimited_noise(opts.band_lo_hz, opts.band_hi_hz, opts.max_seconds,
                                   ac.fs, rng);
  Rng render_rng(opts.noise_seed ^ 0x5eedULL);
  const auto scene = render_scene(ac, direction, x, std::nullopt, render_rng);

  AncState state(scene.refs.size(), cfg.filter_length, secondary_path(ac),
                 cfg.secondary_path_estimate);

  const auto sec = static_cast<std::size_t>(ac.fs);
  std::vector<double> trailing_nr;
  bool converged = false;
  std::size_t n = 0;
  std::vector<double> r(scene.refs.size());
  std::vector<double> err(x.size(), 0.0);

  while (n < x.size()) {
    for (std::size_t j = 0; j < scene.refs.size(); ++j) r[j] = scene.refs[j][n];
    err[n] = state.step(r, scene.disturbance[n], cfg.step_size);
    ++n;
    if (n % sec == 0 && n >= sec) {
      double pd = 0.0, pe = 0.0;
      for (std::size_t i = n - sec; i < n; ++i) {
        pd += scene.disturbance[i] * scene.disturbance[i];
        pe += err[i] * err[i];
      }
      pe = std::max(pe, 1e-12 * pd);
      trailing_nr.push_back(10.0 * std::log10(pd / pe));
      const std::size_t m = trailing_nr.size();
      if (m > static_cast<std::size_t>(opts.plateau_seconds)) {
        bool plateau = true;
        for (std::size_t k = m - opts.plateau_seconds; k < m; ++k)
          if (trailing_nr[k] - trailing_nr[k - 1] >= opts.plateau_db) plateau = false;
        if (plateau) {
          converged = true;
          break;
        }
      }
    }
  }

  ControlFilterSet out;
  out.taps = state.weights();
  out.azimuth_deg = direction.azimuth_deg;
  out.elevation_deg = direction.elevation_deg;
  out.converged = converged;
  return out;
}

/// The 13-entry direction-indexed library: 6 azimuths at +30 deg, 6 at
/// -30 deg, one shared entry at the +90 deg pole. Entry 0 is the pole,
/// entries 1..6 are elevation 30 deg, entries 7..12 elevation -30 deg.
struct ControlFilterLibrary {
  std::vector<ControlFilterSet> entries;

  static std::size_t entry_index(std::size_t azim_class, std::size_t elev_class) {
    if (azim_class >= kAzimuthClassesDeg.size() || elev_class >= kElevationClassesDeg.size())
      throw std::invalid_argument("ControlFilterLibrary: class index out of range");
    if (elev_class == 0) return 0;  // pole is shared across azimuths
    return 1 + (elev_class - 1) * kAzimuthClassesDeg.size() + azim_class;
  }

  const ControlFilterSet& lookup(std::size_t azim_class, std::size_t elev_class) const {
    return entries.at(entry_index(azim_class, elev_class));
  }

  void validate() const {
    if (entries.size() != 13)
      throw std::runtime_error("ControlFilterLibrary: expected exactly 13 entries");
    for (const auto& e : entries)
      if (e.channels() != entries.front().channels() ||
          e.length() != entries.front().length())
        throw std::runtime_error("ControlFilterLibrary: inconsistent filter shapes");
  }
};

/// Direction of each library entry, in entry order.
inline std::vector<SourcePlacement> library_directions() {
  std::vector<SourcePlacement> dirs;
  dirs.emplace_back(0.0, 90.0, kLibrarySourceDistanceM);
  for (double elev : {30.0, -30.0})
    for (double az : kAzimuthClassesDeg)
      dirs.emplace_back(az, elev, kLibrarySourceDistanceM);
  return dirs;
}

inline ControlFilterLibrary build_filter_library(const AncAcoustics& ac,
                                                 const FxlmsConfig& cfg,
                                                 const PretrainOptions& opts = {}) {
  ControlFilterLibrary lib;
  for (const auto& dir : library_directions())
    lib.entries.push_back(pretrain_filter(ac, dir, cfg, opts));
  lib.validate();
  return lib;
}

}  // namespace sfanc
