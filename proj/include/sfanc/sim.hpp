#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfanc/anc.hpp"
#include "sfanc/cnn.hpp"
#include "sfanc/rng.hpp"
#include "sfanc/signal.hpp"
#include "sfanc/wav.hpp"

namespace sfanc {

// End-to-end cancellation runs of the 4x1x1 system. The real-time controller
// produces y(n) and e(n) every sample; the co-processor classifies each
// completed 0.5 s reference frame and the controller adopts the selected
// filter at the next frame boundary.

enum class Method { kAncOff, kFxlms, kFixed, kDirectional };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::kAncOff: return "anc_off";
    case Method::kFxlms: return "fxlms";
    case Method::kFixed: return "fixed";
    case Method::kDirectional: return "directional";
  }
  throw std::invalid_argument("method_name: unknown method");
}

inline Method method_from_name(const std::string& name) {
  if (name == "anc_off") return Method::kAncOff;
  if (name == "fxlms") return Method::kFxlms;
  if (name == "fixed") return Method::kFixed;
  if (name == "directional") return Method::kDirectional;
  throw std::invalid_argument("unknown method: " + name);
}

/// Source signal: a noise band by default, or a WAV file when a path is set.
struct SignalSpec {
  double band_lo_hz = 100.0;
  double band_hi_hz = 700.0;
  std::string wav_path;
};

struct Scenario {
  AncAcoustics acoustics = desk_acoustics();
  SourcePlacement placement{120.0, 30.0, 1.0};
  SignalSpec signal;
  std::optional<double> snr_db;
  double duration_s = 10.0;
  std::uint64_t seed = 0;
  double fxlms_step_size = 1e-4;
  std::size_t filter_length = 1024;     // FxLMS adaptive filter length
  std::size_t fixed_azim_class = 0;     // fixed-method library entry
  std::size_t fixed_elev_class = 1;
  bool crossfade = false;               // 64-sample linear blend at swaps

  void validate() const {
    acoustics.validate();
    if (duration_s < 1.0) throw std::invalid_argument("Scenario: duration must be >= 1 s");
    if (signal.wav_path.empty() && signal.band_lo_hz >= signal.band_hi_hz)
      throw std::invalid_argument("Scenario: bad noise band");
  }
};

struct FrameSelection {
  std::size_t frame = 0;  // the completed frame the decision was made from
  std::size_t azim_class = 0;
  std::size_t elev_class = 0;
  std::size_t entry_index = 0;
  DoaPrediction prediction;
};

struct SwapEvent {
  std::size_t sample = 0;  // always a frame boundary
  std::size_t entry_index = 0;
};

struct SimResult {
  std::string method;
  std::vector<double> d;
  std::vector<double> e;
  std::vector<FrameSelection> selections;  // directional method only
  std::vector<SwapEvent> swaps;
  std::vector<double> nr_series;  // per 0.5 s window
  double mean_nr_db = 0.0;
  PsdEstimate psd_d;
  PsdEstimate psd_e;
};

// --- co-processor --------------------------------------------------------------

struct SelectOutcome {
  std::size_t azim_class = 0;
  std::size_t elev_class = 0;
  std::size_t entry_index = 0;
  const ControlFilterSet* filter = nullptr;
  DoaPrediction prediction;
};

/// Checkpoint and library must agree on the class grid before any lookup.
inline void check_grid_match(const CheckpointMeta& meta, const ControlFilterLibrary& lib) {
  lib.validate();
  const auto dirs = library_directions();
  if (meta.azimuth_classes_deg.size() != kAzimuthClassesDeg.size() ||
      meta.elevation_classes_deg.size() != kElevationClassesDeg.size())
    throw std::runtime_error("grid mismatch: checkpoint class counts differ from library");
  for (std::size_t i = 0; i < kAzimuthClassesDeg.size(); ++i)
    if (meta.azimuth_classes_deg[i] != kAzimuthClassesDeg[i])
      throw std::runtime_error("grid mismatch: azimuth classes differ");
  for (std::size_t i = 0; i < kElevationClassesDeg.size(); ++i)
    if (meta.elevation_classes_deg[i] != kElevationClassesDeg[i])
      throw std::runtime_error("grid mismatch: elevation classes differ");
  for (std::size_t a = 0; a < kAzimuthClassesDeg.size(); ++a)
    for (std::size_t b = 0; b < kElevationClassesDeg.size(); ++b) {
      const auto& entry = lib.lookup(a, b);
      const auto& want = dirs[ControlFilterLibrary::entry_index(a, b)];
      if (entry.azimuth_deg != want.azimuth_deg ||
          entry.elevation_deg != want.elevation_deg)
        throw std::runtime_error("grid mismatch: library entry metadata out of order");
    }
}

inline SelectOutcome coprocessor_select(const std::vector<std::vector<double>>& frame,
                                        const CnnParams<float>& checkpoint,
                                        const CheckpointMeta& meta,
                                        const ControlFilterLibrary& library) {
  check_grid_match(meta, library);
  const Tensor<float> feats = features(frame);
  std::vector<float> x = feats.data;
  preprocess_features<float>(x, feats.dims[0], meta.log_magnitude);
  CnnWorkspace<float> ws;
  SelectOutcome out;
  out.prediction = forward(checkpoint, std::span<const float>(x), feats.dims[1],
                           feats.dims[2], ws);
  const auto [a, b] = argmax_classes(out.prediction);
  out.azim_class = a;
  out.elev_class = b;
  out.entry_index = ControlFilterLibrary::entry_index(a, b);
  out.filter = &library.lookup(a, b);
  return out;
}

// --- scenario rendering ----------------------------------------------------------

/// Source waveform for a scenario: unit-variance band noise, or a WAV loaded,
/// mono-mixed, resampled, and tiled/truncated to the duration.
inline std::vector<double> scenario_source(const Scenario& sc, Rng& rng) {
  const std::size_t n = static_cast<std::size_t>(sc.duration_s * sc.acoustics.fs);
  if (sc.signal.wav_path.empty())
    return bandlimited_noise(sc.signal.band_lo_hz, sc.signal.band_hi_hz, sc.duration_s,
                             sc.acoustics.fs, rng);
  const WavData wav = read_wav(sc.signal.wav_path);
  std::vector<double> mono = resample(mix_to_mono(wav), wav.fs, sc.acoustics.fs);
  if (mono.empty()) throw std::runtime_error("scenario_source: empty WAV source");
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = mono[i % mono.size()];
  double power = 0.0;
  for (double v : x) power += v * v;
  power /= static_cast<double>(n);
  if (power <= 0.0) throw std::runtime_error("scenario_source: silent WAV source");
  const double gain = 1.0 / std::sqrt(power);
  for (double& v : x) v *= gain;
  return x;
}

inline RenderedScene render_scenario(const Scenario& sc) {
  sc.validate();
  Rng rng(sc.seed);
  const std::vector<double> x = scenario_source(sc, rng);
  Rng sensor_rng = Rng(sc.seed).child(1);
  return render_scene(sc.acoustics, sc.placement, x, sc.snr_db, sensor_rng);
}

// --- sample loop -----------------------------------------------------------------

struct MethodConfig {
  const ControlFilterLibrary* library = nullptr;        // fixed + directional
  const CnnParams<float>* checkpoint = nullptr;         // directional
  const CheckpointMeta* checkpoint_meta = nullptr;      // directional
};

namespace detail {

constexpr std::size_t kCrossfadeLen = 64;

inline void finalize_result(SimResult& result, double fs) {
  result.nr_series = noise_reduction_series(result.d, result.e, fs, 0.5);
  result.mean_nr_db = mean(result.nr_series);
  result.psd_d = welch_psd(result.d, fs);
  result.psd_e = welch_psd(result.e, fs);
}

}  // namespace detail

/// Runs one method over an already-rendered scene so that several methods can
/// be compared on identical signals.
inline SimResult run_on_rendered(const Scenario& sc, const RenderedScene& scene,
                                 const ImpulseResponse& secondary, Method method,
                                 const MethodConfig& mc = {}) {
  sc.validate();
  const std::size_t n_total = scene.disturbance.size();
  const std::size_t j_channels = scene.refs.size();

  SimResult result;
  result.method = method_name(method);
  result.d = scene.disturbance;
  result.e.assign(n_total, 0.0);

  if (method == Method::kAncOff) {
    result.e = result.d;
    detail::finalize_result(result, sc.acoustics.fs);
    return result;
  }

  if (method == Method::kFxlms) {
    AncState state(j_channels, sc.filter_length, secondary, secondary);
    std::vector<double> r(j_channels);
    for (std::size_t n = 0; n < n_total; ++n) {
      for (std::size_t j = 0; j < j_channels; ++j) r[j] = scene.refs[j][n];
      result.e[n] = state.step(r, scene.disturbance[n], sc.fxlms_step_size);
    }
    detail::finalize_result(result, sc.acoustics.fs);
    return result;
  }

  // fixed and directional: frozen coefficients between frame boundaries
  if (mc.library == nullptr)
    throw std::invalid_argument("run_on_rendered: method requires a filter library");
  mc.library->validate();
  if (method == Method::kDirectional &&
      (mc.checkpoint == nullptr || mc.checkpoint_meta == nullptr))
    throw std::invalid_argument("run_on_rendered: directional method requires a checkpoint");

  const std::size_t filter_len = mc.library->entries.front().length();
  std::vector<HistoryBuffer> refs(j_channels, HistoryBuffer(filter_len));
  HistoryBuffer y_history(secondary.taps.size());

  // frame 0 default: the elevation-90 pole entry for directional, the
  // configured entry for the fixed method
  std::size_t active_index =
      method == Method::kFixed
          ? ControlFilterLibrary::entry_index(sc.fixed_azim_class, sc.fixed_elev_class)
          : 0;
  const ControlFilterSet* active = &mc.library->entries[active_index];
  const ControlFilterSet* previous = active;
  std::size_t fade_left = 0;
  result.swaps.push_back({0, active_index});

  std::vector<std::vector<double>> frame(j_channels, std::vector<double>(kFrameLen));
  for (std::size_t n = 0; n < n_total; ++n) {
    if (method == Method::kDirectional && n > 0 && n % kFrameLen == 0) {
      for (std::size_t j = 0; j < j_channels; ++j)
        std::copy(scene.refs[j].begin() + static_cast<long>(n - kFrameLen),
                  scene.refs[j].begin() + static_cast<long>(n), frame[j].begin());
      SelectOutcome sel =
          coprocessor_select(frame, *mc.checkpoint, *mc.checkpoint_meta, *mc.library);
      FrameSelection fs;
      fs.frame = n / kFrameLen - 1;
      fs.azim_class = sel.azim_class;
      fs.elev_class = sel.elev_class;
      fs.entry_index = sel.entry_index;
      fs.prediction = sel.prediction;
      result.selections.push_back(std::move(fs));
      if (sel.entry_index != active_index) {
        previous = active;
        active = sel.filter;
        active_index = sel.entry_index;
        fade_left = sc.crossfade ? detail::kCrossfadeLen : 0;
        result.swaps.push_back({n, active_index});
      }
    }

    double y_new = 0.0, y_old = 0.0;
    for (std::size_t j = 0; j < j_channels; ++j) {
      refs[j].push(scene.refs[j][n]);
      y_new += refs[j].dot(active->taps[j]);
      if (fade_left > 0) y_old += refs[j].dot(previous->taps[j]);
    }
    double y = y_new;
    if (fade_left > 0) {
      const double alpha = 1.0 -
          static_cast<double>(fade_left) / static_cast<double>(detail::kCrossfadeLen);
      y = alpha * y_new + (1.0 - alpha) * y_old;
      --fade_left;
    }
    y_history.push(y);
    const double e = scene.disturbance[n] - y_history.dot(secondary.taps);
    if (!std::isfinite(e)) throw std::runtime_error("run_on_rendered: non-finite error");
    result.e[n] = e;
  }
  detail::finalize_result(result, sc.acoustics.fs);
  return result;
}

inline SimResult run_scenario(const Scenario& sc, Method method,
                              const MethodConfig& mc = {}) {
  const RenderedScene scene = render_scenario(sc);
  const ImpulseResponse secondary = secondary_path(sc.acoustics);
  return run_on_rendered(sc, scene, secondary, method, mc);
}

/// Runs every method on the identical rendered signals.
inline std::vector<SimResult> compare_methods(const Scenario& sc,
                                              const std::vector<Method>& methods,
                                              const MethodConfig& mc = {}) {
  const RenderedScene scene = render_scenario(sc);
  const ImpulseResponse secondary = secondary_path(sc.acoustics);
  std::vector<SimResult> results;
  results.reserve(methods.size());
  for (Method m : methods) results.push_back(run_on_rendered(sc, scene, secondary, m, mc));
  return results;
}

}  // namespace sfanc
