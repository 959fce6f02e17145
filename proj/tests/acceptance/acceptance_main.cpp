// Acceptance gate: one pass/fail line per criterion. Expensive artifacts
// (filter library, dataset, checkpoint) are cached in --work-dir so the
// criteria can be rerun individually.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfanc/config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sfanc;

namespace {

struct Ctx {
  fs::path work;
  std::string cli;  // path to the sfanc binary, used by criterion 9
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

// --- criterion 1: full finite-difference gradient sweep ---------------------------

bool crit1(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  const CnnArch arch;
  Rng rng(101);
  CnnParams<double> params = init_params<double>(arch, rng);

  const std::size_t h = 33, w = 10;
  std::vector<double> x(arch.in_channels * h * w);
  for (double& v : x) v = rng.normal();
  const DoaLabel label{3, 1};

  CnnWorkspace<double> ws;
  auto loss_at = [&]() {
    forward(params, std::span<const double>(x), h, w, ws);
    return joint_loss<double>(ws.logits_azim, ws.logits_elev, label).total;
  };

  loss_at();
  std::vector<double> grad(params.flat.size(), 0.0);
  backward(params, ws, label, std::span<double>(grad));

  const double step = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < params.flat.size(); ++i) {
    const double keep = params.flat[i];
    params.flat[i] = keep + step;
    const double up = loss_at();
    params.flat[i] = keep - step;
    const double down = loss_at();
    params.flat[i] = keep;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(numeric), std::abs(grad[i]), 1e-6});
    worst = std::max(worst, std::abs(numeric - grad[i]) / denom);
  }
  const double secs = seconds_since(t0);
  detail = fmt("max rel err %.3g over %zu params, %.1f s", worst, params.flat.size(), secs);
  return worst < 1e-4 && secs < 60.0;
}

// --- criterion 2: FxLMS converges to the Wiener solution --------------------------

bool crit2(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(202);
  const std::size_t L = 32, Lh = 16;
  ImpulseResponse h{std::vector<double>(Lh), 16000.0};
  for (double& v : h.taps) v = rng.normal() * 0.3;
  std::vector<double> w0(L);
  for (double& v : w0) v = rng.normal() * 0.2;

  const std::size_t n_total = 400000;
  std::vector<double> x(n_total);
  for (double& v : x) v = rng.normal();

  // d(n) = ((x * w0) * h)(n): the exact Wiener optimum is w0
  std::vector<double> y0(n_total, 0.0), d(n_total, 0.0);
  for (std::size_t n = 0; n < n_total; ++n)
    for (std::size_t k = 0; k < L && k <= n; ++k) y0[n] += w0[k] * x[n - k];
  for (std::size_t n = 0; n < n_total; ++n)
    for (std::size_t k = 0; k < Lh && k <= n; ++k) d[n] += h.taps[k] * y0[n - k];

  AncState state(1, L, h, h);
  std::vector<double> e(n_total);
  const std::vector<double> r(1);
  for (std::size_t n = 0; n < n_total; ++n)
    e[n] = state.step(std::vector<double>{x[n]}, d[n], 1e-3);

  // independent Wiener oracle: normal equations on the filtered reference
  std::vector<double> rp(n_total, 0.0);
  for (std::size_t n = 0; n < n_total; ++n)
    for (std::size_t k = 0; k < Lh && k <= n; ++k) rp[n] += h.taps[k] * x[n - k];
  std::vector<double> R(L * L, 0.0), p(L, 0.0);
  for (std::size_t n = L; n < n_total; ++n) {
    for (std::size_t i = 0; i < L; ++i) {
      p[i] += d[n] * rp[n - i];
      for (std::size_t j = i; j < L; ++j) R[i * L + j] += rp[n - i] * rp[n - j];
    }
  }
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < i; ++j) R[i * L + j] = R[j * L + i];
  // Gaussian elimination with partial pivoting
  std::vector<double> wiener = p;
  for (std::size_t c = 0; c < L; ++c) {
    std::size_t piv = c;
    for (std::size_t r2 = c + 1; r2 < L; ++r2)
      if (std::abs(R[r2 * L + c]) > std::abs(R[piv * L + c])) piv = r2;
    for (std::size_t j = 0; j < L; ++j) std::swap(R[c * L + j], R[piv * L + j]);
    std::swap(wiener[c], wiener[piv]);
    for (std::size_t r2 = c + 1; r2 < L; ++r2) {
      const double f = R[r2 * L + c] / R[c * L + c];
      for (std::size_t j = c; j < L; ++j) R[r2 * L + j] -= f * R[c * L + j];
      wiener[r2] -= f * wiener[c];
    }
  }
  for (std::size_t c = L; c-- > 0;) {
    for (std::size_t j = c + 1; j < L; ++j) wiener[c] -= R[c * L + j] * wiener[j];
    wiener[c] /= R[c * L + c];
  }

  double rms = 0.0;
  for (std::size_t k = 0; k < L; ++k) {
    const double diff = state.weights()[0][k] - wiener[k];
    rms += diff * diff;
  }
  rms = std::sqrt(rms / static_cast<double>(L));

  double pd = 0.0, pe = 0.0;
  for (std::size_t n = n_total - 16000; n < n_total; ++n) {
    pd += d[n] * d[n];
    pe += e[n] * e[n];
  }
  const double residual_db = 10.0 * std::log10(pd / pe);
  const double secs = seconds_since(t0);
  detail = fmt("weights rms err %.2e, residual %.1f dB, %.1f s", rms, residual_db, secs);
  return rms < 1e-3 && residual_db >= 30.0 && secs < 60.0;
}

// --- criterion 3: direct-path delay and spherical spreading -----------------------

bool crit3(std::string& detail) {
  const Room room({6, 4, 3}, 0.0);
  Rng rng(303);
  double worst_delay = 0.0, worst_amp = 0.0;
  int done = 0;
  while (done < 100) {
    const Vec3 src = {rng.uniform(0.5, 5.5), rng.uniform(0.5, 3.5), rng.uniform(0.5, 2.5)};
    const Vec3 rcv = {rng.uniform(0.5, 5.5), rng.uniform(0.5, 3.5), rng.uniform(0.5, 2.5)};
    const double r = norm(src - rcv);
    // below ~0.9 m the fractional-delay kernel is clipped at t = 0 and the
    // spreading law is no longer the only effect being measured
    if (r < 1.0) continue;
    ++done;
    const auto ir = simulate_rir(room, src, rcv, 16000.0, 4096);
    std::size_t peak = 0;
    double l2 = 0.0;
    for (std::size_t i = 0; i < ir.taps.size(); ++i) {
      if (std::abs(ir.taps[i]) > std::abs(ir.taps[peak])) peak = i;
      l2 += ir.taps[i] * ir.taps[i];
    }
    l2 = std::sqrt(l2);
    const double expected_delay = 16000.0 * r / room.speed_of_sound;
    worst_delay = std::max(worst_delay, std::abs(static_cast<double>(peak) - expected_delay));
    const double expected_amp = 1.0 / (4.0 * kPi * r);
    worst_amp = std::max(worst_amp, std::abs(l2 - expected_amp) / expected_amp);
  }
  detail = fmt("100 pairs: max delay err %.2f samples, max amplitude err %.2f%%",
               worst_delay, 100.0 * worst_amp);
  return worst_delay <= 1.0 && worst_amp < 0.01;
}

// --- criterion 4: STFT Parseval identity -------------------------------------------

bool crit4(std::string& detail) {
  Rng rng(404);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(1024 + 64 * (1 + rng.uniform_int(40)));
    for (double& v : x) v = rng.normal();
    const auto sg = stft(x, 1024, 64);
    const auto w = hann_window(1024);
    for (std::size_t t = 0; t < sg.n_frames; ++t) {
      double time_energy = 0.0;
      for (std::size_t n = 0; n < 1024; ++n) {
        const double wx = w[n] * x[t * 64 + n];
        time_energy += wx * wx;
      }
      double freq_energy = std::norm(sg.at(t, 0)) + std::norm(sg.at(t, 512));
      for (std::size_t k = 1; k < 512; ++k) freq_energy += 2.0 * std::norm(sg.at(t, k));
      worst = std::max(worst, std::abs(freq_energy / (1024.0 * time_energy) - 1.0));
    }
  }
  detail = fmt("50 signals: max relative energy mismatch %.2e", worst);
  return worst < 1e-9;
}

// --- criterion 5: filter library with strict cross-direction dominance ------------

ControlFilterLibrary ensure_library(const Ctx& ctx) {
  const fs::path path = ctx.work / "library.bin";
  if (fs::exists(path)) return load_library(path.string());
  const AncAcoustics ac = desk_acoustics(0.3);
  FxlmsConfig fx;
  fx.step_size = 1e-4;
  fx.filter_length = 1024;
  fx.secondary_path_estimate = secondary_path(ac);
  const ControlFilterLibrary lib = build_filter_library(ac, fx, {});
  save_library(path.string(), lib);
  return lib;
}

bool crit5(const Ctx& ctx, std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  const ControlFilterLibrary lib = ensure_library(ctx);
  if (lib.entries.size() != 13) {
    detail = fmt("library has %zu entries, expected 13", lib.entries.size());
    return false;
  }

  const AncAcoustics ac = desk_acoustics(0.3);
  const ImpulseResponse secondary = secondary_path(ac);
  const auto dirs = library_directions();
  const std::size_t n = dirs.size();

  // NR of filter f applied to the scene from direction d, 100-700 Hz band
  std::vector<double> nr(n * n, 0.0);
  for (std::size_t di = 0; di < n; ++di) {
    Rng rng(5000 + di);
    const auto x = bandlimited_noise(20.0, 2020.0, 2.0, ac.fs, rng);
    Rng render_rng(6000 + di);
    const auto scene = render_scene(ac, dirs[di], x, std::nullopt, render_rng);
    const auto psd_d = welch_psd(scene.disturbance, ac.fs);
    const double pd = band_mean_power(psd_d, 100.0, 700.0);

    for (std::size_t fi = 0; fi < n; ++fi) {
      const auto& entry = lib.entries[fi];
      std::vector<HistoryBuffer> refs(scene.refs.size(), HistoryBuffer(entry.length()));
      HistoryBuffer y_hist(secondary.taps.size());
      std::vector<double> e(scene.disturbance.size());
      for (std::size_t s = 0; s < e.size(); ++s) {
        double y = 0.0;
        for (std::size_t j = 0; j < refs.size(); ++j) {
          refs[j].push(scene.refs[j][s]);
          y += refs[j].dot(entry.taps[j]);
        }
        y_hist.push(y);
        e[s] = scene.disturbance[s] - y_hist.dot(secondary.taps);
      }
      const auto psd_e = welch_psd(e, ac.fs);
      nr[di * n + fi] = 10.0 * std::log10(pd / band_mean_power(psd_e, 100.0, 700.0));
    }
  }

  double min_margin = 1e9;
  bool dominant = true;
  for (std::size_t di = 0; di < n; ++di)
    for (std::size_t fi = 0; fi < n; ++fi) {
      if (fi == di) continue;
      // the two pole-aliased columns share one physical filter; skip exact
      // self-comparisons only, everything else must lose strictly
      const double margin = nr[di * n + di] - nr[di * n + fi];
      min_margin = std::min(min_margin, margin);
      if (margin <= 0.0) dominant = false;
    }
  detail = fmt("13 entries, min diagonal margin %.2f dB, %.0f s", min_margin,
               seconds_since(t0));
  return dominant;
}

// --- criterion 6: desk-scale dataset trains to the accuracy bar ---------------------

json ensure_checkpoint(const Ctx& ctx) {
  const fs::path stats_path = ctx.work / "train_stats.json";
  const fs::path ckpt_path = ctx.work / "checkpoint.bin";
  if (fs::exists(stats_path) && fs::exists(ckpt_path)) {
    json stats;
    std::ifstream(stats_path) >> stats;
    return stats;
  }
  const auto t0 = std::chrono::steady_clock::now();

  const fs::path ds_dir = ctx.work / "dataset";
  if (!fs::exists(ds_dir / "manifest.json")) {
    fs::create_directories(ds_dir);
    build_dataset(desk_config(7), ds_dir.string(), 1);
  }
  const double ds_secs = seconds_since(t0);

  const FileSamples train_ds = open_split(ds_dir.string(), "train");
  const FileSamples val_ds = open_split(ds_dir.string(), "val");
  const CnnArch arch;
  TrainOptions opts;
  opts.epochs = 30;
  opts.seed = 1;
  opts.max_seconds = std::max(60.0, 1800.0 - ds_secs - 120.0);
  const TrainResult result = train(arch, train_ds, val_ds, opts);

  CheckpointMeta meta;
  meta.arch = arch;
  meta.azimuth_classes_deg.assign(kAzimuthClassesDeg.begin(), kAzimuthClassesDeg.end());
  meta.elevation_classes_deg.assign(kElevationClassesDeg.begin(),
                                    kElevationClassesDeg.end());
  meta.log_magnitude = opts.log_magnitude;
  save_checkpoint(ckpt_path.string(), result.params, meta);

  const EvalStats val = evaluate(result.params, val_ds, opts.log_magnitude);
  json stats;
  stats["azim_acc"] = val.azim_acc;
  stats["elev_acc"] = val.elev_acc;
  stats["epochs_run"] = result.history.size();
  stats["best_epoch"] = result.best_epoch;
  stats["seconds"] = seconds_since(t0);
  std::ofstream(stats_path) << stats.dump(2) << "\n";
  return stats;
}

bool crit6(const Ctx& ctx, std::string& detail) {
  const json stats = ensure_checkpoint(ctx);
  const double azim = stats["azim_acc"], elev = stats["elev_acc"];
  const double secs = stats["seconds"];
  detail = fmt("val azim %.1f%%, elev %.1f%% after %zu epochs (best %zu), %.0f s", 100.0 * azim,
               100.0 * elev, stats["epochs_run"].get<std::size_t>(),
               stats["best_epoch"].get<std::size_t>(), secs);
  return azim >= 0.80 && elev >= 0.70 && secs < 1800.0;
}

// --- criterion 7: parameter budget --------------------------------------------------

bool crit7(std::string& detail) {
  const auto counts = count_params_and_macs(CnnArch{}, 513, 110);
  detail = fmt("%zu params, %.1f M MACs", counts.params,
               static_cast<double>(counts.macs) / 1e6);
  return counts.params >= 20000 && counts.params <= 40000;
}

// --- criterion 8: end-to-end cancellation comparisons -------------------------------

std::string make_washer_wav(const Ctx& ctx) {
  const fs::path path = ctx.work / "washer.wav";
  if (fs::exists(path)) return path.string();
  // appliance-like source: low-frequency drum hum plus modulated band noise
  Rng rng(808);
  const std::size_t n = 8 * 16000;
  auto broadband = bandlimited_noise(80.0, 900.0, 8.0, 16000.0, rng);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / 16000.0;
    const double mod = 0.6 + 0.4 * std::sin(2.0 * kPi * 3.1 * t);
    x[i] = 0.25 * std::sin(2.0 * kPi * 53.0 * t) + 0.20 * std::sin(2.0 * kPi * 106.0 * t) +
           0.35 * mod * broadband[i];
  }
  write_wav_float32(path.string(), x, 16000.0);
  return path.string();
}

bool crit8(const Ctx& ctx, std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  const ControlFilterLibrary lib = ensure_library(ctx);
  ensure_checkpoint(ctx);
  const auto [ckpt, meta] = load_checkpoint((ctx.work / "checkpoint.bin").string());
  MethodConfig mc{&lib, &ckpt, &meta};

  struct Case {
    double azim, elev;
    std::string wav;
  };
  const std::vector<Case> cases = {{120.0, 30.0, ""},
                                   {0.0, -30.0, ""},
                                   {110.0, -15.0, make_washer_wav(ctx)}};
  std::ostringstream note;
  bool ok = true;
  for (const auto& c : cases) {
    Scenario sc;
    sc.acoustics = desk_acoustics(0.3);
    // deploy at the distance the control filters were pre-trained for; the
    // fixed-filter methods are geometry-specific and lose most of their NR
    // when the source moves off the design radius
    sc.placement = SourcePlacement(c.azim, c.elev, 0.2);
    sc.signal.wav_path = c.wav;
    sc.snr_db = 40.0;
    sc.duration_s = 10.0;
    sc.seed = 88;
    // mismatched fixed filter: opposite azimuth, other elevation sign
    const auto truth = nearest_class_labels(c.azim, c.elev);
    sc.fixed_azim_class = (truth.azim_class + 3) % 6;
    sc.fixed_elev_class = truth.elev_class == 2 ? 1 : 2;

    const auto results = compare_methods(
        sc, {Method::kAncOff, Method::kFxlms, Method::kFixed, Method::kDirectional}, mc);
    const SimResult& fxlms = results[1];
    const SimResult& fixed = results[2];
    const SimResult& dir = results[3];

    const bool a = dir.mean_nr_db > fixed.mean_nr_db;
    const bool b = dir.nr_series.at(1) > fxlms.nr_series.front();
    const bool cc = fxlms.nr_series.back() > fxlms.nr_series.front();
    ok = ok && a && b && cc;
    note << fmt("(%g,%g): dir %.1f vs fixed %.1f dB%s, dir[1] %.1f vs fxlms[0] %.1f dB%s, "
                "fxlms %.1f->%.1f dB%s; ",
                c.azim, c.elev, dir.mean_nr_db, fixed.mean_nr_db, a ? "" : " FAIL",
                dir.nr_series.at(1), fxlms.nr_series.front(), b ? "" : " FAIL",
                fxlms.nr_series.front(), fxlms.nr_series.back(), cc ? "" : " FAIL");
  }
  const double secs = seconds_since(t0);
  note << fmt("%.0f s", secs);
  detail = note.str();
  return ok && secs < 900.0;
}

// --- criterion 9: byte-identical reruns through the CLI -----------------------------

bool run_cli(const std::string& args) {
  const int rc = std::system(args.c_str());
  return rc == 0;
}

bool crit9(const Ctx& ctx, std::string& detail) {
  const fs::path base = ctx.work / "rerun";
  fs::remove_all(base);
  fs::create_directories(base);

  const fs::path ds_cfg = base / "ds.cfg";
  std::ofstream(ds_cfg) << "preset = desk\nseed = 4\ntrain_samples_per_combo = 1\n"
                           "val_samples_per_combo = 1\ntrain_positions_per_room = 1\n"
                           "val_positions_per_room = 1\nsynth_noise_count = 2\n";
  const fs::path sim_cfg = base / "sim.cfg";
  std::ofstream(sim_cfg) << "duration_s = 2\nseed = 4\nmethods = anc_off,fxlms\n"
                            "filter_length = 64\n";

  for (const char* pass : {"a", "b"}) {
    const std::string quiet = " > /dev/null 2>&1";
    if (!run_cli(ctx.cli + " dataset build --threads 1 --config " + ds_cfg.string() +
                 " --out-dir " + (base / ("ds_" + std::string(pass))).string() + quiet) ||
        !run_cli(ctx.cli + " sim run --threads 1 --config " + sim_cfg.string() +
                 " --out-dir " + (base / ("sim_" + std::string(pass))).string() + quiet)) {
      detail = "CLI invocation failed (binary: " + ctx.cli + ")";
      return false;
    }
  }

  std::vector<std::pair<std::string, std::string>> pairs;
  for (const char* f : {"manifest.json", "run_manifest.json", "train.features.bin",
                        "train.meta.bin", "val.features.bin", "val.meta.bin"})
    pairs.push_back({(base / "ds_a" / f).string(), (base / "ds_b" / f).string()});
  for (const char* f : {"run_manifest.json", "summary.csv", "nr.csv", "psd.csv",
                        "selections.csv"})
    pairs.push_back({(base / "sim_a" / f).string(), (base / "sim_b" / f).string()});

  std::size_t mismatches = 0;
  for (const auto& [a, b] : pairs)
    if (hash_file(a) != hash_file(b)) {
      ++mismatches;
      std::fprintf(stderr, "criterion 9: differs: %s\n", fs::path(a).filename().c_str());
    }
  detail = fmt("%zu artifact files compared, %zu mismatches", pairs.size(), mismatches);
  return mismatches == 0;
}

}  // namespace

int main(int argc, char** argv) {
  Ctx ctx;
  ctx.work = "acceptance_work";
  ctx.cli = "tools/sfanc";
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    auto next = [&]() -> std::string {
      if (i + 1 >= argc) {
        std::fprintf(stderr, "missing value for %s\n", arg.c_str());
        std::exit(2);
      }
      return argv[++i];
    };
    if (arg == "--criteria") {
      std::istringstream list(next());
      std::string tok;
      while (std::getline(list, tok, ',')) selected.insert(std::stoi(tok));
    } else if (arg == "--work-dir") {
      ctx.work = next();
    } else if (arg == "--cli") {
      ctx.cli = next();
    } else {
      std::fprintf(stderr, "unknown argument %s\n", arg.c_str());
      return 2;
    }
  }
  if (selected.empty())
    for (int c = 1; c <= 9; ++c) selected.insert(c);
  fs::create_directories(ctx.work);

  bool all_ok = true;
  for (int c : selected) {
    std::string detail;
    bool ok = false;
    try {
      switch (c) {
        case 1: ok = crit1(detail); break;
        case 2: ok = crit2(detail); break;
        case 3: ok = crit3(detail); break;
        case 4: ok = crit4(detail); break;
        case 5: ok = crit5(ctx, detail); break;
        case 6: ok = crit6(ctx, detail); break;
        case 7: ok = crit7(detail); break;
        case 8: ok = crit8(ctx, detail); break;
        case 9: ok = crit9(ctx, detail); break;
        default:
          std::fprintf(stderr, "unknown criterion %d\n", c);
          return 2;
      }
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
      ok = false;
    }
    std::printf("criterion %d: %s (%s)\n", c, ok ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    all_ok = all_ok && ok;
  }
  return all_ok ? 0 : 1;
}
