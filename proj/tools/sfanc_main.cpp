#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "sfanc/config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sfanc;

namespace {

constexpr const char* kToolVersion = "1.0.0";

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
};

void add_common(CLI::App* app, CommonOpts& opts, bool config_required = true) {
  auto* c = app->add_option("--config", opts.config_path, "key=value config file");
  if (config_required) c->required();
  app->add_option("--out-dir", opts.out_dir, "output directory (created if missing)");
  app->add_option("--seed", opts.seed, "overrides the config seed");
  app->add_option("--threads", opts.threads, "worker threads; 1 is the deterministic reference")
      ->check(CLI::Range(std::size_t{1}, std::size_t{64}));
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Deterministic run manifest. The hash covers the command, the config text,
/// the resolved seed/threads, and input content hashes; output paths and
/// wall-clock are deliberately excluded so reruns are byte-identical.
struct RunContext {
  std::string command;
  std::string config_text;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  json inputs = json::object();  // label -> content hash
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  std::string write(const std::string& out_dir) const {
    json doc;
    doc["command"] = command;
    doc["config"] = config_text;
    doc["seed"] = seed;
    doc["threads"] = threads;
    doc["inputs"] = inputs;
    doc["version"] = kToolVersion;
    const std::string hash = hash_hex(fnv1a64(doc.dump()));
    doc["manifest_hash"] = hash;
    std::ofstream out(fs::path(out_dir) / "run_manifest.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write run manifest in " + out_dir);
    out << doc.dump(2) << "\n";
    const double secs = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr, "%s: %.1f s, manifest %s\n", command.c_str(), secs, hash.c_str());
    return hash;
  }
};

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir);
}

// --- dataset build --------------------------------------------------------------

int cmd_dataset_build(const CommonOpts& opts) {
  Config cfg = Config::load(opts.config_path);
  DatasetConfig ds = make_dataset_config(cfg);
  if (opts.seed) ds.seed = *opts.seed;
  cfg.finish();
  ensure_out_dir(opts.out_dir);

  RunContext ctx;
  ctx.command = "dataset build";
  ctx.config_text = slurp(opts.config_path);
  ctx.seed = ds.seed;
  ctx.threads = opts.threads;

  const DatasetManifest manifest = build_dataset(ds, opts.out_dir, opts.threads);
  ctx.write(opts.out_dir);
  std::printf("dataset: train=%llu val=%llu test=%llu content_hash=%s\n",
              static_cast<unsigned long long>(manifest.doc["splits"]["train"]["count"].get<std::size_t>()),
              static_cast<unsigned long long>(manifest.doc["splits"]["val"]["count"].get<std::size_t>()),
              static_cast<unsigned long long>(manifest.doc["splits"].contains("test")
                  ? manifest.doc["splits"]["test"]["count"].get<std::size_t>() : 0),
              manifest.doc["content_hash"].get<std::string>().c_str());
  return 0;
}

// --- cnn train -------------------------------------------------------------------

int cmd_cnn_train(const CommonOpts& opts) {
  Config cfg = Config::load(opts.config_path);
  TrainSpec spec = make_train_spec(cfg);
  if (opts.seed) spec.opts.seed = *opts.seed;
  spec.opts.n_threads = opts.threads;
  cfg.finish();
  ensure_out_dir(opts.out_dir);

  RunContext ctx;
  ctx.command = "cnn train";
  ctx.config_text = slurp(opts.config_path);
  ctx.seed = spec.opts.seed;
  ctx.threads = opts.threads;
  ctx.inputs["dataset_manifest"] =
      hash_hex(hash_file(spec.dataset_dir + "/manifest.json"));

  const FileSamples train_ds = open_split(spec.dataset_dir, "train");
  const FileSamples val_ds = open_split(spec.dataset_dir, "val");
  const CnnArch arch;
  const TrainResult result = train(arch, train_ds, val_ds, spec.opts);

  CheckpointMeta meta;
  meta.arch = arch;
  meta.azimuth_classes_deg.assign(kAzimuthClassesDeg.begin(), kAzimuthClassesDeg.end());
  meta.elevation_classes_deg.assign(kElevationClassesDeg.begin(),
                                    kElevationClassesDeg.end());
  meta.log_magnitude = spec.opts.log_magnitude;
  save_checkpoint((fs::path(opts.out_dir) / "checkpoint.bin").string(), result.params, meta);

  const std::string hash = ctx.write(opts.out_dir);
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < result.history.size(); ++i) {
    const auto& e = result.history[i];
    rows.push_back({std::to_string(i), csv_number(e.train_loss), csv_number(e.val_loss),
                    csv_number(e.val_azim_acc), csv_number(e.val_elev_acc)});
  }
  write_csv((fs::path(opts.out_dir) / "training_history.csv").string(), hash,
            {"epoch", "train_loss", "val_loss", "val_azimuth_accuracy",
             "val_elevation_accuracy"},
            rows);
  const auto best = result.history.at(result.best_epoch);
  std::printf("train: best_epoch=%zu val_loss=%.4f val_azim_acc=%.3f val_elev_acc=%.3f\n",
              result.best_epoch, best.val_loss, best.val_azim_acc, best.val_elev_acc);
  return 0;
}

// --- cnn eval --------------------------------------------------------------------

int cmd_cnn_eval(const CommonOpts& opts) {
  Config cfg = Config::load(opts.config_path);
  EvalSpec spec = make_eval_spec(cfg);
  cfg.finish();
  ensure_out_dir(opts.out_dir);

  RunContext ctx;
  ctx.command = "cnn eval";
  ctx.config_text = slurp(opts.config_path);
  ctx.threads = opts.threads;
  ctx.inputs["checkpoint"] = hash_hex(hash_file(spec.checkpoint_path));
  ctx.inputs["dataset_manifest"] =
      hash_hex(hash_file(spec.dataset_dir + "/manifest.json"));

  const auto [params, meta] = load_checkpoint(spec.checkpoint_path);
  const FileSamples data = open_split(spec.dataset_dir, spec.split);
  const auto shape = data.feature_shape();

  // per-SNR buckets in the nominal 30/40/50 dB rows
  const std::array<double, 3> snr_rows = {30.0, 40.0, 50.0};
  std::array<std::array<std::size_t, 3>, 3> bucket{};  // [row]{count, azim hits, elev hits}
  std::vector<std::size_t> azim_conf(params.arch.n_azim * params.arch.n_azim, 0);
  std::vector<std::size_t> elev_conf(params.arch.n_elev * params.arch.n_elev, 0);

  CnnWorkspace<float> ws;
  std::vector<float> x;
  DoaLabel label;
  for (std::size_t i = 0; i < data.size(); ++i) {
    data.load(i, x, label);
    preprocess_features<float>(x, shape[0], meta.log_magnitude);
    const auto pred = forward(params, std::span<const float>(x), shape[1], shape[2], ws);
    const auto [a, b] = argmax_classes(pred);
    azim_conf[label.azim_class * params.arch.n_azim + a]++;
    elev_conf[label.elev_class * params.arch.n_elev + b]++;
    const double snr = data.provenance(i, kProvSnrDb);
    std::size_t row = 0;
    for (std::size_t r = 1; r < snr_rows.size(); ++r)
      if (std::abs(snr - snr_rows[r]) < std::abs(snr - snr_rows[row])) row = r;
    bucket[row][0]++;
    bucket[row][1] += (a == label.azim_class);
    bucket[row][2] += (b == label.elev_class);
  }

  const std::string hash = ctx.write(opts.out_dir);
  std::vector<std::vector<std::string>> rows;
  std::size_t total = 0, azim_total = 0, elev_total = 0;
  for (std::size_t r = 0; r < snr_rows.size(); ++r) {
    const double n = std::max<double>(1.0, static_cast<double>(bucket[r][0]));
    rows.push_back({csv_number(snr_rows[r]), std::to_string(bucket[r][0]),
                    csv_number(static_cast<double>(bucket[r][1]) / n),
                    csv_number(static_cast<double>(bucket[r][2]) / n)});
    total += bucket[r][0];
    azim_total += bucket[r][1];
    elev_total += bucket[r][2];
  }
  const double n_all = std::max<double>(1.0, static_cast<double>(total));
  rows.push_back({"all", std::to_string(total),
                  csv_number(static_cast<double>(azim_total) / n_all),
                  csv_number(static_cast<double>(elev_total) / n_all)});
  write_csv((fs::path(opts.out_dir) / "accuracy.csv").string(), hash,
            {"snr_db", "count", "azimuth_accuracy", "elevation_accuracy"}, rows);

  auto write_confusion = [&](const std::string& name, const std::vector<std::size_t>& conf,
                             std::size_t n) {
    std::vector<std::string> header = {"true_class"};
    for (std::size_t c = 0; c < n; ++c) header.push_back("pred_" + std::to_string(c));
    std::vector<std::vector<std::string>> body;
    for (std::size_t r = 0; r < n; ++r) {
      std::vector<std::string> row = {std::to_string(r)};
      for (std::size_t c = 0; c < n; ++c) row.push_back(std::to_string(conf[r * n + c]));
      body.push_back(std::move(row));
    }
    write_csv((fs::path(opts.out_dir) / name).string(), hash, header, body);
  };
  write_confusion("confusion_azimuth.csv", azim_conf, params.arch.n_azim);
  write_confusion("confusion_elevation.csv", elev_conf, params.arch.n_elev);

  const auto counts = count_params_and_macs(params.arch, shape[1], shape[2]);
  std::printf("eval: samples=%zu azim_acc=%.3f elev_acc=%.3f params=%zu macs=%zu\n", total,
              static_cast<double>(azim_total) / n_all,
              static_cast<double>(elev_total) / n_all, counts.params, counts.macs);
  return 0;
}

// --- filters pretrain --------------------------------------------------------------

int cmd_filters_pretrain(const CommonOpts& opts) {
  Config cfg = Config::load(opts.config_path);
  PretrainSpec spec = make_pretrain_spec(cfg);
  if (opts.seed) spec.opts.noise_seed = *opts.seed;
  cfg.finish();
  ensure_out_dir(opts.out_dir);

  RunContext ctx;
  ctx.command = "filters pretrain";
  ctx.config_text = slurp(opts.config_path);
  ctx.seed = spec.opts.noise_seed;
  ctx.threads = opts.threads;

  const AncAcoustics ac = desk_acoustics(spec.rt60);
  FxlmsConfig fx;
  fx.step_size = spec.step_size;
  fx.filter_length = spec.filter_length;
  fx.secondary_path_estimate = secondary_path(ac);
  const ControlFilterLibrary lib = build_filter_library(ac, fx, spec.opts);

  const std::string lib_path = (fs::path(opts.out_dir) / "library.bin").string();
  save_library(lib_path, lib);
  const std::string hash = ctx.write(opts.out_dir);

  json manifest;
  manifest["manifest_hash"] = hash;
  manifest["fs"] = ac.fs;
  manifest["channels"] = lib.entries.front().channels();
  manifest["filter_length"] = lib.entries.front().length();
  manifest["rt60"] = spec.rt60;
  manifest["step_size"] = spec.step_size;
  manifest["library_file_hash"] = hash_hex(hash_file(lib_path));
  manifest["entries"] = json::array();
  for (const auto& e : lib.entries)
    manifest["entries"].push_back({{"azimuth_deg", e.azimuth_deg},
                                   {"elevation_deg", e.elevation_deg},
                                   {"converged", e.converged}});
  std::ofstream mout(fs::path(opts.out_dir) / "library_manifest.json", std::ios::binary);
  mout << manifest.dump(2) << "\n";

  std::size_t converged = 0;
  for (const auto& e : lib.entries) converged += e.converged;
  std::printf("pretrain: entries=%zu converged=%zu L=%zu\n", lib.entries.size(), converged,
              lib.entries.front().length());
  return 0;
}

// --- sim run / report -------------------------------------------------------------

int run_sim(const CommonOpts& opts, bool allow_traces) {
  Config cfg = Config::load(opts.config_path);
  SimSpec spec = make_sim_spec(cfg);
  if (opts.seed) spec.scenario.seed = *opts.seed;
  cfg.finish();
  ensure_out_dir(opts.out_dir);

  bool needs_library = false, needs_checkpoint = false;
  for (Method m : spec.methods) {
    needs_library |= (m == Method::kFixed || m == Method::kDirectional);
    needs_checkpoint |= (m == Method::kDirectional);
  }
  if (needs_library && spec.library_path.empty())
    throw std::invalid_argument("config: 'library' is required for fixed/directional methods");
  if (needs_checkpoint && spec.checkpoint_path.empty())
    throw std::invalid_argument("config: 'checkpoint' is required for the directional method");

  RunContext ctx;
  ctx.command = allow_traces ? "sim run" : "report";
  ctx.config_text = slurp(opts.config_path);
  ctx.seed = spec.scenario.seed;
  ctx.threads = opts.threads;

  std::optional<ControlFilterLibrary> lib;
  std::optional<CnnParams<float>> ckpt;
  CheckpointMeta meta;
  MethodConfig mc;
  if (needs_library) {
    lib = load_library(spec.library_path);
    mc.library = &*lib;
    ctx.inputs["library"] = hash_hex(hash_file(spec.library_path));
  }
  if (needs_checkpoint) {
    auto loaded = load_checkpoint(spec.checkpoint_path);
    ckpt = std::move(loaded.first);
    meta = std::move(loaded.second);
    mc.checkpoint = &*ckpt;
    mc.checkpoint_meta = &meta;
    check_grid_match(meta, *lib);
    ctx.inputs["checkpoint"] = hash_hex(hash_file(spec.checkpoint_path));
  }
  if (!spec.scenario.signal.wav_path.empty())
    ctx.inputs["source_wav"] = hash_hex(hash_file(spec.scenario.signal.wav_path));

  const std::vector<SimResult> results = compare_methods(spec.scenario, spec.methods, mc);
  const std::string hash = ctx.write(opts.out_dir);

  // summary.csv: one row per method
  std::vector<std::vector<std::string>> summary;
  for (const auto& r : results)
    summary.push_back({r.method, csv_number(r.mean_nr_db),
                       csv_number(r.nr_series.front()), csv_number(r.nr_series.back())});
  write_csv((fs::path(opts.out_dir) / "summary.csv").string(), hash,
            {"method", "mean_nr_db", "first_window_nr_db", "final_window_nr_db"}, summary);

  // nr.csv: window series, one column per method
  std::vector<std::string> nr_header = {"window_index"};
  for (const auto& r : results) nr_header.push_back(r.method + "_nr_db");
  std::vector<std::vector<std::string>> nr_rows;
  for (std::size_t w = 0; w < results.front().nr_series.size(); ++w) {
    std::vector<std::string> row = {std::to_string(w)};
    for (const auto& r : results) row.push_back(csv_number(r.nr_series[w]));
    nr_rows.push_back(std::move(row));
  }
  write_csv((fs::path(opts.out_dir) / "nr.csv").string(), hash, nr_header, nr_rows);

  // psd.csv: frequency axis plus residual power per method
  std::vector<std::string> psd_header = {"frequency_hz"};
  for (const auto& r : results) psd_header.push_back(r.method + "_power");
  std::vector<std::vector<std::string>> psd_rows;
  const auto& ref_psd = results.front().psd_e;
  for (std::size_t k = 0; k < ref_psd.power.size(); ++k) {
    std::vector<std::string> row = {csv_number(ref_psd.frequency(k))};
    for (const auto& r : results) row.push_back(csv_number(r.psd_e.power[k]));
    psd_rows.push_back(std::move(row));
  }
  write_csv((fs::path(opts.out_dir) / "psd.csv").string(), hash, psd_header, psd_rows);

  // selections.csv: co-processor decisions and swap samples
  std::vector<std::vector<std::string>> sel_rows;
  for (const auto& r : results)
    for (const auto& s : r.selections) {
      const double pa = s.prediction.p_azim[s.azim_class];
      const double pe = s.prediction.p_elev[s.elev_class];
      sel_rows.push_back({r.method, std::to_string(s.frame), std::to_string(s.azim_class),
                          std::to_string(s.elev_class), std::to_string(s.entry_index),
                          csv_number(pa), csv_number(pe)});
    }
  write_csv((fs::path(opts.out_dir) / "selections.csv").string(), hash,
            {"method", "frame", "azimuth_class", "elevation_class", "entry_index",
             "azimuth_prob", "elevation_prob"},
            sel_rows);

  if (allow_traces && spec.write_traces) {
    TensorBundle traces;
    Tensor<double> d({results.front().d.size()});
    d.data = results.front().d;
    traces.add("d", std::move(d));
    for (const auto& r : results) {
      Tensor<double> e({r.e.size()});
      e.data = r.e;
      traces.add("e." + r.method, std::move(e));
    }
    write_bundle((fs::path(opts.out_dir) / "traces.bin").string(), traces);
  }

  for (const auto& r : results)
    std::printf("%-12s mean_nr=%7.2f dB first=%7.2f dB final=%7.2f dB swaps=%zu\n",
                r.method.c_str(), r.mean_nr_db, r.nr_series.front(), r.nr_series.back(),
                r.swaps.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"selective fixed-filter ANC toolkit"};
  app.require_subcommand(1);

  CommonOpts opts;

  auto* dataset = app.add_subcommand("dataset", "dataset operations")->require_subcommand(1);
  auto* ds_build = dataset->add_subcommand("build", "generate dataset splits");
  add_common(ds_build, opts);

  auto* cnn = app.add_subcommand("cnn", "classifier operations")->require_subcommand(1);
  auto* cnn_train = cnn->add_subcommand("train", "train the direction classifier");
  add_common(cnn_train, opts);
  auto* cnn_eval = cnn->add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(cnn_eval, opts);

  auto* filters = app.add_subcommand("filters", "control filter operations")
                      ->require_subcommand(1);
  auto* pretrain = filters->add_subcommand("pretrain", "pre-train the 13-entry library");
  add_common(pretrain, opts);

  auto* sim = app.add_subcommand("sim", "simulation runs")->require_subcommand(1);
  auto* sim_run = sim->add_subcommand("run", "run a scenario and write metrics");
  add_common(sim_run, opts);

  auto* report = app.add_subcommand("report", "write metric CSVs for a scenario");
  add_common(report, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (ds_build->parsed()) return cmd_dataset_build(opts);
    if (cnn_train->parsed()) return cmd_cnn_train(opts);
    if (cnn_eval->parsed()) return cmd_cnn_eval(opts);
    if (pretrain->parsed()) return cmd_filters_pretrain(opts);
    if (sim_run->parsed()) return run_sim(opts, true);
    if (report->parsed()) return run_sim(opts, false);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
