#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfanc/dataset.hpp"
#include "sfanc/sim.hpp"
#include "sfanc/tensor.hpp"

namespace sfanc {

// Shared key=value config schema. Lines are `key = value`; blank lines and
// lines starting with '#' are skipped. Every diagnostic carries the source
// name and line number, and keys nobody consumed are an error (not a
// warning) so typos in sweep configs fail fast.

class Config {
 public:
  static Config parse(const std::string& text, const std::string& source_name = "<inline>") {
    Config cfg;
    cfg.source_ = source_name;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string_view sv = trim(line);
      if (sv.empty() || sv.front() == '#') continue;
      const auto eq = sv.find('=');
      if (eq == std::string_view::npos)
        throw std::invalid_argument(cfg.where(line_no) + "expected 'key = value'");
      const std::string key{trim(sv.substr(0, eq))};
      const std::string value{trim(sv.substr(eq + 1))};
      if (key.empty()) throw std::invalid_argument(cfg.where(line_no) + "empty key");
      if (cfg.entries_.count(key))
        throw std::invalid_argument(cfg.where(line_no) + "duplicate key '" + key + "'");
      cfg.entries_[key] = {value, line_no, false};
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path);
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback = "") {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    it->second.consumed = true;
    return it->second.value;
  }

  double get_double(const std::string& key, double fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    it->second.consumed = true;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second.value, &used);
      if (used != it->second.value.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw std::invalid_argument(where(it->second.line) + "expected a number for '" + key +
                                  "', got '" + it->second.value + "'");
    }
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    it->second.consumed = true;
    try {
      std::size_t used = 0;
      if (!it->second.value.empty() && it->second.value.front() == '-')
        throw std::invalid_argument("");
      const std::uint64_t v = std::stoull(it->second.value, &used);
      if (used != it->second.value.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw std::invalid_argument(where(it->second.line) +
                                  "expected a non-negative integer for '" + key + "', got '" +
                                  it->second.value + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    it->second.consumed = true;
    const std::string& v = it->second.value;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument(where(it->second.line) + "expected true/false for '" + key +
                                "', got '" + v + "'");
  }

  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback = {}) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    it->second.consumed = true;
    std::vector<std::string> out;
    std::string_view rest = it->second.value;
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const std::string_view item = trim(rest.substr(0, comma));
      if (!item.empty()) out.emplace_back(item);
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    return out;
  }

  /// Call after a subcommand has consumed its keys; leftovers are typos.
  void finish() const {
    for (const auto& [key, entry] : entries_)
      if (!entry.consumed)
        throw std::invalid_argument(where(entry.line) + "unknown key '" + key + "'");
  }

  const std::string& source() const { return source_; }

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
    bool consumed = false;
  };

  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
      s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
      s.remove_suffix(1);
    return s;
  }

  std::string where(std::size_t line) const {
    return source_ + ":" + std::to_string(line) + ": ";
  }

  std::string source_;
  std::map<std::string, Entry> entries_;
};

// --- typed loaders, one per subcommand --------------------------------------

/// `dataset build`: a preset ("desk" or "paper") plus overrides for seeds,
/// counts, and ranges. Small overrides keep determinism rehearsals cheap.
inline DatasetConfig make_dataset_config(Config& cfg) {
  const std::string preset = cfg.get_string("preset", "desk");
  DatasetConfig out;
  if (preset == "desk")
    out = desk_config(0);
  else if (preset == "paper")
    out = paper_scale_config();
  else
    throw std::invalid_argument(cfg.source() + ": unknown preset '" + preset +
                                "' (expected desk or paper)");
  out.seed = cfg.get_uint("seed", out.seed);
  out.snr_lo_db = cfg.get_double("snr_lo_db", out.snr_lo_db);
  out.snr_hi_db = cfg.get_double("snr_hi_db", out.snr_hi_db);
  out.dist_lo_m = cfg.get_double("dist_lo_m", out.dist_lo_m);
  out.dist_hi_m = cfg.get_double("dist_hi_m", out.dist_hi_m);
  out.synth_noise_count = cfg.get_uint("synth_noise_count", out.synth_noise_count);
  out.noise_duration_s = cfg.get_double("noise_duration_s", out.noise_duration_s);
  out.noise_corpus_dir = cfg.get_string("noise_corpus_dir", out.noise_corpus_dir);
  out.rir_taps = cfg.get_uint("rir_taps", out.rir_taps);
  out.train.samples_per_combo =
      cfg.get_uint("train_samples_per_combo", out.train.samples_per_combo);
  out.val.samples_per_combo = cfg.get_uint("val_samples_per_combo", out.val.samples_per_combo);
  out.test.samples_per_combo =
      cfg.get_uint("test_samples_per_combo", out.test.samples_per_combo);
  out.train.array_positions_per_room =
      cfg.get_uint("train_positions_per_room", out.train.array_positions_per_room);
  out.val.array_positions_per_room =
      cfg.get_uint("val_positions_per_room", out.val.array_positions_per_room);
  out.test.array_positions_per_room =
      cfg.get_uint("test_positions_per_room", out.test.array_positions_per_room);
  out.validate();
  return out;
}

struct TrainSpec {
  std::string dataset_dir;
  TrainOptions opts;
};

inline TrainSpec make_train_spec(Config& cfg) {
  TrainSpec spec;
  spec.dataset_dir = cfg.get_string("dataset_dir");
  if (spec.dataset_dir.empty())
    throw std::invalid_argument(cfg.source() + ": 'dataset_dir' is required");
  spec.opts.epochs = cfg.get_uint("epochs", spec.opts.epochs);
  spec.opts.batch_size = cfg.get_uint("batch_size", spec.opts.batch_size);
  spec.opts.learning_rate = cfg.get_double("learning_rate", spec.opts.learning_rate);
  spec.opts.seed = cfg.get_uint("seed", spec.opts.seed);
  spec.opts.log_magnitude = cfg.get_bool("log_magnitude", spec.opts.log_magnitude);
  spec.opts.max_seconds = cfg.get_double("max_seconds", spec.opts.max_seconds);
  if (spec.opts.epochs == 0 || spec.opts.batch_size == 0)
    throw std::invalid_argument(cfg.source() + ": epochs and batch_size must be positive");
  return spec;
}

struct EvalSpec {
  std::string dataset_dir;
  std::string split = "val";
  std::string checkpoint_path;
};

inline EvalSpec make_eval_spec(Config& cfg) {
  EvalSpec spec;
  spec.dataset_dir = cfg.get_string("dataset_dir");
  spec.split = cfg.get_string("split", spec.split);
  spec.checkpoint_path = cfg.get_string("checkpoint");
  if (spec.dataset_dir.empty() || spec.checkpoint_path.empty())
    throw std::invalid_argument(cfg.source() + ": 'dataset_dir' and 'checkpoint' are required");
  return spec;
}

struct PretrainSpec {
  double rt60 = 0.3;
  double step_size = 1e-4;
  std::size_t filter_length = 1024;
  PretrainOptions opts;
};

inline PretrainSpec make_pretrain_spec(Config& cfg) {
  PretrainSpec spec;
  spec.rt60 = cfg.get_double("rt60", spec.rt60);
  spec.step_size = cfg.get_double("step_size", spec.step_size);
  spec.filter_length = cfg.get_uint("filter_length", spec.filter_length);
  spec.opts.max_seconds = cfg.get_double("max_seconds", spec.opts.max_seconds);
  spec.opts.noise_seed = cfg.get_uint("seed", spec.opts.noise_seed);
  if (spec.rt60 < 0.0 || spec.step_size <= 0.0 || spec.filter_length == 0)
    throw std::invalid_argument(cfg.source() + ": bad pretrain parameters");
  return spec;
}

struct SimSpec {
  Scenario scenario;
  std::vector<Method> methods;
  std::string library_path;
  std::string checkpoint_path;
  bool write_traces = false;
};

inline SimSpec make_sim_spec(Config& cfg) {
  SimSpec spec;
  Scenario& sc = spec.scenario;
  sc.acoustics = desk_acoustics(cfg.get_double("rt60", 0.3));
  sc.placement = SourcePlacement(cfg.get_double("azimuth_deg", sc.placement.azimuth_deg),
                                 cfg.get_double("elevation_deg", sc.placement.elevation_deg),
                                 cfg.get_double("distance_m", sc.placement.distance_m));
  sc.signal.band_lo_hz = cfg.get_double("band_lo_hz", sc.signal.band_lo_hz);
  sc.signal.band_hi_hz = cfg.get_double("band_hi_hz", sc.signal.band_hi_hz);
  sc.signal.wav_path = cfg.get_string("wav_path", sc.signal.wav_path);
  if (cfg.has("snr_db")) sc.snr_db = cfg.get_double("snr_db", 0.0);
  sc.duration_s = cfg.get_double("duration_s", sc.duration_s);
  sc.seed = cfg.get_uint("seed", sc.seed);
  sc.fxlms_step_size = cfg.get_double("step_size", sc.fxlms_step_size);
  sc.filter_length = cfg.get_uint("filter_length", sc.filter_length);
  sc.fixed_azim_class = cfg.get_uint("fixed_azim_class", sc.fixed_azim_class);
  sc.fixed_elev_class = cfg.get_uint("fixed_elev_class", sc.fixed_elev_class);
  sc.crossfade = cfg.get_bool("crossfade", sc.crossfade);

  const auto names = cfg.get_list("methods", {"anc_off", "fxlms", "fixed", "directional"});
  for (const auto& name : names) spec.methods.push_back(method_from_name(name));
  if (spec.methods.empty())
    throw std::invalid_argument(cfg.source() + ": 'methods' must name at least one method");
  spec.library_path = cfg.get_string("library");
  spec.checkpoint_path = cfg.get_string("checkpoint");
  spec.write_traces = cfg.get_bool("write_traces", spec.write_traces);
  sc.validate();
  return spec;
}

// --- CSV emission -------------------------------------------------------------

/// Fixed-precision decimal formatting so that rerunning a command writes
/// byte-identical CSVs.
inline std::string csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

/// Every CSV starts with a comment line naming the run manifest hash,
/// followed by the header row.
inline void write_csv(const std::string& path, const std::string& manifest_hash,
                      const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path);
  out << "# manifest_hash=" << manifest_hash << "\n";
  for (std::size_t i = 0; i < header.size(); ++i)
    out << (i ? "," : "") << header[i];
  out << "\n";
  for (const auto& row : rows) {
    if (row.size() != header.size())
      throw std::invalid_argument("write_csv: row width does not match header");
    for (std::size_t i = 0; i < row.size(); ++i)
      out << (i ? "," : "") << row[i];
    out << "\n";
  }
  if (!out) throw std::runtime_error("write_csv: write failed for " + path);
}

// --- control filter library persistence ----------------------------------------

inline void save_library(const std::string& path, const ControlFilterLibrary& lib) {
  lib.validate();
  TensorBundle bundle;
  const std::size_t n = lib.entries.size();
  const std::size_t j = lib.entries.front().channels();
  const std::size_t l = lib.entries.front().length();
  Tensor<double> taps({n, j, l});
  Tensor<double> azim({n}), elev({n}), converged({n});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = lib.entries[i];
    azim.data[i] = e.azimuth_deg;
    elev.data[i] = e.elevation_deg;
    converged.data[i] = e.converged ? 1.0 : 0.0;
    for (std::size_t c = 0; c < j; ++c)
      std::copy(e.taps[c].begin(), e.taps[c].end(), taps.data.begin() + (i * j + c) * l);
  }
  bundle.add("taps", std::move(taps));
  bundle.add("meta.azimuth_deg", std::move(azim));
  bundle.add("meta.elevation_deg", std::move(elev));
  bundle.add("meta.converged", std::move(converged));
  write_bundle(path, bundle);
}

inline ControlFilterLibrary load_library(const std::string& path) {
  const TensorBundle bundle = read_bundle(path);
  const auto& taps = bundle.get<double>("taps");
  const auto& azim = bundle.get<double>("meta.azimuth_deg");
  const auto& elev = bundle.get<double>("meta.elevation_deg");
  const auto& converged = bundle.get<double>("meta.converged");
  if (taps.dims.size() != 3)
    throw std::runtime_error("load_library: taps tensor must be rank 3 in " + path);
  const std::size_t n = taps.dims[0], j = taps.dims[1], l = taps.dims[2];
  if (azim.data.size() != n || elev.data.size() != n || converged.data.size() != n)
    throw std::runtime_error("load_library: metadata length mismatch in " + path);
  ControlFilterLibrary lib;
  lib.entries.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& e = lib.entries[i];
    e.azimuth_deg = azim.data[i];
    e.elevation_deg = elev.data[i];
    e.converged = converged.data[i] != 0.0;
    e.taps.assign(j, std::vector<double>(l));
    for (std::size_t c = 0; c < j; ++c)
      std::copy(taps.data.begin() + (i * j + c) * l, taps.data.begin() + (i * j + c + 1) * l,
                e.taps[c].begin());
  }
  lib.validate();
  return lib;
}

}  // namespace sfanc
