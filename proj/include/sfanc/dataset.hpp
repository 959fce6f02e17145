#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfanc/anc.hpp"
#include "sfanc/cnn.hpp"
#include "sfanc/parallel.hpp"
#include "sfanc/rir.hpp"
#include "sfanc/rng.hpp"
#include "sfanc/signal.hpp"
#include "sfanc/tensor.hpp"
#include "sfanc/wav.hpp"

namespace sfanc {

// Labeled dataset construction: noise bank -> room render -> 0.5 s frame ->
// feature tensor + nearest-class label, with a JSON manifest and streamed
// binary split files.

// --- labels -------------------------------------------------------------------

inline DoaLabel nearest_class_labels(double azim_deg, double elev_deg) {
  if (azim_deg < 0.0 || azim_deg >= 360.0)
    throw std::invalid_argument("nearest_class_labels: azimuth outside [0, 360)");
  if (elev_deg < -90.0 || elev_deg > 90.0)
    throw std::invalid_argument("nearest_class_labels: elevation outside [-90, 90]");

  DoaLabel label;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < kAzimuthClassesDeg.size(); ++i) {
    const double raw = std::abs(azim_deg - kAzimuthClassesDeg[i]);
    const double dist = std::min(raw, 360.0 - raw);
    if (dist < best) {  // strict: exact midpoints keep the lower index
      best = dist;
      label.azim_class = i;
    }
  }
  best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < kElevationClassesDeg.size(); ++i) {
    const double dist = std::abs(elev_deg - kElevationClassesDeg[i]);
    if (dist < best) {
      best = dist;
      label.elev_class = i;
    }
  }
  return label;
}

// --- noise sources --------------------------------------------------------------

/// Bandlimited white noise clips with band edges drawn uniformly subject to
/// 20 <= lo < hi <= 2020 Hz and hi - lo >= 100 Hz.
inline std::vector<std::vector<double>> synth_noise_bank(std::size_t count,
                                                         double duration_s, double fs,
                                                         Rng& rng) {
  if (count == 0) throw std::invalid_argument("synth_noise_bank: count must be positive");
  std::vector<std::vector<double>> bank;
  bank.reserve(count);
  const std::size_t n = static_cast<std::size_t>(duration_s * fs);
  for (std::size_t i = 0; i < count; ++i) {
    double lo = 0.0, hi = 0.0;
    do {
      lo = rng.uniform(20.0, 2020.0);
      hi = rng.uniform(20.0, 2020.0);
      if (lo > hi) std::swap(lo, hi);
    } while (hi - lo < 100.0);
    Rng noise_rng = rng.child(i);
    bank.push_back(bandlimited_noise(lo, hi, static_cast<double>(n) / fs, fs, noise_rng));
  }
  return bank;
}

/// Loads every readable WAV in `dir` (sorted by filename for determinism),
/// mixes to mono, resamples to 16 kHz, peak-normalizes to 0.5, and rejects
/// clips shorter than 0.5 s. Unreadable files are skipped with a warning.
inline std::vector<std::vector<double>> ingest_wav_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw std::runtime_error("ingest_wav_corpus: not a directory: " + dir);
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file()) paths.push_back(entry.path().string());
  std::sort(paths.begin(), paths.end());

  std::vector<std::vector<double>> clips;
  for (const auto& path : paths) {
    std::vector<double> mono;
    try {
      const WavData wav = read_wav(path);
      mono = resample(mix_to_mono(wav), wav.fs, kSampleRate);
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping " << path << ": " << e.what() << "\n";
      continue;
    }
    if (mono.size() < kFrameLen) continue;  // shorter than 0.5 s
    double peak = 0.0;
    for (double v : mono) peak = std::max(peak, std::abs(v));
    if (peak <= 0.0) continue;
    for (double& v : mono) v *= 0.5 / peak;
    clips.push_back(std::move(mono));
  }
  if (clips.empty())
    throw std::runtime_error("ingest_wav_corpus: no usable clips in " + dir);
  return clips;
}

// --- configuration ---------------------------------------------------------------

struct RoomSpec {
  Vec3 dims;
  std::vector<double> rt60_list;
};

struct SplitSpec {
  std::vector<RoomSpec> rooms;
  std::size_t array_positions_per_room = 8;
  std::size_t samples_per_combo = 0;  // per (room, RT60, array position)

  std::size_t combo_count() const {
    std::size_t combos = 0;
    for (const auto& r : rooms) combos += r.rt60_list.size() * array_positions_per_room;
    return combos;
  }
  std::size_t total_count() const { return combo_count() * samples_per_combo; }
};

struct DatasetConfig {
  SplitSpec train;
  SplitSpec val;
  SplitSpec test;  // empty rooms => no test split
  double snr_lo_db = 30.0, snr_hi_db = 50.0;
  double azim_lo_deg = 0.0, azim_hi_deg = 360.0;
  double elev_lo_deg = -60.0, elev_hi_deg = 90.0;
  double dist_lo_m = 0.1, dist_hi_m = 0.6;
  double array_diameter_m = 0.025;
  std::size_t rir_taps = 4096;
  std::size_t synth_noise_count = 40;
  double noise_duration_s = 2.0;
  std::string noise_corpus_dir;  // optional
  std::uint64_t seed = 0;

  void validate() const {
    if (train.total_count() == 0 || val.total_count() == 0)
      throw std::invalid_argument("DatasetConfig: train and val splits must be non-empty");
    if (snr_lo_db > snr_hi_db || dist_lo_m > dist_hi_m || dist_lo_m <= 0.0)
      throw std::invalid_argument("DatasetConfig: bad SNR or distance range");
    if (azim_lo_deg < 0.0 || azim_hi_deg > 360.0 || azim_lo_deg >= azim_hi_deg)
      throw std::invalid_argument("DatasetConfig: azimuth range must sit inside [0, 360)");
    if (elev_lo_deg < -90.0 || elev_hi_deg > 90.0 || elev_lo_deg >= elev_hi_deg)
      throw std::invalid_argument("DatasetConfig: elevation range must sit inside [-90, 90]");
    if (noise_duration_s * kSampleRate < 2.0 * static_cast<double>(kFrameLen))
      throw std::invalid_argument("DatasetConfig: noise clips must cover warm-up + frame");
    if (synth_noise_count == 0)
      throw std::invalid_argument("DatasetConfig: need at least one noise source");
  }
};

/// Full-scale configuration mirroring the published table; used for manifest
/// arithmetic only (nothing at this scale is generated in the tests).
inline DatasetConfig paper_scale_config() {
  DatasetConfig cfg;
  cfg.train.rooms = {{{6, 4, 3}, {0.1, 0.2, 0.3}},
                     {{12, 8, 3.5}, {0.4, 0.5, 0.6}},
                     {{16, 14, 4}, {0.7, 0.8, 0.9}}};
  cfg.train.array_positions_per_room = 8;
  cfg.train.samples_per_combo = 640;  // 72 combos -> 46080
  cfg.val.rooms = cfg.train.rooms;
  cfg.val.array_positions_per_room = 8;
  cfg.val.samples_per_combo = 80;  // -> 5760
  cfg.test.rooms = {{{11, 9, 3.2}, {0.48}}};
  cfg.test.array_positions_per_room = 4;
  cfg.test.samples_per_combo = 1200;  // -> 4800
  return cfg;
}

/// Small configuration sized for a laptop CPU: one room, two reverberation
/// times, 2000 train / 400 val samples.
inline DatasetConfig desk_config(std::uint64_t seed = 0) {
  DatasetConfig cfg;
  cfg.train.rooms = {{{6, 4, 3}, {0.2, 0.4}}};
  cfg.train.array_positions_per_room = 8;
  cfg.train.samples_per_combo = 125;  // 16 combos -> 2000
  cfg.val.rooms = cfg.train.rooms;
  cfg.val.array_positions_per_room = 8;
  cfg.val.samples_per_combo = 25;  // -> 400
  cfg.seed = seed;
  return cfg;
}

// --- build ------------------------------------------------------------------------

struct SplitFiles {
  std::string features;  // single rank-4 tensor (N, 8, 513, 110), f32
  std::string meta;      // bundle holding the provenance table
};

struct DatasetManifest {
  nlohmann::json doc;

  std::string dump() const { return doc.dump(2) + "\n"; }
  std::uint64_t content_hash() const {
    return fnv1a64(doc.dump());  // deterministic: nlohmann sorts object keys
  }
};

namespace detail {

struct Combo {
  std::size_t room_index = 0;
  Room room{{1, 1, 1}, 0.0};
  double rt60 = 0.0;
  std::size_t position_index = 0;
  Vec3 array_center{};
};

/// Array centers drawn by rejection sampling: uniform in the room, kept only
/// when every surface is more than 1 m away (including the array radius).
inline Vec3 draw_array_center(const Room& room, double array_radius, Rng& rng) {
  const double margin = 1.0 + array_radius;
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Vec3 p{};
    bool clear = true;
    for (std::size_t a = 0; a < 3; ++a) {
      p[a] = rng.uniform(0.0, room.dims[a]);
      clear = clear && p[a] > margin && p[a] < room.dims[a] - margin;
    }
    if (clear) return p;
  }
  throw std::runtime_error("build_dataset: room too small for 1 m array clearance");
}

inline std::vector<Combo> enumerate_combos(const SplitSpec& split, double array_diameter,
                                           const Rng& base, std::uint64_t split_id) {
  std::vector<Combo> combos;
  for (std::size_t ri = 0; ri < split.rooms.size(); ++ri) {
    const auto& spec = split.rooms[ri];
    Rng pos_rng = base.child(split_id).child(ri);
    std::vector<Vec3> centers;
    const Room probe(spec.dims, spec.rt60_list.front());
    for (std::size_t pi = 0; pi < split.array_positions_per_room; ++pi)
      centers.push_back(draw_array_center(probe, array_diameter / 2.0, pos_rng));
    for (double rt : spec.rt60_list)
      for (std::size_t pi = 0; pi < split.array_positions_per_room; ++pi)
        combos.push_back({ri, Room(spec.dims, rt), rt, pi, centers[pi]});
  }
  return combos;
}

/// Streams a rank-4 f32 tensor to disk sample by sample; the result is
/// readable with read_tensor.
class TensorStreamWriter {
 public:
  TensorStreamWriter(const std::string& path, std::vector<std::uint64_t> dims)
      : os_(path, std::ios::binary), path_(path) {
    if (!os_) throw std::runtime_error("cannot open for writing: " + path);
    write_bytes(os_, "SFTENSOR", 8);
    write_pod<std::uint32_t>(os_, 1);
    write_pod<std::uint32_t>(os_, 0);  // f32
    write_pod<std::uint64_t>(os_, dims.size());
    for (auto d : dims) write_pod<std::uint64_t>(os_, d);
  }
  void append(const std::vector<float>& data) {
    write_bytes(os_, data.data(), data.size() * sizeof(float));
  }
  void close() {
    os_.flush();
    if (!os_) throw std::runtime_error("write failed: " + path_);
    os_.close();
  }

 private:
  std::ofstream os_;
  std::string path_;
};

}  // namespace detail

// provenance table columns, one row per sample
enum ProvenanceColumn : std::size_t {
  kProvAzimuthDeg = 0,
  kProvElevationDeg,
  kProvDistanceM,
  kProvRoomIndex,
  kProvRt60,
  kProvPositionIndex,
  kProvSnrDb,
  kProvNoiseIndex,
  kProvAzimClass,
  kProvElevClass,
  kProvColumns
};

inline DatasetManifest build_dataset(const DatasetConfig& cfg, const std::string& out_dir,
                                     std::size_t n_threads = 1) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  const Rng base(cfg.seed);
  Rng bank_rng = base.child(0xBA);
  auto bank = synth_noise_bank(cfg.synth_noise_count, cfg.noise_duration_s, kSampleRate,
                               bank_rng);
  if (!cfg.noise_corpus_dir.empty()) {
    for (auto& clip : ingest_wav_corpus(cfg.noise_corpus_dir)) bank.push_back(std::move(clip));
  }

  struct SplitPlan {
    std::string name;
    const SplitSpec* spec;
    std::uint64_t id;
  };
  std::vector<SplitPlan> plans = {{"train", &cfg.train, 1}, {"val", &cfg.val, 2}};
  if (cfg.test.total_count() > 0) plans.push_back({"test", &cfg.test, 3});

  // split hygiene: no (room dims, array position) pair shared between train
  // and test
  std::vector<std::vector<detail::Combo>> split_combos;
  for (const auto& plan : plans)
    split_combos.push_back(
        detail::enumerate_combos(*plan.spec, cfg.array_diameter_m, base, plan.id));
  if (plans.size() == 3) {
    for (const auto& a : split_combos[0])
      for (const auto& b : split_combos[2])
        if (a.room.dims == b.room.dims && a.array_center == b.array_center)
          throw std::runtime_error("build_dataset: train and test share an array position");
  }

  const std::size_t slice_len = 2 * kFrameLen;  // 0.5 s warm-up + 0.5 s frame
  std::atomic<std::size_t> failures{0};

  nlohmann::json splits_json;
  for (std::size_t pi = 0; pi < plans.size(); ++pi) {
    const auto& plan = plans[pi];
    const auto& combos = split_combos[pi];
    const std::size_t total = plan.spec->total_count();
    const std::size_t spc = plan.spec->samples_per_combo;

    const std::string feat_path = out_dir + "/" + plan.name + ".features.bin";
    const std::string meta_path = out_dir + "/" + plan.name + ".meta.bin";
    detail::TensorStreamWriter writer(feat_path, {total, 8, 513, 110});
    Tensor<double> provenance({total, kProvColumns});
    std::vector<std::size_t> azim_hist(kAzimuthClassesDeg.size(), 0);
    std::vector<std::size_t> elev_hist(kElevationClassesDeg.size(), 0);

    const std::size_t chunk = 16;
    std::vector<std::vector<float>> slot_features(chunk);
    std::vector<std::array<double, kProvColumns>> slot_prov(chunk);

    for (std::size_t start = 0; start < total; start += chunk) {
      const std::size_t count = std::min(chunk, total - start);
      parallel_for(count, n_threads, [&](std::size_t s) {
        const std::size_t index = start + s;
        const auto& combo = combos[index / spc];
        Rng rng = base.child(plan.id).child(0x100000 + index);
        const MicArray array =
            make_tetrahedral_array(combo.array_center, cfg.array_diameter_m);

        SourcePlacement placement{0.0, 0.0, 1.0};
        Vec3 src{};
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
          if (attempt > 0) failures.fetch_add(1);
          double azim = rng.uniform(cfg.azim_lo_deg, cfg.azim_hi_deg);
          if (azim >= 360.0) azim = 0.0;
          placement.azimuth_deg = azim;
          placement.elevation_deg = rng.uniform(cfg.elev_lo_deg, cfg.elev_hi_deg);
          placement.distance_m = rng.uniform(cfg.dist_lo_m, cfg.dist_hi_m);
          src = place_source(array, placement);
          placed = combo.room.contains(src, 1e-3);
        }
        if (!placed)
          throw std::runtime_error("build_dataset: could not place source inside room");

        const double snr_db = rng.uniform(cfg.snr_lo_db, cfg.snr_hi_db);
        const std::size_t noise_index = rng.uniform_int(bank.size());
        const auto& clip = bank[noise_index];
        const std::size_t offset = rng.uniform_int(clip.size() - slice_len + 1);
        const std::vector<double> slice(clip.begin() + static_cast<long>(offset),
                                        clip.begin() + static_cast<long>(offset + slice_len));

        std::vector<ImpulseResponse> rirs;
        rirs.reserve(4);
        for (const auto& mic : array.positions)
          rirs.push_back(simulate_rir(combo.room, src, mic, kSampleRate, cfg.rir_taps));
        const auto refs = render_mic_signals(slice, rirs, snr_db, rng);

        // frame = second half of the render; the first 0.5 s is reverberant
        // warm-up, and the uniform clip offset supplies the start jitter
        std::vector<std::vector<double>> frame(refs.size());
        for (std::size_t j = 0; j < refs.size(); ++j)
          frame[j].assign(refs[j].begin() + kFrameLen, refs[j].end());
        const Tensor<float> feats = features(frame);

        const DoaLabel label =
            nearest_class_labels(placement.azimuth_deg, placement.elevation_deg);
        slot_features[s] = feats.data;
        slot_prov[s] = {placement.azimuth_deg,
                        placement.elevation_deg,
                        placement.distance_m,
                        static_cast<double>(combo.room_index),
                        combo.rt60,
                        static_cast<double>(combo.position_index),
                        snr_db,
                        static_cast<double>(noise_index),
                        static_cast<double>(label.azim_class),
                        static_cast<double>(label.elev_class)};
      });
      for (std::size_t s = 0; s < count; ++s) {
        writer.append(slot_features[s]);
        const std::size_t index = start + s;
        for (std::size_t c = 0; c < kProvColumns; ++c)
          provenance.data[index * kProvColumns + c] = slot_prov[s][c];
        azim_hist[static_cast<std::size_t>(slot_prov[s][kProvAzimClass])]++;
        elev_hist[static_cast<std::size_t>(slot_prov[s][kProvElevClass])]++;
      }
      if (failures.load() * 100 > (cfg.train.total_count() + cfg.val.total_count() +
                                   cfg.test.total_count()))
        throw std::runtime_error("build_dataset: more than 1% of samples failed to generate");
    }
    writer.close();

    TensorBundle meta;
    meta.add("provenance", provenance);
    write_bundle(meta_path, meta);

    nlohmann::json sj;
    sj["count"] = total;
    sj["combos"] = combos.size();
    sj["samples_per_combo"] = spc;
    sj["azimuth_class_histogram"] = azim_hist;
    sj["elevation_class_histogram"] = elev_hist;
    sj["features_file"] = plan.name + ".features.bin";
    sj["meta_file"] = plan.name + ".meta.bin";
    sj["features_hash"] = hash_hex(hash_file(feat_path));
    sj["meta_hash"] = hash_hex(hash_file(meta_path));
    splits_json[plan.name] = sj;
  }

  DatasetManifest manifest;
  manifest.doc["format_version"] = 1;
  manifest.doc["seed"] = cfg.seed;
  manifest.doc["sample_rate_hz"] = kSampleRate;
  manifest.doc["feature_shape"] = {8, 513, 110};
  manifest.doc["snr_range_db"] = {cfg.snr_lo_db, cfg.snr_hi_db};
  manifest.doc["elevation_range_deg"] = {cfg.elev_lo_deg, cfg.elev_hi_deg};
  manifest.doc["distance_range_m"] = {cfg.dist_lo_m, cfg.dist_hi_m};
  manifest.doc["noise_bank_size"] = bank.size();
  manifest.doc["generation_failures"] = failures.load();
  manifest.doc["splits"] = splits_json;
  manifest.doc["content_hash"] = hash_hex(fnv1a64(splits_json.dump()));

  std::ofstream mf(out_dir + "/manifest.json");
  mf << manifest.dump();
  if (!mf) throw std::runtime_error("build_dataset: cannot write manifest");
  return manifest;
}

/// Expected per-split counts from the configuration alone (manifest
/// arithmetic; no data is generated).
inline nlohmann::json manifest_arithmetic(const DatasetConfig& cfg) {
  nlohmann::json j;
  j["train"] = cfg.train.total_count();
  j["val"] = cfg.val.total_count();
  j["test"] = cfg.test.total_count();
  return j;
}

// --- file-backed sample access ------------------------------------------------

/// SampleSource over a streamed split file; samples are fetched with pread so
/// concurrent loads from worker threads are safe.
class FileSamples final : public SampleSource {
 public:
  FileSamples(const std::string& features_path, const std::string& meta_path) {
    fd_ = ::open(features_path.c_str(), O_RDONLY);
    if (fd_ < 0) throw std::runtime_error("FileSamples: cannot open " + features_path);
    std::ifstream is(features_path, std::ios::binary);
    char magic[8];
    detail::read_bytes(is, magic, 8);
    if (std::memcmp(magic, "SFTENSOR", 8) != 0)
      throw std::runtime_error("FileSamples: bad magic in " + features_path);
    detail::read_pod<std::uint32_t>(is);  // version
    const auto dtype = detail::read_pod<std::uint32_t>(is);
    if (dtype != 0) throw std::runtime_error("FileSamples: expected f32 features");
    const auto rank = detail::read_pod<std::uint64_t>(is);
    if (rank != 4) throw std::runtime_error("FileSamples: expected rank-4 features");
    std::vector<std::uint64_t> dims(4);
    for (auto& d : dims) d = detail::read_pod<std::uint64_t>(is);
    count_ = dims[0];
    shape_ = {dims[1], dims[2], dims[3]};
    payload_offset_ = 8 + 4 + 4 + 8 + 8 * rank;
    sample_floats_ = shape_[0] * shape_[1] * shape_[2];

    const TensorBundle meta = read_bundle(meta_path);
    provenance_ = meta.get<double>("provenance");
    if (provenance_.dims.size() != 2 || provenance_.dims[0] != count_ ||
        provenance_.dims[1] != kProvColumns)
      throw std::runtime_error("FileSamples: provenance table shape mismatch");
  }
  ~FileSamples() override {
    if (fd_ >= 0) ::close(fd_);
  }
  FileSamples(const FileSamples&) = delete;
  FileSamples& operator=(const FileSamples&) = delete;

  std::size_t size() const override { return count_; }
  std::array<std::size_t, 3> feature_shape() const override { return shape_; }

  void load(std::size_t index, std::vector<float>& features,
            DoaLabel& label) const override {
    if (index >= count_) throw std::out_of_range("FileSamples: index out of range");
    features.resize(sample_floats_);
    const std::size_t bytes = sample_floats_ * sizeof(float);
    const off_t off =
        static_cast<off_t>(payload_offset_ + index * bytes);
    std::size_t done = 0;
    while (done < bytes) {
      const ssize_t got = ::pread(fd_, reinterpret_cast<char*>(features.data()) + done,
                                  bytes - done, off + static_cast<off_t>(done));
      if (got <= 0) throw std::runtime_error("FileSamples: short read");
      done += static_cast<std::size_t>(got);
    }
    label = label_of(index);
  }

  DoaLabel label_of(std::size_t index) const {
    return {static_cast<std::size_t>(
                provenance_.data[index * kProvColumns + kProvAzimClass]),
            static_cast<std::size_t>(
                provenance_.data[index * kProvColumns + kProvElevClass])};
  }
  double provenance(std::size_t index, ProvenanceColumn col) const {
    return provenance_.data[index * kProvColumns + col];
  }

 private:
  int fd_ = -1;
  std::size_t count_ = 0;
  std::array<std::size_t, 3> shape_{};
  std::size_t payload_offset_ = 0;
  std::size_t sample_floats_ = 0;
  Tensor<double> provenance_;
};

inline FileSamples open_split(const std::string& dataset_dir, const std::string& split) {
  return FileSamples(dataset_dir + "/" + split + ".features.bin",
                     dataset_dir + "/" + split + ".meta.bin");
}

}  // namespace sfanc
