#include "seqsleep/harness.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace seqsleep::harness {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

// ---- little-endian byte helpers ----

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}
void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}
std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}
float get_f32(const std::string& in, std::size_t pos) { return std::bit_cast<float>(get_u32(in, pos)); }
double get_f64(const std::string& in, std::size_t pos) {
  return std::bit_cast<double>(get_u64(in, pos));
}

std::string read_binary(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw UsageError("cannot open " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

void write_binary(const fs::path& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw UsageError("cannot write " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("write failed: " + path.string());
}

constexpr std::size_t kRecordingHeader = 4 + 4 + 4 + 8 + 4 + 4;

}  // namespace

// ---- recordings ------------------------------------------------------------------

std::size_t Recording::epoch_count() const {
  const std::size_t per_epoch = static_cast<std::size_t>(channels) * samples_per_epoch;
  return per_epoch == 0 ? 0 : samples.size() / per_epoch;
}

tfr::EpochSignal Recording::epoch(std::size_t index) const {
  if (index >= epoch_count()) {
    throw DataError("epoch " + std::to_string(index) + " out of range (" +
                    std::to_string(epoch_count()) + " epochs)");
  }
  tfr::EpochSignal sig;
  sig.sample_rate = sample_rate;
  sig.samples.resize(channels);
  const float* base = samples.data() + index * channels * samples_per_epoch;
  for (std::size_t c = 0; c < channels; ++c) {
    const float* ch = base + c * samples_per_epoch;
    sig.samples[c].assign(ch, ch + samples_per_epoch);
  }
  return sig;
}

fs::path label_path(const fs::path& recording) {
  fs::path p = recording;
  p.replace_extension(".lbl");
  return p;
}

void write_recording(const fs::path& path, const Recording& rec) {
  const std::size_t epochs = rec.epoch_count();
  if (rec.samples.size() != epochs * rec.channels * rec.samples_per_epoch) {
    throw DataError("recording payload is not a whole number of epochs");
  }
  if (!rec.labels.empty() && rec.labels.size() != epochs) {
    throw DataError("recording has " + std::to_string(rec.labels.size()) + " labels for " +
                    std::to_string(epochs) + " epochs");
  }
  std::string bytes;
  bytes.reserve(kRecordingHeader + rec.samples.size() * 4);
  bytes.append("SSR1", 4);
  put_u32(bytes, kRecordingVersion);
  put_u32(bytes, rec.channels);
  put_f64(bytes, rec.sample_rate);
  put_u32(bytes, rec.samples_per_epoch);
  put_u32(bytes, static_cast<std::uint32_t>(epochs));
  for (float v : rec.samples) put_f32(bytes, v);
  write_binary(path, bytes);

  if (!rec.labels.empty()) {
    std::string lbl;
    for (Stage s : rec.labels) lbl.push_back(static_cast<char>(stage_index(s)));
    write_binary(label_path(path), lbl);
  }
}

Recording read_recording(const fs::path& path) {
  const std::string bytes = read_binary(path);
  if (bytes.size() < 4 || bytes.compare(0, 4, "SSR1") != 0) {
    throw BadMagicError(path.string() + ": bad magic (not an SSR1 recording)");
  }
  if (bytes.size() < kRecordingHeader) throw TruncatedError(path.string() + ": truncated header");
  Recording rec;
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kRecordingVersion) {
    throw DataError(path.string() + ": unsupported format version " + std::to_string(version));
  }
  rec.channels = get_u32(bytes, 8);
  rec.sample_rate = get_f64(bytes, 12);
  rec.samples_per_epoch = get_u32(bytes, 20);
  const std::uint32_t epochs = get_u32(bytes, 24);
  if (rec.channels == 0 || rec.samples_per_epoch == 0 || !(rec.sample_rate > 0.0)) {
    throw DataError(path.string() + ": invalid header");
  }
  const std::size_t count = static_cast<std::size_t>(epochs) * rec.channels * rec.samples_per_epoch;
  if (bytes.size() - kRecordingHeader < count * 4) {
    throw TruncatedError(path.string() + ": truncated payload (" +
                         std::to_string(bytes.size() - kRecordingHeader) + " of " +
                         std::to_string(count * 4) + " bytes)");
  }
  if (bytes.size() - kRecordingHeader > count * 4) {
    throw DataError(path.string() + ": trailing bytes after payload");
  }
  rec.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    rec.samples[i] = get_f32(bytes, kRecordingHeader + 4 * i);
    if (!std::isfinite(rec.samples[i])) throw DataError(path.string() + ": non-finite sample");
  }

  const fs::path lbl = label_path(path);
  if (fs::exists(lbl)) {
    const std::string raw = read_binary(lbl);
    if (raw.size() != epochs) {
      throw DataError(lbl.string() + ": " + std::to_string(raw.size()) + " labels for " +
                      std::to_string(epochs) + " epochs");
    }
    rec.labels.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const auto v = static_cast<unsigned char>(raw[i]);
      if (v >= kNumStages) {
        throw LabelRangeError(lbl.string() + ": label out of range (" + std::to_string(v) +
                              " at epoch " + std::to_string(i) + ")");
      }
      rec.labels.push_back(static_cast<Stage>(v));
    }
  }
  return rec;
}

std::vector<tfr::TimeFrequencyImage> recording_images(const Recording& rec,
                                                      const tfr::StftConfig& stft) {
  if (std::abs(rec.sample_rate - stft.sample_rate) > 1e-9) {
    throw DataError("recording sample rate " + std::to_string(rec.sample_rate) +
                    " Hz differs from the configured " + std::to_string(stft.sample_rate) + " Hz");
  }
  std::vector<tfr::TimeFrequencyImage> images;
  images.reserve(rec.epoch_count());
  for (std::size_t e = 0; e < rec.epoch_count(); ++e) {
    images.push_back(tfr::epoch_to_image(rec.epoch(e), stft));
  }
  return images;
}

// ---- synthetic corpus ---------------------------------------------------------------

void SyntheticConfig::validate() const {
  if (recordings < 1 || epochs < 1) throw UsageError("synthetic: need recordings, epochs >= 1");
  if (channels < 1) throw UsageError("synthetic: need channels >= 1");
  if (!(sample_rate > 0.0) || !(epoch_seconds > 0.0)) {
    throw UsageError("synthetic: sample_rate and epoch_seconds must be positive");
  }
  const double samples = sample_rate * epoch_seconds;
  if (std::abs(samples - std::round(samples)) > 1e-9) {
    throw UsageError("synthetic: sample_rate * epoch_seconds must be an integer");
  }
  if (noise_power < 0.0 || amplitude_jitter < 0.0) {
    throw UsageError("synthetic: noise_power and amplitude_jitter must be >= 0");
  }
  if (components_per_peak < 1) throw UsageError("synthetic: components_per_peak must be >= 1");
  for (std::size_t r = 0; r < kNumStages; ++r) {
    double sum = 0.0;
    for (double p : transitions[r]) {
      if (p < 0.0) throw UsageError("synthetic: negative transition probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw UsageError("synthetic: transition row " + std::string(kStageNames[r]) +
                       " sums to " + std::to_string(sum));
    }
  }
  const double nyquist = sample_rate / 2.0;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    if (profiles[s].size() != channels) {
      throw UsageError("synthetic: stage " + std::string(kStageNames[s]) + " has " +
                       std::to_string(profiles[s].size()) + " channel profiles, expected " +
                       std::to_string(channels));
    }
    for (const auto& channel : profiles[s]) {
      for (const Peak& p : channel) {
        if (p.center_hz < 0.0 || p.bandwidth_hz < 0.0 || p.power < 0.0) {
          throw UsageError("synthetic: peak fields must be >= 0");
        }
        if (p.center_hz + p.bandwidth_hz / 2.0 >= nyquist) {
          throw UsageError("synthetic: peak at " + std::to_string(p.center_hz) +
                           " Hz reaches the Nyquist frequency");
        }
      }
    }
  }
}

SyntheticConfig default_synthetic_config() {
  SyntheticConfig cfg;
  // Strong self-transitions. N1 is entered from W and REM from N2, so the
  // surrounding stages disambiguate the two spectrally similar stages.
  cfg.transitions = {{
      {0.85, 0.12, 0.03, 0.00, 0.00},  // W
      {0.05, 0.85, 0.10, 0.00, 0.00},  // N1
      {0.02, 0.00, 0.85, 0.08, 0.05},  // N2
      {0.02, 0.00, 0.13, 0.85, 0.00},  // N3
      {0.07, 0.00, 0.08, 0.00, 0.85},  // REM
  }};
  // Channels: EEG, EOG, EMG. N1 and REM differ only in EMG power.
  cfg.profiles[stage_index(Stage::W)] = {
      {{10.0, 2.0, 0.020}, {20.0, 6.0, 0.010}},
      {{1.0, 1.0, 0.040}},
      {{30.0, 20.0, 0.040}}};
  cfg.profiles[stage_index(Stage::N1)] = {
      {{6.0, 2.0, 0.020}},
      {{1.0, 1.0, 0.020}},
      {{30.0, 20.0, 0.015}}};
  cfg.profiles[stage_index(Stage::N2)] = {
      {{6.0, 2.0, 0.015}, {13.0, 2.0, 0.020}},
      {{0.5, 0.5, 0.010}},
      {{30.0, 20.0, 0.010}}};
  cfg.profiles[stage_index(Stage::N3)] = {
      {{2.0, 2.0, 0.080}},
      {{2.0, 2.0, 0.020}},
      {{30.0, 20.0, 0.008}}};
  cfg.profiles[stage_index(Stage::REM)] = {
      {{6.0, 2.0, 0.020}},
      {{1.0, 1.0, 0.020}},
      {{30.0, 20.0, 0.005}}};
  return cfg;
}

std::vector<Stage> sample_stage_chain(const SyntheticConfig& config, std::size_t epochs,
                                      Rng& rng) {
  std::vector<Stage> chain;
  chain.reserve(epochs);
  Stage current = config.initial_stage;
  for (std::size_t e = 0; e < epochs; ++e) {
    if (e > 0) {
      const auto& row = config.transitions[stage_index(current)];
      const double u = rng.uniform();
      double acc = 0.0;
      std::size_t next = kNumStages - 1;
      for (std::size_t k = 0; k < kNumStages; ++k) {
        acc += row[k];
        if (u < acc) {
          next = k;
          break;
        }
      }
      // Guard against rounding leaving u beyond the accumulated mass.
      while (row[next] == 0.0 && next > 0) --next;
      current = static_cast<Stage>(next);
    }
    chain.push_back(current);
  }
  return chain;
}

Recording generate_synthetic(const SyntheticConfig& config, std::size_t index) {
  config.validate();
  Rng base = Rng(config.seed).fork(index);
  Rng chain_rng = base.fork(1);
  Rng signal_rng = base.fork(2);

  Recording rec;
  rec.channels = static_cast<std::uint32_t>(config.channels);
  rec.sample_rate = config.sample_rate;
  rec.samples_per_epoch =
      static_cast<std::uint32_t>(std::llround(config.sample_rate * config.epoch_seconds));
  rec.labels = sample_stage_chain(config, config.epochs, chain_rng);

  const std::size_t n = rec.samples_per_epoch;
  const double noise_sd = std::sqrt(config.noise_power);
  const double two_pi = 2.0 * std::numbers::pi;
  rec.samples.resize(config.epochs * config.channels * n);
  std::vector<double> buf(n);
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const auto& profile = config.profiles[stage_index(rec.labels[e])];
    for (std::size_t c = 0; c < config.channels; ++c) {
      for (double& v : buf) v = noise_sd * signal_rng.normal();
      for (const Peak& peak : profile[c]) {
        const double jitter = std::exp(config.amplitude_jitter * signal_rng.normal());
        // Each component carries power/K; a sinusoid of amplitude a has power a^2/2.
        const double amp =
            jitter * std::sqrt(2.0 * peak.power / static_cast<double>(config.components_per_peak));
        for (std::size_t k = 0; k < config.components_per_peak; ++k) {
          const double freq = std::max(
              0.0, peak.center_hz + peak.bandwidth_hz * (signal_rng.uniform() - 0.5));
          const double phase = two_pi * signal_rng.uniform();
          const double step = two_pi * freq / config.sample_rate;
          for (std::size_t i = 0; i < n; ++i) {
            buf[i] += amp * std::sin(step * static_cast<double>(i) + phase);
          }
        }
      }
      float* out = rec.samples.data() + (e * config.channels + c) * n;
      for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(buf[i]);
    }
  }
  return rec;
}

namespace {

Stage stage_from_name(const std::string& name) {
  for (std::size_t k = 0; k < kNumStages; ++k) {
    if (kStageNames[k] == name) return static_cast<Stage>(k);
  }
  throw UsageError("unknown stage name '" + name + "'");
}

json parse_json(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("invalid JSON: ") + e.what());
  }
}

void check_keys(const json& j, std::initializer_list<std::string_view> allowed,
                const std::string& where) {
  if (!j.is_object()) throw UsageError(where + ": expected a JSON object");
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw UsageError(where + ": unknown key '" + item.key() + "'");
    }
  }
}

void check_version(const json& j, const std::string& where) {
  if (!j.contains("version")) throw UsageError(where + ": missing 'version'");
  if (j.at("version") != kConfigVersion) {
    throw UsageError(where + ": unsupported version " + j.at("version").dump());
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config field '") + key + "': " + e.what());
  }
}

}  // namespace

SyntheticConfig parse_synthetic_config(std::string_view json_text) {
  const json j = parse_json(json_text);
  check_keys(j,
             {"version", "recordings", "epochs", "channels", "sample_rate", "epoch_seconds",
              "noise_power", "components_per_peak", "amplitude_jitter", "initial_stage",
              "transitions", "profiles", "seed"},
             "synthetic config");
  check_version(j, "synthetic config");
  SyntheticConfig cfg = default_synthetic_config();
  read_field(j, "recordings", cfg.recordings);
  read_field(j, "epochs", cfg.epochs);
  read_field(j, "channels", cfg.channels);
  read_field(j, "sample_rate", cfg.sample_rate);
  read_field(j, "epoch_seconds", cfg.epoch_seconds);
  read_field(j, "noise_power", cfg.noise_power);
  read_field(j, "components_per_peak", cfg.components_per_peak);
  read_field(j, "amplitude_jitter", cfg.amplitude_jitter);
  read_field(j, "seed", cfg.seed);
  if (j.contains("initial_stage")) cfg.initial_stage = stage_from_name(j.at("initial_stage"));
  if (j.contains("transitions")) {
    const json& t = j.at("transitions");
    if (!t.is_array() || t.size() != kNumStages) throw UsageError("transitions must be 5x5");
    for (std::size_t r = 0; r < kNumStages; ++r) {
      if (!t[r].is_array() || t[r].size() != kNumStages) throw UsageError("transitions must be 5x5");
      for (std::size_t c = 0; c < kNumStages; ++c) cfg.transitions[r][c] = t[r][c].get<double>();
    }
  }
  if (j.contains("profiles")) {
    const json& p = j.at("profiles");
    check_keys(p, {"W", "N1", "N2", "N3", "REM"}, "profiles");
    for (std::size_t s = 0; s < kNumStages; ++s) {
      const std::string name(kStageNames[s]);
      if (!p.contains(name)) throw UsageError("profiles: missing stage " + name);
      cfg.profiles[s].clear();
      for (const json& channel : p.at(name)) {
        std::vector<Peak> peaks;
        for (const json& peak : channel) {
          check_keys(peak, {"center_hz", "bandwidth_hz", "power"}, "peak");
          peaks.push_back({peak.at("center_hz").get<double>(), peak.at("bandwidth_hz").get<double>(),
                           peak.at("power").get<double>()});
        }
        cfg.profiles[s].push_back(std::move(peaks));
      }
    }
  }
  cfg.validate();
  return cfg;
}

std::string synthetic_config_json(const SyntheticConfig& cfg) {
  json j;
  j["version"] = kConfigVersion;
  j["recordings"] = cfg.recordings;
  j["epochs"] = cfg.epochs;
  j["channels"] = cfg.channels;
  j["sample_rate"] = cfg.sample_rate;
  j["epoch_seconds"] = cfg.epoch_seconds;
  j["noise_power"] = cfg.noise_power;
  j["components_per_peak"] = cfg.components_per_peak;
  j["amplitude_jitter"] = cfg.amplitude_jitter;
  j["initial_stage"] = std::string(stage_name(cfg.initial_stage));
  j["transitions"] = cfg.transitions;
  json profiles;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    json channels = json::array();
    for (const auto& channel : cfg.profiles[s]) {
      json peaks = json::array();
      for (const Peak& p : channel) {
        peaks.push_back({{"center_hz", p.center_hz}, {"bandwidth_hz", p.bandwidth_hz},
                         {"power", p.power}});
      }
      channels.push_back(peaks);
    }
    profiles[std::string(kStageNames[s])] = channels;
  }
  j["profiles"] = profiles;
  j["seed"] = cfg.seed;
  return j.dump(2) + "\n";
}

// ---- dataset directories ------------------------------------------------------------

void save_dataset(const fs::path& dir, const std::vector<Recording>& recordings) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < recordings.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "rec_%03zu.ssr", i);
    write_recording(dir / name, recordings[i]);
  }
}

std::vector<NamedRecording> load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("not a dataset directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ssr") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .ssr recordings in " + dir.string());
  std::vector<NamedRecording> out;
  for (const fs::path& f : files) out.push_back({f.stem().string(), read_recording(f)});
  return out;
}

DatasetSplit split_dataset(std::size_t recordings, const SplitConfig& config) {
  if (config.train < 0.0 || config.valid < 0.0 || config.test < 0.0 ||
      std::abs(config.train + config.valid + config.test - 1.0) > 1e-9) {
    throw UsageError("split fractions must be non-negative and sum to 1");
  }
  const auto n = static_cast<double>(recordings);
  const auto n_valid = static_cast<std::size_t>(std::llround(n * config.valid));
  const auto n_test = static_cast<std::size_t>(std::llround(n * config.test));
  if (n_valid + n_test > recordings) throw UsageError("split leaves no training recordings");

  std::vector<std::size_t> order(recordings);
  for (std::size_t i = 0; i < recordings; ++i) order[i] = i;
  Rng rng(config.seed);
  rng.shuffle(std::span(order));

  DatasetSplit split;
  split.valid.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_valid));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_valid),
                    order.begin() + static_cast<std::ptrdiff_t>(n_valid + n_test));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_valid + n_test), order.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.valid.begin(), split.valid.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

// ---- training configuration -----------------------------------------------------------

namespace {

json model_json(const model::ModelConfig& m) {
  json j;
  j["seq_len"] = m.seq_len;
  j["filters"] = m.filters;
  j["hidden"] = m.hidden;
  j["attention"] = m.attention;
  j["recurrent_layers"] = m.recurrent_layers;
  j["channels"] = m.channels;
  j["freq_bins"] = m.freq_bins;
  j["frames"] = m.frames;
  j["single_vector_attention"] = m.single_vector_attention;
  j["dropout"] = m.dropout;
  j["l2"] = m.l2;
  j["lr"] = m.lr;
  j["batch_size"] = m.batch_size;
  j["train_epochs"] = m.train_epochs;
  j["validate_every"] = m.validate_every;
  j["seed"] = m.seed;
  return j;
}

TrainConfig train_config_from(const json& j) {
  check_keys(j, {"version", "model", "stft", "split"}, "train config");
  check_version(j, "train config");
  TrainConfig cfg;
  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m,
               {"seq_len", "filters", "hidden", "attention", "recurrent_layers", "channels",
                "freq_bins", "frames",
                "single_vector_attention", "dropout", "l2", "lr", "batch_size", "train_epochs",
                "validate_every", "seed"},
               "model");
    read_field(m, "seq_len", cfg.model.seq_len);
    read_field(m, "filters", cfg.model.filters);
    read_field(m, "hidden", cfg.model.hidden);
    read_field(m, "attention", cfg.model.attention);
    read_field(m, "recurrent_layers", cfg.model.recurrent_layers);
    read_field(m, "channels", cfg.model.channels);
    read_field(m, "freq_bins", cfg.model.freq_bins);
    read_field(m, "frames", cfg.model.frames);
    read_field(m, "single_vector_attention", cfg.model.single_vector_attention);
    read_field(m, "dropout", cfg.model.dropout);
    read_field(m, "l2", cfg.model.l2);
    read_field(m, "lr", cfg.model.lr);
    read_field(m, "batch_size", cfg.model.batch_size);
    read_field(m, "train_epochs", cfg.model.train_epochs);
    read_field(m, "validate_every", cfg.model.validate_every);
    read_field(m, "seed", cfg.model.seed);
  }
  if (j.contains("stft")) {
    const json& s = j.at("stft");
    check_keys(s, {"sample_rate", "win_seconds", "overlap_fraction", "nfft"}, "stft");
    read_field(s, "sample_rate", cfg.stft.sample_rate);
    read_field(s, "win_seconds", cfg.stft.win_seconds);
    read_field(s, "overlap_fraction", cfg.stft.overlap_fraction);
    read_field(s, "nfft", cfg.stft.nfft);
  }
  if (j.contains("split")) {
    const json& s = j.at("split");
    check_keys(s, {"train", "valid", "test", "seed"}, "split");
    read_field(s, "train", cfg.split.train);
    read_field(s, "valid", cfg.split.valid);
    read_field(s, "test", cfg.split.test);
    read_field(s, "seed", cfg.split.seed);
  }
  cfg.model.validate();
  return cfg;
}

json train_config_to(const TrainConfig& cfg) {
  json j;
  j["version"] = kConfigVersion;
  j["model"] = model_json(cfg.model);
  j["stft"] = {{"sample_rate", cfg.stft.sample_rate},
               {"win_seconds", cfg.stft.win_seconds},
               {"overlap_fraction", cfg.stft.overlap_fraction},
               {"nfft", cfg.stft.nfft}};
  j["split"] = {{"train", cfg.split.train},
                {"valid", cfg.split.valid},
                {"test", cfg.split.test},
                {"seed", cfg.split.seed}};
  return j;
}

}  // namespace

TrainConfig parse_train_config(std::string_view json_text) {
  return train_config_from(parse_json(json_text));
}

std::string train_config_json(const TrainConfig& config) {
  return train_config_to(config).dump(2) + "\n";
}

std::string read_text_file(const fs::path& path) { return read_binary(path); }

// ---- checkpoints -------------------------------------------------------------------

namespace {
constexpr std::string_view kCheckpointMagic = "SSNCKPT1";
constexpr int kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const fs::path& path, const model::SeqSleepNet& net,
                     const TrainConfig& config) {
  const diff::ParameterStore& store = net.params();
  json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["dtype"] = "float64";
  manifest["byte_order"] = "little";
  json params = json::array();
  for (std::size_t i = 0; i < store.size(); ++i) {
    params.push_back({{"name", store[i].name},
                      {"shape", {store[i].value.rows(), store[i].value.cols()}},
                      {"decay", store[i].decay}});
  }
  manifest["parameters"] = params;
  TrainConfig stored = config;
  stored.model = net.config();
  manifest["config"] = train_config_to(stored);

  const std::string text = manifest.dump();
  std::string bytes(kCheckpointMagic);
  put_u64(bytes, text.size());
  bytes += text;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Matrix& v = store[i].value;
    for (Eigen::Index k = 0; k < v.size(); ++k) put_f64(bytes, v.data()[k]);
  }
  write_binary(path, bytes);
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  const std::string bytes = read_binary(path);
  if (bytes.size() < kCheckpointMagic.size() ||
      bytes.compare(0, kCheckpointMagic.size(), kCheckpointMagic) != 0) {
    throw BadMagicError(path.string() + ": bad magic (not a checkpoint)");
  }
  std::size_t pos = kCheckpointMagic.size();
  if (bytes.size() < pos + 8) throw TruncatedError(path.string() + ": truncated manifest");
  const std::uint64_t len = get_u64(bytes, pos);
  pos += 8;
  if (bytes.size() - pos < len) throw TruncatedError(path.string() + ": truncated manifest");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(pos, len));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": corrupt manifest: " + e.what());
  }
  pos += len;

  if (manifest.value("format_version", 0) != kCheckpointVersion ||
      manifest.value("dtype", "") != "float64") {
    throw DataError(path.string() + ": unsupported checkpoint format");
  }
  LoadedCheckpoint out;
  try {
    out.config = train_config_from(manifest.at("config"));
  } catch (const UsageError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  out.net = std::make_unique<model::SeqSleepNet>(out.config.model);
  diff::ParameterStore& store = out.net->params();
  const json& params = manifest.at("parameters");
  if (params.size() != store.size()) {
    throw DataError(path.string() + ": " + std::to_string(params.size()) +
                    " parameters, model expects " + std::to_string(store.size()));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    const json& p = params[i];
    diff::Parameter& dst = store[i];
    const auto rows = p.at("shape")[0].get<Eigen::Index>();
    const auto cols = p.at("shape")[1].get<Eigen::Index>();
    if (p.at("name").get<std::string>() != dst.name || rows != dst.value.rows() ||
        cols != dst.value.cols()) {
      throw DataError(path.string() + ": parameter " + std::to_string(i) + " (" +
                      p.at("name").get<std::string>() + ") does not match model layout");
    }
    const auto count = static_cast<std::size_t>(rows * cols);
    if (bytes.size() - pos < count * 8) throw TruncatedError(path.string() + ": truncated payload");
    for (std::size_t k = 0; k < count; ++k) {
      const double v = get_f64(bytes, pos + 8 * k);
      if (!std::isfinite(v)) throw NumericalError(path.string() + ": non-finite parameter");
      dst.value.data()[k] = v;
    }
    pos += count * 8;
  }
  if (pos != bytes.size()) throw DataError(path.string() + ": trailing bytes after payload");
  return out;
}

}  // namespace seqsleep::harness
