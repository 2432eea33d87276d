#pragma once

// Dataset container, synthetic corpus generator, JSON configuration and
// checkpoints.

#include "seqsleep/common.hpp"
#include "seqsleep/model.hpp"
#include "seqsleep/tfr.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace seqsleep::harness {

// Distinct failure modes of the binary formats.
class BadMagicError : public DataError {
 public:
  using DataError::DataError;
};
class TruncatedError : public DataError {
 public:
  using DataError::DataError;
};
class LabelRangeError : public DataError {
 public:
  using DataError::DataError;
};

// ---- recordings ------------------------------------------------------------------

// A multichannel recording of fixed-length epochs.
//
// On disk (all little-endian):
//   "SSR1" | u32 version | u32 channels | f64 sample_rate |
//   u32 samples_per_epoch | u32 epoch_count | f32 samples [epoch][channel][sample]
// Labels live in a sidecar with extension ".lbl": one byte per epoch, 0..4.
struct Recording {
  std::uint32_t channels = 0;
  double sample_rate = 100.0;
  std::uint32_t samples_per_epoch = 0;
  std::vector<float> samples;
  std::vector<Stage> labels;  // empty when no sidecar exists

  std::size_t epoch_count() const;
  tfr::EpochSignal epoch(std::size_t index) const;
};

inline constexpr std::uint32_t kRecordingVersion = 1;

std::filesystem::path label_path(const std::filesystem::path& recording);
void write_recording(const std::filesystem::path& path, const Recording& rec);
// Reads the sidecar too when present.
Recording read_recording(const std::filesystem::path& path);

std::vector<tfr::TimeFrequencyImage> recording_images(const Recording& rec,
                                                      const tfr::StftConfig& stft);

// ---- synthetic corpus ---------------------------------------------------------------

// Band-limited spectral peak: `power` is the variance it contributes.
struct Peak {
  double center_hz = 0.0;
  double bandwidth_hz = 0.0;
  double power = 0.0;
};

struct SyntheticConfig {
  std::size_t recordings = 20;
  std::size_t epochs = 120;  // per recording
  std::size_t channels = 3;  // EEG, EOG, EMG
  double sample_rate = 100.0;
  double epoch_seconds = 30.0;
  double noise_power = 0.005;  // white-noise variance per sample
  // Sinusoids drawn inside each peak's band per epoch.
  std::size_t components_per_peak = 4;
  // Per-epoch log-normal jitter (std of the log amplitude) applied per peak.
  double amplitude_jitter = 0.5;
  Stage initial_stage = Stage::W;
  std::array<std::array<double, kNumStages>, kNumStages> transitions{};
  // profiles[stage][channel] = peaks of that stage on that channel.
  std::array<std::vector<std::vector<Peak>>, kNumStages> profiles;
  std::uint64_t seed = 2024;

  void validate() const;
};

SyntheticConfig default_synthetic_config();
SyntheticConfig parse_synthetic_config(std::string_view json_text);
std::string synthetic_config_json(const SyntheticConfig& config);

// Recording `index` of the corpus; each index draws from its own stream.
Recording generate_synthetic(const SyntheticConfig& config, std::size_t index);
std::vector<Stage> sample_stage_chain(const SyntheticConfig& config, std::size_t epochs, Rng& rng);

// ---- dataset directories ------------------------------------------------------------

struct NamedRecording {
  std::string name;
  Recording recording;
};

// rec_000.ssr/.lbl, rec_001.ssr/.lbl, ...
void save_dataset(const std::filesystem::path& dir, const std::vector<Recording>& recordings);
// Every *.ssr file in name order.
std::vector<NamedRecording> load_dataset(const std::filesystem::path& dir);

struct SplitConfig {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
  std::uint64_t seed = 7;
};

struct DatasetSplit {
  std::vector<std::size_t> train, valid, test;  // recording indices, ascending
};

// Whole recordings are assigned to exactly one part. Valid and test counts are
// round(n * fraction); train takes the rest.
DatasetSplit split_dataset(std::size_t recordings, const SplitConfig& config);

// ---- training configuration -----------------------------------------------------------

struct TrainConfig {
  model::ModelConfig model;
  tfr::StftConfig stft;
  SplitConfig split;
};

inline constexpr int kConfigVersion = 1;

TrainConfig parse_train_config(std::string_view json_text);
std::string train_config_json(const TrainConfig& config);
std::string read_text_file(const std::filesystem::path& path);

// ---- checkpoints -------------------------------------------------------------------

// "SSNCKPT1" | u64 manifest length | manifest JSON | f64 blobs in manifest order.
// The manifest lists every parameter's name and shape, the dtype, the format
// version and the full training configuration.
void save_checkpoint(const std::filesystem::path& path, const model::SeqSleepNet& net,
                     const TrainConfig& config);

struct LoadedCheckpoint {
  TrainConfig config;
  std::unique_ptr<model::SeqSleepNet> net;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace seqsleep::harness
