#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "tensegrity/geometry.hpp"
#include "tensegrity/graphdata.hpp"
#include "tensegrity/hgnn.hpp"

namespace tensegrity {

struct TrainConfig {
  double learning_rate = 3e-4;
  int batch_size = 256;
  int epochs = 30;
  int layers = 8;
  int hidden = 128;
  int history = 100;
  int stride = 1;
  std::uint64_t seed = 0;
  bool symmetry_enabled = true;
  GroupActionMode group_mode = GroupActionMode::index_only;
  bool augment_group = false;

  // Adam
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;

  HgnnHyper hyper() const { return {layers, hidden, history}; }

  /// Throws ConfigInvalid on non-positive values or an unsupported history.
  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EndcapCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  bool operator==(const EndcapCounts&) const = default;
};

struct Metrics {
  std::size_t windows = 0;
  double exact_match_accuracy = 0.0;
  double macro_f1 = 0.0;
  std::array<double, kNumEndcaps> precision{};
  std::array<double, kNumEndcaps> recall{};
  std::array<double, kNumEndcaps> f1{};
  std::array<EndcapCounts, kNumEndcaps> confusion{};

  bool operator==(const Metrics&) const = default;
};

/// Exact-match accuracy over all 6 flags and macro-F1 over endcaps for the
/// contact-positive class. P, R, F1 are 0 when their denominators are 0.
Metrics compute_metrics(std::span<const ContactVector> predictions, std::span<const ContactVector> labels);

/// Predictions for every window of `dataset`, batched, without graph recording.
template <typename T>
std::vector<ContactVector> predict_dataset(const ModelParams<T>& params, const WindowDataset& dataset,
                                           bool symmetry_enabled, GroupActionMode mode, int batch_size = 256);

template <typename T>
Metrics evaluate(const ModelParams<T>& params, const WindowDataset& dataset, bool symmetry_enabled,
                 GroupActionMode mode = GroupActionMode::index_only, int batch_size = 256);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double val_macro_f1 = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  ModelParams<float> params;  // best validation macro-F1 (last epoch when no validation set)
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

/// Called after every epoch; returning false ends training early.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Adam on mean BCE-with-logits over shuffled mini-batches, single precision.
/// Deterministic for a given config and data. Throws EmptyDataset or
/// ShapeMismatch when the data's window length differs from config.history.
TrainResult train(const WindowDataset& train_set, const WindowDataset& val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Same training loop, starting from given parameters (used by tests).
TrainResult train_from(ModelParams<float> initial, const WindowDataset& train_set, const WindowDataset& val_set,
                       const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Mean BCE of one batch; exposed for gradient checks.
template <typename T>
autodiff::Tensor<T> batch_loss(std::span<const WindowSample> samples, const HeteroGraph& graph,
                               const ModelParams<T>& params, std::span<const GroupElement> group,
                               bool symmetry_enabled, GroupActionMode mode);

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  ModelParams<T> params;
  TrainConfig config;
};

/// Self-describing binary: magic, version, JSON header (hyperparameters,
/// group mode, config, array table), raw little-endian payload.
template <typename T>
void save_checkpoint(const ModelParams<T>& params, const TrainConfig& config, const std::filesystem::path& path);

/// Throws VersionMismatch, IoError, or CorruptCheckpoint.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

/// SplitMix64 finalizer; derives independent child seeds from one seed.
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace tensegrity
