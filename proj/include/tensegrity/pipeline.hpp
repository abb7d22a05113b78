#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tensegrity/graphdata.hpp"
#include "tensegrity/hgnn.hpp"
#include "tensegrity/simkit.hpp"
#include "tensegrity/training.hpp"

namespace tensegrity {

inline constexpr const char* kToolkitVersion = "0.1.0";

inline constexpr std::array<double, 5> kTurningRatios{1.0, 0.8, 0.6, 0.4, 0.2};

/// All six primitives; per-run seeds derived from base.seed.
std::vector<SimConfig> primitive_suite(const SimConfig& base);
/// FL, FR, BL, BR at each turning ratio.
std::vector<SimConfig> ratio_suite(const SimConfig& base);
/// e.g. "FR_r0.2.csv"
std::string suite_file_name(const SimConfig& config);

/// Rows [begin, end) of a sequence.
SensorSequence slice(const SensorSequence& seq, std::size_t begin, std::size_t end);

struct SplitDatasets {
  WindowDataset train;
  WindowDataset validation;
};

/// The first (1 - fraction) of every sequence trains, the rest validates, so
/// no window straddles the boundary.
SplitDatasets chronological_split(const std::vector<SensorSequence>& sequences, double validation_fraction,
                                  int history, int train_stride, int validation_stride);

WindowDataset make_dataset(const std::vector<SensorSequence>& sequences, int history, int stride);

/// One row per input row; the first history-1 rows are zero and flagged as
/// warmup. Throws SequenceTooShort.
ContactStream predict_stream(const ModelParams<float>& params, const TrainConfig& config, const SensorSequence& seq,
                             int batch_size = 256);

/// key=value lines ('#' comments) or a JSON run manifest whose "config"
/// object supplies the pairs. Throws IoError, ConfigInvalid.
std::map<std::string, std::string> read_overrides(const std::filesystem::path& path);

}  // namespace tensegrity
