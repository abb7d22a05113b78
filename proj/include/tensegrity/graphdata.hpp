#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tensegrity/geometry.hpp"

namespace tensegrity {

inline constexpr int kImuChannelsPerRod = 6;  // ax ay az wx wy wz
inline constexpr int kImuChannels = kNumRods * kImuChannelsPerRod;
inline constexpr double kNormalizationEpsilon = 1e-8;

/// c[i] = 1 iff endcap i touches the ground.
using ContactVector = std::array<std::uint8_t, kNumEndcaps>;

using ImuFrame = std::array<double, kImuChannels>;
using TendonFrame = std::array<double, kNumTendons>;

struct SensorSequence {
  double sample_rate = 100.0;
  std::vector<double> t;
  std::vector<ImuFrame> imu;
  std::vector<TendonFrame> tendon_lengths;
  std::optional<std::vector<ContactVector>> contacts;

  std::size_t size() const { return t.size(); }
  bool labeled() const { return contacts.has_value(); }

  /// Throws FormatError when channel lengths disagree or flags are not binary.
  void validate() const;

  bool operator==(const SensorSequence&) const = default;
};

/// One L-frame window. rod_features is laid out [rod][frame][channel] and
/// tendon_features [tendon][frame].
struct WindowSample {
  int history = 0;
  std::vector<double> rod_features;
  std::vector<double> tendon_features;
  ContactVector label{};
  bool labeled = false;
  std::size_t window_end_index = 0;

  double& rod(int rod, int frame, int channel) {
    return rod_features[(static_cast<std::size_t>(rod) * history + frame) * kImuChannelsPerRod + channel];
  }
  double rod(int rod, int frame, int channel) const {
    return rod_features[(static_cast<std::size_t>(rod) * history + frame) * kImuChannelsPerRod + channel];
  }
  double& tendon(int tendon, int frame) { return tendon_features[static_cast<std::size_t>(tendon) * history + frame]; }
  double tendon(int tendon, int frame) const {
    return tendon_features[static_cast<std::size_t>(tendon) * history + frame];
  }

  bool operator==(const WindowSample&) const = default;
};

/// Raw (unnormalized) window whose last frame is `end_index`.
WindowSample extract_window(const SensorSequence& seq, std::size_t end_index, int history);

/// Windows [k*stride, k*stride + L) for k = 0 .. floor((T-L)/stride).
/// Throws SequenceTooShort when T < L.
std::vector<WindowSample> slide_windows(const SensorSequence& seq, int history, int stride = 1);

/// Number of windows slide_windows would emit.
std::size_t window_count(std::size_t length, int history, int stride);

/// Per-channel z-score within the window, population std, epsilon 1e-8.
WindowSample normalize_window(const WindowSample& sample);

enum class GroupActionMode {
  index_only,  // pure node-index permutation
  physical,    // also maps rod IMU axes when the element reverses the rods
};

const char* to_string(GroupActionMode mode) noexcept;
GroupActionMode parse_group_mode(const std::string& text);

/// Relabels a sample by g: block i moves to slot perm(g)[i]. In physical mode,
/// elements that reverse the rods also negate the y and z IMU channels, which
/// is how the rod-mounted IMU frames transform under the half-turn.
WindowSample apply_group_to_sample(const GroupElement& g, const WindowSample& sample,
                                   GroupActionMode mode = GroupActionMode::index_only);

ContactVector apply_group_to_contacts(const GroupElement& g, const ContactVector& c);

enum class EdgeType { rod_to_endcap = 0, endcap_to_rod = 1, tendon_to_endcap = 2, endcap_to_tendon = 3 };
inline constexpr int kNumEdgeTypes = 4;

const char* to_string(EdgeType type) noexcept;

/// Typed directed edges as (source, destination) local node indices.
struct HeteroGraph {
  int num_rods = kNumRods;
  int num_tendons = kNumTendons;
  int num_endcaps = kNumEndcaps;
  std::array<std::vector<EdgePair>, kNumEdgeTypes> edges;

  const std::vector<EdgePair>& edges_of(EdgeType type) const { return edges[static_cast<int>(type)]; }
  std::vector<EdgePair>& edges_of(EdgeType type) { return edges[static_cast<int>(type)]; }
  std::size_t total_edges() const;

  static Eigen::Vector4d edge_type_feature(EdgeType type);
};

HeteroGraph assemble_graph(const TensegrityTopology& topology);

/// Dataset CSV: `t, ax0..wz2, l0..l8[, c0..c5]`.
SensorSequence read_dataset(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path, const SensorSequence& seq);

/// Per-timestep contact predictions: `c0..c5[,warmup]`.
struct ContactStream {
  std::vector<ContactVector> contacts;
  std::vector<std::uint8_t> warmup;  // empty when the file has no warmup column
};

ContactStream read_contact_stream(const std::filesystem::path& path);
void write_contact_stream(const std::filesystem::path& path, const ContactStream& stream);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

/// Lazily materialized windows over a set of labeled sequences.
class WindowDataset {
 public:
  struct Entry {
    std::size_t sequence = 0;
    std::size_t end_index = 0;
  };

  WindowDataset() = default;
  WindowDataset(std::vector<std::shared_ptr<const SensorSequence>> sequences, int history, int stride = 1);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  int history() const { return history_; }

  /// Normalized window i.
  WindowSample sample(std::size_t i) const;
  ContactVector label(std::size_t i) const;

  const std::vector<Entry>& entries() const { return entries_; }
  const std::vector<std::shared_ptr<const SensorSequence>>& sequences() const { return sequences_; }

  /// Subset by entry indices (sequences are shared, not copied).
  WindowDataset subset(std::span<const std::size_t> indices) const;

 private:
  std::vector<std::shared_ptr<const SensorSequence>> sequences_;
  std::vector<Entry> entries_;
  int history_ = 0;
};

}  // namespace tensegrity
