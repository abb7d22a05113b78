#include "tensegrity/graphdata.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tensegrity/errors.hpp"

namespace tensegrity {

namespace {

constexpr const char* kImuColumns =
    "ax0,ay0,az0,wx0,wy0,wz0,ax1,ay1,az1,wx1,wy1,wz1,ax2,ay2,az2,wx2,wy2,wz2";
constexpr const char* kTendonColumns = "l0,l1,l2,l3,l4,l5,l6,l7,l8";
constexpr const char* kContactColumns = "c0,c1,c2,c3,c4,c5";

std::string labeled_header() {
  return std::string("t,") + kImuColumns + "," + kTendonColumns + "," + kContactColumns;
}
std::string unlabeled_header() { return std::string("t,") + kImuColumns + "," + kTendonColumns; }

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

double parse_double(std::string_view text, std::size_t line_no) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw FormatError("line " + std::to_string(line_no) + ": cannot parse number '" + std::string(text) + "'");
  }
  return value;
}

std::uint8_t parse_flag(std::string_view text, std::size_t line_no) {
  if (text == "0") return 0;
  if (text == "1") return 1;
  throw FormatError("line " + std::to_string(line_no) + ": contact flag must be 0 or 1, got '" + std::string(text) +
                    "'");
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(std::move(line));
  }
  if (in.bad()) throw IoError("read failed for " + path.string());
  return lines;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void normalize_block(std::span<double> values, std::size_t stride, std::size_t count) {
  double mean = 0.0;
  for (std::size_t k = 0; k < count; ++k) mean += values[k * stride];
  mean /= static_cast<double>(count);
  double var = 0.0;
  for (std::size_t k = 0; k < count; ++k) {
    const double d = values[k * stride] - mean;
    var += d * d;
  }
  var /= static_cast<double>(count);
  const double denom = std::sqrt(var) + kNormalizationEpsilon;
  for (std::size_t k = 0; k < count; ++k) values[k * stride] = (values[k * stride] - mean) / denom;
}

}  // namespace

void SensorSequence::validate() const {
  const std::size_t n = t.size();
  if (imu.size() != n || tendon_lengths.size() != n || (contacts && contacts->size() != n)) {
    throw FormatError("sensor channels have different lengths");
  }
  if (contacts) {
    for (const auto& c : *contacts) {
      for (auto flag : c) {
        if (flag > 1) throw FormatError("contact flag is not binary");
      }
    }
  }
}

std::size_t window_count(std::size_t length, int history, int stride) {
  if (history <= 0 || stride <= 0 || length < static_cast<std::size_t>(history)) return 0;
  return (length - history) / stride + 1;
}

WindowSample extract_window(const SensorSequence& seq, std::size_t end_index, int history) {
  if (history <= 0) throw ConfigInvalid("history length must be positive");
  if (end_index >= seq.size() || end_index + 1 < static_cast<std::size_t>(history)) {
    throw SequenceTooShort("window ending at " + std::to_string(end_index) + " with L=" + std::to_string(history) +
                           " does not fit a sequence of length " + std::to_string(seq.size()));
  }
  WindowSample s;
  s.history = history;
  s.window_end_index = end_index;
  s.rod_features.resize(static_cast<std::size_t>(kNumRods) * history * kImuChannelsPerRod);
  s.tendon_features.resize(static_cast<std::size_t>(kNumTendons) * history);
  const std::size_t start = end_index + 1 - history;
  for (int f = 0; f < history; ++f) {
    const auto& imu = seq.imu[start + f];
    const auto& len = seq.tendon_lengths[start + f];
    for (int r = 0; r < kNumRods; ++r) {
      for (int c = 0; c < kImuChannelsPerRod; ++c) s.rod(r, f, c) = imu[r * kImuChannelsPerRod + c];
    }
    for (int k = 0; k < kNumTendons; ++k) s.tendon(k, f) = len[k];
  }
  if (seq.contacts) {
    s.label = (*seq.contacts)[end_index];
    s.labeled = true;
  }
  return s;
}

std::vector<WindowSample> slide_windows(const SensorSequence& seq, int history, int stride) {
  if (stride <= 0) throw ConfigInvalid("stride must be positive");
  if (history <= 0) throw ConfigInvalid("history length must be positive");
  if (seq.size() < static_cast<std::size_t>(history)) {
    throw SequenceTooShort("sequence length " + std::to_string(seq.size()) + " < window length " +
                           std::to_string(history));
  }
  const std::size_t count = window_count(seq.size(), history, stride);
  std::vector<WindowSample> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) out.push_back(extract_window(seq, k * stride + history - 1, history));
  return out;
}

WindowSample normalize_window(const WindowSample& sample) {
  WindowSample out = sample;
  const std::size_t L = static_cast<std::size_t>(sample.history);
  for (int r = 0; r < kNumRods; ++r) {
    for (int c = 0; c < kImuChannelsPerRod; ++c) {
      std::span<double> block(out.rod_features.data() + r * L * kImuChannelsPerRod + c,
                              (L - 1) * kImuChannelsPerRod + 1);
      normalize_block(block, kImuChannelsPerRod, L);
    }
  }
  for (int k = 0; k < kNumTendons; ++k) normalize_block(std::span<double>(out.tendon_features.data() + k * L, L), 1, L);
  return out;
}

const char* to_string(GroupActionMode mode) noexcept {
  return mode == GroupActionMode::index_only ? "index-only" : "physical";
}

GroupActionMode parse_group_mode(const std::string& text) {
  if (text == "index-only") return GroupActionMode::index_only;
  if (text == "physical") return GroupActionMode::physical;
  throw ConfigInvalid("unknown group mode '" + text + "' (expected index-only or physical)");
}

WindowSample apply_group_to_sample(const GroupElement& g, const WindowSample& sample, GroupActionMode mode) {
  WindowSample out = sample;
  const std::size_t L = static_cast<std::size_t>(sample.history);
  const std::size_t rod_block = L * kImuChannelsPerRod;
  const bool flip = mode == GroupActionMode::physical && g.reverses_rods;
  for (int r = 0; r < kNumRods; ++r) {
    const double* src = sample.rod_features.data() + r * rod_block;
    double* dst = out.rod_features.data() + g.rod_perm[r] * rod_block;
    std::copy(src, src + rod_block, dst);
    if (flip) {
      for (std::size_t f = 0; f < L; ++f) {
        double* frame = dst + f * kImuChannelsPerRod;
        frame[1] = -frame[1];
        frame[2] = -frame[2];
        frame[4] = -frame[4];
        frame[5] = -frame[5];
      }
    }
  }
  for (int k = 0; k < kNumTendons; ++k) {
    const double* src = sample.tendon_features.data() + k * L;
    std::copy(src, src + L, out.tendon_features.data() + g.tendon_perm[k] * L);
  }
  out.label = apply_group_to_contacts(g, sample.label);
  return out;
}

ContactVector apply_group_to_contacts(const GroupElement& g, const ContactVector& c) {
  ContactVector out{};
  for (int i = 0; i < kNumEndcaps; ++i) out[g.endcap_perm[i]] = c[i];
  return out;
}

const char* to_string(EdgeType type) noexcept {
  switch (type) {
    case EdgeType::rod_to_endcap: return "rod->endcap";
    case EdgeType::endcap_to_rod: return "endcap->rod";
    case EdgeType::tendon_to_endcap: return "tendon->endcap";
    case EdgeType::endcap_to_tendon: return "endcap->tendon";
  }
  return "?";
}

std::size_t HeteroGraph::total_edges() const {
  std::size_t n = 0;
  for (const auto& e : edges) n += e.size();
  return n;
}

Eigen::Vector4d HeteroGraph::edge_type_feature(EdgeType type) {
  Eigen::Vector4d v = Eigen::Vector4d::Zero();
  v[static_cast<int>(type)] = 1.0;
  return v;
}

HeteroGraph assemble_graph(const TensegrityTopology& topology) {
  HeteroGraph g;
  for (int r = 0; r < kNumRods; ++r) {
    for (int endcap : {topology.rods[r].first, topology.rods[r].second}) {
      g.edges_of(EdgeType::rod_to_endcap).push_back({r, endcap});
      g.edges_of(EdgeType::endcap_to_rod).push_back({endcap, r});
    }
  }
  for (int t = 0; t < kNumTendons; ++t) {
    for (int endcap : {topology.tendons[t].first, topology.tendons[t].second}) {
      g.edges_of(EdgeType::tendon_to_endcap).push_back({t, endcap});
      g.edges_of(EdgeType::endcap_to_tendon).push_back({endcap, t});
    }
  }
  return g;
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw FormatError("cannot format number");
  return std::string(buf, ptr);
}

SensorSequence read_dataset(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw FormatError(path.string() + ": empty file");
  bool labeled = false;
  if (lines[0] == labeled_header()) {
    labeled = true;
  } else if (lines[0] != unlabeled_header()) {
    throw FormatError(path.string() + ": unexpected header");
  }
  const std::size_t columns = labeled ? 34 : 28;

  SensorSequence seq;
  const std::size_t n = lines.size() - 1;
  seq.t.reserve(n);
  seq.imu.reserve(n);
  seq.tendon_lengths.reserve(n);
  if (labeled) seq.contacts.emplace().reserve(n);
  for (std::size_t row = 1; row < lines.size(); ++row) {
    const auto fields = split(lines[row]);
    if (fields.size() != columns) {
      throw FormatError(path.string() + " line " + std::to_string(row + 1) + ": expected " +
                        std::to_string(columns) + " columns, got " + std::to_string(fields.size()));
    }
    seq.t.push_back(parse_double(fields[0], row + 1));
    ImuFrame imu{};
    for (int c = 0; c < kImuChannels; ++c) imu[c] = parse_double(fields[1 + c], row + 1);
    seq.imu.push_back(imu);
    TendonFrame len{};
    for (int k = 0; k < kNumTendons; ++k) len[k] = parse_double(fields[1 + kImuChannels + k], row + 1);
    seq.tendon_lengths.push_back(len);
    if (labeled) {
      ContactVector c{};
      for (int i = 0; i < kNumEndcaps; ++i) c[i] = parse_flag(fields[1 + kImuChannels + kNumTendons + i], row + 1);
      seq.contacts->push_back(c);
    }
  }
  if (seq.t.size() >= 2 && seq.t.back() > seq.t.front()) {
    const double rate = static_cast<double>(seq.t.size() - 1) / (seq.t.back() - seq.t.front());
    seq.sample_rate = std::round(rate * 1e6) / 1e6;
  }
  return seq;
}

void write_dataset(const std::filesystem::path& path, const SensorSequence& seq) {
  seq.validate();
  auto out = open_for_write(path);
  out << (seq.contacts ? labeled_header() : unlabeled_header()) << '\n';
  std::string line;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    line = format_double(seq.t[i]);
    for (double v : seq.imu[i]) (line += ',') += format_double(v);
    for (double v : seq.tendon_lengths[i]) (line += ',') += format_double(v);
    if (seq.contacts) {
      for (auto c : (*seq.contacts)[i]) (line += ',') += static_cast<char>('0' + c);
    }
    out << line << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

ContactStream read_contact_stream(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw FormatError(path.string() + ": empty file");
  const std::string base = kContactColumns;
  bool has_warmup = false;
  if (lines[0] == base + ",warmup") {
    has_warmup = true;
  } else if (lines[0] != base) {
    throw FormatError(path.string() + ": unexpected header");
  }
  ContactStream stream;
  for (std::size_t row = 1; row < lines.size(); ++row) {
    const auto fields = split(lines[row]);
    if (fields.size() != (has_warmup ? 7u : 6u)) {
      throw FormatError(path.string() + " line " + std::to_string(row + 1) + ": wrong column count");
    }
    ContactVector c{};
    for (int i = 0; i < kNumEndcaps; ++i) c[i] = parse_flag(fields[i], row + 1);
    stream.contacts.push_back(c);
    if (has_warmup) stream.warmup.push_back(parse_flag(fields[6], row + 1));
  }
  return stream;
}

void write_contact_stream(const std::filesystem::path& path, const ContactStream& stream) {
  const bool has_warmup = !stream.warmup.empty();
  if (has_warmup && stream.warmup.size() != stream.contacts.size()) {
    throw LengthMismatch("warmup column length differs from contact rows");
  }
  auto out = open_for_write(path);
  out << kContactColumns << (has_warmup ? ",warmup" : "") << '\n';
  for (std::size_t i = 0; i < stream.contacts.size(); ++i) {
    const auto& c = stream.contacts[i];
    for (int k = 0; k < kNumEndcaps; ++k) out << (k ? "," : "") << static_cast<int>(c[k]);
    if (has_warmup) out << ',' << static_cast<int>(stream.warmup[i]);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

WindowDataset::WindowDataset(std::vector<std::shared_ptr<const SensorSequence>> sequences, int history, int stride)
    : sequences_(std::move(sequences)), history_(history) {
  if (history <= 0) throw ConfigInvalid("history length must be positive");
  if (stride <= 0) throw ConfigInvalid("stride must be positive");
  for (std::size_t s = 0; s < sequences_.size(); ++s) {
    const auto& seq = *sequences_[s];
    const std::size_t count = window_count(seq.size(), history, stride);
    for (std::size_t k = 0; k < count; ++k) entries_.push_back({s, k * stride + history - 1});
  }
}

WindowSample WindowDataset::sample(std::size_t i) const {
  const auto& e = entries_.at(i);
  return normalize_window(extract_window(*sequences_[e.sequence], e.end_index, history_));
}

ContactVector WindowDataset::label(std::size_t i) const {
  const auto& e = entries_.at(i);
  const auto& seq = *sequences_[e.sequence];
  if (!seq.labeled()) throw FormatError("window " + std::to_string(i) + " comes from an unlabeled sequence");
  return (*seq.contacts)[e.end_index];
}

WindowDataset WindowDataset::subset(std::span<const std::size_t> indices) const {
  WindowDataset out;
  out.sequences_ = sequences_;
  out.history_ = history_;
  out.entries_.reserve(indices.size());
  for (auto i : indices) out.entries_.push_back(entries_.at(i));
  return out;
}

}  // namespace tensegrity
