#include "tensegrity/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tensegrity/errors.hpp"

namespace tensegrity {

std::vector<SimConfig> primitive_suite(const SimConfig& base) {
  std::vector<SimConfig> out;
  for (std::size_t i = 0; i < kAllPrimitives.size(); ++i) {
    SimConfig c = base;
    c.primitive = kAllPrimitives[i];
    c.seed = split_seed(base.seed, 100 + i);
    out.push_back(c);
  }
  return out;
}

std::vector<SimConfig> ratio_suite(const SimConfig& base) {
  std::vector<SimConfig> out;
  std::uint64_t stream = 200;
  for (double ratio : kTurningRatios) {
    for (Primitive p : {Primitive::FL, Primitive::FR, Primitive::BL, Primitive::BR}) {
      SimConfig c = base;
      c.primitive = p;
      c.turning_ratio = ratio;
      c.seed = split_seed(base.seed, stream++);
      out.push_back(c);
    }
  }
  return out;
}

std::string suite_file_name(const SimConfig& config) {
  return std::string(to_string(config.primitive)) + "_r" + format_double(config.turning_ratio) + ".csv";
}

SensorSequence slice(const SensorSequence& seq, std::size_t begin, std::size_t end) {
  if (begin > end || end > seq.size()) throw LengthMismatch("slice range exceeds the sequence");
  SensorSequence out;
  out.sample_rate = seq.sample_rate;
  out.t.assign(seq.t.begin() + begin, seq.t.begin() + end);
  out.imu.assign(seq.imu.begin() + begin, seq.imu.begin() + end);
  out.tendon_lengths.assign(seq.tendon_lengths.begin() + begin, seq.tendon_lengths.begin() + end);
  if (seq.contacts) out.contacts.emplace(seq.contacts->begin() + begin, seq.contacts->begin() + end);
  return out;
}

WindowDataset make_dataset(const std::vector<SensorSequence>& sequences, int history, int stride) {
  std::vector<std::shared_ptr<const SensorSequence>> ptrs;
  for (const auto& s : sequences) ptrs.push_back(std::make_shared<const SensorSequence>(s));
  return WindowDataset(std::move(ptrs), history, stride);
}

SplitDatasets chronological_split(const std::vector<SensorSequence>& sequences, double validation_fraction,
                                  int history, int train_stride, int validation_stride) {
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigInvalid("validation fraction must lie in [0, 1)");
  }
  std::vector<SensorSequence> train, val;
  for (const auto& s : sequences) {
    const auto cut = static_cast<std::size_t>(static_cast<double>(s.size()) * (1.0 - validation_fraction));
    train.push_back(slice(s, 0, cut));
    if (s.size() - cut >= static_cast<std::size_t>(history)) val.push_back(slice(s, cut, s.size()));
  }
  SplitDatasets out;
  out.train = make_dataset(train, history, train_stride);
  if (!val.empty()) out.validation = make_dataset(val, history, validation_stride);
  return out;
}

ContactStream predict_stream(const ModelParams<float>& params, const TrainConfig& config, const SensorSequence& seq,
                             int batch_size) {
  const int L = params.hyper.history;
  if (seq.size() < static_cast<std::size_t>(L)) {
    throw SequenceTooShort("sequence has " + std::to_string(seq.size()) + " rows, window length is " +
                           std::to_string(L));
  }
  SensorSequence unlabeled = seq;
  unlabeled.contacts.reset();
  const WindowDataset ds({std::make_shared<const SensorSequence>(std::move(unlabeled))}, L, 1);
  const auto preds = predict_dataset(params, ds, config.symmetry_enabled, config.group_mode, batch_size);
  ContactStream out;
  out.contacts.assign(L - 1, ContactVector{});
  out.warmup.assign(seq.size(), 0);
  std::fill(out.warmup.begin(), out.warmup.begin() + (L - 1), 1);
  out.contacts.insert(out.contacts.end(), preds.begin(), preds.end());
  return out;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string scalar_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_float()) return format_double(v.get<double>());
  if (v.is_array()) {
    std::string out;
    for (const auto& e : v) out += (out.empty() ? "" : " ") + scalar_text(e);
    return out;
  }
  return v.dump();
}

}  // namespace

std::map<std::string, std::string> read_overrides(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file '" + path.string() + "'");
  std::stringstream buf;
  buf << is.rdbuf();
  const std::string text = buf.str();
  std::map<std::string, std::string> out;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigInvalid(path.string() + ": " + e.what());
    }
    if (!j.contains("config") || !j["config"].is_object()) {
      throw ConfigInvalid(path.string() + ": manifest has no \"config\" object");
    }
    for (const auto& [k, v] : j["config"].items()) {
      if (!v.is_null()) out[k] = scalar_text(v);
    }
    return out;
  }
  std::istringstream lines(text);
  std::string line;
  int row = 0;
  while (std::getline(lines, line)) {
    ++row;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigInvalid(path.string() + ":" + std::to_string(row) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    if (key.empty()) throw ConfigInvalid(path.string() + ":" + std::to_string(row) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

}  // namespace tensegrity
