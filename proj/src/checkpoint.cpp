#include <bit>
#include <cstring>
#include <fstream>
#include <type_traits>

#include "tensegrity/errors.hpp"
#include "tensegrity/training.hpp"

namespace tensegrity {

namespace {

constexpr char kMagic[8] = {'T', 'S', 'G', 'H', 'G', 'N', 'N', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

template <typename T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "float32" : "float64";
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_pod(std::istream& in, T& v) {
  return static_cast<bool>(in.read(reinterpret_cast<char*>(&v), sizeof(T)));
}

template <typename Dst, typename Src>
void copy_payload(const char* bytes, std::size_t count, Dst* dst) {
  for (std::size_t i = 0; i < count; ++i) {
    Src v;
    std::memcpy(&v, bytes + i * sizeof(Src), sizeof(Src));
    dst[i] = static_cast<Dst>(v);
  }
}

}  // namespace

template <typename T>
void save_checkpoint(const ModelParams<T>& params, const TrainConfig& config, const std::filesystem::path& path) {
  const auto named = params.named_parameters();
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["hyper"] = {{"layers", params.hyper.layers}, {"hidden", params.hyper.hidden}, {"history", params.hyper.history}};
  header["group_mode"] = to_string(config.group_mode);
  header["dtype"] = dtype_name<T>();
  header["config"] = config;
  nlohmann::json arrays = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : named) {
    arrays.push_back({{"name", name}, {"shape", tensor.shape()}, {"offset", offset}, {"count", tensor.size()}});
    offset += static_cast<std::uint64_t>(tensor.size()) * sizeof(T);
  }
  header["arrays"] = arrays;
  header["payload_bytes"] = offset;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kCheckpointVersion);
  write_pod(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, tensor] : named) {
    out.write(reinterpret_cast<const char*>(tensor.value().data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(T)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CorruptCheckpoint(path.string() + ": not a model checkpoint");
  }
  std::uint32_t version = 0;
  std::uint64_t header_size = 0;
  if (!read_pod(in, version)) throw CorruptCheckpoint(path.string() + ": truncated preamble");
  if (version != kCheckpointVersion) {
    throw VersionMismatch(path.string() + ": format version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  if (!read_pod(in, header_size) || header_size > (1u << 26)) {
    throw CorruptCheckpoint(path.string() + ": bad header length");
  }
  std::string text(header_size, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_size))) {
    throw CorruptCheckpoint(path.string() + ": truncated header");
  }
  nlohmann::json header;
  Checkpoint<T> ckpt;
  std::string dtype;
  std::uint64_t payload_bytes = 0;
  try {
    header = nlohmann::json::parse(text);
    if (header.at("format_version").get<std::uint32_t>() != kCheckpointVersion) {
      throw VersionMismatch(path.string() + ": header format version mismatch");
    }
    ckpt.config = header.at("config").get<TrainConfig>();
    ckpt.config.group_mode = parse_group_mode(header.at("group_mode").get<std::string>());
    dtype = header.at("dtype").get<std::string>();
    payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& err) {
    throw CorruptCheckpoint(path.string() + ": malformed header (" + err.what() + ")");
  }
  if (dtype != "float32" && dtype != "float64") throw CorruptCheckpoint(path.string() + ": unknown dtype " + dtype);
  const std::size_t elem = dtype == "float32" ? sizeof(float) : sizeof(double);

  std::string payload(payload_bytes, '\0');
  if (!in.read(payload.data(), static_cast<std::streamsize>(payload_bytes))) {
    throw CorruptCheckpoint(path.string() + ": truncated payload");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptCheckpoint(path.string() + ": trailing bytes");

  HgnnHyper hyper;
  try {
    hyper.layers = header.at("hyper").at("layers").get<int>();
    hyper.hidden = header.at("hyper").at("hidden").get<int>();
    hyper.history = header.at("hyper").at("history").get<int>();
  } catch (const nlohmann::json::exception& err) {
    throw CorruptCheckpoint(path.string() + ": malformed hyperparameters");
  }
  if (hyper.layers < 1 || hyper.hidden < 1 || hyper.history < 1 || hyper.layers > 1024 || hyper.hidden > 65536 ||
      hyper.history > 65536) {
    throw CorruptCheckpoint(path.string() + ": implausible hyperparameters");
  }
  ckpt.params = ModelParams<T>::initialize(hyper, 0);
  auto named = ckpt.params.named_parameters();
  const auto& arrays = header.at("arrays");
  if (!arrays.is_array() || arrays.size() != named.size()) {
    throw CorruptCheckpoint(path.string() + ": array table does not match the architecture");
  }
  for (std::size_t k = 0; k < named.size(); ++k) {
    auto& [name, tensor] = named[k];
    const auto& entry = arrays[k];
    try {
      if (entry.at("name").get<std::string>() != name ||
          entry.at("shape").get<autodiff::Shape>() != tensor.shape() ||
          entry.at("count").get<std::int64_t>() != tensor.size()) {
        throw CorruptCheckpoint(path.string() + ": array " + name + " has unexpected name or shape");
      }
      const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
      const std::uint64_t bytes = static_cast<std::uint64_t>(tensor.size()) * elem;
      if (offset + bytes > payload.size()) throw CorruptCheckpoint(path.string() + ": array " + name + " overruns payload");
      T* dst = tensor.mutable_value().data();
      if (elem == sizeof(float)) {
        copy_payload<T, float>(payload.data() + offset, static_cast<std::size_t>(tensor.size()), dst);
      } else {
        copy_payload<T, double>(payload.data() + offset, static_cast<std::size_t>(tensor.size()), dst);
      }
    } catch (const nlohmann::json::exception&) {
      throw CorruptCheckpoint(path.string() + ": malformed array entry " + std::to_string(k));
    }
  }
  return ckpt;
}

template void save_checkpoint<float>(const ModelParams<float>&, const TrainConfig&, const std::filesystem::path&);
template void save_checkpoint<double>(const ModelParams<double>&, const TrainConfig&, const std::filesystem::path&);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace tensegrity
