#include "sharpnoise/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "sharpnoise/error.hpp"

namespace sharpnoise {
namespace {

constexpr std::array<char, 8> kMagic{'S', 'N', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void put_le(std::ostream& os, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get_le(std::istream& is, const std::string& what) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!is.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw ConfigError("checkpoint: truncated while reading " + what);
  }
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".json";
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const nlohmann::json& metadata) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("checkpoint: cannot open '" + path.string() + "' for writing");
  os.write(kMagic.data(), kMagic.size());
  const auto& params = model.params();
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.tensor.rank()));
    for (const auto d : e.tensor.shape()) put_le<std::uint64_t>(os, d);
    for (const float v : e.tensor.data()) put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
  }
  if (!os) throw ConfigError("checkpoint: write failed for '" + path.string() + "'");

  nlohmann::json side;
  side["format"] = "sharpnoise-checkpoint";
  side["version"] = 1;
  side["model"] = model.spec();
  side["metadata"] = metadata;
  std::ofstream js(sidecar_path(path));
  js << side.dump(2) << '\n';
  if (!js) throw ConfigError("checkpoint: cannot write sidecar for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream js(sidecar_path(path));
  if (!js) throw ConfigError("checkpoint: missing sidecar '" + sidecar_path(path).string() + "'");
  nlohmann::json side;
  try {
    js >> side;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint: malformed sidecar: " + std::string(e.what()));
  }
  if (side.value("format", "") != "sharpnoise-checkpoint" || side.value("version", 0) != 1) {
    throw ConfigError("checkpoint: unsupported sidecar format in '" + sidecar_path(path).string() + "'");
  }
  Model model(side.at("model").get<ModelSpec>(), 0);

  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("checkpoint: cannot open '" + path.string() + "'");
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw ConfigError("checkpoint: bad magic in '" + path.string() + "'");
  }
  const auto count = get_le<std::uint32_t>(is, "record count");
  auto& params = model.params();
  if (count != params.size()) {
    throw ConfigError("checkpoint/spec mismatch: file has " + std::to_string(count) + " records, model expects " +
                      std::to_string(params.size()));
  }
  std::map<std::string, bool> seen;
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto name_len = get_le<std::uint32_t>(is, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw ConfigError("checkpoint: truncated record name");
    const auto rank = get_le<std::uint32_t>(is, "rank of " + name);
    Shape shape(rank);
    for (auto& d : shape) d = get_le<std::uint64_t>(is, "dims of " + name);
    const auto idx = params.find(name);
    if (!idx) throw ConfigError("checkpoint/spec mismatch: unknown record '" + name + "'");
    if (seen[name]) throw ConfigError("checkpoint: duplicate record '" + name + "'");
    seen[name] = true;
    auto& tensor = params[*idx].tensor;
    if (tensor.shape() != shape) {
      throw ConfigError("checkpoint/spec mismatch: '" + name + "' has shape " + shape_str(shape) +
                        ", model expects " + shape_str(tensor.shape()));
    }
    for (float& v : tensor.data()) v = std::bit_cast<float>(get_le<std::uint32_t>(is, "values of " + name));
  }
  return {std::move(model), side.value("metadata", nlohmann::json::object())};
}

}  // namespace sharpnoise
