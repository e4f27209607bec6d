// Safetensors archives: an 8-byte little-endian header length, a JSON header
// mapping tensor names to {dtype, shape, data_offsets}, then raw data.
#include <algorithm>
#include <bit>
#include <cstring>
#include <map>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "efcxr/text.hpp"
#include "models_torch.hpp"

namespace efcxr::models {

namespace {

constexpr const char* kFormat = "efcxr-checkpoint-1";

static_assert(std::endian::native == std::endian::little, "safetensors I/O assumes a little-endian host");

std::string dtype_name(torch::Dtype d) {
  switch (d) {
    case torch::kFloat32: return "F32";
    case torch::kFloat64: return "F64";
    case torch::kInt64: return "I64";
    default: throw Error(fmt::format("unsupported tensor dtype {}", c10::toString(d)));
  }
}

torch::Dtype parse_dtype(const std::string& s, const std::string& source) {
  if (s == "F32") return torch::kFloat32;
  if (s == "F64") return torch::kFloat64;
  if (s == "I64") return torch::kInt64;
  throw SchemaError(fmt::format("{}: unsupported tensor dtype '{}'", source, s));
}

struct Archive {
  std::map<std::string, torch::Tensor> tensors;
  std::map<std::string, std::string> metadata;
};

std::string encode(const std::map<std::string, torch::Tensor>& tensors,
                   const std::map<std::string, std::string>& metadata) {
  nlohmann::json header = nlohmann::json::object();
  std::string data;
  for (const auto& [name, t] : tensors) {
    const torch::Tensor c = t.detach().contiguous().cpu();
    const std::size_t bytes = c.numel() * c.element_size();
    const std::size_t begin = data.size();
    data.append(static_cast<const char*>(c.data_ptr()), bytes);
    header[name] = {{"dtype", dtype_name(c.scalar_type())},
                    {"shape", c.sizes().vec()},
                    {"data_offsets", {begin, begin + bytes}}};
  }
  if (!metadata.empty()) header["__metadata__"] = metadata;
  std::string h = header.dump();
  while (h.size() % 8 != 0) h.push_back(' ');
  const std::uint64_t n = h.size();
  std::string out(8, '\0');
  std::memcpy(out.data(), &n, 8);
  return out + h + data;
}

Archive decode(const std::string& bytes, const std::string& source) {
  if (bytes.size() < 8) throw SchemaError(source + ": truncated safetensors archive");
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data(), 8);
  if (n > bytes.size() - 8) throw SchemaError(source + ": header length exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(8, n));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(source + ": malformed header: " + e.what());
  }
  const std::size_t base = 8 + n;
  const std::size_t data_size = bytes.size() - base;
  Archive a;
  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") {
      for (const auto& [k, v] : entry.items()) a.metadata[k] = v.get<std::string>();
      continue;
    }
    const torch::Dtype dt = parse_dtype(entry.at("dtype").get<std::string>(), source);
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    const auto offs = entry.at("data_offsets").get<std::vector<std::size_t>>();
    if (offs.size() != 2 || offs[0] > offs[1] || offs[1] > data_size) {
      throw SchemaError(fmt::format("{}: tensor '{}' has invalid data offsets", source, name));
    }
    torch::Tensor t = torch::empty(shape, dt);
    if (static_cast<std::size_t>(t.numel() * t.element_size()) != offs[1] - offs[0]) {
      throw SchemaError(fmt::format("{}: tensor '{}' size does not match its shape", source, name));
    }
    std::memcpy(t.data_ptr(), bytes.data() + base + offs[0], offs[1] - offs[0]);
    a.tensors.emplace(name, std::move(t));
  }
  return a;
}

Archive read_archive(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("archive not found: " + path.string());
  return decode(text::read_file(path), path.string());
}

bool skipped(const std::string& name, const std::vector<std::string>& skip) {
  return std::any_of(skip.begin(), skip.end(), [&](const std::string& p) { return name.starts_with(p); });
}

void copy_state(torch::nn::Module& module, const Archive& a, const std::vector<std::string>& skip,
                const std::string& source) {
  torch::NoGradGuard no_grad;
  for (auto& [name, t] : named_state(module)) {
    if (skipped(name, skip)) continue;
    auto it = a.tensors.find(name);
    if (it == a.tensors.end()) throw SchemaError(fmt::format("{}: missing tensor '{}'", source, name));
    if (it->second.sizes() != t.sizes()) {
      throw SchemaError(fmt::format("{}: tensor '{}' has shape {}, model expects {}", source, name,
                                    fmt::join(it->second.sizes().vec(), "x"), fmt::join(t.sizes().vec(), "x")));
    }
    t.copy_(it->second.to(t.scalar_type()));
  }
}

}  // namespace

void load_state(torch::nn::Module& module, const std::filesystem::path& archive,
                const std::vector<std::string>& skip) {
  copy_state(module, read_archive(archive), skip, archive.string());
}

void save_checkpoint(const Model& model, const std::filesystem::path& path,
                     const nlohmann::json& training_state) {
  std::map<std::string, torch::Tensor> tensors;
  for (auto& [name, t] : named_state(*model.impl().net)) tensors.emplace(name, t);
  const std::map<std::string, std::string> metadata = {
      {"format", kFormat},
      {"config", model.config().to_json().dump()},
      {"training_state", training_state.dump()}};
  text::write_file_atomic(path, encode(tensors, metadata));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const Archive a = read_archive(path);
  const std::string source = path.string();
  auto meta = [&](const std::string& key) {
    auto it = a.metadata.find(key);
    if (it == a.metadata.end()) throw SchemaError(source + ": checkpoint metadata lacks '" + key + "'");
    return it->second;
  };
  if (meta("format") != kFormat) throw SchemaError(source + ": not an efcxr checkpoint");
  ModelConfig config;
  nlohmann::json state;
  try {
    config = ModelConfig::from_json(nlohmann::json::parse(meta("config")));
    state = nlohmann::json::parse(meta("training_state"));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(source + ": bad checkpoint metadata: " + e.what());
  }
  ModelConfig fresh = config;
  fresh.pretrained = Pretrained::None;
  Model model = build_model(fresh);
  model.impl().config = config;
  copy_state(*model.impl().net, a, {}, source);
  model.set_training(false);
  return LoadedCheckpoint{std::move(model), std::move(state)};
}

}  // namespace efcxr::models
