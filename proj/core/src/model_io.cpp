#include "apnea/model_io.hpp"

#include <cstring>
#include <map>
#include <set>

#include <json.hpp>

#include "apnea/errors.hpp"
#include "apnea/rng.hpp"
#include "apnea/sparsify.hpp"
#include "binio.hpp"

namespace apnea {

namespace {

constexpr char kModelMagic[] = "APNEAMDL";
constexpr std::uint32_t kModelVersion = 1;
constexpr std::uint8_t kDtypeF64 = 0;
constexpr std::uint8_t kDtypeU8 = 1;

using nlohmann::json;

json config_to_json(const ArchitectureConfig& c) {
  json j;
  j["input_len"] = c.input_len;
  j["input_bn"] = c.input_bn;
  j["input_bn_per_position"] = c.input_bn_per_position;
  json convs = json::array();
  for (const ConvBlockSpec& b : c.conv_blocks) {
    convs.push_back({{"filters", b.filters},
                     {"kernel_len", b.kernel_len},
                     {"stride", b.stride},
                     {"padding", b.padding == Padding::valid ? "valid" : "same"},
                     {"pool_size", b.pool_size}});
  }
  j["conv_blocks"] = std::move(convs);
  json denses = json::array();
  for (const DenseBlockSpec& b : c.dense_blocks)
    denses.push_back({{"units", b.units}, {"dropout_p", b.dropout_p}});
  j["dense_blocks"] = std::move(denses);
  j["head_dropout_p"] = c.head_dropout_p;
  j["use_bias"] = c.use_bias;
  j["output_units"] = c.output_units;
  return j;
}

ArchitectureConfig config_from_json(const json& j) {
  ArchitectureConfig c;
  c.input_len = j.at("input_len").get<std::size_t>();
  c.input_bn = j.at("input_bn").get<bool>();
  c.input_bn_per_position = j.at("input_bn_per_position").get<bool>();
  for (const json& b : j.at("conv_blocks")) {
    ConvBlockSpec s;
    s.filters = b.at("filters").get<std::size_t>();
    s.kernel_len = b.at("kernel_len").get<std::size_t>();
    s.stride = b.at("stride").get<std::size_t>();
    const std::string pad = b.at("padding").get<std::string>();
    if (pad == "valid")
      s.padding = Padding::valid;
    else if (pad == "same")
      s.padding = Padding::same;
    else
      throw DataError("model config: unknown padding '" + pad + "'");
    s.pool_size = b.at("pool_size").get<std::size_t>();
    c.conv_blocks.push_back(s);
  }
  for (const json& b : j.at("dense_blocks")) {
    DenseBlockSpec s;
    s.units = b.at("units").get<std::size_t>();
    s.dropout_p = b.at("dropout_p").get<double>();
    c.dense_blocks.push_back(s);
  }
  c.head_dropout_p = j.at("head_dropout_p").get<double>();
  c.use_bias = j.at("use_bias").get<bool>();
  c.output_units = j.at("output_units").get<std::size_t>();
  return c;
}

}  // namespace

std::string architecture_to_json(const ArchitectureConfig& config) {
  return config_to_json(config).dump(2) + "\n";
}

ArchitectureConfig architecture_from_json(const std::string& text) {
  try {
    return config_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw DataError(std::string("bad architecture JSON: ") + e.what());
  }
}

void save_model(const Model& model, const std::filesystem::path& path) {
  binio::Writer w(path.string());
  w.bytes(kModelMagic, 8);
  w.u32(kModelVersion);
  w.u8(static_cast<std::uint8_t>(model.mode));
  w.str(config_to_json(model.config).dump());

  // named_tensors takes a mutable model; serialization does not modify
  auto refs = named_tensors(const_cast<Model&>(model));
  w.u32(static_cast<std::uint32_t>(refs.size()));
  for (const NamedTensorRef& ref : refs) {
    w.str(ref.name);
    w.u8(ref.as_mask ? kDtypeU8 : kDtypeF64);
    w.u8(static_cast<std::uint8_t>(ref.tensor->rank()));
    for (std::size_t e : ref.tensor->shape) w.u64(e);
    if (ref.as_mask) {
      for (double v : ref.tensor->data) w.u8(v != 0.0 ? 1 : 0);
    } else {
      for (double v : ref.tensor->data) w.f64(v);
    }
  }
  const std::uint64_t sum = w.checksum();
  w.u64(sum);
  w.finish();
}

Model load_model(const std::filesystem::path& path) {
  binio::Reader r(path.string());
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kModelMagic, 8) != 0)
    throw DataError(path.string() + ": not a model file");
  const std::uint32_t version = r.u32();
  if (version != kModelVersion)
    throw VersionError(path.string() + ": model format version " +
                       std::to_string(version) + ", this build reads " +
                       std::to_string(kModelVersion));
  const std::uint8_t mode_byte = r.u8();
  if (mode_byte > 2)
    throw DataError(path.string() + ": unknown mode byte " +
                    std::to_string(mode_byte));

  ArchitectureConfig config;
  try {
    config = config_from_json(json::parse(r.str()));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": bad config block: " + e.what());
  }

  Rng scratch(0);
  Model model = build_model(config, scratch);
  const auto mode = static_cast<WeightMode>(mode_byte);
  if (mode == WeightMode::pruned) attach_masks(model);
  if (mode == WeightMode::binarized) attach_latents(model);

  std::map<std::string, NamedTensorRef> expected;
  for (NamedTensorRef& ref : named_tensors(model))
    expected.emplace(ref.name, ref);

  const std::uint32_t count = r.u32();
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const auto it = expected.find(name);
    if (it == expected.end())
      throw DataError(path.string() + ": unexpected tensor '" + name + "'");
    if (!seen.insert(name).second)
      throw DataError(path.string() + ": duplicate tensor '" + name + "'");
    const NamedTensorRef& ref = it->second;
    const std::uint8_t dtype = r.u8();
    if (dtype != (ref.as_mask ? kDtypeU8 : kDtypeF64))
      throw DataError(path.string() + ": tensor '" + name +
                      "' has the wrong dtype");
    const std::uint8_t rank = r.u8();
    if (rank != ref.tensor->rank())
      throw DataError(path.string() + ": tensor '" + name +
                      "' has the wrong rank");
    std::vector<std::size_t> shape(rank);
    for (std::uint8_t d = 0; d < rank; ++d)
      shape[d] = static_cast<std::size_t>(r.u64());
    if (shape != ref.tensor->shape)
      throw DataError(path.string() + ": tensor '" + name +
                      "' has the wrong shape");
    for (double& v : ref.tensor->data)
      v = ref.as_mask ? static_cast<double>(r.u8()) : r.f64();
  }
  if (seen.size() != expected.size())
    throw DataError(path.string() + ": missing tensors (" +
                    std::to_string(expected.size() - seen.size()) + ")");

  const std::uint64_t computed = r.checksum();
  const std::uint64_t stored = r.u64();
  if (computed != stored)
    throw ChecksumError(path.string() + ": checksum mismatch");
  if (!r.at_eof())
    throw DataError(path.string() + ": trailing bytes after checksum");
  return model;
}

}  // namespace apnea
