#include "dptab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace dptab {
namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kBlob = "params.bin";

void write_floats(std::ostream& out, const Vector<float>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
  } else {
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      auto bits = std::bit_cast<std::uint32_t>(values(i));
      bits = __builtin_bswap32(bits);
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
}

void read_floats(std::istream& in, Vector<float>& values) {
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!in) throw DataError("checkpoint blob is truncated");
  if constexpr (std::endian::native != std::endian::little) {
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      values(i) = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(values(i))));
    }
  }
}

void replace_file(const std::filesystem::path& target, const std::string& bytes) {
  const auto tmp = std::filesystem::path(target.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

nlohmann::json optimizer_state_json(const OptimizerState& opt) {
  return {{"step", opt.step}, {"total_steps", opt.total_steps}, {"config", to_json(opt.config)}};
}

}  // namespace

std::uint64_t fnv1a(const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::string rng_to_string(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

Rng rng_from_string(const std::string& text) {
  Rng rng;
  std::istringstream in(text);
  in >> rng;
  if (!in) throw ConfigError("malformed generator state in checkpoint");
  return rng;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  std::filesystem::create_directories(dir);
  const auto& params = ck.state.params;
  const auto& opt = ck.state.optimizer;
  const auto n = params.values.size();
  if (opt.m.size() != n || opt.v.size() != n) {
    throw ConfigError("optimizer moments do not match the parameter count");
  }

  std::ostringstream blob(std::ios::binary);
  write_floats(blob, params.values);
  write_floats(blob, opt.m);
  write_floats(blob, opt.v);
  const std::string bytes = blob.str();

  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : params.layout.tensors()) {
    tensors.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"offset", t.offset}});
  }
  const auto total = static_cast<std::size_t>(n);
  for (const char* moment : {"adam.m", "adam.v"}) {
    const std::size_t base = total * (std::string(moment) == "adam.m" ? 1 : 2);
    tensors.push_back({{"name", moment}, {"shape", {total}}, {"offset", base}});
  }

  nlohmann::json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["blob"] = {{"file", kBlob},
                      {"dtype", "float32"},
                      {"byte_order", "little"},
                      {"count", 3 * total},
                      {"fnv1a", fnv1a(bytes.data(), bytes.size())}};
  manifest["model"] = to_json(params.config);
  manifest["parameter_count"] = total;
  manifest["tensors"] = std::move(tensors);
  manifest["vocabulary"] = ck.vocab.descriptor();
  manifest["discretizer"] = to_json(ck.disc);
  manifest["step"] = ck.state.step;
  manifest["optimizer"] = optimizer_state_json(opt);
  manifest["ledger"] = to_json(ck.state.ledger, ck.delta);
  manifest["delta"] = ck.delta;
  manifest["rng"] = rng_to_string(ck.state.rng);
  manifest["run"] = ck.run;

  replace_file(dir / kBlob, bytes);
  replace_file(dir / kManifest, manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifest);
  if (!in) throw DataError("no checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != kCheckpointFormat) {
    throw ConfigError("unsupported checkpoint format '" + manifest.value("format", "") + "'");
  }

  Checkpoint ck;
  try {
    ck.disc = discretizer_from_json(manifest.at("discretizer"));
    ck.vocab = Vocabulary::from_descriptor(manifest.at("vocabulary"));
    const ModelConfig config = model_config_from_json(manifest.at("model"));
    ck.state.params.config = config;
    ck.state.params.layout = ParamLayout(config);
    const std::size_t total = ck.state.params.layout.total();
    if (manifest.at("parameter_count").get<std::size_t>() != total) {
      throw ConfigError("checkpoint parameter count does not match its model config");
    }
    std::size_t index = 0;
    for (const auto& t : ck.state.params.layout.tensors()) {
      const auto& entry = manifest.at("tensors").at(index++);
      if (entry.at("name").get<std::string>() != t.name ||
          entry.at("offset").get<std::size_t>() != t.offset) {
        throw ConfigError("checkpoint tensor table does not match layout at '" + t.name + "'");
      }
    }

    std::ifstream blob(dir / manifest.at("blob").at("file").get<std::string>(), std::ios::binary);
    if (!blob) throw DataError("missing checkpoint blob in " + dir.string());
    const std::string bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
    if (bytes.size() != 3 * total * sizeof(float)) throw DataError("checkpoint blob has the wrong size");
    if (fnv1a(bytes.data(), bytes.size()) != manifest.at("blob").at("fnv1a").get<std::uint64_t>()) {
      throw DataError("checkpoint blob checksum mismatch");
    }
    std::istringstream data(bytes, std::ios::binary);
    const auto n = static_cast<Eigen::Index>(total);
    ck.state.params.values.resize(n);
    ck.state.optimizer.m.resize(n);
    ck.state.optimizer.v.resize(n);
    read_floats(data, ck.state.params.values);
    read_floats(data, ck.state.optimizer.m);
    read_floats(data, ck.state.optimizer.v);

    const auto& opt = manifest.at("optimizer");
    ck.state.optimizer.step = opt.at("step").get<std::size_t>();
    ck.state.optimizer.total_steps = opt.at("total_steps").get<std::size_t>();
    ck.state.optimizer.config = optimizer_config_from_json(opt.at("config"));
    ck.state.step = manifest.at("step").get<std::size_t>();
    ck.state.ledger = ledger_from_json(manifest.at("ledger"));
    ck.state.rng = rng_from_string(manifest.at("rng").get<std::string>());
    ck.delta = manifest.at("delta").get<double>();
    ck.run = manifest.value("run", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  return ck;
}

std::string checkpoint_id(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifest);
  if (!in) throw DataError("no checkpoint manifest in " + dir.string());
  const auto manifest = nlohmann::json::parse(in, nullptr, false);
  if (manifest.is_discarded()) throw ConfigError("malformed checkpoint manifest");
  std::ostringstream id;
  id << "step" << manifest.value("step", std::size_t{0}) << "-" << std::hex << std::setw(16)
     << std::setfill('0') << manifest.at("blob").value("fnv1a", std::uint64_t{0});
  return id.str();
}

}  // namespace dptab
