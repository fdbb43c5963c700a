#include "faq_agg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace faq {

namespace {

constexpr char kMagic[8] = {'F', 'A', 'Q', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

}  // namespace

template <class T>
Checkpoint Checkpoint::capture(const ParameterStore<T>& store, const RunConfig& config, std::int64_t step) {
  Checkpoint c;
  c.config = config;
  c.step = step;
  c.payload.reserve(store.total_size());
  for (const auto& e : store.entries()) {
    c.params.push_back({e.name, e.var.shape(), c.payload.size() * sizeof(float)});
    for (T v : e.var.value().values()) c.payload.push_back(static_cast<float>(v));
  }
  return c;
}

template <class T>
void Checkpoint::restore(ParameterStore<T>& store) const {
  if (params.size() != store.entries().size()) {
    throw ValidationError("checkpoint has " + std::to_string(params.size()) + " parameters, model expects " +
                          std::to_string(store.entries().size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& e = store.entries()[i];
    const Param& p = params[i];
    if (p.name != e.name || p.shape != e.var.shape()) {
      throw ValidationError("checkpoint parameter " + p.name + " " + shape_str(p.shape) + " does not match model " +
                            e.name + " " + shape_str(e.var.shape()));
    }
    const std::size_t first = p.offset / sizeof(float);
    Tensor<T>& dst = e.var.value_mut();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(payload[first + k]);
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json manifest;
  manifest["format"] = "faq-agg-checkpoint";
  manifest["version"] = 1;
  manifest["step"] = ckpt.step;
  manifest["config"] = ckpt.config.serialize();
  manifest["config_hash"] = ckpt.config.hash();
  manifest["payload_bytes"] = ckpt.payload.size() * sizeof(float);
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : ckpt.params) params.push_back({{"name", p.name}, {"shape", p.shape}, {"offset", p.offset}});
  manifest["params"] = params;
  const std::string text = manifest.dump();

  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError("cannot open checkpoint for writing: " + path.string());
  const std::uint64_t len = text.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(ckpt.payload.data()),
            static_cast<std::streamsize>(ckpt.payload.size() * sizeof(float)));
  out.flush();
  if (!out) throw StorageError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw ParseError(path.string() + " is not a checkpoint");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ParseError("truncated checkpoint manifest in " + path.string());

  Checkpoint c;
  std::size_t payload_bytes = 0;
  try {
    const auto manifest = nlohmann::json::parse(text);
    c.step = manifest.at("step").get<std::int64_t>();
    c.config = parse_config(manifest.at("config").get<std::string>());
    payload_bytes = manifest.at("payload_bytes").get<std::size_t>();
    for (const auto& p : manifest.at("params")) {
      c.params.push_back({p.at("name").get<std::string>(), p.at("shape").get<Shape>(), p.at("offset").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed checkpoint manifest in " + path.string() + ": " + e.what());
  }
  std::size_t expected = 0;
  for (const auto& p : c.params) {
    if (p.offset != expected) throw ParseError("checkpoint offsets are not contiguous at " + p.name);
    expected += shape_size(p.shape) * sizeof(float);
  }
  if (expected != payload_bytes || payload_bytes % sizeof(float) != 0) {
    throw ParseError("checkpoint manifest shapes do not match payload length");
  }
  c.payload.resize(payload_bytes / sizeof(float));
  in.read(reinterpret_cast<char*>(c.payload.data()), static_cast<std::streamsize>(payload_bytes));
  if (!in) throw ParseError("truncated checkpoint payload in " + path.string());
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError("trailing bytes after checkpoint payload");
  return c;
}

template Checkpoint Checkpoint::capture(const ParameterStore<float>&, const RunConfig&, std::int64_t);
template Checkpoint Checkpoint::capture(const ParameterStore<double>&, const RunConfig&, std::int64_t);
template void Checkpoint::restore(ParameterStore<float>&) const;
template void Checkpoint::restore(ParameterStore<double>&) const;

}  // namespace faq
