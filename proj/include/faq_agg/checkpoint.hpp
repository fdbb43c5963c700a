#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "faq_agg/config.hpp"

namespace faq {

/// On disk: "FAQCKPT1", a little-endian uint64 manifest length, the JSON
/// manifest (config, step, and per-parameter name/shape/offset), then the
/// float32 payload. Offsets are byte offsets into the payload.
struct Checkpoint {
  struct Param {
    std::string name;
    Shape shape;
    std::size_t offset = 0;
  };
  RunConfig config;
  std::int64_t step = 0;
  std::vector<Param> params;
  std::vector<float> payload;

  template <class T>
  static Checkpoint capture(const ParameterStore<T>& store, const RunConfig& config, std::int64_t step);
  /// Copies the payload into `store`; names and shapes must match exactly.
  template <class T>
  void restore(ParameterStore<T>& store) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace faq
