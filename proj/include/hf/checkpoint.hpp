#pragma once

#include <optional>
#include <string>

#include "hf/model.hpp"

namespace hf::model {

// Versioned container: JSON header (topology config + parameter directory)
// followed by the raw little-endian f32 payload in registry order.
void save_checkpoint(const std::string& path, const ModelState<float>& m);

// Rebuilds the topology stored in the file. When `expected` is given, a
// config disagreement is a config error.
ModelState<float> load_checkpoint(const std::string& path,
                                  const TopologyConfig* expected = nullptr);

uint64_t file_hash(const std::string& path);

}  // namespace hf::model
