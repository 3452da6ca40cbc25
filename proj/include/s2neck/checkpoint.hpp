#pragma once

#include <string>

#include "s2neck/nn.hpp"

namespace s2neck {

// Checkpoint directory: manifest.json (entry names/shapes + config echo) and
// params.bin (concatenated S2TENSOR records, parameters then buffers).
void save_checkpoint(const std::string& dir, const ParamList& params, const BufferList& buffers,
                     const std::string& config_echo_json);

// Restores values in place; names and shapes must match the manifest exactly.
void load_checkpoint(const std::string& dir, const ParamList& params, const BufferList& buffers);

std::string checkpoint_config(const std::string& dir);

}  // namespace s2neck
