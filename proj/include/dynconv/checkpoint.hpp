#pragma once

#include <string>

#include "dynconv/model.hpp"

namespace dynconv {

// Single-file container: 8-byte magic "DYNCONV1", a uint32-LE-length-prefixed
// UTF-8 JSON manifest (model spec plus parameter name/shape/byte-offset
// entries), then raw little-endian 32-bit floats. Lossless at 32-bit
// precision.
void save_checkpoint(Model& model, const std::string& path);

// Rebuilds the model from the embedded spec and loads every parameter.
Model load_checkpoint(const std::string& path);

}  // namespace dynconv
