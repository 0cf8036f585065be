#pragma once

#include <string>

#include "pyrdiff/tensor.hpp"

namespace pyrdiff {

/// Load an 8-bit RGB PNG. Byte v maps to v / 127.5 - 1 (0 -> -1.0, 255 -> +1.0).
/// Non-RGB or non-8-bit inputs are rejected.
ImageTensor load_png(const std::string& path);

/// Save as 8-bit RGB PNG. Values map back with round-half-up and clamping, so
/// save(load(p)) reproduces the original pixel payload exactly.
void save_png(const std::string& path, const ImageTensor& img);

}  // namespace pyrdiff
