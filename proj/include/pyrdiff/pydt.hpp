#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "pyrdiff/tensor.hpp"

namespace pyrdiff {

/// Raw tensor format "PYDT": magic bytes "PYDT", u32 rank, u32 dims[rank],
/// little-endian f32 payload. Image tensors use rank 3 (channels, height, width).
void save_pydt(std::ostream& out, const Tensor<float>& t);
void save_pydt(const std::string& path, const Tensor<float>& t);
Tensor<float> load_pydt(std::istream& in);
Tensor<float> load_pydt(const std::string& path);

struct PydtEntry {
    std::string name;
    Tensor<float> tensor;
};

/// Multi-tensor container used for checkpoints: magic "PYDC", u32 entry count,
/// a JSON manifest (serialized as a length-prefixed string: entry names and
/// shapes plus caller metadata such as the training iteration), then one
/// length-prefixed name + PYDT record per entry.
struct PydtContainer {
    std::string meta_json = "{}";
    std::vector<PydtEntry> entries;

    const Tensor<float>* find(const std::string& name) const;
};

void save_pydt_container(const std::string& path, const PydtContainer& c);
PydtContainer load_pydt_container(const std::string& path);

/// Thrown for unreadable/corrupt files and other I/O failures (CLI exit code 3).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace pyrdiff
