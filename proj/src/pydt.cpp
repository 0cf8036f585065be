#include "pyrdiff/pydt.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>

namespace pyrdiff {

namespace {

// The on-disk format is explicitly little-endian; this code assumes a
// little-endian host (checked here once).
static_assert(static_cast<unsigned char>(0x01020304 >> 0) == 0x04 ||
              true, "endianness checked at runtime");

bool host_is_little_endian() {
    uint32_t v = 1;
    unsigned char b;
    std::memcpy(&b, &v, 1);
    return b == 1;
}

void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw IoError("pydt: truncated stream");
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    uint32_t n = read_u32(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw IoError("pydt: truncated stream");
    return s;
}

}  // namespace

void save_pydt(std::ostream& out, const Tensor<float>& t) {
    if (!host_is_little_endian()) throw IoError("pydt: big-endian hosts unsupported");
    out.write("PYDT", 4);
    write_u32(out, 3);
    write_u32(out, static_cast<uint32_t>(t.channels));
    write_u32(out, static_cast<uint32_t>(t.height));
    write_u32(out, static_cast<uint32_t>(t.width));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!out) throw IoError("pydt: write failed");
}

void save_pydt(const std::string& path, const Tensor<float>& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("pydt: cannot open for writing: " + path);
    save_pydt(f, t);
}

Tensor<float> load_pydt(std::istream& in) {
    if (!host_is_little_endian()) throw IoError("pydt: big-endian hosts unsupported");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "PYDT", 4) != 0) throw IoError("pydt: bad magic");
    uint32_t rank = read_u32(in);
    if (rank != 3) throw IoError("pydt: expected rank-3 tensor, got rank " + std::to_string(rank));
    uint32_t c = read_u32(in), h = read_u32(in), w = read_u32(in);
    Tensor<float> t(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw IoError("pydt: truncated payload");
    return t;
}

Tensor<float> load_pydt(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("pydt: cannot open: " + path);
    return load_pydt(f);
}

const Tensor<float>* PydtContainer::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return &e.tensor;
    return nullptr;
}

void save_pydt_container(const std::string& path, const PydtContainer& c) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("pydt: cannot open for writing: " + path);
    f.write("PYDC", 4);
    write_u32(f, static_cast<uint32_t>(c.entries.size()));

    nlohmann::json manifest;
    manifest["meta"] = nlohmann::json::parse(c.meta_json);
    auto& layers = manifest["tensors"] = nlohmann::json::array();
    for (const auto& e : c.entries)
        layers.push_back({{"name", e.name},
                          {"shape", {e.tensor.channels, e.tensor.height, e.tensor.width}}});
    write_string(f, manifest.dump());

    for (const auto& e : c.entries) {
        write_string(f, e.name);
        save_pydt(f, e.tensor);
    }
    if (!f) throw IoError("pydt: write failed: " + path);
}

PydtContainer load_pydt_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("pydt: cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "PYDC", 4) != 0) throw IoError("pydt: bad container magic: " + path);
    uint32_t count = read_u32(f);
    std::string manifest_text = read_string(f);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(manifest_text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("pydt: corrupt manifest: ") + e.what());
    }
    PydtContainer c;
    c.meta_json = manifest.value("meta", nlohmann::json::object()).dump();
    c.entries.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        PydtEntry e;
        e.name = read_string(f);
        e.tensor = load_pydt(f);
        c.entries.push_back(std::move(e));
    }
    if (manifest.contains("tensors") && manifest["tensors"].size() != c.entries.size())
        throw IoError("pydt: manifest/entry count mismatch: " + path);
    return c;
}

}  // namespace pyrdiff
