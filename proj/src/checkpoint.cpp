// SPDX-License-Identifier: Apache-2.0
#include "tcfnet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace tcfnet {

namespace {

// The formats in this project are little-endian by definition; refuse to run
// on big-endian hosts rather than silently corrupt files.
void require_little_endian() {
    uint16_t probe = 1;
    uint8_t first;
    std::memcpy(&first, &probe, 1);
    if (first != 1) throw std::runtime_error("big-endian hosts are not supported");
}

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("truncated checkpoint file: " + path);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<Parameter>& params) {
    require_little_endian();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write("TCFN", 4);
    write_pod<uint16_t>(os, kCheckpointVersion);
    write_pod<uint32_t>(os, static_cast<uint32_t>(params.size()));
    for (const Parameter& p : params) {
        if (p.name.size() > std::numeric_limits<uint16_t>::max())
            throw std::invalid_argument("parameter name too long: " + p.name);
        write_pod<uint16_t>(os, static_cast<uint16_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_pod<uint8_t>(os, static_cast<uint8_t>(p.tensor.rank()));
        for (int d : p.tensor.shape) write_pod<uint32_t>(os, static_cast<uint32_t>(d));
        for (double v : p.tensor.data) write_pod<float>(os, static_cast<float>(v));
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<Parameter> load_checkpoint(const std::string& path) {
    require_little_endian();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "TCFN", 4) != 0)
        throw std::runtime_error("bad checkpoint magic in " + path);
    uint16_t version = read_pod<uint16_t>(is, path);
    if (version != kCheckpointVersion)
        throw std::runtime_error("unknown checkpoint version " + std::to_string(version) + " in " + path);
    uint32_t count = read_pod<uint32_t>(is, path);
    std::vector<Parameter> params;
    params.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t name_len = read_pod<uint16_t>(is, path);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw std::runtime_error("truncated checkpoint file: " + path);
        uint8_t rank = read_pod<uint8_t>(is, path);
        Shape shape;
        for (uint8_t r = 0; r < rank; ++r) shape.push_back(static_cast<int>(read_pod<uint32_t>(is, path)));
        Tensor t(shape);
        for (double& v : t.data) v = static_cast<double>(read_pod<float>(is, path));
        params.push_back(Parameter{std::move(name), std::move(t), true});
    }
    return params;
}

}  // namespace tcfnet
