#pragma once

// Self-describing binary checkpoint: named parameter tensors, Adam moments,
// step count and RNG state. Round-trips value-exact (raw float bytes).

#include "pnerf/adam.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace pnerf {

namespace ckpt_detail {

constexpr char kMagic[8] = {'P', 'N', 'C', 'K', 'P', 'T', '0', '1'};

inline void write_u64(std::ostream& os, uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
inline void write_str(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string read_str(std::istream& is) {
    std::string s(read_u64(is), '\0');
    is.read(s.data(), static_cast<std::streamsize>(s.size()));
    return s;
}
inline void write_floats(std::ostream& os, const std::vector<float>& v) {
    write_u64(os, v.size());
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(float)));
}
inline std::vector<float> read_floats(std::istream& is) {
    std::vector<float> v(read_u64(is));
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
    return v;
}

}  // namespace ckpt_detail

struct Checkpoint {
    int64_t step = 0;
    NamedParams params;
    AdamState adam;
    std::string rng_state;  // serialized engine, empty if absent
};

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
    using namespace ckpt_detail;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    write_u64(os, static_cast<uint64_t>(c.step));
    write_u64(os, c.params.size());
    for (const auto& [name, t] : c.params) {
        write_str(os, name);
        write_u64(os, t.shape().size());
        for (int d : t.shape()) write_u64(os, static_cast<uint64_t>(d));
        write_floats(os, t.value());
    }
    write_u64(os, static_cast<uint64_t>(c.adam.t));
    os.write(reinterpret_cast<const char*>(&c.adam.lr), sizeof(float));
    write_u64(os, c.adam.m.size());
    for (const auto& [name, m] : c.adam.m) {
        write_str(os, name);
        write_floats(os, m);
        write_floats(os, c.adam.v.at(name));
    }
    write_str(os, c.rng_state);
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    using namespace ckpt_detail;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::string(magic, 8) != std::string(kMagic, 8))
        throw std::runtime_error("not a checkpoint file: " + path);
    Checkpoint c;
    c.step = static_cast<int64_t>(read_u64(is));
    uint64_t np = read_u64(is);
    for (uint64_t i = 0; i < np; ++i) {
        std::string name = read_str(is);
        std::vector<int> shape(read_u64(is));
        for (auto& d : shape) d = static_cast<int>(read_u64(is));
        auto vals = read_floats(is);
        c.params.emplace_back(name, Tensor::from(shape, std::move(vals), true));
    }
    c.adam.t = static_cast<int64_t>(read_u64(is));
    is.read(reinterpret_cast<char*>(&c.adam.lr), sizeof(float));
    uint64_t nm = read_u64(is);
    for (uint64_t i = 0; i < nm; ++i) {
        std::string name = read_str(is);
        c.adam.m[name] = read_floats(is);
        c.adam.v[name] = read_floats(is);
    }
    c.rng_state = read_str(is);
    if (!is) throw std::runtime_error("truncated checkpoint: " + path);
    return c;
}

// Copy checkpoint values into an existing parameter set (shapes must match).
inline void restore_params(NamedParams& dst, const Checkpoint& c) {
    if (dst.size() != c.params.size())
        throw std::runtime_error("checkpoint parameter count mismatch");
    for (size_t i = 0; i < dst.size(); ++i) {
        if (dst[i].first != c.params[i].first ||
            dst[i].second.shape() != c.params[i].second.shape())
            throw std::runtime_error("checkpoint parameter mismatch at " + dst[i].first);
        dst[i].second.value() = c.params[i].second.value();
    }
}

}  // namespace pnerf
