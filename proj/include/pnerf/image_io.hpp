#pragma once

// Raster I/O: 8-bit PPM for rgb, 16-bit PGM (big-endian per the netpbm spec)
// for label maps, and a magic-headered little-endian float grid for depth.

#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace pnerf {

struct Image8 {  // rgb, row-major, 3 channels
    int width = 0, height = 0;
    std::vector<uint8_t> data;
};

struct Image16 {  // single channel labels
    int width = 0, height = 0;
    std::vector<uint16_t> data;
};

struct DepthMap {
    int width = 0, height = 0;
    std::vector<float> data;  // +inf = no surface

    static constexpr float kInvalid = std::numeric_limits<float>::infinity();
};

namespace img_detail {

inline void expect(bool ok, const std::string& msg) {
    if (!ok) throw std::runtime_error(msg);
}

inline void skip_ws(std::istream& is) {
    while (std::isspace(is.peek())) is.get();
    while (is.peek() == '#') {
        std::string line;
        std::getline(is, line);
        while (std::isspace(is.peek())) is.get();
    }
}

inline int read_int(std::istream& is) {
    skip_ws(is);
    int v = 0;
    is >> v;
    return v;
}

}  // namespace img_detail

inline void save_ppm(const Image8& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    img_detail::expect(bool(os), "cannot write " + path);
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.data.data()),
             static_cast<std::streamsize>(img.data.size()));
}

inline Image8 load_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    img_detail::expect(bool(is), "cannot open " + path);
    std::string magic(2, '\0');
    is.read(magic.data(), 2);
    img_detail::expect(magic == "P6", path + ": not a P6 ppm");
    Image8 img;
    img.width = img_detail::read_int(is);
    img.height = img_detail::read_int(is);
    int maxv = img_detail::read_int(is);
    img_detail::expect(maxv == 255, path + ": unsupported maxval");
    is.get();
    img.data.resize(size_t(img.width) * img.height * 3);
    is.read(reinterpret_cast<char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
    img_detail::expect(bool(is), path + ": truncated ppm");
    return img;
}

inline void save_pgm16(const Image16& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    img_detail::expect(bool(os), "cannot write " + path);
    os << "P5\n" << img.width << " " << img.height << "\n65535\n";
    for (uint16_t v : img.data) {
        os.put(static_cast<char>(v >> 8));
        os.put(static_cast<char>(v & 0xff));
    }
}

inline Image16 load_pgm16(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    img_detail::expect(bool(is), "cannot open " + path);
    std::string magic(2, '\0');
    is.read(magic.data(), 2);
    img_detail::expect(magic == "P5", path + ": not a P5 pgm");
    Image16 img;
    img.width = img_detail::read_int(is);
    img.height = img_detail::read_int(is);
    int maxv = img_detail::read_int(is);
    img_detail::expect(maxv == 65535, path + ": expected 16-bit pgm");
    is.get();
    img.data.resize(size_t(img.width) * img.height);
    for (auto& v : img.data) {
        int hi = is.get(), lo = is.get();
        v = static_cast<uint16_t>((hi << 8) | lo);
    }
    img_detail::expect(bool(is), path + ": truncated pgm");
    return img;
}

inline void save_depth(const DepthMap& d, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    img_detail::expect(bool(os), "cannot write " + path);
    const char magic[8] = {'P', 'N', 'D', 'F', '0', '0', '0', '1'};
    os.write(magic, 8);
    uint32_t w = d.width, h = d.height;
    os.write(reinterpret_cast<const char*>(&w), 4);
    os.write(reinterpret_cast<const char*>(&h), 4);
    os.write(reinterpret_cast<const char*>(d.data.data()),
             static_cast<std::streamsize>(d.data.size() * sizeof(float)));
}

inline DepthMap load_depth(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    img_detail::expect(bool(is), "cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    img_detail::expect(std::string(magic, 8) == "PNDF0001", path + ": bad depth header");
    DepthMap d;
    uint32_t w = 0, h = 0;
    is.read(reinterpret_cast<char*>(&w), 4);
    is.read(reinterpret_cast<char*>(&h), 4);
    d.width = w;
    d.height = h;
    d.data.resize(size_t(w) * h);
    is.read(reinterpret_cast<char*>(d.data.data()),
            static_cast<std::streamsize>(d.data.size() * sizeof(float)));
    img_detail::expect(bool(is), path + ": truncated depth file");
    return d;
}

}  // namespace pnerf
