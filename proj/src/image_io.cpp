#include "pf/image_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "pf/rng.hpp"

namespace pf {

void write_ppm(const std::string& path, const Tensor& image) {
    if (image.shape.size() != 3 || image.shape[0] != 3)
        throw Error("write_ppm: image must be [3,H,W]");
    const int H = image.shape[1], W = image.shape[2];
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("write_ppm: cannot open " + path);
    os << "P6\n" << W << " " << H << "\n255\n";
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    std::vector<std::uint8_t> row(static_cast<std::size_t>(W) * 3);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < 3; ++c) {
                double v = image.values[c * plane + static_cast<std::size_t>(y) * W + x];
                v = std::min(1.0, std::max(0.0, v));
                row[static_cast<std::size_t>(x) * 3 + c] =
                    static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw Error("write_ppm: write failed for " + path);
}

static int read_pnm_int(std::istream& is) {
    // skips whitespace and '#' comments
    int c = is.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#')
            while (c != EOF && c != '\n') c = is.get();
        c = is.get();
    }
    int v = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        any = true;
        c = is.get();
    }
    if (!any) throw Error("read_ppm: malformed header");
    return v;
}

RawPpm read_ppm_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("read_ppm: cannot open " + path);
    char m0 = 0, m1 = 0;
    is.get(m0);
    is.get(m1);
    if (m0 != 'P' || m1 != '6') throw Error("read_ppm: not a P6 file: " + path);
    RawPpm out;
    out.width = read_pnm_int(is);
    out.height = read_pnm_int(is);
    int maxval = read_pnm_int(is);
    if (maxval != 255) throw Error("read_ppm: only maxval 255 supported");
    out.rgb.resize(static_cast<std::size_t>(out.width) * out.height * 3);
    is.read(reinterpret_cast<char*>(out.rgb.data()), static_cast<std::streamsize>(out.rgb.size()));
    if (is.gcount() != static_cast<std::streamsize>(out.rgb.size()))
        throw Error("read_ppm: truncated pixel data in " + path);
    return out;
}

TensorPtr read_ppm(const std::string& path) {
    RawPpm raw = read_ppm_bytes(path);
    auto t = Tensor::leaf({3, raw.height, raw.width}, 0.0, false);
    const std::size_t plane = static_cast<std::size_t>(raw.height) * raw.width;
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c)
            t->values[c * plane + i] = static_cast<double>(raw.rgb[i * 3 + c]) / 255.0;
    return t;
}

void write_doubles_le(std::ostream& os, const double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const auto bits = std::bit_cast<std::uint64_t>(data[i]);
        unsigned char b[8];
        for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xff);
        os.write(reinterpret_cast<const char*>(b), 8);
    }
}

void read_doubles_le(std::istream& is, double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        unsigned char b[8];
        is.read(reinterpret_cast<char*>(b), 8);
        if (is.gcount() != 8) throw Error("read_doubles_le: truncated stream");
        std::uint64_t bits = 0;
        for (int k = 7; k >= 0; --k) bits = (bits << 8) | b[k];
        data[i] = std::bit_cast<double>(bits);
    }
}

std::uint64_t file_digest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("file_digest: cannot open " + path);
    std::uint64_t h = 1469598103934665603ULL;
    char buf[4096];
    while (is) {
        is.read(buf, sizeof buf);
        h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
    }
    return h;
}

} // namespace pf
