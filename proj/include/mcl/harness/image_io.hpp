#pragma once

// Binary PPM (P6, maxval 255) for [3,H,W] float images in [0,1].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcl/tensor.hpp"

namespace mcl {

template <class T>
std::uint8_t to_byte(T v) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

template <class T>
void write_ppm(const std::string& path, const Tensor<T>& img) {
    if (img.rank() != 3 || img.dim(0) != 3) throw std::invalid_argument("write_ppm: image must be [3,H,W]");
    const std::size_t H = img.dim(1), W = img.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_ppm: cannot open " + path + " for writing");
    out << "P6\n" << W << " " << H << "\n255\n";
    std::vector<std::uint8_t> row(3 * W);
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c) row[3 * x + c] = to_byte(img.at(c, y, x));
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw std::runtime_error("write_ppm: write failed for " + path);
}

namespace ppm_detail {

// Next header token, skipping whitespace and # comments.
inline std::string token(std::istream& in) {
    std::string t;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {}
            continue;
        }
        if (std::isspace(ch)) {
            if (!t.empty()) break;
            continue;
        }
        t.push_back(static_cast<char>(ch));
    }
    return t;
}

}  // namespace ppm_detail

template <class T = float>
Tensor<T> read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
    if (ppm_detail::token(in) != "P6") throw std::runtime_error("read_ppm: " + path + " is not a binary PPM (P6)");
    std::size_t W = 0, H = 0, maxval = 0;
    try {
        W = std::stoul(ppm_detail::token(in));
        H = std::stoul(ppm_detail::token(in));
        maxval = std::stoul(ppm_detail::token(in));
    } catch (const std::exception&) {
        throw std::runtime_error("read_ppm: malformed header in " + path);
    }
    if (W == 0 || H == 0 || maxval == 0 || maxval > 255)
        throw std::runtime_error("read_ppm: unsupported size or maxval in " + path);
    std::vector<std::uint8_t> buf(3 * W * H);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw std::runtime_error("read_ppm: truncated " + path);
    Tensor<T> img({3, H, W});
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                img.at(c, y, x) = static_cast<T>(static_cast<double>(buf[3 * (y * W + x) + c]) / static_cast<double>(maxval));
    return img;
}

}  // namespace mcl
