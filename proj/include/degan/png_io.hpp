#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace degan {

/// 8-bit interleaved image buffer (row-major, `channels` = 1 or 3).
struct Image8 {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t& at(int y, int x, int c) {
        return pixels[static_cast<size_t>((y * width + x) * channels + c)];
    }
    std::uint8_t at(int y, int x, int c) const {
        return pixels[static_cast<size_t>((y * width + x) * channels + c)];
    }
};

Image8 read_png(const std::string& path);
void write_png(const std::string& path, const Image8& img);

}  // namespace degan
