#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "gazeswap/error.hpp"

namespace gazeswap {

/// Three-channel double-precision image, interleaved RGB, values nominally in [0, 1].
class Image {
public:
    static constexpr int kChannels = 3;

    Image() = default;
    Image(int width, int height, double fill = 0.0) : width_(width), height_(height) {
        if (width < 1 || height < 1) fail(Errc::invalid_argument, "image dimensions must be at least 1");
        data_.assign(static_cast<std::size_t>(width) * height * kChannels, fill);
    }

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return data_.empty(); }
    bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

    double& at(int x, int y, int c) { return data_[index(x, y, c)]; }
    double at(int x, int y, int c) const { return data_[index(x, y, c)]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool operator==(const Image&) const = default;

private:
    std::size_t index(int x, int y, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

inline std::uint8_t quantize8(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline Image read_png(const std::filesystem::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        fail(Errc::io_error, "cannot read PNG " + path.string() + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        fail(Errc::io_error, "cannot decode PNG " + path.string() + ": " + img.message);
    }
    Image out(static_cast<int>(img.width), static_cast<int>(img.height));
    std::transform(buf.begin(), buf.end(), out.data().begin(), [](std::uint8_t b) { return b / 255.0; });
    return out;
}

inline std::vector<std::uint8_t> to_rgb8(const Image& image) {
    std::vector<std::uint8_t> buf(image.data().size());
    std::transform(image.data().begin(), image.data().end(), buf.begin(), quantize8);
    return buf;
}

inline void write_png(const std::filesystem::path& path, const Image& image) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width());
    img.height = static_cast<png_uint_32>(image.height());
    img.format = PNG_FORMAT_RGB;
    const auto buf = to_rgb8(image);
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
        fail(Errc::io_error, "cannot write PNG " + path.string() + ": " + img.message);
}

/// Encodes to an in-memory PNG (used by the annotation service).
inline std::string encode_png(const Image& image) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width());
    img.height = static_cast<png_uint_32>(image.height());
    img.format = PNG_FORMAT_RGB;
    const auto buf = to_rgb8(image);
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, buf.data(), 0, nullptr))
        fail(Errc::io_error, std::string("cannot size PNG: ") + img.message);
    std::string out(size, '\0');
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, buf.data(), 0, nullptr))
        fail(Errc::io_error, std::string("cannot encode PNG: ") + img.message);
    out.resize(size);
    return out;
}

inline Image decode_png(const std::string& bytes) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
        fail(Errc::io_error, std::string("cannot read PNG: ") + img.message);
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        fail(Errc::io_error, std::string("cannot decode PNG: ") + img.message);
    }
    Image out(static_cast<int>(img.width), static_cast<int>(img.height));
    std::transform(buf.begin(), buf.end(), out.data().begin(), [](std::uint8_t b) { return b / 255.0; });
    return out;
}

}  // namespace gazeswap
