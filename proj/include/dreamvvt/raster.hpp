#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dreamvvt {

// Axis-aligned pixel rectangle: origin (x, y) plus extent.
struct Rect {
    double x = 0.0;
    double y = 0.0;
    double width = 0.0;
    double height = 0.0;

    double area() const { return width * height; }
    double right() const { return x + width; }
    double bottom() const { return y + height; }

    bool operator==(const Rect&) const = default;
};

// Interleaved row-major raster (height x width x channels).
template <typename T>
struct Raster {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<T> data;

    Raster() = default;
    Raster(int w, int h, int c, T fill = T{})
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {
        if (w < 0 || h < 0 || c <= 0) throw std::invalid_argument("invalid raster shape");
    }

    std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    T& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    const T& at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    bool same_shape(const Raster& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
    bool same_size(int w, int h) const { return width == w && height == h; }
    bool empty() const { return data.empty(); }

    bool operator==(const Raster&) const = default;
};

// Frames are float rasters in [0, 255]; masks are single-channel {0, 1}.
using Image = Raster<float>;
using Mask = Raster<std::uint8_t>;

inline std::string shape_string(int w, int h) {
    return std::to_string(w) + "x" + std::to_string(h);
}

template <typename T>
Raster<T> crop(const Raster<T>& src, int x0, int y0, int w, int h) {
    if (x0 < 0 || y0 < 0 || x0 + w > src.width || y0 + h > src.height)
        throw std::out_of_range("crop window " + shape_string(w, h) + "@" + std::to_string(x0) + "," +
                                std::to_string(y0) + " outside raster " + shape_string(src.width, src.height));
    Raster<T> out(w, h, src.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < src.channels; ++c) out.at(x, y, c) = src.at(x0 + x, y0 + y, c);
    return out;
}

template <typename T>
void paste(Raster<T>& dst, const Raster<T>& src, int x0, int y0) {
    if (dst.channels != src.channels) throw std::invalid_argument("paste: channel mismatch");
    if (x0 < 0 || y0 < 0 || x0 + src.width > dst.width || y0 + src.height > dst.height)
        throw std::out_of_range("paste window outside destination raster");
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x)
            for (int c = 0; c < src.channels; ++c) dst.at(x0 + x, y0 + y, c) = src.at(x, y, c);
}

}  // namespace dreamvvt
