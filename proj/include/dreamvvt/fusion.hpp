#pragma once

// Laplacian-pyramid blending of generated crops back into full frames.

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dreamvvt/raster.hpp"

namespace dreamvvt {

// Multi-channel double-precision plane, interleaved like Raster.
struct Plane {
    int width = 0, height = 0, channels = 0;
    std::vector<double> data;

    Plane() = default;
    Plane(int w, int h, int c, double fill = 0.0) : width(w), height(h), channels(c), data(std::size_t(w) * h * c, fill) {}

    double& at(int x, int y, int c) { return data[(std::size_t(y) * width + x) * channels + c]; }
    double at(int x, int y, int c) const { return data[(std::size_t(y) * width + x) * channels + c]; }
};

template <typename P>
Plane to_plane(const Raster<P>& r) {
    Plane p(r.width, r.height, r.channels);
    for (std::size_t i = 0; i < r.data.size(); ++i) p.data[i] = static_cast<double>(r.data[i]);
    return p;
}

inline Image to_image(const Plane& p) {
    Image r(p.width, p.height, p.channels);
    for (std::size_t i = 0; i < p.data.size(); ++i) r.data[i] = static_cast<float>(p.data[i]);
    return r;
}

namespace detail {

inline constexpr std::array<double, 5> kBinomial = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};

inline int reflect(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
}

inline Plane blur(const Plane& src) {
    Plane tmp(src.width, src.height, src.channels), out(src.width, src.height, src.channels);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x)
            for (int c = 0; c < src.channels; ++c) {
                double acc = 0.0;
                for (int k = -2; k <= 2; ++k) acc += kBinomial[k + 2] * src.at(reflect(x + k, src.width), y, c);
                tmp.at(x, y, c) = acc;
            }
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x)
            for (int c = 0; c < src.channels; ++c) {
                double acc = 0.0;
                for (int k = -2; k <= 2; ++k) acc += kBinomial[k + 2] * tmp.at(x, reflect(y + k, src.height), c);
                out.at(x, y, c) = acc;
            }
    return out;
}

}  // namespace detail

inline Plane pyr_down(const Plane& src) {
    const Plane b = detail::blur(src);
    Plane out(src.width / 2, src.height / 2, src.channels);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < src.channels; ++c) out.at(x, y, c) = b.at(2 * x, 2 * y, c);
    return out;
}

inline Plane pyr_up(const Plane& src, int width, int height) {
    Plane z(width, height, src.channels);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x)
            for (int c = 0; c < src.channels; ++c) z.at(2 * x, 2 * y, c) = 4.0 * src.at(x, y, c);
    return detail::blur(z);
}

struct LaplacianPyramid {
    std::vector<Plane> levels;  // band-pass levels, last one is the low-pass residual

    int depth() const { return static_cast<int>(levels.size()); }
};

inline void check_pyramid_dims(int width, int height, int levels) {
    if (levels < 1) throw std::invalid_argument("pyramid: need at least one level");
    const int f = 1 << (levels - 1);
    if (width % f != 0 || height % f != 0)
        throw std::invalid_argument("pyramid: " + shape_string(width, height) + " not divisible by " + std::to_string(f));
}

inline std::vector<Plane> gaussian_pyramid(const Plane& src, int levels) {
    check_pyramid_dims(src.width, src.height, levels);
    std::vector<Plane> g{src};
    for (int l = 1; l < levels; ++l) g.push_back(pyr_down(g.back()));
    return g;
}

inline LaplacianPyramid build_pyramid(const Plane& src, int levels) {
    const auto g = gaussian_pyramid(src, levels);
    LaplacianPyramid p;
    for (int l = 0; l + 1 < levels; ++l) {
        Plane band = g[l];
        const Plane up = pyr_up(g[l + 1], g[l].width, g[l].height);
        for (std::size_t i = 0; i < band.data.size(); ++i) band.data[i] -= up.data[i];
        p.levels.push_back(std::move(band));
    }
    p.levels.push_back(g.back());
    return p;
}

template <typename P>
LaplacianPyramid build_pyramid(const Raster<P>& img, int levels) {
    return build_pyramid(to_plane(img), levels);
}

inline Plane reconstruct(const LaplacianPyramid& p) {
    if (p.levels.empty()) throw std::invalid_argument("reconstruct: empty pyramid");
    Plane x = p.levels.back();
    for (int l = p.depth() - 2; l >= 0; --l) {
        Plane up = pyr_up(x, p.levels[l].width, p.levels[l].height);
        for (std::size_t i = 0; i < up.data.size(); ++i) up.data[i] += p.levels[l].data[i];
        x = std::move(up);
    }
    return x;
}

/// Blends `generated` over the `window` region of `original`. Per level the
/// result is m_l g_l + (1 - m_l) o_l with m_l the Gaussian pyramid of the
/// mask; it is computed as o + reconstruct(m_l (g_l - o_l)), so a zero mask
/// returns the original untouched.
inline Image pyramid_fuse(const Image& original, const Image& generated, const Raster<float>& mask, const Rect& window,
                          int levels = 4) {
    const int wx = static_cast<int>(window.x), wy = static_cast<int>(window.y);
    const int ww = static_cast<int>(window.width), wh = static_cast<int>(window.height);
    if (window.x < 0 || window.y < 0 || window.right() > original.width || window.bottom() > original.height)
        throw std::invalid_argument("fuse: window outside frame");
    if (generated.width != ww || generated.height != wh || generated.channels != original.channels)
        throw std::invalid_argument("fuse: generated crop " + shape_string(generated.width, generated.height) +
                                    " does not match window " + shape_string(ww, wh));
    if (!mask.same_size(ww, wh) || mask.channels != 1)
        throw std::invalid_argument("fuse: mask does not match window");
    check_pyramid_dims(ww, wh, levels);

    const Image o = crop(original, wx, wy, ww, wh);
    Plane diff = to_plane(generated);
    for (std::size_t i = 0; i < diff.data.size(); ++i) diff.data[i] -= o.data[i];
    LaplacianPyramid bands = build_pyramid(diff, levels);
    const auto m = gaussian_pyramid(to_plane(mask), levels);
    for (int l = 0; l < levels; ++l) {
        auto& b = bands.levels[l];
        for (int y = 0; y < b.height; ++y)
            for (int x = 0; x < b.width; ++x)
                for (int c = 0; c < b.channels; ++c) b.at(x, y, c) *= m[l].at(x, y, 0);
    }
    const Plane delta = reconstruct(bands);
    Image blended = o;
    for (std::size_t i = 0; i < blended.data.size(); ++i)
        if (delta.data[i] != 0.0) blended.data[i] = static_cast<float>(o.data[i] + delta.data[i]);
    Image out = original;
    paste(out, blended, wx, wy);
    return out;
}

inline Image pyramid_fuse(const Image& original, const Image& generated, const Mask& mask, const Rect& window,
                          int levels = 4) {
    Raster<float> soft(mask.width, mask.height, 1);
    for (std::size_t i = 0; i < mask.data.size(); ++i) soft.data[i] = mask.data[i] ? 1.0f : 0.0f;
    return pyramid_fuse(original, generated, soft, window, levels);
}

inline Image hard_paste(const Image& original, const Image& generated, const Mask& mask, const Rect& window) {
    Image out = original;
    const int wx = static_cast<int>(window.x), wy = static_cast<int>(window.y);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y))
                for (int c = 0; c < out.channels; ++c) out.at(wx + x, wy + y, c) = generated.at(x, y, c);
    return out;
}

/// Sum of squared second differences (horizontal and vertical) over a region.
inline double second_difference_energy(const Image& img, const Rect& region) {
    double e = 0.0;
    for (int y = int(region.y); y < int(region.bottom()); ++y)
        for (int x = int(region.x); x < int(region.right()); ++x)
            for (int c = 0; c < img.channels; ++c) {
                if (x > 0 && x + 1 < img.width) {
                    const double d = img.at(x - 1, y, c) - 2.0 * img.at(x, y, c) + img.at(x + 1, y, c);
                    e += d * d;
                }
                if (y > 0 && y + 1 < img.height) {
                    const double d = img.at(x, y - 1, c) - 2.0 * img.at(x, y, c) + img.at(x, y + 1, c);
                    e += d * d;
                }
            }
    return e;
}

}  // namespace dreamvvt
