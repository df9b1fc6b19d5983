#pragma once

// Toy video codec with the production compression geometry
// (t = T/4, h = H/16, w = W/16). Encoding is a space-to-depth rearrangement
// followed by a fixed orthogonal channel mix, so it is linear and exactly
// invertible when no channels are truncated.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dreamvvt/raster.hpp"
#include "dreamvvt/rng.hpp"

namespace dreamvvt {

struct VideoTensor {
    int frames = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;  // [T][H][W][3], values in [-1, 1]

    static constexpr int channels = 3;

    VideoTensor() = default;
    VideoTensor(int t, int h, int w) : frames(t), height(h), width(w), data(std::size_t(t) * h * w * 3, 0.0f) {}

    std::size_t index(int f, int y, int x, int c) const {
        return ((std::size_t(f) * height + y) * width + x) * 3 + c;
    }
    float& at(int f, int y, int x, int c) { return data[index(f, y, x, c)]; }
    float at(int f, int y, int x, int c) const { return data[index(f, y, x, c)]; }
};

struct LatentVideo {
    int t = 0;
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<float> data;  // [t][h][w][c]

    LatentVideo() = default;
    LatentVideo(int t_, int h_, int w_, int c_) : t(t_), h(h_), w(w_), c(c_), data(std::size_t(t_) * h_ * w_ * c_, 0.0f) {}

    std::size_t cells() const { return std::size_t(t) * h * w; }
    std::size_t index(int ti, int hi, int wi, int ci = 0) const {
        return ((std::size_t(ti) * h + hi) * w + wi) * c + ci;
    }
    float& at(int ti, int hi, int wi, int ci) { return data[index(ti, hi, wi, ci)]; }
    float at(int ti, int hi, int wi, int ci) const { return data[index(ti, hi, wi, ci)]; }
    bool same_grid(const LatentVideo& o) const { return t == o.t && h == o.h && w == o.w; }
    bool same_shape(const LatentVideo& o) const { return same_grid(o) && c == o.c; }

    // Copy of temporal slices [begin, end).
    LatentVideo slices(int begin, int end) const {
        if (begin < 0 || end > t || begin > end) throw std::out_of_range("latent slice range");
        LatentVideo out(end - begin, h, w, c);
        const std::size_t stride = std::size_t(h) * w * c;
        std::copy(data.begin() + begin * stride, data.begin() + end * stride, out.data.begin());
        return out;
    }
    void set_slices(int begin, const LatentVideo& src) {
        if (src.h != h || src.w != w || src.c != c || begin < 0 || begin + src.t > t)
            throw std::out_of_range("latent slice assignment");
        const std::size_t stride = std::size_t(h) * w * c;
        std::copy(src.data.begin(), src.data.end(), data.begin() + begin * stride);
    }
};

enum class Stream : std::uint32_t { text = 0, image = 1, video = 2 };

inline const char* to_string(Stream s) {
    switch (s) {
        case Stream::text: return "text";
        case Stream::image: return "image";
        case Stream::video: return "video";
    }
    return "?";
}

struct TokenSequence {
    Stream stream = Stream::video;
    int channels = 0;
    std::vector<float> tokens;                  // length() x channels
    std::vector<std::array<int, 3>> index_map;  // (t|k, h, w) per token
    int grid_t = 0, grid_h = 0, grid_w = 0;

    std::size_t length() const { return channels == 0 ? 0 : tokens.size() / channels; }
    const float* token(std::size_t i) const { return tokens.data() + i * channels; }
};

struct CodecConfig {
    int temporal_factor = 4;
    int spatial_factor = 16;
    int keep_channels = 0;  // 0 keeps all; truncation makes decoding lossy

    int full_channels(int tf) const { return 3 * tf * spatial_factor * spatial_factor; }
};

namespace detail {

inline void fwht(double* v, std::size_t n) {
    for (std::size_t len = 1; len < n; len <<= 1)
        for (std::size_t i = 0; i < n; i += len << 1)
            for (std::size_t j = i; j < i + len; ++j) {
                const double a = v[j], b = v[j + len];
                v[j] = a + b;
                v[j + len] = a - b;
            }
    const double s = 1.0 / std::sqrt(static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) v[i] *= s;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt3 = 0.57735026918962576451;
constexpr double kInvSqrt6 = 0.40824829046386301637;
constexpr double kMix3[3][3] = {
    {kInvSqrt3, kInvSqrt3, kInvSqrt3},
    {kInvSqrt2, -kInvSqrt2, 0.0},
    {kInvSqrt6, kInvSqrt6, -2.0 * kInvSqrt6},
};

inline double mix_sign(std::size_t i) { return (splitmix64(0xC0DEC0DEULL + i) & 1) ? -1.0 : 1.0; }

// Orthogonal mix on a length 3 * 2^m vector: sign flips, per-block Hadamard, 3x3 rotation across blocks.
inline void mix_forward(std::vector<double>& v) {
    const std::size_t n = v.size() / 3;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= mix_sign(i);
    for (int b = 0; b < 3; ++b) fwht(v.data() + b * n, n);
    for (std::size_t j = 0; j < n; ++j) {
        const double a[3] = {v[j], v[n + j], v[2 * n + j]};
        for (int r = 0; r < 3; ++r) v[r * n + j] = kMix3[r][0] * a[0] + kMix3[r][1] * a[1] + kMix3[r][2] * a[2];
    }
}

inline void mix_inverse(std::vector<double>& v) {
    const std::size_t n = v.size() / 3;
    for (std::size_t j = 0; j < n; ++j) {
        const double a[3] = {v[j], v[n + j], v[2 * n + j]};
        for (int r = 0; r < 3; ++r) v[r * n + j] = kMix3[0][r] * a[0] + kMix3[1][r] * a[1] + kMix3[2][r] * a[2];
    }
    for (int b = 0; b < 3; ++b) fwht(v.data() + b * n, n);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= mix_sign(i);
}

inline void check_geometry(const VideoTensor& v, int tf, int sf) {
    if (v.frames <= 0 || v.frames % tf != 0)
        throw std::invalid_argument("T=" + std::to_string(v.frames) + " not divisible by " + std::to_string(tf));
    if (v.height <= 0 || v.height % sf != 0)
        throw std::invalid_argument("H=" + std::to_string(v.height) + " not divisible by " + std::to_string(sf));
    if (v.width <= 0 || v.width % sf != 0)
        throw std::invalid_argument("W=" + std::to_string(v.width) + " not divisible by " + std::to_string(sf));
}

}  // namespace detail

inline LatentVideo encode(const VideoTensor& video, int temporal_factor, const CodecConfig& cfg = {}) {
    const int tf = temporal_factor, sf = cfg.spatial_factor;
    detail::check_geometry(video, tf, sf);
    const int full = cfg.full_channels(tf);
    const int keep = cfg.keep_channels > 0 ? std::min(cfg.keep_channels, full) : full;
    LatentVideo lat(video.frames / tf, video.height / sf, video.width / sf, keep);
    std::vector<double> buf(full);
    for (int ti = 0; ti < lat.t; ++ti)
        for (int hi = 0; hi < lat.h; ++hi)
            for (int wi = 0; wi < lat.w; ++wi) {
                std::size_t k = 0;
                for (int dt = 0; dt < tf; ++dt)
                    for (int dy = 0; dy < sf; ++dy)
                        for (int dx = 0; dx < sf; ++dx)
                            for (int ch = 0; ch < 3; ++ch)
                                buf[k++] = video.at(ti * tf + dt, hi * sf + dy, wi * sf + dx, ch);
                detail::mix_forward(buf);
                float* dst = &lat.at(ti, hi, wi, 0);
                for (int ci = 0; ci < keep; ++ci) dst[ci] = static_cast<float>(buf[ci]);
            }
    return lat;
}

inline VideoTensor decode(const LatentVideo& latent, int temporal_factor, const CodecConfig& cfg = {}) {
    const int tf = temporal_factor, sf = cfg.spatial_factor;
    const int full = cfg.full_channels(tf);
    if (latent.c <= 0 || latent.c > full)
        throw std::invalid_argument("decode: latent has " + std::to_string(latent.c) + " channels, codec expects <= " +
                                    std::to_string(full));
    if (latent.t <= 0 || latent.h <= 0 || latent.w <= 0) throw std::invalid_argument("decode: empty latent grid");
    VideoTensor video(latent.t * tf, latent.h * sf, latent.w * sf);
    std::vector<double> buf(full);
    for (int ti = 0; ti < latent.t; ++ti)
        for (int hi = 0; hi < latent.h; ++hi)
            for (int wi = 0; wi < latent.w; ++wi) {
                const float* src = latent.data.data() + latent.index(ti, hi, wi, 0);
                std::fill(buf.begin(), buf.end(), 0.0);
                for (int ci = 0; ci < latent.c; ++ci) buf[ci] = src[ci];
                detail::mix_inverse(buf);
                std::size_t k = 0;
                for (int dt = 0; dt < tf; ++dt)
                    for (int dy = 0; dy < sf; ++dy)
                        for (int dx = 0; dx < sf; ++dx)
                            for (int ch = 0; ch < 3; ++ch)
                                video.at(ti * tf + dt, hi * sf + dy, wi * sf + dx, ch) = static_cast<float>(buf[k++]);
            }
    return video;
}

inline LatentVideo encode_video(const VideoTensor& video, const CodecConfig& cfg = {}) {
    return encode(video, cfg.temporal_factor, cfg);
}
inline VideoTensor decode_video(const LatentVideo& latent, const CodecConfig& cfg = {}) {
    if (latent.c > cfg.full_channels(cfg.temporal_factor) || (cfg.keep_channels == 0 && latent.c != cfg.full_channels(cfg.temporal_factor)))
        throw std::invalid_argument("decode_video: latent channel count " + std::to_string(latent.c) +
                                    " does not match codec geometry");
    return decode(latent, cfg.temporal_factor, cfg);
}

// ---------------------------------------------------------------------------
// Frames <-> normalized tensors

inline VideoTensor to_video(const std::vector<Image>& frames) {
    if (frames.empty()) throw std::invalid_argument("to_video: no frames");
    VideoTensor v(static_cast<int>(frames.size()), frames[0].height, frames[0].width);
    for (int f = 0; f < v.frames; ++f) {
        const auto& img = frames[f];
        if (img.width != v.width || img.height != v.height || img.channels != 3)
            throw std::invalid_argument("to_video: frame " + std::to_string(f) + " has mismatched shape");
        for (int y = 0; y < v.height; ++y)
            for (int x = 0; x < v.width; ++x)
                for (int c = 0; c < 3; ++c) v.at(f, y, x, c) = img.at(x, y, c) / 127.5f - 1.0f;
    }
    return v;
}

inline std::vector<Image> to_images(const VideoTensor& v) {
    std::vector<Image> out;
    for (int f = 0; f < v.frames; ++f) {
        Image img(v.width, v.height, 3);
        for (int y = 0; y < v.height; ++y)
            for (int x = 0; x < v.width; ++x)
                for (int c = 0; c < 3; ++c)
                    img.at(x, y, c) = std::clamp((v.at(f, y, x, c) + 1.0f) * 127.5f, 0.0f, 255.0f);
        out.push_back(std::move(img));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tokens

inline TokenSequence patchify(const LatentVideo& latent, Stream stream = Stream::video) {
    TokenSequence seq;
    seq.stream = stream;
    seq.channels = latent.c;
    seq.tokens = latent.data;  // row-major (t, h, w) already matches token order
    seq.grid_t = latent.t;
    seq.grid_h = latent.h;
    seq.grid_w = latent.w;
    seq.index_map.reserve(latent.cells());
    for (int t = 0; t < latent.t; ++t)
        for (int h = 0; h < latent.h; ++h)
            for (int w = 0; w < latent.w; ++w) seq.index_map.push_back({t, h, w});
    return seq;
}

inline LatentVideo unpatchify(const TokenSequence& seq) {
    LatentVideo lat(seq.grid_t, seq.grid_h, seq.grid_w, seq.channels);
    if (seq.index_map.size() != lat.cells() || seq.tokens.size() != lat.data.size())
        throw std::invalid_argument("unpatchify: token count does not match grid");
    for (std::size_t i = 0; i < seq.index_map.size(); ++i) {
        const auto& [t, h, w] = seq.index_map[i];
        std::copy(seq.token(i), seq.token(i) + seq.channels, &lat.at(t, h, w, 0));
    }
    return lat;
}

/// Keyframes are encoded one by one with a spatial-only rearrangement so they
/// share the video's (h, w) grid; the token grid is (k, h, w).
inline TokenSequence encode_keyframes(const std::vector<Image>& images, const CodecConfig& cfg = {}) {
    TokenSequence seq;
    seq.stream = Stream::image;
    seq.channels = cfg.keep_channels > 0 ? std::min(cfg.keep_channels, cfg.full_channels(1)) : cfg.full_channels(1);
    if (images.empty()) return seq;
    for (const auto& img : images)
        if (img.width != images[0].width || img.height != images[0].height)
            throw std::invalid_argument("encode_keyframes: mixed resolutions " +
                                        shape_string(images[0].width, images[0].height) + " and " +
                                        shape_string(img.width, img.height));
    const auto lat = encode(to_video(images), 1, cfg);
    seq = patchify(lat, Stream::image);
    return seq;
}

inline LatentVideo encode_image(const Image& img, const CodecConfig& cfg = {}) {
    return encode(to_video({img}), 1, cfg);
}
inline Image decode_image(const LatentVideo& lat, const CodecConfig& cfg = {}) {
    return to_images(decode(lat, 1, cfg)).at(0);
}

/// Max-pool a per-frame mask to the latent grid: a cell is masked when any
/// covered pixel is.
inline LatentVideo resize_mask_to_latent(const std::vector<Mask>& masks, const CodecConfig& cfg = {}) {
    const int tf = cfg.temporal_factor, sf = cfg.spatial_factor;
    if (masks.empty() || masks.size() % tf != 0)
        throw std::invalid_argument("mask frames " + std::to_string(masks.size()) + " not divisible by " +
                                    std::to_string(tf));
    const int H = masks[0].height, W = masks[0].width;
    if (H % sf != 0 || W % sf != 0) throw std::invalid_argument("mask size " + shape_string(W, H) + " not divisible by 16");
    for (const auto& m : masks)
        if (!m.same_size(W, H)) throw std::invalid_argument("mask frames differ in size");
    LatentVideo out(static_cast<int>(masks.size()) / tf, H / sf, W / sf, 1);
    for (int f = 0; f < static_cast<int>(masks.size()); ++f)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                if (masks[f].at(x, y)) out.at(f / tf, y / sf, x / sf, 0) = 1.0f;
    return out;
}

// ---------------------------------------------------------------------------
// Binary latent files: 32-byte little-endian header then float32 payload.
//   0  magic "DVLT"     16 c   (u32)
//   4  t   (u32)        20 stream tag (u32)
//   8  h   (u32)        24 config hash (u64)
//   12 w   (u32)

namespace detail {
inline void put_u32(unsigned char* p, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) p[i] = static_cast<unsigned char>(v >> (8 * i));
}
inline std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
    return v;
}
}  // namespace detail

struct LatentFile {
    LatentVideo latent;
    Stream stream = Stream::video;
    std::uint64_t config_hash = 0;
};

inline void write_latent(const std::string& path, const LatentVideo& lat, Stream stream, std::uint64_t config_hash) {
    unsigned char header[32] = {'D', 'V', 'L', 'T'};
    detail::put_u32(header + 4, lat.t);
    detail::put_u32(header + 8, lat.h);
    detail::put_u32(header + 12, lat.w);
    detail::put_u32(header + 16, lat.c);
    detail::put_u32(header + 20, static_cast<std::uint32_t>(stream));
    detail::put_u32(header + 24, static_cast<std::uint32_t>(config_hash));
    detail::put_u32(header + 28, static_cast<std::uint32_t>(config_hash >> 32));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write latent file " + path);
    out.write(reinterpret_cast<const char*>(header), 32);
    std::vector<unsigned char> payload(lat.data.size() * 4);
    for (std::size_t i = 0; i < lat.data.size(); ++i)
        detail::put_u32(payload.data() + 4 * i, std::bit_cast<std::uint32_t>(lat.data[i]));
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
}

inline LatentFile read_latent(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read latent file " + path);
    unsigned char header[32];
    if (!in.read(reinterpret_cast<char*>(header), 32) || std::memcmp(header, "DVLT", 4) != 0)
        throw std::runtime_error("bad latent header in " + path);
    LatentFile f;
    f.latent = LatentVideo(detail::get_u32(header + 4), detail::get_u32(header + 8), detail::get_u32(header + 12),
                           detail::get_u32(header + 16));
    f.stream = static_cast<Stream>(detail::get_u32(header + 20));
    f.config_hash = detail::get_u32(header + 24) | (std::uint64_t(detail::get_u32(header + 28)) << 32);
    std::vector<unsigned char> payload(f.latent.data.size() * 4);
    if (!in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size())))
        throw std::runtime_error("truncated latent payload in " + path);
    for (std::size_t i = 0; i < f.latent.data.size(); ++i)
        f.latent.data[i] = std::bit_cast<float>(detail::get_u32(payload.data() + 4 * i));
    return f;
}

}  // namespace dreamvvt
