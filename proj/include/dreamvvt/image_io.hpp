#pragma once

// PNG and JSON file IO for frames, masks, skeletons, boxes and windows.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dreamvvt/pose.hpp"
#include "dreamvvt/raster.hpp"

namespace dreamvvt {

inline constexpr const char* kConfigHashKey = "dreamvvt:config_hash";

using PngText = std::map<std::string, std::string>;

struct PngImage {
    Image image;
    PngText text;
};

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw std::runtime_error("cannot open " + path.string());
    return f;
}

[[noreturn]] inline void png_fail(png_structp png, png_const_charp msg) {
    (void)png;
    throw std::runtime_error(std::string("png: ") + msg);
}

inline void png_warn(png_structp, png_const_charp) {}

}  // namespace detail

/// 8-bit PNG; values are rounded and clamped to [0, 255]. Gray for one
/// channel, RGB for three.
inline void write_png(const std::filesystem::path& path, const Image& img, const PngText& text = {}) {
    if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("write_png: need 1 or 3 channels");
    auto file = detail::open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_fail, detail::png_warn);
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp& p;
        png_infop& i;
        ~Guard() { png_destroy_write_struct(&p, &i); }
    } guard{png, info};
    png_init_io(png, file.get());
    png_set_IHDR(png, info, img.width, img.height, 8, img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    std::vector<png_text> chunks;
    std::vector<std::string> storage;
    for (const auto& [k, v] : text) {
        storage.push_back(k);
        storage.push_back(v);
    }
    for (std::size_t i = 0; i < storage.size(); i += 2) {
        png_text t{};
        t.compression = PNG_TEXT_COMPRESSION_NONE;
        t.key = storage[i].data();
        t.text = storage[i + 1].data();
        t.text_length = storage[i + 1].size();
        chunks.push_back(t);
    }
    if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
    png_write_info(png, info);
    std::vector<png_byte> row(std::size_t(img.width) * img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                row[std::size_t(x) * img.channels + c] =
                    static_cast<png_byte>(std::clamp(std::lround(img.at(x, y, c)), 0L, 255L));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
}

inline PngImage read_png(const std::filesystem::path& path) {
    auto file = detail::open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_fail, detail::png_warn);
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp& p;
        png_infop& i;
        ~Guard() { png_destroy_read_struct(&p, &i, nullptr); }
    } guard{png, info};
    png_init_io(png, file.get());
    png_read_info(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int channels = png_get_channels(png, info);

    PngImage out;
    out.image = Image(width, height, channels);
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    for (int y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < channels; ++c) out.image.at(x, y, c) = row[std::size_t(x) * channels + c];
    }
    png_read_end(png, info);
    png_textp texts = nullptr;
    int n = 0;
    png_get_text(png, info, &texts, &n);
    for (int i = 0; i < n; ++i) out.text[texts[i].key] = std::string(texts[i].text, texts[i].text_length);
    return out;
}

inline void write_mask_png(const std::filesystem::path& path, const Mask& m, const PngText& text = {}) {
    Image img(m.width, m.height, 1);
    for (std::size_t i = 0; i < m.data.size(); ++i) img.data[i] = m.data[i] ? 255.0f : 0.0f;
    write_png(path, img, text);
}

inline Mask read_mask_png(const std::filesystem::path& path) {
    const auto p = read_png(path);
    Mask m(p.image.width, p.image.height, 1);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) m.at(x, y) = p.image.at(x, y, 0) >= 128.0f ? 1 : 0;
    return m;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

// {"fps": 25, "width": W, "height": H, "frames": [{"joints": [[x, y, conf], ...]}, ...]}
inline SkeletonSequence skeletons_from_json(const nlohmann::json& j) {
    SkeletonSequence seq;
    seq.fps = j.value("fps", 25.0);
    const int w = j.at("width"), h = j.at("height");
    for (const auto& f : j.at("frames")) {
        Skeleton s;
        s.frame_width = w;
        s.frame_height = h;
        for (const auto& jt : f.at("joints")) s.joints.push_back({jt.at(0), jt.at(1), jt.size() > 2 ? double(jt.at(2)) : 1.0});
        seq.frames.push_back(std::move(s));
    }
    seq.validate();
    return seq;
}

inline nlohmann::ordered_json to_json(const SkeletonSequence& seq) {
    nlohmann::ordered_json j;
    j["fps"] = seq.fps;
    j["width"] = seq.width();
    j["height"] = seq.height();
    auto& frames = j["frames"] = nlohmann::ordered_json::array();
    for (const auto& f : seq.frames) {
        nlohmann::ordered_json joints = nlohmann::ordered_json::array();
        for (const auto& jt : f.joints) joints.push_back({jt.x, jt.y, jt.confidence});
        frames.push_back({{"joints", joints}});
    }
    return j;
}

// Single skeleton: {"width": W, "height": H, "joints": [[x, y, conf], ...]}
inline Skeleton skeleton_from_json(const nlohmann::json& j) {
    Skeleton s;
    s.frame_width = j.at("width");
    s.frame_height = j.at("height");
    for (const auto& jt : j.at("joints")) s.joints.push_back({jt.at(0), jt.at(1), jt.size() > 2 ? double(jt.at(2)) : 1.0});
    return s;
}

inline nlohmann::ordered_json to_json(const Skeleton& s) {
    nlohmann::ordered_json j;
    j["width"] = s.frame_width;
    j["height"] = s.frame_height;
    auto& joints = j["joints"] = nlohmann::ordered_json::array();
    for (const auto& jt : s.joints) joints.push_back({jt.x, jt.y, jt.confidence});
    return j;
}

inline nlohmann::ordered_json to_json(const Rect& r) { return {r.x, r.y, r.width, r.height}; }
inline Rect rect_from_json(const nlohmann::json& j) { return {j.at(0), j.at(1), j.at(2), j.at(3)}; }

inline std::vector<Rect> rects_from_json(const nlohmann::json& j) {
    std::vector<Rect> out;
    for (const auto& r : j) out.push_back(rect_from_json(r));
    return out;
}

inline nlohmann::ordered_json to_json(const std::vector<Rect>& rs) {
    auto j = nlohmann::ordered_json::array();
    for (const auto& r : rs) j.push_back(to_json(r));
    return j;
}

inline nlohmann::ordered_json to_json(const TrackingWindow& tw) {
    nlohmann::ordered_json j;
    j["width"] = tw.width;
    j["height"] = tw.height;
    auto& o = j["origins"] = nlohmann::ordered_json::array();
    for (const auto& [x, y] : tw.origins) o.push_back({x, y});
    j["warnings"] = tw.warnings;
    return j;
}

inline TrackingWindow tracking_window_from_json(const nlohmann::json& j) {
    TrackingWindow tw;
    tw.width = j.at("width");
    tw.height = j.at("height");
    for (const auto& o : j.at("origins")) tw.origins.emplace_back(o.at(0), o.at(1));
    if (j.contains("warnings")) tw.warnings = j.at("warnings").get<std::vector<std::string>>();
    return tw;
}

// Sorted *.png files of a directory.
inline std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> out;
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector<Image> read_frames(const std::filesystem::path& dir, std::string* config_hash = nullptr) {
    std::vector<Image> frames;
    for (const auto& p : list_pngs(dir)) {
        auto png = read_png(p);
        if (config_hash) {
            auto it = png.text.find(kConfigHashKey);
            const std::string h = it == png.text.end() ? std::string() : it->second;
            if (frames.empty())
                *config_hash = h;
            else if (*config_hash != h)
                throw std::runtime_error("frames in " + dir.string() + " carry different config hashes");
        }
        frames.push_back(std::move(png.image));
    }
    return frames;
}

inline std::string frame_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%04zu.png", i);
    return buf;
}

}  // namespace dreamvvt
