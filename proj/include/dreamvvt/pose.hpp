#pragma once

// Pose-derived visual conditions: bone directions, uniform tracking windows,
// clothing-agnostic masks and images, and garment normalization.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dreamvvt/raster.hpp"

namespace dreamvvt {

struct Joint {
    double x = 0.0;
    double y = 0.0;
    double confidence = 1.0;

    bool operator==(const Joint&) const = default;
};

struct Skeleton {
    std::vector<Joint> joints;
    int frame_width = 0;
    int frame_height = 0;

    bool present(std::size_t j, double min_confidence) const {
        return j < joints.size() && joints[j].confidence >= min_confidence;
    }
    bool operator==(const Skeleton&) const = default;
};

struct SkeletonSequence {
    std::vector<Skeleton> frames;
    double fps = 25.0;

    int width() const { return frames.empty() ? 0 : frames.front().frame_width; }
    int height() const { return frames.empty() ? 0 : frames.front().frame_height; }

    void validate() const {
        for (const auto& f : frames) {
            if (f.frame_width != width() || f.frame_height != height())
                throw std::invalid_argument("skeleton sequence: frame dimensions differ across frames");
            if (f.joints.size() != frames.front().joints.size())
                throw std::invalid_argument("skeleton sequence: joint count differs across frames");
            for (const auto& j : f.joints)
                if (!(j.confidence >= 0.0 && j.confidence <= 1.0))
                    throw std::invalid_argument("skeleton sequence: confidence outside [0,1]");
        }
    }
};

// COCO-17 joint indices.
namespace coco {
enum : int {
    nose = 0, left_eye, right_eye, left_ear, right_ear,
    left_shoulder, right_shoulder, left_elbow, right_elbow, left_wrist, right_wrist,
    left_hip, right_hip, left_knee, right_knee, left_ankle, right_ankle,
    joint_count
};
}

struct Bone {
    int parent = 0;
    int child = 0;
    bool operator==(const Bone&) const = default;
};

struct BoneGraph {
    std::vector<Bone> bones;

    void validate(std::size_t joint_count) const {
        for (const auto& b : bones) {
            if (b.parent < 0 || b.child < 0 || static_cast<std::size_t>(b.parent) >= joint_count ||
                static_cast<std::size_t>(b.child) >= joint_count)
                throw std::out_of_range("bone graph: joint index out of range");
            if (b.parent == b.child) throw std::invalid_argument("bone graph: self-loop");
        }
    }

    // 14 body bones over the COCO-17 layout (face joints only reach the shoulders via the nose).
    static BoneGraph coco17() {
        using namespace coco;
        return BoneGraph{{
            {left_shoulder, right_shoulder},
            {left_shoulder, left_elbow}, {left_elbow, left_wrist},
            {right_shoulder, right_elbow}, {right_elbow, right_wrist},
            {left_shoulder, left_hip}, {right_shoulder, right_hip}, {left_hip, right_hip},
            {left_hip, left_knee}, {left_knee, left_ankle},
            {right_hip, right_knee}, {right_knee, right_ankle},
            {nose, left_shoulder}, {nose, right_shoulder},
        }};
    }
};

struct PoseOptions {
    double min_confidence = 0.3;
    double bone_epsilon = 1e-6;
};

using Direction = std::optional<std::array<double, 2>>;

inline std::vector<Direction> compute_joint_directions(const Skeleton& skeleton, const BoneGraph& bones,
                                                       const PoseOptions& opt = {}) {
    bones.validate(skeleton.joints.size());
    std::vector<Direction> out;
    out.reserve(bones.bones.size());
    for (const auto& b : bones.bones) {
        if (!skeleton.present(b.parent, opt.min_confidence) || !skeleton.present(b.child, opt.min_confidence)) {
            out.emplace_back(std::nullopt);
            continue;
        }
        const auto& p = skeleton.joints[b.parent];
        const auto& c = skeleton.joints[b.child];
        const double dx = c.x - p.x;
        const double dy = c.y - p.y;
        const double len = std::hypot(dx, dy);
        if (len < opt.bone_epsilon) {
            out.emplace_back(std::nullopt);
            continue;
        }
        out.emplace_back(std::array<double, 2>{dx / len, dy / len});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tracking windows

struct TrackingWindow {
    std::vector<std::pair<int, int>> origins;
    int width = 0;
    int height = 0;
    std::vector<std::string> warnings;

    Rect rect(std::size_t frame) const {
        return {static_cast<double>(origins.at(frame).first), static_cast<double>(origins.at(frame).second),
                static_cast<double>(width), static_cast<double>(height)};
    }
};

inline int round_up_to(int v, int multiple) { return (v + multiple - 1) / multiple * multiple; }

/// One window size for the whole clip: the largest padded subject extent,
/// rounded up to a multiple of 16. Each frame's window is centred on its
/// subject box and clamped into the frame.
inline TrackingWindow compute_tracking_windows(const std::vector<Rect>& subject_bboxes, int frame_width,
                                               int frame_height, double padding_ratio = 0.0) {
    if (subject_bboxes.empty()) throw std::invalid_argument("tracking windows: no bounding boxes");
    if (padding_ratio < 0.0) throw std::invalid_argument("tracking windows: negative padding ratio");
    TrackingWindow tw;
    double max_w = 0.0, max_h = 0.0;
    for (const auto& b : subject_bboxes) {
        max_w = std::max(max_w, b.width * (1.0 + padding_ratio));
        max_h = std::max(max_h, b.height * (1.0 + padding_ratio));
    }
    tw.width = round_up_to(static_cast<int>(std::ceil(max_w - 1e-9)), 16);
    tw.height = round_up_to(static_cast<int>(std::ceil(max_h - 1e-9)), 16);
    auto clamp_extent = [&](int& extent, int frame, const char* axis) {
        if (extent <= frame) return;
        const int fitted = frame >= 16 ? frame / 16 * 16 : frame;
        tw.warnings.push_back(std::string("window ") + axis + " " + std::to_string(extent) + " exceeds frame " +
                              std::to_string(frame) + "; clamped to " + std::to_string(fitted));
        extent = fitted;
    };
    clamp_extent(tw.width, frame_width, "width");
    clamp_extent(tw.height, frame_height, "height");

    for (const auto& b : subject_bboxes) {
        const double cx = b.x + b.width / 2.0;
        const double cy = b.y + b.height / 2.0;
        int ox = static_cast<int>(std::floor(cx - tw.width / 2.0 + 0.5));
        int oy = static_cast<int>(std::floor(cy - tw.height / 2.0 + 0.5));
        ox = std::clamp(ox, 0, frame_width - tw.width);
        oy = std::clamp(oy, 0, frame_height - tw.height);
        tw.origins.emplace_back(ox, oy);
    }
    return tw;
}

// Re-express a frame-space skeleton / box inside a crop window.
inline Skeleton to_crop(const Skeleton& s, int ox, int oy, int w, int h) {
    Skeleton out = s;
    for (auto& j : out.joints) {
        j.x -= ox;
        j.y -= oy;
    }
    out.frame_width = w;
    out.frame_height = h;
    return out;
}

inline Rect to_crop(const Rect& r, int ox, int oy) { return {r.x - ox, r.y - oy, r.width, r.height}; }

// ---------------------------------------------------------------------------
// Agnostic masks

enum class GarmentScope { upper, lower, full };

inline GarmentScope parse_scope(const std::string& s) {
    if (s == "upper") return GarmentScope::upper;
    if (s == "lower") return GarmentScope::lower;
    if (s == "full") return GarmentScope::full;
    throw std::invalid_argument("unknown garment scope '" + s + "'");
}

inline const char* to_string(GarmentScope s) {
    switch (s) {
        case GarmentScope::upper: return "upper";
        case GarmentScope::lower: return "lower";
        case GarmentScope::full: return "full";
    }
    return "full";
}

inline std::vector<int> scope_joints(GarmentScope scope) {
    using namespace coco;
    std::vector<int> upper = {left_shoulder, right_shoulder, left_elbow, right_elbow,
                              left_wrist, right_wrist, left_hip, right_hip};
    std::vector<int> lower = {left_hip, right_hip, left_knee, right_knee, left_ankle, right_ankle};
    switch (scope) {
        case GarmentScope::upper: return upper;
        case GarmentScope::lower: return lower;
        case GarmentScope::full: break;
    }
    std::vector<int> all = upper;
    for (int j : lower)
        if (std::find(all.begin(), all.end(), j) == all.end()) all.push_back(j);
    return all;
}

inline double point_segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(px - (ax + t * vx), py - (ay + t * vy));
}

struct MaskOptions {
    double dilation_radius = 12.0;
    GarmentScope scope = GarmentScope::full;
    double min_confidence = 0.3;
};

/// Mask (1 = regenerate) over the skeleton's raster: scope limbs dilated by the
/// radius, united with the box spanned by the scope joints, clipped to the
/// subject box. Pixels are tested at their centres (x + 0.5, y + 0.5).
inline Mask make_agnostic_mask(const Skeleton& skeleton, const Rect& subject_bbox, const MaskOptions& opt,
                               const BoneGraph& bones = BoneGraph::coco17()) {
    if (!(opt.dilation_radius > 0.0)) throw std::invalid_argument("agnostic mask: dilation radius must be > 0");
    if (skeleton.frame_width <= 0 || skeleton.frame_height <= 0)
        throw std::invalid_argument("agnostic mask: skeleton has no frame size");
    bones.validate(skeleton.joints.size());

    const auto scope = scope_joints(opt.scope);
    auto in_scope = [&](int j) { return std::find(scope.begin(), scope.end(), j) != scope.end(); };

    std::vector<Bone> limbs;
    for (const auto& b : bones.bones)
        if (in_scope(b.parent) && in_scope(b.child) && skeleton.present(b.parent, opt.min_confidence) &&
            skeleton.present(b.child, opt.min_confidence))
            limbs.push_back(b);
    if (limbs.empty()) throw std::runtime_error("insufficient pose for mask");

    double jx0 = 1e300, jy0 = 1e300, jx1 = -1e300, jy1 = -1e300;
    for (int j : scope) {
        if (!skeleton.present(j, opt.min_confidence)) continue;
        jx0 = std::min(jx0, skeleton.joints[j].x);
        jx1 = std::max(jx1, skeleton.joints[j].x);
        jy0 = std::min(jy0, skeleton.joints[j].y);
        jy1 = std::max(jy1, skeleton.joints[j].y);
    }

    Mask mask(skeleton.frame_width, skeleton.frame_height, 1, 0);
    const double r = opt.dilation_radius;
    for (int y = 0; y < mask.height; ++y) {
        const double py = y + 0.5;
        if (py < subject_bbox.y || py > subject_bbox.bottom()) continue;
        for (int x = 0; x < mask.width; ++x) {
            const double px = x + 0.5;
            if (px < subject_bbox.x || px > subject_bbox.right()) continue;
            bool hit = px >= jx0 && px <= jx1 && py >= jy0 && py <= jy1;
            for (std::size_t i = 0; !hit && i < limbs.size(); ++i) {
                const auto& a = skeleton.joints[limbs[i].parent];
                const auto& b = skeleton.joints[limbs[i].child];
                hit = point_segment_distance(px, py, a.x, a.y, b.x, b.y) <= r;
            }
            if (hit) mask.at(x, y) = 1;
        }
    }
    bool all = std::all_of(mask.data.begin(), mask.data.end(), [](std::uint8_t v) { return v == 1; });
    if (all) throw std::runtime_error("agnostic mask covers the whole frame");
    return mask;
}

inline Image make_agnostic_image(const Image& frame, const Mask& mask, float fill = 128.0f) {
    if (!mask.same_size(frame.width, frame.height))
        throw std::invalid_argument("agnostic image: frame " + shape_string(frame.width, frame.height) +
                                    " vs mask " + shape_string(mask.width, mask.height));
    Image out = frame;
    for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x)
            if (mask.at(x, y))
                for (int c = 0; c < frame.channels; ++c) out.at(x, y, c) = fill;
    return out;
}

// ---------------------------------------------------------------------------
// Garment normalization

struct GarmentImage {
    Image rgb;
    Mask foreground_mask;
    Rect crop;
};

// Tight box (x, y, w, h) around nonzero mask pixels.
inline Rect tight_foreground_bbox(const Mask& mask) {
    int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y)) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) throw std::runtime_error("no garment foreground");
    return {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1 - x0 + 1),
            static_cast<double>(y1 - y0 + 1)};
}

/// White out the background, crop to the tight foreground box, and fit into
/// the target size (nearest-neighbour, aspect preserved, white letterbox).
inline GarmentImage preprocess_garment(const Image& rgb, const Mask& foreground, int target_width,
                                       int target_height) {
    if (rgb.channels != 3) throw std::invalid_argument("garment: expected 3-channel image");
    if (!foreground.same_size(rgb.width, rgb.height)) throw std::invalid_argument("garment: mask size mismatch");
    if (target_width <= 0 || target_height <= 0) throw std::invalid_argument("garment: bad target size");
    const Rect box = tight_foreground_bbox(foreground);
    const int bx = static_cast<int>(box.x), by = static_cast<int>(box.y);
    const int bw = static_cast<int>(box.width), bh = static_cast<int>(box.height);

    const double scale = std::min(static_cast<double>(target_width) / bw, static_cast<double>(target_height) / bh);
    const int rw = std::clamp(static_cast<int>(std::lround(bw * scale)), 1, target_width);
    const int rh = std::clamp(static_cast<int>(std::lround(bh * scale)), 1, target_height);
    const int ox = (target_width - rw) / 2;
    const int oy = (target_height - rh) / 2;

    GarmentImage g{Image(target_width, target_height, 3, 255.0f), Mask(target_width, target_height, 1, 0), box};
    for (int y = 0; y < rh; ++y) {
        const int sy = by + std::min(bh - 1, static_cast<int>((y + 0.5) * bh / rh));
        for (int x = 0; x < rw; ++x) {
            const int sx = bx + std::min(bw - 1, static_cast<int>((x + 0.5) * bw / rw));
            if (!foreground.at(sx, sy)) continue;
            g.foreground_mask.at(ox + x, oy + y) = 1;
            for (int c = 0; c < 3; ++c) g.rgb.at(ox + x, oy + y, c) = rgb.at(sx, sy, c);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Skeleton maps (pose guider input)

inline Image rasterize_skeleton(const Skeleton& s, const BoneGraph& bones, double thickness = 1.5,
                                double min_confidence = 0.3) {
    Image map(s.frame_width, s.frame_height, 1, 0.0f);
    for (const auto& b : bones.bones) {
        if (!s.present(b.parent, min_confidence) || !s.present(b.child, min_confidence)) continue;
        const auto& p = s.joints[b.parent];
        const auto& c = s.joints[b.child];
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min(p.x, c.x) - thickness)));
        const int x1 = std::min(map.width - 1, static_cast<int>(std::ceil(std::max(p.x, c.x) + thickness)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min(p.y, c.y) - thickness)));
        const int y1 = std::min(map.height - 1, static_cast<int>(std::ceil(std::max(p.y, c.y) + thickness)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if (point_segment_distance(x + 0.5, y + 0.5, p.x, p.y, c.x, c.y) <= thickness) map.at(x, y) = 1.0f;
    }
    return map;
}

}  // namespace dreamvvt
