#pragma once

// Keyframe sampling: score frames against a frontal A-pose anchor and pick
// keyframes under a minimum score-interval constraint.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "dreamvvt/pose.hpp"

namespace dreamvvt {

struct FrameScore {
    std::size_t index = 0;
    double motion_similarity = 0.0;
    double area_ratio = 0.0;
    double final = 0.0;
};

struct KeyframeSet {
    std::vector<std::size_t> indices;
    std::vector<FrameScore> scores;  // matches indices
    std::vector<bool> padded;        // true for entries added by the padding rule
    double threshold = 0.0;          // minimum score interval actually used
};

struct KeyframeOptions {
    double area_weight = 0.3;      // lambda
    double interval_weight = 0.2;  // alpha
    std::size_t count = 2;         // K
    PoseOptions pose{};
};

/// Frontal A-pose on a 256x256 canvas; arms hang about 25 degrees off vertical.
inline Skeleton default_anchor_pose() {
    Skeleton s;
    s.frame_width = 256;
    s.frame_height = 256;
    s.joints.resize(coco::joint_count);
    auto set = [&](int j, double x, double y) { s.joints[j] = {x, y, 1.0}; };
    using namespace coco;
    set(nose, 128, 40);
    set(left_eye, 134, 34);
    set(right_eye, 122, 34);
    set(left_ear, 142, 38);
    set(right_ear, 114, 38);
    set(left_shoulder, 156, 72);
    set(right_shoulder, 100, 72);
    set(left_elbow, 174, 110);
    set(right_elbow, 82, 110);
    set(left_wrist, 190, 146);
    set(right_wrist, 66, 146);
    set(left_hip, 146, 150);
    set(right_hip, 110, 150);
    set(left_knee, 150, 196);
    set(right_knee, 106, 196);
    set(left_ankle, 152, 240);
    set(right_ankle, 104, 240);
    return s;
}

inline double motion_similarity(const std::vector<Direction>& a, const std::vector<Direction>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("motion similarity: bone count mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] && b[i]) sum += (*a[i])[0] * (*b[i])[0] + (*a[i])[1] * (*b[i])[1];
    return sum;
}

inline std::vector<FrameScore> score_frames(const SkeletonSequence& seq, const Skeleton& anchor,
                                            const std::vector<Rect>& subject_bboxes, double area_weight,
                                            const BoneGraph& bones = BoneGraph::coco17(),
                                            const PoseOptions& pose = {}) {
    if (seq.frames.empty()) throw std::invalid_argument("score frames: empty sequence");
    if (subject_bboxes.size() != seq.frames.size())
        throw std::invalid_argument("score frames: expected one bounding box per frame");
    const auto anchor_dirs = compute_joint_directions(anchor, bones, pose);
    for (const auto& d : anchor_dirs)
        if (!d) throw std::invalid_argument("score frames: anchor pose has a missing bone");

    std::vector<FrameScore> out(seq.frames.size());
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
        const auto& f = seq.frames[i];
        FrameScore s;
        s.index = i;
        s.motion_similarity = motion_similarity(anchor_dirs, compute_joint_directions(f, bones, pose));
        const double frame_area = static_cast<double>(f.frame_width) * f.frame_height;
        if (frame_area <= 0.0) throw std::invalid_argument("score frames: frame has zero area");
        s.area_ratio = std::clamp(subject_bboxes[i].area() / frame_area, 0.0, 1.0);
        s.final = s.motion_similarity + area_weight * s.area_ratio;
        out[i] = s;
    }
    return out;
}

/// Sort by descending final score (ties: ascending frame index), seed with the
/// top frame, then walk the sorted list from its last entry upward and keep
/// every frame whose score is at least the threshold away from all kept ones.
/// A negative threshold is clamped to zero; an already kept frame is never
/// appended twice. Short results are padded with the frame farthest in time
/// from the kept set.
inline KeyframeSet select_keyframes(const std::vector<FrameScore>& scores, std::size_t count,
                                    double interval_weight) {
    if (count < 1) throw std::invalid_argument("select keyframes: K must be >= 1");
    if (scores.empty()) throw std::invalid_argument("select keyframes: no scores");
    if (count > scores.size()) throw std::invalid_argument("select keyframes: K exceeds frame count");

    const std::size_t n = scores.size();
    double mean = 0.0;
    for (const auto& s : scores) mean += s.final;
    mean /= static_cast<double>(n);

    KeyframeSet ks;
    ks.threshold = std::max(0.0, interval_weight * mean);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a].final != scores[b].final) return scores[a].final > scores[b].final;
        return scores[a].index < scores[b].index;
    });

    std::vector<std::size_t> picked{order.front()};
    for (std::size_t i = n; i-- > 0;) {
        const std::size_t cur = order[i];
        if (std::find(picked.begin(), picked.end(), cur) != picked.end()) continue;
        bool far_enough = true;
        for (std::size_t p : picked)
            if (!(std::abs(scores[cur].final - scores[p].final) >= ks.threshold)) {
                far_enough = false;
                break;
            }
        if (far_enough) picked.push_back(cur);
    }
    if (picked.size() > count) picked.resize(count);
    std::vector<bool> padded(picked.size(), false);

    while (picked.size() < count) {
        std::size_t best = n;
        std::size_t best_dist = 0;
        for (std::size_t c = 0; c < n; ++c) {
            if (std::find(picked.begin(), picked.end(), c) != picked.end()) continue;
            std::size_t d = n;
            for (std::size_t p : picked) {
                const std::size_t fc = scores[c].index, fp = scores[p].index;
                d = std::min(d, fc > fp ? fc - fp : fp - fc);
            }
            if (best == n || d > best_dist) {
                best = c;
                best_dist = d;
            }
        }
        picked.push_back(best);
        padded.push_back(true);
    }

    for (std::size_t p : picked) {
        ks.indices.push_back(scores[p].index);
        ks.scores.push_back(scores[p]);
    }
    ks.padded = std::move(padded);
    return ks;
}

inline KeyframeSet sample_keyframes(const SkeletonSequence& seq, const Skeleton& anchor,
                                    const std::vector<Rect>& subject_bboxes, const KeyframeOptions& opt = {},
                                    const BoneGraph& bones = BoneGraph::coco17()) {
    return select_keyframes(score_frames(seq, anchor, subject_bboxes, opt.area_weight, bones, opt.pose), opt.count,
                            opt.interval_weight);
}

}  // namespace dreamvvt
