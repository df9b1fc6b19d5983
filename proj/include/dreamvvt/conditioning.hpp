#pragma once

// Pose latents and the channel-concatenated conditioning latent.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dreamvvt/codec.hpp"
#include "dreamvvt/raster.hpp"
#include "dreamvvt/rng.hpp"

namespace dreamvvt {

struct PoseGuiderConfig {
    int channels = 4;  // c_p
    int window = 2;    // smoothing half-width in frames
    int spatial_factor = 16;
    int temporal_factor = 4;
    std::uint64_t seed = 0x9053;
};

/// Per-frame spatial encoder (16x16 space-to-depth + fixed projection to c_p)
/// followed by temporal smoothing: each cell becomes a softmax-weighted mean of
/// the same cell in the +-window neighbouring frames, weighted by negative
/// squared feature distance. Frames are then mean-pooled 4x in time.
class PoseGuider {
public:
    explicit PoseGuider(PoseGuiderConfig cfg = {}) : cfg_(cfg) {
        if (cfg_.channels <= 0) throw std::invalid_argument("pose guider: channels must be > 0");
        const int in = cfg_.spatial_factor * cfg_.spatial_factor;
        projection_.resize(std::size_t(in) * cfg_.channels);
        const double scale = 1.0 / std::sqrt(static_cast<double>(in));
        for (std::size_t i = 0; i < projection_.size(); ++i)
            projection_[i] = static_cast<float>(scale * CounterRng::normal_at(cfg_.seed, 0, i));
    }

    const PoseGuiderConfig& config() const { return cfg_; }

    // (T, h, w, c_p), no smoothing or pooling.
    LatentVideo encode_frames(const std::vector<Image>& maps) const {
        if (maps.empty()) throw std::invalid_argument("pose guider: no skeleton maps");
        const int sf = cfg_.spatial_factor;
        const int H = maps[0].height, W = maps[0].width;
        if (H % sf != 0 || W % sf != 0)
            throw std::invalid_argument("pose guider: map size " + shape_string(W, H) + " not divisible by 16");
        LatentVideo out(static_cast<int>(maps.size()), H / sf, W / sf, cfg_.channels);
        std::vector<float> patch(std::size_t(sf) * sf);
        for (int f = 0; f < out.t; ++f) {
            const auto& m = maps[f];
            if (!m.same_size(W, H) || m.channels != 1) throw std::invalid_argument("pose guider: inconsistent maps");
            for (int hi = 0; hi < out.h; ++hi)
                for (int wi = 0; wi < out.w; ++wi) {
                    for (int dy = 0; dy < sf; ++dy)
                        for (int dx = 0; dx < sf; ++dx) patch[dy * sf + dx] = m.at(wi * sf + dx, hi * sf + dy);
                    for (int c = 0; c < cfg_.channels; ++c) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < patch.size(); ++i) acc += patch[i] * projection_[i * cfg_.channels + c];
                        out.at(f, hi, wi, c) = static_cast<float>(acc);
                    }
                }
        }
        return out;
    }

    LatentVideo smooth(const LatentVideo& frames, int window) const {
        if (window < 0) throw std::invalid_argument("pose guider: window must be >= 0");
        if (window == 0) return frames;
        LatentVideo out(frames.t, frames.h, frames.w, frames.c);
        std::vector<double> weights;
        for (int f = 0; f < frames.t; ++f) {
            const int g0 = std::max(0, f - window), g1 = std::min(frames.t - 1, f + window);
            for (int hi = 0; hi < frames.h; ++hi)
                for (int wi = 0; wi < frames.w; ++wi) {
                    weights.assign(g1 - g0 + 1, 0.0);
                    double best = -1e300;
                    for (int g = g0; g <= g1; ++g) {
                        double d2 = 0.0;
                        for (int c = 0; c < frames.c; ++c) {
                            const double d = frames.at(f, hi, wi, c) - frames.at(g, hi, wi, c);
                            d2 += d * d;
                        }
                        weights[g - g0] = -d2 / frames.c;
                        best = std::max(best, weights[g - g0]);
                    }
                    double z = 0.0;
                    for (auto& w : weights) z += (w = std::exp(w - best));
                    for (int c = 0; c < frames.c; ++c) {
                        double acc = 0.0;
                        for (int g = g0; g <= g1; ++g) acc += weights[g - g0] * frames.at(g, hi, wi, c);
                        out.at(f, hi, wi, c) = static_cast<float>(acc / z);
                    }
                }
        }
        return out;
    }

    LatentVideo pool(const LatentVideo& frames) const {
        const int tf = cfg_.temporal_factor;
        if (frames.t % tf != 0)
            throw std::invalid_argument("pose guider: frame count " + std::to_string(frames.t) + " not divisible by 4");
        LatentVideo out(frames.t / tf, frames.h, frames.w, frames.c);
        for (int f = 0; f < frames.t; ++f)
            for (int hi = 0; hi < frames.h; ++hi)
                for (int wi = 0; wi < frames.w; ++wi)
                    for (int c = 0; c < frames.c; ++c) out.at(f / tf, hi, wi, c) += frames.at(f, hi, wi, c) / tf;
        return out;
    }

    LatentVideo operator()(const std::vector<Image>& maps) const { return (*this)(maps, cfg_.window); }
    LatentVideo operator()(const std::vector<Image>& maps, int window) const {
        if (window < 0) throw std::invalid_argument("pose guider: window must be >= 0");
        return pool(smooth(encode_frames(maps), window));
    }

private:
    PoseGuiderConfig cfg_;
    std::vector<float> projection_;  // (16*16) x c_p
};

// Channel layout: [agnostic (c) | mask (1) | noise (c) | pose (c_p)].
struct ConditioningLayout {
    int latent_channels = 0;
    int pose_channels = 0;

    int agnostic_offset() const { return 0; }
    int mask_offset() const { return latent_channels; }
    int noise_offset() const { return latent_channels + 1; }
    int pose_offset() const { return 2 * latent_channels + 1; }
    int total() const { return 2 * latent_channels + 1 + pose_channels; }
};

inline LatentVideo slice_channels(const LatentVideo& src, int begin, int count) {
    if (begin < 0 || count < 0 || begin + count > src.c) throw std::out_of_range("channel slice out of range");
    LatentVideo out(src.t, src.h, src.w, count);
    for (std::size_t cell = 0; cell < src.cells(); ++cell)
        std::copy(src.data.begin() + cell * src.c + begin, src.data.begin() + cell * src.c + begin + count,
                  out.data.begin() + cell * count);
    return out;
}

inline LatentVideo concat_channels(const std::vector<const LatentVideo*>& parts, const std::vector<std::string>& names) {
    const LatentVideo& ref = *parts.front();
    int total = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (!parts[i]->same_grid(ref))
            throw std::invalid_argument("conditioning: grid mismatch in part '" + names[i] + "'");
        total += parts[i]->c;
    }
    LatentVideo out(ref.t, ref.h, ref.w, total);
    for (std::size_t cell = 0; cell < ref.cells(); ++cell) {
        auto dst = out.data.begin() + cell * total;
        for (const auto* p : parts) dst = std::copy_n(p->data.begin() + cell * p->c, p->c, dst);
    }
    return out;
}

inline LatentVideo assemble_conditioning(const LatentVideo& agnostic_latent, const LatentVideo& latent_mask,
                                         const LatentVideo& noise_latent, const LatentVideo& pose_latent) {
    if (latent_mask.c != 1) throw std::invalid_argument("conditioning: mask must have one channel");
    if (noise_latent.c != agnostic_latent.c)
        throw std::invalid_argument("conditioning: channel mismatch in part 'noise'");
    const auto& ref = agnostic_latent;
    if (!latent_mask.same_grid(ref)) throw std::invalid_argument("conditioning: grid mismatch in part 'mask'");
    if (!noise_latent.same_grid(ref)) throw std::invalid_argument("conditioning: grid mismatch in part 'noise'");
    if (!pose_latent.same_grid(ref)) throw std::invalid_argument("conditioning: grid mismatch in part 'pose'");
    return concat_channels({&agnostic_latent, &latent_mask, &noise_latent, &pose_latent},
                           {"agnostic", "mask", "noise", "pose"});
}

}  // namespace dreamvvt
