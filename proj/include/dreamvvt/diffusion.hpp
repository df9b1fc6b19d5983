#pragma once

// Rectified-flow training and sampling around the toy DiT.
// Convention: tau = 0 is data, tau = 1 is noise, x_t = (1 - tau) x0 + tau eps,
// velocity target eps - x0.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dreamvvt/caption.hpp"
#include "dreamvvt/codec.hpp"
#include "dreamvvt/conditioning.hpp"
#include "dreamvvt/dit.hpp"
#include "dreamvvt/rng.hpp"

namespace dreamvvt {

struct FlowState {
    LatentVideo x_t;
    LatentVideo target_velocity;
};

inline FlowState rf_forward(const LatentVideo& x0, const LatentVideo& eps, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("rf_forward: tau outside [0,1]");
    if (!x0.same_shape(eps)) throw std::invalid_argument("rf_forward: shape mismatch");
    FlowState s{x0, x0};
    const float a = static_cast<float>(1.0 - tau), b = static_cast<float>(tau);
    for (std::size_t i = 0; i < x0.data.size(); ++i) {
        if (tau == 0.0)
            s.x_t.data[i] = x0.data[i];
        else if (tau == 1.0)
            s.x_t.data[i] = eps.data[i];
        else
            s.x_t.data[i] = a * x0.data[i] + b * eps.data[i];
        s.target_velocity.data[i] = eps.data[i] - x0.data[i];
    }
    return s;
}

inline LatentVideo noise_latent(int t, int h, int w, int c, std::uint64_t seed, std::uint64_t stream = 0) {
    LatentVideo out(t, h, w, c);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = static_cast<float>(CounterRng::normal_at(seed, 0x401C0000ULL + stream, i));
    return out;
}

inline LatentVideo cfg_velocity(const LatentVideo& v_cond, const LatentVideo& v_uncond, double scale) {
    if (!v_cond.same_shape(v_uncond)) throw std::invalid_argument("cfg_velocity: shape mismatch");
    LatentVideo out = v_uncond;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = static_cast<float>(v_uncond.data[i] + scale * (double(v_cond.data[i]) - v_uncond.data[i]));
    return out;
}

// ---------------------------------------------------------------------------
// Tasks and conditions

enum class Task { full, pose_text, t2v };

inline const char* to_string(Task t) {
    switch (t) {
        case Task::full: return "full";
        case Task::pose_text: return "pose_text";
        case Task::t2v: return "t2v";
    }
    return "?";
}

inline Task parse_task(const std::string& s) {
    if (s == "full") return Task::full;
    if (s == "pose_text") return Task::pose_text;
    if (s == "t2v") return Task::t2v;
    throw std::invalid_argument("unknown task '" + s + "'");
}

using TaskSchedule = std::map<Task, double>;

inline TaskSchedule default_task_schedule() { return {{Task::full, 0.7}, {Task::pose_text, 0.15}, {Task::t2v, 0.15}}; }

inline void validate_schedule(const TaskSchedule& p) {
    if (p.empty()) throw std::invalid_argument("task schedule is empty");
    double sum = 0.0;
    for (const auto& [task, prob] : p) {
        if (!(prob >= 0.0 && prob <= 1.0)) throw std::invalid_argument("task probability outside [0,1]");
        sum += prob;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("task probabilities must sum to 1");
}

/// Inverse-CDF draw over the schedule (iterated in Task order).
inline Task sample_task(double u, const TaskSchedule& p) {
    validate_schedule(p);
    double acc = 0.0;
    Task last = p.begin()->first;
    for (const auto& [task, prob] : p) {
        if (prob <= 0.0) continue;
        acc += prob;
        last = task;
        if (u < acc) return task;
    }
    return last;
}

inline Task sample_task(CounterRng& rng, const TaskSchedule& p) { return sample_task(rng.uniform(), p); }

/// Everything the model sees besides the noisy latent.
struct Conditions {
    LatentVideo agnostic;      // (t, h, w, c)
    LatentVideo mask;          // (t, h, w, 1)
    LatentVideo pose;          // (t, h, w, c_p)
    TokenSequence keyframes;   // image stream; may be empty
    TextTokens text;           // may be empty (channels 0)
    std::vector<int> frame_lengths;
    AttentionMode mode = AttentionMode::joint;
};

/// Latent-time slice [begin, begin + count) of the per-frame conditions.
inline Conditions slice_conditions(const Conditions& c, int begin, int count) {
    Conditions out = c;
    out.agnostic = c.agnostic.slices(begin, begin + count);
    out.mask = c.mask.slices(begin, begin + count);
    out.pose = c.pose.slices(begin, begin + count);
    return out;
}

/// Batching boundary: assembles [agnostic | mask | x_t | pose] video tokens
/// and applies the per-task condition dropout.
template <typename T>
DitInputs<T> build_inputs(const Conditions& cond, const LatentVideo& x_t, Task task, bool unconditional = false) {
    const bool drop_keyframes = unconditional || task != Task::full;
    const bool null_pose = task == Task::t2v;
    LatentVideo pose = cond.pose;
    if (null_pose) std::fill(pose.data.begin(), pose.data.end(), 0.0f);
    const LatentVideo video = assemble_conditioning(cond.agnostic, cond.mask, x_t, pose);

    DitInputs<T> in;
    in.video = Tensor<T>(static_cast<int>(video.cells()), video.c);
    for (std::size_t i = 0; i < video.data.size(); ++i) in.video.v[i] = static_cast<T>(video.data[i]);
    in.video_positions = patchify(LatentVideo(video.t, video.h, video.w, 0)).index_map;
    in.frame_lengths = cond.frame_lengths;

    if (!drop_keyframes && cond.keyframes.length() > 0) {
        in.image = Tensor<T>(static_cast<int>(cond.keyframes.length()), cond.keyframes.channels);
        for (std::size_t i = 0; i < cond.keyframes.tokens.size(); ++i)
            in.image.v[i] = static_cast<T>(cond.keyframes.tokens[i]);
        in.image_positions = cond.keyframes.index_map;
    }
    if (cond.text.channels > 0) {
        in.text = Tensor<T>(static_cast<int>(cond.text.length()), cond.text.channels);
        if (!unconditional)
            for (std::size_t i = 0; i < cond.text.tokens.size(); ++i) in.text.v[i] = static_cast<T>(cond.text.tokens[i]);
    }
    return in;
}

template <typename T>
LatentVideo tokens_to_latent(const Tensor<T>& tokens, int t, int h, int w) {
    if (std::size_t(tokens.rows) != std::size_t(t) * h * w) throw std::invalid_argument("token count does not match grid");
    LatentVideo out(t, h, w, tokens.cols);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<float>(tokens.v[i]);
    return out;
}

template <typename T>
Tensor<T> latent_to_tensor(const LatentVideo& lat) {
    Tensor<T> out(static_cast<int>(lat.cells()), lat.c);
    for (std::size_t i = 0; i < lat.data.size(); ++i) out.v[i] = static_cast<T>(lat.data[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    double learning_rate = 2e-5;
    double weight_decay = 0.01;
    double grad_clip_norm = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    TaskSchedule task_probabilities = default_task_schedule();
    double p_uncond = 0.1;  // condition dropout that trains the guidance branch
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0 && weight_decay >= 0 && grad_clip_norm > 0))
            throw std::invalid_argument("train config: hyperparameters must be positive");
        if (!(p_uncond >= 0.0 && p_uncond <= 1.0)) throw std::invalid_argument("train config: p_uncond outside [0,1]");
        validate_schedule(task_probabilities);
    }
};

template <typename T>
class AdamW {
public:
    AdamW(std::vector<ParamPtr<T>> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
        for (const auto& p : params_) {
            m_.emplace_back(p->value.size(), 0.0);
            v_.emplace_back(p->value.size(), 0.0);
        }
    }

    long steps() const { return t_; }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = *params_[k];
            if (!p.trainable) continue;
            for (std::size_t i = 0; i < p.value.v.size(); ++i) {
                const double g = p.grad.v[i];
                m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g;
                v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g * g;
                const double update = (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + cfg_.eps);
                const double w = p.value.v[i];
                p.value.v[i] = static_cast<T>(w - cfg_.learning_rate * (update + cfg_.weight_decay * w));
            }
        }
    }

private:
    std::vector<ParamPtr<T>> params_;
    TrainConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

template <typename T>
double global_grad_norm(const std::vector<ParamPtr<T>>& params) {
    double acc = 0.0;
    for (const auto& p : params)
        for (T g : p->grad.v) acc += double(g) * double(g);
    return std::sqrt(acc);
}

/// Rescales gradients so their global norm is at most max_norm. Returns the pre-clip norm.
template <typename T>
double clip_grad_norm(const std::vector<ParamPtr<T>>& params, double max_norm) {
    const double norm = global_grad_norm(params);
    if (norm > max_norm) {
        const T s = static_cast<T>(max_norm / norm);
        for (const auto& p : params)
            for (T& g : p->grad.v) g *= s;
    }
    return norm;
}

struct FlowSample {
    LatentVideo x0;
    Conditions cond;
    std::optional<LatentVideo> noise;  // fixed noise; drawn per step when absent
};

struct StepDraw {
    Task task = Task::full;
    double tau = 0.0;
    LatentVideo noise;
    bool unconditional = false;
};

inline StepDraw draw_step(const FlowSample& s, const TrainConfig& cfg, std::uint64_t step) {
    CounterRng rng(cfg.seed, 0x7A1 + step);
    StepDraw d;
    d.task = sample_task(rng, cfg.task_probabilities);
    d.tau = rng.uniform();
    d.unconditional = rng.uniform() < cfg.p_uncond;
    d.noise = s.noise ? *s.noise : noise_latent(s.x0.t, s.x0.h, s.x0.w, s.x0.c, cfg.seed ^ 0x5EEDULL, step);
    return d;
}

/// Records the loss on the tape; backward is left to the caller.
template <typename T>
Var flow_loss(Tape<T>& tape, const Dit<T>& model, const FlowSample& s, const StepDraw& d) {
    const FlowState st = rf_forward(s.x0, d.noise, d.tau);
    const DitInputs<T> in = build_inputs<T>(s.cond, st.x_t, d.task, d.unconditional);
    Var pred = model.forward(tape, in, d.tau, s.cond.mode);
    return tape.mse(pred, latent_to_tensor<T>(st.target_velocity));
}

struct StepResult {
    double loss = 0.0;
    double grad_norm_pre_clip = 0.0;
    Task task = Task::full;
    double tau = 0.0;
};

template <typename T>
StepResult training_step(Dit<T>& model, AdamW<T>& opt, const FlowSample& s, const TrainConfig& cfg, std::uint64_t step) {
    if (s.x0.data.empty()) throw std::invalid_argument("training_step: empty batch");
    const StepDraw d = draw_step(s, cfg, step);
    model.zero_grad();
    Tape<T> tape;
    Var loss = flow_loss(tape, model, s, d);
    tape.backward(loss);
    const auto trainable = model.trainable_parameters();
    StepResult r;
    r.loss = double(tape.value(loss).v[0]);
    r.grad_norm_pre_clip = clip_grad_norm(trainable, cfg.grad_clip_norm);
    r.task = d.task;
    r.tau = d.tau;
    opt.step();
    return r;
}

// ---------------------------------------------------------------------------
// Sampling

struct SampleConfig {
    int steps = 50;
    double cfg_scale = 2.5;
    std::uint64_t seed = 42;

    void validate() const {
        if (steps < 1) throw std::invalid_argument("sample config: steps must be >= 1");
        if (!(cfg_scale >= 0.0)) throw std::invalid_argument("sample config: cfg_scale must be >= 0");
    }
};

using VelocityFn = std::function<LatentVideo(const LatentVideo& x, double tau)>;
using ClampFn = std::function<void(LatentVideo& x)>;

/// Uniform tau grid from 1 to 0; x <- x - dtau * v(x, tau).
inline LatentVideo euler_integrate(LatentVideo x, int steps, const VelocityFn& velocity, const ClampFn& clamp = {}) {
    if (steps < 1) throw std::invalid_argument("euler: steps must be >= 1");
    if (clamp) clamp(x);
    for (int i = 0; i < steps; ++i) {
        const double tau = 1.0 - double(i) / steps;
        const double dtau = 1.0 / steps;
        const LatentVideo v = velocity(x, tau);
        if (!v.same_shape(x)) throw std::invalid_argument("euler: velocity shape mismatch");
        for (std::size_t k = 0; k < x.data.size(); ++k) x.data[k] = static_cast<float>(x.data[k] - dtau * v.data[k]);
        if (clamp) clamp(x);
    }
    return x;
}

template <typename T>
LatentVideo model_velocity(const Dit<T>& model, const Conditions& cond, const LatentVideo& x, double tau, Task task,
                           bool unconditional) {
    Tape<T> tape;
    Var v = model.forward(tape, build_inputs<T>(cond, x, task, unconditional), tau, cond.mode);
    return tokens_to_latent(tape.value(v), x.t, x.h, x.w);
}

template <typename T>
VelocityFn guided_velocity(const Dit<T>& model, const Conditions& cond, double cfg_scale, Task task = Task::full) {
    return [&model, &cond, cfg_scale, task](const LatentVideo& x, double tau) {
        const LatentVideo vc = model_velocity(model, cond, x, tau, task, false);
        if (cfg_scale == 1.0) return vc;
        return cfg_velocity(vc, model_velocity(model, cond, x, tau, task, true), cfg_scale);
    };
}

template <typename T>
LatentVideo euler_sample(const Dit<T>& model, const Conditions& cond, const SampleConfig& cfg, int out_channels) {
    cfg.validate();
    const auto& g = cond.agnostic;
    return euler_integrate(noise_latent(g.t, g.h, g.w, out_channels, cfg.seed), cfg.steps,
                           guided_velocity(model, cond, cfg.cfg_scale));
}

// ---------------------------------------------------------------------------
// Long videos

enum class Handoff { latent, decode_encode };

/// The next segment's clamped first slice: the previous segment's last latent slice, untouched.
inline LatentVideo continue_segment(const LatentVideo& prev) {
    if (prev.t < 1) throw std::invalid_argument("continue_segment: empty segment");
    return prev.slices(prev.t - 1, prev.t);
}

// Contrast path only: round-trips the handoff slice through pixel space.
inline LatentVideo continue_segment_via_pixels(const LatentVideo& prev, const CodecConfig& codec = {}) {
    return encode_video(decode_video(continue_segment(prev), codec), codec);
}

inline ClampFn clamp_first_slice(const LatentVideo& first) {
    return [first](LatentVideo& x) { x.set_slices(0, first); };
}

using SegmentVelocityFn = std::function<VelocityFn(int segment)>;

struct SegmentPlan {
    std::vector<int> lengths;  // latent slices per segment, overlap included
    int h = 0, w = 0, c = 0;

    int total_slices() const {
        int t = 0;
        for (std::size_t k = 0; k < lengths.size(); ++k) t += k == 0 ? lengths[k] : lengths[k] - 1;
        return t;
    }
    int start(int k) const {
        int t = 0;
        for (int i = 0; i < k; ++i) t += lengths[i] - 1;
        return t;
    }
};

/// Splits `slices` latent slices into segments of `per_segment` with a
/// one-slice overlap; the last segment may be shorter.
inline SegmentPlan plan_segments(int slices, int per_segment, int h, int w, int c) {
    if (slices < 1 || per_segment < 2) throw std::invalid_argument("segment plan: need >= 1 slice and segments of >= 2");
    SegmentPlan p{{}, h, w, c};
    int covered = std::min(slices, per_segment);
    p.lengths.push_back(covered);
    while (covered < slices) {
        const int len = std::min(per_segment, slices - covered + 1);
        p.lengths.push_back(len);
        covered += len - 1;
    }
    return p;
}

/// Segment k > 0 starts from fresh noise (seed, stream k) and has latent slice 0
/// clamped to the handoff from segment k - 1 at every step.
inline std::vector<LatentVideo> generate_segments(const SegmentPlan& plan, const SegmentVelocityFn& velocity,
                                                  const SampleConfig& cfg, Handoff handoff = Handoff::latent,
                                                  const CodecConfig& codec = {}) {
    cfg.validate();
    if (plan.lengths.empty()) throw std::invalid_argument("segment plan: no segments");
    std::vector<LatentVideo> out;
    for (int k = 0; k < static_cast<int>(plan.lengths.size()); ++k) {
        if (plan.lengths[k] < (k == 0 ? 1 : 2)) throw std::invalid_argument("segment plan: segment too short");
        LatentVideo x = noise_latent(plan.lengths[k], plan.h, plan.w, plan.c, cfg.seed, std::uint64_t(k));
        ClampFn clamp;
        if (k > 0)
            clamp = clamp_first_slice(handoff == Handoff::latent ? continue_segment(out.back())
                                                                  : continue_segment_via_pixels(out.back(), codec));
        try {
            out.push_back(euler_integrate(std::move(x), cfg.steps, velocity(k), clamp));
        } catch (const std::exception& e) {
            throw std::runtime_error("segment " + std::to_string(k) + ": " + e.what());
        }
    }
    return out;
}

/// Joins segments, dropping each overlapping first slice after the first segment.
inline LatentVideo stitch_segments(const std::vector<LatentVideo>& segs) {
    if (segs.empty()) throw std::invalid_argument("stitch: no segments");
    int t = segs[0].t;
    for (std::size_t k = 1; k < segs.size(); ++k) t += segs[k].t - 1;
    LatentVideo out(t, segs[0].h, segs[0].w, segs[0].c);
    out.set_slices(0, segs[0]);
    int at = segs[0].t;
    for (std::size_t k = 1; k < segs.size(); ++k) {
        out.set_slices(at, segs[k].slices(1, segs[k].t));
        at += segs[k].t - 1;
    }
    return out;
}

// ---------------------------------------------------------------------------

template <typename R>
struct BestOf {
    R result;
    std::uint64_t seed = 0;
    std::size_t index = 0;
    std::vector<double> scores;
};

/// Runs generator(seed0 + i) for i < n and keeps the highest selector score; ties go to the lowest seed.
template <typename Gen, typename Sel>
auto best_of_n(Gen&& generator, int n, Sel&& selector, std::uint64_t seed0) {
    using R = std::decay_t<decltype(generator(seed0))>;
    if (n < 1) throw std::invalid_argument("best_of_n: n must be >= 1");
    BestOf<R> best;
    for (int i = 0; i < n; ++i) {
        R r = generator(seed0 + std::uint64_t(i));
        const double score = n == 1 ? 0.0 : double(selector(r));
        best.scores.push_back(score);
        if (i == 0 || score > best.scores[best.index]) {
            best.result = std::move(r);
            best.seed = seed0 + std::uint64_t(i);
            best.index = std::size_t(i);
        }
    }
    return best;
}

}  // namespace dreamvvt
