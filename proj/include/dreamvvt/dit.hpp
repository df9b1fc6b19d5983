#pragma once

// Toy multi-stream MMDiT. Text, image and video tokens keep separate
// per-stream weights, meet in one full self-attention over the concatenated
// sequence, and are split back by index afterwards. The image stream aliases
// the video stream's base weights and differs only by its LoRA adapters.

#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <type_traits>
#include <stdexcept>
#include <string>
#include <vector>

#include "dreamvvt/autograd.hpp"
#include "dreamvvt/rng.hpp"

namespace dreamvvt {

template <typename T>
struct Linear {
    ParamPtr<T> weight;  // in x out
    ParamPtr<T> bias;    // 1 x out, optional

    int in() const { return weight->value.rows; }
    int out() const { return weight->value.cols; }
};

/// Low-rank delta on a frozen linear map: y = base(x) + scale * (x A) B.
/// B starts at zero, so a fresh adapter leaves the base output untouched.
template <typename T>
struct LoRAAdapter {
    int rank = 0;
    T scale = T(1);
    ParamPtr<T> down;  // A: in x r
    ParamPtr<T> up;    // B: r x out
};

template <typename T>
Var lora_linear(Tape<T>& tape, Var x, const Linear<T>& base, const std::type_identity_t<LoRAAdapter<T>>* adapter) {
    if (tape.cols(x) != base.in())
        throw std::invalid_argument("lora_linear: input width " + std::to_string(tape.cols(x)) + " != " +
                                    std::to_string(base.in()));
    Var y = tape.matmul(x, tape.param(base.weight));
    if (base.bias) y = tape.add_row(y, tape.param(base.bias));
    if (adapter && adapter->rank > 0) {
        if (adapter->down->value.rows != base.in() || adapter->up->value.cols != base.out())
            throw std::invalid_argument("lora_linear: adapter shape does not match base");
        Var delta = tape.matmul(tape.matmul(x, tape.param(adapter->down)), tape.param(adapter->up));
        y = tape.add(y, tape.scale(delta, adapter->scale));
    }
    return y;
}

// Dense convenience wrapper (no gradient tracking needed by the caller).
template <typename T>
Tensor<T> lora_linear(const Tensor<T>& x, const Linear<T>& base, const std::type_identity_t<LoRAAdapter<T>>* adapter) {
    Tape<T> tape;
    return tape.value(lora_linear(tape, tape.constant(x), base, adapter));
}

template <typename T>
struct StreamWeights {
    Linear<T> modulation;  // timestep embedding -> [shift1 | scale1 | shift2 | scale2]
    Linear<T> q, k, v, o;
    Linear<T> ff_in, ff_out;
};

template <typename T>
struct StreamAdapters {
    std::optional<LoRAAdapter<T>> q, k, v, o, ff_in, ff_out;
};

template <typename T>
struct BlockParams {
    std::shared_ptr<StreamWeights<T>> text;
    std::shared_ptr<StreamWeights<T>> video;
    std::shared_ptr<StreamWeights<T>> image;  // same object as video
    StreamAdapters<T> video_lora;
    StreamAdapters<T> image_lora;
};

struct DitConfig {
    int dim = 64;
    int heads = 4;
    int blocks = 2;
    int ff_mult = 2;
    int text_channels = 16;
    int image_channels = 8;
    int video_channels = 21;  // conditioning latent width 2c + 1 + c_p
    int out_channels = 8;     // c
    int lora_rank = 4;
    double lora_alpha = 4.0;  // adapter scale = alpha / rank
    bool ff_lora = false;
    bool final_lora = true;
    int final_lora_rank = 0;       // 0: same as lora_rank
    double final_lora_alpha = 0.0;  // 0: same as lora_alpha
    bool train_input_projections = true;
    double modulation_gain = 0.1;
    std::uint64_t seed = 1;

    bool operator==(const DitConfig&) const = default;
};

enum class AttentionMode { joint, reference };

template <typename T>
struct AttentionTrace {
    std::vector<Tensor<T>> probabilities;  // one per (call, head)
};

template <typename T>
struct DitInputs {
    Tensor<T> text;   // l_t x c_t
    Tensor<T> image;  // l_i x c_i
    Tensor<T> video;  // l_v x C_in
    std::vector<std::array<int, 3>> image_positions;  // (k, h, w)
    std::vector<std::array<int, 3>> video_positions;  // (t, h, w)
    std::vector<int> frame_lengths;                   // reference mode: rows per keyframe
};

// A stream entry is an invalid Var when the stream is empty.
struct JointBatch {
    Var text;
    Var image;
    Var video;
};

struct ParameterReport {
    struct Group {
        std::size_t total = 0;
        std::size_t trainable = 0;
    };
    std::map<std::string, Group> groups;
    std::size_t total = 0;
    std::size_t trainable = 0;
    double trainable_fraction() const { return total == 0 ? 0.0 : double(trainable) / double(total); }
};

// ---------------------------------------------------------------------------
// Attention primitives

/// Scaled dot-product attention, rows of q over rows of k / v, split into heads.
template <typename T>
Var attend(Tape<T>& tape, Var q, Var k, Var v, int heads, AttentionTrace<T>* trace = nullptr) {
    const int d = tape.cols(q);
    if (d % heads != 0) throw std::invalid_argument("attention width not divisible by head count");
    const int dh = d / heads;
    const T inv = T(1) / std::sqrt(T(dh));
    std::vector<Var> outs;
    for (int h = 0; h < heads; ++h) {
        Var qh = tape.slice_cols(q, h * dh, dh);
        Var kh = tape.slice_cols(k, h * dh, dh);
        Var vh = tape.slice_cols(v, h * dh, dh);
        Var p = tape.softmax_rows(tape.scale(tape.matmul_nt(qh, kh), inv));
        if (trace) trace->probabilities.push_back(tape.value(p));
        outs.push_back(tape.matmul(p, vh));
    }
    return heads == 1 ? outs.front() : tape.concat_cols(outs);
}

namespace detail {

template <typename T>
const LoRAAdapter<T>* pick(const std::optional<LoRAAdapter<T>>& a, bool use) {
    return use && a ? &*a : nullptr;
}

template <typename T>
struct Projected {
    Var q, k, v;
};

template <typename T>
Projected<T> project(Tape<T>& tape, Var x, const StreamWeights<T>& w, const std::type_identity_t<StreamAdapters<T>>* lora, bool use) {
    const StreamAdapters<T> none{};
    const auto& a = lora ? *lora : none;
    return {lora_linear(tape, x, w.q, pick(a.q, use)), lora_linear(tape, x, w.k, pick(a.k, use)),
            lora_linear(tape, x, w.v, pick(a.v, use))};
}

inline std::vector<Var> present(const std::vector<Var>& xs) {
    std::vector<Var> out;
    for (Var x : xs)
        if (x.valid()) out.push_back(x);
    return out;
}

}  // namespace detail

/// Per-stream QKV projections, one full self-attention over the concatenated
/// (text, image, video) sequence, demultiplexing by row offsets, per-stream
/// output projections. `normed` holds the already normalized stream inputs.
template <typename T>
JointBatch joint_attention(Tape<T>& tape, const JointBatch& normed, const BlockParams<T>& blk, int heads,
                           bool use_adapters = true, AttentionTrace<T>* trace = nullptr) {
    if (!normed.video.valid() || tape.rows(normed.video) == 0)
        throw std::invalid_argument("joint attention: empty video stream");
    std::vector<detail::Projected<T>> proj;
    std::vector<int> lengths;
    const std::array<Var, 3> xs = {normed.text, normed.image, normed.video};
    const std::array<const StreamWeights<T>*, 3> ws = {blk.text.get(), blk.image.get(), blk.video.get()};
    const std::array<const StreamAdapters<T>*, 3> as = {nullptr, &blk.image_lora, &blk.video_lora};
    for (int s = 0; s < 3; ++s) {
        lengths.push_back(xs[s].valid() ? tape.rows(xs[s]) : 0);
        if (lengths.back() > 0) proj.push_back(detail::project(tape, xs[s], *ws[s], as[s], use_adapters));
    }
    std::vector<Var> qs, ks, vs;
    for (const auto& p : proj) {
        qs.push_back(p.q);
        ks.push_back(p.k);
        vs.push_back(p.v);
    }
    Var q = qs.size() == 1 ? qs[0] : tape.concat_rows(qs);
    Var k = ks.size() == 1 ? ks[0] : tape.concat_rows(ks);
    Var v = vs.size() == 1 ? vs[0] : tape.concat_rows(vs);
    Var joint = attend(tape, q, k, v, heads, trace);

    std::array<Var, 3> out{};
    int offset = 0;
    for (int s = 0; s < 3; ++s) {
        if (lengths[s] == 0) continue;
        Var part = tape.slice_rows(joint, offset, lengths[s]);
        offset += lengths[s];
        const StreamAdapters<T> none{};
        const auto& a = as[s] ? *as[s] : none;
        out[s] = lora_linear(tape, part, ws[s]->o, detail::pick(a.o, use_adapters));
    }
    return {out[0], out[1], out[2]};
}

/// Multi-keyframe reference attention: every keyframe's queries attend over
/// the keys / values of all keyframes plus the garment tokens. Garment tokens
/// go through the image stream, which shares base weights with the keyframe
/// (video) stream. Returns the per-keyframe outputs after output projection.
template <typename T>
std::vector<Var> multiframe_reference_attention(Tape<T>& tape, const std::vector<Var>& keyframes, Var garment,
                                                const BlockParams<T>& blk, int heads, bool use_adapters = true,
                                                AttentionTrace<T>* trace = nullptr) {
    if (keyframes.empty()) throw std::invalid_argument("reference attention: no keyframes");
    std::vector<detail::Projected<T>> kf;
    std::vector<Var> ks, vs;
    for (Var x : keyframes) {
        kf.push_back(detail::project(tape, x, *blk.video, &blk.video_lora, use_adapters));
        ks.push_back(kf.back().k);
        vs.push_back(kf.back().v);
    }
    if (garment.valid() && tape.rows(garment) > 0) {
        auto g = detail::project(tape, garment, *blk.image, &blk.image_lora, use_adapters);
        ks.push_back(g.k);
        vs.push_back(g.v);
    }
    Var k = ks.size() == 1 ? ks[0] : tape.concat_rows(ks);
    Var v = vs.size() == 1 ? vs[0] : tape.concat_rows(vs);
    std::vector<Var> out;
    for (const auto& p : kf)
        out.push_back(lora_linear(tape, attend(tape, p.q, k, v, heads, trace), blk.video->o,
                                  detail::pick(blk.video_lora.o, use_adapters)));
    return out;
}

// ---------------------------------------------------------------------------
// Positional and timestep encodings

template <typename T>
void add_sinusoid(Tensor<T>& row_major, int row, int offset, int dims, double pos) {
    for (int i = 0; i < dims / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / std::max(dims, 1));
        row_major(row, offset + 2 * i) += T(std::sin(pos * freq));
        row_major(row, offset + 2 * i + 1) += T(std::cos(pos * freq));
    }
}

// Keyframe tokens get temporal tags far from the video timeline.
inline constexpr int kKeyframeTemporalTag = 512;

template <typename T>
Tensor<T> grid_positions(const std::vector<std::array<int, 3>>& pos, int dim, int temporal_offset) {
    Tensor<T> pe(static_cast<int>(pos.size()), dim);
    const int axis = 2 * (dim / 6);
    for (int r = 0; r < pe.rows; ++r) {
        add_sinusoid(pe, r, 0, axis, pos[r][0] + temporal_offset);
        add_sinusoid(pe, r, axis, axis, pos[r][1]);
        add_sinusoid(pe, r, 2 * axis, axis, pos[r][2]);
    }
    return pe;
}

template <typename T>
Tensor<T> sequence_positions(int length, int dim) {
    Tensor<T> pe(length, dim);
    for (int r = 0; r < length; ++r) add_sinusoid(pe, r, 0, dim, r);
    return pe;
}

template <typename T>
Tensor<T> timestep_embedding(double tau, int dim, double time_scale = 1000.0) {
    Tensor<T> e(1, dim);
    add_sinusoid(e, 0, 0, dim, tau * time_scale);
    return e;
}

// ---------------------------------------------------------------------------

template <typename T>
class Dit {
public:
    explicit Dit(DitConfig cfg) : cfg_(cfg) {
        if (cfg_.dim <= 0 || cfg_.heads <= 0 || cfg_.dim % cfg_.heads != 0)
            throw std::invalid_argument("dit: dim must be a positive multiple of heads");
        if (cfg_.blocks <= 0) throw std::invalid_argument("dit: need at least one block");
        const int d = cfg_.dim;
        text_in_ = make_linear("text_in", cfg_.text_channels, d, false, "text_in");
        image_in_ = make_linear("image_in", cfg_.image_channels, d, cfg_.train_input_projections, "image_in");
        video_in_ = make_linear("video_in", cfg_.video_channels, d, cfg_.train_input_projections, "video_in");
        time_1_ = make_linear("time.0", d, d, false, "time_embed");
        time_2_ = make_linear("time.1", d, d, false, "time_embed");
        for (int b = 0; b < cfg_.blocks; ++b) {
            const std::string p = "blocks." + std::to_string(b) + ".";
            BlockParams<T> blk;
            blk.text = make_stream(p + "text.", "text_stream");
            blk.video = make_stream(p + "video.", "shared_stream");
            blk.image = blk.video;
            blk.video_lora = make_adapters(p + "video.lora.", "lora_video");
            blk.image_lora = make_adapters(p + "image.lora.", "lora_image");
            blocks_.push_back(std::move(blk));
        }
        final_mod_ = make_linear("final.modulation", d, 2 * d, false, "final", cfg_.modulation_gain);
        final_out_ = make_linear("final.out", d, cfg_.out_channels, false, "final");
        if (cfg_.final_lora)
            final_lora_ = make_adapter("final.lora.", d, cfg_.out_channels, "lora_final",
                                       cfg_.final_lora_rank > 0 ? cfg_.final_lora_rank : cfg_.lora_rank,
                                       cfg_.final_lora_alpha > 0 ? cfg_.final_lora_alpha : cfg_.lora_alpha);
    }

    const DitConfig& config() const { return cfg_; }
    std::vector<BlockParams<T>>& blocks() { return blocks_; }
    const std::vector<BlockParams<T>>& blocks() const { return blocks_; }
    const std::vector<ParamPtr<T>>& parameters() const { return params_; }

    ParamPtr<T> find(const std::string& name) const {
        for (const auto& p : params_)
            if (p->name == name) return p;
        return nullptr;
    }

    std::vector<ParamPtr<T>> trainable_parameters() const {
        std::vector<ParamPtr<T>> out;
        for (const auto& p : params_)
            if (p->trainable) out.push_back(p);
        return out;
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    ParameterReport parameter_report() const {
        ParameterReport r;
        for (const auto& p : params_) {
            auto& g = r.groups[p->group];
            g.total += p->value.size();
            r.total += p->value.size();
            if (p->trainable) {
                g.trainable += p->value.size();
                r.trainable += p->value.size();
            }
        }
        return r;
    }

    // Deep copy with independent storage (image/video aliasing preserved).
    Dit clone() const {
        Dit copy(cfg_);
        for (std::size_t i = 0; i < params_.size(); ++i) copy.params_[i]->value = params_[i]->value;
        return copy;
    }

    /// Predicted velocity for the video rows (l_v x out_channels).
    Var forward(Tape<T>& tape, const DitInputs<T>& in, double tau, AttentionMode mode = AttentionMode::joint,
                bool use_adapters = true, AttentionTrace<T>* trace = nullptr) const {
        const int d = cfg_.dim;
        if (in.video.rows == 0) throw std::invalid_argument("dit: empty video stream");
        if (in.video.cols != cfg_.video_channels)
            throw std::invalid_argument("dit: video tokens have " + std::to_string(in.video.cols) + " channels, expected " +
                                        std::to_string(cfg_.video_channels));
        if (in.video_positions.size() != std::size_t(in.video.rows))
            throw std::invalid_argument("dit: video positions do not match token count");
        if (in.image.rows > 0 && in.image.cols != cfg_.image_channels)
            throw std::invalid_argument("dit: image tokens have wrong channel count");
        if (in.image.rows > 0 && in.image_positions.size() != std::size_t(in.image.rows))
            throw std::invalid_argument("dit: image positions do not match token count");
        if (in.text.rows > 0 && in.text.cols != cfg_.text_channels)
            throw std::invalid_argument("dit: text tokens have wrong channel count");

        Var temb = tape.constant(timestep_embedding<T>(tau, d));
        temb = lora_linear(tape, tape.silu(lora_linear(tape, temb, time_1_, nullptr)), time_2_, nullptr);
        Var cond = tape.silu(temb);

        JointBatch x;
        x.video = tape.add(lora_linear(tape, tape.constant(in.video), video_in_, nullptr),
                           tape.constant(grid_positions<T>(in.video_positions, d, 0)));
        if (in.image.rows > 0)
            x.image = tape.add(lora_linear(tape, tape.constant(in.image), image_in_, nullptr),
                               tape.constant(grid_positions<T>(in.image_positions, d, kKeyframeTemporalTag)));
        if (in.text.rows > 0)
            x.text = tape.add(lora_linear(tape, tape.constant(in.text), text_in_, nullptr),
                              tape.constant(sequence_positions<T>(in.text.rows, d)));

        for (const auto& blk : blocks_) x = block(tape, x, blk, cond, mode, in.frame_lengths, use_adapters, trace);

        Var mod = lora_linear(tape, cond, final_mod_, nullptr);
        Var h = tape.modulate(tape.layer_norm(x.video), tape.slice_cols(mod, 0, d), tape.slice_cols(mod, d, d));
        return lora_linear(tape, h, final_out_, final_lora_ && use_adapters ? &*final_lora_ : nullptr);
    }

    /// One MMDiT block: pre-norm with timestep scale / shift, attention,
    /// residual, per-stream feed-forward, residual.
    JointBatch block(Tape<T>& tape, const JointBatch& x, const BlockParams<T>& blk, Var cond, AttentionMode mode,
                     const std::vector<int>& frame_lengths, bool use_adapters, AttentionTrace<T>* trace) const {
        const int d = cfg_.dim;
        const std::array<Var, 3> xs = {x.text, x.image, x.video};
        const std::array<const StreamWeights<T>*, 3> ws = {blk.text.get(), blk.image.get(), blk.video.get()};
        const std::array<const StreamAdapters<T>*, 3> as = {nullptr, &blk.image_lora, &blk.video_lora};
        std::array<Var, 3> mods{}, normed{};
        for (int s = 0; s < 3; ++s) {
            if (!xs[s].valid()) continue;
            mods[s] = lora_linear(tape, cond, ws[s]->modulation, nullptr);
            normed[s] = tape.modulate(tape.layer_norm(xs[s]), tape.slice_cols(mods[s], 0, d),
                                      tape.slice_cols(mods[s], d, d));
        }
        JointBatch att;
        if (mode == AttentionMode::joint)
            att = joint_attention(tape, JointBatch{normed[0], normed[1], normed[2]}, blk, cfg_.heads, use_adapters, trace);
        else
            att = reference_attention(tape, JointBatch{normed[0], normed[1], normed[2]}, blk, frame_lengths,
                                      use_adapters, trace);

        const std::array<Var, 3> atts = {att.text, att.image, att.video};
        std::array<Var, 3> out{};
        for (int s = 0; s < 3; ++s) {
            if (!xs[s].valid()) continue;
            Var r = tape.add(xs[s], atts[s]);
            Var h = tape.modulate(tape.layer_norm(r), tape.slice_cols(mods[s], 2 * d, d),
                                  tape.slice_cols(mods[s], 3 * d, d));
            const StreamAdapters<T> none{};
            const auto& a = as[s] ? *as[s] : none;
            Var f = lora_linear(tape, h, ws[s]->ff_in, detail::pick(a.ff_in, use_adapters));
            f = lora_linear(tape, tape.gelu(f), ws[s]->ff_out, detail::pick(a.ff_out, use_adapters));
            out[s] = tape.add(r, f);
        }
        return {out[0], out[1], out[2]};
    }

private:
    // Keyframe rows (video stream) attend over keyframes + reference rows;
    // reference rows (text, garment image) attend over the reference rows only.
    JointBatch reference_attention(Tape<T>& tape, const JointBatch& normed, const BlockParams<T>& blk,
                                   const std::vector<int>& frame_lengths, bool use_adapters,
                                   AttentionTrace<T>* trace) const {
        std::vector<Var> frames;
        const int rows = tape.rows(normed.video);
        std::vector<int> lengths = frame_lengths.empty() ? std::vector<int>{rows} : frame_lengths;
        int offset = 0;
        for (int len : lengths) {
            frames.push_back(tape.slice_rows(normed.video, offset, len));
            offset += len;
        }
        if (offset != rows) throw std::invalid_argument("reference attention: frame lengths do not cover keyframe rows");

        Var reference;
        std::vector<Var> ref_parts = detail::present({normed.text, normed.image});
        JointBatch out;
        if (!ref_parts.empty()) {
            // Reference branch: text + garment self-attention, garment through the shared image stream.
            JointBatch ref_in{normed.text, normed.image, Var{}};
            out = reference_self_attention(tape, ref_in, blk, use_adapters, trace);
        }
        // Keyframe context: text rows enter as extra keys / values via the text stream.
        std::vector<Var> kf_out;
        if (normed.text.valid()) {
            kf_out = keyframes_with_text(tape, frames, normed.image, normed.text, blk, use_adapters, trace);
        } else {
            kf_out = multiframe_reference_attention(tape, frames, normed.image, blk, cfg_.heads, use_adapters, trace);
        }
        out.video = kf_out.size() == 1 ? kf_out[0] : tape.concat_rows(kf_out);
        return out;
    }

    JointBatch reference_self_attention(Tape<T>& tape, const JointBatch& ref, const BlockParams<T>& blk,
                                        bool use_adapters, AttentionTrace<T>* trace) const {
        std::vector<detail::Projected<T>> proj;
        std::vector<int> lengths;
        if (ref.text.valid()) {
            proj.push_back(detail::project(tape, ref.text, *blk.text, nullptr, use_adapters));
            lengths.push_back(tape.rows(ref.text));
        }
        if (ref.image.valid()) {
            proj.push_back(detail::project(tape, ref.image, *blk.image, &blk.image_lora, use_adapters));
            lengths.push_back(tape.rows(ref.image));
        }
        std::vector<Var> qs, ks, vs;
        for (const auto& p : proj) {
            qs.push_back(p.q);
            ks.push_back(p.k);
            vs.push_back(p.v);
        }
        Var joint = attend(tape, qs.size() == 1 ? qs[0] : tape.concat_rows(qs), ks.size() == 1 ? ks[0] : tape.concat_rows(ks),
                           vs.size() == 1 ? vs[0] : tape.concat_rows(vs), cfg_.heads, trace);
        JointBatch out;
        int offset = 0;
        if (ref.text.valid()) {
            out.text = lora_linear(tape, tape.slice_rows(joint, offset, lengths[0]), blk.text->o, nullptr);
            offset += lengths[0];
        }
        if (ref.image.valid())
            out.image = lora_linear(tape, tape.slice_rows(joint, offset, tape.rows(ref.image)), blk.image->o,
                                    detail::pick(blk.image_lora.o, use_adapters));
        return out;
    }

    std::vector<Var> keyframes_with_text(Tape<T>& tape, const std::vector<Var>& frames, Var garment, Var text,
                                         const BlockParams<T>& blk, bool use_adapters, AttentionTrace<T>* trace) const {
        std::vector<detail::Projected<T>> kf;
        std::vector<Var> ks, vs;
        for (Var f : frames) {
            kf.push_back(detail::project(tape, f, *blk.video, &blk.video_lora, use_adapters));
            ks.push_back(kf.back().k);
            vs.push_back(kf.back().v);
        }
        if (garment.valid()) {
            auto g = detail::project(tape, garment, *blk.image, &blk.image_lora, use_adapters);
            ks.push_back(g.k);
            vs.push_back(g.v);
        }
        auto t = detail::project(tape, text, *blk.text, nullptr, use_adapters);
        ks.push_back(t.k);
        vs.push_back(t.v);
        Var k = tape.concat_rows(ks);
        Var v = tape.concat_rows(vs);
        std::vector<Var> out;
        for (const auto& p : kf)
            out.push_back(lora_linear(tape, attend(tape, p.q, k, v, cfg_.heads, trace), blk.video->o,
                                      detail::pick(blk.video_lora.o, use_adapters)));
        return out;
    }

    ParamPtr<T> make_param(const std::string& name, int rows, int cols, double stddev, bool trainable,
                           const std::string& group) {
        Tensor<T> init(rows, cols);
        const std::uint64_t stream = fnv1a64(name);
        if (stddev > 0.0)
            for (std::size_t i = 0; i < init.v.size(); ++i)
                init.v[i] = T(stddev * CounterRng::normal_at(cfg_.seed, stream, i));
        auto p = std::make_shared<Param<T>>(name, std::move(init), trainable, group);
        params_.push_back(p);
        return p;
    }

    Linear<T> make_linear(const std::string& name, int in, int out, bool trainable, const std::string& group,
                          double gain = 1.0) {
        Linear<T> l;
        l.weight = make_param(name + ".weight", in, out, gain / std::sqrt(double(in)), trainable, group);
        l.bias = make_param(name + ".bias", 1, out, 0.0, trainable, group);
        return l;
    }

    std::shared_ptr<StreamWeights<T>> make_stream(const std::string& p, const std::string& group) {
        const int d = cfg_.dim, f = cfg_.dim * cfg_.ff_mult;
        auto w = std::make_shared<StreamWeights<T>>();
        w->modulation = make_linear(p + "modulation", d, 4 * d, false, group, cfg_.modulation_gain);
        w->q = make_linear(p + "q", d, d, false, group);
        w->k = make_linear(p + "k", d, d, false, group);
        w->v = make_linear(p + "v", d, d, false, group);
        w->o = make_linear(p + "o", d, d, false, group);
        w->ff_in = make_linear(p + "ff_in", d, f, false, group);
        w->ff_out = make_linear(p + "ff_out", f, d, false, group);
        return w;
    }

    std::optional<LoRAAdapter<T>> make_adapter(const std::string& p, int in, int out, const std::string& group,
                                               int rank = -1, double alpha = 0.0) {
        if (rank < 0) rank = cfg_.lora_rank;
        if (alpha <= 0.0) alpha = cfg_.lora_alpha;
        if (rank <= 0) return std::nullopt;
        LoRAAdapter<T> a;
        a.rank = rank;
        a.scale = T(alpha / rank);
        a.down = make_param(p + "down", in, a.rank, 1.0 / std::sqrt(double(in)), true, group);
        a.up = make_param(p + "up", a.rank, out, 0.0, true, group);
        return a;
    }

    StreamAdapters<T> make_adapters(const std::string& p, const std::string& group) {
        const int d = cfg_.dim, f = cfg_.dim * cfg_.ff_mult;
        StreamAdapters<T> a;
        a.q = make_adapter(p + "q.", d, d, group);
        a.k = make_adapter(p + "k.", d, d, group);
        a.v = make_adapter(p + "v.", d, d, group);
        a.o = make_adapter(p + "o.", d, d, group);
        if (cfg_.ff_lora) {
            a.ff_in = make_adapter(p + "ff_in.", d, f, group);
            a.ff_out = make_adapter(p + "ff_out.", f, d, group);
        }
        return a;
    }

    DitConfig cfg_;
    std::vector<ParamPtr<T>> params_;
    Linear<T> text_in_, image_in_, video_in_;
    Linear<T> time_1_, time_2_;
    std::vector<BlockParams<T>> blocks_;
    Linear<T> final_mod_, final_out_;
    std::optional<LoRAAdapter<T>> final_lora_;
};

}  // namespace dreamvvt
