#pragma once
// Shared helpers for the model tests: random inputs, finite-difference
// gradient checks and a dense re-derivation of the attention paths.
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dreamvvt/dit.hpp"
#include "oracles.hpp"

namespace support {

using namespace dreamvvt;

inline DitConfig small_config(std::uint64_t seed = 1) {
    DitConfig c;
    c.dim = 16;
    c.heads = 2;
    c.blocks = 2;
    c.ff_mult = 2;
    c.text_channels = 6;
    c.image_channels = 5;
    c.out_channels = 5;
    c.video_channels = 2 * 5 + 1 + 3;
    c.lora_rank = 2;
    c.ff_lora = true;
    c.seed = seed;
    return c;
}

template <typename T>
Tensor<T> random_tensor(std::mt19937_64& rng, int r, int c, double sd = 1.0) {
    std::normal_distribution<double> n(0, sd);
    Tensor<T> t(r, c);
    for (auto& x : t.v) x = T(n(rng));
    return t;
}

template <typename T>
DitInputs<T> random_inputs(std::mt19937_64& rng, const DitConfig& c, int lt, int k, int t, int h, int w) {
    DitInputs<T> in;
    if (lt > 0) in.text = random_tensor<T>(rng, lt, c.text_channels);
    if (k > 0) {
        in.image = random_tensor<T>(rng, k * h * w, c.image_channels);
        for (int a = 0; a < k; ++a)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) in.image_positions.push_back({a, y, x});
    }
    in.video = random_tensor<T>(rng, t * h * w, c.video_channels);
    for (int a = 0; a < t; ++a)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) in.video_positions.push_back({a, y, x});
    return in;
}

// Moves every adapter away from its zero-initialized up matrix so all
// trainable groups carry a nonzero gradient.
template <typename T>
void randomize_adapters(const Dit<T>& model, std::mt19937_64& rng, double sd = 0.2) {
    std::normal_distribution<double> n(0, sd);
    for (const auto& p : model.parameters())
        if (p->name.size() > 3 && p->name.compare(p->name.size() - 3, 3, ".up") == 0)
            for (auto& x : p->value.v) x = T(n(rng));
}

template <typename T>
Tensor<T> forward_value(const Dit<T>& model, const DitInputs<T>& in, double tau, AttentionMode mode = AttentionMode::joint,
                        bool use_adapters = true) {
    Tape<T> tape;
    return tape.value(model.forward(tape, in, tau, mode, use_adapters));
}

inline double max_abs(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

template <typename T>
double max_abs(const Tensor<T>& a, const Tensor<T>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::fabs(double(a.v[i]) - double(b.v[i])));
    return m;
}

/// Analytic vs central-difference gradients of mse(forward, target). Samples
/// up to `per_tensor` coordinates of every trainable tensor and reports, per
/// group, ||analytic - numeric|| / max(||analytic||, ||numeric||).
inline std::map<std::string, double> gradient_check(const Dit<double>& model, const DitInputs<double>& in, double tau,
                                                    AttentionMode mode, std::mt19937_64& rng, int per_tensor = 6,
                                                    double h = 1e-5) {
    Tensor<double> target;
    {
        Tape<double> tape;
        target = tape.value(model.forward(tape, in, tau, mode));
        std::normal_distribution<double> n(0, 1);
        for (auto& x : target.v) x = n(rng);
    }
    auto loss = [&] {
        Tape<double> tape;
        return tape.value(tape.mse(model.forward(tape, in, tau, mode), target)).v[0];
    };
    const_cast<Dit<double>&>(model).zero_grad();
    {
        Tape<double> tape;
        tape.backward(tape.mse(model.forward(tape, in, tau, mode), target));
    }
    std::map<std::string, double> diff;
    std::map<std::string, std::pair<double, double>> norms;  // (|analytic|^2, |numeric|^2)
    for (const auto& p : model.trainable_parameters()) {
        std::uniform_int_distribution<std::size_t> pick(0, p->value.v.size() - 1);
        for (int s = 0; s < per_tensor; ++s) {
            const std::size_t i = pick(rng);
            const double keep = p->value.v[i];
            p->value.v[i] = keep + h;
            const double up = loss();
            p->value.v[i] = keep - h;
            const double down = loss();
            p->value.v[i] = keep;
            const double fd = (up - down) / (2 * h);
            const double an = p->grad.v[i];
            diff[p->group] += (fd - an) * (fd - an);
            norms[p->group].first += an * an;
            norms[p->group].second += fd * fd;
        }
    }
    std::map<std::string, double> out;
    for (const auto& [g, d] : diff) {
        const double scale = std::sqrt(std::max(norms[g].first, norms[g].second));
        out[g] = scale == 0.0 ? 0.0 : std::sqrt(d) / scale;
    }
    return out;
}

// Dense re-derivation: x (W + s A B) + b with plain loops.
template <typename T>
std::vector<double> dense_linear(const std::vector<double>& x, int rows, const Linear<T>& base,
                                 const std::optional<LoRAAdapter<T>>& a) {
    const int in = base.in(), out = base.out();
    std::vector<double> W(std::size_t(in) * out);
    for (int i = 0; i < in; ++i)
        for (int j = 0; j < out; ++j) {
            double w = base.weight->value(i, j);
            if (a && a->rank > 0)
                for (int r = 0; r < a->rank; ++r) w += double(a->scale) * a->down->value(i, r) * a->up->value(r, j);
            W[std::size_t(i) * out + j] = w;
        }
    std::vector<double> y(std::size_t(rows) * out, 0.0);
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < out; ++j) {
            double s = base.bias ? double(base.bias->value(0, j)) : 0.0;
            for (int i = 0; i < in; ++i) s += x[std::size_t(r) * in + i] * W[std::size_t(i) * out + j];
            y[std::size_t(r) * out + j] = s;
        }
    return y;
}

// Multi-head attention of every row of the flat sequence over all rows.
inline std::vector<double> flat_multihead(const std::vector<double>& q, const std::vector<double>& k,
                                          const std::vector<double>& v, std::size_t n, int d, int heads) {
    const int dh = d / heads;
    std::vector<double> out(n * d);
    for (int h = 0; h < heads; ++h) {
        std::vector<double> qh(n * dh), kh(n * dh), vh(n * dh);
        for (std::size_t r = 0; r < n; ++r)
            for (int c = 0; c < dh; ++c) {
                qh[r * dh + c] = q[r * d + h * dh + c];
                kh[r * dh + c] = k[r * d + h * dh + c];
                vh[r * dh + c] = v[r * d + h * dh + c];
            }
        const auto o = oracle::attention(qh, kh, vh, n, n, dh);
        for (std::size_t r = 0; r < n; ++r)
            for (int c = 0; c < dh; ++c) out[r * d + h * dh + c] = o[r * dh + c];
    }
    return out;
}

/// Keyframe outputs of reference attention computed as flat self-attention
/// over [keyframe_0 .. keyframe_{k-1}, garment] with only the keyframe query
/// rows kept. Keyframes use the video stream, the garment the image stream.
template <typename T>
std::vector<double> reference_by_concatenation(const std::vector<std::vector<double>>& frames, int frame_rows,
                                               const std::vector<double>& garment, int garment_rows,
                                               const BlockParams<T>& blk, int d, int heads) {
    std::vector<double> flat;
    for (const auto& f : frames) flat.insert(flat.end(), f.begin(), f.end());
    const int kf_rows = frame_rows * int(frames.size());
    auto q = dense_linear(flat, kf_rows, blk.video->q, blk.video_lora.q);
    auto k = dense_linear(flat, kf_rows, blk.video->k, blk.video_lora.k);
    auto v = dense_linear(flat, kf_rows, blk.video->v, blk.video_lora.v);
    if (garment_rows > 0) {
        const auto gq = dense_linear(garment, garment_rows, blk.image->q, blk.image_lora.q);
        const auto gk = dense_linear(garment, garment_rows, blk.image->k, blk.image_lora.k);
        const auto gv = dense_linear(garment, garment_rows, blk.image->v, blk.image_lora.v);
        q.insert(q.end(), gq.begin(), gq.end());
        k.insert(k.end(), gk.begin(), gk.end());
        v.insert(v.end(), gv.begin(), gv.end());
    }
    const std::size_t n = std::size_t(kf_rows + garment_rows);
    auto att = flat_multihead(q, k, v, n, d, heads);
    att.resize(std::size_t(kf_rows) * d);  // keyframe query rows only
    return dense_linear(att, kf_rows, blk.video->o, blk.video_lora.o);
}

}  // namespace support
