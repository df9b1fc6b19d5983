#pragma once

// Evaluation metrics: SSIM, Frechet distance between feature Gaussians, and
// clip feature extractors (builtin or loaded from a shared library).

#include <dlfcn.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dreamvvt/raster.hpp"

namespace dreamvvt {

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 255.0;
};

namespace detail {

inline std::vector<double> gaussian_kernel(int size, double sigma) {
    std::vector<double> k(size);
    double z = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - (size - 1) / 2.0;
        z += (k[i] = std::exp(-d * d / (2 * sigma * sigma)));
    }
    for (auto& v : k) v /= z;
    return k;
}

// Separable 'valid' filtering of one channel.
inline std::vector<double> filter_valid(const std::vector<double>& img, int w, int h, const std::vector<double>& k) {
    const int n = static_cast<int>(k.size());
    const int ow = w - n + 1, oh = h - n + 1;
    std::vector<double> tmp(std::size_t(ow) * h), out(std::size_t(ow) * oh);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += k[i] * img[std::size_t(y) * w + x + i];
            tmp[std::size_t(y) * ow + x] = acc;
        }
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += k[i] * tmp[std::size_t(y + i) * ow + x];
            out[std::size_t(y) * ow + x] = acc;
        }
    return out;
}

}  // namespace detail

/// Mean SSIM over valid window positions, averaged over channels. The window
/// shrinks to the smaller image side (kept odd) for images under 11 pixels.
template <typename P>
double ssim(const Raster<P>& a, const Raster<P>& b, const SsimOptions& opt = {}) {
    if (!a.same_shape(b))
        throw std::invalid_argument("ssim: shape mismatch " + shape_string(a.width, a.height) + " vs " +
                                    shape_string(b.width, b.height));
    if (a.empty()) throw std::invalid_argument("ssim: empty image");
    int n = std::min({opt.window, a.width, a.height});
    if (n % 2 == 0) --n;
    const auto k = detail::gaussian_kernel(n, opt.sigma);
    const double c1 = std::pow(opt.k1 * opt.data_range, 2), c2 = std::pow(opt.k2 * opt.data_range, 2);
    const int w = a.width, h = a.height;
    double total = 0.0;
    for (int ch = 0; ch < a.channels; ++ch) {
        std::vector<double> x(a.pixel_count()), y(a.pixel_count()), xx(x.size()), yy(x.size()), xy(x.size());
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                const std::size_t i = std::size_t(r) * w + c;
                x[i] = a.at(c, r, ch);
                y[i] = b.at(c, r, ch);
                xx[i] = x[i] * x[i];
                yy[i] = y[i] * y[i];
                xy[i] = x[i] * y[i];
            }
        const auto mx = detail::filter_valid(x, w, h, k), my = detail::filter_valid(y, w, h, k);
        const auto sxx = detail::filter_valid(xx, w, h, k), syy = detail::filter_valid(yy, w, h, k);
        const auto sxy = detail::filter_valid(xy, w, h, k);
        double acc = 0.0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
            acc += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += acc / double(mx.size());
    }
    return total / a.channels;
}

// ---------------------------------------------------------------------------

struct FeatureGaussian {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;

    int dim() const { return static_cast<int>(mean.size()); }
};

/// Sample mean and unbiased covariance (n - 1); a single sample gives zero covariance.
inline FeatureGaussian fit_gaussian(const std::vector<std::vector<double>>& features) {
    if (features.empty()) throw std::invalid_argument("fit_gaussian: no samples");
    const int d = static_cast<int>(features[0].size());
    const int n = static_cast<int>(features.size());
    Eigen::MatrixXd X(n, d);
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(features[i].size()) != d) throw std::invalid_argument("fit_gaussian: ragged features");
        for (int j = 0; j < d; ++j) X(i, j) = features[i][j];
    }
    FeatureGaussian g;
    g.mean = X.colwise().mean().transpose();
    const Eigen::MatrixXd C = X.rowwise() - g.mean.transpose();
    g.cov = n > 1 ? Eigen::MatrixXd((C.transpose() * C) / double(n - 1)) : Eigen::MatrixXd::Zero(d, d);
    return g;
}

namespace detail {

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    const Eigen::VectorXd s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * s.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// |mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2)), with the trace of the
/// geometric-mean term taken as tr sqrt(sqrt(S1) S2 sqrt(S1)).
inline double frechet_distance(const FeatureGaussian& g1, const FeatureGaussian& g2) {
    if (g1.dim() != g2.dim() || g1.cov.rows() != g1.dim() || g2.cov.rows() != g2.dim())
        throw std::invalid_argument("frechet: dimension mismatch (" + std::to_string(g1.dim()) + " vs " +
                                    std::to_string(g2.dim()) + ")");
    const Eigen::MatrixXd r1 = detail::psd_sqrt(g1.cov);
    const Eigen::MatrixXd inner = r1 * g2.cov * r1;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
    const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double d = (g1.mean - g2.mean).squaredNorm() + g1.cov.trace() + g2.cov.trace() - 2.0 * tr_sqrt;
    return std::max(0.0, d);
}

// ---------------------------------------------------------------------------
// Clip features

using Clip = std::vector<Image>;
using FeatureExtractor = std::function<std::vector<double>(const Clip&)>;

/// Frame-difference energy (per channel, mean squared) plus an 8-bin
/// normalized color histogram per channel: 27 dimensions for RGB.
inline std::vector<double> builtin_clip_features(const Clip& clip) {
    if (clip.empty()) throw std::invalid_argument("features: empty clip");
    const int ch = clip[0].channels;
    constexpr int kBins = 8;
    std::vector<double> f(std::size_t(ch) * (1 + kBins), 0.0);
    for (std::size_t t = 1; t < clip.size(); ++t) {
        if (!clip[t].same_shape(clip[0])) throw std::invalid_argument("features: frames differ in shape");
        for (std::size_t i = 0; i < clip[t].data.size(); ++i) {
            const double d = double(clip[t].data[i]) - clip[t - 1].data[i];
            f[i % ch] += d * d;
        }
    }
    const double pairs = clip.size() > 1 ? double(clip.size() - 1) * clip[0].pixel_count() : 1.0;
    for (int c = 0; c < ch; ++c) f[c] /= pairs;
    double count = 0.0;
    for (const auto& frame : clip) {
        for (std::size_t i = 0; i < frame.data.size(); ++i) {
            const int bin = std::clamp(static_cast<int>(frame.data[i] / 256.0f * kBins), 0, kBins - 1);
            f[ch + (i % ch) * kBins + bin] += 1.0;
        }
        count += double(frame.pixel_count());
    }
    for (std::size_t i = ch; i < f.size(); ++i) f[i] /= count;
    return f;
}

/// Plugin ABI: a shared library exporting
///   int dreamvvt_clip_features(const float* frames, int n_frames, int height,
///                              int width, int channels, double* out, int capacity)
/// that writes the feature vector and returns its length (negative on error).
class FeaturePlugin {
public:
    using Fn = int (*)(const float*, int, int, int, int, double*, int);
    static constexpr const char* kSymbol = "dreamvvt_clip_features";
    static constexpr int kCapacity = 4096;

    explicit FeaturePlugin(const std::string& path) : handle_(dlopen(path.c_str(), RTLD_NOW | RTLD_LOCAL), &close) {
        if (!handle_) throw std::runtime_error(std::string("feature plugin: ") + dlerror());
        fn_ = reinterpret_cast<Fn>(dlsym(handle_.get(), kSymbol));
        if (!fn_) throw std::runtime_error("feature plugin: missing symbol " + std::string(kSymbol) + " in " + path);
    }

    std::vector<double> operator()(const Clip& clip) const {
        if (clip.empty()) throw std::invalid_argument("features: empty clip");
        const auto& f0 = clip[0];
        std::vector<float> flat;
        flat.reserve(clip.size() * f0.data.size());
        for (const auto& f : clip) {
            if (!f.same_shape(f0)) throw std::invalid_argument("features: frames differ in shape");
            flat.insert(flat.end(), f.data.begin(), f.data.end());
        }
        std::vector<double> out(kCapacity);
        const int n = fn_(flat.data(), static_cast<int>(clip.size()), f0.height, f0.width, f0.channels, out.data(), kCapacity);
        if (n < 0 || n > kCapacity) throw std::runtime_error("feature plugin returned error " + std::to_string(n));
        out.resize(n);
        return out;
    }

private:
    static void close(void* h) {
        if (h) dlclose(h);
    }
    std::shared_ptr<void> handle_;
    Fn fn_ = nullptr;
};

/// "builtin" or a path to a plugin library.
inline FeatureExtractor make_feature_extractor(const std::string& spec) {
    if (spec == "builtin") return builtin_clip_features;
    auto plugin = std::make_shared<FeaturePlugin>(spec);
    return [plugin](const Clip& c) { return (*plugin)(c); };
}

// ---------------------------------------------------------------------------

struct MetricsReport {
    std::string mode;  // paired | unpaired
    std::string generated;
    std::string reference;
    std::string features;
    std::string config_hash;
    std::size_t clips = 0;
    std::size_t frames = 0;
    std::optional<double> ssim;
    std::optional<double> frechet;
    std::optional<double> perceptual;  // no perceptual network ships; always absent

    bool operator==(const MetricsReport&) const = default;
};

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
    nlohmann::ordered_json j;
    j["schema"] = "dreamvvt-metrics/1";
    j["mode"] = r.mode;
    j["generated"] = r.generated;
    j["reference"] = r.reference;
    j["features"] = r.features;
    j["config_hash"] = r.config_hash;
    j["clips"] = r.clips;
    j["frames"] = r.frames;
    j["metrics"] = {{"ssim", opt(r.ssim)}, {"frechet", opt(r.frechet)}, {"perceptual", opt(r.perceptual)}};
    return j;
}

inline MetricsReport metrics_report_from_json(const nlohmann::json& j) {
    if (j.value("schema", "") != "dreamvvt-metrics/1") throw std::invalid_argument("metrics report: unknown schema");
    auto opt = [](const nlohmann::json& v) { return v.is_null() ? std::optional<double>{} : v.get<double>(); };
    MetricsReport r;
    r.mode = j.at("mode");
    r.generated = j.at("generated");
    r.reference = j.at("reference");
    r.features = j.at("features");
    r.config_hash = j.at("config_hash");
    r.clips = j.at("clips");
    r.frames = j.at("frames");
    const auto& m = j.at("metrics");
    r.ssim = opt(m.at("ssim"));
    r.frechet = opt(m.at("frechet"));
    r.perceptual = opt(m.at("perceptual"));
    return r;
}

enum class EvalMode { paired, unpaired };

/// Paired: per-frame SSIM (mean) plus Frechet distance; unpaired: Frechet only.
inline MetricsReport evaluate_clips(const std::vector<Clip>& generated, const std::vector<Clip>& reference, EvalMode mode,
                                    const FeatureExtractor& features) {
    if (generated.empty() || reference.empty()) throw std::invalid_argument("evaluate: no clips");
    MetricsReport r;
    r.mode = mode == EvalMode::paired ? "paired" : "unpaired";
    r.clips = generated.size();
    if (mode == EvalMode::paired) {
        if (generated.size() != reference.size())
            throw std::invalid_argument("evaluate: paired mode needs one reference per generated clip");
        double acc = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < generated.size(); ++i) {
            if (generated[i].size() != reference[i].size())
                throw std::invalid_argument("evaluate: clip " + std::to_string(i) + " frame count differs from reference");
            for (std::size_t f = 0; f < generated[i].size(); ++f, ++n) acc += ssim(generated[i][f], reference[i][f]);
        }
        r.ssim = acc / double(n);
        r.frames = n;
    } else {
        for (const auto& c : generated) r.frames += c.size();
    }
    std::vector<std::vector<double>> fg, fr;
    for (const auto& c : generated) fg.push_back(features(c));
    for (const auto& c : reference) fr.push_back(features(c));
    r.frechet = frechet_distance(fit_gaussian(fg), fit_gaussian(fr));
    return r;
}

}  // namespace dreamvvt
