#pragma once

// End-to-end orchestration: preprocess -> keyframes -> stage 1 (keyframe
// try-on) -> stage 2 (video) -> fusion -> evaluation, over a run directory
// with a manifest of content-hashed outputs.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dreamvvt/caption.hpp"
#include "dreamvvt/checkpoint.hpp"
#include "dreamvvt/codec.hpp"
#include "dreamvvt/conditioning.hpp"
#include "dreamvvt/diffusion.hpp"
#include "dreamvvt/dit.hpp"
#include "dreamvvt/fusion.hpp"
#include "dreamvvt/image_io.hpp"
#include "dreamvvt/keyframes.hpp"
#include "dreamvvt/metrics.hpp"
#include "dreamvvt/pose.hpp"

namespace dreamvvt {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = "0.1.0";

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string content_hash(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot hash " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return hex64(fnv1a64(ss.str()));
}

// ---------------------------------------------------------------------------
// Configuration

struct ModelSettings {
    int dim = 64;
    int heads = 4;
    int blocks = 2;
    int ff_mult = 2;
    int lora_rank = 4;
    double lora_alpha = 4.0;
    bool ff_lora = false;
    bool final_lora = true;
    int final_lora_rank = 0;
    double final_lora_alpha = 0.0;
    double modulation_gain = 0.1;
    int video_channels = 0;  // 0: derived as 2c + 1 + c_p
    std::uint64_t seed = 1;
    std::string checkpoint;  // empty: freshly initialized base weights
};

struct PipelineConfig {
    fs::path base_dir;  // relative input paths resolve against this; not serialized

    std::uint64_t seed = 42;
    struct Inputs {
        std::string frames = "frames";
        std::string skeletons = "skeletons.json";
        std::string bboxes = "bboxes.json";
        std::string garment = "garment.png";
        std::string garment_mask = "garment_mask.png";
        std::string caption = "caption.json";
        std::string garment_description = "a garment";
    } inputs;
    struct Video {
        int frames = 16;
        int width = 64;
        int height = 64;
    } video;
    std::string output_dir = "run";

    double padding_ratio = 0.1;
    MaskOptions mask;
    KeyframeOptions keyframes;
    CodecConfig codec;
    TextEncoderConfig text;
    PoseGuiderConfig pose_guider;
    ModelSettings stage1_model;
    ModelSettings stage2_model;
    int best_of = 3;
    int segment_frames = 16;
    TrainConfig train;
    int train_steps = 500;
    bool train_fixed_noise = false;
    SampleConfig sample;
    int fusion_levels = 4;
    std::string eval_features = "builtin";

    fs::path resolve(const std::string& p) const {
        const fs::path q(p);
        return q.is_absolute() ? q : base_dir / q;
    }
    fs::path run_dir() const { return resolve(output_dir); }
};

inline nlohmann::ordered_json to_json(const ModelSettings& m) {
    nlohmann::ordered_json j;
    j["dim"] = m.dim;
    j["heads"] = m.heads;
    j["blocks"] = m.blocks;
    j["ff_mult"] = m.ff_mult;
    j["lora_rank"] = m.lora_rank;
    j["lora_alpha"] = m.lora_alpha;
    j["ff_lora"] = m.ff_lora;
    j["final_lora"] = m.final_lora;
    j["final_lora_rank"] = m.final_lora_rank;
    j["final_lora_alpha"] = m.final_lora_alpha;
    j["modulation_gain"] = m.modulation_gain;
    j["video_channels"] = m.video_channels;
    j["seed"] = m.seed;
    j["checkpoint"] = m.checkpoint;
    return j;
}

namespace detail {

template <typename V>
void read_field(const nlohmann::json& j, const char* key, V& field) {
    if (j.contains(key)) field = j.at(key).get<V>();
}

}  // namespace detail

inline ModelSettings model_settings_from_json(const nlohmann::json& j) {
    ModelSettings m;
    using detail::read_field;
    read_field(j, "dim", m.dim);
    read_field(j, "heads", m.heads);
    read_field(j, "blocks", m.blocks);
    read_field(j, "ff_mult", m.ff_mult);
    read_field(j, "lora_rank", m.lora_rank);
    read_field(j, "lora_alpha", m.lora_alpha);
    read_field(j, "ff_lora", m.ff_lora);
    read_field(j, "final_lora", m.final_lora);
    read_field(j, "final_lora_rank", m.final_lora_rank);
    read_field(j, "final_lora_alpha", m.final_lora_alpha);
    read_field(j, "modulation_gain", m.modulation_gain);
    read_field(j, "video_channels", m.video_channels);
    read_field(j, "seed", m.seed);
    read_field(j, "checkpoint", m.checkpoint);
    return m;
}

inline nlohmann::ordered_json to_json(const PipelineConfig& c) {
    nlohmann::ordered_json j;
    j["seed"] = c.seed;
    j["inputs"] = {{"frames", c.inputs.frames},
                   {"skeletons", c.inputs.skeletons},
                   {"bboxes", c.inputs.bboxes},
                   {"garment", c.inputs.garment},
                   {"garment_mask", c.inputs.garment_mask},
                   {"caption", c.inputs.caption},
                   {"garment_description", c.inputs.garment_description}};
    j["video"] = {{"frames", c.video.frames}, {"width", c.video.width}, {"height", c.video.height}};
    j["output_dir"] = c.output_dir;
    j["preprocess"] = {{"padding_ratio", c.padding_ratio},
                       {"dilation_radius", c.mask.dilation_radius},
                       {"scope", to_string(c.mask.scope)},
                       {"min_confidence", c.mask.min_confidence}};
    j["keyframes"] = {{"area_weight", c.keyframes.area_weight},
                      {"interval_weight", c.keyframes.interval_weight},
                      {"count", c.keyframes.count}};
    j["codec"] = {{"temporal_factor", c.codec.temporal_factor},
                  {"spatial_factor", c.codec.spatial_factor},
                  {"keep_channels", c.codec.keep_channels}};
    j["text"] = {{"channels", c.text.channels}, {"max_tokens", c.text.max_tokens}};
    j["pose_guider"] = {{"channels", c.pose_guider.channels}, {"window", c.pose_guider.window}, {"seed", c.pose_guider.seed}};
    j["stage1"] = {{"model", to_json(c.stage1_model)}, {"best_of", c.best_of}};
    j["stage2"] = {{"model", to_json(c.stage2_model)}, {"segment_frames", c.segment_frames}};
    nlohmann::ordered_json tasks;
    for (const auto& [task, p] : c.train.task_probabilities) tasks[to_string(task)] = p;
    j["train"] = {{"learning_rate", c.train.learning_rate},
                  {"weight_decay", c.train.weight_decay},
                  {"grad_clip_norm", c.train.grad_clip_norm},
                  {"task_probabilities", tasks},
                  {"p_uncond", c.train.p_uncond},
                  {"seed", c.train.seed},
                  {"steps", c.train_steps},
                  {"fixed_noise", c.train_fixed_noise}};
    j["sample"] = {{"steps", c.sample.steps}, {"cfg_scale", c.sample.cfg_scale}, {"seed", c.sample.seed}};
    j["fusion"] = {{"levels", c.fusion_levels}};
    j["eval"] = {{"features", c.eval_features}};
    return j;
}

/// Missing keys keep their defaults; type errors throw.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
    using detail::read_field;
    PipelineConfig c;
    c.base_dir = base_dir;
    read_field(j, "seed", c.seed);
    if (j.contains("inputs")) {
        const auto& i = j["inputs"];
        read_field(i, "frames", c.inputs.frames);
        read_field(i, "skeletons", c.inputs.skeletons);
        read_field(i, "bboxes", c.inputs.bboxes);
        read_field(i, "garment", c.inputs.garment);
        read_field(i, "garment_mask", c.inputs.garment_mask);
        read_field(i, "caption", c.inputs.caption);
        read_field(i, "garment_description", c.inputs.garment_description);
    }
    if (j.contains("video")) {
        read_field(j["video"], "frames", c.video.frames);
        read_field(j["video"], "width", c.video.width);
        read_field(j["video"], "height", c.video.height);
    }
    read_field(j, "output_dir", c.output_dir);
    if (j.contains("preprocess")) {
        const auto& p = j["preprocess"];
        read_field(p, "padding_ratio", c.padding_ratio);
        read_field(p, "dilation_radius", c.mask.dilation_radius);
        read_field(p, "min_confidence", c.mask.min_confidence);
        if (p.contains("scope")) c.mask.scope = parse_scope(p["scope"].get<std::string>());
    }
    if (j.contains("keyframes")) {
        read_field(j["keyframes"], "area_weight", c.keyframes.area_weight);
        read_field(j["keyframes"], "interval_weight", c.keyframes.interval_weight);
        read_field(j["keyframes"], "count", c.keyframes.count);
    }
    if (j.contains("codec")) {
        read_field(j["codec"], "temporal_factor", c.codec.temporal_factor);
        read_field(j["codec"], "spatial_factor", c.codec.spatial_factor);
        read_field(j["codec"], "keep_channels", c.codec.keep_channels);
    }
    if (j.contains("text")) {
        read_field(j["text"], "channels", c.text.channels);
        read_field(j["text"], "max_tokens", c.text.max_tokens);
    }
    if (j.contains("pose_guider")) {
        read_field(j["pose_guider"], "channels", c.pose_guider.channels);
        read_field(j["pose_guider"], "window", c.pose_guider.window);
        read_field(j["pose_guider"], "seed", c.pose_guider.seed);
    }
    if (j.contains("stage1")) {
        if (j["stage1"].contains("model")) c.stage1_model = model_settings_from_json(j["stage1"]["model"]);
        read_field(j["stage1"], "best_of", c.best_of);
    }
    if (j.contains("stage2")) {
        if (j["stage2"].contains("model")) c.stage2_model = model_settings_from_json(j["stage2"]["model"]);
        read_field(j["stage2"], "segment_frames", c.segment_frames);
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        read_field(t, "learning_rate", c.train.learning_rate);
        read_field(t, "weight_decay", c.train.weight_decay);
        read_field(t, "grad_clip_norm", c.train.grad_clip_norm);
        read_field(t, "p_uncond", c.train.p_uncond);
        read_field(t, "seed", c.train.seed);
        read_field(t, "steps", c.train_steps);
        read_field(t, "fixed_noise", c.train_fixed_noise);
        if (t.contains("task_probabilities")) {
            c.train.task_probabilities.clear();
            for (const auto& [k, v] : t["task_probabilities"].items()) c.train.task_probabilities[parse_task(k)] = v.get<double>();
        }
    }
    if (j.contains("sample")) {
        read_field(j["sample"], "steps", c.sample.steps);
        read_field(j["sample"], "cfg_scale", c.sample.cfg_scale);
        read_field(j["sample"], "seed", c.sample.seed);
    }
    if (j.contains("fusion")) read_field(j["fusion"], "levels", c.fusion_levels);
    if (j.contains("eval")) read_field(j["eval"], "features", c.eval_features);
    return c;
}

inline PipelineConfig load_pipeline_config(const fs::path& path) {
    return pipeline_config_from_json(read_json(path), fs::absolute(path).parent_path());
}

/// FNV-1a over the canonical (key-sorted, compact) dump of the normalized config.
inline std::string config_hash(const PipelineConfig& c) {
    const nlohmann::json canonical = to_json(c);
    return hex64(fnv1a64(canonical.dump()));
}

inline int latent_channels(const PipelineConfig& c, int temporal_factor) {
    const int full = c.codec.full_channels(temporal_factor);
    return c.codec.keep_channels > 0 ? std::min(c.codec.keep_channels, full) : full;
}

inline std::vector<std::string> validate_config(const PipelineConfig& c) {
    std::vector<std::string> v;
    auto check = [&](bool ok, const std::string& msg) {
        if (!ok) v.push_back(msg);
    };
    const int tf = c.codec.temporal_factor, sf = c.codec.spatial_factor;
    check(tf == 4, "codec temporal_factor must be 4");
    check(sf == 16, "codec spatial_factor must be 16");
    check(c.codec.keep_channels >= 0, "codec keep_channels must be >= 0");
    check(c.video.frames >= 1, "video frames must be >= 1");
    if (tf > 0) check(c.video.frames % tf == 0, "T not divisible by " + std::to_string(tf));
    if (sf > 0) {
        check(c.video.height % sf == 0, "H not divisible by " + std::to_string(sf));
        check(c.video.width % sf == 0, "W not divisible by " + std::to_string(sf));
    }
    check(c.keyframes.count >= 1, "keyframe count K must be >= 1");
    check(c.keyframes.count <= std::size_t(std::max(c.video.frames, 0)), "keyframe count K exceeds frame count");
    check(c.keyframes.area_weight >= 0.0, "keyframe area_weight must be >= 0");
    check(c.keyframes.interval_weight >= 0.0, "keyframe interval_weight must be >= 0");
    check(c.mask.dilation_radius > 0.0, "dilation_radius must be > 0");
    check(c.mask.min_confidence >= 0.0 && c.mask.min_confidence <= 1.0, "min_confidence outside [0,1]");
    check(c.padding_ratio >= 0.0, "padding_ratio must be >= 0");
    check(c.text.channels > 0 && c.text.max_tokens > 0, "text encoder dims must be positive");
    check(c.pose_guider.channels > 0, "pose guider channels must be > 0");
    check(c.pose_guider.window >= 0, "pose guider window must be >= 0");
    for (const auto* m : {&c.stage1_model, &c.stage2_model}) {
        const std::string which = m == &c.stage1_model ? "stage1" : "stage2";
        check(m->dim > 0 && m->heads > 0 && m->dim % m->heads == 0, which + " model dim must be a multiple of heads");
        check(m->blocks >= 1, which + " model needs >= 1 block");
        check(m->ff_mult >= 1, which + " model ff_mult must be >= 1");
        check(m->lora_rank >= 0 && m->final_lora_rank >= 0, which + " LoRA rank must be >= 0");
        check(m->lora_alpha > 0.0, which + " lora_alpha must be > 0");
    }
    if (tf > 0 && sf > 0) {
        const int c2 = latent_channels(c, tf), c1 = latent_channels(c, 1);
        const int want2 = 2 * c2 + 1 + c.pose_guider.channels, want1 = 2 * c1 + 1 + c.pose_guider.channels;
        if (c.stage2_model.video_channels != 0)
            check(c.stage2_model.video_channels == want2,
                  "stage2 video_channels " + std::to_string(c.stage2_model.video_channels) + " != 2c+1+c_p = " +
                      std::to_string(want2));
        if (c.stage1_model.video_channels != 0)
            check(c.stage1_model.video_channels == want1,
                  "stage1 video_channels " + std::to_string(c.stage1_model.video_channels) + " != 2c+1+c_p = " +
                      std::to_string(want1));
    }
    check(c.best_of >= 1, "best_of must be >= 1");
    check(c.segment_frames >= 2 * tf && tf > 0 && c.segment_frames % tf == 0,
          "segment_frames must be a multiple of the temporal factor covering >= 2 latent slices");
    check(c.train.learning_rate > 0.0, "learning_rate must be > 0");
    check(c.train.weight_decay >= 0.0, "weight_decay must be >= 0");
    check(c.train.grad_clip_norm > 0.0, "grad_clip_norm must be > 0");
    check(c.train.p_uncond >= 0.0 && c.train.p_uncond <= 1.0, "p_uncond outside [0,1]");
    check(c.train_steps >= 0, "train steps must be >= 0");
    {
        double sum = 0.0;
        bool in_range = !c.train.task_probabilities.empty();
        for (const auto& [task, p] : c.train.task_probabilities) {
            sum += p;
            in_range = in_range && p >= 0.0 && p <= 1.0;
        }
        check(in_range, "task probabilities must lie in [0,1]");
        if (std::abs(sum - 1.0) > 1e-9) {
            std::ostringstream ss;
            ss << "schedule sums to " << sum;
            v.push_back(ss.str());
        }
    }
    check(c.sample.steps >= 1, "sample steps must be >= 1");
    check(c.sample.cfg_scale >= 0.0, "cfg_scale must be >= 0");
    check(c.fusion_levels >= 1 && c.fusion_levels <= 5, "fusion levels must be in [1,5]");
    check(!c.output_dir.empty(), "output_dir must be set");
    return v;
}

// ---------------------------------------------------------------------------
// Run directory bookkeeping

class RunLock {
public:
    explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
        fs::create_directories(dir);
        const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0) throw std::runtime_error("run directory " + dir.string() + " is locked by another process (" + path_.string() + ")");
        const std::string pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
        ::close(fd);
    }
    ~RunLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    fs::path path_;
};

struct StageOutput {
    std::string path;  // relative to the run directory
    std::string hash;
};

/// Stage entries hold content hashes of their outputs; wall-clock timings are
/// kept in a separate file so the manifest itself is reproducible.
class RunManifest {
public:
    explicit RunManifest(fs::path run_dir) : dir_(std::move(run_dir)) {
        if (fs::exists(path())) doc_ = read_json(path());
        if (!doc_.is_object()) doc_ = nlohmann::ordered_json::object();
    }

    fs::path path() const { return dir_ / "manifest.json"; }
    const fs::path& dir() const { return dir_; }
    const nlohmann::ordered_json& json() const { return doc_; }

    bool stage_complete(const std::string& stage, const std::string& hash) const {
        if (!doc_.contains("stages") || !doc_["stages"].contains(stage)) return false;
        const auto& e = doc_["stages"][stage];
        if (e.value("config_hash", "") != hash) return false;
        for (const auto& o : e.at("outputs")) {
            const fs::path p = dir_ / o.at("path").get<std::string>();
            if (!fs::exists(p) || content_hash(p) != o.at("hash").get<std::string>()) return false;
        }
        return true;
    }

    std::vector<std::string> outputs(const std::string& stage) const {
        std::vector<std::string> out;
        if (doc_.contains("stages") && doc_["stages"].contains(stage))
            for (const auto& o : doc_["stages"][stage].at("outputs")) out.push_back(o.at("path"));
        return out;
    }

    void record(const std::string& stage, const std::string& hash, const std::vector<fs::path>& files,
                const nlohmann::ordered_json& info = {}) {
        doc_["config_hash"] = hash;
        doc_["module_versions"] = {{"dreamvvt", kVersion}};
        nlohmann::ordered_json e;
        e["config_hash"] = hash;
        auto& outs = e["outputs"] = nlohmann::ordered_json::array();
        for (const auto& f : files) {
            if (!fs::exists(f)) throw std::runtime_error("manifest: output missing at write time: " + f.string());
            outs.push_back({{"path", fs::relative(f, dir_).generic_string()}, {"hash", content_hash(f)}});
        }
        if (!info.is_null()) e["info"] = info;
        doc_["stages"][stage] = std::move(e);
        write_json(path(), doc_);
    }

    void record_timing(const std::string& stage, double seconds) const {
        const fs::path p = dir_ / "timings.json";
        nlohmann::ordered_json t = fs::exists(p) ? nlohmann::ordered_json(read_json(p)) : nlohmann::ordered_json::object();
        t[stage] = seconds;
        write_json(p, t);
    }

private:
    fs::path dir_;
    nlohmann::ordered_json doc_;
};

class StageError : public std::runtime_error {
public:
    StageError(const std::string& stage, const std::string& what) : std::runtime_error(stage + ": " + what) {}
};

struct Run {
    PipelineConfig config;
    std::string hash;
    RunManifest manifest;
    std::function<void(const std::string&)> log = [](const std::string& m) { std::cerr << m << '\n'; };
    bool allow_hash_mismatch = false;  // eval compares artifacts from other configs

    explicit Run(PipelineConfig c) : config(std::move(c)), hash(config_hash(config)), manifest(config.run_dir()) {}

    fs::path dir() const { return manifest.dir(); }
    fs::path stage_dir(const std::string& s) const {
        const auto p = dir() / s;
        fs::create_directories(p);
        return p;
    }
    PngText tag() const { return {{kConfigHashKey, hash}}; }
};

using StageFn = std::function<std::vector<fs::path>(Run&, nlohmann::ordered_json& info)>;

/// Runs a stage unless the manifest already holds it with matching hashes.
/// Returns false when skipped.
inline bool run_stage(Run& run, const std::string& name, const StageFn& fn, bool force = false) {
    if (!force && run.manifest.stage_complete(name, run.hash)) {
        run.log(name + ": up to date");
        return false;
    }
    const auto t0 = std::chrono::steady_clock::now();
    nlohmann::ordered_json info;
    std::vector<fs::path> files;
    try {
        files = fn(run, info);
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
    run.manifest.record(name, run.hash, files, info);
    run.manifest.record_timing(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    run.log(name + ": done (" + std::to_string(files.size()) + " outputs)");
    return true;
}

// ---------------------------------------------------------------------------
// Stage inputs on disk

struct ClipInputs {
    std::vector<Image> frames;
    SkeletonSequence skeletons;
    std::vector<Rect> bboxes;
    CaptionRecord caption;
};

inline ClipInputs load_clip_inputs(const PipelineConfig& c) {
    ClipInputs in;
    in.frames = read_frames(c.resolve(c.inputs.frames));
    in.skeletons = skeletons_from_json(read_json(c.resolve(c.inputs.skeletons)));
    in.bboxes = rects_from_json(read_json(c.resolve(c.inputs.bboxes)));
    {
        std::ifstream f(c.resolve(c.inputs.caption));
        if (!f) throw std::runtime_error("cannot open caption " + c.resolve(c.inputs.caption).string());
        std::stringstream ss;
        ss << f.rdbuf();
        in.caption = parse_caption(ss.str());
    }
    if (in.frames.empty()) throw std::runtime_error("no input frames");
    if (in.skeletons.frames.size() != in.frames.size() || in.bboxes.size() != in.frames.size())
        throw std::runtime_error("frames, skeletons and boxes disagree in length (" + std::to_string(in.frames.size()) +
                                 ", " + std::to_string(in.skeletons.frames.size()) + ", " + std::to_string(in.bboxes.size()) +
                                 ")");
    for (const auto& f : in.frames)
        if (!f.same_size(in.skeletons.width(), in.skeletons.height()) || f.channels != 3)
            throw std::runtime_error("frame size does not match skeleton canvas");
    return in;
}

/// Preprocessed crop-space data, read back from the preprocess stage outputs.
struct Preprocessed {
    TrackingWindow windows;
    std::vector<Image> crops;
    std::vector<Mask> masks;
    std::vector<Image> agnostic;
    std::vector<Image> pose_maps;
    Image garment;
    CaptionRecord caption;  // appearance swapped to the target garment
    CaptionRecord source_caption;
};

inline Preprocessed load_preprocessed(const Run& run) {
    const auto d = run.dir() / "preprocess";
    Preprocessed p;
    p.windows = tracking_window_from_json(read_json(d / "windows.json"));
    p.crops = read_frames(d / "crops");
    for (const auto& f : list_pngs(d / "masks")) p.masks.push_back(read_mask_png(f));
    p.agnostic = read_frames(d / "agnostic");
    for (auto m : read_frames(d / "pose_maps")) {
        for (auto& v : m.data) v = v >= 128.0f ? 1.0f : 0.0f;
        p.pose_maps.push_back(std::move(m));
    }
    p.garment = read_png(d / "garment.png").image;
    const auto caps = read_json(d / "captions.json");
    p.caption = parse_caption(caps.at("target").dump());
    p.source_caption = parse_caption(caps.at("source").dump());
    return p;
}

// ---------------------------------------------------------------------------
// Stages

inline std::vector<fs::path> stage_preprocess(Run& run, nlohmann::ordered_json& info) {
    const auto& c = run.config;
    const ClipInputs in = load_clip_inputs(c);
    const auto d = run.stage_dir("preprocess");
    for (const auto* sub : {"crops", "masks", "agnostic", "pose_maps"}) {
        fs::remove_all(d / sub);
        fs::create_directories(d / sub);
    }
    const TrackingWindow tw = compute_tracking_windows(in.bboxes, in.skeletons.width(), in.skeletons.height(), c.padding_ratio);
    for (const auto& w : tw.warnings) run.log("preprocess: warning: " + w);
    std::vector<fs::path> files;
    auto png = [&](const fs::path& p, const Image& img) {
        write_png(p, img, run.tag());
        files.push_back(p);
    };
    const BoneGraph bones = BoneGraph::coco17();
    for (std::size_t i = 0; i < in.frames.size(); ++i) {
        const auto [ox, oy] = tw.origins[i];
        const Image crop_img = crop(in.frames[i], ox, oy, tw.width, tw.height);
        const Skeleton sk = to_crop(in.skeletons.frames[i], ox, oy, tw.width, tw.height);
        const Rect box = to_crop(in.bboxes[i], ox, oy);
        Mask mask;
        try {
            mask = make_agnostic_mask(sk, box, c.mask, bones);
        } catch (const std::exception& e) {
            throw std::runtime_error("frame " + std::to_string(i) + ": " + e.what());
        }
        png(d / "crops" / frame_name(i), crop_img);
        write_mask_png(d / "masks" / frame_name(i), mask, run.tag());
        files.push_back(d / "masks" / frame_name(i));
        png(d / "agnostic" / frame_name(i), make_agnostic_image(crop_img, mask));
        Image map = rasterize_skeleton(sk, bones, 1.5, c.mask.min_confidence);
        for (auto& v : map.data) v *= 255.0f;
        png(d / "pose_maps" / frame_name(i), map);
    }
    const Image garment_rgb = read_png(c.resolve(c.inputs.garment)).image;
    const Mask garment_fg = read_mask_png(c.resolve(c.inputs.garment_mask));
    const GarmentImage g = preprocess_garment(garment_rgb, garment_fg, tw.width, tw.height);
    png(d / "garment.png", g.rgb);

    nlohmann::ordered_json w = to_json(tw);
    w["config_hash"] = run.hash;
    write_json(d / "windows.json", w);
    files.push_back(d / "windows.json");

    // Text alignment is a pass-through: the target caption only swaps the appearance field.
    nlohmann::ordered_json caps;
    caps["source"] = nlohmann::ordered_json::parse(serialize_caption(in.caption));
    caps["target"] = nlohmann::ordered_json::parse(serialize_caption(swap_appearance(in.caption, c.inputs.garment_description)));
    caps["config_hash"] = run.hash;
    write_json(d / "captions.json", caps);
    files.push_back(d / "captions.json");

    info["frames"] = in.frames.size();
    info["window"] = {tw.width, tw.height};
    info["warnings"] = tw.warnings;
    return files;
}

inline KeyframeOptions effective_keyframe_options(const PipelineConfig& c, std::size_t frames) {
    KeyframeOptions o = c.keyframes;
    o.pose.min_confidence = c.mask.min_confidence;
    o.count = std::min(o.count, frames);
    return o;
}

inline nlohmann::ordered_json to_json(const KeyframeSet& ks) {
    nlohmann::ordered_json j;
    j["indices"] = ks.indices;
    j["padded"] = ks.padded;
    j["threshold"] = ks.threshold;
    auto& s = j["scores"] = nlohmann::ordered_json::array();
    for (const auto& f : ks.scores)
        s.push_back({{"index", f.index}, {"motion", f.motion_similarity}, {"area", f.area_ratio}, {"final", f.final}});
    return j;
}

inline std::vector<std::size_t> load_keyframe_indices(const Run& run) {
    return read_json(run.dir() / "keyframes" / "keyframes.json").at("indices").get<std::vector<std::size_t>>();
}

inline std::vector<fs::path> stage_sample_keyframes(Run& run, nlohmann::ordered_json& info) {
    const auto& c = run.config;
    const auto seq = skeletons_from_json(read_json(c.resolve(c.inputs.skeletons)));
    const auto boxes = rects_from_json(read_json(c.resolve(c.inputs.bboxes)));
    const auto opt = effective_keyframe_options(c, seq.frames.size());
    if (opt.count < c.keyframes.count) run.log("sample-keyframes: warning: K reduced to " + std::to_string(opt.count));
    const KeyframeSet ks = sample_keyframes(seq, default_anchor_pose(), boxes, opt);
    const auto d = run.stage_dir("keyframes");
    auto j = to_json(ks);
    j["config_hash"] = run.hash;
    write_json(d / "keyframes.json", j);
    info["indices"] = ks.indices;
    return {d / "keyframes.json"};
}

template <typename T>
Dit<T> make_stage_model(const PipelineConfig& c, int stage) {
    const ModelSettings& m = stage == 1 ? c.stage1_model : c.stage2_model;
    const int tf = stage == 1 ? 1 : c.codec.temporal_factor;
    const int ch = latent_channels(c, tf);
    DitConfig dc;
    dc.dim = m.dim;
    dc.heads = m.heads;
    dc.blocks = m.blocks;
    dc.ff_mult = m.ff_mult;
    dc.text_channels = c.text.channels;
    dc.image_channels = latent_channels(c, 1);
    dc.video_channels = 2 * ch + 1 + c.pose_guider.channels;
    dc.out_channels = ch;
    dc.lora_rank = m.lora_rank;
    dc.lora_alpha = m.lora_alpha;
    dc.ff_lora = m.ff_lora;
    dc.final_lora = m.final_lora;
    dc.final_lora_rank = m.final_lora_rank;
    dc.final_lora_alpha = m.final_lora_alpha;
    dc.modulation_gain = m.modulation_gain;
    dc.seed = m.seed;
    if (m.checkpoint.empty()) return Dit<T>(dc);
    Dit<T> model = load_checkpoint<T>(c.resolve(m.checkpoint));
    const auto& got = model.config();
    if (got.video_channels != dc.video_channels || got.image_channels != dc.image_channels ||
        got.out_channels != dc.out_channels || got.text_channels != dc.text_channels)
        throw std::runtime_error("checkpoint " + m.checkpoint + " does not match the configured channel layout");
    return model;
}

inline CodecConfig image_codec(const PipelineConfig& c) {
    CodecConfig k = c.codec;
    k.temporal_factor = 1;
    return k;
}

inline PoseGuider make_pose_guider(const PipelineConfig& c, int temporal_factor) {
    PoseGuiderConfig g = c.pose_guider;
    g.spatial_factor = c.codec.spatial_factor;
    g.temporal_factor = temporal_factor;
    return PoseGuider(g);
}

/// Stage-1 conditions for the chosen keyframes: keyframes form the video
/// stream (one latent slice each), the garment forms the reference image stream.
inline Conditions stage1_conditions(const PipelineConfig& c, const std::vector<Image>& agnostic, const std::vector<Mask>& masks,
                                    const std::vector<Image>& pose_maps, const Image& garment, const CaptionRecord& caption) {
    const CodecConfig k = image_codec(c);
    Conditions cond;
    cond.agnostic = encode(to_video(agnostic), 1, k);
    cond.mask = resize_mask_to_latent(masks, k);
    cond.pose = make_pose_guider(c, 1)(pose_maps, 0);
    cond.keyframes = encode_keyframes({garment}, k);
    cond.text = encode_text(caption, c.text);
    cond.frame_lengths.assign(agnostic.size(), cond.agnostic.h * cond.agnostic.w);
    cond.mode = AttentionMode::reference;
    return cond;
}

/// Best-of-N selector: negative mean absolute difference to the agnostic image
/// over pixels outside the mask (higher is better).
inline double unmasked_similarity(const std::vector<Image>& generated, const std::vector<Image>& agnostic,
                                  const std::vector<Mask>& masks) {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < generated.size(); ++i)
        for (int y = 0; y < masks[i].height; ++y)
            for (int x = 0; x < masks[i].width; ++x) {
                if (masks[i].at(x, y)) continue;
                for (int ch = 0; ch < 3; ++ch, ++n) acc += std::abs(generated[i].at(x, y, ch) - agnostic[i].at(x, y, ch));
            }
    return n == 0 ? 0.0 : -acc / double(n);
}

inline void clamp_pixels(std::vector<Image>& frames) {
    for (auto& f : frames)
        for (auto& v : f.data) v = std::clamp(v, 0.0f, 255.0f);
}

inline std::vector<fs::path> stage_stage1(Run& run, nlohmann::ordered_json& info) {
    const auto& c = run.config;
    const Preprocessed pre = load_preprocessed(run);
    const auto idx = load_keyframe_indices(run);
    std::vector<Image> agn, maps;
    std::vector<Mask> masks;
    for (auto i : idx) {
        agn.push_back(pre.agnostic.at(i));
        masks.push_back(pre.masks.at(i));
        maps.push_back(pre.pose_maps.at(i));
    }
    const Conditions cond = stage1_conditions(c, agn, masks, maps, pre.garment, pre.caption);
    const Dit<float> model = make_stage_model<float>(c, 1);
    const CodecConfig k = image_codec(c);
    const auto& g = cond.agnostic;
    auto generate = [&](std::uint64_t seed) {
        LatentVideo lat = euler_integrate(noise_latent(g.t, g.h, g.w, model.config().out_channels, seed), c.sample.steps,
                                          guided_velocity(model, cond, c.sample.cfg_scale));
        auto images = to_images(decode(lat, 1, k));
        clamp_pixels(images);
        return images;
    };
    const auto best = best_of_n(generate, c.best_of,
                                [&](const std::vector<Image>& imgs) { return unmasked_similarity(imgs, agn, masks); },
                                c.sample.seed);
    const auto d = run.stage_dir("stage1");
    std::vector<fs::path> files;
    for (std::size_t i = 0; i < best.result.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "keyframe_%02zu.png", i);
        write_png(d / name, best.result[i], run.tag());
        files.push_back(d / name);
    }
    nlohmann::ordered_json j;
    j["indices"] = idx;
    j["seeds"] = nlohmann::ordered_json::array();
    for (int i = 0; i < c.best_of; ++i) j["seeds"].push_back(c.sample.seed + std::uint64_t(i));
    j["scores"] = best.scores;
    j["selected_seed"] = best.seed;
    j["config_hash"] = run.hash;
    write_json(d / "stage1.json", j);
    files.push_back(d / "stage1.json");
    info["selected_seed"] = best.seed;
    return files;
}

inline std::vector<Image> load_stage1_keyframes(const Run& run) {
    std::vector<Image> out;
    for (const auto& p : list_pngs(run.dir() / "stage1")) out.push_back(read_png(p).image);
    return out;
}

inline Conditions stage2_conditions(const PipelineConfig& c, const std::vector<Image>& agnostic, const std::vector<Mask>& masks,
                                    const std::vector<Image>& pose_maps, const std::vector<Image>& keyframes,
                                    const CaptionRecord& caption) {
    Conditions cond;
    cond.agnostic = encode(to_video(agnostic), c.codec.temporal_factor, c.codec);
    cond.mask = resize_mask_to_latent(masks, c.codec);
    cond.pose = make_pose_guider(c, c.codec.temporal_factor)(pose_maps);
    if (!keyframes.empty()) cond.keyframes = encode_keyframes(keyframes, image_codec(c));
    cond.text = encode_text(caption, c.text);
    return cond;
}

inline LatentVideo generate_video_latent(const Dit<float>& model, const Conditions& cond, const PipelineConfig& c,
                                         Handoff handoff = Handoff::latent, std::vector<LatentVideo>* segments = nullptr) {
    const auto& g = cond.agnostic;
    const SegmentPlan plan = plan_segments(g.t, c.segment_frames / c.codec.temporal_factor, g.h, g.w, model.config().out_channels);
    std::vector<Conditions> per;
    for (std::size_t k = 0; k < plan.lengths.size(); ++k)
        per.push_back(slice_conditions(cond, plan.start(int(k)), plan.lengths[k]));
    auto segs = generate_segments(
        plan, [&](int k) { return guided_velocity(model, per[k], c.sample.cfg_scale); }, c.sample, handoff, c.codec);
    LatentVideo out = stitch_segments(segs);
    if (segments) *segments = std::move(segs);
    return out;
}

inline std::vector<fs::path> stage_stage2(Run& run, nlohmann::ordered_json& info) {
    const auto& c = run.config;
    const Preprocessed pre = load_preprocessed(run);
    const std::size_t T = pre.crops.size();
    if (T % std::size_t(c.codec.temporal_factor) != 0)
        throw std::runtime_error("frame count " + std::to_string(T) + " not divisible by " +
                                 std::to_string(c.codec.temporal_factor));
    const Conditions cond = stage2_conditions(c, pre.agnostic, pre.masks, pre.pose_maps, load_stage1_keyframes(run), pre.caption);
    const Dit<float> model = make_stage_model<float>(c, 2);
    std::vector<LatentVideo> segs;
    const LatentVideo lat = generate_video_latent(model, cond, c, Handoff::latent, &segs);

    const auto d = run.stage_dir("stage2");
    fs::remove_all(d / "crops");
    fs::create_directories(d / "crops");
    std::vector<fs::path> files;
    write_latent((d / "latent.bin").string(), lat, Stream::video, std::stoull(run.hash, nullptr, 16));
    files.push_back(d / "latent.bin");
    auto crops = to_images(decode(lat, c.codec.temporal_factor, c.codec));
    clamp_pixels(crops);
    for (std::size_t i = 0; i < crops.size(); ++i) {
        write_png(d / "crops" / frame_name(i), crops[i], run.tag());
        files.push_back(d / "crops" / frame_name(i));
    }
    info["segments"] = segs.size();
    info["latent_shape"] = {lat.t, lat.h, lat.w, lat.c};
    return files;
}

/// Pastes each generated crop into its source frame with pyramid fusion.
inline std::vector<Image> blend_frames(const std::vector<Image>& originals, const std::vector<Image>& generated,
                                       const std::vector<Mask>& masks, const TrackingWindow& windows, int levels) {
    if (generated.size() != originals.size() || masks.size() != originals.size() || windows.origins.size() != originals.size())
        throw std::runtime_error("blend: frame, crop, mask and window counts differ");
    std::vector<Image> out;
    for (std::size_t i = 0; i < originals.size(); ++i) out.push_back(pyramid_fuse(originals[i], generated[i], masks[i], windows.rect(i), levels));
    return out;
}

/// A directory of PNGs is one clip; otherwise each sorted subdirectory is a clip.
/// `hash` receives the common config hash ("" if untagged); mixed hashes throw.
inline std::vector<Clip> load_clips(const fs::path& dir, std::string* hash = nullptr) {
    std::vector<Clip> clips;
    std::vector<std::string> hashes;
    bool has_png = false;
    std::vector<fs::path> subdirs;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") has_png = true;
        if (e.is_directory()) subdirs.push_back(e.path());
    }
    std::sort(subdirs.begin(), subdirs.end());
    if (!has_png && subdirs.empty()) throw std::runtime_error("no frames under " + dir.string());
    const std::vector<fs::path> roots = has_png ? std::vector<fs::path>{dir} : subdirs;
    for (const auto& r : roots) {
        std::string h;
        clips.push_back(read_frames(r, &h));
        hashes.push_back(h);
    }
    for (const auto& h : hashes)
        if (h != hashes.front()) throw std::runtime_error("clips under " + dir.string() + " carry different config hashes");
    if (hash) *hash = hashes.front();
    return clips;
}

/// Standalone blend over directories: original frames, generated crops, crop masks, windows JSON.
inline std::size_t blend_directories(const fs::path& original, const fs::path& generated, const fs::path& mask_dir,
                                     const fs::path& windows_json, const fs::path& out, int levels) {
    std::string hash;
    const auto originals = read_frames(original);
    const auto crops = read_frames(generated, &hash);
    std::vector<Mask> masks;
    for (const auto& p : list_pngs(mask_dir)) masks.push_back(read_mask_png(p));
    const auto fused = blend_frames(originals, crops, masks, tracking_window_from_json(read_json(windows_json)), levels);
    fs::create_directories(out);
    const PngText tag = hash.empty() ? PngText{} : PngText{{kConfigHashKey, hash}};
    for (std::size_t i = 0; i < fused.size(); ++i) write_png(out / frame_name(i), fused[i], tag);
    return fused.size();
}

inline std::vector<fs::path> stage_blend(Run& run, nlohmann::ordered_json& info) {
    const auto& c = run.config;
    const Preprocessed pre = load_preprocessed(run);
    const auto originals = read_frames(c.resolve(c.inputs.frames));
    const auto generated = read_frames(run.dir() / "stage2" / "crops");
    const auto fused = blend_frames(originals, generated, pre.masks, pre.windows, c.fusion_levels);
    const auto d = run.stage_dir("output");
    std::vector<fs::path> files;
    for (std::size_t i = 0; i < fused.size(); ++i) {
        write_png(d / frame_name(i), fused[i], run.tag());
        files.push_back(d / frame_name(i));
    }
    info["frames"] = fused.size();
    return files;
}

inline std::vector<fs::path> stage_eval(Run& run, nlohmann::ordered_json& info) {
    const auto& c = run.config;
    std::string gen_hash;
    const auto generated = read_frames(run.dir() / "output", &gen_hash);
    if (gen_hash != run.hash) {
        const std::string msg = "output frames carry config hash " + gen_hash + ", run is " + run.hash;
        if (!run.allow_hash_mismatch) throw std::runtime_error(msg);
        run.log("eval: warning: " + msg);
    }
    const auto reference = read_frames(c.resolve(c.inputs.frames));
    MetricsReport r = evaluate_clips({generated}, {reference}, EvalMode::paired, make_feature_extractor(c.eval_features));
    r.generated = "output";
    r.reference = c.inputs.frames;
    r.features = c.eval_features;
    r.config_hash = gen_hash;
    const auto d = run.stage_dir("eval");
    write_json(d / "report.json", to_json(r));
    info["ssim"] = *r.ssim;
    return {d / "report.json"};
}

inline const std::vector<std::pair<std::string, StageFn>>& pipeline_stages() {
    static const std::vector<std::pair<std::string, StageFn>> stages = {
        {"preprocess", stage_preprocess}, {"sample-keyframes", stage_sample_keyframes},
        {"stage1", stage_stage1},         {"stage2", stage_stage2},
        {"blend", stage_blend},           {"eval", stage_eval},
    };
    return stages;
}

inline void run_named_stage(Run& run, const std::string& name, bool force = false) {
    for (const auto& [n, fn] : pipeline_stages())
        if (n == name) {
            run_stage(run, n, fn, force);
            return;
        }
    throw std::invalid_argument("unknown stage '" + name + "'");
}

inline void run_all(Run& run, bool force = false) {
    for (const auto& [n, fn] : pipeline_stages()) run_stage(run, n, fn, force);
}

// ---------------------------------------------------------------------------
// Ad-hoc generation over a preprocessed run

struct GenerateOptions {
    std::string checkpoint;                 // empty: the configured stage-2 model
    std::vector<fs::path> keyframes;        // empty: the run's stage-1 images
    std::optional<fs::path> caption;        // empty: the run's target caption
    std::optional<fs::path> skeletons;      // replaces the run's pose maps
    std::optional<int> steps;
    std::optional<double> cfg_scale;
    std::optional<std::uint64_t> seed;
    int segments = 0;                       // 0: derived from segment_frames
};

struct GenerateResult {
    LatentVideo latent;
    std::vector<LatentVideo> segments;
    std::vector<Image> crops;
};

/// Largest per-segment length whose plan over `slices` has exactly `segments` segments.
inline int slices_per_segment(int slices, int segments) {
    if (segments < 1) throw std::invalid_argument("segments must be >= 1");
    if (segments == 1) return std::max(slices, 2);
    for (int per = slices; per >= 2; --per)
        if (plan_segments(slices, per, 1, 1, 1).lengths.size() == std::size_t(segments)) return per;
    throw std::invalid_argument(std::to_string(slices) + " latent slices cannot form " + std::to_string(segments) +
                                " equal overlapping segments");
}

inline GenerateResult generate_video(const Run& run, const GenerateOptions& o) {
    PipelineConfig c = run.config;
    if (!o.checkpoint.empty()) c.stage2_model.checkpoint = fs::absolute(o.checkpoint).string();
    if (o.steps) c.sample.steps = *o.steps;
    if (o.cfg_scale) c.sample.cfg_scale = *o.cfg_scale;
    if (o.seed) c.sample.seed = *o.seed;
    c.sample.validate();
    Preprocessed pre = load_preprocessed(run);
    if (o.caption) {
        std::ifstream f(*o.caption);
        if (!f) throw std::runtime_error("cannot open caption " + o.caption->string());
        std::stringstream ss;
        ss << f.rdbuf();
        pre.caption = parse_caption(ss.str());
    }
    if (o.skeletons) {
        const auto seq = skeletons_from_json(read_json(*o.skeletons));
        if (seq.frames.size() != pre.crops.size()) throw std::runtime_error("skeleton count does not match the run's frames");
        const BoneGraph bones = BoneGraph::coco17();
        for (std::size_t i = 0; i < seq.frames.size(); ++i) {
            const auto [ox, oy] = pre.windows.origins[i];
            pre.pose_maps[i] = rasterize_skeleton(to_crop(seq.frames[i], ox, oy, pre.windows.width, pre.windows.height), bones,
                                                  1.5, c.mask.min_confidence);
        }
    }
    std::vector<Image> kf;
    if (o.keyframes.empty()) {
        kf = load_stage1_keyframes(run);
    } else {
        for (const auto& p : o.keyframes) kf.push_back(read_png(p).image);
    }
    const Conditions cond = stage2_conditions(c, pre.agnostic, pre.masks, pre.pose_maps, kf, pre.caption);
    if (o.segments > 0) c.segment_frames = slices_per_segment(cond.agnostic.t, o.segments) * c.codec.temporal_factor;
    const Dit<float> model = make_stage_model<float>(c, 2);
    GenerateResult r;
    r.latent = generate_video_latent(model, cond, c, Handoff::latent, &r.segments);
    r.crops = to_images(decode(r.latent, c.codec.temporal_factor, c.codec));
    clamp_pixels(r.crops);
    return r;
}

// ---------------------------------------------------------------------------
// Training data

/// One training sample from a preprocessed run: the crop video is the target,
/// ground-truth keyframe crops are the image stream, the source caption is the text.
inline FlowSample build_training_sample(const Run& run, std::optional<std::uint64_t> fixed_noise_seed = {}) {
    const auto& c = run.config;
    const Preprocessed pre = load_preprocessed(run);
    std::vector<Image> kf;
    for (auto i : load_keyframe_indices(run)) kf.push_back(pre.crops.at(i));
    FlowSample s;
    s.x0 = encode(to_video(pre.crops), c.codec.temporal_factor, c.codec);
    s.cond = stage2_conditions(c, pre.agnostic, pre.masks, pre.pose_maps, kf, pre.source_caption);
    if (fixed_noise_seed) s.noise = noise_latent(s.x0.t, s.x0.h, s.x0.w, s.x0.c, *fixed_noise_seed);
    return s;
}

/// Stage-1 counterpart: the target is the keyframe crops, the reference is the garment.
inline FlowSample build_stage1_training_sample(const Run& run, std::optional<std::uint64_t> fixed_noise_seed = {}) {
    const auto& c = run.config;
    const Preprocessed pre = load_preprocessed(run);
    std::vector<Image> crops, agn, maps;
    std::vector<Mask> masks;
    for (auto i : load_keyframe_indices(run)) {
        crops.push_back(pre.crops.at(i));
        agn.push_back(pre.agnostic.at(i));
        masks.push_back(pre.masks.at(i));
        maps.push_back(pre.pose_maps.at(i));
    }
    FlowSample s;
    s.x0 = encode(to_video(crops), 1, image_codec(c));
    s.cond = stage1_conditions(c, agn, masks, maps, pre.garment, pre.source_caption);
    if (fixed_noise_seed) s.noise = noise_latent(s.x0.t, s.x0.h, s.x0.w, s.x0.c, *fixed_noise_seed);
    return s;
}

struct TrainLogEntry {
    int step = 0;
    StepResult result;
};

/// Trains `model` on one sample for `steps` steps; `on_step` sees every step.
inline void train_on_sample(Dit<float>& model, const FlowSample& sample, const TrainConfig& cfg, int steps,
                            const std::function<void(const TrainLogEntry&)>& on_step = {}) {
    cfg.validate();
    AdamW<float> opt(model.trainable_parameters(), cfg);
    for (int i = 0; i < steps; ++i) {
        const StepResult r = training_step(model, opt, sample, cfg, std::uint64_t(i));
        if (on_step) on_step({i, r});
    }
}

inline std::string to_jsonl(const TrainLogEntry& e) {
    nlohmann::ordered_json j;
    j["step"] = e.step;
    j["task"] = to_string(e.result.task);
    j["loss"] = e.result.loss;
    j["grad_norm"] = e.result.grad_norm_pre_clip;
    return j.dump();
}

// ---------------------------------------------------------------------------
// Synthetic fixture bundle

struct FixtureOptions {
    int frames = 16;
    int width = 64;
    int height = 64;
    std::uint64_t seed = 7;
};

inline Skeleton fixture_skeleton(int f, const FixtureOptions& o) {
    const double phase = 2.0 * std::numbers::pi * f / o.frames;
    const double cx = o.width / 2.0 + 3.0 * std::sin(phase);
    const double top = 12.0;
    Skeleton s;
    s.frame_width = o.width;
    s.frame_height = o.height;
    s.joints.resize(coco::joint_count);
    auto set = [&](int j, double x, double y) { s.joints[j] = {x, y, 1.0}; };
    using namespace coco;
    set(nose, cx, top + 2);
    set(left_eye, cx + 1.5, top + 1);
    set(right_eye, cx - 1.5, top + 1);
    set(left_ear, cx + 3, top + 2);
    set(right_ear, cx - 3, top + 2);
    set(left_shoulder, cx + 6, top + 8);
    set(right_shoulder, cx - 6, top + 8);
    const double swing_l = 0.4 + 0.9 * std::max(0.0, std::sin(phase));
    const double swing_r = 0.4 + 0.9 * std::max(0.0, -std::sin(phase));
    set(left_elbow, cx + 6 + 7 * std::sin(swing_l), top + 8 + 7 * std::cos(swing_l));
    set(right_elbow, cx - 6 - 7 * std::sin(swing_r), top + 8 + 7 * std::cos(swing_r));
    set(left_wrist, cx + 6 + 13 * std::sin(swing_l), top + 8 + 13 * std::cos(swing_l));
    set(right_wrist, cx - 6 - 13 * std::sin(swing_r), top + 8 + 13 * std::cos(swing_r));
    set(left_hip, cx + 4, top + 24);
    set(right_hip, cx - 4, top + 24);
    set(left_knee, cx + 5, top + 32);
    set(right_knee, cx - 5, top + 32);
    set(left_ankle, cx + 5, top + 40);
    set(right_ankle, cx - 5, top + 40);
    return s;
}

inline Image fixture_frame(const Skeleton& s, const FixtureOptions& o) {
    Image img(o.width, o.height, 3);
    for (int y = 0; y < o.height; ++y)
        for (int x = 0; x < o.width; ++x) {
            img.at(x, y, 0) = float(60 + 2 * y);
            img.at(x, y, 1) = float(90 + x);
            img.at(x, y, 2) = float(150 - y);
        }
    auto limb = [&](int a, int b, double r, std::array<float, 3> color) {
        const auto& p = s.joints[a];
        const auto& q = s.joints[b];
        for (int y = 0; y < o.height; ++y)
            for (int x = 0; x < o.width; ++x)
                if (point_segment_distance(x + 0.5, y + 0.5, p.x, p.y, q.x, q.y) <= r)
                    for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = color[ch];
    };
    using namespace coco;
    const std::array<float, 3> skin{224, 172, 140}, shirt{200, 40, 40}, pants{40, 50, 140};
    limb(left_hip, left_ankle, 2.2, pants);
    limb(right_hip, right_ankle, 2.2, pants);
    limb(left_shoulder, left_hip, 3.0, shirt);
    limb(right_shoulder, right_hip, 3.0, shirt);
    limb(left_shoulder, right_shoulder, 3.0, shirt);
    limb(left_hip, right_hip, 3.0, shirt);
    limb(left_shoulder, left_elbow, 1.8, shirt);
    limb(right_shoulder, right_elbow, 1.8, shirt);
    limb(left_elbow, left_wrist, 1.5, skin);
    limb(right_elbow, right_wrist, 1.5, skin);
    limb(nose, nose, 3.5, skin);
    return img;
}

inline Rect fixture_bbox(const Skeleton& s) {
    double x0 = 1e9, y0 = 1e9, x1 = -1e9, y1 = -1e9;
    for (const auto& j : s.joints) {
        x0 = std::min(x0, j.x);
        y0 = std::min(y0, j.y);
        x1 = std::max(x1, j.x);
        y1 = std::max(y1, j.y);
    }
    x0 = std::max(0.0, std::floor(x0 - 3));
    y0 = std::max(0.0, std::floor(y0 - 4));
    x1 = std::min(double(s.frame_width), std::ceil(x1 + 3));
    y1 = std::min(double(s.frame_height), std::ceil(y1 + 3));
    return {x0, y0, x1 - x0, y1 - y0};
}

/// Writes frames/, skeletons.json, bboxes.json, garment.png, garment_mask.png,
/// caption.json and config.json into `dir`.
inline void make_fixture(const fs::path& dir, const FixtureOptions& o = {}) {
    fs::create_directories(dir / "frames");
    SkeletonSequence seq;
    std::vector<Rect> boxes;
    for (int f = 0; f < o.frames; ++f) {
        const Skeleton s = fixture_skeleton(f, o);
        write_png(dir / "frames" / frame_name(std::size_t(f)), fixture_frame(s, o));
        seq.frames.push_back(s);
        boxes.push_back(fixture_bbox(s));
    }
    write_json(dir / "skeletons.json", to_json(seq));
    write_json(dir / "anchor_apose.json", to_json(default_anchor_pose()));
    write_json(dir / "bboxes.json", to_json(boxes));

    Image garment(40, 40, 3, 255.0f);
    Mask fg(40, 40, 1, 0);
    for (int y = 6; y < 36; ++y)
        for (int x = 4; x < 36; ++x) {
            const bool body = x >= 11 && x < 29;
            const bool sleeves = y < 16;
            if (!(body || sleeves)) continue;
            fg.at(x, y) = 1;
            const float stripe = (y / 4) % 2 ? 30.0f : 0.0f;
            garment.at(x, y, 0) = 40.0f + stripe;
            garment.at(x, y, 1) = 150.0f + stripe;
            garment.at(x, y, 2) = 60.0f;
        }
    write_png(dir / "garment.png", garment);
    write_mask_png(dir / "garment_mask.png", fg);

    const CaptionRecord cap{"an outdoor plaza with a blue gradient sky", "a red short sleeve shirt and dark blue trousers",
                            "the person sways and swings both arms"};
    std::ofstream(dir / "caption.json") << nlohmann::json::parse(serialize_caption(cap)).dump(2) << '\n';

    PipelineConfig c;
    c.inputs.garment_description = "a green striped short sleeve shirt";
    c.video = {o.frames, o.width, o.height};
    c.mask.scope = GarmentScope::upper;
    c.mask.dilation_radius = 3.0;
    c.segment_frames = 8;
    write_json(dir / "config.json", to_json(c));
}

}  // namespace dreamvvt
