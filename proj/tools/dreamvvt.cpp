// Command-line front end for the try-on pipeline.
//
// Exit codes: 0 ok, 2 configuration violation, 3 stage failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include "dreamvvt/dreamvvt.hpp"

namespace {

namespace fs = std::filesystem;
using namespace dreamvvt;

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kStageError = 3;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

PipelineConfig load_checked(const std::string& path) {
    PipelineConfig c;
    try {
        c = load_pipeline_config(path);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    const auto violations = validate_config(c);
    if (!violations.empty()) {
        std::string msg = "config violations:";
        for (const auto& v : violations) msg += "\n  - " + v;
        throw ConfigError(msg);
    }
    return c;
}

CaptionRecord read_caption_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_caption(ss.str());
}

void write_caption_file(const std::string& path, const CaptionRecord& c) {
    if (path.empty() || path == "-") {
        std::cout << serialize_caption(c) << '\n';
        return;
    }
    std::ofstream(path) << serialize_caption(c) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage video virtual try-on pipeline (desk-scale toy models)"};
    app.require_subcommand(1);

    std::string config_path;
    bool force = false;

    auto add_stage = [&](const std::string& name, const std::string& help) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("-c,--config", config_path, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_flag("--force", force, "rerun even if the manifest says the stage is up to date");
        return sub;
    };

    auto* preprocess = add_stage("preprocess", "crop windows, agnostic masks and images, pose maps, garment");
    auto* keyframes = app.add_subcommand("sample-keyframes", "select keyframes against the A-pose anchor");
    std::string k_skeletons, k_anchor, k_bboxes, k_out;
    KeyframeOptions k_opt;
    keyframes->add_option("-c,--config", config_path, "pipeline config; runs the stage of that run");
    keyframes->add_flag("--force", force);
    keyframes->add_option("--skeletons", k_skeletons, "skeleton sequence JSON");
    keyframes->add_option("--anchor", k_anchor, "anchor skeleton JSON (default: built-in A-pose)");
    keyframes->add_option("--bboxes", k_bboxes, "subject boxes JSON");
    keyframes->add_option("--k", k_opt.count, "keyframe count K")->check(CLI::PositiveNumber);
    keyframes->add_option("--lambda", k_opt.area_weight, "area-ratio weight");
    keyframes->add_option("--alpha", k_opt.interval_weight, "score-interval weight");
    keyframes->add_option("--out", k_out, "output JSON");
    auto* stage1 = add_stage("stage1", "generate try-on keyframes (best of N)");
    auto* stage2 = add_stage("stage2", "generate the try-on video in latent segments");
    auto* run_all_cmd = add_stage("run-all", "run every stage in order");

    // blend: either a pipeline stage (--config) or standalone over directories.
    auto* blend = app.add_subcommand("blend", "pyramid-fuse generated crops into original frames");
    std::string b_original, b_generated, b_mask, b_window, b_out;
    int b_levels = 4;
    blend->add_option("-c,--config", config_path, "pipeline config; runs the blend stage of that run");
    blend->add_flag("--force", force);
    blend->add_option("--original", b_original, "original frames directory");
    blend->add_option("--generated", b_generated, "generated crops directory");
    blend->add_option("--mask", b_mask, "crop masks directory");
    blend->add_option("--window", b_window, "tracking windows JSON");
    blend->add_option("--out", b_out, "output directory");
    blend->add_option("--levels", b_levels, "pyramid levels")->check(CLI::Range(1, 5));

    auto* eval = app.add_subcommand("eval", "SSIM and Frechet distance over clips");
    std::string e_mode = "paired", e_features = "builtin", e_generated, e_reference, e_out;
    eval->add_option("-c,--config", config_path, "pipeline config; evaluates that run");
    eval->add_flag("--force", force, "compare even if config hashes differ");
    eval->add_option("--mode", e_mode)->check(CLI::IsMember({"paired", "unpaired"}));
    eval->add_option("--features", e_features, "builtin or a feature plugin path");
    eval->add_option("--generated", e_generated, "generated frames (one clip) or a directory of clips");
    eval->add_option("--reference", e_reference, "reference frames (one clip) or a directory of clips");
    eval->add_option("--out", e_out, "report path");

    auto* train = app.add_subcommand("train", "train a stage model on the run's own clip");
    int t_stage = 2, t_steps = -1;
    std::string t_out, t_log;
    train->add_option("-c,--config", config_path)->required()->check(CLI::ExistingFile);
    train->add_option("--stage", t_stage)->check(CLI::IsMember({1, 2}));
    train->add_option("--steps", t_steps, "defaults to train.steps of the config");
    train->add_option("--out", t_out, "checkpoint manifest path")->required();
    train->add_option("--log", t_log, "per-step JSONL log");

    auto* generate = app.add_subcommand("generate", "sample a try-on video over a preprocessed run");
    GenerateOptions g_opt;
    std::string g_keyframes, g_caption, g_skeletons, g_out;
    generate->add_option("-c,--config", config_path)->required()->check(CLI::ExistingFile);
    generate->add_option("--checkpoint", g_opt.checkpoint, "stage-2 checkpoint manifest");
    generate->add_option("--keyframes", g_keyframes, "comma-separated keyframe PNGs");
    generate->add_option("--caption", g_caption, "caption JSON");
    generate->add_option("--skeletons", g_skeletons, "skeleton sequence JSON (replaces the run's pose)");
    generate->add_option("--steps", g_opt.steps)->check(CLI::PositiveNumber);
    generate->add_option("--cfg", g_opt.cfg_scale);
    generate->add_option("--seed", g_opt.seed);
    generate->add_option("--segments", g_opt.segments)->check(CLI::PositiveNumber);
    generate->add_option("--out", g_out, "output directory")->required();

    auto* caption = app.add_subcommand("caption", "caption utilities");
    caption->require_subcommand(1);
    std::string c_in, c_out, c_desc;
    std::uint64_t c_seed = 0;
    auto* swap = caption->add_subcommand("swap", "replace the appearance field");
    swap->add_option("--in", c_in)->required()->check(CLI::ExistingFile);
    swap->add_option("--garment", c_desc, "target garment description")->required();
    swap->add_option("--out", c_out);
    auto* drop = caption->add_subcommand("drop", "seeded condition dropout");
    drop->add_option("--in", c_in)->required()->check(CLI::ExistingFile);
    drop->add_option("--seed", c_seed)->required();
    drop->add_option("--out", c_out);

    auto* fixture = app.add_subcommand("make-fixture", "write the synthetic fixture bundle");
    std::string f_dir;
    FixtureOptions f_opt;
    fixture->add_option("dir", f_dir)->required();
    fixture->add_option("--frames", f_opt.frames)->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        auto with_run = [&](auto&& fn) {
            const PipelineConfig cfg = load_checked(config_path);
            Run run(cfg);
            RunLock lock(run.dir());
            fn(run);
        };
        if (*preprocess) with_run([&](Run& r) { run_named_stage(r, "preprocess", force); });
        if (*keyframes) {
            if (!config_path.empty()) {
                with_run([&](Run& r) { run_named_stage(r, "sample-keyframes", force); });
            } else {
                if (k_skeletons.empty() || k_bboxes.empty() || k_out.empty())
                    throw ConfigError("sample-keyframes: need --config or --skeletons --bboxes --out");
                if (!(k_opt.area_weight >= 0.0) || !(k_opt.interval_weight >= 0.0))
                    throw ConfigError("sample-keyframes: lambda and alpha must be >= 0");
                try {
                    const auto seq = skeletons_from_json(read_json(k_skeletons));
                    const auto anchor = k_anchor.empty() ? default_anchor_pose() : skeleton_from_json(read_json(k_anchor));
                    const auto ks = sample_keyframes(seq, anchor, rects_from_json(read_json(k_bboxes)), k_opt);
                    write_json(k_out, to_json(ks));
                } catch (const std::exception& e) {
                    throw StageError("sample-keyframes", e.what());
                }
            }
        }
        if (*stage1) with_run([&](Run& r) { run_named_stage(r, "stage1", force); });
        if (*stage2) with_run([&](Run& r) { run_named_stage(r, "stage2", force); });
        if (*run_all_cmd) with_run([&](Run& r) { run_all(r, force); });

        if (*blend) {
            if (!config_path.empty()) {
                with_run([&](Run& r) { run_named_stage(r, "blend", force); });
            } else {
                if (b_original.empty() || b_generated.empty() || b_mask.empty() || b_window.empty() || b_out.empty())
                    throw ConfigError("blend: need --config or all of --original --generated --mask --window --out");
                try {
                    const auto n = blend_directories(b_original, b_generated, b_mask, b_window, b_out, b_levels);
                    std::cerr << "blend: wrote " << n << " frames\n";
                } catch (const std::exception& e) {
                    throw StageError("blend", e.what());
                }
            }
        }

        if (*eval) {
            if (!config_path.empty()) {
                with_run([&](Run& r) {
                    r.allow_hash_mismatch = force;
                    run_named_stage(r, "eval", force);
                });
            } else {
                if (e_generated.empty() || e_reference.empty() || e_out.empty())
                    throw ConfigError("eval: need --config or all of --generated --reference --out");
                try {
                    std::string hg, hr;
                    const auto gen = load_clips(e_generated, &hg);
                    const auto ref = load_clips(e_reference, &hr);
                    if (!hg.empty() && !hr.empty() && hg != hr && !force)
                        throw std::runtime_error("config hashes differ (" + hg + " vs " + hr + "); use --force to compare");
                    auto rep = evaluate_clips(gen, ref, e_mode == "paired" ? EvalMode::paired : EvalMode::unpaired,
                                              make_feature_extractor(e_features));
                    rep.generated = e_generated;
                    rep.reference = e_reference;
                    rep.features = e_features;
                    rep.config_hash = hg;
                    write_json(e_out, to_json(rep));
                    std::cout << to_json(rep)["metrics"].dump() << '\n';
                } catch (const std::exception& e) {
                    throw StageError("eval", e.what());
                }
            }
        }

        if (*train) {
            with_run([&](Run& r) {
                run_named_stage(r, "preprocess");
                run_named_stage(r, "sample-keyframes");
                try {
                    std::optional<std::uint64_t> noise;
                    if (r.config.train_fixed_noise) noise = r.config.sample.seed;
                    const FlowSample s = t_stage == 1 ? build_stage1_training_sample(r, noise) : build_training_sample(r, noise);
                    Dit<float> model = make_stage_model<float>(r.config, t_stage);
                    std::ofstream log;
                    if (!t_log.empty()) log.open(t_log);
                    const int steps = t_steps >= 0 ? t_steps : r.config.train_steps;
                    train_on_sample(model, s, r.config.train, steps, [&](const TrainLogEntry& e) {
                        if (log) log << to_jsonl(e) << '\n';
                        if (e.step % 50 == 0 || e.step + 1 == steps)
                            std::cerr << "step " << e.step << " loss " << e.result.loss << '\n';
                    });
                    save_checkpoint(model, t_out);
                } catch (const std::exception& e) {
                    throw StageError("train", e.what());
                }
            });
        }

        if (*generate) {
            with_run([&](Run& r) {
                run_named_stage(r, "preprocess");
                run_named_stage(r, "sample-keyframes");
                if (g_keyframes.empty()) run_named_stage(r, "stage1");
                try {
                    std::stringstream ss(g_keyframes);
                    for (std::string item; std::getline(ss, item, ',');)
                        if (!item.empty()) g_opt.keyframes.emplace_back(item);
                    if (!g_caption.empty()) g_opt.caption = g_caption;
                    if (!g_skeletons.empty()) g_opt.skeletons = g_skeletons;
                    const auto res = generate_video(r, g_opt);
                    fs::create_directories(g_out);
                    write_latent((fs::path(g_out) / "latent.bin").string(), res.latent, Stream::video,
                                 std::stoull(r.hash, nullptr, 16));
                    for (std::size_t i = 0; i < res.crops.size(); ++i)
                        write_png(fs::path(g_out) / frame_name(i), res.crops[i], r.tag());
                    std::cerr << "generate: " << res.segments.size() << " segments, " << res.crops.size() << " frames\n";
                } catch (const std::exception& e) {
                    throw StageError("generate", e.what());
                }
            });
        }

        if (*swap) write_caption_file(c_out, swap_appearance(read_caption_file(c_in), c_desc));
        if (*drop) write_caption_file(c_out, drop_conditions(read_caption_file(c_in), c_seed));
        if (*fixture) {
            make_fixture(f_dir, f_opt);
            std::cerr << "fixture written to " << f_dir << '\n';
        }
    } catch (const ConfigError& e) {
        std::cerr << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kStageError;
    }
    return kOk;
}
