#pragma once

// Model checkpoints: <stem>.json (config + parameter table) next to
// <stem>.bin (raw little-endian float32, parameters back to back).

#include <bit>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dreamvvt/dit.hpp"

namespace dreamvvt {

inline nlohmann::ordered_json to_json(const DitConfig& c) {
    nlohmann::ordered_json j;
    j["dim"] = c.dim;
    j["heads"] = c.heads;
    j["blocks"] = c.blocks;
    j["ff_mult"] = c.ff_mult;
    j["text_channels"] = c.text_channels;
    j["image_channels"] = c.image_channels;
    j["video_channels"] = c.video_channels;
    j["out_channels"] = c.out_channels;
    j["lora_rank"] = c.lora_rank;
    j["lora_alpha"] = c.lora_alpha;
    j["ff_lora"] = c.ff_lora;
    j["final_lora"] = c.final_lora;
    j["final_lora_rank"] = c.final_lora_rank;
    j["final_lora_alpha"] = c.final_lora_alpha;
    j["train_input_projections"] = c.train_input_projections;
    j["modulation_gain"] = c.modulation_gain;
    j["seed"] = c.seed;
    return j;
}

inline DitConfig dit_config_from_json(const nlohmann::json& j) {
    DitConfig c;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("dim", c.dim);
    get("heads", c.heads);
    get("blocks", c.blocks);
    get("ff_mult", c.ff_mult);
    get("text_channels", c.text_channels);
    get("image_channels", c.image_channels);
    get("video_channels", c.video_channels);
    get("out_channels", c.out_channels);
    get("lora_rank", c.lora_rank);
    get("lora_alpha", c.lora_alpha);
    get("ff_lora", c.ff_lora);
    get("final_lora", c.final_lora);
    get("final_lora_rank", c.final_lora_rank);
    get("final_lora_alpha", c.final_lora_alpha);
    get("train_input_projections", c.train_input_projections);
    get("modulation_gain", c.modulation_gain);
    get("seed", c.seed);
    return c;
}

inline std::filesystem::path checkpoint_payload_path(const std::filesystem::path& manifest) {
    auto p = manifest;
    return p.replace_extension(".bin");
}

template <typename T>
void save_checkpoint(const Dit<T>& model, const std::filesystem::path& manifest_path) {
    nlohmann::ordered_json doc;
    doc["format"] = "dreamvvt-checkpoint";
    doc["version"] = 1;
    doc["dtype"] = "float32";
    doc["config"] = to_json(model.config());
    doc["payload"] = checkpoint_payload_path(manifest_path).filename().string();
    std::vector<float> payload;
    auto& table = doc["parameters"] = nlohmann::ordered_json::array();
    for (const auto& p : model.parameters()) {
        nlohmann::ordered_json e;
        e["name"] = p->name;
        e["group"] = p->group;
        e["shape"] = {p->value.rows, p->value.cols};
        e["offset"] = payload.size();
        e["trainable"] = p->trainable;
        table.push_back(std::move(e));
        for (T x : p->value.v) payload.push_back(static_cast<float>(x));
    }
    std::ofstream bin(checkpoint_payload_path(manifest_path), std::ios::binary);
    if (!bin) throw std::runtime_error("checkpoint: cannot write " + checkpoint_payload_path(manifest_path).string());
    static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes little-endian host");
    bin.write(reinterpret_cast<const char*>(payload.data()), std::streamsize(payload.size() * sizeof(float)));
    std::ofstream js(manifest_path);
    if (!js) throw std::runtime_error("checkpoint: cannot write " + manifest_path.string());
    js << doc.dump(2) << '\n';
}

template <typename T>
Dit<T> load_checkpoint(const std::filesystem::path& manifest_path) {
    std::ifstream js(manifest_path);
    if (!js) throw std::runtime_error("checkpoint: cannot open " + manifest_path.string());
    const auto doc = nlohmann::json::parse(js);
    if (doc.value("format", "") != "dreamvvt-checkpoint") throw std::runtime_error("checkpoint: unknown format");
    Dit<T> model(dit_config_from_json(doc.at("config")));

    const auto bin_path = manifest_path.parent_path() / doc.at("payload").get<std::string>();
    std::ifstream bin(bin_path, std::ios::binary | std::ios::ate);
    if (!bin) throw std::runtime_error("checkpoint: cannot open " + bin_path.string());
    std::vector<float> payload(std::size_t(bin.tellg()) / sizeof(float));
    bin.seekg(0);
    bin.read(reinterpret_cast<char*>(payload.data()), std::streamsize(payload.size() * sizeof(float)));

    const auto& table = doc.at("parameters");
    if (table.size() != model.parameters().size())
        throw std::runtime_error("checkpoint: parameter count mismatch");
    for (const auto& e : table) {
        auto p = model.find(e.at("name").get<std::string>());
        if (!p) throw std::runtime_error("checkpoint: unknown parameter " + e.at("name").get<std::string>());
        const int rows = e.at("shape")[0], cols = e.at("shape")[1];
        if (rows != p->value.rows || cols != p->value.cols)
            throw std::runtime_error("checkpoint: shape mismatch for " + p->name);
        const std::size_t off = e.at("offset");
        if (off + p->value.size() > payload.size()) throw std::runtime_error("checkpoint: truncated payload");
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value.v[i] = static_cast<T>(payload[off + i]);
        p->trainable = e.at("trainable");
    }
    return model;
}

}  // namespace dreamvvt
