#pragma once

// Three-field caption records (environment / appearance / motion), appearance
// swap, condition dropout and a hashed-projection toy text encoder.

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dreamvvt/rng.hpp"

namespace dreamvvt {

// Wire keys follow the captioning template verbatim, including its spelling.
inline constexpr const char* kEnvironmentKey = "ENVIRONMENT";
inline constexpr const char* kAppearanceKey = "APPERANCE";
inline constexpr const char* kMotionKey = "MOTION";

struct CaptionRecord {
    std::string environment;
    std::string appearance;
    std::string motion;

    bool operator==(const CaptionRecord&) const = default;
};

class CaptionParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline CaptionRecord parse_caption(const std::string& json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw CaptionParseError(std::string("caption: malformed JSON: ") + e.what());
    }
    if (!doc.is_object()) throw CaptionParseError("caption: top level must be an object");
    for (const auto& [key, _] : doc.items())
        if (key != kEnvironmentKey && key != kAppearanceKey && key != kMotionKey)
            throw CaptionParseError("caption: unknown key '" + key + "'");
    auto field = [&](const char* key) {
        if (!doc.contains(key)) throw CaptionParseError(std::string("caption: missing key '") + key + "'");
        if (!doc[key].is_string()) throw CaptionParseError(std::string("caption: key '") + key + "' must be a string");
        return doc[key].get<std::string>();
    };
    return {field(kEnvironmentKey), field(kAppearanceKey), field(kMotionKey)};
}

inline std::string serialize_caption(const CaptionRecord& r) {
    nlohmann::ordered_json doc;
    doc[kEnvironmentKey] = r.environment;
    doc[kAppearanceKey] = r.appearance;
    doc[kMotionKey] = r.motion;
    return doc.dump();
}

inline CaptionRecord swap_appearance(CaptionRecord caption, std::string garment_description) {
    caption.appearance = std::move(garment_description);
    return caption;
}

struct DropOptions {
    double p_drop_appearance = 0.3;
    double p_drop_environment = 0.3;
};

/// Independently blank appearance / environment; motion is always kept.
/// Draws come from a counter RNG keyed by the seed, so the call is replayable.
inline CaptionRecord drop_conditions(CaptionRecord caption, std::uint64_t seed, const DropOptions& opt = {}) {
    auto check = [](double p) {
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("drop probability outside [0,1]");
    };
    check(opt.p_drop_appearance);
    check(opt.p_drop_environment);
    constexpr std::uint64_t kDropStream = 0xD809;
    if (CounterRng::uniform_at(seed, kDropStream, 0) < opt.p_drop_appearance) caption.appearance.clear();
    if (CounterRng::uniform_at(seed, kDropStream, 1) < opt.p_drop_environment) caption.environment.clear();
    return caption;
}

// ---------------------------------------------------------------------------

struct TextEncoderConfig {
    int channels = 16;     // c_t
    int max_tokens = 128;  // l_t, fixed after padding
};

struct TextTokens {
    int channels = 0;
    std::vector<float> tokens;  // max_tokens x channels; padding rows are the zero "null" vector
    int used = 0;               // tokens before padding

    std::size_t length() const { return channels == 0 ? 0 : tokens.size() / channels; }
    bool operator==(const TextTokens&) const = default;
};

inline std::vector<std::string> caption_words(const CaptionRecord& c) {
    std::vector<std::string> words;
    for (const auto* field : {&c.environment, &c.appearance, &c.motion}) {
        std::istringstream in(*field);
        std::string w;
        while (in >> w) words.push_back(w);
    }
    return words;
}

inline std::uint64_t word_hash(const std::string& word) { return fnv1a64(word); }

/// Each whitespace token maps to a fixed Gaussian vector seeded by its 64-bit
/// hash (scaled by 1/sqrt(c_t)); the sequence is truncated or zero-padded to max_tokens.
inline TextTokens encode_text(const CaptionRecord& caption, const TextEncoderConfig& cfg = {}) {
    if (cfg.channels <= 0 || cfg.max_tokens <= 0) throw std::invalid_argument("text encoder: bad config");
    TextTokens out;
    out.channels = cfg.channels;
    out.tokens.assign(std::size_t(cfg.max_tokens) * cfg.channels, 0.0f);
    const auto words = caption_words(caption);
    out.used = std::min<int>(static_cast<int>(words.size()), cfg.max_tokens);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.channels));
    for (int i = 0; i < out.used; ++i) {
        const std::uint64_t h = word_hash(words[i]);
        for (int c = 0; c < cfg.channels; ++c)
            out.tokens[std::size_t(i) * cfg.channels + c] = static_cast<float>(scale * CounterRng::normal_at(h, 0x7E47, c));
    }
    return out;
}

}  // namespace dreamvvt
