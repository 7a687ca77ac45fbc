#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtforge/attack.hpp"
#include "vtforge/encoder.hpp"
#include "vtforge/error.hpp"
#include "vtforge/rng.hpp"
#include "vtforge/version.hpp"
#include "vtforge/weights_io.hpp"

namespace vtforge {

struct SweepConfig {
    std::vector<double> budgets = {1.0 / 255, 2.0 / 255, 4.0 / 255, 8.0 / 255, 12.0 / 255, 16.0 / 255};
    std::vector<double> noise_sizes = {1.0 / 255, 2.0 / 255, 3.0 / 255, 4.0 / 255,
                                       5.0 / 255, 6.0 / 255, 7.0 / 255, 8.0 / 255};
    std::vector<uint64_t> seeds;  // empty -> {attack.seed}
    std::vector<int> checkpoints;  // empty -> {0, steps/4, steps/2, 3*steps/4, steps}
};

struct RunConfig {
    int version = kConfigSchemaVersion;
    AttackConfig attack;
    ViTConfig image_encoder;
    TextConfig text_encoder;
    SweepConfig sweep;
    std::string image_weights_path;  // optional; generated from seed when empty
    std::string text_weights_path;
};

namespace detail {

using nlohmann::json;

// Strict object access: every key must be known, every read type-checked.
class StrictObject {
   public:
    StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j.is_object()) fail(ErrKind::kConfig, where_ + ": expected a JSON object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    const json& at(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    double number(const std::string& key, double fallback) {
        if (!has(key)) return fallback;
        const json& v = at(key);
        if (!v.is_number()) fail(ErrKind::kConfig, where_ + "." + key + ": expected a number");
        return v.get<double>();
    }

    int integer(const std::string& key, int fallback) {
        if (!has(key)) return fallback;
        const json& v = at(key);
        if (!v.is_number_integer()) fail(ErrKind::kConfig, where_ + "." + key + ": expected an integer");
        return v.get<int>();
    }

    uint64_t unsigned64(const std::string& key, uint64_t fallback) {
        if (!has(key)) return fallback;
        const json& v = at(key);
        if (!v.is_number_integer() || v.get<long long>() < 0)
            fail(ErrKind::kConfig, where_ + "." + key + ": expected a non-negative integer");
        return v.get<uint64_t>();
    }

    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        const json& v = at(key);
        if (!v.is_boolean()) fail(ErrKind::kConfig, where_ + "." + key + ": expected a boolean");
        return v.get<bool>();
    }

    std::string string(const std::string& key, const std::string& fallback) {
        if (!has(key)) return fallback;
        const json& v = at(key);
        if (!v.is_string()) fail(ErrKind::kConfig, where_ + "." + key + ": expected a string");
        return v.get<std::string>();
    }

    // rejects unknown keys; call after all reads
    void finish() {
        for (const auto& item : j_.items())
            if (!seen_.count(item.key()))
                fail(ErrKind::kConfig, "unknown config key '" + where_ + "." + item.key() + "'");
    }

    const std::string& where() const { return where_; }

   private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

inline AttackTerm parse_term(const json& j, const std::string& where, bool default_enabled) {
    AttackTerm t;
    t.enabled = default_enabled;
    StrictObject o(j, where);
    t.enabled = o.boolean("enabled", t.enabled);
    t.weight = o.number("weight", t.weight);
    o.finish();
    return t;
}

template <typename T>
std::vector<T> parse_number_array(const json& j, const std::string& where) {
    if (!j.is_array()) fail(ErrKind::kConfig, where + ": expected an array");
    std::vector<T> out;
    for (const auto& v : j) {
        if (!v.is_number()) fail(ErrKind::kConfig, where + ": expected numeric entries");
        out.push_back(v.get<T>());
    }
    return out;
}

}  // namespace detail

inline AttackConfig parse_attack_config(const nlohmann::json& j, const std::string& where = "attack") {
    detail::StrictObject o(j, where);
    AttackConfig cfg;
    cfg.epsilon = o.number("epsilon", cfg.epsilon);
    cfg.alpha = o.number("alpha", cfg.alpha);
    cfg.steps = o.integer("steps", cfg.steps);
    if (o.has("divergence")) {
        std::string d = o.string("divergence", "mse");
        if (d == "mse")
            cfg.divergence = Divergence::kMse;
        else if (d == "kl")
            cfg.divergence = Divergence::kKl;
        else
            fail(ErrKind::kConfig, where + ".divergence: expected \"mse\" or \"kl\", got \"" + d + "\"");
    }
    if (o.has("feature")) cfg.feature = detail::parse_term(o.at("feature"), where + ".feature", cfg.feature.enabled);
    if (o.has("relation"))
        cfg.relation = detail::parse_term(o.at("relation"), where + ".relation", cfg.relation.enabled);
    if (o.has("semantics"))
        cfg.semantics = detail::parse_term(o.at("semantics"), where + ".semantics", cfg.semantics.enabled);
    cfg.k_min = o.integer("k_min", cfg.k_min);
    cfg.k_max = o.integer("k_max", cfg.k_max);
    cfg.init_noise_std = o.number("init_noise_std", cfg.init_noise_std);
    cfg.seed = o.unsigned64("seed", cfg.seed);
    cfg.caption = o.string("caption", cfg.caption);
    o.finish();
    cfg.validate();
    return cfg;
}

inline ViTConfig parse_vit_config(const nlohmann::json& j, const std::string& where = "image_encoder") {
    detail::StrictObject o(j, where);
    ViTConfig cfg;
    cfg.image_size = o.integer("image_size", cfg.image_size);
    cfg.patch_size = o.integer("patch_size", cfg.patch_size);
    cfg.channels = o.integer("channels", cfg.channels);
    cfg.model_dim = o.integer("model_dim", cfg.model_dim);
    cfg.heads = o.integer("heads", cfg.heads);
    cfg.layers = o.integer("layers", cfg.layers);
    cfg.mlp_ratio = o.integer("mlp_ratio", cfg.mlp_ratio);
    cfg.projection_dim = o.integer("projection_dim", cfg.projection_dim);
    cfg.seed = o.unsigned64("seed", cfg.seed);
    o.finish();
    cfg.validate();
    return cfg;
}

inline TextConfig parse_text_config(const nlohmann::json& j, const std::string& where = "text_encoder") {
    detail::StrictObject o(j, where);
    TextConfig cfg;
    cfg.vocab_size = o.integer("vocab_size", cfg.vocab_size);
    cfg.max_len = o.integer("max_len", cfg.max_len);
    cfg.model_dim = o.integer("model_dim", cfg.model_dim);
    cfg.heads = o.integer("heads", cfg.heads);
    cfg.layers = o.integer("layers", cfg.layers);
    cfg.projection_dim = o.integer("projection_dim", cfg.projection_dim);
    cfg.seed = o.unsigned64("seed", cfg.seed);
    o.finish();
    cfg.validate();
    return cfg;
}

inline SweepConfig parse_sweep_config(const nlohmann::json& j, const std::string& where = "sweep") {
    detail::StrictObject o(j, where);
    SweepConfig cfg;
    if (o.has("budgets")) cfg.budgets = detail::parse_number_array<double>(o.at("budgets"), where + ".budgets");
    if (o.has("noise_sizes"))
        cfg.noise_sizes = detail::parse_number_array<double>(o.at("noise_sizes"), where + ".noise_sizes");
    if (o.has("seeds")) {
        auto v = detail::parse_number_array<long long>(o.at("seeds"), where + ".seeds");
        for (long long s : v) {
            if (s < 0) fail(ErrKind::kConfig, where + ".seeds: seeds must be non-negative");
            cfg.seeds.push_back(static_cast<uint64_t>(s));
        }
    }
    if (o.has("checkpoints")) {
        auto v = detail::parse_number_array<long long>(o.at("checkpoints"), where + ".checkpoints");
        for (long long c : v) cfg.checkpoints.push_back(static_cast<int>(c));
    }
    o.finish();
    return cfg;
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
    detail::StrictObject o(j, "config");
    if (!o.has("version")) fail(ErrKind::kConfig, "config: missing required key 'version'");
    int version = o.integer("version", -1);
    if (version != kConfigSchemaVersion)
        fail(ErrKind::kConfig, "config: unsupported schema version " + std::to_string(version) + " (expected " +
                                   std::to_string(kConfigSchemaVersion) + ")");
    RunConfig cfg;
    cfg.version = version;
    if (o.has("attack")) cfg.attack = parse_attack_config(o.at("attack"));
    else {
        AttackConfig defaults;
        defaults.validate();  // default semantics term requires a caption
        cfg.attack = defaults;
    }
    if (o.has("image_encoder")) cfg.image_encoder = parse_vit_config(o.at("image_encoder"));
    if (o.has("text_encoder")) cfg.text_encoder = parse_text_config(o.at("text_encoder"));
    if (o.has("sweep")) cfg.sweep = parse_sweep_config(o.at("sweep"));
    cfg.image_weights_path = o.string("image_weights", "");
    cfg.text_weights_path = o.string("text_weights", "");
    o.finish();
    if (cfg.sweep.seeds.empty()) cfg.sweep.seeds = {cfg.attack.seed};
    if (cfg.sweep.checkpoints.empty()) {
        int k = cfg.attack.steps;
        cfg.sweep.checkpoints = {0, k / 4, k / 2, 3 * k / 4, k};
    }
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::string bytes = detail::read_file_bytes(path);
    nlohmann::json j = nlohmann::json::parse(bytes, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) fail(ErrKind::kConfig, "'" + path + "': malformed JSON");
    return parse_run_config(j);
}

inline nlohmann::json attack_config_to_json(const AttackConfig& cfg) {
    nlohmann::json term_f = {{"enabled", cfg.feature.enabled}, {"weight", cfg.feature.weight}};
    nlohmann::json term_r = {{"enabled", cfg.relation.enabled}, {"weight", cfg.relation.weight}};
    nlohmann::json term_s = {{"enabled", cfg.semantics.enabled}, {"weight", cfg.semantics.weight}};
    return {{"epsilon", cfg.epsilon},
            {"alpha", cfg.alpha},
            {"steps", cfg.steps},
            {"divergence", divergence_name(cfg.divergence)},
            {"feature", term_f},
            {"relation", term_r},
            {"semantics", term_s},
            {"k_min", cfg.k_min},
            {"k_max", cfg.k_max},
            {"init_noise_std", cfg.init_noise_std},
            {"seed", cfg.seed},
            {"caption", cfg.caption}};
}

inline nlohmann::json vit_config_to_json(const ViTConfig& cfg) {
    return {{"image_size", cfg.image_size}, {"patch_size", cfg.patch_size},
            {"channels", cfg.channels},     {"model_dim", cfg.model_dim},
            {"heads", cfg.heads},           {"layers", cfg.layers},
            {"mlp_ratio", cfg.mlp_ratio},   {"projection_dim", cfg.projection_dim},
            {"seed", cfg.seed}};
}

inline nlohmann::json text_config_to_json(const TextConfig& cfg) {
    return {{"vocab_size", cfg.vocab_size}, {"max_len", cfg.max_len},
            {"model_dim", cfg.model_dim},   {"heads", cfg.heads},
            {"layers", cfg.layers},         {"projection_dim", cfg.projection_dim},
            {"seed", cfg.seed}};
}

inline std::string hex64(uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Everything needed to reproduce one attack run byte for byte.
inline nlohmann::json make_manifest(const RunConfig& cfg, const std::string& input_path, uint64_t input_hash,
                                    uint64_t image_weights_fp, uint64_t text_weights_fp) {
    return {{"tool_version", kVersion},
            {"schema_version", kConfigSchemaVersion},
            {"attack", attack_config_to_json(cfg.attack)},
            {"image_encoder", vit_config_to_json(cfg.image_encoder)},
            {"text_encoder", text_config_to_json(cfg.text_encoder)},
            {"image_encoder_fingerprint", hex64(cfg.image_encoder.fingerprint())},
            {"text_encoder_fingerprint", hex64(cfg.text_encoder.fingerprint())},
            {"image_weights_hash", hex64(image_weights_fp)},
            {"text_weights_hash", hex64(text_weights_fp)},
            {"input", {{"path", input_path}, {"hash", hex64(input_hash)}}}};
}

}  // namespace vtforge
