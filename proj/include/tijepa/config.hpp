#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tijepa/encoders.hpp"
#include "tijepa/errors.hpp"
#include "tijepa/masking.hpp"
#include "tijepa/model.hpp"

namespace tijepa {

enum class HeadInput { online, target };

// Every architecture and training hyperparameter. Defaults are the desk
// configuration; the published run is expressible by overriding keys.
struct TiJepaConfig {
    std::uint64_t seed = 0;
    std::size_t image_size = 64;

    EncoderConfig image_encoder{8, 64, 2, 4, 32, 4, true};
    EncoderConfig text_encoder{8, 64, 2, 4, 32, 4, true};
    CrossAttnConfig fusion{2, 4, 64, 4};
    PredictorConfig predictor{2, 4, 64, 4};
    bool freeze_predictor = false;
    MaskingConfig masking;
    LossKind loss = LossKind::l2;

    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.05;
    double ema_start = 0.996;
    double ema_end = 1.0;

    std::size_t steps = 200;
    std::size_t batch_size = 16;
    std::size_t log_every = 10;
    std::size_t checkpoint_every = 0; // 0: final checkpoint only
    double init_std = 0.02;
    double ln_eps = 1e-6;

    std::size_t head_epochs = 40;
    double head_lr = 1e-3;
    std::size_t head_batch_size = 16;
    HeadInput head_input = HeadInput::online;

    void validate() const {
        image_encoder.validate();
        text_encoder.validate();
        fusion.validate();
        patch_grid(image_size, image_size, image_encoder.patch_size);
        if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
        if (!(ema_start >= 0.0 && ema_start <= ema_end && ema_end <= 1.0)) {
            throw ConfigError("EMA range must satisfy 0 <= ema_start <= ema_end <= 1");
        }
        if (!(lr >= 0.0) || !(head_lr >= 0.0)) throw ConfigError("learning rates must be non-negative");
        if (masking.num_targets == 0) throw ConfigError("num_targets must be >= 1");
    }

    GridSize grid() const { return patch_grid(image_size, image_size, image_encoder.patch_size); }
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
    N out{};
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || p != end) throw ConfigError("invalid value '" + v + "' for key " + key);
    return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw ConfigError("");
        return d;
    } catch (const std::exception&) {
        throw ConfigError("invalid value '" + v + "' for key " + key);
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("invalid boolean '" + v + "' for key " + key);
}

inline std::string format_double(double d) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", d);
    return buf;
}

struct ConfigKey {
    std::string name;
    std::function<void(TiJepaConfig&, const std::string&)> set;
    std::function<std::string(const TiJepaConfig&)> get;
};

#define TIJEPA_SIZE_KEY(NAME, FIELD)                                                                                 \
    ConfigKey {                                                                                                      \
        NAME, [](TiJepaConfig& c, const std::string& v) { c.FIELD = parse_number<std::size_t>(NAME, v); },           \
            [](const TiJepaConfig& c) { return std::to_string(c.FIELD); }                                            \
    }
#define TIJEPA_DOUBLE_KEY(NAME, FIELD)                                                                               \
    ConfigKey {                                                                                                      \
        NAME, [](TiJepaConfig& c, const std::string& v) { c.FIELD = parse_double(NAME, v); },                        \
            [](const TiJepaConfig& c) { return format_double(c.FIELD); }                                             \
    }
#define TIJEPA_BOOL_KEY(NAME, FIELD)                                                                                 \
    ConfigKey {                                                                                                      \
        NAME, [](TiJepaConfig& c, const std::string& v) { c.FIELD = parse_bool(NAME, v); },                          \
            [](const TiJepaConfig& c) { return std::string(c.FIELD ? "true" : "false"); }                           \
    }

inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        ConfigKey{"seed", [](TiJepaConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); },
                  [](const TiJepaConfig& c) { return std::to_string(c.seed); }},
        TIJEPA_SIZE_KEY("image_size", image_size),
        TIJEPA_SIZE_KEY("patch_size", image_encoder.patch_size),
        TIJEPA_SIZE_KEY("image_dim", image_encoder.embed_dim),
        TIJEPA_SIZE_KEY("image_depth", image_encoder.depth),
        TIJEPA_SIZE_KEY("image_heads", image_encoder.heads),
        TIJEPA_SIZE_KEY("text_dim", text_encoder.embed_dim),
        TIJEPA_SIZE_KEY("text_depth", text_encoder.depth),
        TIJEPA_SIZE_KEY("text_heads", text_encoder.heads),
        TIJEPA_SIZE_KEY("max_text_len", text_encoder.max_text_len),
        ConfigKey{"freeze_encoders",
                  [](TiJepaConfig& c, const std::string& v) {
                      c.image_encoder.frozen = c.text_encoder.frozen = parse_bool("freeze_encoders", v);
                  },
                  [](const TiJepaConfig& c) { return std::string(c.image_encoder.frozen ? "true" : "false"); }},
        TIJEPA_SIZE_KEY("encoder_mlp_ratio", image_encoder.mlp_ratio),
        TIJEPA_SIZE_KEY("fusion_layers", fusion.layers),
        TIJEPA_SIZE_KEY("fusion_heads", fusion.heads),
        TIJEPA_SIZE_KEY("fusion_hidden", fusion.hidden),
        TIJEPA_SIZE_KEY("fusion_mlp_ratio", fusion.mlp_ratio),
        TIJEPA_SIZE_KEY("predictor_depth", predictor.depth),
        TIJEPA_SIZE_KEY("predictor_heads", predictor.heads),
        TIJEPA_SIZE_KEY("predictor_width", predictor.width),
        TIJEPA_SIZE_KEY("predictor_mlp_ratio", predictor.mlp_ratio),
        TIJEPA_BOOL_KEY("freeze_predictor", freeze_predictor),
        TIJEPA_SIZE_KEY("num_targets", masking.num_targets),
        TIJEPA_DOUBLE_KEY("context_scale_min", masking.context_scale.lo),
        TIJEPA_DOUBLE_KEY("context_scale_max", masking.context_scale.hi),
        TIJEPA_DOUBLE_KEY("target_scale_min", masking.target_scale.lo),
        TIJEPA_DOUBLE_KEY("target_scale_max", masking.target_scale.hi),
        TIJEPA_DOUBLE_KEY("context_aspect_min", masking.context_aspect.lo),
        TIJEPA_DOUBLE_KEY("context_aspect_max", masking.context_aspect.hi),
        TIJEPA_DOUBLE_KEY("target_aspect_min", masking.target_aspect.lo),
        TIJEPA_DOUBLE_KEY("target_aspect_max", masking.target_aspect.hi),
        TIJEPA_SIZE_KEY("max_retries", masking.max_retries),
        ConfigKey{"loss",
                  [](TiJepaConfig& c, const std::string& v) {
                      if (v == "l2") c.loss = LossKind::l2;
                      else if (v == "l1") c.loss = LossKind::l1;
                      else throw ConfigError("loss must be l2 or l1, got '" + v + "'");
                  },
                  [](const TiJepaConfig& c) { return std::string(c.loss == LossKind::l2 ? "l2" : "l1"); }},
        TIJEPA_DOUBLE_KEY("lr", lr),
        TIJEPA_DOUBLE_KEY("beta1", beta1),
        TIJEPA_DOUBLE_KEY("beta2", beta2),
        TIJEPA_DOUBLE_KEY("adam_eps", adam_eps),
        TIJEPA_DOUBLE_KEY("weight_decay", weight_decay),
        TIJEPA_DOUBLE_KEY("ema_start", ema_start),
        TIJEPA_DOUBLE_KEY("ema_end", ema_end),
        TIJEPA_SIZE_KEY("steps", steps),
        TIJEPA_SIZE_KEY("batch_size", batch_size),
        TIJEPA_SIZE_KEY("log_every", log_every),
        TIJEPA_SIZE_KEY("checkpoint_every", checkpoint_every),
        TIJEPA_DOUBLE_KEY("init_std", init_std),
        TIJEPA_DOUBLE_KEY("ln_eps", ln_eps),
        TIJEPA_SIZE_KEY("head_epochs", head_epochs),
        TIJEPA_DOUBLE_KEY("head_lr", head_lr),
        TIJEPA_SIZE_KEY("head_batch_size", head_batch_size),
        ConfigKey{"head_input",
                  [](TiJepaConfig& c, const std::string& v) {
                      if (v == "online") c.head_input = HeadInput::online;
                      else if (v == "target") c.head_input = HeadInput::target;
                      else throw ConfigError("head_input must be online or target, got '" + v + "'");
                  },
                  [](const TiJepaConfig& c) {
                      return std::string(c.head_input == HeadInput::online ? "online" : "target");
                  }},
    };
    return keys;
}

#undef TIJEPA_SIZE_KEY
#undef TIJEPA_DOUBLE_KEY
#undef TIJEPA_BOOL_KEY

} // namespace detail

// Applies one `key = value` assignment. Unknown keys are errors.
inline void set_config_value(TiJepaConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& k : detail::config_keys()) {
        if (k.name == key) {
            k.set(cfg, value);
            // The text encoder shares patch/mlp settings only where meaningful.
            cfg.text_encoder.mlp_ratio = cfg.image_encoder.mlp_ratio;
            cfg.text_encoder.patch_size = cfg.image_encoder.patch_size;
            cfg.image_encoder.max_text_len = cfg.text_encoder.max_text_len;
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

// Parses a single "key=value" override (as given to --set).
inline void apply_override(TiJepaConfig& cfg, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' lacks '='");
    set_config_value(cfg, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline TiJepaConfig parse_config(std::string_view text) {
    TiJepaConfig cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto stripped = detail::trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        try {
            set_config_value(cfg, detail::trim(stripped.substr(0, eq)), detail::trim(stripped.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

inline TiJepaConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

// Canonical text form; parse_config(serialize_config(c)) reproduces c.
inline std::string serialize_config(const TiJepaConfig& cfg) {
    std::string out;
    for (const auto& k : detail::config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
    return out;
}

} // namespace tijepa
