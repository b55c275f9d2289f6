#include "dualmim/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "dualmim/error.hpp"

namespace dualmim {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
    throw Error(ErrorCode::invalid_config, "bad value for " + key + ": '" + value + "'");
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
    return out;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
    Int out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad_value(key, v);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Binding {
    std::string key;
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

template <typename M>
Binding bind(std::string key, M TrainConfig::*member) {
    Binding b;
    b.key = key;
    b.set = [key, member](TrainConfig& c, const std::string& v) {
        if constexpr (std::is_same_v<M, double>) c.*member = to_double(key, v);
        else if constexpr (std::is_same_v<M, bool>) c.*member = to_bool(key, v);
        else c.*member = to_int<M>(key, v);
    };
    b.get = [member](const TrainConfig& c) {
        if constexpr (std::is_same_v<M, double>) return fmt(c.*member);
        else if constexpr (std::is_same_v<M, bool>) return std::string(c.*member ? "true" : "false");
        else return std::to_string(c.*member);
    };
    return b;
}

template <typename S, typename M>
Binding bind_sub(std::string key, S TrainConfig::*sub, M S::*member) {
    Binding b;
    b.key = key;
    b.set = [key, sub, member](TrainConfig& c, const std::string& v) {
        if constexpr (std::is_same_v<M, double>) (c.*sub).*member = to_double(key, v);
        else if constexpr (std::is_same_v<M, bool>) (c.*sub).*member = to_bool(key, v);
        else (c.*sub).*member = to_int<M>(key, v);
    };
    b.get = [sub, member](const TrainConfig& c) {
        const M& x = (c.*sub).*member;
        if constexpr (std::is_same_v<M, double>) return fmt(x);
        else if constexpr (std::is_same_v<M, bool>) return std::string(x ? "true" : "false");
        else return std::to_string(x);
    };
    return b;
}

const std::vector<Binding>& bindings() {
    static const std::vector<Binding> table = [] {
        std::vector<Binding> t;
        Binding mode;
        mode.key = "train.mode";
        mode.set = [](TrainConfig& c, const std::string& v) { c.mode = parse_train_mode(v); };
        mode.get = [](const TrainConfig& c) { return to_string(c.mode); };
        t.push_back(mode);
        t.push_back(bind("seed", &TrainConfig::seed));
        t.push_back(bind("train.steps", &TrainConfig::steps));
        t.push_back(bind("train.batch", &TrainConfig::batch));
        t.push_back(bind("train.lr", &TrainConfig::lr));
        t.push_back(bind("train.warmup", &TrainConfig::warmup));
        t.push_back(bind("train.checkpoint_every", &TrainConfig::checkpoint_every));
        t.push_back(bind("loss.lambda", &TrainConfig::lambda));
        t.push_back(bind("loss.alpha", &TrainConfig::alpha));
        t.push_back(bind("loss.l1_masked_only", &TrainConfig::l1_masked_only));
        t.push_back(bind("mask.ratio", &TrainConfig::mask_ratio));
        t.push_back(bind("mask.freq", &TrainConfig::freq_mask));
        t.push_back(bind("mask.n_bands", &TrainConfig::n_bands));
        t.push_back(bind("mask.n_select", &TrainConfig::n_select));
        t.push_back(bind("mask.preserve", &TrainConfig::preserve));
        t.push_back(bind("finetune.label_fraction", &TrainConfig::label_fraction));
        t.push_back(bind("finetune.layer_decay", &TrainConfig::layer_decay));
        t.push_back(bind("finetune.val_fraction", &TrainConfig::val_fraction));
        t.push_back(bind("finetune.eval_every", &TrainConfig::eval_every));

        using MC = ModelConfig;
        t.push_back(bind_sub("model.image_size", &TrainConfig::model, &MC::image_size));
        t.push_back(bind_sub("model.patch_size", &TrainConfig::model, &MC::patch_size));
        t.push_back(bind_sub("model.embed_dim", &TrainConfig::model, &MC::embed_dim));
        t.push_back(bind_sub("model.depth", &TrainConfig::model, &MC::depth));
        t.push_back(bind_sub("model.decoder_depth", &TrainConfig::model, &MC::decoder_depth));
        t.push_back(bind_sub("model.heads", &TrainConfig::model, &MC::heads));
        t.push_back(bind_sub("model.mlp_ratio", &TrainConfig::model, &MC::mlp_ratio));
        t.push_back(bind_sub("model.classes", &TrainConfig::model, &MC::classes));
        t.push_back(bind_sub("model.layer_norm", &TrainConfig::model, &MC::layer_norm));

        using AC = AugmentConfig;
        Binding bridge;
        bridge.key = "augment.bridge";
        bridge.set = [](TrainConfig& c, const std::string& v) {
            if (v == "crop") c.augment.bridge = ResolutionBridge::crop;
            else if (v == "resize") c.augment.bridge = ResolutionBridge::resize;
            else bad_value("augment.bridge", v);
        };
        bridge.get = [](const TrainConfig& c) {
            return std::string(c.augment.bridge == ResolutionBridge::crop ? "crop" : "resize");
        };
        t.push_back(bridge);
        t.push_back(bind_sub("augment.rotate_p", &TrainConfig::augment, &AC::rotate_p));
        t.push_back(bind_sub("augment.rotate_max_deg", &TrainConfig::augment, &AC::rotate_max_deg));
        t.push_back(bind_sub("augment.scale_p", &TrainConfig::augment, &AC::scale_p));
        t.push_back(bind_sub("augment.scale_min", &TrainConfig::augment, &AC::scale_min));
        t.push_back(bind_sub("augment.scale_max", &TrainConfig::augment, &AC::scale_max));
        t.push_back(bind_sub("augment.crop_p", &TrainConfig::augment, &AC::crop_p));
        t.push_back(bind_sub("augment.crop_min_fraction", &TrainConfig::augment, &AC::crop_min_fraction));
        t.push_back(bind_sub("augment.brightness_p", &TrainConfig::augment, &AC::brightness_p));
        t.push_back(bind_sub("augment.brightness_min", &TrainConfig::augment, &AC::brightness_min));
        t.push_back(bind_sub("augment.brightness_max", &TrainConfig::augment, &AC::brightness_max));
        t.push_back(bind_sub("augment.contrast_p", &TrainConfig::augment, &AC::contrast_p));
        t.push_back(bind_sub("augment.contrast_min", &TrainConfig::augment, &AC::contrast_min));
        t.push_back(bind_sub("augment.contrast_max", &TrainConfig::augment, &AC::contrast_max));
        t.push_back(bind_sub("augment.blur_p", &TrainConfig::augment, &AC::blur_p));
        t.push_back(bind_sub("augment.blur_sigma_min", &TrainConfig::augment, &AC::blur_sigma_min));
        t.push_back(bind_sub("augment.blur_sigma_max", &TrainConfig::augment, &AC::blur_sigma_max));
        return t;
    }();
    return table;
}

}  // namespace

ConfigMap parse_config(const std::string& text, const std::string& origin) {
    ConfigMap out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::invalid_config,
                        origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
        }
        const std::string key = trim(t.substr(0, eq));
        if (key.empty()) throw Error(ErrorCode::invalid_config, origin + ":" + std::to_string(lineno) + ": empty key");
        out[key] = trim(t.substr(eq + 1));
    }
    return out;
}

ConfigMap read_config_file(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw Error(ErrorCode::missing_file, "cannot read config file: " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), file.string());
}

std::pair<std::string, std::string> parse_override(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw Error(ErrorCode::invalid_config, "override must look like key=value: '" + text + "'");
    }
    return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

std::string format_config(const ConfigMap& map) {
    std::string out;
    for (const auto& [k, v] : map) out += k + "=" + v + "\n";
    return out;
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& b : bindings()) k.push_back(b.key);
        return k;
    }();
    return keys;
}

void apply_config(TrainConfig& cfg, const ConfigMap& map) {
    for (const auto& [key, value] : map) {
        bool found = false;
        for (const auto& b : bindings()) {
            if (b.key == key) {
                b.set(cfg, value);
                found = true;
                break;
            }
        }
        if (!found) throw Error(ErrorCode::invalid_config, "unknown config key: " + key);
    }
    // the augmentation always produces model-sized views
    cfg.augment.out_h = cfg.augment.out_w = cfg.model.image_size;
}

ConfigMap to_config_map(const TrainConfig& cfg) {
    ConfigMap out;
    for (const auto& b : bindings()) out[b.key] = b.get(cfg);
    return out;
}

}  // namespace dualmim
