#include "sagan/config.hpp"

#include <fstream>
#include <sstream>

namespace sagan::config {

const std::vector<KeySpec>& schema() {
    static const std::vector<KeySpec> keys = {
        {"steps", "3000", "training steps"},
        {"batch_size", "16", "items per batch"},
        {"critic_steps", "5", "critic updates per generator update"},
        {"lr_critic", "1e-4", "critic learning rate"},
        {"lr_gen", "2e-4", "generator/STM learning rate"},
        {"lambda_pcl", "10", "pixel cycle weight"},
        {"lambda_cyc", "1", "cycle loss weight"},
        {"lambda_idt", "5", "mask identity loss weight"},
        {"lambda_siam", "1", "siamese loss weight"},
        {"siamese_margin", "2", "contrastive margin"},
        {"gp_weight", "10", "gradient penalty weight"},
        {"lipschitz", "penalty", "penalty | clip"},
        {"clip_value", "0.01", "weight clip bound (clip mode)"},
        {"disentangled", "1", "1: SCL+PCL decomposition, 0: naive cycle"},
        {"use_dt", "1", "enable the transform critic"},
        {"code_dim", "8", "spatial code length"},
        {"code_injection", "input", "input | feature"},
        {"M", "1", "adapted outputs per input"},
        {"transform", "homography", "affine | homography | tps"},
        {"seed", "0", "global seed"},
        {"image_size", "32", "square image side"},
        {"base_channels", "16", "trunk width"},
        {"emb_dim", "32", "siamese embedding size"},
        {"fill", "0", "out-of-frame warp fill value"},
        {"eval_every", "500", "eval cadence (steps)"},
        {"checkpoint_every", "1000", "checkpoint cadence (steps)"},
        {"grid_every", "500", "image grid cadence (steps)"},
        {"threads", "2", "worker threads"},
        {"data_x", "", "source image directory (empty: synthetic)"},
        {"data_y", "", "target image directory (empty: synthetic)"},
        {"synth.family", "homography", "synthetic gt family"},
        {"synth.max_rotation_deg", "15", "gt rotation bound"},
        {"synth.max_perspective", "0.1", "gt perspective bound"},
        {"synth.max_translation", "0.2", "gt translation bound (normalized)"},
        {"synth.jitter_rotation_deg", "1.5", "per-item rotation jitter"},
        {"synth.jitter_translation", "0.02", "per-item translation jitter"},
        {"synth.color_gain_min", "0.6", "color gain lower bound"},
        {"synth.color_gain_max", "1.4", "color gain upper bound"},
        {"synth.color_bias_max", "0.2", "color bias bound"},
        {"synth.noise_std", "0.02", "additive noise sigma"},
        {"synth.n_identities", "24", "synthetic identities"},
        {"synth.n_views", "8", "views per identity"},
        {"synth.seed", "0", "synthetic data seed"},
    };
    return keys;
}

KV defaults() {
    KV kv;
    for (const auto& spec : schema()) kv[spec.key] = spec.def;
    return kv;
}

void set_value(KV& kv, const std::string& key, const std::string& value) {
    if (kv.find(key) == kv.end()) throw ConfigError("unknown config key: " + key);
    kv[key] = value;
}

KV parse_text(const std::string& text) {
    KV kv = defaults();
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
        auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        line = strip(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        set_value(kv, strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
    }
    return kv;
}

KV load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str());
}

std::string serialize(const KV& kv) {
    std::string out;
    for (const auto& [k, v] : kv) {
        out += k;
        out += "=";
        out += v;
        out += "\n";
    }
    return out;
}

uint64_t hash(const KV& kv) {
    const std::string text = serialize(kv);
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

int64_t get_int(const KV& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("unknown config key: " + key);
    try {
        size_t pos = 0;
        int64_t v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected integer, got '" + it->second + "'");
    }
}

double get_double(const KV& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("unknown config key: " + key);
    try {
        size_t pos = 0;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected number, got '" + it->second + "'");
    }
}

std::string get_string(const KV& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("unknown config key: " + key);
    return it->second;
}

train::TrainConfig to_train_config(const KV& kv) {
    train::TrainConfig cfg;
    cfg.steps = get_int(kv, "steps");
    cfg.batch_size = get_int(kv, "batch_size");
    cfg.critic_steps = static_cast<int>(get_int(kv, "critic_steps"));
    cfg.lr_critic = get_double(kv, "lr_critic");
    cfg.lr_gen = get_double(kv, "lr_gen");
    cfg.weights.lambda_pcl = get_double(kv, "lambda_pcl");
    cfg.weights.lambda_cyc = get_double(kv, "lambda_cyc");
    cfg.weights.lambda_idt = get_double(kv, "lambda_idt");
    cfg.weights.lambda_siam = get_double(kv, "lambda_siam");
    cfg.weights.siamese_margin = get_double(kv, "siamese_margin");
    cfg.weights.gp_weight = get_double(kv, "gp_weight");
    const std::string lip = get_string(kv, "lipschitz");
    if (lip == "penalty")
        cfg.lipschitz = train::Lipschitz::Penalty;
    else if (lip == "clip")
        cfg.lipschitz = train::Lipschitz::Clip;
    else
        throw ConfigError("lipschitz must be 'penalty' or 'clip'");
    cfg.clip_value = get_double(kv, "clip_value");
    cfg.disentangled = get_int(kv, "disentangled") != 0;
    cfg.use_dt = get_int(kv, "use_dt") != 0;
    cfg.M = static_cast<int>(get_int(kv, "M"));
    cfg.seed = static_cast<uint64_t>(get_int(kv, "seed"));
    cfg.eval_every = get_int(kv, "eval_every");
    cfg.checkpoint_every = get_int(kv, "checkpoint_every");
    cfg.grid_every = get_int(kv, "grid_every");
    cfg.threads = static_cast<int>(get_int(kv, "threads"));

    cfg.net.image_size = get_int(kv, "image_size");
    cfg.net.base = static_cast<int>(get_int(kv, "base_channels"));
    cfg.net.code_dim = static_cast<int>(get_int(kv, "code_dim"));
    cfg.net.emb_dim = static_cast<int>(get_int(kv, "emb_dim"));
    cfg.net.kind = geometry::kind_from_name(get_string(kv, "transform"));
    cfg.net.fill = get_double(kv, "fill");
    const std::string inj = get_string(kv, "code_injection");
    if (inj == "input")
        cfg.net.injection = nets::CodeInjection::Input;
    else if (inj == "feature")
        cfg.net.injection = nets::CodeInjection::Feature;
    else
        throw ConfigError("code_injection must be 'input' or 'feature'");
    cfg.validate();
    return cfg;
}

data::SyntheticDomainSpec to_synth_spec(const KV& kv) {
    data::SyntheticDomainSpec spec;
    spec.family = geometry::kind_from_name(get_string(kv, "synth.family"));
    spec.max_rotation_deg = get_double(kv, "synth.max_rotation_deg");
    spec.max_perspective = get_double(kv, "synth.max_perspective");
    spec.max_translation = get_double(kv, "synth.max_translation");
    spec.jitter_rotation_deg = get_double(kv, "synth.jitter_rotation_deg");
    spec.jitter_translation = get_double(kv, "synth.jitter_translation");
    spec.color_gain_min = get_double(kv, "synth.color_gain_min");
    spec.color_gain_max = get_double(kv, "synth.color_gain_max");
    spec.color_bias_max = get_double(kv, "synth.color_bias_max");
    spec.noise_std = get_double(kv, "synth.noise_std");
    spec.n_identities = static_cast<int>(get_int(kv, "synth.n_identities"));
    spec.n_views = static_cast<int>(get_int(kv, "synth.n_views"));
    spec.image_size = get_int(kv, "image_size");
    spec.seed = static_cast<uint64_t>(get_int(kv, "synth.seed"));
    spec.validate();
    return spec;
}

}  // namespace sagan::config
