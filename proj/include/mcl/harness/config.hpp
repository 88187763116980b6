#pragma once

// Run configuration: a flat `key = value` text file. Unknown keys are
// rejected; `#` starts a comment.

#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcl/augment.hpp"
#include "mcl/loss.hpp"
#include "mcl/model.hpp"
#include "mcl/optim.hpp"

namespace mcl {

struct DatasetSpec {
    std::string kind = "shapes";  // shapes | images
    std::string path;             // image directory (kind = images)
    std::size_t n_train = 2000;
    std::size_t n_eval = 500;
    std::size_t classes = 10;
    std::size_t image_size = 64;
    std::uint64_t seed = 7;
};

struct ProbeConfig {
    double lr = 0.3;
    long epochs = 30;
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::size_t batch_size = 64;
};

struct TrainConfig {
    std::uint64_t seed = 1;
    std::string objective = "ssl";  // ssl | supervised
    std::size_t batch_size = 64;
    double ema_m0 = 0.99;
    long log_every = 1;         // steps per metrics row
    long checkpoint_every = 0;  // epochs; 0 = only at the end
    std::string out_dir = "runs/default";
    double boundary_k = 0.0;  // 0 = no boundary smoothing
    double weight_rescale = 1.0;
    bool supervised_uniform_weights = false;
    double supervised_lr = 0.1;
    double supervised_momentum = 0.9;
    double supervised_weight_decay = 1e-4;

    DatasetSpec data;
    NetConfig net;
    LossConfig loss;
    OptimConfig optim;
    AugPolicy aug;
    ProbeConfig probe;

    TrainConfig() {
        optim.total_epochs = 30;
        optim.warmup_epochs = 3;
    }

    void validate() const {
        if (objective != "ssl" && objective != "supervised")
            throw std::invalid_argument("config: objective must be ssl or supervised");
        if (batch_size < 2) throw std::invalid_argument("config: batch_size must be >= 2");
        if (data.kind != "shapes" && data.kind != "images")
            throw std::invalid_argument("config: data.kind must be shapes or images");
        if (data.image_size != net.input_h || data.image_size != net.input_w)
            throw std::invalid_argument("config: data.image_size must equal the network input size");
        if (aug.out_h != data.image_size || aug.out_w != data.image_size)
            throw std::invalid_argument("config: augmentation output must equal data.image_size");
        if (log_every < 1) throw std::invalid_argument("config: log_every must be >= 1");
        if (!(ema_m0 >= 0 && ema_m0 <= 1)) throw std::invalid_argument("config: ema_m0 must be in [0,1]");
        if (boundary_k < 0) throw std::invalid_argument("config: boundary_k must be >= 0");
        if (!loss.level_weights.empty() && loss.level_weights.size() != static_cast<std::size_t>(net.pyramid_levels))
            throw std::invalid_argument("config: loss.level_weights needs one entry per level");
        net.validate();
        loss.validate();
        optim.validate();
        aug.validate(net.pyramid_levels);
    }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    std::istringstream is(v);
    T out{};
    is >> out;
    if (!is || !(is >> std::ws).eof()) throw std::invalid_argument("config: bad value '" + v + "' for " + key);
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: bad boolean '" + v + "' for " + key);
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
    std::vector<T> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!trim(item).empty()) out.push_back(parse_number<T>(key, trim(item)));
    return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        if constexpr (std::is_floating_point_v<T>)
            s += fmt(v[i]);
        else
            s += std::to_string(v[i]);
    }
    return s;
}

struct Field {
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
};

/// Ordered key table bound to the members of `c`.
inline std::vector<std::pair<std::string, Field>> fields(TrainConfig& c) {
    std::vector<std::pair<std::string, Field>> f;
    auto num = [&f](const std::string& k, auto& ref) {
        using V = std::decay_t<decltype(ref)>;
        f.push_back({k, {[&ref] {
                             if constexpr (std::is_floating_point_v<V>)
                                 return fmt(ref);
                             else
                                 return std::to_string(ref);
                         },
                         [&ref, k](const std::string& v) { ref = parse_number<V>(k, v); }}});
    };
    auto flag = [&f](const std::string& k, bool& ref) {
        f.push_back({k, {[&ref] { return std::string(ref ? "true" : "false"); },
                         [&ref, k](const std::string& v) { ref = parse_bool(k, v); }}});
    };
    auto str = [&f](const std::string& k, std::string& ref) {
        f.push_back({k, {[&ref] { return ref; }, [&ref](const std::string& v) { ref = v; }}});
    };
    auto pair2 = [&num](const std::string& k, std::array<double, 2>& ref, const char* a, const char* b) {
        num(k + "_" + a, ref[0]);
        num(k + "_" + b, ref[1]);
    };

    num("seed", c.seed);
    str("objective", c.objective);
    num("batch_size", c.batch_size);
    num("ema_m0", c.ema_m0);
    num("log_every", c.log_every);
    num("checkpoint_every", c.checkpoint_every);
    str("out_dir", c.out_dir);
    num("boundary_k", c.boundary_k);
    num("weight_rescale", c.weight_rescale);
    flag("supervised.uniform_weights", c.supervised_uniform_weights);
    num("supervised.lr", c.supervised_lr);
    num("supervised.momentum", c.supervised_momentum);
    num("supervised.weight_decay", c.supervised_weight_decay);

    str("data.kind", c.data.kind);
    str("data.path", c.data.path);
    num("data.n_train", c.data.n_train);
    num("data.n_eval", c.data.n_eval);
    num("data.classes", c.data.classes);
    num("data.image_size", c.data.image_size);
    num("data.seed", c.data.seed);

    f.push_back({"net.stage_channels",
                 {[&c] { return join(c.net.stage_channels); },
                  [&c](const std::string& v) { c.net.stage_channels = parse_list<std::size_t>("net.stage_channels", v); }}});
    num("net.in_channels", c.net.in_channels);
    num("net.stem_channels", c.net.stem_channels);
    num("net.stem_stride", c.net.stem_stride);
    num("net.convs_per_stage", c.net.convs_per_stage);
    num("net.levels", c.net.pyramid_levels);
    num("net.pyramid_channels", c.net.pyramid_channels);
    flag("net.fpn", c.net.fpn);
    num("net.head_convs", c.net.head_convs);
    num("net.proj_hidden", c.net.proj_hidden);
    num("net.embed_dim", c.net.embed_dim);
    flag("net.predictor_final_bn", c.net.predictor_final_bn);

    num("loss.tau", c.loss.tau);
    f.push_back({"loss.mode", {[&c] { return std::string(1, mode_letter(c.loss.mode)); },
                               [&c](const std::string& v) { c.loss.mode = parse_mode(v); }}});
    f.push_back({"loss.level_weights",
                 {[&c] { return join(c.loss.level_weights); },
                  [&c](const std::string& v) { c.loss.level_weights = parse_list<double>("loss.level_weights", v); }}});
    flag("loss.symmetric", c.loss.symmetric);
    flag("loss.adjacent_include_self", c.loss.adjacent_include_self);

    num("optim.lr_scale", c.optim.lr_scale);
    num("optim.warmup_epochs", c.optim.warmup_epochs);
    num("optim.epochs", c.optim.total_epochs);
    num("optim.weight_decay", c.optim.weight_decay);
    num("optim.trust_coefficient", c.optim.trust_coefficient);
    num("optim.momentum", c.optim.momentum);
    flag("optim.exclude_norm_and_bias", c.optim.exclude_norm_and_bias);

    pair2("aug.crop_scale", c.aug.crop_scale, "min", "max");
    pair2("aug.crop_ratio", c.aug.crop_ratio, "min", "max");
    num("aug.flip_p", c.aug.flip_p);
    num("aug.jitter_p", c.aug.jitter_p);
    num("aug.brightness", c.aug.brightness);
    num("aug.contrast", c.aug.contrast);
    num("aug.saturation", c.aug.saturation);
    num("aug.hue", c.aug.hue);
    pair2("aug.blur_sigma", c.aug.blur_sigma, "min", "max");
    pair2("aug.blur_p", c.aug.blur_p, "view0", "view1");
    num("aug.grayscale_p", c.aug.grayscale_p);
    num("aug.solarize_threshold", c.aug.solarize_threshold);
    pair2("aug.solarize_p", c.aug.solarize_p, "view0", "view1");
    flag("aug.asymmetric", c.aug.asymmetric);

    num("probe.lr", c.probe.lr);
    num("probe.epochs", c.probe.epochs);
    num("probe.momentum", c.probe.momentum);
    num("probe.weight_decay", c.probe.weight_decay);
    num("probe.batch_size", c.probe.batch_size);
    return f;
}

}  // namespace config_detail

/// Sets one key. Image size keys also size the network input and the
/// augmentation output.
inline void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
    for (auto& [k, field] : config_detail::fields(c)) {
        if (k == key) {
            field.set(config_detail::trim(value));
            if (key == "data.image_size") {
                c.net.input_h = c.net.input_w = c.data.image_size;
                c.aug.out_h = c.aug.out_w = c.data.image_size;
            }
            return;
        }
    }
    throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline TrainConfig parse_config(std::istream& in, const std::string& source = "<stream>") {
    TrainConfig c;
    set_config_value(c, "data.image_size", std::to_string(c.data.image_size));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = config_detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": expected key = value");
        try {
            set_config_value(c, config_detail::trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return c;
}

inline TrainConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    return parse_config(in, path);
}

/// Every key in fixed order; parse_config(serialize(c)) == c.
inline std::string serialize_config(const TrainConfig& c) {
    TrainConfig copy = c;
    std::string out;
    for (auto& [k, field] : config_detail::fields(copy)) out += k + " = " + field.get() + "\n";
    return out;
}

/// FNV-1a over the serialised config.
inline std::uint64_t config_hash(const TrainConfig& c) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : serialize_config(c)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

}  // namespace mcl
