#include "pyraflow/config_json.hpp"

#include "pyraflow/error.hpp"

using nlohmann::json;

namespace pyraflow {

namespace {

void require_object(const json& j, const std::string& where) {
    if (!j.is_object())
        throw ConfigError(where + " must be a JSON object");
}

template <typename T>
void get_num(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    const json& v = j[key];
    if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer())
            throw ConfigError(where + "." + key + " must be an integer");
        if constexpr (std::is_unsigned_v<T>) {
            if (v.is_number_integer() && !v.is_number_unsigned() &&
                v.get<std::int64_t>() < 0)
                throw ConfigError(where + "." + key + " must be non-negative");
        }
    } else {
        if (!v.is_number())
            throw ConfigError(where + "." + key + " must be a number");
    }
    out = v.get<T>();
}

void get_bool(const json& j, const char* key, bool& out, const std::string& where) {
    if (!j.contains(key)) return;
    if (!j[key].is_boolean())
        throw ConfigError(where + "." + key + " must be a boolean");
    out = j[key].get<bool>();
}

std::array<float, 3> parse_color(const json& v, const std::string& where) {
    if (!v.is_array() || v.size() != 3)
        throw ConfigError(where + " must be an [r, g, b] array");
    std::array<float, 3> c;
    for (int i = 0; i < 3; ++i) {
        if (!v[i].is_number()) throw ConfigError(where + " must hold numbers");
        c[i] = v[i].get<float>();
    }
    return c;
}

}  // namespace

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

json gen_config_to_json(const GenConfig& c) {
    json colors = json::array();
    for (const auto& col : c.segment_colors) colors.push_back({col[0], col[1], col[2]});
    return {{"width", c.width},
            {"height", c.height},
            {"count", c.count},
            {"seed", c.seed},
            {"root_jitter", c.root_jitter},
            {"root_rot_range", c.root_rot_range},
            {"joint_angle_range", c.joint_angle_range},
            {"max_joint_delta", c.max_joint_delta},
            {"max_root_delta", c.max_root_delta},
            {"max_root_rot_delta", c.max_root_rot_delta},
            {"background_motion", c.background_motion},
            {"noise_octaves", c.noise_octaves},
            {"segment_colors", colors},
            {"background_color",
             {c.background_color[0], c.background_color[1], c.background_color[2]}},
            {"translation_only", c.translation_only},
            {"translation_max", c.translation_max}};
}

GenConfig gen_config_from_json(const json& j) {
    const std::string where = "gen";
    require_object(j, where);
    reject_unknown_keys(j,
                   {"width", "height", "count", "seed", "root_jitter", "root_rot_range",
                    "joint_angle_range", "max_joint_delta", "max_root_delta",
                    "max_root_rot_delta", "background_motion", "noise_octaves",
                    "segment_colors", "background_color", "translation_only",
                    "translation_max"},
                   where);
    GenConfig c;
    get_num(j, "width", c.width, where);
    get_num(j, "height", c.height, where);
    get_num(j, "count", c.count, where);
    get_num(j, "seed", c.seed, where);
    get_num(j, "root_jitter", c.root_jitter, where);
    get_num(j, "root_rot_range", c.root_rot_range, where);
    get_num(j, "joint_angle_range", c.joint_angle_range, where);
    get_num(j, "max_joint_delta", c.max_joint_delta, where);
    get_num(j, "max_root_delta", c.max_root_delta, where);
    get_num(j, "max_root_rot_delta", c.max_root_rot_delta, where);
    get_num(j, "background_motion", c.background_motion, where);
    get_num(j, "noise_octaves", c.noise_octaves, where);
    get_bool(j, "translation_only", c.translation_only, where);
    get_num(j, "translation_max", c.translation_max, where);
    if (j.contains("segment_colors")) {
        if (!j["segment_colors"].is_array())
            throw ConfigError("gen.segment_colors must be an array");
        c.segment_colors.clear();
        for (const auto& v : j["segment_colors"])
            c.segment_colors.push_back(parse_color(v, "gen.segment_colors entry"));
    }
    if (j.contains("background_color"))
        c.background_color = parse_color(j["background_color"], "gen.background_color");
    return c;
}

json model_config_to_json(const PyramidConfig& c) {
    json predictors = json::array();
    for (const auto& p : c.predictors)
        predictors.push_back({{"widths", p.widths}, {"kernel", p.kernel}});
    return {{"levels", c.levels},
            {"base_h", c.base_h},
            {"base_w", c.base_w},
            {"seed", c.seed},
            {"predictors", predictors}};
}

PyramidConfig model_config_from_json(const json& j) {
    const std::string where = "model";
    require_object(j, where);
    reject_unknown_keys(j, {"levels", "base_h", "base_w", "seed", "predictors"}, where);
    PyramidConfig c;
    get_num(j, "levels", c.levels, where);
    get_num(j, "base_h", c.base_h, where);
    get_num(j, "base_w", c.base_w, where);
    get_num(j, "seed", c.seed, where);
    if (j.contains("predictors")) {
        if (!j["predictors"].is_array())
            throw ConfigError("model.predictors must be an array");
        c.predictors.clear();
        for (const auto& v : j["predictors"]) {
            require_object(v, "model.predictors entry");
            reject_unknown_keys(v, {"widths", "kernel"}, "model.predictors entry");
            PredictorSpec spec;
            if (v.contains("widths")) {
                if (!v["widths"].is_array())
                    throw ConfigError("predictor widths must be an array");
                spec.widths.clear();
                for (const auto& w : v["widths"]) {
                    if (!w.is_number_integer())
                        throw ConfigError("predictor widths must be integers");
                    spec.widths.push_back(w.get<int>());
                }
            }
            get_num(v, "kernel", spec.kernel, "model.predictors entry");
            c.predictors.push_back(std::move(spec));
        }
    } else {
        c.predictors.assign(c.levels, PredictorSpec{});
    }
    return c;
}

json train_config_to_json(const TrainConfig& c) {
    return {{"epochs_per_level", c.epochs_per_level},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps},
            {"epe_eps", c.epe_eps},
            {"seed", c.seed},
            {"split", c.split},
            {"mode", c.mode == TrainConfig::Mode::sequential ? "sequential"
                                                             : "end_to_end"}};
}

TrainConfig train_config_from_json(const json& j) {
    const std::string where = "train";
    require_object(j, where);
    reject_unknown_keys(j,
                   {"epochs_per_level", "batch_size", "learning_rate", "beta1", "beta2",
                    "adam_eps", "epe_eps", "seed", "split", "mode"},
                   where);
    TrainConfig c;
    get_num(j, "epochs_per_level", c.epochs_per_level, where);
    get_num(j, "batch_size", c.batch_size, where);
    get_num(j, "learning_rate", c.learning_rate, where);
    get_num(j, "beta1", c.beta1, where);
    get_num(j, "beta2", c.beta2, where);
    get_num(j, "adam_eps", c.adam_eps, where);
    get_num(j, "epe_eps", c.epe_eps, where);
    get_num(j, "seed", c.seed, where);
    get_num(j, "split", c.split, where);
    if (j.contains("mode")) {
        if (!j["mode"].is_string()) throw ConfigError("train.mode must be a string");
        const std::string m = j["mode"].get<std::string>();
        if (m == "sequential")
            c.mode = TrainConfig::Mode::sequential;
        else if (m == "end_to_end")
            c.mode = TrainConfig::Mode::end_to_end;
        else
            throw ConfigError("train.mode must be 'sequential' or 'end_to_end'");
    }
    return c;
}

}  // namespace pyraflow
