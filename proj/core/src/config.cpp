#include "mvdetr/config.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mvdetr {

using nlohmann::json;

namespace {

json vec3_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec3_from(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 3)
        throw ConfigError("config key '" + path + "' must be an array of 3 numbers");
    return {j.at(0), j.at(1), j.at(2)};
}

json to_json_tree(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["camera"] = {{"width", c.camera.width}, {"height", c.camera.height}, {"fx", c.camera.fx},
                   {"fy", c.camera.fy},       {"cx", c.camera.cx},         {"cy", c.camera.cy}};
    json classes = json::array();
    for (const auto& p : c.generator.classes) {
        json palette = json::array();
        for (const auto& col : p.palette) palette.push_back({col[0], col[1], col[2]});
        classes.push_back({{"size_lo", vec3_json(p.size_lo)},
                           {"size_hi", vec3_json(p.size_hi)},
                           {"palette", palette}});
    }
    j["generator"] = {{"min_objects", c.generator.min_objects},
                      {"max_objects", c.generator.max_objects},
                      {"room_lo", vec3_json(c.generator.room_lo)},
                      {"room_hi", vec3_json(c.generator.room_hi)},
                      {"place_z", {c.generator.place_z_lo, c.generator.place_z_hi}},
                      {"frustum_margin", c.generator.frustum_margin},
                      {"max_yaw", c.generator.max_yaw},
                      {"classes", classes}};
    j["model"] = {
        {"sample_points", c.model.sample_points},
        {"geometry",
         {{"d", c.model.geometry.d}, {"k", c.model.geometry.k}, {"layers", c.model.geometry.layers}}},
        {"visual",
         {{"width1", c.model.visual.width1},
          {"width2", c.model.visual.width2},
          {"heads", c.model.visual.heads}}},
        {"decoder",
         {{"queries", c.model.decoder.num_queries},
          {"layers", c.model.decoder.layers},
          {"content_dim", c.model.decoder.content_dim},
          {"heads", c.model.decoder.heads},
          {"rpe_hidden", c.model.decoder.rpe_hidden},
          {"ffn_hidden", c.model.decoder.ffn_hidden},
          {"default_size", c.model.decoder.default_size}}},
    };
    j["loss"] = {{"cls", c.loss.cls},   {"center", c.loss.center},
                 {"size", c.loss.size}, {"yaw", c.loss.yaw},
                 {"iou", c.loss.iou},   {"no_object", c.loss.no_object}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"lr", c.train.lr},
                  {"beta1", c.train.beta1},
                  {"beta2", c.train.beta2},
                  {"eps", c.train.eps},
                  {"clip_norm", c.train.clip_norm},
                  {"lr_decay", c.train.lr_decay},
                  {"batch_size", c.train.batch_size},
                  {"bn_freeze", c.train.bn_freeze},
                  {"eval_every", c.train.eval_every},
                  {"checkpoint_every", c.train.checkpoint_every},
                  {"score_thresh", c.train.score_thresh},
                  {"threads", c.train.threads}};
    return j;
}

// every key in `input` must exist in `schema` (arrays of objects are
// validated against the first schema element)
void reject_unknown_keys(const json& input, const json& schema, const std::string& path) {
    if (input.is_object()) {
        if (!schema.is_object())
            throw ConfigError("config key '" + path + "' should not be an object");
        for (auto it = input.begin(); it != input.end(); ++it) {
            std::string sub = path.empty() ? it.key() : path + "." + it.key();
            if (!schema.contains(it.key())) throw ConfigError("unknown config key '" + sub + "'");
            reject_unknown_keys(it.value(), schema[it.key()], sub);
        }
    } else if (input.is_array() && schema.is_array() && !schema.empty() &&
               schema.at(0).is_object()) {
        for (std::size_t i = 0; i < input.size(); ++i)
            reject_unknown_keys(input.at(i), schema.at(0), path + "[" + std::to_string(i) + "]");
    }
}

template <class T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void get_vec3(const json& j, const char* key, Vec3& out, const std::string& path) {
    if (j.contains(key)) out = vec3_from(j.at(key), path + "." + key);
}

void apply_tree(const json& j, RunConfig& c) {
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("camera")) {
        const json& jc = j.at("camera");
        get_if(jc, "width", c.camera.width);
        get_if(jc, "height", c.camera.height);
        get_if(jc, "fx", c.camera.fx);
        get_if(jc, "fy", c.camera.fy);
        get_if(jc, "cx", c.camera.cx);
        get_if(jc, "cy", c.camera.cy);
    }
    if (j.contains("generator")) {
        const json& jg = j.at("generator");
        get_if(jg, "min_objects", c.generator.min_objects);
        get_if(jg, "max_objects", c.generator.max_objects);
        get_vec3(jg, "room_lo", c.generator.room_lo, "generator");
        get_vec3(jg, "room_hi", c.generator.room_hi, "generator");
        if (jg.contains("place_z")) {
            c.generator.place_z_lo = jg.at("place_z").at(0);
            c.generator.place_z_hi = jg.at("place_z").at(1);
        }
        get_if(jg, "frustum_margin", c.generator.frustum_margin);
        get_if(jg, "max_yaw", c.generator.max_yaw);
        if (jg.contains("classes")) {
            c.generator.classes.clear();
            for (const auto& jp : jg.at("classes")) {
                ClassProfile p;
                p.size_lo = vec3_from(jp.at("size_lo"), "generator.classes.size_lo");
                p.size_hi = vec3_from(jp.at("size_hi"), "generator.classes.size_hi");
                for (const auto& jc : jp.at("palette"))
                    p.palette.push_back({jc.at(0).get<float>(), jc.at(1).get<float>(),
                                         jc.at(2).get<float>()});
                c.generator.classes.push_back(std::move(p));
            }
        }
    }
    if (j.contains("model")) {
        const json& jm = j.at("model");
        get_if(jm, "sample_points", c.model.sample_points);
        if (jm.contains("geometry")) {
            const json& x = jm.at("geometry");
            get_if(x, "d", c.model.geometry.d);
            get_if(x, "k", c.model.geometry.k);
            get_if(x, "layers", c.model.geometry.layers);
        }
        if (jm.contains("visual")) {
            const json& x = jm.at("visual");
            get_if(x, "width1", c.model.visual.width1);
            get_if(x, "width2", c.model.visual.width2);
            get_if(x, "heads", c.model.visual.heads);
        }
        if (jm.contains("decoder")) {
            const json& x = jm.at("decoder");
            get_if(x, "queries", c.model.decoder.num_queries);
            get_if(x, "layers", c.model.decoder.layers);
            get_if(x, "content_dim", c.model.decoder.content_dim);
            get_if(x, "heads", c.model.decoder.heads);
            get_if(x, "rpe_hidden", c.model.decoder.rpe_hidden);
            get_if(x, "ffn_hidden", c.model.decoder.ffn_hidden);
            get_if(x, "default_size", c.model.decoder.default_size);
        }
    }
    if (j.contains("loss")) {
        const json& jl = j.at("loss");
        get_if(jl, "cls", c.loss.cls);
        get_if(jl, "center", c.loss.center);
        get_if(jl, "size", c.loss.size);
        get_if(jl, "yaw", c.loss.yaw);
        get_if(jl, "iou", c.loss.iou);
        get_if(jl, "no_object", c.loss.no_object);
    }
    if (j.contains("train")) {
        const json& jt = j.at("train");
        get_if(jt, "epochs", c.train.epochs);
        get_if(jt, "lr", c.train.lr);
        get_if(jt, "beta1", c.train.beta1);
        get_if(jt, "beta2", c.train.beta2);
        get_if(jt, "eps", c.train.eps);
        get_if(jt, "clip_norm", c.train.clip_norm);
        get_if(jt, "lr_decay", c.train.lr_decay);
        get_if(jt, "batch_size", c.train.batch_size);
        get_if(jt, "bn_freeze", c.train.bn_freeze);
        get_if(jt, "eval_every", c.train.eval_every);
        get_if(jt, "checkpoint_every", c.train.checkpoint_every);
        get_if(jt, "score_thresh", c.train.score_thresh);
        get_if(jt, "threads", c.train.threads);
    }
}

json parse_override_value(const std::string& text) {
    json v = json::parse(text, nullptr, false);
    if (v.is_discarded()) return json(text);  // bare string
    return v;
}

}  // namespace

RunConfig parse_run_config_json(const std::string& text, const std::vector<std::string>& overrides) {
    json input;
    if (!text.empty()) {
        try {
            input = json::parse(text);
        } catch (const json::parse_error& e) {
            throw ConfigError(std::string("config parse error: ") + e.what());
        }
        if (!input.is_object()) throw ConfigError("config root must be a JSON object");
    } else {
        input = json::object();
    }
    for (const std::string& ov : overrides) {
        auto eq = ov.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override '" + ov + "' must have the form path.to.key=value");
        std::string ptr = "/" + ov.substr(0, eq);
        for (auto& ch : ptr)
            if (ch == '.') ch = '/';
        input[json::json_pointer(ptr)] = parse_override_value(ov.substr(eq + 1));
    }
    RunConfig defaults;
    reject_unknown_keys(input, to_json_tree(defaults), "");
    RunConfig cfg;
    apply_tree(input, cfg);
    cfg.sync_derived();
    auto require = [](bool ok, const char* msg) {
        if (!ok) throw ConfigError(std::string("invalid config value: ") + msg);
    };
    require(cfg.camera.width > 0 && cfg.camera.height > 0, "camera.width/height must be positive");
    require(cfg.camera.fx > 0 && cfg.camera.fy > 0, "camera.fx/fy must be positive");
    require(cfg.generator.min_objects >= 0 && cfg.generator.max_objects >= cfg.generator.min_objects,
            "generator.min_objects/max_objects must be a non-empty range");
    require(!cfg.generator.classes.empty(), "generator.classes must be non-empty");
    require(cfg.model.sample_points > 0, "model.sample_points must be positive");
    require(cfg.model.geometry.d > 0 && cfg.model.geometry.k > 0 && cfg.model.geometry.layers >= 0,
            "model.geometry.d/k must be positive");
    require(cfg.model.visual.width1 > 0 && cfg.model.visual.width2 > 0 &&
                cfg.model.visual.heads > 0,
            "model.visual widths and heads must be positive");
    require(cfg.model.decoder.num_queries > 0 && cfg.model.decoder.layers > 0 &&
                cfg.model.decoder.content_dim > 0 && cfg.model.decoder.heads > 0 &&
                cfg.model.decoder.rpe_hidden > 0 && cfg.model.decoder.ffn_hidden > 0 &&
                cfg.model.decoder.default_size > 0,
            "model.decoder dimensions must be positive");
    require(cfg.train.epochs > 0 && cfg.train.batch_size > 0, "train.epochs/batch_size must be positive");
    require(cfg.train.lr >= 0 && cfg.train.lr_decay > 0, "train.lr must be non-negative");
    require(cfg.train.bn_freeze >= 0 && cfg.train.bn_freeze <= 1, "train.bn_freeze must be in [0,1]");
    require(cfg.train.threads > 0, "train.threads must be positive");
    if (cfg.model.visual.width2 != cfg.model.geometry.d)
        throw ConfigError("model.visual.width2 must equal model.geometry.d so fusion concatenates");
    if (cfg.model.decoder.content_dim % cfg.model.decoder.heads != 0 ||
        cfg.model.visual.width2 % cfg.model.visual.heads != 0)
        throw ConfigError("attention dims must be divisible by head counts");
    return cfg;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::string text;
    if (!path.empty()) {
        std::ifstream f(path);
        if (!f) throw IoError("cannot open config file: " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        text = ss.str();
    }
    return parse_run_config_json(text, overrides);
}

std::string run_config_to_json(const RunConfig& cfg) { return to_json_tree(cfg).dump(2); }

}  // namespace mvdetr
