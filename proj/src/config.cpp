#include "mseed/config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "mseed/errors.hpp"

namespace mseed {
namespace {

using json = nlohmann::json;
using Setter = std::function<void(const json&)>;

// Applies each key of `j` through its setter; unknown keys are errors.
void apply_fields(const json& j, const std::string& where, const std::map<std::string, Setter>& fields) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, val] : j.items()) {
        auto it = fields.find(key);
        if (it == fields.end()) throw ConfigError("unknown key '" + where + "." + key + "'");
        try {
            it->second(val);
        } catch (const json::exception& e) {
            throw ConfigError("bad value for '" + where + "." + key + "': " + e.what());
        } catch (const ConfigError& e) {
            throw ConfigError("bad value for '" + where + "." + key + "': " + e.what());
        }
    }
}

template <typename T>
Setter set(T& target) {
    return [&target](const json& v) { target = v.get<T>(); };
}

} // namespace

std::string to_string(Ablation a) {
    switch (a) {
    case Ablation::A: return "A";
    case Ablation::B: return "B";
    case Ablation::C: return "C";
    case Ablation::D: return "D";
    }
    return "?";
}

Ablation parse_ablation(const std::string& text) {
    if (text == "A") return Ablation::A;
    if (text == "B") return Ablation::B;
    if (text == "C") return Ablation::C;
    if (text == "D") return Ablation::D;
    throw ConfigError("unknown ablation '" + text + "' (expected A, B, C or D)");
}

losses::LossTerms loss_terms_for(Ablation a) {
    losses::LossTerms t;
    t.bce_boundary = a == Ablation::C || a == Ablation::D;
    t.regularization = a == Ablation::D;
    return t;
}

bool boundary_stream_for(Ablation a) { return a != Ablation::A; }

void RunConfig::validate() const {
    model.validate();
    data.scene.validate();
    if (data.scene.num_classes != model.num_classes) {
        throw ConfigError("data.scene.num_classes (" + std::to_string(data.scene.num_classes) +
                          ") differs from model.num_classes (" + std::to_string(model.num_classes) + ")");
    }
    const std::size_t div = model.size_divisor();
    if (data.scene.height % div != 0 || data.scene.width % div != 0) {
        throw ConfigError("data.scene height and width must be multiples of " + std::to_string(div));
    }
    if (train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (train.hyper.lr < 0.0) throw ConfigError("train.lr must be nonnegative");
    if (!(train.hyper.beta1 >= 0.0 && train.hyper.beta1 < 1.0) ||
        !(train.hyper.beta2 >= 0.0 && train.hyper.beta2 < 1.0)) {
        throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
    }
    if (!(train.hyper.eps > 0.0)) throw ConfigError("train.eps must be positive");
    if (train.hyper.weight_decay < 0.0) throw ConfigError("train.weight_decay must be nonnegative");
    if (data.train_dir.empty() && data.train_count == 0) throw ConfigError("data.train_count must be positive");
    if (loss.radius < 1) throw ConfigError("loss.radius must be at least 1");
    if (!(loss.weights.epsilon > 0.0 && loss.weights.epsilon < 1.0)) {
        throw ConfigError("loss.epsilon must lie in (0, 1)");
    }
    if (loss.weights.lambda_cls < 0.0 || loss.weights.lambda_reg < 0.0) {
        throw ConfigError("loss.lambda_cls and loss.lambda_reg must be nonnegative");
    }
    for (int d : eval.thresholds) {
        if (d < 1) throw ConfigError("eval.thresholds entries must be at least 1");
    }
}

json to_json(const model::ModelConfig& c) {
    return {{"num_classes", c.num_classes},       {"stage_channels", c.stage_channels},
            {"stem_channels", c.stem_channels},   {"afd_channels", c.afd_channels},
            {"gn_groups", c.gn_groups},           {"afd_groups", c.afd_groups},
            {"afd_reduction", c.afd_reduction},   {"boundary_width", c.boundary_width},
            {"fusion", model::to_string(c.fusion)}, {"gn_eps", c.gn_eps}};
}

json to_json(const RunConfig& c) {
    const auto& t = c.train;
    return {
        {"model", to_json(c.model)},
        {"train",
         {{"lr", t.hyper.lr},
          {"beta1", t.hyper.beta1},
          {"beta2", t.hyper.beta2},
          {"eps", t.hyper.eps},
          {"weight_decay", t.hyper.weight_decay},
          {"seed", t.seed},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"ablation", to_string(t.ablation)},
          {"cosine_decay", t.cosine_decay},
          {"horizontal_flip", t.horizontal_flip},
          {"checkpoint_every", t.checkpoint_every},
          {"log_steps", t.log_steps}}},
        {"data",
         {{"scene", synth::to_json(c.data.scene)},
          {"train_count", c.data.train_count},
          {"val_count", c.data.val_count},
          {"train_seed", c.data.train_seed},
          {"val_seed", c.data.val_seed},
          {"train_dir", c.data.train_dir},
          {"val_dir", c.data.val_dir}}},
        {"loss",
         {{"lambda_cls", c.loss.weights.lambda_cls},
          {"lambda_reg", c.loss.weights.lambda_reg},
          {"epsilon", c.loss.weights.epsilon},
          {"radius", c.loss.radius}}},
        {"eval", {{"thresholds", c.eval.thresholds}}},
    };
}

model::ModelConfig model_config_from_json(const json& j, const std::string& where) {
    model::ModelConfig m;
    apply_fields(j, where,
                 {{"num_classes", set(m.num_classes)},
                  {"stage_channels", set(m.stage_channels)},
                  {"stem_channels", set(m.stem_channels)},
                  {"afd_channels", set(m.afd_channels)},
                  {"gn_groups", set(m.gn_groups)},
                  {"afd_groups", set(m.afd_groups)},
                  {"afd_reduction", set(m.afd_reduction)},
                  {"boundary_width", set(m.boundary_width)},
                  {"fusion", [&](const json& v) { m.fusion = model::parse_fusion_mode(v.get<std::string>()); }},
                  {"gn_eps", set(m.gn_eps)}});
    return m;
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    bool scene_classes_given = false;
    apply_fields(j, "config",
                 {{"model", [&](const json& v) { c.model = model_config_from_json(v, "model"); }},
                  {"train",
                   [&](const json& v) {
                       auto& t = c.train;
                       apply_fields(v, "train",
                                    {{"lr", set(t.hyper.lr)},
                                     {"beta1", set(t.hyper.beta1)},
                                     {"beta2", set(t.hyper.beta2)},
                                     {"eps", set(t.hyper.eps)},
                                     {"weight_decay", set(t.hyper.weight_decay)},
                                     {"seed", set(t.seed)},
                                     {"epochs", set(t.epochs)},
                                     {"batch_size", set(t.batch_size)},
                                     {"ablation",
                                      [&](const json& a) { t.ablation = parse_ablation(a.get<std::string>()); }},
                                     {"cosine_decay", set(t.cosine_decay)},
                                     {"horizontal_flip", set(t.horizontal_flip)},
                                     {"checkpoint_every", set(t.checkpoint_every)},
                                     {"log_steps", set(t.log_steps)}});
                   }},
                  {"data",
                   [&](const json& v) {
                       auto& d = c.data;
                       apply_fields(v, "data",
                                    {{"scene",
                                      [&](const json& s) {
                                          d.scene = synth::scene_spec_from_json(s, "data.scene");
                                          scene_classes_given = s.contains("num_classes");
                                      }},
                                     {"train_count", set(d.train_count)},
                                     {"val_count", set(d.val_count)},
                                     {"train_seed", set(d.train_seed)},
                                     {"val_seed", set(d.val_seed)},
                                     {"train_dir", set(d.train_dir)},
                                     {"val_dir", set(d.val_dir)}});
                   }},
                  {"loss",
                   [&](const json& v) {
                       auto& l = c.loss;
                       apply_fields(v, "loss",
                                    {{"lambda_cls", set(l.weights.lambda_cls)},
                                     {"lambda_reg", set(l.weights.lambda_reg)},
                                     {"epsilon", set(l.weights.epsilon)},
                                     {"radius", set(l.radius)}});
                   }},
                  {"eval", [&](const json& v) { apply_fields(v, "eval", {{"thresholds", set(c.eval.thresholds)}}); }}});
    // A scene without an explicit class count follows the model.
    if (!scene_classes_given && c.data.scene.num_classes != c.model.num_classes) {
        c.data.scene.num_classes = c.model.num_classes;
        if (!c.data.scene.colors.empty() && c.data.scene.colors.size() != c.model.num_classes) c.data.scene.colors.clear();
    }
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << to_json(c).dump(2) << '\n';
}

} // namespace mseed
