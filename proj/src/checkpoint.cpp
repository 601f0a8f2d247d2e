#include "mseed/checkpoint.hpp"

#include <fstream>
#include <map>

#include "mseed/errors.hpp"
#include "mseed/image_io.hpp"

namespace mseed {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

Tensor read_checked(const fs::path& path, const Shape& expected, const std::string& name) {
    if (!fs::exists(path)) throw ConfigError("checkpoint is missing " + path.string());
    Tensor t = io::read_tensor(path);
    if (t.shape() != expected) {
        throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_to_string(t.shape()) + ", expected " +
                          shape_to_string(expected));
    }
    return t;
}

} // namespace

void save_checkpoint(const fs::path& dir, const RunConfig& config, const model::ModelParams& params,
                     const AdamW& optimizer, const TrainProgress& progress) {
    fs::path staging = dir;
    staging += ".partial";
    fs::remove_all(staging);
    fs::create_directories(staging / "params");

    const auto plist = params.parameters();
    const bool moments = !optimizer.first_moments().empty();
    if (moments) {
        if (optimizer.first_moments().size() != plist.size()) {
            throw ContractError("checkpoint: optimizer state does not match the parameter list");
        }
        fs::create_directories(staging / "optimizer" / "m");
        fs::create_directories(staging / "optimizer" / "v");
    }
    json entries = json::array();
    for (std::size_t i = 0; i < plist.size(); ++i) {
        const auto& p = *plist[i];
        const std::string file = p.name + ".mst";
        io::write_tensor(staging / "params" / file, p.value);
        if (moments) {
            io::write_tensor(staging / "optimizer" / "m" / file, optimizer.first_moments()[i]);
            io::write_tensor(staging / "optimizer" / "v" / file, optimizer.second_moments()[i]);
        }
        entries.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"file", "params/" + file}});
    }
    json manifest{{"format", "mseed-checkpoint-1"},
                  {"config", to_json(config)},
                  {"parameter_count", params.parameter_count()},
                  {"parameters", entries},
                  {"optimizer", {{"steps", optimizer.steps()}, {"moments", moments}}},
                  {"progress", {{"step", progress.step}, {"epoch", progress.epoch}}}};
    {
        std::ofstream out(staging / "manifest.json");
        out << manifest.dump(2) << '\n';
        if (!out) throw std::runtime_error("cannot write checkpoint manifest in " + staging.string());
    }
    fs::remove_all(dir);
    fs::rename(staging, dir);
}

Checkpoint load_checkpoint(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw ConfigError("checkpoint manifest not found: " + manifest_path.string());
    json m;
    try {
        in >> m;
    } catch (const json::exception& e) {
        throw ConfigError("malformed checkpoint manifest " + manifest_path.string() + ": " + e.what());
    }
    try {
        Checkpoint ck;
        ck.config = run_config_from_json(m.at("config"));
        ck.params = model::init_params(ck.config.model, 0);
        auto plist = ck.params.parameters();

        std::map<std::string, json> listed;
        for (const auto& e : m.at("parameters")) listed[e.at("name").get<std::string>()] = e;
        if (listed.size() != plist.size()) {
            throw ConfigError("checkpoint lists " + std::to_string(listed.size()) + " parameters, architecture has " +
                              std::to_string(plist.size()));
        }
        const bool moments = m.at("optimizer").at("moments").get<bool>();
        std::vector<Tensor> mv, vv;
        for (auto* p : plist) {
            auto it = listed.find(p->name);
            if (it == listed.end()) throw ConfigError("checkpoint has no parameter '" + p->name + "'");
            const auto shape = it->second.at("shape").get<Shape>();
            if (shape != p->value.shape()) {
                throw ConfigError("checkpoint parameter '" + p->name + "' has shape " + shape_to_string(shape) +
                                  ", expected " + shape_to_string(p->value.shape()));
            }
            p->value = read_checked(dir / it->second.at("file").get<std::string>(), p->value.shape(), p->name);
            p->zero_grad();
            if (moments) {
                mv.push_back(read_checked(dir / "optimizer" / "m" / (p->name + ".mst"), p->value.shape(), p->name + " (m)"));
                vv.push_back(read_checked(dir / "optimizer" / "v" / (p->name + ".mst"), p->value.shape(), p->name + " (v)"));
            }
        }
        ck.optimizer = AdamW(ck.config.train.hyper);
        ck.optimizer.restore(m.at("optimizer").at("steps").get<std::uint64_t>(), std::move(mv), std::move(vv));
        ck.progress.step = m.at("progress").at("step").get<std::uint64_t>();
        ck.progress.epoch = m.at("progress").at("epoch").get<std::size_t>();
        return ck;
    } catch (const json::exception& e) {
        throw ConfigError("malformed checkpoint manifest " + manifest_path.string() + ": " + e.what());
    }
}

} // namespace mseed
