#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mseed/losses.hpp"
#include "mseed/model.hpp"
#include "mseed/optimizer.hpp"
#include "mseed/synth_data.hpp"

namespace mseed {

/// Dual-task ablation rows:
///   A  semantic stream only
///   B  + boundary stream features, no boundary supervision
///   C  + boundary BCE
///   D  + dual-task regularization
enum class Ablation { A, B, C, D };

std::string to_string(Ablation a);
Ablation parse_ablation(const std::string& text);

/// Loss terms active for an ablation row.
losses::LossTerms loss_terms_for(Ablation a);
/// Whether the boundary stream runs for an ablation row.
bool boundary_stream_for(Ablation a);

struct TrainConfig {
    AdamWHyper hyper;
    std::uint64_t seed = 0;
    std::size_t epochs = 10;
    std::size_t batch_size = 8;
    Ablation ablation = Ablation::D;
    bool cosine_decay = true;
    bool horizontal_flip = false;
    /// 0 writes a checkpoint only at epoch ends.
    std::size_t checkpoint_every = 0;
    /// Log a line per optimizer step in addition to the per-epoch summary.
    bool log_steps = true;
};

struct DataConfig {
    synth::SceneSpec scene;
    std::size_t train_count = 200;
    std::size_t val_count = 50;
    std::uint64_t train_seed = 1000;
    std::uint64_t val_seed = 900000;
    /// Non-empty paths load saved datasets instead of generating.
    std::string train_dir;
    std::string val_dir;
};

struct LossConfig {
    losses::LossWeights weights;
    int radius = 2;
};

struct EvalConfig {
    std::vector<int> thresholds{3, 5, 9, 12};
};

struct RunConfig {
    model::ModelConfig model;
    TrainConfig train;
    DataConfig data;
    LossConfig loss;
    EvalConfig eval;

    /// Cross-section checks (class counts, sizes, ranges).
    void validate() const;
};

nlohmann::json to_json(const model::ModelConfig& c);
nlohmann::json to_json(const RunConfig& c);

model::ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& where = "model");
/// Unknown keys throw ConfigError naming the full key path; absent keys take
/// defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& c);

} // namespace mseed
