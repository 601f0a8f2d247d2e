#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mseed/checkpoint.hpp"
#include "mseed/config.hpp"
#include "mseed/losses.hpp"
#include "mseed/model.hpp"
#include "mseed/optimizer.hpp"
#include "mseed/synth_data.hpp"

namespace mseed {

/// Generated or loaded per the data section of the config.
std::pair<synth::Dataset, synth::Dataset> load_datasets(const RunConfig& config);

/// Training pair with its boundary targets.
struct TrainSample {
    Tensor image;
    LabelMap labels;
    Tensor gt_binary;
    Tensor gt_semantic;
};

TrainSample make_train_sample(const Tensor& image, const LabelMap& labels, int radius);

/// Mirror image of a sample (left-right), targets regenerated.
TrainSample flip_horizontal(const TrainSample& s, int radius);

/// Forward, loss and backward for one sample; gradients are scaled by
/// `grad_scale` and accumulated into the parameters.
losses::LossReport accumulate_sample_gradients(model::ModelParams& params, const RunConfig& config,
                                               const TrainSample& sample, double grad_scale);

/// Objective value for one sample without touching gradients.
losses::LossReport sample_loss(const model::ModelParams& params, const RunConfig& config, const TrainSample& sample);

/// Mean-reduced batch gradients followed by one optimizer step.
losses::LossReport train_step(model::ModelParams& params, AdamW& optimizer, const RunConfig& config,
                              std::span<const TrainSample> batch, double lr_scale);

struct TrainOptions {
    /// Empty: nothing is written. Otherwise receives config.json,
    /// train_log.jsonl and checkpoint/.
    std::filesystem::path out_dir;
    /// Continue from out_dir/checkpoint when it exists.
    bool resume = false;
    /// Stop (as if interrupted) once this many steps have run; 0 = never.
    std::uint64_t stop_after_step = 0;
    std::function<void(const nlohmann::json&)> on_log;
};

struct TrainResult {
    model::ModelParams params;
    AdamW optimizer;
    TrainProgress progress;
    std::vector<nlohmann::json> log;
    bool completed = false;
};

/// Deterministic given the config: epoch order and flips come from streams
/// keyed by (seed, epoch) and (seed, step, slot), so a resumed run replays the
/// same schedule. Throws ConfigError on an empty training set.
TrainResult train(const RunConfig& config, const synth::Dataset& train_data, const synth::Dataset* val_data,
                  const TrainOptions& options = {});

} // namespace mseed
