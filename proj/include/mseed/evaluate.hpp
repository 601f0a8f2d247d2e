#pragma once

#include <filesystem>
#include <vector>

#include "mseed/label_map.hpp"
#include "mseed/metrics.hpp"
#include "mseed/model.hpp"
#include "mseed/synth_data.hpp"

namespace mseed {

/// Argmax of the fused semantic prediction.
LabelMap predict_labels(const model::ModelParams& params, const model::ModelConfig& config, const Tensor& image,
                        const model::ForwardOptions& options = {});

/// Dataset-level metrics of the model's fused predictions. `thresholds`
/// applies to both the boundary F-score and BIoU.
metrics::MetricsReport evaluate_model(const model::ModelParams& params, const model::ModelConfig& config,
                                      const synth::Dataset& data, const std::vector<int>& thresholds,
                                      const model::ForwardOptions& options = {});

/// Dataset-level metrics of precomputed predictions, paired by index.
metrics::MetricsReport evaluate_predictions(const std::vector<LabelMap>& predictions, const synth::Dataset& data,
                                            const std::vector<int>& thresholds);

/// Loads a checkpoint and evaluates it. Throws ConfigError when the class
/// counts of checkpoint and dataset differ.
metrics::MetricsReport evaluate_dataset(const std::filesystem::path& checkpoint, const synth::Dataset& data,
                                        const std::vector<int>& thresholds);

} // namespace mseed
