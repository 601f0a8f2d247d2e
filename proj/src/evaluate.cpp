#include "mseed/evaluate.hpp"

#include "mseed/checkpoint.hpp"
#include "mseed/errors.hpp"

namespace mseed {

LabelMap predict_labels(const model::ModelParams& params, const model::ModelConfig& config, const Tensor& image,
                        const model::ForwardOptions& options) {
    const auto out = model::forward(image, params, config, options);
    return argmax_labels(out.predictions.sf_logits);
}

metrics::MetricsReport evaluate_model(const model::ModelParams& params, const model::ModelConfig& config,
                                      const synth::Dataset& data, const std::vector<int>& thresholds,
                                      const model::ForwardOptions& options) {
    if (data.num_classes != config.num_classes) {
        throw ConfigError("dataset has " + std::to_string(data.num_classes) + " classes, model expects " +
                          std::to_string(config.num_classes));
    }
    metrics::MetricsAccumulator acc(config.num_classes, thresholds, thresholds);
    for (const auto& s : data.samples) acc.add(predict_labels(params, config, s.image, options), s.labels);
    return acc.report();
}

metrics::MetricsReport evaluate_predictions(const std::vector<LabelMap>& predictions, const synth::Dataset& data,
                                            const std::vector<int>& thresholds) {
    if (predictions.size() != data.size()) {
        throw ContractError("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                            std::to_string(data.size()) + " samples");
    }
    metrics::MetricsAccumulator acc(data.num_classes, thresholds, thresholds);
    for (std::size_t i = 0; i < predictions.size(); ++i) acc.add(predictions[i], data.samples[i].labels);
    return acc.report();
}

metrics::MetricsReport evaluate_dataset(const std::filesystem::path& checkpoint, const synth::Dataset& data,
                                        const std::vector<int>& thresholds) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    model::ForwardOptions opts;
    opts.boundary_stream = boundary_stream_for(ck.config.train.ablation);
    return evaluate_model(ck.params, ck.config.model, data, thresholds, opts);
}

} // namespace mseed
