#include "mseed/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "mseed/boundary_ops.hpp"
#include "mseed/errors.hpp"
#include "mseed/metrics.hpp"

namespace mseed {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr std::uint64_t kOrderStream = 0x6f72646572ULL;
constexpr std::uint64_t kFlipStream = 0x666c6970ULL;

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t tag) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32),
                      static_cast<std::uint32_t>(tag)};
    return std::mt19937_64(seq);
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    auto rng = stream(seed, epoch, 0, kOrderStream);
    // Fisher-Yates with an explicit draw so the order does not depend on the
    // standard library's shuffle.
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng() % i;
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

json report_json(const losses::LossReport& r) {
    return {{"total", r.total},
            {"l_ce_aux", r.l_ce_aux},
            {"l_ce_fused", r.l_ce_fused},
            {"l_bce_boundary", r.l_bce_boundary},
            {"l_s2b", r.l_s2b},
            {"l_b2s", r.l_b2s},
            {"selected_pixel_count", r.selected_pixel_count}};
}

void add_report(losses::LossReport& acc, const losses::LossReport& r, double w) {
    acc.total += w * r.total;
    acc.l_ce_aux += w * r.l_ce_aux;
    acc.l_ce_fused += w * r.l_ce_fused;
    acc.l_bce_boundary += w * r.l_bce_boundary;
    acc.l_s2b += w * r.l_s2b;
    acc.l_b2s += w * r.l_b2s;
    acc.selected_pixel_count += r.selected_pixel_count;
}

double lr_scale_at(const TrainConfig& t, std::uint64_t step, std::uint64_t total) {
    if (!t.cosine_decay || total == 0) return 1.0;
    return 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

std::vector<json> read_log_prefix(const fs::path& path, std::uint64_t max_step) {
    std::vector<json> out;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        if (j.at("step").get<std::uint64_t>() <= max_step) out.push_back(std::move(j));
    }
    return out;
}

void write_log(const fs::path& path, const std::vector<json>& log) {
    std::ofstream out(path, std::ios::trunc);
    for (const auto& j : log) out << j.dump() << '\n';
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

} // namespace

std::pair<synth::Dataset, synth::Dataset> load_datasets(const RunConfig& config) {
    const auto& d = config.data;
    synth::Dataset train = d.train_dir.empty() ? synth::generate_dataset(d.scene, d.train_count, d.train_seed)
                                               : synth::load_dataset(d.train_dir);
    synth::Dataset val;
    if (!d.val_dir.empty()) {
        val = synth::load_dataset(d.val_dir);
    } else if (d.val_count > 0) {
        val = synth::generate_dataset(d.scene, d.val_count, d.val_seed);
    } else {
        val.num_classes = d.scene.num_classes;
    }
    return {std::move(train), std::move(val)};
}

TrainSample make_train_sample(const Tensor& image, const LabelMap& labels, int radius) {
    TrainSample s;
    s.image = image;
    s.labels = labels;
    s.gt_binary = binary_boundary_label(labels, radius);
    s.gt_semantic = semantic_boundary_label(labels, radius);
    return s;
}

TrainSample flip_horizontal(const TrainSample& s, int radius) {
    const std::size_t h = s.labels.height(), w = s.labels.width();
    Tensor image(s.image.shape());
    const std::size_t c = s.image.dim(0);
    for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) image[(k * h + y) * w + x] = s.image[(k * h + y) * w + (w - 1 - x)];
        }
    }
    std::vector<int> lab(h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) lab[y * w + x] = s.labels(y, w - 1 - x);
    }
    return make_train_sample(image, LabelMap(h, w, s.labels.num_classes(), std::move(lab)), radius);
}

losses::LossReport sample_loss(const model::ModelParams& params, const RunConfig& config, const TrainSample& sample) {
    model::ForwardOptions opts;
    opts.boundary_stream = boundary_stream_for(config.train.ablation);
    const auto fwd = model::forward(sample.image, params, config.model, opts);
    const auto& p = fwd.predictions;
    return losses::total_loss(p.s_logits, p.sf_logits, p.b_logits, sample.labels, sample.gt_binary, sample.gt_semantic,
                              config.loss.weights, config.loss.radius, loss_terms_for(config.train.ablation))
        .report;
}

losses::LossReport accumulate_sample_gradients(model::ModelParams& params, const RunConfig& config,
                                               const TrainSample& sample, double grad_scale) {
    model::ForwardOptions opts;
    opts.boundary_stream = boundary_stream_for(config.train.ablation);
    const auto fwd = model::forward(sample.image, params, config.model, opts);
    const auto& p = fwd.predictions;
    auto loss = losses::total_loss(p.s_logits, p.sf_logits, p.b_logits, sample.labels, sample.gt_binary,
                                   sample.gt_semantic, config.loss.weights, config.loss.radius,
                                   loss_terms_for(config.train.ablation));
    ops::scale_inplace(loss.grad_s_logits, grad_scale);
    ops::scale_inplace(loss.grad_sf_logits, grad_scale);
    ops::scale_inplace(loss.grad_b_logits, grad_scale);
    // per-sample buffer, reduced afterwards, so the batch sum does not depend
    // on how backward orders its own accumulation
    const auto plist = params.parameters();
    std::vector<Tensor> running;
    running.reserve(plist.size());
    for (auto* prm : plist) {
        running.push_back(std::move(prm->grad));
        prm->grad = Tensor(prm->value.shape());
    }
    model::backward({std::move(loss.grad_s_logits), std::move(loss.grad_sf_logits), std::move(loss.grad_b_logits)},
                    fwd.cache, params, config.model);
    for (std::size_t i = 0; i < plist.size(); ++i) {
        ops::add_inplace(running[i], plist[i]->grad);
        plist[i]->grad = std::move(running[i]);
    }
    return loss.report;
}

losses::LossReport train_step(model::ModelParams& params, AdamW& optimizer, const RunConfig& config,
                              std::span<const TrainSample> batch, double lr_scale) {
    if (batch.empty()) throw ContractError("train_step: empty batch");
    params.zero_grad();
    const double w = 1.0 / static_cast<double>(batch.size());
    losses::LossReport mean;
    for (const auto& s : batch) add_report(mean, accumulate_sample_gradients(params, config, s, w), w);
    const auto plist = params.parameters();
    optimizer.step(plist, lr_scale);
    ++params.generation;
    return mean;
}

TrainResult train(const RunConfig& config, const synth::Dataset& train_data, const synth::Dataset* val_data,
                  const TrainOptions& options) {
    config.validate();
    if (train_data.size() == 0) throw ConfigError("training set is empty");
    if (train_data.num_classes != config.model.num_classes) {
        throw ConfigError("training set has " + std::to_string(train_data.num_classes) + " classes, model.num_classes is " +
                          std::to_string(config.model.num_classes));
    }
    const auto& tc = config.train;
    const int radius = config.loss.radius;

    std::vector<TrainSample> samples;
    samples.reserve(train_data.size());
    for (const auto& s : train_data.samples) samples.push_back(make_train_sample(s.image, s.labels, radius));

    const std::size_t n = samples.size();
    const std::size_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
    const std::uint64_t total_steps = static_cast<std::uint64_t>(steps_per_epoch) * tc.epochs;

    TrainResult result;
    result.params = model::init_params(config.model, tc.seed);
    result.optimizer = AdamW(tc.hyper);

    const bool writing = !options.out_dir.empty();
    const fs::path ck_dir = options.out_dir / "checkpoint";
    const fs::path log_path = options.out_dir / "train_log.jsonl";
    if (writing) {
        fs::create_directories(options.out_dir);
        save_run_config(options.out_dir / "config.json", config);
    }
    if (writing && options.resume && fs::exists(ck_dir / "manifest.json")) {
        Checkpoint ck = load_checkpoint(ck_dir);
        if (to_json(ck.config) != to_json(config)) {
            throw ConfigError("checkpoint in " + ck_dir.string() + " was written with a different config");
        }
        result.params = std::move(ck.params);
        result.optimizer = std::move(ck.optimizer);
        result.progress = ck.progress;
        result.log = read_log_prefix(log_path, result.progress.step);
    }
    if (writing) write_log(log_path, result.log);

    auto emit = [&](json j) {
        if (writing) {
            std::ofstream out(log_path, std::ios::app);
            out << j.dump() << '\n';
        }
        if (options.on_log) options.on_log(j);
        result.log.push_back(std::move(j));
    };
    auto checkpoint = [&] {
        if (writing) save_checkpoint(ck_dir, config, result.params, result.optimizer, result.progress);
    };

    auto& prog = result.progress;
    while (prog.epoch < tc.epochs) {
        const auto order = epoch_order(tc.seed, prog.epoch, n);
        const std::uint64_t epoch_start = static_cast<std::uint64_t>(prog.epoch) * steps_per_epoch;
        losses::LossReport epoch_mean;
        std::size_t epoch_steps = 0;
        // Resuming mid-epoch: recover the partial sums from the kept log.
        for (const auto& j : result.log) {
            if (j.at("type") != "step" || j.at("epoch").get<std::size_t>() != prog.epoch) continue;
            const auto& l = j.at("loss");
            losses::LossReport r;
            r.total = l.at("total").get<double>();
            r.l_ce_aux = l.at("l_ce_aux").get<double>();
            r.l_ce_fused = l.at("l_ce_fused").get<double>();
            r.l_bce_boundary = l.at("l_bce_boundary").get<double>();
            r.l_s2b = l.at("l_s2b").get<double>();
            r.l_b2s = l.at("l_b2s").get<double>();
            r.selected_pixel_count = l.at("selected_pixel_count").get<std::size_t>();
            add_report(epoch_mean, r, 1.0);
            ++epoch_steps;
        }
        for (std::size_t b = static_cast<std::size_t>(prog.step - epoch_start); b < steps_per_epoch; ++b) {
            if (options.stop_after_step != 0 && prog.step >= options.stop_after_step) return result;
            std::vector<TrainSample> batch;
            const std::size_t lo = b * tc.batch_size, hi = std::min(n, lo + tc.batch_size);
            for (std::size_t i = lo; i < hi; ++i) {
                const TrainSample& s = samples[order[i]];
                if (tc.horizontal_flip && (stream(tc.seed, prog.step, i - lo, kFlipStream)() & 1U)) {
                    batch.push_back(flip_horizontal(s, radius));
                } else {
                    batch.push_back(s);
                }
            }
            const double lr_scale = lr_scale_at(tc, prog.step, total_steps);
            const auto report = train_step(result.params, result.optimizer, config, batch, lr_scale);
            ++prog.step;
            add_report(epoch_mean, report, 1.0);
            ++epoch_steps;
            if (tc.log_steps) {
                emit({{"type", "step"},
                      {"epoch", prog.epoch},
                      {"step", prog.step},
                      {"lr", tc.hyper.lr * lr_scale},
                      {"loss", report_json(report)}});
            }
            const bool epoch_end = b + 1 == steps_per_epoch;
            if (!epoch_end && tc.checkpoint_every != 0 && prog.step % tc.checkpoint_every == 0) checkpoint();
        }
        json entry{{"type", "epoch"}, {"epoch", prog.epoch}, {"step", prog.step}};
        if (epoch_steps > 0) {
            const double inv = 1.0 / static_cast<double>(epoch_steps);
            losses::LossReport m;
            add_report(m, epoch_mean, inv);
            m.selected_pixel_count = epoch_mean.selected_pixel_count;
            entry["train"] = report_json(m);
            entry["train_steps"] = epoch_steps;
        }
        if (val_data && val_data->size() > 0) {
            model::ForwardOptions opts;
            opts.boundary_stream = boundary_stream_for(tc.ablation);
            metrics::MetricsAccumulator acc(config.model.num_classes, {}, {3});
            for (const auto& s : val_data->samples) {
                const auto fwd = model::forward(s.image, result.params, config.model, opts);
                acc.add(argmax_labels(fwd.predictions.sf_logits), s.labels);
            }
            const auto rep = acc.report();
            entry["val"] = {{"miou", rep.iou.mean}, {"biou3", rep.biou.at(3).mean}};
        }
        ++prog.epoch;
        emit(std::move(entry));
        checkpoint();
    }
    result.completed = true;
    return result;
}

} // namespace mseed
