#include "mseed/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mseed/boundary_ops.hpp"
#include "mseed/checkpoint.hpp"
#include "mseed/config.hpp"
#include "mseed/errors.hpp"
#include "mseed/evaluate.hpp"
#include "mseed/gradcheck_suite.hpp"
#include "mseed/image_io.hpp"
#include "mseed/trainer.hpp"

namespace mseed {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

void write_json_file(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::vector<int> parse_thresholds(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(item, &used);
            if (used != item.size() || v < 1) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError("--thresholds: '" + item + "' is not a positive integer");
        }
    }
    if (out.empty()) throw ConfigError("--thresholds: empty list");
    return out;
}

Tensor read_image(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("image not found: " + path.string());
    const auto ext = path.extension().string();
    if (ext == ".ppm") return io::read_ppm(path);
    Tensor t = io::read_tensor(path);
    if (t.rank() != 3 || t.dim(0) != 3) {
        throw ContractError("image " + path.string() + " has shape " + shape_to_string(t.shape()) + ", expected 3xHxW");
    }
    return t;
}

void print_table(std::ostream& out, const metrics::MetricsReport& r) {
    out << std::left << std::setw(10) << "metric" << std::right << std::setw(9) << "mean";
    for (std::size_t k = 0; k < r.num_classes; ++k) out << std::setw(9) << ("c" + std::to_string(k));
    out << '\n';
    auto row = [&](const std::string& name, const metrics::ClassScores& s) {
        out << std::left << std::setw(10) << name << std::right << std::fixed << std::setprecision(4) << std::setw(9)
            << s.mean;
        for (const auto& v : s.per_class) {
            if (v) out << std::setw(9) << *v;
            else out << std::setw(9) << "-";
        }
        out << '\n';
    };
    row("mIoU", r.iou);
    for (const auto& [d, s] : r.fscore) row("F@" + std::to_string(d), s);
    for (const auto& [d, s] : r.biou) row("BIoU@" + std::to_string(d), s);
    out.unsetf(std::ios::floatfield);
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir, std::size_t count, std::uint64_t seed,
                 std::ostream& out) {
    const RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    synth::save_generated_dataset(out_dir, cfg.data.scene, count, seed);
    save_run_config(fs::path(out_dir) / "config.json", cfg);
    out << "wrote " << count << " samples to " << out_dir << '\n';
    return kExitOk;
}

int cmd_labels(const std::string& labelmap, int radius, std::size_t num_classes, const std::string& out_dir,
               std::ostream& out) {
    if (!fs::exists(labelmap)) throw ConfigError("label map not found: " + labelmap);
    const LabelMap lm = io::read_label_pgm(labelmap, num_classes);
    const Tensor binary = binary_boundary_label(lm, radius);
    const Tensor semantic = semantic_boundary_label(lm, radius);
    const fs::path dir(out_dir);
    io::write_mask_pgm(dir / "binary.pgm", binary);
    const std::size_t hw = lm.size();
    for (std::size_t k = 0; k < lm.num_classes(); ++k) {
        Tensor plane({lm.height(), lm.width()});
        std::copy_n(semantic.data().begin() + static_cast<long>(k * hw), hw, plane.storage().begin());
        io::write_mask_pgm(dir / ("semantic_" + std::to_string(k) + ".pgm"), plane);
    }
    out << "wrote binary and " << lm.num_classes() << " semantic boundary masks to " << out_dir << '\n';
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, const std::string& ablation,
              const std::string& fusion, const std::optional<std::uint64_t>& seed, bool resume, std::ostream& out) {
    RunConfig cfg = load_run_config(config_path);
    if (!ablation.empty()) cfg.train.ablation = parse_ablation(ablation);
    if (!fusion.empty()) cfg.model.fusion = model::parse_fusion_mode(fusion);
    if (seed) cfg.train.seed = *seed;
    cfg.validate();
    const auto [train_set, val_set] = load_datasets(cfg);
    TrainOptions opts;
    opts.out_dir = out_dir;
    opts.resume = resume;
    opts.on_log = [&out](const json& j) {
        if (j.at("type") != "epoch") return;
        out << "epoch " << j.at("epoch").get<std::size_t>() << " step " << j.at("step").get<std::uint64_t>();
        if (j.contains("train")) out << " loss " << j.at("train").at("total").get<double>();
        if (j.contains("val")) {
            out << " val_miou " << j.at("val").at("miou").get<double>() << " val_biou3 "
                << j.at("val").at("biou3").get<double>();
        }
        out << '\n';
    };
    const auto result = train(cfg, train_set, &val_set, opts);
    out << "trained " << result.progress.step << " steps; checkpoint in " << (fs::path(out_dir) / "checkpoint").string()
        << '\n';
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& pred_dir, const std::string& data_dir,
             const std::string& thresholds_text, const std::string& out_path, std::ostream& out) {
    const auto thresholds = parse_thresholds(thresholds_text);
    const synth::Dataset data = synth::load_dataset(data_dir);
    metrics::MetricsReport report;
    fs::path target = out_path;
    if (!checkpoint.empty()) {
        report = evaluate_dataset(checkpoint, data, thresholds);
        if (target.empty()) target = fs::path(checkpoint).parent_path() / "metrics.json";
    } else {
        const synth::Dataset pred = synth::load_dataset(pred_dir);
        if (pred.num_classes > data.num_classes) {
            throw ConfigError("prediction set has " + std::to_string(pred.num_classes) + " classes, data has " +
                              std::to_string(data.num_classes));
        }
        std::vector<LabelMap> labels;
        for (const auto& s : pred.samples) labels.push_back(s.labels);
        report = evaluate_predictions(labels, data, thresholds);
        if (target.empty()) target = fs::path(pred_dir) / "metrics.json";
    }
    print_table(out, report);
    write_json_file(target, metrics::to_json(report));
    out << "metrics written to " << target.string() << '\n';
    return kExitOk;
}

int cmd_gradcheck(const std::string& config_path, double tol, double step, std::uint64_t seed, const std::string& out_path,
                  std::ostream& out) {
    const model::ModelConfig mc = config_path.empty() ? model::ModelConfig{} : load_run_config(config_path).model;
    GradCheckOptions opts;
    opts.tol = tol;
    if (step > 0.0) opts.step = step;
    opts.seed = seed;
    const auto suite = run_gradcheck_suite(mc, opts);
    std::size_t failed = 0, skipped = 0, checked = 0;
    for (const auto& e : suite.entries) {
        skipped += e.report.skipped;
        checked += e.report.checked;
        if (!e.report.passed) {
            ++failed;
            out << "FAIL " << e.name << " rel_err " << e.report.max_rel_error << " at " << e.report.worst_index
                << " (analytic " << e.report.analytic_at_worst << ", numeric " << e.report.numeric_at_worst << ")\n";
        }
    }
    out << suite.entries.size() << " checks (" << checked << " probes, " << skipped << " straddling a kink), " << failed
        << " failed, max rel error " << suite.max_rel_error << ", "
        << std::fixed << std::setprecision(2) << suite.seconds << " s\n";
    out.unsetf(std::ios::floatfield);
    if (!out_path.empty()) write_json_file(out_path, to_json(suite));
    return suite.passed ? kExitOk : kExitFailure;
}

int cmd_infer(const std::string& checkpoint, const std::string& image_path, const std::string& prefix,
              std::ostream& out) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const Tensor image = read_image(image_path);
    model::ForwardOptions opts;
    opts.boundary_stream = boundary_stream_for(ck.config.train.ablation);
    const auto fwd = model::forward(image, ck.params, ck.config.model, opts);
    const auto& p = fwd.predictions;
    const std::string base = prefix;
    io::write_label_pgm(base + "_semantic.pgm", argmax_labels(p.sf_logits));
    io::write_mask_pgm(base + "_boundary.pgm", p.b);
    const auto pseudo = pseudo_semantic_boundary(p.s_f, 1);
    const std::size_t h = image.dim(1), w = image.dim(2), hw = h * w;
    for (std::size_t k = 0; k < ck.config.model.num_classes; ++k) {
        Tensor plane({h, w});
        std::copy_n(pseudo.value.data().begin() + static_cast<long>(k * hw), hw, plane.storage().begin());
        io::write_mask_pgm(base + "_boundary_" + std::to_string(k) + ".pgm", plane);
    }
    out << "wrote " << base << "_semantic.pgm, " << base << "_boundary.pgm and " << ck.config.model.num_classes
        << " per-class boundary masks\n";
    return kExitOk;
}

} // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Joint semantic segmentation and boundary detection toolkit"};
    app.require_subcommand(1);

    std::string config, out_dir, labelmap, ablation, fusion, checkpoint, pred_dir, data_dir, image, prefix, out_file;
    std::string thresholds = "3,5,9,12";
    std::size_t count = 1, num_classes = 0;
    std::uint64_t seed = 0;
    std::optional<std::uint64_t> train_seed;
    int radius = 2;
    double tol = 1e-4;
    double step = 0.0;
    bool resume = false;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    gen->add_option("--config", config, "Run config (data.scene is used)")->check(CLI::ExistingFile);
    gen->add_option("--out", out_dir, "Output directory")->required();
    gen->add_option("--count", count, "Number of samples")->required()->check(CLI::PositiveNumber);
    gen->add_option("--seed", seed, "Seed of sample 0");

    auto* labels = app.add_subcommand("labels", "Boundary masks from a label map");
    labels->add_option("--labelmap", labelmap, "Label map (PGM)")->required();
    labels->add_option("--radius", radius, "Neighborhood radius")->check(CLI::PositiveNumber);
    labels->add_option("--num-classes", num_classes, "Class count (default: max label + 1)");
    labels->add_option("--out", out_dir, "Output directory")->required();

    auto* tr = app.add_subcommand("train", "Train a model");
    tr->add_option("--config", config, "Run config")->required();
    tr->add_option("--out", out_dir, "Output directory")->required();
    tr->add_option("--ablation", ablation, "A|B|C|D")->check(CLI::IsMember({"A", "B", "C", "D"}));
    tr->add_option("--fusion", fusion, "add|cat|afd")->check(CLI::IsMember({"add", "cat", "afd"}));
    tr->add_option("--seed", train_seed, "Override train.seed");
    tr->add_flag("--resume", resume, "Continue from <out>/checkpoint");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint or saved predictions");
    auto* ck_opt = ev->add_option("--checkpoint", checkpoint, "Checkpoint directory");
    auto* pred_opt = ev->add_option("--pred", pred_dir, "Dataset directory of predicted label maps");
    ck_opt->excludes(pred_opt);
    ev->add_option("--data", data_dir, "Ground-truth dataset directory")->required();
    ev->add_option("--thresholds", thresholds, "Comma-separated pixel distances");
    ev->add_option("--out", out_file, "Metrics JSON path (default: beside the checkpoint)");

    auto* gc = app.add_subcommand("gradcheck", "Run the gradient-check suite");
    gc->add_option("--config", config, "Run config (model section is used)");
    gc->add_option("--tol", tol, "Maximum relative error");
    gc->add_option("--step", step, "Finite-difference step");
    gc->add_option("--seed", seed, "Seed of the random test inputs");
    gc->add_option("--out", out_file, "Write the per-check report as JSON");

    auto* inf = app.add_subcommand("infer", "Predict masks for one image");
    inf->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
    inf->add_option("--image", image, "Image (.mst or .ppm)")->required();
    inf->add_option("--out-prefix", prefix, "Output path prefix")->required();

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(config, out_dir, count, seed, out);
        if (labels->parsed()) return cmd_labels(labelmap, radius, num_classes, out_dir, out);
        if (tr->parsed()) return cmd_train(config, out_dir, ablation, fusion, train_seed, resume, out);
        if (ev->parsed()) {
            if (checkpoint.empty() && pred_dir.empty()) {
                err << "error: eval needs --checkpoint or --pred\n";
                return kExitUsage;
            }
            return cmd_eval(checkpoint, pred_dir, data_dir, thresholds, out_file, out);
        }
        if (gc->parsed()) return cmd_gradcheck(config, tol, step, seed, out_file, out);
        if (inf->parsed()) return cmd_infer(checkpoint, image, prefix, out);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}

} // namespace mseed
