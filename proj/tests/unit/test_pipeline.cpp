#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mseed/checkpoint.hpp"
#include "mseed/cli.hpp"
#include "mseed/config.hpp"
#include "mseed/errors.hpp"
#include "mseed/evaluate.hpp"
#include "mseed/image_io.hpp"
#include "mseed/trainer.hpp"

using namespace mseed;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("mseed_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

RunConfig tiny_config() {
    RunConfig c;
    c.data.scene.height = 16;
    c.data.scene.width = 16;
    c.data.train_count = 6;
    c.data.val_count = 3;
    c.train.epochs = 2;
    c.train.batch_size = 4;
    c.train.seed = 5;
    c.train.horizontal_flip = true;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

bool same_params(const model::ModelParams& a, const model::ModelParams& b) {
    const auto pa = a.parameters(), pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i]->name != pb[i]->name || pa[i]->value != pb[i]->value) return false;
    }
    return true;
}

int run(std::vector<std::string> args, std::string* out_text = nullptr) {
    args.insert(args.begin(), "mseed");
    std::ostringstream out, err;
    const int code = cli_main(args, out, err);
    if (out_text) *out_text = out.str() + err.str();
    return code;
}

} // namespace

TEST(Config, DefaultsRoundTrip) {
    const RunConfig c;
    EXPECT_EQ(c.train.hyper.lr, 1e-3);
    EXPECT_EQ(c.train.hyper.beta1, 0.9);
    EXPECT_EQ(c.train.hyper.beta2, 0.999);
    EXPECT_EQ(c.train.hyper.eps, 1e-8);
    EXPECT_EQ(c.train.hyper.weight_decay, 1e-4);
    EXPECT_EQ(c.train.batch_size, 8u);
    EXPECT_TRUE(c.train.cosine_decay);
    EXPECT_EQ(to_json(run_config_from_json(to_json(c))), to_json(c));
}

TEST(Config, UnknownKeysNameTheirPath) {
    try {
        run_config_from_json(nlohmann::json::parse(R"({"train": {"lr": 0.01, "epoks": 3}})"));
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("train.epoks"), std::string::npos) << e.what();
    }
}

TEST(Config, CrossSectionChecks) {
    RunConfig c;
    c.data.scene.height = 24;
    EXPECT_THROW(c.validate(), ConfigError);
    c = RunConfig{};
    c.loss.radius = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    auto j = to_json(RunConfig{});
    j["model"]["num_classes"] = 3;
    j["data"]["scene"].erase("num_classes");
    EXPECT_EQ(run_config_from_json(j).data.scene.num_classes, 3u);
}

TEST(Config, AblationRows) {
    EXPECT_FALSE(boundary_stream_for(Ablation::A));
    EXPECT_TRUE(boundary_stream_for(Ablation::B));
    EXPECT_FALSE(loss_terms_for(Ablation::B).bce_boundary);
    EXPECT_TRUE(loss_terms_for(Ablation::C).bce_boundary);
    EXPECT_FALSE(loss_terms_for(Ablation::C).regularization);
    EXPECT_TRUE(loss_terms_for(Ablation::D).regularization);
    EXPECT_THROW(parse_ablation("E"), ConfigError);
}

TEST(Io, TensorAndLabelRoundTrip) {
    const auto dir = scratch("io");
    Tensor t({2, 3, 4});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.1 * static_cast<double>(i) - 0.77;
    io::write_tensor(dir / "t.mst", t);
    EXPECT_EQ(io::read_tensor(dir / "t.mst"), t);
    const LabelMap lm(3, 5, 7, std::vector<int>{0, 1, 2, 3, 4, 5, 6, 0, 1, 2, 3, 4, 5, 6, 0});
    io::write_label_pgm(dir / "l.pgm", lm);
    EXPECT_EQ(io::read_label_pgm(dir / "l.pgm", 7), lm);
    fs::remove_all(dir);
}

TEST(Checkpoint, RoundTripAndShapeValidation) {
    const auto dir = scratch("ckpt");
    const RunConfig c = tiny_config();
    auto params = model::init_params(c.model, 3);
    AdamW opt(c.train.hyper);
    for (auto* p : params.parameters()) p->grad.fill(0.01);
    opt.step(params.parameters());
    save_checkpoint(dir / "ck", c, params, opt, {1, 0});
    const auto back = load_checkpoint(dir / "ck");
    EXPECT_TRUE(same_params(back.params, params));
    EXPECT_EQ(back.optimizer.steps(), 1u);
    EXPECT_EQ(back.optimizer.first_moments(), opt.first_moments());
    EXPECT_EQ(back.progress.step, 1u);

    auto manifest = nlohmann::json::parse(slurp(dir / "ck" / "manifest.json"));
    manifest["config"]["model"]["afd_channels"] = 24;
    std::ofstream(dir / "ck" / "manifest.json") << manifest.dump();
    EXPECT_THROW(load_checkpoint(dir / "ck"), ConfigError);
    fs::remove_all(dir);
}

TEST(Trainer, ZeroLearningRateKeepsInitialParameters) {
    RunConfig c = tiny_config();
    c.train.hyper.lr = 0.0;
    const auto [tr, val] = load_datasets(c);
    const auto result = train(c, tr, &val);
    EXPECT_TRUE(same_params(result.params, model::init_params(c.model, c.train.seed)));
    EXPECT_EQ(result.progress.step, 4u);
}

TEST(Trainer, SameSeedIsBitIdentical) {
    const RunConfig c = tiny_config();
    const auto [tr, val] = load_datasets(c);
    const auto a = train(c, tr, &val), b = train(c, tr, &val);
    EXPECT_TRUE(same_params(a.params, b.params));
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].dump(), b.log[i].dump());
    RunConfig other = c;
    other.train.seed = 6;
    EXPECT_FALSE(same_params(a.params, train(other, tr, &val).params));
}

TEST(Trainer, ResumeReplaysTheSameRun) {
    const RunConfig c = tiny_config();
    const auto [tr, val] = load_datasets(c);
    const auto dir = scratch("resume");
    TrainOptions full_opts;
    full_opts.out_dir = dir / "full";
    const auto full = train(c, tr, &val, full_opts);

    TrainOptions part;
    part.out_dir = dir / "part";
    part.stop_after_step = 3;
    const auto stopped = train(c, tr, &val, part);
    EXPECT_FALSE(stopped.completed);
    part.stop_after_step = 0;
    part.resume = true;
    const auto resumed = train(c, tr, &val, part);
    EXPECT_TRUE(resumed.completed);
    EXPECT_TRUE(same_params(full.params, resumed.params));
    EXPECT_EQ(slurp(dir / "full" / "train_log.jsonl"), slurp(dir / "part" / "train_log.jsonl"));
    fs::remove_all(dir);
}

TEST(Trainer, SemanticOnlyRowIgnoresBoundaryStream) {
    RunConfig c = tiny_config();
    c.train.ablation = Ablation::A;
    c.train.epochs = 1;
    const auto [tr, val] = load_datasets(c);
    const auto init = model::init_params(c.model, c.train.seed);
    const auto result = train(c, tr, &val);
    const auto before = init.parameters();
    const auto after = result.params.parameters();
    for (std::size_t i = 0; i < before.size(); ++i) {
        if (before[i]->name.rfind("boundary.", 0) == 0 || before[i]->name.rfind("fusion.boundary_proj", 0) == 0) {
            // untouched apart from weight decay
            for (std::size_t j = 0; j < before[i]->value.size(); ++j) {
                EXPECT_NEAR(after[i]->value[j], before[i]->value[j], 1e-6 * std::abs(before[i]->value[j]) + 1e-300);
            }
        }
    }
}

TEST(Evaluate, PerfectPredictionsScoreOne) {
    const RunConfig c = tiny_config();
    const auto [tr, val] = load_datasets(c);
    std::vector<LabelMap> preds;
    for (const auto& s : val.samples) preds.push_back(s.labels);
    const auto r = evaluate_predictions(preds, val, {3, 5});
    EXPECT_EQ(r.iou.mean, 1.0);
    EXPECT_EQ(r.fscore.at(3).mean, 1.0);
    EXPECT_EQ(r.biou.at(5).mean, 1.0);
}

TEST(Cli, LabelsOnConstantMap) {
    const auto dir = scratch("cli_labels");
    io::write_label_pgm(dir / "flat.pgm", LabelMap(6, 6, 3, 2));
    ASSERT_EQ(run({"labels", "--labelmap", (dir / "flat.pgm").string(), "--num-classes", "3", "--out",
                   (dir / "out").string()}),
              kExitOk);
    const auto binary = io::read_label_pgm(dir / "out" / "binary.pgm");
    for (int v : binary.labels()) EXPECT_EQ(v, 0);
    for (int k = 0; k < 3; ++k) {
        const auto mask = io::read_label_pgm(dir / "out" / ("semantic_" + std::to_string(k) + ".pgm"));
        for (int v : mask.labels()) EXPECT_EQ(v, 0);
    }
    fs::remove_all(dir);
}

TEST(Cli, EvalOfGroundTruthIsPerfect) {
    const auto dir = scratch("cli_eval");
    ASSERT_EQ(run({"gen-data", "--out", (dir / "data").string(), "--count", "3", "--seed", "11"}), kExitOk);
    ASSERT_EQ(run({"eval", "--pred", (dir / "data").string(), "--data", (dir / "data").string(), "--out",
                   (dir / "m.json").string()}),
              kExitOk);
    const auto j = nlohmann::json::parse(slurp(dir / "m.json"));
    EXPECT_EQ(j.at("miou").get<double>(), 1.0);
    for (const auto& [d, s] : j.at("fscore").items()) EXPECT_EQ(s.at("mean").get<double>(), 1.0) << d;
    for (const auto& [d, s] : j.at("biou").items()) EXPECT_EQ(s.at("mean").get<double>(), 1.0) << d;
    fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
    const auto dir = scratch("cli_codes");
    EXPECT_EQ(run({"frobnicate"}), kExitUsage);
    EXPECT_EQ(run({"labels", "--out", dir.string()}), kExitUsage);
    EXPECT_EQ(run({"train", "--config", (dir / "missing.json").string(), "--out", dir.string()}), kExitUsage);
    std::ofstream(dir / "bad.json") << R"({"model": {"num_classes": 4, "colour": 1}})";
    std::string text;
    EXPECT_EQ(run({"train", "--config", (dir / "bad.json").string(), "--out", (dir / "o").string()}, &text),
              kExitUsage);
    EXPECT_NE(text.find("model.colour"), std::string::npos) << text;
    std::ofstream(dir / "broken.pgm") << "P5\n2 2\n255\n";
    EXPECT_EQ(run({"labels", "--labelmap", (dir / "broken.pgm").string(), "--out", (dir / "x").string()}), kExitFailure);
    fs::remove_all(dir);
}

TEST(Cli, TrainEvalInfer) {
    const auto dir = scratch("cli_train");
    std::ofstream(dir / "cfg.json") << to_json(tiny_config()).dump();
    ASSERT_EQ(run({"train", "--config", (dir / "cfg.json").string(), "--out", (dir / "run").string(), "--ablation",
                   "C", "--fusion", "cat"}),
              kExitOk);
    const auto ck = load_checkpoint(dir / "run" / "checkpoint");
    EXPECT_EQ(ck.config.train.ablation, Ablation::C);
    EXPECT_EQ(ck.config.model.fusion, model::FusionMode::cat);
    ASSERT_EQ(run({"gen-data", "--config", (dir / "cfg.json").string(), "--out", (dir / "val").string(), "--count",
                   "2"}),
              kExitOk);
    std::string text;
    ASSERT_EQ(run({"eval", "--checkpoint", (dir / "run" / "checkpoint").string(), "--data", (dir / "val").string()},
                  &text),
              kExitOk);
    EXPECT_NE(text.find("mIoU"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "run" / "metrics.json"));
    const auto data = synth::load_dataset(dir / "val");
    io::write_tensor(dir / "img.mst", data.samples[0].image);
    ASSERT_EQ(run({"infer", "--checkpoint", (dir / "run" / "checkpoint").string(), "--image",
                   (dir / "img.mst").string(), "--out-prefix", (dir / "pred").string()}),
              kExitOk);
    EXPECT_TRUE(fs::exists(dir / "pred_semantic.pgm"));
    EXPECT_TRUE(fs::exists(dir / "pred_boundary.pgm"));
    EXPECT_TRUE(fs::exists(dir / "pred_boundary_3.pgm"));
    fs::remove_all(dir);
}
