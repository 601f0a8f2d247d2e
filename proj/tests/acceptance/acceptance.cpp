// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// every selected criterion passes.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mseed/afd.hpp"
#include "mseed/boundary_ops.hpp"
#include "mseed/cli.hpp"
#include "mseed/config.hpp"
#include "mseed/gradcheck_suite.hpp"
#include "mseed/losses.hpp"
#include "mseed/metrics.hpp"
#include "mseed/model.hpp"
#include "mseed/ops.hpp"
#include "mseed/trainer.hpp"
#include "oracles.hpp"

using namespace mseed;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
    json data;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---- 1 ---------------------------------------------------------------------

Outcome gradients() {
    const auto suite = run_gradcheck_suite(model::ModelConfig{});
    std::size_t probes = 0, skipped = 0, failed = 0;
    for (const auto& e : suite.entries) {
        probes += e.report.checked;
        skipped += e.report.skipped;
        failed += e.report.passed ? 0 : 1;
        if (!e.report.passed) std::cout << "    failed: " << e.name << " rel " << e.report.max_rel_error << '\n';
    }
    Outcome o;
    o.pass = suite.passed && suite.seconds <= 60.0;
    o.detail = std::to_string(suite.entries.size()) + " checks, " + std::to_string(probes) + " probes (" +
               std::to_string(skipped) + " at kinks), " + std::to_string(failed) + " failed, max rel error " +
               fmt("%.2e", suite.max_rel_error) + ", " + fmt("%.1f", suite.seconds) + " s";
    o.data = to_json(suite);
    return o;
}

// ---- 2 ---------------------------------------------------------------------

Outcome boundary_labels() {
    std::mt19937_64 rng(2002);
    int mismatches = 0, union_failures = 0;
    for (int i = 0; i < 200; ++i) {
        const std::size_t n = 2 + rng() % 4;
        const int r = 1 + i % 2;
        const LabelMap lm = i % 4 == 0 ? oracle::random_labels(16, 16, n, rng) : oracle::random_blobs(16, 16, n, rng);
        const Tensor b = binary_boundary_label(lm, r), s = semantic_boundary_label(lm, r);
        if (b != oracle::binary_boundary(lm, r) || s != oracle::semantic_boundary(lm, r)) ++mismatches;
        for (std::size_t p = 0; p < 256; ++p) {
            double any = 0.0;
            for (std::size_t k = 0; k < n; ++k) any = std::max(any, s[k * 256 + p]);
            if (any != b[p]) {
                ++union_failures;
                break;
            }
        }
    }
    Outcome o;
    o.pass = mismatches == 0 && union_failures == 0;
    o.detail = "200 maps: " + std::to_string(mismatches) + " oracle mismatches, " + std::to_string(union_failures) +
               " union violations";
    o.data = {{"mismatches", mismatches}, {"union_failures", union_failures}};
    return o;
}

// ---- 3 ---------------------------------------------------------------------

Outcome pseudo_boundary_identity() {
    std::mt19937_64 rng(3003);
    int mismatches = 0;
    double worst_loss = 0.0;
    for (int i = 0; i < 100; ++i) {
        const std::size_t n = 2 + rng() % 4;
        const int r = 1 + i % 2;
        const LabelMap lm = oracle::random_blobs(16, 16, n, rng);
        const Tensor target = semantic_boundary_label(lm, r);
        if (pseudo_semantic_boundary(lm.one_hot(), r).value != target) ++mismatches;
        worst_loss = std::max(worst_loss, losses::l_s2b(lm.one_hot(), target, r).value);
    }
    Outcome o;
    o.pass = mismatches == 0 && worst_loss == 0.0;
    o.detail = "100 maps: " + std::to_string(mismatches) + " mismatches, max semantic-to-boundary loss " +
               fmt("%g", worst_loss);
    o.data = {{"mismatches", mismatches}, {"max_loss", worst_loss}};
    return o;
}

// ---- 4 ---------------------------------------------------------------------

void zero_internal(afd::AfdParams& p) {
    for (auto* prm : p.parameters()) {
        if (prm->name.find(".head.") == std::string::npos) prm->value.fill(0.0);
    }
}

Outcome zero_fusion() {
    int failures = 0, cases = 0;
    std::mt19937_64 rng(4004);
    for (int i = 0; i < 10; ++i, ++cases) {
        afd::AfdParams p = afd::make_afd_params(48, 4, 4, 4, rng);
        zero_internal(p);
        const Tensor fs = oracle::random_tensor({48, 8, 8}, rng, -3.0, 3.0);
        const Tensor fb = oracle::random_tensor({48, 8, 8}, rng, -3.0, 3.0);
        if (afd::afd_forward(fs, fb, p).fused != ops::add(fs, fb)) ++failures;
    }
    const model::ModelConfig config;
    for (std::uint64_t seed = 1; seed <= 5; ++seed, ++cases) {
        auto params = model::init_params(config, seed);
        zero_internal(*params.afd);
        const auto fwd = model::forward(oracle::random_tensor({3, 32, 32}, rng, 0.0, 1.0), params, config);
        if (fwd.cache.afd_state->fused != ops::add(fwd.cache.f_s, fwd.cache.f_b)) ++failures;
    }
    Outcome o;
    o.pass = failures == 0;
    o.detail = std::to_string(cases) + " cases (standalone and in-model), " + std::to_string(failures) +
               " not bit-identical to the plain sum";
    o.data = {{"cases", cases}, {"failures", failures}};
    return o;
}

// ---- 5 ---------------------------------------------------------------------

Outcome metrics_oracles() {
    std::mt19937_64 rng(5005);
    int mismatches = 0, imperfect = 0;
    const std::size_t n = 4;
    for (int i = 0; i < 100; ++i) {
        const LabelMap gt = oracle::random_blobs(24, 24, n, rng);
        const LabelMap pred = i % 5 == 0 ? oracle::random_labels(24, 24, n, rng) : oracle::random_blobs(24, 24, n, rng);
        bool same = oracle::same_scores(metrics::miou(pred, gt, n), oracle::miou(pred, gt, n));
        for (int d : {3, 5}) same = same && oracle::same_scores(metrics::boundary_fscore(pred, gt, d, n), oracle::fscore(pred, gt, d, n));
        same = same && oracle::same_scores(metrics::biou(pred, gt, 3, n), oracle::biou(pred, gt, 3, n));
        if (!same) ++mismatches;

        const bool perfect = metrics::miou(gt, gt, n).mean == 1.0 && metrics::boundary_fscore(gt, gt, 3, n).mean == 1.0 &&
                             metrics::boundary_fscore(gt, gt, 5, n).mean == 1.0 && metrics::biou(gt, gt, 3, n).mean == 1.0;
        if (!perfect) ++imperfect;
    }
    Outcome o;
    o.pass = mismatches == 0 && imperfect == 0;
    o.detail = "100 pairs: " + std::to_string(mismatches) + " oracle mismatches, " + std::to_string(imperfect) +
               " perfect predictions scoring below 1";
    o.data = {{"mismatches", mismatches}, {"imperfect", imperfect}};
    return o;
}

// ---- 6 and 7 ---------------------------------------------------------------

struct RunScore {
    double miou = 0.0;
    double biou3 = 0.0;
    double seconds = 0.0;
};

class TrendRuns {
public:
    TrendRuns(std::vector<std::uint64_t> seeds, std::size_t epochs) : seeds_(std::move(seeds)), epochs_(epochs) {
        const auto [tr, val] = load_datasets(RunConfig{});
        train_ = tr;
        val_ = val;
    }

    const std::vector<std::uint64_t>& seeds() const { return seeds_; }

    const RunScore& get(const std::string& variant, std::uint64_t seed) {
        const auto key = variant + "/" + std::to_string(seed);
        if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        RunConfig c;
        c.train.seed = seed;
        c.train.epochs = epochs_;
        c.train.log_steps = false;
        if (variant == "add" || variant == "cat") {
            c.model.fusion = model::parse_fusion_mode(variant);
        } else {
            c.train.ablation = parse_ablation(variant);
        }
        const auto t0 = Clock::now();
        const auto result = train(c, train_, &val_);
        RunScore s;
        s.seconds = seconds_since(t0);
        const auto& last = result.log.back();
        s.miou = last.at("val").at("miou").get<double>();
        s.biou3 = last.at("val").at("biou3").get<double>();
        std::cout << "    " << variant << " seed " << seed << ": val mIoU " << fmt("%.4f", s.miou) << ", BIoU(3) "
                  << fmt("%.4f", s.biou3) << ", " << fmt("%.0f", s.seconds) << " s" << std::endl;
        return cache_.emplace(key, s).first->second;
    }

    double slowest() const {
        double t = 0.0;
        for (const auto& [k, v] : cache_) t = std::max(t, v.seconds);
        return t;
    }

    json table() const {
        json j = json::object();
        for (const auto& [k, v] : cache_) j[k] = {{"miou", v.miou}, {"biou3", v.biou3}, {"seconds", v.seconds}};
        return j;
    }

private:
    std::vector<std::uint64_t> seeds_;
    std::size_t epochs_;
    synth::Dataset train_, val_;
    std::map<std::string, RunScore> cache_;
};

Outcome ablation_trend(TrendRuns& runs) {
    int d_beats_c = 0, c_below_b = 0;
    for (auto seed : runs.seeds()) {
        const auto b = runs.get("B", seed), c = runs.get("C", seed), d = runs.get("D", seed);
        d_beats_c += d.miou > c.miou && d.biou3 > c.biou3;
        c_below_b += c.miou < b.miou;
    }
    const int n = static_cast<int>(runs.seeds().size());
    Outcome o;
    o.pass = d_beats_c * 5 >= 4 * n && c_below_b * 5 >= 3 * n && runs.slowest() <= 600.0;
    o.detail = "D > C on mIoU and BIoU(3) in " + std::to_string(d_beats_c) + "/" + std::to_string(n) +
               " seeds, C < B on mIoU in " + std::to_string(c_below_b) + "/" + std::to_string(n) +
               ", slowest run " + fmt("%.0f", runs.slowest()) + " s";
    o.data = {{"d_beats_c", d_beats_c}, {"c_below_b", c_below_b}, {"runs", runs.table()}};
    return o;
}

Outcome fusion_trend(TrendRuns& runs) {
    int afd_wins = 0, cat_wins = 0;
    for (auto seed : runs.seeds()) {
        const auto afd = runs.get("D", seed), add = runs.get("add", seed), cat = runs.get("cat", seed);
        afd_wins += afd.miou >= add.miou;
        cat_wins += afd.miou >= cat.miou;
    }
    const int n = static_cast<int>(runs.seeds().size());
    Outcome o;
    o.pass = afd_wins * 5 >= 4 * n && runs.slowest() <= 600.0;
    o.detail = "AFD >= ADD on val mIoU in " + std::to_string(afd_wins) + "/" + std::to_string(n) +
               " seeds (AFD >= CAT in " + std::to_string(cat_wins) + "/" + std::to_string(n) + ")";
    o.data = {{"afd_ge_add", afd_wins}, {"afd_ge_cat", cat_wins}, {"runs", runs.table()}};
    return o;
}

// ---- 8 ---------------------------------------------------------------------

Outcome overfit() {
    RunConfig c;
    c.train.epochs = 300;
    c.train.batch_size = 1;
    c.train.cosine_decay = false;
    c.train.hyper.lr = 3e-3;
    c.train.log_steps = false;
    const auto one = synth::generate_dataset(c.data.scene, 1, 8008);
    const auto sample = make_train_sample(one.samples[0].image, one.samples[0].labels, c.loss.radius);
    bool all = true;
    std::ostringstream detail;
    json data = json::object();
    for (auto a : {Ablation::A, Ablation::B, Ablation::C, Ablation::D}) {
        c.train.ablation = a;
        const double initial = sample_loss(model::init_params(c.model, c.train.seed), c, sample).total;
        const auto result = train(c, one, nullptr);
        const double final_loss = sample_loss(result.params, c, sample).total;
        const double ratio = final_loss / initial;
        all = all && ratio < 0.1;
        detail << (a == Ablation::A ? "" : ", ") << to_string(a) << " " << fmt("%.3f", ratio);
        data[to_string(a)] = {{"initial", initial}, {"final", final_loss}, {"ratio", ratio}};
    }
    Outcome o;
    o.pass = all;
    o.detail = "final/initial loss after 300 steps: " + detail.str();
    o.data = data;
    return o;
}

// ---- 9 ---------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        files[fs::relative(e.path(), dir).string()] = {std::istreambuf_iterator<char>(in), {}};
    }
    return files;
}

Outcome reproducible(const fs::path& work) {
    RunConfig c;
    c.data.scene.height = 32;
    c.data.scene.width = 32;
    c.data.train_count = 16;
    c.data.val_count = 8;
    c.train.epochs = 3;
    c.train.seed = 9;
    c.train.horizontal_flip = true;
    c.train.checkpoint_every = 2;
    const fs::path dir = work / "repro";
    fs::remove_all(dir);
    fs::create_directories(dir);
    save_run_config(dir / "config.json", c);
    std::ostringstream sink;
    int codes = 0;
    for (const char* name : {"a", "b"}) {
        codes += cli_main({"mseed", "train", "--config", (dir / "config.json").string(), "--out", (dir / name).string()},
                          sink, sink);
    }
    const auto a = snapshot(dir / "a"), b = snapshot(dir / "b");
    std::size_t differing = 0;
    for (const auto& [name, bytes] : a) {
        auto it = b.find(name);
        if (it == b.end() || it->second != bytes) ++differing;
    }
    differing += b.size() > a.size() ? b.size() - a.size() : 0;
    const bool has_log = a.count("train_log.jsonl") && a.count("checkpoint/manifest.json");
    Outcome o;
    o.pass = codes == 0 && differing == 0 && has_log && a.size() > 2;
    o.detail = std::to_string(a.size()) + " files per run, " + std::to_string(differing) + " differ";
    o.data = {{"files", a.size()}, {"differing", differing}, {"exit_codes", codes}};
    fs::remove_all(dir);
    return o;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::vector<int> only;
    std::size_t epochs = TrainConfig{}.epochs;
    std::size_t seed_count = 5;
    std::string json_out;
    std::string work = (fs::temp_directory_path() / "mseed_acceptance").string();
    app.add_option("--only", only, "Criteria to run (default: all)");
    app.add_option("--epochs", epochs, "Epochs per trend run (default: the training default)");
    app.add_option("--seeds", seed_count, "Seeds per trend comparison");
    app.add_option("--json", json_out, "Write the detailed results here");
    app.add_option("--work", work, "Scratch directory");
    CLI11_PARSE(app, argc, argv);

    const std::set<int> selected(only.begin(), only.end());
    auto want = [&](int id) { return selected.empty() || selected.count(id) > 0; };

    std::vector<std::uint64_t> seeds;
    for (std::uint64_t s = 1; s <= seed_count; ++s) seeds.push_back(s);
    std::unique_ptr<TrendRuns> trend;
    auto runs = [&]() -> TrendRuns& {
        if (!trend) trend = std::make_unique<TrendRuns>(seeds, epochs);
        return *trend;
    };

    const std::vector<std::pair<int, std::pair<std::string, std::function<Outcome()>>>> criteria{
        {1, {"gradient checks", gradients}},
        {2, {"boundary labels vs brute force", boundary_labels}},
        {3, {"pseudo boundary of one-hot equals label", pseudo_boundary_identity}},
        {4, {"zeroed fusion decoder reduces to sum", zero_fusion}},
        {5, {"metrics vs brute force", metrics_oracles}},
        {6, {"dual-task ablation trend", [&] { return ablation_trend(runs()); }}},
        {7, {"fusion ablation trend", [&] { return fusion_trend(runs()); }}},
        {8, {"single-sample overfit", overfit}},
        {9, {"bit-identical reruns", [&] { return reproducible(work); }}},
    };

    json report = json::object();
    int failed = 0;
    for (const auto& [id, named] : criteria) {
        if (!want(id)) continue;
        const auto& [title, fn] = named;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = seconds_since(t0);
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << "  " << title << ": " << o.detail << " ["
                  << fmt("%.1f", secs) << " s]" << std::endl;
        report[std::to_string(id)] = {{"title", title}, {"pass", o.pass}, {"detail", o.detail}, {"seconds", secs},
                                      {"data", o.data}};
    }
    if (!json_out.empty()) std::ofstream(json_out) << report.dump(2) << '\n';
    std::cout << (failed == 0 ? "all selected criteria passed" : std::to_string(failed) + " criteria failed")
              << std::endl;
    return failed == 0 ? 0 : 1;
}
