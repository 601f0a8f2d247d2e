#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mseed/errors.hpp"
#include "mseed/synth_data.hpp"

using namespace mseed;
using namespace mseed::synth;

namespace {

std::string content_key(const Sample& s) {
    std::ostringstream os;
    os.precision(17);
    for (double v : s.image.data()) os << v << ',';
    for (int l : s.labels.labels()) os << l;
    return os.str();
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST(Synth, SameSeedSameSample) {
    const SceneSpec spec;
    const auto a = generate_sample(spec, 17), b = generate_sample(spec, 17), c = generate_sample(spec, 18);
    EXPECT_EQ(a.image, b.image);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_NE(content_key(a), content_key(c));
}

TEST(Synth, EmptySceneIsBackground) {
    SceneSpec spec;
    spec.min_shapes = 0;
    spec.max_shapes = 0;
    spec.noise_sigma = 0.0;
    const auto s = generate_sample(spec, 3);
    for (int l : s.labels.labels()) EXPECT_EQ(l, 0);
    EXPECT_EQ(s.image, clean_image(spec, s.labels, 3));
}

TEST(Synth, ImageFollowsLabelsPlusNoise) {
    const SceneSpec spec;
    const auto s = generate_sample(spec, 5);
    const Tensor clean = clean_image(spec, s.labels, 5);
    double sq = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        EXPECT_GE(s.image[i], 0.0);
        EXPECT_LE(s.image[i], 1.0);
        sq += (s.image[i] - clean[i]) * (s.image[i] - clean[i]);
    }
    EXPECT_LT(std::sqrt(sq / static_cast<double>(clean.size())), 2.0 * spec.noise_sigma);
}

TEST(Synth, ClassCoverage) {
    const SceneSpec spec;
    std::vector<int> seen(spec.num_classes, 0);
    double background = 0.0;
    const int count = 1000;
    for (int i = 0; i < count; ++i) {
        const auto s = generate_sample(spec, 5000 + static_cast<std::uint64_t>(i));
        std::vector<bool> here(spec.num_classes, false);
        std::size_t bg = 0;
        for (int l : s.labels.labels()) {
            here[static_cast<std::size_t>(l)] = true;
            bg += l == 0;
        }
        for (std::size_t k = 0; k < spec.num_classes; ++k) seen[k] += here[k];
        background += static_cast<double>(bg) / static_cast<double>(s.labels.size());
    }
    for (std::size_t k = 0; k < spec.num_classes; ++k) EXPECT_GE(seen[k], 950) << "class " << k;
    background /= count;
    EXPECT_GT(background, 0.2);
    EXPECT_LT(background, 0.9);
}

TEST(Synth, DatasetSeedsAndDisjointStreams) {
    const SceneSpec spec;
    const auto one = generate_dataset(spec, 1, 40);
    const auto direct = generate_sample(spec, 40);
    EXPECT_EQ(one.samples[0].image, direct.image);
    EXPECT_EQ(one.samples[0].labels, direct.labels);

    std::set<std::string> keys;
    for (const auto& s : generate_dataset(spec, 30, 100).samples) keys.insert(content_key(s));
    for (const auto& s : generate_dataset(spec, 30, 130).samples) keys.insert(content_key(s));
    EXPECT_EQ(keys.size(), 60u);
    EXPECT_THROW(generate_dataset(spec, 0, 1), ConfigError);
}

TEST(Synth, SpecValidation) {
    SceneSpec spec;
    spec.num_classes = 1;
    EXPECT_THROW(spec.validate(), ConfigError);
    spec = SceneSpec{};
    spec.min_shapes = 5;
    spec.max_shapes = 2;
    EXPECT_THROW(spec.validate(), ConfigError);
    spec = SceneSpec{};
    spec.num_classes = 3;
    spec.colors = {{0, 0, 0}, {0.05, 0, 0}, {1, 1, 1}};
    EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(Synth, SpecJsonRoundTripAndUnknownKeys) {
    SceneSpec spec;
    spec.height = 32;
    spec.kinds = {ShapeKind::ellipse};
    spec.noise_sigma = 0.01;
    const auto back = scene_spec_from_json(to_json(spec));
    EXPECT_EQ(to_json(back), to_json(spec));
    EXPECT_THROW(scene_spec_from_json(nlohmann::json{{"hieght", 3}}), ConfigError);
}

TEST(Synth, SaveLoadAndRegenerateByteIdentical) {
    const auto root = std::filesystem::temp_directory_path() / "mseed_synth_test";
    std::filesystem::remove_all(root);
    SceneSpec spec;
    spec.height = 16;
    spec.width = 16;
    save_generated_dataset(root / "a", spec, 3, 77);
    const auto loaded = load_dataset(root / "a");
    const auto fresh = generate_dataset(spec, 3, 77);
    ASSERT_EQ(loaded.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(loaded.samples[i].image, fresh.samples[i].image);
        EXPECT_EQ(loaded.samples[i].labels, fresh.samples[i].labels);
    }
    const auto manifest = nlohmann::json::parse(read_file(root / "a" / "manifest.json"));
    const auto& src = manifest.at("source");
    save_generated_dataset(root / "b", scene_spec_from_json(src.at("spec")), src.at("seeds").size(),
                           src.at("seed").get<std::uint64_t>());
    for (const auto& entry : std::filesystem::recursive_directory_iterator(root / "a")) {
        if (!entry.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(entry.path(), root / "a");
        EXPECT_EQ(read_file(entry.path()), read_file(root / "b" / rel)) << rel;
    }
    std::filesystem::remove_all(root);
}
