#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mseed/label_map.hpp"
#include "mseed/tensor.hpp"

namespace mseed::synth {

enum class ShapeKind { rectangle, ellipse, triangle };

std::string to_string(ShapeKind kind);
ShapeKind parse_shape_kind(const std::string& text);

using Color = std::array<double, 3>;

/// Scene description. Class 0 is the background; shapes take classes in [1, N).
struct SceneSpec {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t num_classes = 4;
    std::size_t min_shapes = 3;
    std::size_t max_shapes = 6;
    std::vector<ShapeKind> kinds{ShapeKind::rectangle, ShapeKind::ellipse, ShapeKind::triangle};
    /// One color per class. Empty selects the built-in palette.
    std::vector<Color> colors;
    double noise_sigma = 0.05;
    double gradient_amplitude = 0.2;

    /// Throws ConfigError on an unusable spec.
    void validate() const;
    /// Colors actually used (explicit or built-in).
    std::vector<Color> palette() const;
};

nlohmann::json to_json(const SceneSpec& spec);
/// Missing keys keep their defaults; unknown keys throw ConfigError naming
/// `where`.
SceneSpec scene_spec_from_json(const nlohmann::json& j, const std::string& where = "data.scene");

struct Sample {
    Tensor image; // 3 x H x W in [0, 1]
    LabelMap labels;
};

/// Fully determined by (spec, seed).
Sample generate_sample(const SceneSpec& spec, std::uint64_t seed);

/// Image of `labels` without noise: base color plus the illumination
/// gradient drawn for `seed`.
Tensor clean_image(const SceneSpec& spec, const LabelMap& labels, std::uint64_t seed);

struct Dataset {
    std::size_t num_classes = 0;
    std::vector<Sample> samples;
    std::size_t size() const noexcept { return samples.size(); }
};

/// Sample i uses seed + i.
Dataset generate_dataset(const SceneSpec& spec, std::size_t count, std::uint64_t seed);

/// Directory layout: images/NNNNN.mst (MST1), labels/NNNNN.pgm and
/// manifest.json. `manifest` is stored verbatim under "source".
void save_dataset(const std::filesystem::path& dir, const Dataset& data, const nlohmann::json& source);
void save_generated_dataset(const std::filesystem::path& dir, const SceneSpec& spec, std::size_t count,
                            std::uint64_t seed);
Dataset load_dataset(const std::filesystem::path& dir);

} // namespace mseed::synth
