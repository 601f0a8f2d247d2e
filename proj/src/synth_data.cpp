#include "mseed/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "mseed/errors.hpp"
#include "mseed/image_io.hpp"

namespace mseed::synth {
namespace {

const std::vector<Color> kPalette{
    {0.45, 0.45, 0.45}, {0.85, 0.25, 0.2}, {0.2, 0.7, 0.3},  {0.25, 0.35, 0.9},
    {0.9, 0.8, 0.2},    {0.75, 0.3, 0.8},  {0.2, 0.8, 0.85}, {0.95, 0.6, 0.25},
};

constexpr int kMaxShapeRetries = 64;

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

struct Raster {
    std::vector<std::uint8_t> cover;
    std::size_t count = 0;
};

template <typename Inside>
Raster rasterize(std::size_t h, std::size_t w, Inside inside) {
    Raster r;
    r.cover.assign(h * w, 0);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            if (inside(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) {
                r.cover[y * w + x] = 1;
                ++r.count;
            }
        }
    }
    return r;
}

Raster draw_shape(ShapeKind kind, std::size_t h, std::size_t w, Rng& rng) {
    const double H = static_cast<double>(h), W = static_cast<double>(w);
    switch (kind) {
    case ShapeKind::rectangle: {
        const double rw = uniform(rng, 0.15, 0.45) * W, rh = uniform(rng, 0.15, 0.45) * H;
        const double x0 = uniform(rng, -0.1 * W, W - 0.5 * rw), y0 = uniform(rng, -0.1 * H, H - 0.5 * rh);
        return rasterize(h, w, [=](double x, double y) { return x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh; });
    }
    case ShapeKind::ellipse: {
        const double rx = uniform(rng, 0.08, 0.25) * W, ry = uniform(rng, 0.08, 0.25) * H;
        const double cx = uniform(rng, 0.0, W), cy = uniform(rng, 0.0, H);
        return rasterize(h, w, [=](double x, double y) {
            const double u = (x - cx) / rx, v = (y - cy) / ry;
            return u * u + v * v <= 1.0;
        });
    }
    case ShapeKind::triangle: {
        const double radius = uniform(rng, 0.12, 0.3) * std::min(H, W);
        const double cx = uniform(rng, 0.0, W), cy = uniform(rng, 0.0, H);
        std::array<double, 3> px{}, py{};
        for (int i = 0; i < 3; ++i) {
            const double a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
            px[i] = cx + radius * std::cos(a);
            py[i] = cy + radius * std::sin(a);
        }
        return rasterize(h, w, [=](double x, double y) {
            auto edge = [&](int i, int j) { return (px[j] - px[i]) * (y - py[i]) - (py[j] - py[i]) * (x - px[i]); };
            const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
            return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
        });
    }
    }
    throw ContractError("unknown shape kind");
}

// Illumination gradient direction; always the first draw from the sample
// stream so clean_image can recover it.
double gradient_angle(Rng& rng) { return uniform(rng, 0.0, 2.0 * std::numbers::pi); }

void paint(const SceneSpec& spec, const LabelMap& labels, double angle, Tensor& image) {
    const auto colors = spec.palette();
    const std::size_t h = spec.height, w = spec.width, hw = h * w;
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w) - 0.5;
            const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(h) - 0.5;
            const double shade = spec.gradient_amplitude * (u * ca + v * sa);
            const auto& c = colors[static_cast<std::size_t>(labels(y, x))];
            for (std::size_t ch = 0; ch < 3; ++ch) image[ch * hw + y * w + x] = c[ch] + shade;
        }
    }
}

std::string index_name(std::size_t i, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05zu%s", i, ext);
    return buf;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

} // namespace

std::string to_string(ShapeKind kind) {
    switch (kind) {
    case ShapeKind::rectangle: return "rectangle";
    case ShapeKind::ellipse: return "ellipse";
    case ShapeKind::triangle: return "triangle";
    }
    return "?";
}

ShapeKind parse_shape_kind(const std::string& text) {
    if (text == "rectangle") return ShapeKind::rectangle;
    if (text == "ellipse") return ShapeKind::ellipse;
    if (text == "triangle") return ShapeKind::triangle;
    throw ConfigError("unknown shape kind '" + text + "'");
}

void SceneSpec::validate() const {
    if (height < 4 || width < 4) throw ConfigError("scene: height and width must be at least 4");
    if (num_classes < 2) throw ConfigError("scene: num_classes must be at least 2");
    if (num_classes > 255) throw ConfigError("scene: num_classes must fit in 8-bit labels");
    if (min_shapes > max_shapes) throw ConfigError("scene: min_shapes exceeds max_shapes");
    if (max_shapes > 0 && kinds.empty()) throw ConfigError("scene: kinds must not be empty");
    if (!(noise_sigma >= 0.0) || !(gradient_amplitude >= 0.0)) {
        throw ConfigError("scene: noise_sigma and gradient_amplitude must be nonnegative");
    }
    if (!colors.empty() && colors.size() != num_classes) {
        throw ConfigError("scene: colors must list one color per class");
    }
    if (colors.empty() && num_classes > kPalette.size()) {
        throw ConfigError("scene: built-in palette has " + std::to_string(kPalette.size()) +
                          " colors; supply scene.colors");
    }
    const auto pal = palette();
    for (std::size_t i = 0; i < pal.size(); ++i) {
        for (double c : pal[i]) {
            if (!(c >= 0.0 && c <= 1.0)) throw ConfigError("scene: color components must lie in [0, 1]");
        }
        for (std::size_t j = 0; j < i; ++j) {
            double d2 = 0.0;
            for (int k = 0; k < 3; ++k) d2 += (pal[i][k] - pal[j][k]) * (pal[i][k] - pal[j][k]);
            if (std::sqrt(d2) < 0.2) {
                throw ConfigError("scene: colors of classes " + std::to_string(j) + " and " + std::to_string(i) +
                                  " are closer than 0.2");
            }
        }
    }
}

std::vector<Color> SceneSpec::palette() const {
    if (!colors.empty()) return colors;
    return {kPalette.begin(), kPalette.begin() + static_cast<long>(std::min(num_classes, kPalette.size()))};
}

nlohmann::json to_json(const SceneSpec& spec) {
    nlohmann::json kinds = nlohmann::json::array();
    for (auto k : spec.kinds) kinds.push_back(to_string(k));
    nlohmann::json colors = nlohmann::json::array();
    for (const auto& c : spec.palette()) colors.push_back({c[0], c[1], c[2]});
    return {{"height", spec.height},
            {"width", spec.width},
            {"num_classes", spec.num_classes},
            {"min_shapes", spec.min_shapes},
            {"max_shapes", spec.max_shapes},
            {"kinds", kinds},
            {"colors", colors},
            {"noise_sigma", spec.noise_sigma},
            {"gradient_amplitude", spec.gradient_amplitude}};
}

SceneSpec scene_spec_from_json(const nlohmann::json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    SceneSpec s;
    try {
        for (const auto& [key, val] : j.items()) {
            if (key == "height") s.height = val.get<std::size_t>();
            else if (key == "width") s.width = val.get<std::size_t>();
            else if (key == "num_classes") s.num_classes = val.get<std::size_t>();
            else if (key == "min_shapes") s.min_shapes = val.get<std::size_t>();
            else if (key == "max_shapes") s.max_shapes = val.get<std::size_t>();
            else if (key == "noise_sigma") s.noise_sigma = val.get<double>();
            else if (key == "gradient_amplitude") s.gradient_amplitude = val.get<double>();
            else if (key == "kinds") {
                s.kinds.clear();
                for (const auto& k : val) s.kinds.push_back(parse_shape_kind(k.get<std::string>()));
            } else if (key == "colors") {
                s.colors.clear();
                for (const auto& c : val) {
                    if (!c.is_array() || c.size() != 3) throw ConfigError(where + ".colors: each color needs 3 values");
                    s.colors.push_back({c[0].get<double>(), c[1].get<double>(), c[2].get<double>()});
                }
            } else {
                throw ConfigError("unknown key '" + where + "." + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(where + ": " + e.what());
    }
    s.validate();
    return s;
}

Sample generate_sample(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    const double angle = gradient_angle(rng);
    const std::size_t h = spec.height, w = spec.width, hw = h * w;
    const auto n_fg = static_cast<int>(spec.num_classes - 1);

    LabelMap labels(h, w, spec.num_classes, 0);
    const std::size_t shapes = uniform_index(rng, spec.min_shapes, spec.max_shapes);
    // The first N-1 shapes take every foreground class once, in random order.
    std::vector<int> order(static_cast<std::size_t>(n_fg));
    for (int k = 0; k < n_fg; ++k) order[static_cast<std::size_t>(k)] = k + 1;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> cls(hw, 0);
    for (std::size_t i = 0; i < shapes; ++i) {
        const int label = i < order.size() ? order[i] : static_cast<int>(uniform_index(rng, 1, spec.num_classes - 1));
        const ShapeKind kind = spec.kinds[uniform_index(rng, 0, spec.kinds.size() - 1)];
        Raster r;
        int tries = 0;
        do {
            if (tries++ == kMaxShapeRetries) {
                throw ConfigError("scene: could not draw a non-degenerate " + to_string(kind) + " after " +
                                  std::to_string(kMaxShapeRetries) + " attempts");
            }
            r = draw_shape(kind, h, w, rng);
        } while (r.count == 0);
        for (std::size_t p = 0; p < hw; ++p) {
            if (r.cover[p]) cls[p] = label;
        }
    }
    labels = LabelMap(h, w, spec.num_classes, std::move(cls));

    Tensor image({3, h, w});
    paint(spec, labels, angle, image);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t i = 0; i < image.size(); ++i) {
        const double n = spec.noise_sigma > 0.0 ? spec.noise_sigma * noise(rng) : 0.0;
        image[i] = std::clamp(image[i] + n, 0.0, 1.0);
    }
    return {std::move(image), std::move(labels)};
}

Tensor clean_image(const SceneSpec& spec, const LabelMap& labels, std::uint64_t seed) {
    spec.validate();
    if (labels.height() != spec.height || labels.width() != spec.width) {
        throw ContractError("clean_image: label map size does not match the scene");
    }
    Rng rng(seed);
    const double angle = gradient_angle(rng);
    Tensor image({3, spec.height, spec.width});
    paint(spec, labels, angle, image);
    return image;
}

Dataset generate_dataset(const SceneSpec& spec, std::size_t count, std::uint64_t seed) {
    if (count == 0) throw ConfigError("dataset count must be at least 1");
    Dataset d;
    d.num_classes = spec.num_classes;
    d.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) d.samples.push_back(generate_sample(spec, seed + i));
    return d;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& data, const nlohmann::json& source) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "labels");
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto img = fs::path("images") / index_name(i, ".mst");
        const auto lab = fs::path("labels") / index_name(i, ".pgm");
        io::write_tensor(dir / img, data.samples[i].image);
        io::write_label_pgm(dir / lab, data.samples[i].labels);
        files.push_back({{"image", img.generic_string()}, {"labels", lab.generic_string()}});
    }
    nlohmann::json manifest{{"format", "mseed-dataset-1"},
                            {"num_classes", data.num_classes},
                            {"count", data.size()},
                            {"files", files},
                            {"source", source}};
    write_json(dir / "manifest.json", manifest);
}

void save_generated_dataset(const std::filesystem::path& dir, const SceneSpec& spec, std::size_t count,
                            std::uint64_t seed) {
    const Dataset d = generate_dataset(spec, count, seed);
    nlohmann::json seeds = nlohmann::json::array();
    for (std::size_t i = 0; i < count; ++i) seeds.push_back(seed + i);
    save_dataset(dir, d, {{"generator", "synthetic-scenes"}, {"spec", to_json(spec)}, {"seed", seed}, {"seeds", seeds}});
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw ConfigError("dataset manifest not found: " + manifest_path.string());
    nlohmann::json m;
    try {
        in >> m;
        Dataset d;
        d.num_classes = m.at("num_classes").get<std::size_t>();
        for (const auto& f : m.at("files")) {
            Sample s;
            s.image = io::read_tensor(dir / f.at("image").get<std::string>());
            s.labels = io::read_label_pgm(dir / f.at("labels").get<std::string>(), d.num_classes);
            if (s.image.rank() != 3 || s.image.dim(0) != 3 || s.image.dim(1) != s.labels.height() ||
                s.image.dim(2) != s.labels.width()) {
                throw ContractError("dataset " + dir.string() + ": image " + f.at("image").get<std::string>() +
                                    " has shape " + shape_to_string(s.image.shape()) +
                                    " which does not match its label map");
            }
            d.samples.push_back(std::move(s));
        }
        if (d.samples.empty()) throw ConfigError("dataset " + dir.string() + " is empty");
        return d;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
}

} // namespace mseed::synth
