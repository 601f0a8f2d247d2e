#include "mseed/image_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "mseed/errors.hpp"

namespace mseed::io {
namespace {

static_assert(std::endian::native == std::endian::little, "MST1 I/O assumes a little-endian host");

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for reading: " + path.string());
    return is;
}

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t read_u32(std::istream& is, const std::filesystem::path& path) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw std::runtime_error("truncated MST1 header: " + path.string());
    return v;
}

// Reads a netpbm header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& is) {
    std::string tok;
    int ch;
    while ((ch = is.get()) != EOF) {
        if (ch == '#') {
            while ((ch = is.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

struct NetpbmHeader {
    std::size_t width = 0, height = 0;
};

NetpbmHeader read_header(std::istream& is, const char* magic, const std::filesystem::path& path) {
    if (next_token(is) != magic) throw std::runtime_error(path.string() + ": expected " + magic + " netpbm file");
    NetpbmHeader h;
    try {
        h.width = std::stoul(next_token(is));
        h.height = std::stoul(next_token(is));
        if (std::stoul(next_token(is)) != 255) throw std::runtime_error("maxval");
    } catch (const std::exception&) {
        throw std::runtime_error(path.string() + ": malformed netpbm header (only maxval 255 is supported)");
    }
    if (h.width == 0 || h.height == 0) throw std::runtime_error(path.string() + ": zero-sized image");
    return h;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

} // namespace

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
    auto os = open_out(path);
    os.write("MST1", 4);
    write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) write_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.storage().data()), static_cast<std::streamsize>(t.size() * 8));
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
    auto is = open_in(path);
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), 4) || std::memcmp(magic.data(), "MST1", 4) != 0) {
        throw std::runtime_error(path.string() + ": not an MST1 tensor file");
    }
    const std::uint32_t rank = read_u32(is, path);
    if (rank == 0 || rank > 8) throw std::runtime_error(path.string() + ": unsupported tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) {
        d = read_u32(is, path);
        if (d == 0) throw std::runtime_error(path.string() + ": zero tensor dimension");
    }
    std::vector<double> data(shape_numel(shape));
    if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * 8))) {
        throw std::runtime_error(path.string() + ": truncated MST1 payload");
    }
    return Tensor(std::move(shape), std::move(data));
}

void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels) {
    if (labels.num_classes() > 256) throw ContractError("write_label_pgm: more than 256 classes");
    auto os = open_out(path);
    os << "P5\n" << labels.width() << ' ' << labels.height() << "\n255\n";
    std::vector<char> bytes(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) bytes[i] = static_cast<char>(labels[i]);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

LabelMap read_label_pgm(const std::filesystem::path& path, std::size_t num_classes) {
    auto is = open_in(path);
    const auto h = read_header(is, "P5", path);
    std::vector<unsigned char> bytes(h.width * h.height);
    if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
        throw std::runtime_error(path.string() + ": truncated PGM payload");
    }
    std::vector<int> labels(bytes.begin(), bytes.end());
    const int max_id = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
    if (num_classes == 0) num_classes = static_cast<std::size_t>(max_id) + 1;
    if (static_cast<std::size_t>(max_id) >= num_classes) {
        throw ContractError(path.string() + ": label id " + std::to_string(max_id) + " >= num_classes " +
                            std::to_string(num_classes));
    }
    return LabelMap(h.height, h.width, num_classes, std::move(labels));
}

void write_mask_pgm(const std::filesystem::path& path, const Tensor& mask) {
    require_rank(mask, 2, "write_mask_pgm");
    auto os = open_out(path);
    os << "P5\n" << mask.dim(1) << ' ' << mask.dim(0) << "\n255\n";
    std::vector<char> bytes(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) bytes[i] = static_cast<char>(mask[i] >= 0.5 ? 255 : 0);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
    require_rank(image, 3, "write_ppm");
    if (image.dim(0) != 3) throw ContractError("write_ppm: expected 3 channels");
    const std::size_t h = image.dim(1), w = image.dim(2);
    auto os = open_out(path);
    os << "P6\n" << w << ' ' << h << "\n255\n";
    std::vector<char> bytes(3 * h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) bytes[(y * w + x) * 3 + c] = static_cast<char>(to_byte(image.at(c, y, x)));
        }
    }
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Tensor read_ppm(const std::filesystem::path& path) {
    auto is = open_in(path);
    const auto h = read_header(is, "P6", path);
    std::vector<unsigned char> bytes(3 * h.width * h.height);
    if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
        throw std::runtime_error(path.string() + ": truncated PPM payload");
    }
    Tensor image({3, h.height, h.width});
    for (std::size_t y = 0; y < h.height; ++y) {
        for (std::size_t x = 0; x < h.width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) image.at(c, y, x) = bytes[(y * h.width + x) * 3 + c] / 255.0;
        }
    }
    return image;
}

} // namespace mseed::io
