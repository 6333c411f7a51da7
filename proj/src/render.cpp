#include "scribseg/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "scribseg/error.hpp"

namespace scribseg {

std::array<std::uint8_t, 3> palette_color(std::uint8_t code) {
    switch (code) {
        case 1: return {230, 25, 75};
        case 2: return {60, 180, 75};
        case 3: return {0, 130, 200};
        case 4: return {255, 225, 25};
        case 5: return {70, 240, 240};
        case kGlobalCategory: return {240, 50, 230};
        default: return {0, 0, 0};
    }
}

bool has_palette_color(std::uint8_t code) { return (code >= 1 && code <= 5) || code == kGlobalCategory; }

namespace {

std::uint8_t quantize(double v, double lo, double hi) {
    const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(t * 255.0));
}

std::vector<std::uint8_t> grey_levels(const ImageGrid& image) {
    std::vector<std::uint8_t> out(image.size(), 0);
    if (image.size() == 0) return out;
    const auto [mn, mx] = std::minmax_element(image.data.begin(), image.data.end());
    const double lo = *mn, hi = *mx;
    for (std::size_t i = 0; i < image.size(); ++i) out[i] = hi > lo ? quantize(image.data[i], lo, hi) : 0;
    return out;
}

void write_pnm(const std::filesystem::path& path, const char* magic, int width, int height,
               const std::vector<std::uint8_t>& pixels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << magic << '\n' << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!out) throw ConfigError("failed writing " + path.string());
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Grid<double>& values, double lo, double hi) {
    if (!(hi > lo)) throw ConfigError("write_pgm: hi must exceed lo");
    std::vector<std::uint8_t> px(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) px[i] = quantize(values.data[i], lo, hi);
    write_pnm(path, "P5", values.width, values.height, px);
}

void render_overlay(const std::filesystem::path& path, const ImageGrid& image, const Grid<std::uint8_t>& labels) {
    if (!labels.same_shape(image.height, image.width)) throw ConfigError("render_overlay: label and image dims differ");
    const auto grey = grey_levels(image);
    std::vector<std::uint8_t> px(image.size() * 3);
    for (std::size_t i = 0; i < image.size(); ++i) {
        const auto code = labels.data[i];
        const auto rgb = has_palette_color(code) ? palette_color(code) : std::array<std::uint8_t, 3>{grey[i], grey[i], grey[i]};
        std::copy(rgb.begin(), rgb.end(), px.begin() + static_cast<std::ptrdiff_t>(3 * i));
    }
    write_pnm(path, "P6", image.width, image.height, px);
}

void render_overlay(const std::filesystem::path& path, const ImageGrid& image, const ContinuousPseudoLabel& cpl) {
    if (!cpl.same_shape(image.height, image.width)) throw ConfigError("render_overlay: map and image dims differ");
    write_pgm(path, cpl, 0.0, 1.0);
}

void render_overlay(const std::filesystem::path& path, const ImageGrid& image, const PatchMask& mask) {
    apply_mask(image, mask);  // validates the patch layout
    auto grey = grey_levels(image);
    for (int r = 0; r < image.height; ++r)
        for (int c = 0; c < image.width; ++c)
            if (mask.masked[static_cast<std::size_t>((r / mask.patch) * mask.cols + c / mask.patch)])
                grey[static_cast<std::size_t>(r) * image.width + c] = 0;
    write_pnm(path, "P5", image.width, image.height, grey);
}

PnmImage read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::string magic;
    int maxval = 0;
    PnmImage img;
    in >> magic >> img.width >> img.height >> maxval;
    if (!in || (magic != "P5" && magic != "P6")) throw DataError(path.string() + " is not a binary PGM/PPM");
    if (img.width <= 0 || img.height <= 0 || maxval != 255) throw DataError(path.string() + " has an unsupported header");
    in.get();  // single whitespace before the raster
    img.channels = magic == "P5" ? 1 : 3;
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
        throw DataError(path.string() + " raster is truncated");
    if (in.peek() != std::char_traits<char>::eof()) throw DataError(path.string() + " has trailing bytes");
    return img;
}

}  // namespace scribseg
