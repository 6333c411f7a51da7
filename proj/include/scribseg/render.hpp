#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "scribseg/cpl.hpp"
#include "scribseg/grid.hpp"
#include "scribseg/mcm.hpp"

namespace scribseg {

/// Overlay colours by label code. Codes without an entry (background 0 and
/// UNLABELED 255) leave the grey image visible.
///   1 red, 2 green, 3 blue, 4 yellow, 5 cyan, GC (254) magenta
std::array<std::uint8_t, 3> palette_color(std::uint8_t code);
bool has_palette_color(std::uint8_t code);

/// P5 PGM, linear map of [lo, hi] onto 0..255 with clamping.
void write_pgm(const std::filesystem::path& path, const Grid<double>& values, double lo = 0.0, double hi = 1.0);

/// P6 PPM: min-max normalized grey image with labelled pixels painted in the
/// palette colour.
void render_overlay(const std::filesystem::path& path, const ImageGrid& image, const Grid<std::uint8_t>& labels);
/// P5 PGM of the pseudo label itself (1 maps to 255).
void render_overlay(const std::filesystem::path& path, const ImageGrid& image, const ContinuousPseudoLabel& cpl);
/// P5 PGM of the min-max normalized image with masked patches black.
void render_overlay(const std::filesystem::path& path, const ImageGrid& image, const PatchMask& mask);

struct PnmImage {
    int channels = 1;  // 1 for P5, 3 for P6
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
};

/// Reads binary P5/P6 with maxval 255. Throws DataError on malformed input.
PnmImage read_pnm(const std::filesystem::path& path);

}  // namespace scribseg
