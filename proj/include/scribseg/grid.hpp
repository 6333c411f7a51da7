#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scribseg/error.hpp"

namespace scribseg {

// Label codes shared by masks, scribbles and every file on disk.
inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kGlobalCategory = 254;
inline constexpr std::uint8_t kUnlabeled = 255;

/// Row-major 2D grid. Concrete label/image types derive from this so they
/// cannot be passed for one another by accident.
template <typename T>
struct Grid {
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int h, int w, T fill = T{}) : height(h), width(w), data(checked_size(h, w), fill) {}

    std::size_t size() const { return data.size(); }
    bool same_shape(int h, int w) const { return height == h && width == w; }
    template <typename U>
    bool same_shape(const Grid<U>& o) const { return height == o.height && width == o.width; }

    T& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
    const T& at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
    bool inside(int r, int c) const { return r >= 0 && c >= 0 && r < height && c < width; }

    std::span<T> row(int r) { return {data.data() + static_cast<std::size_t>(r) * width, static_cast<std::size_t>(width)}; }
    std::span<const T> row(int r) const {
        return {data.data() + static_cast<std::size_t>(r) * width, static_cast<std::size_t>(width)};
    }

    bool operator==(const Grid&) const = default;

private:
    static std::size_t checked_size(int h, int w) {
        if (h < 0 || w < 0) throw DataError("grid dimensions must be non-negative");
        return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
};

using BinaryGrid = Grid<std::uint8_t>;

/// Single-channel image; at least 8x8 and finite everywhere.
struct ImageGrid : Grid<float> {
    ImageGrid() = default;
    ImageGrid(int h, int w, float fill = 0.0f);
    explicit ImageGrid(Grid<float> g);
    void validate() const;
};

/// Sparse labels: foreground codes 1..K, kBackground, kGlobalCategory or kUnlabeled.
struct ScribbleAnnotation : Grid<std::uint8_t> {
    ScribbleAnnotation() = default;
    ScribbleAnnotation(int h, int w) : Grid(h, w, kUnlabeled) {}
    explicit ScribbleAnnotation(Grid<std::uint8_t> g) : Grid(std::move(g)) {}
    std::size_t count(std::uint8_t code) const;
};

/// Dense labels: every pixel is kBackground or a foreground class.
struct DenseMask : Grid<std::uint8_t> {
    DenseMask() = default;
    DenseMask(int h, int w, std::uint8_t fill = kBackground) : Grid(h, w, fill) {}
    explicit DenseMask(Grid<std::uint8_t> g) : Grid(std::move(g)) {}
    std::size_t count(std::uint8_t code) const;
};

/// Per-pixel class probabilities, channel-major: data[(c*H + r)*W + col].
struct ProbMap {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    ProbMap() = default;
    ProbMap(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    double& at(int c, int r, int col) { return data[(static_cast<std::size_t>(c) * height + r) * width + col]; }
    double at(int c, int r, int col) const { return data[(static_cast<std::size_t>(c) * height + r) * width + col]; }
    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }

    /// Throws DataError unless entries are in [0,1] and every pixel sums to 1 within tol.
    void validate(double tol = 1e-5) const;
};

struct ClassConfig {
    std::vector<std::string> foreground_classes;  // code i+1 <-> foreground_classes[i]
    bool has_background_scribble = false;

    int foreground_count() const { return static_cast<int>(foreground_classes.size()); }
    /// Network output channels: background + K foreground classes.
    int output_channels() const { return foreground_count() + 1; }
    std::vector<std::uint8_t> foreground_codes() const;
    void validate() const;

    static ClassConfig cardiac();   // RV=1, MYO=2, LV=3
    static ClassConfig prostate();  // PZ=1, CG=2
};

ProbMap one_hot(const DenseMask& mask, int out_channels);

/// Index of the largest channel per pixel; ties go to the lowest index.
DenseMask argmax_classes(const ProbMap& p);

/// 2|A∩B| / (|A|+|B|) for the pixels labelled class_id; 1 when both are empty.
double dice_score(const DenseMask& pred, const DenseMask& gt, std::uint8_t class_id);

}  // namespace scribseg
