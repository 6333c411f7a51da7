#include "scribseg/grid.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <mutex>
#include <set>

namespace scribseg {

namespace {

void default_sink(const std::string& message) {
    static std::mutex mu;
    static std::set<std::string> seen;
    std::lock_guard lock(mu);
    if (seen.insert(message).second) std::cerr << "warning: " << message << '\n';
}

void (*g_sink)(const std::string&) = default_sink;

}  // namespace

void warn(const std::string& message) { g_sink(message); }

void set_warning_sink(void (*sink)(const std::string&)) { g_sink = sink ? sink : default_sink; }

ImageGrid::ImageGrid(int h, int w, float fill) : Grid(h, w, fill) { validate(); }

ImageGrid::ImageGrid(Grid<float> g) : Grid(std::move(g)) { validate(); }

void ImageGrid::validate() const {
    if (height < 8 || width < 8)
        throw DataError("image must be at least 8x8, got " + std::to_string(height) + "x" + std::to_string(width));
    for (float v : data)
        if (!std::isfinite(v)) throw DataError("image contains a non-finite value");
}

std::size_t ScribbleAnnotation::count(std::uint8_t code) const {
    return static_cast<std::size_t>(std::count(data.begin(), data.end(), code));
}

std::size_t DenseMask::count(std::uint8_t code) const {
    return static_cast<std::size_t>(std::count(data.begin(), data.end(), code));
}

void ProbMap::validate(double tol) const {
    const std::size_t n = plane();
    for (double v : data)
        if (!(v >= 0.0 && v <= 1.0)) throw DataError("probability outside [0,1]");
    for (std::size_t p = 0; p < n; ++p) {
        double s = 0.0;
        for (int c = 0; c < channels; ++c) s += data[c * n + p];
        if (std::abs(s - 1.0) > tol) throw DataError("pixel probabilities do not sum to 1");
    }
}

std::vector<std::uint8_t> ClassConfig::foreground_codes() const {
    std::vector<std::uint8_t> codes;
    for (int i = 0; i < foreground_count(); ++i) codes.push_back(static_cast<std::uint8_t>(i + 1));
    return codes;
}

void ClassConfig::validate() const {
    if (foreground_classes.empty()) throw ConfigError("at least one foreground class is required");
    if (foreground_count() >= kGlobalCategory) throw ConfigError("too many foreground classes");
}

ClassConfig ClassConfig::cardiac() { return {{"RV", "MYO", "LV"}, false}; }

ClassConfig ClassConfig::prostate() { return {{"PZ", "CG"}, false}; }

ProbMap one_hot(const DenseMask& mask, int out_channels) {
    if (out_channels < 1) throw DataError("one_hot needs at least one channel");
    ProbMap out(out_channels, mask.height, mask.width);
    const std::size_t n = out.plane();
    for (std::size_t p = 0; p < n; ++p) {
        const int label = mask.data[p];
        if (label >= out_channels)
            throw DataError("label " + std::to_string(label) + " out of range for " + std::to_string(out_channels) +
                            " channels");
        out.data[label * n + p] = 1.0;
    }
    return out;
}

DenseMask argmax_classes(const ProbMap& p) {
    DenseMask out(p.height, p.width);
    const std::size_t n = p.plane();
    for (std::size_t px = 0; px < n; ++px) {
        int best = 0;
        double best_v = p.data[px];
        if (std::isnan(best_v)) throw NumericalError("NaN in probability map");
        for (int c = 1; c < p.channels; ++c) {
            const double v = p.data[c * n + px];
            if (std::isnan(v)) throw NumericalError("NaN in probability map");
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        out.data[px] = static_cast<std::uint8_t>(best);
    }
    return out;
}

double dice_score(const DenseMask& pred, const DenseMask& gt, std::uint8_t class_id) {
    if (!pred.same_shape(gt)) throw DataError("dice_score: mask dimensions differ");
    std::size_t a = 0, b = 0, both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool in_a = pred.data[i] == class_id;
        const bool in_b = gt.data[i] == class_id;
        a += in_a;
        b += in_b;
        both += in_a && in_b;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

}  // namespace scribseg
