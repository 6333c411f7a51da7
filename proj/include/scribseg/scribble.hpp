#pragma once

#include <array>
#include <cstdint>
#include <cstdlib>
#include <vector>

#include "scribseg/grid.hpp"

namespace scribseg {

struct Pixel {
    int r = 0;
    int c = 0;
    bool operator==(const Pixel&) const = default;
};

inline bool adjacent8(const Pixel& a, const Pixel& b) {
    return !(a == b) && std::abs(a.r - b.r) <= 1 && std::abs(a.c - b.c) <= 1;
}

/// An 8-connected set of same-class pixels. `pixels` is ordered so that every
/// prefix is itself 8-connected: walk order from the endpoint with the smaller
/// raster index when the set is a simple path, breadth-first order from the
/// anchor otherwise.
struct Component {
    std::uint8_t code = 0;
    Pixel anchor;  // topmost, then leftmost
    bool path_like = false;
    std::vector<Pixel> pixels;
};

/// Components of `code` ordered by anchor in raster order.
std::vector<Component> connected_components(const Grid<std::uint8_t>& labels, std::uint8_t code);

/// Number of 8-connected components of the pixels where mask != 0.
int count_components(const BinaryGrid& mask);

/// Removes round(ratio * count) pixels of each listed class: whole components
/// in anchor order while the running total stays within the target, then the
/// tail of the next component's pixel order. An empty `codes` list means every
/// foreground code present (GC and background are never included implicitly).
ScribbleAnnotation shrink_scribble(const ScribbleAnnotation& scr, double ratio, const std::vector<std::uint8_t>& codes = {});

struct ScribbleStats {
    std::array<std::size_t, 256> pixels{};
    std::array<std::size_t, 256> components{};
    bool operator==(const ScribbleStats&) const = default;
};

ScribbleStats scribble_stats(const ScribbleAnnotation& scr);

}  // namespace scribseg
