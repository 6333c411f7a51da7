#include "scribseg/scribble.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

#include "scribseg/error.hpp"

namespace scribseg {

namespace {

constexpr int kDr[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
constexpr int kDc[8] = {-1, 0, 1, -1, 1, -1, 0, 1};

std::size_t raster(const Pixel& p, int width) { return static_cast<std::size_t>(p.r) * width + p.c; }

// BFS from `start` over pixels with labels == code; marks `seen`.
std::vector<Pixel> flood(const Grid<std::uint8_t>& labels, std::uint8_t code, Pixel start, std::vector<char>& seen) {
    std::vector<Pixel> out{start};
    seen[raster(start, labels.width)] = 1;
    for (std::size_t head = 0; head < out.size(); ++head) {
        const Pixel p = out[head];
        for (int k = 0; k < 8; ++k) {
            const Pixel q{p.r + kDr[k], p.c + kDc[k]};
            if (!labels.inside(q.r, q.c) || labels.at(q.r, q.c) != code) continue;
            auto& s = seen[raster(q, labels.width)];
            if (s) continue;
            s = 1;
            out.push_back(q);
        }
    }
    return out;
}

int degree(const Grid<std::uint8_t>& labels, std::uint8_t code, Pixel p) {
    int d = 0;
    for (int k = 0; k < 8; ++k) {
        const int r = p.r + kDr[k], c = p.c + kDc[k];
        d += labels.inside(r, c) && labels.at(r, c) == code;
    }
    return d;
}

// Orders a simple path from its smaller-raster endpoint; false if not a path.
bool order_as_path(const Grid<std::uint8_t>& labels, std::uint8_t code, std::vector<Pixel>& px) {
    if (px.size() == 1) return true;
    std::vector<Pixel> ends;
    for (const auto& p : px) {
        const int d = degree(labels, code, p);
        if (d == 1)
            ends.push_back(p);
        else if (d != 2)
            return false;
    }
    if (ends.size() != 2) return false;
    Pixel start = raster(ends[0], labels.width) < raster(ends[1], labels.width) ? ends[0] : ends[1];
    std::vector<Pixel> walk{start};
    Pixel prev{-10, -10}, cur = start;
    while (walk.size() < px.size()) {
        bool moved = false;
        for (int k = 0; k < 8 && !moved; ++k) {
            const Pixel q{cur.r + kDr[k], cur.c + kDc[k]};
            if (q == prev || !labels.inside(q.r, q.c) || labels.at(q.r, q.c) != code) continue;
            prev = cur;
            cur = q;
            walk.push_back(q);
            moved = true;
        }
        if (!moved) return false;
    }
    px = std::move(walk);
    return true;
}

}  // namespace

std::vector<Component> connected_components(const Grid<std::uint8_t>& labels, std::uint8_t code) {
    std::vector<Component> out;
    std::vector<char> seen(labels.size(), 0);
    for (int r = 0; r < labels.height; ++r)
        for (int c = 0; c < labels.width; ++c) {
            if (labels.at(r, c) != code || seen[static_cast<std::size_t>(r) * labels.width + c]) continue;
            Component comp;
            comp.code = code;
            comp.anchor = {r, c};
            comp.pixels = flood(labels, code, comp.anchor, seen);
            comp.path_like = order_as_path(labels, code, comp.pixels);
            out.push_back(std::move(comp));
        }
    return out;
}

int count_components(const BinaryGrid& mask) {
    Grid<std::uint8_t> labels(mask.height, mask.width, 0);
    for (std::size_t i = 0; i < mask.size(); ++i) labels.data[i] = mask.data[i] ? 1 : 0;
    return static_cast<int>(connected_components(labels, 1).size());
}

ScribbleAnnotation shrink_scribble(const ScribbleAnnotation& scr, double ratio, const std::vector<std::uint8_t>& codes) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("shrink ratio must lie in [0, 1]");
    std::vector<std::uint8_t> classes = codes;
    if (classes.empty())
        for (int code = 1; code < kGlobalCategory; ++code)
            if (scr.count(static_cast<std::uint8_t>(code)) > 0) classes.push_back(static_cast<std::uint8_t>(code));

    ScribbleAnnotation out = scr;
    for (std::uint8_t code : classes) {
        const std::size_t total = scr.count(code);
        const auto target = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(total)));
        std::size_t removed = 0;
        for (const auto& comp : connected_components(scr, code)) {
            if (removed == target) break;
            const std::size_t take = std::min(comp.pixels.size(), target - removed);
            for (std::size_t i = 0; i < take; ++i) {
                const Pixel& p = comp.pixels[comp.pixels.size() - 1 - i];
                out.at(p.r, p.c) = kUnlabeled;
            }
            removed += take;
        }
    }
    return out;
}

ScribbleStats scribble_stats(const ScribbleAnnotation& scr) {
    ScribbleStats s;
    for (auto v : scr.data) ++s.pixels[v];
    s.pixels[kUnlabeled] = 0;
    for (int code = 0; code < 255; ++code)
        if (s.pixels[static_cast<std::size_t>(code)] > 0)
            s.components[static_cast<std::size_t>(code)] =
                connected_components(scr, static_cast<std::uint8_t>(code)).size();
    return s;
}

}  // namespace scribseg
