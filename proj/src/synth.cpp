#include "scribseg/synth.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "scribseg/cpl.hpp"
#include "scribseg/error.hpp"
#include "scribseg/mgrd.hpp"
#include "scribseg/rng.hpp"
#include "scribseg/scribble.hpp"

namespace scribseg {

namespace {

constexpr int kDr[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
constexpr int kDc[8] = {-1, 0, 1, -1, 1, -1, 0, 1};
constexpr std::uint64_t kScribbleStream = 0x5c21bb1e;

struct Geometry {
    double cy, cx;        // centre of the inner structure
    double theta;         // side direction
    double sx, sy;        // axis scales
    double inner, ring;   // radii
    double side_r, side_cy, side_cx;
};

Geometry draw_geometry(const PhantomParams& p, Rng& rng) {
    auto jitter = [&](double v) { return v * (1.0 + rng.uniform(-p.radius_jitter, p.radius_jitter)); };
    Geometry g{};
    g.theta = p.side_angle + rng.uniform(-p.rotation_range, p.rotation_range);
    g.sx = 1.0 + rng.uniform(-p.aspect_jitter, p.aspect_jitter);
    g.sy = 1.0 + rng.uniform(-p.aspect_jitter, p.aspect_jitter);
    g.inner = jitter(p.inner_radius);
    g.ring = p.layout == Layout::cardiac ? jitter(p.ring_thickness) : 0.0;
    g.side_r = jitter(p.side_radius);
    const double outer = g.inner + g.ring;
    const double dist = outer + p.side_offset;
    // Shift the inner structure away from the side one so the pair is centred.
    const double shift = 0.5 * (dist + g.side_r - outer);
    const double mid = 0.5 * (p.image_size - 1);
    g.cy = mid - shift * std::sin(g.theta) + rng.uniform(-p.center_jitter, p.center_jitter);
    g.cx = mid - shift * std::cos(g.theta) + rng.uniform(-p.center_jitter, p.center_jitter);
    g.side_cy = g.cy + dist * std::sin(g.theta);
    g.side_cx = g.cx + dist * std::cos(g.theta);
    return g;
}

DenseMask rasterize(const PhantomParams& p, const Geometry& g) {
    const int n = p.image_size;
    DenseMask m(n, n);
    const double ct = std::cos(g.theta), st = std::sin(g.theta);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            const double dy = r - g.cy, dx = c - g.cx;
            const double u = (dx * ct + dy * st) / g.sx;
            const double v = (-dx * st + dy * ct) / g.sy;
            const double rho = std::sqrt(u * u + v * v);
            const double sdy = r - g.side_cy, sdx = c - g.side_cx;
            const bool in_side = sdy * sdy + sdx * sdx <= g.side_r * g.side_r;
            std::uint8_t label = kBackground;
            if (p.layout == Layout::cardiac) {
                if (rho <= g.inner)
                    label = 3;
                else if (rho <= g.inner + g.ring)
                    label = 2;
                else if (in_side)
                    label = 1;
            } else {
                if (rho <= g.inner)
                    label = 2;
                else if (in_side)
                    label = 1;
            }
            m.at(r, c) = label;
        }
    return m;
}

bool fits(const DenseMask& m, int margin) {
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c)
            if (m.at(r, c) != kBackground &&
                (r < margin || c < margin || r >= m.height - margin || c >= m.width - margin))
                return false;
    return true;
}

// Separable Gaussian blur with clamped borders.
Grid<float> gaussian_blur(const Grid<double>& src, double sigma) {
    Grid<float> out(src.height, src.width);
    if (sigma <= 0.0) {
        for (std::size_t i = 0; i < src.size(); ++i) out.data[i] = static_cast<float>(src.data[i]);
        return out;
    }
    const int rad = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * rad + 1);
    double ks = 0.0;
    for (int i = -rad; i <= rad; ++i) ks += k[i + rad] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= ks;
    Grid<double> tmp(src.height, src.width);
    for (int r = 0; r < src.height; ++r)
        for (int c = 0; c < src.width; ++c) {
            double s = 0.0;
            for (int i = -rad; i <= rad; ++i) s += k[i + rad] * src.at(r, std::clamp(c + i, 0, src.width - 1));
            tmp.at(r, c) = s;
        }
    for (int r = 0; r < src.height; ++r)
        for (int c = 0; c < src.width; ++c) {
            double s = 0.0;
            for (int i = -rad; i <= rad; ++i) s += k[i + rad] * tmp.at(std::clamp(r + i, 0, src.height - 1), c);
            out.at(r, c) = static_cast<float>(s);
        }
    return out;
}

BinaryGrid select(const DenseMask& m, auto pred) {
    BinaryGrid b(m.height, m.width, 0);
    for (std::size_t i = 0; i < m.size(); ++i) b.data[i] = pred(m.data[i]) ? 1 : 0;
    return b;
}

BinaryGrid invert(const BinaryGrid& b) {
    BinaryGrid o(b.height, b.width, 0);
    for (std::size_t i = 0; i < b.size(); ++i) o.data[i] = b.data[i] ? 0 : 1;
    return o;
}

// Thin self-avoiding 8-connected walk inside `region`: each new pixel may
// touch only the current pixel among those already visited, so the result is
// a simple path. Heading momentum keeps strokes smooth.
std::vector<Pixel> random_walk(const BinaryGrid& region, std::size_t target, int max_restarts, Rng& rng) {
    std::vector<Pixel> cells;
    for (int r = 0; r < region.height; ++r)
        for (int c = 0; c < region.width; ++c)
            if (region.at(r, c)) cells.push_back({r, c});
    if (cells.empty()) return {};

    std::vector<Pixel> best;
    Grid<std::uint8_t> visited(region.height, region.width, 0);
    for (int attempt = 0; attempt <= max_restarts && best.size() < target; ++attempt) {
        std::fill(visited.data.begin(), visited.data.end(), 0);
        std::vector<Pixel> walk{cells[rng.below(cells.size())]};
        visited.at(walk[0].r, walk[0].c) = 1;
        double hy = 0.0, hx = 0.0;
        while (walk.size() < target) {
            const Pixel cur = walk.back();
            std::vector<std::pair<Pixel, double>> cand;
            for (int k = 0; k < 8; ++k) {
                const Pixel q{cur.r + kDr[k], cur.c + kDc[k]};
                if (!region.inside(q.r, q.c) || !region.at(q.r, q.c) || visited.at(q.r, q.c)) continue;
                bool touches_other = false;
                for (int j = 0; j < 8 && !touches_other; ++j) {
                    const Pixel n{q.r + kDr[j], q.c + kDc[j]};
                    if (n == cur || !visited.inside(n.r, n.c)) continue;
                    touches_other = visited.at(n.r, n.c) != 0;
                }
                if (touches_other) continue;
                const double len = std::hypot(kDr[k], kDc[k]);
                const double align = (hy * kDr[k] + hx * kDc[k]) / len;
                cand.emplace_back(q, std::exp(2.0 * align));
            }
            if (cand.empty()) break;
            double total = 0.0;
            for (const auto& [q, w] : cand) total += w;
            double u = rng.uniform() * total;
            std::size_t pick = 0;
            while (pick + 1 < cand.size() && u >= cand[pick].second) u -= cand[pick++].second;
            const Pixel q = cand[pick].first;
            const double len = std::hypot(q.r - cur.r, q.c - cur.c);
            hy = (q.r - cur.r) / len;
            hx = (q.c - cur.c) / len;
            visited.at(q.r, q.c) = 1;
            walk.push_back(q);
        }
        if (walk.size() > best.size()) best = std::move(walk);
    }
    return best;
}

Pixel innermost(const DistanceGrid& d, const BinaryGrid& region) {
    Pixel best{-1, -1};
    double bd = -1.0;
    for (int r = 0; r < d.height; ++r)
        for (int c = 0; c < d.width; ++c)
            if (region.at(r, c) && d.at(r, c) > bd) {
                bd = d.at(r, c);
                best = {r, c};
            }
    return best;
}

BinaryGrid contour_of(const BinaryGrid& region) {
    BinaryGrid out(region.height, region.width, 0);
    constexpr int dr4[4] = {-1, 1, 0, 0};
    constexpr int dc4[4] = {0, 0, -1, 1};
    for (int r = 0; r < region.height; ++r)
        for (int c = 0; c < region.width; ++c) {
            if (!region.at(r, c)) continue;
            for (int k = 0; k < 4; ++k) {
                const int rr = r + dr4[k], cc = c + dc4[k];
                if (!region.inside(rr, cc) || !region.at(rr, cc)) {
                    out.at(r, c) = 1;
                    break;
                }
            }
        }
    return out;
}

}  // namespace

PhantomParams PhantomParams::cardiac() { return PhantomParams{}; }

PhantomParams PhantomParams::prostate() {
    PhantomParams p;
    p.layout = Layout::prostate;
    p.inner_radius = 9.0;
    p.ring_thickness = 0.0;
    p.side_radius = 9.0;
    p.side_offset = -3.0;
    p.side_angle = std::numbers::pi / 2;
    p.intensities = {0.35, 0.75, 0.5};
    return p;
}

void PhantomParams::validate() const {
    if (image_size < 16) throw ConfigError("phantom image_size must be >= 16");
    if (!(inner_radius > 1.0)) throw ConfigError("phantom inner_radius must be > 1");
    if (layout == Layout::cardiac && !(ring_thickness >= 2.0))
        throw ConfigError("phantom ring_thickness must be >= 2 so the annulus encloses the disk");
    if (!(side_radius > 1.0)) throw ConfigError("phantom side_radius must be > 1");
    if (radius_jitter < 0 || radius_jitter >= 0.5) throw ConfigError("phantom radius_jitter must lie in [0, 0.5)");
    if (aspect_jitter < 0 || aspect_jitter >= 0.5) throw ConfigError("phantom aspect_jitter must lie in [0, 0.5)");
    if (center_jitter < 0 || rotation_range < 0) throw ConfigError("phantom jitter ranges must be >= 0");
    if (static_cast<int>(intensities.size()) != foreground_classes() + 1)
        throw ConfigError("phantom intensities need one value per class including background");
    if (noise_sigma < 0 || smoothing_sigma < 0) throw ConfigError("phantom noise/smoothing sigma must be >= 0");
}

Phantom generate_phantom(const PhantomParams& params, std::uint64_t seed, std::uint64_t index) {
    params.validate();
    Rng rng = Rng::derive(seed, index);
    for (int attempt = 0; attempt < 100; ++attempt) {
        const Geometry g = draw_geometry(params, rng);
        DenseMask mask = rasterize(params, g);
        bool present = true;
        for (int c = 1; c <= params.foreground_classes(); ++c) present = present && mask.count(static_cast<std::uint8_t>(c)) > 0;
        if (!present || !fits(mask, 2)) continue;
        Grid<double> raw(mask.height, mask.width);
        for (std::size_t i = 0; i < raw.size(); ++i)
            raw.data[i] = params.intensities[mask.data[i]] + params.noise_sigma * rng.normal();
        Phantom out;
        out.image = ImageGrid(gaussian_blur(raw, params.smoothing_sigma));
        out.mask = std::move(mask);
        return out;
    }
    throw DataError("phantom geometry does not fit the frame after 100 draws; reduce radii or jitter");
}

void ScribbleSynthParams::validate() const {
    if (!(alpha > 0.0)) throw ConfigError("scribble alpha must be > 0");
    if (erosion_margin < 1) throw ConfigError("scribble erosion margin must be >= 1");
    if (gc_margin < 0) throw ConfigError("GC margin must be >= 0");
    if (max_restarts < 0) throw ConfigError("max_restarts must be >= 0");
}

BinaryGrid gc_ellipse_region(const DenseMask& mask, int gc_margin) {
    const BinaryGrid fg = select(mask, [](std::uint8_t v) { return v != kBackground; });
    BinaryGrid region(mask.height, mask.width, 0);
    const DistanceGrid dfg = edt(fg);
    int rmin = mask.height, rmax = -1, cmin = mask.width, cmax = -1;
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c)
            if (dfg.at(r, c) <= gc_margin) {
                rmin = std::min(rmin, r);
                rmax = std::max(rmax, r);
                cmin = std::min(cmin, c);
                cmax = std::max(cmax, c);
            }
    if (rmax < 0) return region;
    const double cy = 0.5 * (rmin + rmax), cx = 0.5 * (cmin + cmax);
    double ay = 0.5 * (rmax - rmin) + 0.5, ax = 0.5 * (cmax - cmin) + 0.5;
    // Grow the box-fitted ellipse until it holds every dilated pixel.
    double s = 1.0;
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c)
            if (dfg.at(r, c) <= gc_margin) {
                const double u = (r - cy) / ay, v = (c - cx) / ax;
                s = std::max(s, std::sqrt(u * u + v * v));
            }
    ay *= s;
    ax *= s;
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c) {
            const double u = (r - cy) / ay, v = (c - cx) / ax;
            region.at(r, c) = u * u + v * v <= 1.0 + 1e-12 ? 1 : 0;
        }
    return region;
}

ScribbleAnnotation synthesize_scribbles(const DenseMask& mask, int foreground_classes, const ScribbleSynthParams& params,
                                        std::uint64_t index) {
    params.validate();
    Rng rng = Rng::derive(params.seed ^ kScribbleStream, index);
    ScribbleAnnotation scr(mask.height, mask.width);

    for (int c = 1; c <= foreground_classes; ++c) {
        const auto code = static_cast<std::uint8_t>(c);
        const BinaryGrid cls = select(mask, [code](std::uint8_t v) { return v == code; });
        const std::size_t area = mask.count(code);
        if (area == 0) continue;
        const DistanceGrid inside = edt(invert(cls));
        BinaryGrid eroded(mask.height, mask.width, 0);
        for (std::size_t i = 0; i < eroded.size(); ++i)
            eroded.data[i] = cls.data[i] && inside.data[i] > params.erosion_margin ? 1 : 0;
        const auto target = static_cast<std::size_t>(
            std::max(std::llround(params.alpha * std::sqrt(static_cast<double>(area))), 8LL));
        auto walk = random_walk(eroded, target, params.max_restarts, rng);
        if (walk.empty()) walk.push_back(innermost(inside, cls));
        for (const auto& p : walk) scr.at(p.r, p.c) = code;
    }

    BinaryGrid ellipse;
    if (params.include_gc || params.include_background) ellipse = gc_ellipse_region(mask, params.gc_margin);
    if (params.include_gc) {
        const BinaryGrid contour = contour_of(ellipse);
        for (std::size_t i = 0; i < contour.size(); ++i)
            if (contour.data[i]) scr.data[i] = kGlobalCategory;
    }
    if (params.include_background) {
        const BinaryGrid fg = select(mask, [](std::uint8_t v) { return v != kBackground; });
        const DistanceGrid dfg = edt(fg);
        const DistanceGrid dell = edt(ellipse);
        BinaryGrid region(mask.height, mask.width, 0);
        std::size_t area = 0;
        for (std::size_t i = 0; i < region.size(); ++i) {
            // Outside the ellipse and not touching its contour.
            region.data[i] = dfg.data[i] > params.gc_margin && dell.data[i] > 1.5 ? 1 : 0;
            area += mask.data[i] == kBackground;
        }
        const auto target = static_cast<std::size_t>(
            std::max(std::llround(params.alpha * std::sqrt(static_cast<double>(area))), 8LL));
        for (const auto& p : random_walk(region, target, params.max_restarts, rng)) scr.at(p.r, p.c) = kBackground;
    }
    return scr;
}

PreprocessResult preprocess(const Grid<float>& img, int target) {
    if (target < 8) throw ConfigError("preprocess target size must be >= 8");
    PreprocessResult res;
    res.image = ImageGrid(target, target, 0.0f);
    auto place = [&](int src_len) {
        // Returns (source offset, destination offset, copied length).
        if (src_len >= target) return std::array<int, 3>{(src_len - target) / 2, 0, target};
        return std::array<int, 3>{0, (target - src_len) / 2, src_len};
    };
    const auto [sr, dr, nr] = place(img.height);
    const auto [sc, dc, nc] = place(img.width);
    for (int r = 0; r < nr; ++r)
        for (int c = 0; c < nc; ++c) res.image.at(dr + r, dc + c) = img.at(sr + r, sc + c);

    double mean = 0.0;
    for (float v : res.image.data) mean += v;
    mean /= static_cast<double>(res.image.size());
    double var = 0.0;
    for (float v : res.image.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(res.image.size());
    if (!(var > 0.0)) {
        std::fill(res.image.data.begin(), res.image.data.end(), 0.0f);
        res.constant_input = true;
        warn("preprocess: constant image normalized to zeros");
        return res;
    }
    const double inv = 1.0 / std::sqrt(var);
    for (auto& v : res.image.data) v = static_cast<float>((v - mean) * inv);
    return res;
}

namespace {

std::string sample_name(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04d.mgrd", prefix, i);
    return buf;
}

}  // namespace

void write_manifest(const std::filesystem::path& dir, const Manifest& manifest, int foreground_classes) {
    nlohmann::ordered_json j;
    for (const char* split : {"train", "val", "test"}) {
        auto arr = nlohmann::ordered_json::array();
        if (auto it = manifest.find(split); it != manifest.end())
            for (const auto& e : it->second) arr.push_back({{"image", e.image}, {"scribble", e.scribble}, {"mask", e.mask}});
        j[split] = arr;
    }
    j["foreground_classes"] = foreground_classes;
    std::ofstream out(dir / "manifest.json");
    if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
    out << j.dump(2) << '\n';
}

Manifest write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec) {
    if (spec.count < 10) throw ConfigError("dataset count must be >= 10");
    const double total = spec.split.train + spec.split.val + spec.split.test;
    if (spec.split.train < 0 || spec.split.val < 0 || spec.split.test < 0 || !(total > 0))
        throw ConfigError("split ratios must be non-negative with a positive sum");
    spec.phantom.validate();
    spec.scribble.validate();
    std::error_code ec;
    for (const char* sub : {"images", "scribbles", "masks"}) std::filesystem::create_directories(dir / sub, ec);
    if (ec) throw DataError("cannot create dataset directory " + dir.string() + ": " + ec.message());

    const int n_train = static_cast<int>(std::llround(spec.count * spec.split.train / total));
    const int n_val = std::min(spec.count - n_train, static_cast<int>(std::llround(spec.count * spec.split.val / total)));
    ScribbleSynthParams sp = spec.scribble;
    sp.seed = spec.seed;
    Manifest manifest{{"train", {}}, {"val", {}}, {"test", {}}};
    for (int i = 0; i < spec.count; ++i) {
        const Phantom ph = generate_phantom(spec.phantom, spec.seed, static_cast<std::uint64_t>(i));
        const auto pre = preprocess(ph.image, spec.phantom.image_size);
        const auto scr = synthesize_scribbles(ph.mask, spec.phantom.foreground_classes(), sp, static_cast<std::uint64_t>(i));
        ManifestEntry e{"images/" + sample_name("img", i), "scribbles/" + sample_name("scr", i),
                        "masks/" + sample_name("msk", i)};
        mgrd::save_image(dir / e.image, pre.image);
        mgrd::save_labels(dir / e.scribble, scr);
        mgrd::save_labels(dir / e.mask, ph.mask);
        const char* split = i < n_train ? "train" : i < n_train + n_val ? "val" : "test";
        manifest[split].push_back(std::move(e));
    }
    write_manifest(dir, manifest, spec.phantom.foreground_classes());
    return manifest;
}

Manifest read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DataError("cannot open " + (dir / "manifest.json").string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("manifest.json: ") + e.what());
    }
    Manifest m;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!it.value().is_array()) continue;
        auto& list = m[it.key()];
        for (const auto& e : it.value()) {
            if (!e.contains("image") || !e.contains("scribble") || !e.contains("mask"))
                throw DataError("manifest entry in split '" + it.key() + "' lacks image/scribble/mask");
            list.push_back({e["image"].get<std::string>(), e["scribble"].get<std::string>(), e["mask"].get<std::string>()});
        }
    }
    return m;
}

int manifest_foreground_classes(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DataError("cannot open " + (dir / "manifest.json").string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("manifest.json: ") + e.what());
    }
    return j.value("foreground_classes", 3);
}

std::vector<Sample> load_split(const std::filesystem::path& dir, const Manifest& manifest, const std::string& split) {
    auto it = manifest.find(split);
    if (it == manifest.end()) throw DataError("manifest has no split '" + split + "'");
    std::vector<Sample> out;
    for (const auto& e : it->second) {
        Sample s;
        s.id = std::filesystem::path(e.image).stem().string();
        s.image = mgrd::load_image(dir / e.image);
        s.scribble = ScribbleAnnotation(mgrd::load_labels(dir / e.scribble));
        s.mask = DenseMask(mgrd::load_labels(dir / e.mask));
        if (!s.scribble.same_shape(s.image) || !s.mask.same_shape(s.image))
            throw DataError("sample " + s.id + ": image, scribble and mask dims differ");
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace scribseg
