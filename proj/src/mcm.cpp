#include "scribseg/mcm.hpp"

#include <algorithm>
#include <cmath>

#include "scribseg/error.hpp"

namespace scribseg {

void MCMConfig::validate() const {
    if (!(w_o > 0.0) || !(w_s > w_o)) throw ConfigError("MCM weights must satisfy w_s > w_o > 0");
    if (!(phi >= 0.0 && phi <= 1.0)) throw ConfigError("MCM phi must lie in [0, 1]");
    if (patch < 1) throw ConfigError("MCM patch size must be >= 1");
}

PatchGrid patch_weights(const ScribbleAnnotation& scr, const MCMConfig& cfg) {
    if (!(cfg.w_o > 0.0) || cfg.w_s < cfg.w_o || cfg.patch < 1)
        throw ConfigError("MCM weights must satisfy w_s >= w_o > 0 and patch >= 1");
    PatchGrid pg;
    pg.patch = cfg.patch;
    pg.rows = (scr.height + cfg.patch - 1) / cfg.patch;
    pg.cols = (scr.width + cfg.patch - 1) / cfg.patch;
    pg.has_scribble.assign(static_cast<std::size_t>(pg.count()), 0);
    for (int r = 0; r < scr.height; ++r)
        for (int c = 0; c < scr.width; ++c) {
            const auto v = scr.at(r, c);
            const bool counted = v != kUnlabeled && v != kBackground && (v != kGlobalCategory || cfg.weight_gc);
            if (counted) pg.has_scribble[static_cast<std::size_t>((r / cfg.patch) * pg.cols + c / cfg.patch)] = 1;
        }
    double total = 0.0;
    for (auto f : pg.has_scribble) {
        pg.weights.push_back(f ? cfg.w_s : cfg.w_o);
        total += pg.weights.back();
    }
    for (double w : pg.weights) pg.probabilities.push_back(w / total);
    return pg;
}

int PatchMask::masked_count() const {
    return static_cast<int>(std::count(masked.begin(), masked.end(), std::uint8_t{1}));
}

PatchMask sample_mask(const PatchGrid& pg, double phi, Rng& rng) {
    if (!(phi >= 0.0 && phi <= 1.0)) throw ConfigError("masking ratio must lie in [0, 1]");
    PatchMask pm;
    pm.patch = pg.patch;
    pm.rows = pg.rows;
    pm.cols = pg.cols;
    pm.phi = phi;
    const int p = pg.count();
    pm.masked.assign(static_cast<std::size_t>(p), 0);
    const auto k = static_cast<int>(std::llround(phi * p));
    std::vector<double> w = pg.weights;
    double total = 0.0;
    for (double v : w) total += v;
    for (int draw = 0; draw < k; ++draw) {
        double u = rng.uniform() * total;
        int pick = -1;
        for (int i = 0; i < p; ++i) {
            if (w[i] == 0.0) continue;
            pick = i;
            if (u < w[i]) break;
            u -= w[i];
        }
        pm.masked[static_cast<std::size_t>(pick)] = 1;
        w[pick] = 0.0;
        total = 0.0;
        for (double v : w) total += v;
    }
    return pm;
}

ImageGrid apply_mask(const ImageGrid& img, const PatchMask& pm) {
    const int rows = (img.height + pm.patch - 1) / pm.patch;
    const int cols = (img.width + pm.patch - 1) / pm.patch;
    if (rows != pm.rows || cols != pm.cols) throw ConfigError("patch mask does not match image dims");
    ImageGrid out = img;
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            if (pm.masked[static_cast<std::size_t>((r / pm.patch) * pm.cols + c / pm.patch)]) out.at(r, c) = 0.0f;
    return out;
}

BinaryGrid gc_binary_mask(const ContinuousPseudoLabel& cpl_gc) {
    if (!cpl_gc.is_gc) throw ConfigError("gc_binary_mask needs the GC pseudo label channel");
    BinaryGrid m(cpl_gc.height, cpl_gc.width, 0);
    for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = cpl_gc.data[i] >= 0.5 ? 1 : 0;
    return m;
}

BinaryGrid prediction_fg_mask(const ad::Tensor& y, int n) {
    if (y.rank() != 4 || n < 0 || n >= y.dim(0)) throw ConfigError("prediction_fg_mask: bad prediction or item");
    const int h = y.dim(2), w = y.dim(3), ch = y.dim(1);
    BinaryGrid m(h, w, 0);
    const double* bg = y.data() + static_cast<std::size_t>(n) * ch * h * w;
    for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = 1.0 - bg[i] >= 0.5 ? 1 : 0;
    return m;
}

ad::Var enhance(const ad::Var& y, const std::vector<BinaryGrid>& masks, EnhanceMode mode) {
    const auto& s = y.shape();
    if (s.size() != 4 || static_cast<int>(masks.size()) != s[0]) throw ConfigError("enhance: one mask per batch item");
    const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
    ad::Tensor m(s, 0.0);
    ad::Tensor fill(s, 0.0);
    for (int n = 0; n < s[0]; ++n) {
        const auto& mk = masks[static_cast<std::size_t>(n)];
        if (!mk.same_shape(s[2], s[3])) throw ConfigError("enhance: mask dims differ from prediction");
        for (int c = 0; c < s[1]; ++c) {
            double* dst = m.data() + (static_cast<std::size_t>(n) * s[1] + c) * plane;
            for (std::size_t p = 0; p < plane; ++p) dst[p] = mk.data[p] ? 1.0 : 0.0;
        }
        double* bg = fill.data() + static_cast<std::size_t>(n) * s[1] * plane;
        for (std::size_t p = 0; p < plane; ++p) bg[p] = mk.data[p] ? 0.0 : 1.0;
    }
    ad::Var out = ad::mul_const(y, m);
    if (mode == EnhanceMode::background_fill) out = ad::add(out, ad::constant(std::move(fill)));
    return out;
}

namespace {

ad::Var cosine_loss(const ad::Var& a, const ad::Var& ref, const char* name) {
    if (a.shape() != ref.shape()) throw ConfigError(std::string(name) + ": operand shapes differ");
    const int n = a.value().dim(0);
    const std::size_t per = ref.numel() / static_cast<std::size_t>(n);
    for (int b = 0; b < n; ++b) {
        bool zero = true;
        for (std::size_t i = 0; i < per && zero; ++i) zero = ref.value()[b * per + i] == 0.0;
        if (zero) warn(std::string(name) + ": reference map is all zero for a batch item; term counts as 1");
    }
    return ad::scale(ad::sum(ad::cosine_distance_items(a, ref, 1e-8)), 1.0 / n);
}

}  // namespace

ad::Var loss_cc(const ad::Var& y_m, const ad::Var& y_e) { return cosine_loss(y_m, y_e, "loss_cc"); }

ad::Var loss_en(const ad::Var& y, const ad::Var& y_e) { return cosine_loss(y, y_e, "loss_en"); }

}  // namespace scribseg
