#include "scribseg/cpl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "scribseg/error.hpp"

namespace scribseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D squared-distance transform of f (length n, entries 0 or +inf or finite),
// written to d. v and z are scratch of size n and n+1.
void envelope_1d(const double* f, double* d, int n, int* v, double* z) {
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
            continue;
        }
        double s;
        for (;;) {
            const int p = v[k];
            s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
            if (s <= z[k] && k > 0) {
                --k;
                continue;
            }
            break;
        }
        if (s <= z[k]) {
            // Only possible for k == 0: q dominates everywhere.
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
            continue;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    if (k < 0) {
        for (int q = 0; q < n; ++q) d[q] = kInf;
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q) ++j;
        const double dq = q - v[j];
        d[q] = dq * dq + f[v[j]];
    }
}

}  // namespace

DistanceGrid edt(const BinaryGrid& sources) {
    const int h = sources.height, w = sources.width;
    DistanceGrid out(h, w, kInf);
    if (h == 0 || w == 0) return out;

    // Pass 1: per column.
#pragma omp parallel
    {
        std::vector<double> f(h), d(h), z(h + 1);
        std::vector<int> v(h);
#pragma omp for schedule(static)
        for (int c = 0; c < w; ++c) {
            for (int r = 0; r < h; ++r) f[r] = sources.at(r, c) ? 0.0 : kInf;
            envelope_1d(f.data(), d.data(), h, v.data(), z.data());
            for (int r = 0; r < h; ++r) out.at(r, c) = d[r];
        }
    }
    // Pass 2: per row, then square root.
#pragma omp parallel
    {
        std::vector<double> d(w), z(w + 1);
        std::vector<int> v(w);
#pragma omp for schedule(static)
        for (int r = 0; r < h; ++r) {
            double* row = out.data.data() + static_cast<std::size_t>(r) * w;
            envelope_1d(row, d.data(), w, v.data(), z.data());
            for (int c = 0; c < w; ++c) row[c] = std::sqrt(d[c]);
        }
    }
    return out;
}

namespace reference {

DistanceGrid edt(const BinaryGrid& sources) {
    std::vector<std::pair<int, int>> pts;
    for (int r = 0; r < sources.height; ++r)
        for (int c = 0; c < sources.width; ++c)
            if (sources.at(r, c)) pts.emplace_back(r, c);
    DistanceGrid out(sources.height, sources.width, kInf);
    for (int r = 0; r < sources.height; ++r)
        for (int c = 0; c < sources.width; ++c) {
            double best = kInf;
            for (auto [pr, pc] : pts) {
                const double dr = r - pr, dc = c - pc;
                best = std::min(best, dr * dr + dc * dc);
            }
            out.at(r, c) = std::sqrt(best);
        }
    return out;
}

}  // namespace reference

std::size_t ContinuousPseudoLabel::support_area() const {
    std::size_t n = 0;
    for (double v : data) n += v > 0.0;
    return n;
}

ContinuousPseudoLabel decay_map(const DistanceGrid& d, double decay, double floor, bool is_gc, std::uint8_t class_code) {
    if (!(decay > 0.0)) throw ConfigError("decay factor must be > 0");
    if (!(floor > 0.0 && floor < 1.0)) throw ConfigError("confidence floor must lie in (0, 1)");
    ContinuousPseudoLabel out;
    static_cast<Grid<double>&>(out) = Grid<double>(d.height, d.width, 0.0);
    out.class_code = class_code;
    out.decay = decay;
    out.floor = floor;
    out.is_gc = is_gc;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double e = d.data[i] == kInf ? 0.0 : std::exp(-decay * d.data[i]);
        out.data[i] = is_gc ? std::max(e, floor) : (e > floor ? e : 0.0);
    }
    return out;
}

BinaryGrid enclosed_region(const BinaryGrid& stroke) {
    const int h = stroke.height, w = stroke.width;
    BinaryGrid out(h, w, 0);
    std::vector<int> top(static_cast<std::size_t>(w), h), bottom(static_cast<std::size_t>(w), -1);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (stroke.at(r, c)) {
                top[static_cast<std::size_t>(c)] = std::min(top[static_cast<std::size_t>(c)], r);
                bottom[static_cast<std::size_t>(c)] = std::max(bottom[static_cast<std::size_t>(c)], r);
            }
    for (int r = 0; r < h; ++r) {
        int left = w, right = -1;
        for (int c = 0; c < w; ++c)
            if (stroke.at(r, c)) left = std::min(left, c), right = std::max(right, c);
        for (int c = 0; c < w; ++c) {
            const auto cc = static_cast<std::size_t>(c);
            out.at(r, c) = (c >= left && c <= right) || (r >= top[cc] && r <= bottom[cc]);
        }
    }
    return out;
}

CPLStack build_cpl(const ScribbleAnnotation& scr, int foreground_classes, double decay, double floor,
                   GcRegion gc_region) {
    if (foreground_classes < 1) throw ConfigError("build_cpl needs at least one foreground class");
    CPLStack stack;
    stack.height = scr.height;
    stack.width = scr.width;
    auto sources_of = [&](std::uint8_t code) {
        BinaryGrid b(scr.height, scr.width, 0);
        for (std::size_t i = 0; i < scr.size(); ++i) b.data[i] = scr.data[i] == code;
        return b;
    };
    for (int c = 1; c <= foreground_classes; ++c) {
        const auto code = static_cast<std::uint8_t>(c);
        stack.foreground.push_back(decay_map(edt(sources_of(code)), decay, floor, false, code));
    }
    BinaryGrid gc = sources_of(kGlobalCategory);
    if (gc_region == GcRegion::enclosed) gc = enclosed_region(gc);
    stack.gc = decay_map(edt(gc), decay, floor, true, kGlobalCategory);
    return stack;
}

ad::Var loss_con(const std::vector<const CPLStack*>& cpl, const ad::Var& y, const ConOptions& opts) {
    if (y.value().rank() != 4) throw ConfigError("loss_con: y must be (N,C,H,W)");
    const int n = y.value().dim(0), ch = y.value().dim(1), h = y.value().dim(2), w = y.value().dim(3);
    if (static_cast<int>(cpl.size()) != n) throw ConfigError("loss_con: one CPL stack per batch item required");
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    ad::Tensor wfg({n, ch, h, w}, 0.0);
    ad::Tensor wgc({n, 1, h, w}, 0.0);
    for (int b = 0; b < n; ++b) {
        const CPLStack& s = *cpl[static_cast<std::size_t>(b)];
        if (s.height != h || s.width != w) throw ConfigError("loss_con: CPL and prediction dims differ");
        if (static_cast<int>(s.foreground.size()) != ch - 1)
            throw ConfigError("loss_con: CPL class count does not match output channels");
        const std::size_t maps = s.foreground.size() + (opts.gc_in_con ? 1 : 0);
        std::size_t support = 0;
        for (std::size_t p = 0; p < plane; ++p) {
            bool any = opts.gc_in_con && s.gc.data[p] != 0.0;
            for (const auto& m : s.foreground) any = any || m.data[p] != 0.0;
            support += any;
        }
        if (support == 0) {
            warn("loss_con: no nonzero pseudo label for a batch item; it contributes 0");
            continue;
        }
        const double norm = 1.0 / (static_cast<double>(maps) * static_cast<double>(support) * n);
        for (int c = 1; c < ch; ++c) {
            const auto& m = s.foreground[static_cast<std::size_t>(c - 1)];
            double* dst = wfg.data() + (static_cast<std::size_t>(b) * ch + c) * plane;
            for (std::size_t p = 0; p < plane; ++p) dst[p] = m.data[p] * norm;
        }
        if (opts.gc_in_con) {
            double* dst = wgc.data() + static_cast<std::size_t>(b) * plane;
            for (std::size_t p = 0; p < plane; ++p) dst[p] = s.gc.data[p] * norm;
        }
    }

    auto term = [&](const ad::Var& q, const ad::Tensor& weight) {
        ad::Var lg = ad::log(q, opts.eps);
        ad::Var body = opts.form == ConForm::entropy_weighted ? ad::mul(q, lg) : lg;
        return ad::sum(ad::mul_const(body, weight));
    };
    ad::Var total = term(y, wfg);
    if (opts.gc_in_con) {
        const ad::Var fg = ad::add_scalar(ad::scale(ad::channel(y, 0), -1.0), 1.0);
        total = ad::add(total, term(fg, wgc));
    }
    return ad::scale(total, -1.0);
}

}  // namespace scribseg
