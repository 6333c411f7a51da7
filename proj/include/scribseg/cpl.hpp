#pragma once

#include <cstdint>
#include <vector>

#include "scribseg/autodiff.hpp"
#include "scribseg/grid.hpp"

namespace scribseg {

/// Euclidean distance in pixels to the nearest source; +inf without sources.
using DistanceGrid = Grid<double>;

/// Exact EDT: separable lower envelope of parabolas on squared distances,
/// columns then rows, parallel over lines.
DistanceGrid edt(const BinaryGrid& sources);

namespace reference {
/// O(pixels x sources) brute force.
DistanceGrid edt(const BinaryGrid& sources);
}  // namespace reference

struct ContinuousPseudoLabel : Grid<double> {
    std::uint8_t class_code = 0;
    double decay = 0.1;
    double floor = 0.05;
    bool is_gc = false;

    /// Number of strictly positive entries.
    std::size_t support_area() const;
};

/// Non-GC: e^{-kD} where that exceeds the floor, else 0. GC: max(e^{-kD}, floor).
ContinuousPseudoLabel decay_map(const DistanceGrid& d, double decay, double floor, bool is_gc,
                                std::uint8_t class_code = 0);

/// Which pixels act as GC distance sources.
enum class GcRegion {
    stroke,    // the GC scribble pixels only
    enclosed,  // the stroke plus every pixel it spans along its row or column
};

/// Pixels lying between two stroke pixels of the same row or the same
/// column, plus the stroke itself. Exact for convex closed strokes and
/// tolerant of strokes clipped by the frame on one side.
BinaryGrid enclosed_region(const BinaryGrid& stroke);

/// One map per foreground class (codes 1..K, in order) plus the GC map.
struct CPLStack {
    int height = 0;
    int width = 0;
    std::vector<ContinuousPseudoLabel> foreground;
    ContinuousPseudoLabel gc;
};

/// Absent classes give all-zero maps; an absent GC scribble gives an all-floor map.
CPLStack build_cpl(const ScribbleAnnotation& scr, int foreground_classes, double decay = 0.1, double floor = 0.05,
                   GcRegion gc_region = GcRegion::stroke);

enum class ConForm { entropy_weighted, cross_entropy };

struct ConOptions {
    ConForm form = ConForm::entropy_weighted;
    bool gc_in_con = true;
    double eps = 1e-8;
};

/// Confidence-weighted loss between pseudo labels and y (N, K+1, H, W):
///   -1/(|C||N|) sum_c sum_p cpl_c(p) * y_c(p) * log(y_c(p) + eps)
/// (cross_entropy form drops the leading y_c). Foreground class c pairs with
/// output channel c; the GC map pairs with 1 - y_0. |C| counts participating
/// maps, |N| pixels where any of them is nonzero. Mean over the batch; an
/// item without supervision contributes 0 and raises a warning.
ad::Var loss_con(const std::vector<const CPLStack*>& cpl, const ad::Var& y, const ConOptions& opts = {});

}  // namespace scribseg
