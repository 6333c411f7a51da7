#pragma once

#include <cstdint>
#include <vector>

#include "scribseg/autodiff.hpp"
#include "scribseg/cpl.hpp"
#include "scribseg/grid.hpp"
#include "scribseg/rng.hpp"

namespace scribseg {

struct MCMConfig {
    double w_s = 2.0;   // patches holding a counted scribble pixel
    double w_o = 1.0;   // all other patches
    double phi = 0.5;   // masked fraction
    int patch = 16;
    bool weight_gc = false;  // let GC pixels trigger w_s

    void validate() const;
};

/// Patch layout over the image zero-padded to a multiple of the patch size.
struct PatchGrid {
    int patch = 16;
    int rows = 0;
    int cols = 0;
    std::vector<double> weights;
    std::vector<double> probabilities;
    std::vector<std::uint8_t> has_scribble;

    int count() const { return rows * cols; }
};

PatchGrid patch_weights(const ScribbleAnnotation& scr, const MCMConfig& cfg);

struct PatchMask {
    int patch = 16;
    int rows = 0;
    int cols = 0;
    double phi = 0.0;
    std::vector<std::uint8_t> masked;  // 1 = patch set to zero
    int masked_count() const;
};

/// Masks exactly round(phi * P) patches by drawing without replacement, each
/// draw proportional to the remaining weights.
PatchMask sample_mask(const PatchGrid& pg, double phi, Rng& rng);

/// Zeroes the pixels of masked patches; every other pixel is copied bit for bit.
ImageGrid apply_mask(const ImageGrid& img, const PatchMask& pm);

/// 1 where the GC pseudo label is at least 0.5. Throws ConfigError for a
/// non-GC map.
BinaryGrid gc_binary_mask(const ContinuousPseudoLabel& cpl_gc);

/// 1 where the predicted foreground probability 1 - y_0 is at least 0.5, for
/// batch item n of y (N, C, H, W).
BinaryGrid prediction_fg_mask(const ad::Tensor& y, int n);

enum class EnhanceMode {
    multiply,         // y * mask on every channel
    background_fill,  // y * mask, plus one-hot background where mask is 0
};

/// y_e for a batch; masks[n] pairs with item n.
ad::Var enhance(const ad::Var& y, const std::vector<BinaryGrid>& masks, EnhanceMode mode = EnhanceMode::multiply);

/// Batch mean of 1 - <a, b> / (|a||b| + 1e-8) per item. An item whose
/// reference map is all zero contributes 1 and raises a warning.
ad::Var loss_cc(const ad::Var& y_m, const ad::Var& y_e);
ad::Var loss_en(const ad::Var& y, const ad::Var& y_e);

}  // namespace scribseg
