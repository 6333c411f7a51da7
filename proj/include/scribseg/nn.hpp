#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "scribseg/autodiff.hpp"
#include "scribseg/rng.hpp"

namespace scribseg::nn {

enum class NormKind : std::uint8_t { batch = 0, group = 1 };

struct UNetConfig {
    int in_channels = 1;
    int out_classes = 4;
    int depth = 3;
    int base_channels = 8;
    NormKind norm = NormKind::group;
    int groups = 4;
    std::uint64_t seed = 0;

    /// Throws ConfigError when depth < 2, base < 4, or groups do not divide
    /// every level's channel count.
    void validate() const;
    int channels_at(int level) const { return base_channels << level; }
    /// Input height and width must be multiples of this.
    int size_multiple() const { return 1 << (depth - 1); }
    bool operator==(const UNetConfig&) const = default;
};

/// Encoder-decoder with skip connections. Each level is two
/// conv3x3 -> norm -> ReLU blocks; 2x2 max pooling down, 2x2 stride-2
/// transposed convolution up; a final 1x1 convolution feeds a channel softmax.
class UNet {
public:
    explicit UNet(const UNetConfig& cfg);

    const UNetConfig& config() const { return cfg_; }

    /// x is (N, in_channels, H, W); returns (N, out_classes, H, W) probabilities.
    /// Throws ConfigError for incompatible input and NumericalError naming the
    /// first layer whose output is not finite.
    ad::Var forward(const ad::Tensor& x, bool training);

    std::vector<ad::Var>& parameters() { return params_; }
    const std::vector<ad::Var>& parameters() const { return params_; }
    const std::vector<std::string>& parameter_names() const { return names_; }
    std::size_t parameter_count() const;

    std::vector<ad::BatchNormStats>& norm_stats() { return bn_; }
    const std::vector<ad::BatchNormStats>& norm_stats() const { return bn_; }

    void zero_grad();

    /// Closed-form parameter count from layer dimensions.
    static std::size_t analytic_parameter_count(const UNetConfig& cfg);

private:
    struct ConvLayer {
        std::size_t weight, bias, gamma, beta, stats;
    };
    struct UpLayer {
        std::size_t weight, bias;
    };

    std::size_t add_param(const std::string& name, ad::Tensor t);
    ConvLayer add_conv_block(const std::string& name, int in, int out, Rng& rng);
    ad::Var conv_block(const ad::Var& x, const ConvLayer& l, bool training, const std::string& name);

    UNetConfig cfg_;
    std::vector<ad::Var> params_;
    std::vector<std::string> names_;
    std::vector<ad::BatchNormStats> bn_;
    std::vector<ConvLayer> enc_;  // two per level
    std::vector<ConvLayer> dec_;  // two per decoder level, deepest first
    std::vector<UpLayer> up_;     // deepest first
    std::size_t head_w_ = 0, head_b_ = 0;
};

UNet build_unet(const UNetConfig& cfg);

struct AdamState {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t step = 0;

    bool operator==(const AdamState&) const = default;
};

/// Clears gradients, backpropagates `loss`, and applies one Adam update to
/// `params`. Parameters without an incoming gradient are treated as having a
/// zero gradient. Updated values are rounded to float so a saved model
/// reloads exactly. Throws ConfigError for a non-scalar loss and
/// NumericalError for a non-finite gradient.
void backward_and_step(std::vector<ad::Var>& params, const ad::Var& loss, AdamState& opt);
void backward_and_step(UNet& model, const ad::Var& loss, AdamState& opt);

struct GradCheckOptions {
    /// Check at most this many randomly chosen elements (0 = all).
    std::size_t max_elements = 0;
    std::uint64_t seed = 0;
};

/// max_i |analytic_i - numeric_i| / max(|numeric_i|, 1e-6), with central
/// differences of step h. Throws ConfigError when h is outside [1e-5, 1e-2]
/// or f is not scalar-valued.
double grad_check(const std::function<ad::Var(const ad::Var&)>& f, const ad::Tensor& input, double h,
                  const GradCheckOptions& opts = {});
/// Same, perturbing the given parameter leaves in place; f rebuilds the graph.
double grad_check_parameters(const std::function<ad::Var()>& f, std::vector<ad::Var>& params, double h,
                             const GradCheckOptions& opts = {});

// Model file: "MMDL", version, config, parameter count (u64), parameters as
// f32 LE in declaration order, then batch-norm running statistics if any.
void save_model(const std::filesystem::path& path, const UNet& model);
UNet load_model(const std::filesystem::path& path);

// Optimizer sidecar: "MOPT", version, hyperparameters, step, moments (f64 LE).
void save_optimizer(const std::filesystem::path& path, const AdamState& opt);
AdamState load_optimizer(const std::filesystem::path& path);

}  // namespace scribseg::nn
