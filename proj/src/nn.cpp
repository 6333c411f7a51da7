#include "scribseg/nn.hpp"

#include <algorithm>
#include <cmath>

#include "scribseg/binio.hpp"
#include "scribseg/error.hpp"

namespace scribseg::nn {

namespace {

constexpr std::uint8_t kModelVersion = 1;
constexpr std::uint8_t kOptimizerVersion = 1;

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

ad::Tensor he_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
    ad::Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / fan_in);
    for (auto& v : t.values()) v = round_f32(rng.uniform(-bound, bound));
    return t;
}

void check_finite(const ad::Var& v, const std::string& layer) {
    if (!v.value().all_finite()) throw NumericalError("non-finite activation after layer " + layer);
}

}  // namespace

void UNetConfig::validate() const {
    if (in_channels < 1) throw ConfigError("UNetConfig: in_channels must be >= 1");
    if (out_classes < 2) throw ConfigError("UNetConfig: out_classes must be >= 2");
    if (depth < 2) throw ConfigError("UNetConfig: depth must be >= 2");
    if (depth > 8) throw ConfigError("UNetConfig: depth must be <= 8");
    if (base_channels < 4) throw ConfigError("UNetConfig: base_channels must be >= 4");
    if (norm == NormKind::group && (groups < 1 || base_channels % groups != 0))
        throw ConfigError("UNetConfig: groups must divide base_channels");
}

std::size_t UNet::add_param(const std::string& name, ad::Tensor t) {
    params_.push_back(ad::parameter(std::move(t)));
    names_.push_back(name);
    return params_.size() - 1;
}

UNet::ConvLayer UNet::add_conv_block(const std::string& name, int in, int out, Rng& rng) {
    ConvLayer l{};
    l.weight = add_param(name + ".weight", he_uniform({out, in, 3, 3}, in * 9, rng));
    l.bias = add_param(name + ".bias", ad::Tensor({out}, 0.0));
    l.gamma = add_param(name + ".gamma", ad::Tensor({out}, 1.0));
    l.beta = add_param(name + ".beta", ad::Tensor({out}, 0.0));
    l.stats = bn_.size();
    if (cfg_.norm == NormKind::batch) bn_.push_back({ad::Tensor({out}, 0.0), ad::Tensor({out}, 1.0), 0.1});
    return l;
}

UNet::UNet(const UNetConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    int in = cfg_.in_channels;
    for (int l = 0; l < cfg_.depth; ++l) {
        const int c = cfg_.channels_at(l);
        enc_.push_back(add_conv_block("enc" + std::to_string(l) + ".conv1", in, c, rng));
        enc_.push_back(add_conv_block("enc" + std::to_string(l) + ".conv2", c, c, rng));
        in = c;
    }
    for (int l = cfg_.depth - 2; l >= 0; --l) {
        const int c = cfg_.channels_at(l);
        const std::string p = "dec" + std::to_string(l);
        // Each transposed-conv output sums one tap from every input channel.
        UpLayer u{};
        u.weight = add_param(p + ".up.weight", he_uniform({2 * c, c, 2, 2}, 2 * c, rng));
        u.bias = add_param(p + ".up.bias", ad::Tensor({c}, 0.0));
        up_.push_back(u);
        dec_.push_back(add_conv_block(p + ".conv1", 2 * c, c, rng));
        dec_.push_back(add_conv_block(p + ".conv2", c, c, rng));
    }
    const int c0 = cfg_.channels_at(0);
    head_w_ = add_param("head.weight", he_uniform({cfg_.out_classes, c0, 1, 1}, c0, rng));
    head_b_ = add_param("head.bias", ad::Tensor({cfg_.out_classes}, 0.0));
}

std::size_t UNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
}

std::size_t UNet::analytic_parameter_count(const UNetConfig& cfg) {
    // conv3x3 + bias + two affine norm vectors per block.
    auto block = [](std::size_t in, std::size_t out) { return 9 * in * out + out + 2 * out; };
    std::size_t n = 0;
    std::size_t in = static_cast<std::size_t>(cfg.in_channels);
    for (int l = 0; l < cfg.depth; ++l) {
        const std::size_t c = static_cast<std::size_t>(cfg.channels_at(l));
        n += block(in, c) + block(c, c);
        in = c;
    }
    for (int l = cfg.depth - 2; l >= 0; --l) {
        const std::size_t c = static_cast<std::size_t>(cfg.channels_at(l));
        n += 4 * (2 * c) * c + c;
        n += block(2 * c, c) + block(c, c);
    }
    const std::size_t c0 = static_cast<std::size_t>(cfg.channels_at(0));
    return n + c0 * cfg.out_classes + cfg.out_classes;
}

ad::Var UNet::conv_block(const ad::Var& x, const ConvLayer& l, bool training, const std::string& name) {
    ad::Var h = ad::conv2d(x, params_[l.weight], params_[l.bias]);
    check_finite(h, name + ".conv");
    if (cfg_.norm == NormKind::group)
        h = ad::group_norm(h, params_[l.gamma], params_[l.beta], cfg_.groups);
    else
        h = ad::batch_norm(h, params_[l.gamma], params_[l.beta], bn_[l.stats], training);
    check_finite(h, name + ".norm");
    return ad::relu(h);
}

ad::Var UNet::forward(const ad::Tensor& x, bool training) {
    if (x.rank() != 4 || x.dim(1) != cfg_.in_channels)
        throw ConfigError("UNet input must be (N," + std::to_string(cfg_.in_channels) + ",H,W), got " +
                          x.shape_string());
    const int m = cfg_.size_multiple();
    if (x.dim(0) < 1 || x.dim(2) < m || x.dim(3) < m || x.dim(2) % m || x.dim(3) % m)
        throw ConfigError("UNet input dims " + x.shape_string() + " must be positive multiples of " +
                          std::to_string(m));
    if (!x.all_finite()) throw NumericalError("non-finite values in network input");

    std::vector<ad::Var> skips;
    ad::Var h = ad::constant(x);
    for (int l = 0; l < cfg_.depth; ++l) {
        const std::string p = "enc" + std::to_string(l);
        h = conv_block(h, enc_[2 * l], training, p + ".conv1");
        h = conv_block(h, enc_[2 * l + 1], training, p + ".conv2");
        if (l + 1 < cfg_.depth) {
            skips.push_back(h);
            h = ad::maxpool2(h);
        }
    }
    for (int i = 0; i < cfg_.depth - 1; ++i) {
        const int l = cfg_.depth - 2 - i;
        const std::string p = "dec" + std::to_string(l);
        h = ad::upconv2x2(h, params_[up_[i].weight], params_[up_[i].bias]);
        check_finite(h, p + ".up");
        h = ad::concat_channels(skips[static_cast<std::size_t>(l)], h);
        h = conv_block(h, dec_[2 * i], training, p + ".conv1");
        h = conv_block(h, dec_[2 * i + 1], training, p + ".conv2");
    }
    h = ad::conv2d(h, params_[head_w_], params_[head_b_]);
    check_finite(h, "head");
    h = ad::softmax_channels(h);
    check_finite(h, "softmax");
    return h;
}

void UNet::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

UNet build_unet(const UNetConfig& cfg) { return UNet(cfg); }

void backward_and_step(std::vector<ad::Var>& params, const ad::Var& loss, AdamState& opt) {
    if (loss.numel() != 1) throw ConfigError("loss must be a scalar, got shape " + loss.value().shape_string());
    for (auto& p : params) p.zero_grad();
    ad::backward(loss);

    if (opt.m.size() != params.size()) {
        opt.m.assign(params.size(), {});
        opt.v.assign(params.size(), {});
        for (std::size_t i = 0; i < params.size(); ++i) {
            opt.m[i].assign(params[i].numel(), 0.0);
            opt.v[i].assign(params[i].numel(), 0.0);
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (opt.m[i].size() != params[i].numel()) throw ConfigError("optimizer state does not match parameters");
        if (params[i].has_grad() && !params[i].grad().all_finite())
            throw NumericalError("non-finite gradient for parameter " + std::to_string(i));
    }

    ++opt.step;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& w = params[i].mutable_value();
        const bool has = params[i].has_grad();
        auto& m = opt.m[i];
        auto& v = opt.v[i];
        for (std::size_t k = 0; k < w.numel(); ++k) {
            const double g = has ? params[i].grad()[k] : 0.0;
            m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g;
            v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g * g;
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            w[k] = round_f32(w[k] - opt.learning_rate * mhat / (std::sqrt(vhat) + opt.eps));
        }
    }
}

void backward_and_step(UNet& model, const ad::Var& loss, AdamState& opt) {
    backward_and_step(model.parameters(), loss, opt);
}

namespace {

struct Slot {
    std::size_t param, index;
};

std::vector<Slot> choose_slots(const std::vector<ad::Var>& params, const GradCheckOptions& opts) {
    std::vector<Slot> all;
    for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t i = 0; i < params[p].numel(); ++i) all.push_back({p, i});
    if (opts.max_elements == 0 || opts.max_elements >= all.size()) return all;
    // Partial Fisher-Yates, then restore a stable order.
    Rng rng(opts.seed);
    for (std::size_t i = 0; i < opts.max_elements; ++i) {
        const std::size_t j = i + rng.below(all.size() - i);
        std::swap(all[i], all[j]);
    }
    all.resize(opts.max_elements);
    std::sort(all.begin(), all.end(), [](const Slot& a, const Slot& b) {
        return a.param != b.param ? a.param < b.param : a.index < b.index;
    });
    return all;
}

}  // namespace

double grad_check_parameters(const std::function<ad::Var()>& f, std::vector<ad::Var>& params, double h,
                             const GradCheckOptions& opts) {
    if (!(h >= 1e-5 && h <= 1e-2)) throw ConfigError("grad_check step must lie in [1e-5, 1e-2]");
    for (auto& p : params) p.zero_grad();
    const ad::Var loss = f();
    if (loss.numel() != 1) throw ConfigError("grad_check needs a scalar-valued function");
    ad::backward(loss);

    std::vector<ad::Tensor> analytic;
    for (const auto& p : params) analytic.push_back(p.has_grad() ? p.grad() : ad::Tensor(p.shape(), 0.0));

    double worst = 0.0;
    for (const Slot& s : choose_slots(params, opts)) {
        double& x = params[s.param].mutable_value()[s.index];
        const double x0 = x;
        x = x0 + h;
        const double fp = f().item();
        x = x0 - h;
        const double fm = f().item();
        x = x0;
        const double numeric = (fp - fm) / (2.0 * h);
        const double err = std::abs(analytic[s.param][s.index] - numeric) / std::max(std::abs(numeric), 1e-6);
        worst = std::max(worst, err);
    }
    for (auto& p : params) p.zero_grad();
    return worst;
}

double grad_check(const std::function<ad::Var(const ad::Var&)>& f, const ad::Tensor& input, double h,
                  const GradCheckOptions& opts) {
    std::vector<ad::Var> params{ad::parameter(input)};
    return grad_check_parameters([&] { return f(params[0]); }, params, h, opts);
}

void save_model(const std::filesystem::path& path, const UNet& model) {
    const auto& c = model.config();
    binio::Writer w;
    w.bytes("MMDL", 4);
    w.u8(kModelVersion);
    w.u32(static_cast<std::uint32_t>(c.in_channels));
    w.u32(static_cast<std::uint32_t>(c.out_classes));
    w.u32(static_cast<std::uint32_t>(c.depth));
    w.u32(static_cast<std::uint32_t>(c.base_channels));
    w.u8(static_cast<std::uint8_t>(c.norm));
    w.u32(static_cast<std::uint32_t>(c.groups));
    w.u64(c.seed);
    w.u64(model.parameter_count());
    for (const auto& p : model.parameters())
        for (double v : p.value().values()) w.f32(static_cast<float>(v));
    for (const auto& s : model.norm_stats()) {
        for (double v : s.running_mean.values()) w.f64(v);
        for (double v : s.running_var.values()) w.f64(v);
    }
    w.save(path);
}

UNet load_model(const std::filesystem::path& path) {
    auto r = binio::Reader::open(path, "model file " + path.string());
    if (!r.magic("MMDL")) throw DataError("model file " + path.string() + ": bad magic");
    const auto version = r.u8();
    if (version != kModelVersion) throw DataError("model file: unsupported version " + std::to_string(version));
    UNetConfig c;
    c.in_channels = static_cast<int>(r.u32());
    c.out_classes = static_cast<int>(r.u32());
    c.depth = static_cast<int>(r.u32());
    c.base_channels = static_cast<int>(r.u32());
    const auto norm = r.u8();
    if (norm > 1) throw DataError("model file: unknown norm kind " + std::to_string(norm));
    c.norm = static_cast<NormKind>(norm);
    c.groups = static_cast<int>(r.u32());
    c.seed = r.u64();
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw DataError(std::string("model file: invalid config: ") + e.what());
    }
    UNet model(c);
    const std::uint64_t count = r.u64();
    if (count != model.parameter_count())
        throw DataError("model file: parameter count " + std::to_string(count) + " does not match config (" +
                        std::to_string(model.parameter_count()) + ")");
    std::size_t stats_values = 0;
    for (const auto& s : model.norm_stats()) stats_values += 2 * s.running_mean.numel();
    const std::size_t expected = r.position() + 4 * count + 8 * stats_values;
    if (r.size() != expected)
        throw DataError("model file " + path.string() + " is " + std::to_string(r.size()) + " bytes, expected " +
                        std::to_string(expected));
    for (auto& p : model.parameters())
        for (auto& v : p.mutable_value().values()) v = r.f32();
    for (auto& s : model.norm_stats()) {
        for (auto& v : s.running_mean.values()) v = r.f64();
        for (auto& v : s.running_var.values()) v = r.f64();
    }
    return model;
}

void save_optimizer(const std::filesystem::path& path, const AdamState& opt) {
    binio::Writer w;
    w.bytes("MOPT", 4);
    w.u8(kOptimizerVersion);
    w.f64(opt.learning_rate);
    w.f64(opt.beta1);
    w.f64(opt.beta2);
    w.f64(opt.eps);
    w.u64(opt.step);
    w.u64(opt.m.size());
    for (std::size_t i = 0; i < opt.m.size(); ++i) {
        w.u64(opt.m[i].size());
        for (double v : opt.m[i]) w.f64(v);
        for (double v : opt.v[i]) w.f64(v);
    }
    w.save(path);
}

AdamState load_optimizer(const std::filesystem::path& path) {
    auto r = binio::Reader::open(path, "optimizer file " + path.string());
    if (!r.magic("MOPT")) throw DataError("optimizer file " + path.string() + ": bad magic");
    const auto version = r.u8();
    if (version != kOptimizerVersion)
        throw DataError("optimizer file: unsupported version " + std::to_string(version));
    AdamState opt;
    opt.learning_rate = r.f64();
    opt.beta1 = r.f64();
    opt.beta2 = r.f64();
    opt.eps = r.f64();
    opt.step = r.u64();
    const std::uint64_t n = r.u64();
    opt.m.resize(n);
    opt.v.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::uint64_t k = r.u64();
        r.need(16 * k);
        opt.m[i].resize(k);
        opt.v[i].resize(k);
        for (auto& v : opt.m[i]) v = r.f64();
        for (auto& v : opt.v[i]) v = r.f64();
    }
    if (r.remaining() != 0) throw DataError("optimizer file has trailing bytes");
    return opt;
}

}  // namespace scribseg::nn
