#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>

#include "scribseg/cpl.hpp"
#include "scribseg/error.hpp"
#include "scribseg/losses.hpp"
#include "scribseg/mcm.hpp"
#include "scribseg/nn.hpp"

using namespace scribseg;
using ad::Tensor;
using ad::Var;

namespace {

Tensor random_probs(Rng& rng, int n, int ch, int h, int w) {
    Tensor t({n, ch, h, w});
    for (auto& v : t.values()) v = rng.normal();
    return ad::softmax_channels(ad::constant(t)).value();
}

ScribbleAnnotation random_scribble(Rng& rng, int h, int w, int k) {
    ScribbleAnnotation s(h, w);
    for (auto& v : s.data) {
        const double u = rng.uniform();
        if (u < 0.1) v = static_cast<std::uint8_t>(1 + rng.below(static_cast<std::uint64_t>(k)));
        else if (u < 0.15) v = kBackground;
        else if (u < 0.2) v = kGlobalCategory;
    }
    return s;
}

// Full per-pixel cross entropy restricted by an explicit annotated-pixel mask.
double pce_oracle(const Tensor& y, const std::vector<ScribbleAnnotation>& scr, bool include_bg) {
    const int n = y.dim(0), ch = y.dim(1), h = y.dim(2), w = y.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    double total = 0.0;
    for (int b = 0; b < n; ++b) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t p = 0; p < plane; ++p) {
            const auto v = scr[static_cast<std::size_t>(b)].data[p];
            const bool annotated = (v >= 1 && v < ch) || (include_bg && v == kBackground);
            if (!annotated) continue;
            double ce = 0.0;
            for (int c = 0; c < ch; ++c) {
                const double target = c == v ? 1.0 : 0.0;
                ce -= target * std::log(y[(static_cast<std::size_t>(b) * ch + c) * plane + p] + 1e-8);
            }
            sum += ce;
            ++count;
        }
        if (count) total += sum / static_cast<double>(count);
    }
    return total / n;
}

std::vector<const ScribbleAnnotation*> ptrs(const std::vector<ScribbleAnnotation>& v) {
    std::vector<const ScribbleAnnotation*> out;
    for (const auto& s : v) out.push_back(&s);
    return out;
}

Var scalar_const(double v) { return ad::constant(Tensor::scalar(v)); }

LossTerms random_terms(Rng& rng) {
    return {scalar_const(rng.uniform(0, 2)), scalar_const(rng.uniform(0, 2)), scalar_const(rng.uniform(0, 1)),
            scalar_const(rng.uniform(0, 1)), scalar_const(rng.uniform(0, 1))};
}

nn::UNetConfig tiny_config() {
    nn::UNetConfig c;
    c.out_classes = 3;
    c.depth = 2;
    c.base_channels = 4;
    c.groups = 2;
    c.seed = 3;
    return c;
}

// One training objective evaluation: y from x, y_m from the masked x, GC-based
// enhancement of y, and all five terms.
TotalLoss full_objective(nn::UNet& model, const Tensor& x, const Tensor& xm, const std::vector<ScribbleAnnotation>& scr,
                         const std::vector<CPLStack>& cpl, const std::vector<BinaryGrid>& masks) {
    const Var y = model.forward(x, true);
    const Var ym = model.forward(xm, true);
    const Var ye = enhance(y, masks);
    std::vector<const CPLStack*> cp;
    for (const auto& s : cpl) cp.push_back(&s);
    LossTerms t;
    t.pce = loss_pce(y, ptrs(scr));
    t.mpce = loss_pce(ym, ptrs(scr));
    t.cc = loss_cc(ym, ye);
    t.en = loss_en(y, ye);
    t.con = loss_con(cp, y);
    return loss_total(t, LossWeights{});
}

}  // namespace

TEST_CASE("pCE of one labelled pixel at probability one half") {
    ScribbleAnnotation s(1, 1);
    s.at(0, 0) = 1;
    const Var y = ad::constant(Tensor({1, 2, 1, 1}, {0.5, 0.5}));
    CHECK(std::abs(loss_pce(y, {&s}).item() - 0.69315) < 1e-5);
}

TEST_CASE("pCE of a perfect prediction is near zero") {
    Rng rng(2);
    const auto s = random_scribble(rng, 8, 8, 3);
    Tensor y({1, 4, 8, 8}, 0.0);
    for (std::size_t p = 0; p < 64; ++p) {
        const auto v = s.data[p];
        y[(v >= 1 && v <= 3 ? v : 0) * 64 + p] = 1.0;
    }
    CHECK(std::abs(loss_pce(ad::constant(y), {&s}, true).item()) < 1e-7);
}

TEST_CASE("pCE matches the masked full cross entropy") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(3));
        std::vector<ScribbleAnnotation> scr;
        for (int b = 0; b < n; ++b) scr.push_back(random_scribble(rng, 7, 9, 3));
        const Tensor y = random_probs(rng, n, 4, 7, 9);
        for (bool bg : {false, true})
            CHECK(std::abs(loss_pce(ad::constant(y), ptrs(scr), bg).item() - pce_oracle(y, scr, bg)) <= 1e-6);
    }
}

TEST_CASE("pCE ignores GC and, by default, background pixels") {
    ScribbleAnnotation s(1, 3);
    s.data = {kBackground, kGlobalCategory, 2};
    const Var y = ad::constant(Tensor({1, 3, 1, 3}, {0.2, 0.3, 0.3, 0.5, 0.3, 0.3, 0.3, 0.4, 0.4}));
    CHECK(loss_pce(y, {&s}).item() == doctest::Approx(-std::log(0.4 + 1e-8)).epsilon(1e-12));
    const double with_bg = 0.5 * (-std::log(0.2 + 1e-8) - std::log(0.4 + 1e-8));
    CHECK(loss_pce(y, {&s}, true).item() == doctest::Approx(with_bg).epsilon(1e-12));
}

TEST_CASE("pCE without annotated pixels is zero") {
    const ScribbleAnnotation s(4, 4);
    Rng rng(1);
    CHECK(loss_pce(ad::constant(random_probs(rng, 1, 3, 4, 4)), {&s}).item() == 0.0);
}

TEST_CASE("pCE rejects codes without an output channel") {
    ScribbleAnnotation s(2, 2);
    s.at(0, 0) = 3;
    Rng rng(1);
    CHECK_THROWS_AS(loss_pce(ad::constant(random_probs(rng, 1, 3, 2, 2)), {&s}), DataError);
    CHECK_THROWS_AS(loss_pce(ad::constant(random_probs(rng, 1, 4, 3, 2)), {&s}), ConfigError);
}

TEST_CASE("scribble supervision loss identities") {
    Rng rng(9);
    std::vector<ScribbleAnnotation> scr{random_scribble(rng, 6, 6, 2), random_scribble(rng, 6, 6, 2)};
    const Var y = ad::constant(random_probs(rng, 2, 3, 6, 6));
    const Var ym = ad::constant(random_probs(rng, 2, 3, 6, 6));
    const double p = loss_pce(y, ptrs(scr)).item();
    CHECK(loss_ss(y, ym, ptrs(scr), 0.0).item() == doctest::Approx(p).epsilon(1e-14));
    CHECK(loss_ss(y, y, ptrs(scr), 0.5).item() == doctest::Approx(1.5 * p).epsilon(1e-12));
    const double want = p + 0.5 * pce_oracle(ym.value(), scr, false);
    CHECK(std::abs(loss_ss(y, ym, ptrs(scr), 0.5).item() - want) <= 1e-6);
}

TEST_CASE("term names round trip") {
    for (Term t : kAllTerms) CHECK(term_from_name(term_name(t)) == t);
    CHECK_THROWS_AS(term_from_name("dice"), ConfigError);
    CHECK(TermSet::only({Term::pce, Term::cc, Term::mpce}).to_string() == "pCE+mpCE+cc");
    CHECK(TermSet::all().to_string() == "pCE+mpCE+cc+en+con");
}

TEST_CASE("total equals the default weighted sum") {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        const LossTerms t = random_terms(rng);
        const auto res = loss_total(t, LossWeights{});
        const double want =
            t.pce.item() + 0.5 * t.mpce.item() + 0.1 * (t.cc.item() + t.en.item() + t.con.item());
        CHECK(std::abs(res.total.item() - want) <= 1e-6);
        CHECK(res.report.total == res.total.item());
        CHECK(res.report.cc == t.cc.item());
        CHECK(res.total.item() >= 0.0);
    }
}

TEST_CASE("only pCE enabled gives pCE") {
    Rng rng(14);
    const LossTerms t = random_terms(rng);
    const auto res = loss_total(t, LossWeights{}, TermSet::only({Term::pce}));
    CHECK(res.total.item() == t.pce.item());
    CHECK(res.report.mpce == 0.0);
    CHECK(res.report.con == 0.0);
}

TEST_CASE("all-zero terms give zero") {
    const LossTerms t{scalar_const(0), scalar_const(0), scalar_const(0), scalar_const(0), scalar_const(0)};
    CHECK(loss_total(t, LossWeights{}).total.item() == 0.0);
}

TEST_CASE("disabling a term equals zeroing its weight bitwise") {
    Rng rng(15);
    for (int trial = 0; trial < 30; ++trial) {
        const LossTerms t = random_terms(rng);
        const Term off = kAllTerms[1 + rng.below(4)];
        TermSet set;
        set.on[static_cast<std::size_t>(off)] = false;
        LossWeights w;
        switch (off) {
            case Term::mpce: w.lambda1 = 0; break;
            case Term::cc: w.lambda2 = 0; break;
            case Term::en: w.lambda3 = 0; break;
            case Term::con: w.lambda4 = 0; break;
            case Term::pce: break;
        }
        const double a = loss_total(t, LossWeights{}, set).total.item();
        const double b = loss_total(t, w).total.item();
        CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
    }
}

TEST_CASE("disabled terms may be omitted") {
    LossTerms t;
    t.pce = scalar_const(0.7);
    CHECK(loss_total(t, LossWeights{}, TermSet::only({Term::pce})).total.item() == 0.7);
    CHECK_THROWS_AS(loss_total(t, LossWeights{}), ConfigError);
}

TEST_CASE("loss_total rejects a disabled pCE and negative weights") {
    Rng rng(16);
    const LossTerms t = random_terms(rng);
    CHECK_THROWS_AS(loss_total(t, LossWeights{}, TermSet::only({Term::cc})), ConfigError);
    LossWeights w;
    w.lambda3 = -0.1;
    CHECK_THROWS_AS(loss_total(t, w), ConfigError);
}

TEST_CASE("a non-finite term is named") {
    Rng rng(17);
    LossTerms t = random_terms(rng);
    t.en = scalar_const(std::numeric_limits<double>::quiet_NaN());
    try {
        loss_total(t, LossWeights{});
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("en") != std::string::npos);
    }
}

TEST_CASE("pCE gradient check on 10 random instances") {
    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<ScribbleAnnotation> scr{random_scribble(rng, 5, 6, 3), random_scribble(rng, 5, 6, 3)};
        Tensor logits({2, 4, 5, 6});
        for (auto& v : logits.values()) v = rng.normal();
        const double err = nn::grad_check(
            [&](const Var& x) { return loss_pce(ad::softmax_channels(x), ptrs(scr), trial % 2 == 0); }, logits, 1e-5);
        CHECK(err <= 1e-4);
    }
}

TEST_CASE("total loss gradient check through the network on 10 instances") {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(29);
    MCMConfig mcm;
    mcm.patch = 4;
    for (int trial = 0; trial < 10; ++trial) {
        auto model = nn::build_unet([&] {
            auto c = tiny_config();
            c.seed = static_cast<std::uint64_t>(trial);
            return c;
        }());
        Tensor x({2, 1, 8, 8}), xm({2, 1, 8, 8});
        std::vector<ScribbleAnnotation> scr;
        std::vector<CPLStack> cpl;
        std::vector<BinaryGrid> masks;
        for (int b = 0; b < 2; ++b) {
            ImageGrid img(8, 8);
            for (auto& v : img.data) v = static_cast<float>(rng.normal());
            scr.push_back(random_scribble(rng, 8, 8, 2));
            cpl.push_back(build_cpl(scr.back(), 2));
            masks.push_back(gc_binary_mask(cpl.back().gc));
            const auto masked = apply_mask(img, sample_mask(patch_weights(scr.back(), mcm), 0.5, rng));
            for (std::size_t p = 0; p < 64; ++p) {
                x[static_cast<std::size_t>(b) * 64 + p] = img.data[p];
                xm[static_cast<std::size_t>(b) * 64 + p] = masked.data[p];
            }
        }
        const double err = nn::grad_check_parameters(
            [&] { return full_objective(model, x, xm, scr, cpl, masks).total; }, model.parameters(), 1e-5,
            {.max_elements = 60, .seed = static_cast<std::uint64_t>(trial)});
        CHECK(err <= 1e-4);
    }
    CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 120.0);
}
