#include "scribseg/losses.hpp"

#include <cmath>

#include "scribseg/error.hpp"

namespace scribseg {

ad::Var loss_pce(const ad::Var& y, const std::vector<const ScribbleAnnotation*>& scribbles, bool include_bg) {
    if (y.value().rank() != 4) throw ConfigError("loss_pce: y must be (N,C,H,W)");
    const int n = y.value().dim(0), ch = y.value().dim(1), h = y.value().dim(2), w = y.value().dim(3);
    if (static_cast<int>(scribbles.size()) != n) throw ConfigError("loss_pce: one scribble per batch item required");
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    ad::Tensor weight({n, ch, h, w}, 0.0);
    for (int b = 0; b < n; ++b) {
        const ScribbleAnnotation& s = *scribbles[static_cast<std::size_t>(b)];
        if (!s.same_shape(h, w)) throw ConfigError("loss_pce: scribble and prediction dims differ");
        std::size_t count = 0;
        for (std::size_t p = 0; p < plane; ++p) {
            const auto v = s.data[p];
            if (v == kUnlabeled || v == kGlobalCategory || (v == kBackground && !include_bg)) continue;
            if (v >= ch) throw DataError("loss_pce: scribble code " + std::to_string(v) + " has no output channel");
            ++count;
        }
        if (count == 0) {
            warn("loss_pce: a batch item has no annotated pixels; it contributes 0");
            continue;
        }
        const double wv = 1.0 / (static_cast<double>(count) * n);
        for (std::size_t p = 0; p < plane; ++p) {
            const auto v = s.data[p];
            if (v == kUnlabeled || v == kGlobalCategory || (v == kBackground && !include_bg)) continue;
            weight[(static_cast<std::size_t>(b) * ch + v) * plane + p] = wv;
        }
    }
    return ad::scale(ad::sum(ad::mul_const(ad::log(y, 1e-8), weight)), -1.0);
}

ad::Var loss_ss(const ad::Var& y, const ad::Var& y_m, const std::vector<const ScribbleAnnotation*>& scribbles,
                double lambda1, bool include_bg) {
    return ad::add(loss_pce(y, scribbles, include_bg), ad::scale(loss_pce(y_m, scribbles, include_bg), lambda1));
}

const char* term_name(Term t) {
    switch (t) {
        case Term::pce: return "pCE";
        case Term::mpce: return "mpCE";
        case Term::cc: return "cc";
        case Term::en: return "en";
        case Term::con: return "con";
    }
    return "?";
}

Term term_from_name(const std::string& name) {
    for (Term t : kAllTerms)
        if (name == term_name(t)) return t;
    throw ConfigError("unknown loss term '" + name + "' (expected pCE, mpCE, cc, en or con)");
}

TermSet TermSet::only(std::initializer_list<Term> terms) {
    TermSet s;
    s.on.fill(false);
    for (Term t : terms) s.on[static_cast<std::size_t>(t)] = true;
    return s;
}

std::string TermSet::to_string() const {
    std::string out;
    for (Term t : kAllTerms)
        if (has(t)) out += (out.empty() ? "" : "+") + std::string(term_name(t));
    return out;
}

void LossWeights::validate() const {
    for (double l : {lambda1, lambda2, lambda3, lambda4})
        if (!(l >= 0.0)) throw ConfigError("loss weights must be >= 0");
}

TotalLoss loss_total(const LossTerms& terms, const LossWeights& weights, const TermSet& enabled) {
    weights.validate();
    if (!enabled.has(Term::pce)) throw ConfigError("pCE must always be enabled");
    if (!terms.pce) throw ConfigError("loss_total: pCE term missing");

    const ad::Var* parts[5] = {&terms.pce, &terms.mpce, &terms.cc, &terms.en, &terms.con};
    const double lambdas[5] = {1.0, weights.lambda1, weights.lambda2, weights.lambda3, weights.lambda4};
    double values[5] = {0, 0, 0, 0, 0};
    for (Term t : kAllTerms) {
        const auto i = static_cast<std::size_t>(t);
        const ad::Var& v = *parts[i];
        if (!v) {
            if (enabled.has(t) && lambdas[i] != 0.0)
                throw ConfigError(std::string("loss_total: enabled term ") + term_name(t) + " missing");
            continue;
        }
        if (v.numel() != 1) throw ConfigError(std::string("loss term ") + term_name(t) + " is not a scalar");
        values[i] = v.item();
        if (!std::isfinite(values[i])) throw NumericalError(std::string("loss term ") + term_name(t) + " is not finite");
    }

    ad::Var total = terms.pce;
    for (std::size_t i = 1; i < 5; ++i) {
        if (!*parts[i]) continue;
        const bool on = enabled.has(static_cast<Term>(i));
        total = ad::add(total, ad::scale(*parts[i], on ? lambdas[i] : 0.0));
        if (!on) values[i] = 0.0;
    }
    if (!std::isfinite(total.item())) throw NumericalError("total loss is not finite");
    // Disabled terms are reported as 0 so the report sums to the total.
    LossReport r{values[0], values[1], values[2], values[3], values[4], total.item()};
    return {total, r};
}

}  // namespace scribseg
