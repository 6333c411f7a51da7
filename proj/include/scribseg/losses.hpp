#pragma once

#include <array>
#include <string>
#include <vector>

#include "scribseg/autodiff.hpp"
#include "scribseg/grid.hpp"

namespace scribseg {

/// Batch mean of the per-item mean of -log(y_label + 1e-8) over annotated
/// pixels: foreground scribble codes, plus background scribble pixels when
/// include_bg. GC and unlabeled pixels never count. An item without annotated
/// pixels contributes 0 and raises a warning. A scribble code with no output
/// channel throws DataError.
ad::Var loss_pce(const ad::Var& y, const std::vector<const ScribbleAnnotation*>& scribbles, bool include_bg = false);

/// pCE(y) + lambda1 * pCE(y_m).
ad::Var loss_ss(const ad::Var& y, const ad::Var& y_m, const std::vector<const ScribbleAnnotation*>& scribbles,
                double lambda1, bool include_bg = false);

enum class Term : int { pce = 0, mpce, cc, en, con };
inline constexpr std::array<Term, 5> kAllTerms = {Term::pce, Term::mpce, Term::cc, Term::en, Term::con};

const char* term_name(Term t);
/// Throws ConfigError for an unknown name.
Term term_from_name(const std::string& name);

struct TermSet {
    std::array<bool, 5> on{true, true, true, true, true};

    static TermSet all() { return {}; }
    static TermSet only(std::initializer_list<Term> terms);
    bool has(Term t) const { return on[static_cast<std::size_t>(t)]; }
    std::string to_string() const;  // e.g. "pCE+cc+mpCE"
    bool operator==(const TermSet&) const = default;
};

struct LossWeights {
    double lambda1 = 0.5;  // masked-image pCE
    double lambda2 = 0.1;  // context consistency
    double lambda3 = 0.1;  // enhanced prediction
    double lambda4 = 0.1;  // continuous pseudo labels

    void validate() const;
};

/// Scalar terms; a term that was not computed may be left empty.
struct LossTerms {
    ad::Var pce, mpce, cc, en, con;
};

struct LossReport {
    double pce = 0, mpce = 0, cc = 0, en = 0, con = 0, total = 0;
};

struct TotalLoss {
    ad::Var total;
    LossReport report;
};

/// pCE + l1*mpCE + l2*cc + l3*en + l4*con; a disabled term enters with weight
/// 0, so disabling equals zeroing its lambda. Throws NumericalError naming the
/// first non-finite term.
TotalLoss loss_total(const LossTerms& terms, const LossWeights& weights, const TermSet& enabled = TermSet::all());

}  // namespace scribseg
