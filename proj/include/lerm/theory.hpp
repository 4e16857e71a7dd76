#pragma once

// Numerical certifiers for the three structural results about prediction
// means: their simplex properties, the bound of the labeled label-encoding
// risk by the empirical risk, and its bound by the entropy.
//
// Each bound is a two-step chain lhs ≥ midpoint ≥ rhs. The first step follows
// from convexity and must hold on every instance ("unconditional"). The second
// step is exactly the stated hypothesis, so it is evaluated as a predicate
// (`assumption_holds`) and the overall bound lhs ≥ rhs is only asserted when
// the predicate is true.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lerm/risks.hpp"

namespace lerm {

inline constexpr double kTheoremTolerance = 1e-9;

enum class TheoremId { t1, t2, t3 };

[[nodiscard]] inline const char* to_string(TheoremId id) noexcept {
    switch (id) {
        case TheoremId::t1: return "T1";
        case TheoremId::t2: return "T2";
        case TheoremId::t3: return "T3";
    }
    return "?";
}

struct TheoremReport {
    TheoremId theorem = TheoremId::t1;
    std::vector<std::pair<std::string, double>> quantities;
    bool unconditional_holds = true;
    bool assumption_holds = false;
    bool conclusion_holds = false;
    /// Every reported inequality is tight (all chain quantities agree within tolerance).
    bool equality = false;
    double tolerance = kTheoremTolerance;
    std::vector<std::string> notes;

    [[nodiscard]] double get(std::string_view name) const {
        for (const auto& [k, v] : quantities)
            if (k == name) return v;
        throw std::out_of_range("TheoremReport: no quantity " + std::string(name));
    }
    /// True unless a step that must hold was violated.
    [[nodiscard]] bool violated() const noexcept {
        return !unconditional_holds || (assumption_holds && !conclusion_holds);
    }
};

namespace detail {

inline double onehot_distance(std::span<const double> row) {
    const auto top = std::max_element(row.begin(), row.end());
    double worst = 0.0;
    for (auto it = row.begin(); it != row.end(); ++it)
        worst = std::max(worst, std::abs(*it - (it == top ? 1.0 : 0.0)));
    return worst;
}

}  // namespace detail

/// Tolerance pairing used for the converse direction: means within `tol` of
/// the identity are expected to force rows within `row_tol` of one-hot.
inline constexpr double kOneHotRowTolerance = 1e-6;

/// Simplex properties of the prediction means plus the one-hot converse.
[[nodiscard]] inline TheoremReport check_theorem1(const ProbBatch& p, double tol = kTheoremTolerance,
                                                  double row_tol = kOneHotRowTolerance) {
    TheoremReport r;
    r.theorem = TheoremId::t1;
    r.tolerance = tol;
    const PredictionMeans means = prediction_means_unlabeled(p);
    const std::size_t C = p.classes();

    double row_sum_err = 0.0;
    double min_entry = 1.0;
    double max_entry = 0.0;
    double identity_err = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < C; ++j) {
            const double v = means.m(c, j);
            s += v;
            min_entry = std::min(min_entry, v);
            max_entry = std::max(max_entry, v);
            identity_err = std::max(identity_err, std::abs(v - (c == j ? 1.0 : 0.0)));
        }
        if (!means.degenerate[c]) row_sum_err = std::max(row_sum_err, std::abs(s - 1.0));
    }
    double max_onehot_dist = 0.0;
    bool exact_onehot = true;
    std::vector<bool> covered(C, false);
    for (std::size_t i = 0; i < p.samples(); ++i) {
        auto row = p.matrix().row(i);
        max_onehot_dist = std::max(max_onehot_dist, detail::onehot_distance(row));
        for (std::size_t j = 0; j < C; ++j) {
            if (row[j] == 1.0) covered[j] = true;
            if (row[j] != 0.0 && row[j] != 1.0) exact_onehot = false;
        }
    }
    const bool covers_all = std::all_of(covered.begin(), covered.end(), [](bool b) { return b; });

    const bool prop1 = row_sum_err <= tol;
    const bool prop2 = min_entry >= -tol && max_entry <= 1.0 + tol;
    bool prop3 = true;
    if (exact_onehot && covers_all) {
        prop3 = identity_err <= tol;
    } else {
        r.notes.emplace_back("property 3 not applicable: batch is not one-hot over all classes");
    }
    r.unconditional_holds = prop1 && prop2 && prop3;
    r.assumption_holds = identity_err <= tol && means.degenerate_count() == 0;
    r.conclusion_holds = max_onehot_dist <= row_tol;
    r.equality = exact_onehot && covers_all && identity_err == 0.0;
    r.notes.emplace_back("converse uses a tolerance ball: means within tol of identity => rows "
                         "within row_tol of one-hot (empirical coupling)");

    r.quantities = {{"row_sum_err", row_sum_err},         {"min_entry", min_entry},
                    {"max_entry", max_entry},             {"identity_err", identity_err},
                    {"max_row_onehot_dist", max_onehot_dist}};
    return r;
}

/// Empirical risk ≥ count-weighted midpoint ≥ labeled label-encoding risk (CE).
[[nodiscard]] inline TheoremReport check_theorem2(const ProbBatch& p,
                                                  std::span<const std::size_t> labels,
                                                  double tol = kTheoremTolerance) {
    TheoremReport r;
    r.theorem = TheoremId::t2;
    r.tolerance = tol;
    const double r_emr = empirical_risk(p, labels);
    const PredictionMeans means = prediction_means_labeled(p, labels);
    const std::size_t C = p.classes();
    const double n = static_cast<double>(p.samples());

    double midpoint = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        if (means.degenerate[c]) {
            r.notes.push_back("class " + std::to_string(c + 1) + " has no labeled samples; excluded");
            continue;
        }
        midpoint += means.mass[c] * encoding_divergence(means.m.row(c), c, Divergence::ce);
    }
    midpoint /= n;
    const double r_ler = label_encoding_risk(means, Divergence::ce);

    r.unconditional_holds = r_emr >= midpoint - tol;
    r.assumption_holds = midpoint >= r_ler;
    r.conclusion_holds = r_emr >= r_ler - tol;
    r.equality = std::abs(r_emr - midpoint) <= tol && std::abs(midpoint - r_ler) <= tol;
    r.quantities = {{"r_emr", r_emr}, {"midpoint", midpoint}, {"r_ler", r_ler}};
    return r;
}

/// Entropy ≥ column-mass-weighted midpoint ≥ label-encoding risk (CE).
[[nodiscard]] inline TheoremReport check_theorem3(const ProbBatch& p, double tol = kTheoremTolerance) {
    TheoremReport r;
    r.theorem = TheoremId::t3;
    r.tolerance = tol;
    const double r_ent = entropy_risk(p);
    const PredictionMeans means = prediction_means_unlabeled(p);
    const std::size_t C = p.classes();
    const double n = static_cast<double>(p.samples());

    double midpoint = 0.0;
    double r_ler = 0.0;
    double mass_dev = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        mass_dev = std::max(mass_dev, std::abs(means.mass[c] / n - 1.0 / static_cast<double>(C)));
        if (means.degenerate[c] || !(means.m(c, c) > 0.0)) {
            r.notes.push_back("class " + std::to_string(c + 1) + " has no prediction mass; excluded");
            continue;
        }
        const double loss = encoding_divergence(means.m.row(c), c, Divergence::ce);
        midpoint += means.mass[c] * loss;
        r_ler += loss;
    }
    midpoint /= n;
    r_ler /= static_cast<double>(C);

    r.unconditional_holds = r_ent >= midpoint - tol;
    r.assumption_holds = midpoint >= r_ler;
    r.conclusion_holds = r_ent >= r_ler - tol;
    r.equality = std::abs(r_ent - midpoint) <= tol && std::abs(midpoint - r_ler) <= tol;
    if (mass_dev <= tol) r.notes.emplace_back("uniform column mass: midpoint equals r_ler");
    r.quantities = {{"r_ent", r_ent},
                    {"midpoint", midpoint},
                    {"r_ler", r_ler},
                    {"column_mass_dev", mass_dev}};
    return r;
}

}  // namespace lerm
