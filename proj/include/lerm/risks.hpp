#pragma once

// Risk functionals over batches of predicted category distributions:
// empirical (cross-entropy) risk, prediction means, label-encoding risk and
// entropy, each with its analytic gradient with respect to the batch.
//
// Class indices are zero-based throughout the library; files and CLI output
// use one-based class ids.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lerm/numerics.hpp"

namespace lerm {

inline constexpr double kProbTolerance = 1e-9;
inline constexpr double kDefaultMassEps = 1e-12;
inline constexpr double kLogClamp = 1e-30;

/// An n×C row-stochastic matrix. Construction validates the simplex invariant.
class ProbBatch {
public:
    ProbBatch() = default;
    explicit ProbBatch(Matrix p) : p_(std::move(p)) { validate(); }

    [[nodiscard]] std::size_t samples() const noexcept { return p_.rows(); }
    [[nodiscard]] std::size_t classes() const noexcept { return p_.cols(); }
    [[nodiscard]] const Matrix& matrix() const noexcept { return p_; }
    double operator()(std::size_t i, std::size_t c) const noexcept { return p_(i, c); }

private:
    void validate() const {
        for (std::size_t i = 0; i < p_.rows(); ++i) {
            double sum = 0.0;
            for (double v : p_.row(i)) {
                if (!std::isfinite(v) || v < 0.0 || v > 1.0)
                    throw std::invalid_argument("ProbBatch: row " + std::to_string(i) +
                                                " has an entry outside [0, 1]");
                sum += v;
            }
            if (std::abs(sum - 1.0) > kProbTolerance)
                throw std::invalid_argument("ProbBatch: row " + std::to_string(i) + " sums to " +
                                            std::to_string(sum));
        }
    }

    Matrix p_;
};

enum class Divergence { l1, l2, ce };

[[nodiscard]] inline const char* to_string(Divergence d) noexcept {
    switch (d) {
        case Divergence::l1: return "l1";
        case Divergence::l2: return "l2";
        case Divergence::ce: return "ce";
    }
    return "?";
}

/// Row c estimates the label encoding of class c.
struct PredictionMeans {
    Matrix m;                       // C×C
    std::vector<double> mass;       // column mass (unlabeled) or sample count (labeled)
    std::vector<bool> degenerate;   // row c had no usable mass

    [[nodiscard]] std::size_t classes() const noexcept { return m.rows(); }
    [[nodiscard]] std::size_t degenerate_count() const noexcept {
        return static_cast<std::size_t>(std::count(degenerate.begin(), degenerate.end(), true));
    }
};

/// Divergence between an estimated encoding row and the one-hot e_c.
[[nodiscard]] inline double encoding_divergence(std::span<const double> row, std::size_t c,
                                                Divergence kind) {
    double acc = 0.0;
    switch (kind) {
        case Divergence::l1:
            for (std::size_t j = 0; j < row.size(); ++j)
                acc += std::abs(row[j] - (j == c ? 1.0 : 0.0));
            return acc;
        case Divergence::l2:
            for (std::size_t j = 0; j < row.size(); ++j) {
                const double d = row[j] - (j == c ? 1.0 : 0.0);
                acc += d * d;
            }
            return acc;
        case Divergence::ce:
            if (!(row[c] > 0.0))
                throw std::domain_error("label_encoding_risk: zero diagonal mean for class " +
                                        std::to_string(c + 1) + " under cross-entropy");
            return -std::log(row[c]);
    }
    return acc;
}

/// ∂𝓛(row, e_c)/∂row, written into `out`. L1 uses sign(0) = 0; CE clamps the log.
inline void encoding_divergence_grad(std::span<const double> row, std::size_t c, Divergence kind,
                                     std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    switch (kind) {
        case Divergence::l1:
            for (std::size_t j = 0; j < row.size(); ++j) {
                const double d = row[j] - (j == c ? 1.0 : 0.0);
                out[j] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            }
            break;
        case Divergence::l2:
            for (std::size_t j = 0; j < row.size(); ++j)
                out[j] = 2.0 * (row[j] - (j == c ? 1.0 : 0.0));
            break;
        case Divergence::ce:
            out[c] = -1.0 / std::max(row[c], kLogClamp);
            break;
    }
}

// Unchecked entry points operate on raw matrices so finite-difference probes
// may step off the simplex. The ProbBatch overloads below are the public API.
namespace raw {

inline PredictionMeans prediction_means_unlabeled(const Matrix& p, double eps) {
    const std::size_t n = p.rows();
    const std::size_t C = p.cols();
    PredictionMeans out{Matrix(C, C), std::vector<double>(C, 0.0), std::vector<bool>(C, false)};
    for (std::size_t i = 0; i < n; ++i) {
        auto pi = p.row(i);
        for (std::size_t c = 0; c < C; ++c) {
            const double w = pi[c];
            out.mass[c] += w;
            auto mc = out.m.row(c);
            for (std::size_t j = 0; j < C; ++j) mc[j] += w * pi[j];
        }
    }
    for (std::size_t c = 0; c < C; ++c) {
        auto mc = out.m.row(c);
        if (out.mass[c] < eps) {
            out.degenerate[c] = true;
            std::fill(mc.begin(), mc.end(), 1.0 / static_cast<double>(C));
            continue;
        }
        for (double& v : mc) v /= out.mass[c];
    }
    return out;
}

inline double label_encoding_risk(const PredictionMeans& m, Divergence kind) {
    const std::size_t C = m.classes();
    double acc = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        if (m.degenerate[c]) continue;
        acc += encoding_divergence(m.m.row(c), c, kind);
    }
    return acc / static_cast<double>(C);
}

/// Gradient of (1/C)Σ_c 𝓛(m_c, e_c) through the unlabeled prediction means.
///
/// With H_cj = (1/C)·∂𝓛/∂m_cj / mass_c the chain rule gives
///   ∂R/∂p_ik = Σ_j H_kj (p_ij − m_kj) + Σ_c p_ic H_ck,
/// the first term from p_ik acting as a weight of row k, the second from p_ik
/// appearing as a component of every row.
inline Matrix label_encoding_risk_grad(const Matrix& p, Divergence kind, double eps) {
    const std::size_t n = p.rows();
    const std::size_t C = p.cols();
    const PredictionMeans means = prediction_means_unlabeled(p, eps);
    Matrix H(C, C);
    std::vector<double> h_dot_m(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        if (means.degenerate[c]) continue;
        auto hc = H.row(c);
        encoding_divergence_grad(means.m.row(c), c, kind, hc);
        const double scale = 1.0 / (static_cast<double>(C) * means.mass[c]);
        for (std::size_t j = 0; j < C; ++j) {
            hc[j] *= scale;
            h_dot_m[c] += hc[j] * means.m(c, j);
        }
    }
    Matrix grad(n, C);
    for (std::size_t i = 0; i < n; ++i) {
        auto pi = p.row(i);
        auto gi = grad.row(i);
        for (std::size_t k = 0; k < C; ++k) {
            double as_weight = 0.0;
            double as_component = 0.0;
            for (std::size_t j = 0; j < C; ++j) {
                as_weight += H(k, j) * pi[j];
                as_component += pi[j] * H(j, k);
            }
            gi[k] = as_weight - h_dot_m[k] + as_component;
        }
    }
    return grad;
}

inline double entropy_risk(const Matrix& p) {
    if (p.rows() == 0) throw std::invalid_argument("entropy_risk: empty batch");
    double acc = 0.0;
    for (double v : p.values())
        if (v > 0.0) acc -= v * std::log(v);
    return acc / static_cast<double>(p.rows());
}

inline Matrix entropy_risk_grad(const Matrix& p) {
    if (p.rows() == 0) throw std::invalid_argument("entropy_risk_grad: empty batch");
    const double inv_n = 1.0 / static_cast<double>(p.rows());
    Matrix grad(p.rows(), p.cols());
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double v = p.values()[k];
        grad.values()[k] = v > 0.0 ? -inv_n * (std::log(v) + 1.0) : 0.0;
    }
    return grad;
}

}  // namespace raw

inline void require_labels(std::span<const std::size_t> labels, std::size_t rows,
                           std::size_t classes, const char* what) {
    if (labels.size() != rows)
        throw std::invalid_argument(std::string(what) + ": " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(rows) + " rows");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] >= classes)
            throw std::out_of_range(std::string(what) + ": label " + std::to_string(labels[i] + 1) +
                                    " at row " + std::to_string(i) + " outside 1.." +
                                    std::to_string(classes));
}

/// Probability-weighted mean of the batch for each class (row c = m_c).
/// Classes whose column mass falls below `eps` come back uniform and flagged.
[[nodiscard]] inline PredictionMeans prediction_means_unlabeled(const ProbBatch& p,
                                                                double eps = kDefaultMassEps) {
    if (p.classes() < 2) throw std::invalid_argument("prediction_means: need at least two classes");
    if (!(eps > 0.0)) throw std::invalid_argument("prediction_means: eps must be positive");
    return raw::prediction_means_unlabeled(p.matrix(), eps);
}

/// Per-class average of predictions over the samples carrying that label.
[[nodiscard]] inline PredictionMeans prediction_means_labeled(const ProbBatch& p,
                                                              std::span<const std::size_t> labels) {
    const std::size_t C = p.classes();
    if (C < 2) throw std::invalid_argument("prediction_means: need at least two classes");
    require_labels(labels, p.samples(), C, "prediction_means_labeled");
    PredictionMeans out{Matrix(C, C), std::vector<double>(C, 0.0), std::vector<bool>(C, false)};
    for (std::size_t i = 0; i < p.samples(); ++i) {
        const std::size_t c = labels[i];
        out.mass[c] += 1.0;
        auto mc = out.m.row(c);
        auto pi = p.matrix().row(i);
        for (std::size_t j = 0; j < C; ++j) mc[j] += pi[j];
    }
    for (std::size_t c = 0; c < C; ++c) {
        auto mc = out.m.row(c);
        if (out.mass[c] == 0.0) {
            out.degenerate[c] = true;
            std::fill(mc.begin(), mc.end(), 1.0 / static_cast<double>(C));
            continue;
        }
        for (double& v : mc) v /= out.mass[c];
    }
    return out;
}

/// (1/C)Σ_c 𝓛(m_c, e_c); degenerate rows contribute zero.
[[nodiscard]] inline double label_encoding_risk(const PredictionMeans& m, Divergence kind) {
    return raw::label_encoding_risk(m, kind);
}

[[nodiscard]] inline double entropy_risk(const ProbBatch& p) { return raw::entropy_risk(p.matrix()); }

/// Mean cross-entropy of the predictions against their labels.
[[nodiscard]] inline double empirical_risk(const ProbBatch& p, std::span<const std::size_t> labels) {
    require_labels(labels, p.samples(), p.classes(), "empirical_risk");
    if (p.samples() == 0) throw std::invalid_argument("empirical_risk: empty batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.samples(); ++i) {
        const double q = p(i, labels[i]);
        if (!(q > 0.0))
            throw std::domain_error("empirical_risk: zero probability at true class for row " +
                                    std::to_string(i));
        acc -= std::log(q);
    }
    return acc / static_cast<double>(p.samples());
}

/// Analytic ∂R_ler/∂p. Under CE a zero diagonal mean is clamped at 1e-30 here
/// instead of raising as the risk value does.
[[nodiscard]] inline Matrix label_encoding_risk_grad(const ProbBatch& p, Divergence kind,
                                                     double eps = kDefaultMassEps) {
    if (p.classes() < 2) throw std::invalid_argument("label_encoding_risk_grad: need two classes");
    return raw::label_encoding_risk_grad(p.matrix(), kind, eps);
}

[[nodiscard]] inline Matrix entropy_risk_grad(const ProbBatch& p) {
    return raw::entropy_risk_grad(p.matrix());
}

}  // namespace lerm
