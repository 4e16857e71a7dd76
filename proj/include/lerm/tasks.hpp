#pragma once

// Seeded synthetic scenarios: Gaussian blobs for semi-supervised learning
// (balanced and class-imbalanced), a shifted/rotated target domain for
// unsupervised adaptation, and two heterogeneous projections of shared latent
// blobs for semi-supervised heterogeneous adaptation. Also the weak/strong
// perturbation pair applied to vector inputs.
//
// Every generator is a pure function of (rng state, arguments). Samples are
// stored class-major within each split; training loaders shuffle.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lerm/format.hpp"
#include "lerm/numerics.hpp"

namespace lerm {

enum class TaskKind { ssl, ssl_imbalanced, uda, shda };

[[nodiscard]] inline const char* to_string(TaskKind k) noexcept {
    switch (k) {
        case TaskKind::ssl: return "ssl";
        case TaskKind::ssl_imbalanced: return "ssl_imbalanced";
        case TaskKind::uda: return "uda";
        case TaskKind::shda: return "shda";
    }
    return "?";
}

struct LabeledSet {
    Matrix x;
    std::vector<std::size_t> labels;

    [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
};

struct TaskMeta {
    TaskKind kind = TaskKind::ssl;
    std::size_t num_classes = 0;
    std::size_t dim = 0;         // target / main feature dimension
    std::size_t source_dim = 0;  // 0 when there is no source domain
    std::vector<std::size_t> labeled_counts;
    std::vector<std::size_t> unlabeled_counts;
    std::vector<std::size_t> test_counts;
    std::vector<std::size_t> source_counts;
    /// Set when no labeled target samples exist (allowed, e.g. source-free runs).
    bool no_labeled_samples = false;
};

struct TaskBundle {
    TaskMeta meta;
    LabeledSet labeled;
    Matrix unlabeled;
    /// Ground truth of the unlabeled split, for audits only; never used in training.
    std::vector<std::size_t> unlabeled_truth;
    LabeledSet test;
    std::optional<LabeledSet> source;
    /// Class centres in the space the blobs were drawn in (latent space for SHDA).
    Matrix class_means;
    /// SHDA only: latent → source / target feature maps.
    Matrix source_map;
    Matrix target_map;
};

[[nodiscard]] inline std::vector<std::size_t> class_histogram(std::span<const std::size_t> labels,
                                                              std::size_t classes) {
    std::vector<std::size_t> h(classes, 0);
    for (auto l : labels) {
        if (l >= classes) throw std::out_of_range("class_histogram: label out of range");
        ++h[l];
    }
    return h;
}

namespace detail {

inline void require_classes(std::size_t C) {
    if (C < 2) throw std::invalid_argument("task generator: need at least two classes");
}

inline void require_spread(double spread) {
    if (!(spread >= 0.0) || !std::isfinite(spread))
        throw std::invalid_argument("task generator: spread must be finite and non-negative");
}

/// C unit-norm class centres, each an isotropic Gaussian direction.
inline Matrix unit_sphere_means(Rng& rng, std::size_t C, std::size_t dim) {
    if (dim == 0) throw std::invalid_argument("task generator: dim must be positive");
    Matrix means(C, dim);
    for (std::size_t c = 0; c < C; ++c) {
        auto row = means.row(c);
        double norm = 0.0;
        while (norm == 0.0) {
            norm = 0.0;
            for (double& v : row) {
                v = rng.normal();
                norm += v * v;
            }
            norm = std::sqrt(norm);
        }
        for (double& v : row) v /= norm;
    }
    return means;
}

/// counts[c] draws of means[c] + Normal(0, spread), class-major.
inline LabeledSet draw_blobs(Rng& rng, const Matrix& means, std::span<const std::size_t> counts,
                             double spread) {
    std::size_t total = 0;
    for (auto n : counts) total += n;
    LabeledSet out{Matrix(total, means.cols()), {}};
    out.labels.reserve(total);
    std::size_t row = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        for (std::size_t k = 0; k < counts[c]; ++k, ++row) {
            auto r = out.x.row(row);
            for (std::size_t j = 0; j < r.size(); ++j) r[j] = means(c, j) + spread * rng.normal();
            out.labels.push_back(c);
        }
    }
    return out;
}

inline std::vector<std::size_t> uniform_counts(std::size_t C, std::size_t n) {
    return std::vector<std::size_t>(C, n);
}

}  // namespace detail

/// Balanced semi-supervised blobs. Class centres lie on the unit sphere.
[[nodiscard]] inline TaskBundle gen_blobs_ssl(Rng& rng, std::size_t C, std::size_t labeled_per_class,
                                              std::size_t unlabeled_per_class,
                                              std::size_t test_per_class, std::size_t dim,
                                              double spread) {
    detail::require_classes(C);
    detail::require_spread(spread);
    TaskBundle b;
    b.class_means = detail::unit_sphere_means(rng, C, dim);
    const auto nl = detail::uniform_counts(C, labeled_per_class);
    const auto nu = detail::uniform_counts(C, unlabeled_per_class);
    const auto nt = detail::uniform_counts(C, test_per_class);
    b.labeled = detail::draw_blobs(rng, b.class_means, nl, spread);
    LabeledSet unl = detail::draw_blobs(rng, b.class_means, nu, spread);
    b.unlabeled = std::move(unl.x);
    b.unlabeled_truth = std::move(unl.labels);
    b.test = detail::draw_blobs(rng, b.class_means, nt, spread);
    b.meta = {TaskKind::ssl, C, dim, 0, nl, nu, nt, {}, labeled_per_class == 0};
    return b;
}

/// Blobs whose labeled split is skewed: `minority_classes` (zero-based) get
/// `minority_n` labels, every other class `majority_n`. Unlabeled and test
/// splits stay balanced.
[[nodiscard]] inline TaskBundle gen_imbalanced_ssl(Rng& rng, std::size_t C, std::size_t majority_n,
                                                   std::size_t minority_n,
                                                   const std::vector<std::size_t>& minority_classes,
                                                   std::size_t dim, double spread,
                                                   std::size_t unlabeled_per_class,
                                                   std::size_t test_per_class) {
    detail::require_classes(C);
    detail::require_spread(spread);
    if (minority_classes.empty())
        throw std::invalid_argument("gen_imbalanced_ssl: empty minority set (use gen_blobs_ssl)");
    if (!(minority_n < majority_n))
        throw std::invalid_argument("gen_imbalanced_ssl: minority_n must be below majority_n");
    const std::set<std::size_t> minority(minority_classes.begin(), minority_classes.end());
    if (minority.size() != minority_classes.size())
        throw std::invalid_argument("gen_imbalanced_ssl: duplicate minority class");
    if (*minority.rbegin() >= C)
        throw std::out_of_range("gen_imbalanced_ssl: minority class outside 1..C");
    if (minority.size() == C)
        throw std::invalid_argument("gen_imbalanced_ssl: every class is a minority class");

    TaskBundle b;
    b.class_means = detail::unit_sphere_means(rng, C, dim);
    std::vector<std::size_t> nl(C, majority_n);
    for (auto c : minority) nl[c] = minority_n;
    const auto nu = detail::uniform_counts(C, unlabeled_per_class);
    const auto nt = detail::uniform_counts(C, test_per_class);
    b.labeled = detail::draw_blobs(rng, b.class_means, nl, spread);
    LabeledSet unl = detail::draw_blobs(rng, b.class_means, nu, spread);
    b.unlabeled = std::move(unl.x);
    b.unlabeled_truth = std::move(unl.labels);
    b.test = detail::draw_blobs(rng, b.class_means, nt, spread);
    b.meta = {TaskKind::ssl_imbalanced, C, dim, 0, nl, nu, nt, {}, false};
    return b;
}

/// Source blobs (labeled) and a target domain drawn from the same class
/// conditionals, rotated by `rotation_angle` radians in the (x1, x2) plane and
/// translated by `shift` along a seeded random unit direction.
[[nodiscard]] inline TaskBundle gen_uda(Rng& rng, std::size_t C, std::size_t source_per_class,
                                        std::size_t target_per_class, std::size_t dim, double spread,
                                        double shift, double rotation_angle,
                                        std::size_t test_per_class) {
    detail::require_classes(C);
    detail::require_spread(spread);
    if (!std::isfinite(shift) || !std::isfinite(rotation_angle))
        throw std::invalid_argument("gen_uda: shift and rotation must be finite");
    if (rotation_angle != 0.0 && dim < 2)
        throw std::invalid_argument("gen_uda: rotation needs at least two dimensions");

    TaskBundle b;
    b.class_means = detail::unit_sphere_means(rng, C, dim);
    const Matrix direction = detail::unit_sphere_means(rng, 1, dim);
    const auto ns = detail::uniform_counts(C, source_per_class);
    const auto nt = detail::uniform_counts(C, target_per_class);
    const auto ntest = detail::uniform_counts(C, test_per_class);
    b.source = detail::draw_blobs(rng, b.class_means, ns, spread);
    LabeledSet target = detail::draw_blobs(rng, b.class_means, nt, spread);
    LabeledSet test = detail::draw_blobs(rng, b.class_means, ntest, spread);

    const double cs = std::cos(rotation_angle);
    const double sn = std::sin(rotation_angle);
    auto to_target = [&](Matrix& x) {
        for (std::size_t i = 0; i < x.rows(); ++i) {
            auto r = x.row(i);
            if (dim >= 2) {
                const double a = r[0];
                const double c = r[1];
                r[0] = cs * a - sn * c;
                r[1] = sn * a + cs * c;
            }
            for (std::size_t j = 0; j < dim; ++j) r[j] += shift * direction(0, j);
        }
    };
    to_target(target.x);
    to_target(test.x);

    b.unlabeled = std::move(target.x);
    b.unlabeled_truth = std::move(target.labels);
    b.test = std::move(test);
    b.labeled = LabeledSet{Matrix(0, dim), {}};
    b.meta = {TaskKind::uda, C, dim, dim, std::vector<std::size_t>(C, 0), nt, ntest, ns, true};
    return b;
}

/// Shared latent blobs pushed through two fixed random linear maps (plus
/// small noise, 0.1·spread) into source and target feature spaces of
/// different dimensionality.
[[nodiscard]] inline TaskBundle gen_shda(Rng& rng, std::size_t C, std::size_t source_per_class,
                                         std::size_t labeled_per_class,
                                         std::size_t target_per_class, std::size_t latent_dim,
                                         std::size_t dim_source, std::size_t dim_target,
                                         double spread, std::size_t test_per_class) {
    detail::require_classes(C);
    detail::require_spread(spread);
    if (dim_source == 0 || dim_target == 0)
        throw std::invalid_argument("gen_shda: feature dimensions must be positive");

    TaskBundle b;
    b.class_means = detail::unit_sphere_means(rng, C, latent_dim);
    auto random_map = [&](std::size_t out_dim) {
        Matrix a(latent_dim, out_dim);
        const double scale = 1.0 / std::sqrt(static_cast<double>(latent_dim));
        for (double& v : a.values()) v = scale * rng.normal();
        return a;
    };
    b.source_map = random_map(dim_source);
    b.target_map = random_map(dim_target);
    const double noise = 0.1 * spread;
    auto project = [&](const LabeledSet& latent, const Matrix& map) {
        LabeledSet out{matmul(latent.x, map), latent.labels};
        for (double& v : out.x.values()) v += noise * rng.normal();
        return out;
    };

    const auto ns = detail::uniform_counts(C, source_per_class);
    const auto nl = detail::uniform_counts(C, labeled_per_class);
    const auto nt = detail::uniform_counts(C, target_per_class);
    const auto ntest = detail::uniform_counts(C, test_per_class);
    b.source = project(detail::draw_blobs(rng, b.class_means, ns, spread), b.source_map);
    b.labeled = project(detail::draw_blobs(rng, b.class_means, nl, spread), b.target_map);
    LabeledSet unl = project(detail::draw_blobs(rng, b.class_means, nt, spread), b.target_map);
    b.unlabeled = std::move(unl.x);
    b.unlabeled_truth = std::move(unl.labels);
    b.test = project(detail::draw_blobs(rng, b.class_means, ntest, spread), b.target_map);
    b.meta = {TaskKind::shda, C, dim_target, dim_source, nl, nt, ntest, ns, labeled_per_class == 0};
    return b;
}

// --- augmentation ------------------------------------------------------------

/// Gaussian jitter followed by independent coordinate dropout.
struct Augment {
    double sigma = 0.0;
    double dropout = 0.0;

    void validate() const {
        if (!(sigma >= 0.0)) throw std::invalid_argument("Augment: sigma must be non-negative");
        if (!(dropout >= 0.0 && dropout < 1.0))
            throw std::invalid_argument("Augment: dropout must lie in [0, 1)");
    }
};

/// Weak (ψ) and strong (Ψ) perturbations; the strong one is the larger jitter.
struct AugmentPair {
    Augment weak;
    Augment strong;

    /// Defaults scaled to the blob spread: σ_w = 0.05·spread, σ_s = 0.2·spread, p = 0.2.
    static AugmentPair for_spread(double spread) {
        return {{0.05 * spread, 0.0}, {0.2 * spread, 0.2}};
    }

    void validate() const {
        weak.validate();
        strong.validate();
        if (weak.sigma > 0.0 && !(weak.sigma < strong.sigma))
            throw std::invalid_argument("AugmentPair: weak sigma must be below strong sigma");
    }
};

[[nodiscard]] inline Matrix augment(const Matrix& x, const Augment& kind, Rng& rng) {
    kind.validate();
    Matrix out = x;
    for (double& v : out.values()) {
        v += kind.sigma * rng.normal();
        if (kind.dropout > 0.0 && rng.bernoulli(kind.dropout)) v = 0.0;
    }
    return out;
}

// --- CSV bundle export / import ---------------------------------------------
//
// One file per split. Labeled splits: header `class,x1,...,xd`, one-based
// classes. The unlabeled split omits the class column.

namespace detail {

inline void write_split(const std::filesystem::path& path, const Matrix& x,
                        const std::vector<std::size_t>* labels) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    if (labels) os << "class";
    for (std::size_t j = 0; j < x.cols(); ++j) os << ((labels || j) ? "," : "") << 'x' << j + 1;
    os << '\n';
    for (std::size_t i = 0; i < x.rows(); ++i) {
        if (labels) os << (*labels)[i] + 1;
        for (std::size_t j = 0; j < x.cols(); ++j)
            os << ((labels || j) ? "," : "") << format_double(x(i, j));
        os << '\n';
    }
}

inline LabeledSet read_split(const std::filesystem::path& path, bool labeled) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    std::getline(is, line);
    std::size_t cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (labeled) --cols;
    std::vector<double> values;
    LabeledSet out;
    std::size_t rows = 0;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t k = 0;
        while (std::getline(ss, cell, ',')) {
            if (labeled && k == 0) {
                const auto cls = parse_u64(cell);
                if (cls == 0) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": class ids start at 1");
                out.labels.push_back(static_cast<std::size_t>(cls - 1));
            } else {
                values.push_back(parse_double(cell));
            }
            ++k;
        }
        if (k != cols + (labeled ? 1 : 0))
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": wrong cell count");
        ++rows;
    }
    out.x = Matrix(rows, cols, std::move(values));
    return out;
}

}  // namespace detail

/// Writes labeled.csv, unlabeled.csv, test.csv and (if present) source.csv.
inline void export_bundle_csv(const TaskBundle& b, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    detail::write_split(dir / "labeled.csv", b.labeled.x, &b.labeled.labels);
    detail::write_split(dir / "unlabeled.csv", b.unlabeled, nullptr);
    detail::write_split(dir / "test.csv", b.test.x, &b.test.labels);
    if (b.source) detail::write_split(dir / "source.csv", b.source->x, &b.source->labels);
}

/// Reads the splits written by export_bundle_csv. Meta counts are rebuilt from
/// the files; the unlabeled ground truth is not part of the export.
[[nodiscard]] inline TaskBundle import_bundle_csv(const std::filesystem::path& dir, TaskKind kind,
                                                  std::size_t num_classes) {
    TaskBundle b;
    b.labeled = detail::read_split(dir / "labeled.csv", true);
    b.unlabeled = detail::read_split(dir / "unlabeled.csv", false).x;
    b.test = detail::read_split(dir / "test.csv", true);
    if (std::filesystem::exists(dir / "source.csv")) b.source = detail::read_split(dir / "source.csv", true);
    b.meta.kind = kind;
    b.meta.num_classes = num_classes;
    b.meta.dim = b.test.x.cols();
    b.meta.source_dim = b.source ? b.source->x.cols() : 0;
    b.meta.labeled_counts = class_histogram(b.labeled.labels, num_classes);
    b.meta.test_counts = class_histogram(b.test.labels, num_classes);
    if (b.source) b.meta.source_counts = class_histogram(b.source->labels, num_classes);
    b.meta.no_labeled_samples = b.labeled.size() == 0;
    return b;
}

}  // namespace lerm
