#pragma once

// A small multi-layer perceptron: feature extractor g (dense layers, each
// followed by a ReLU-family activation) and a linear-softmax classifier f.
// Forward and backward passes are written out by hand. The dual-extractor
// variant shares one classifier between a source and a target extractor whose
// input dimensions may differ.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "lerm/format.hpp"
#include "lerm/numerics.hpp"
#include "lerm/risks.hpp"

namespace lerm {

enum class Activation { relu, leaky_relu };

inline constexpr double kLeakySlope = 0.01;

[[nodiscard]] inline const char* to_string(Activation a) noexcept {
    return a == Activation::relu ? "relu" : "leaky_relu";
}

[[nodiscard]] inline Activation parse_activation(std::string_view s) {
    if (s == "relu") return Activation::relu;
    if (s == "leaky_relu") return Activation::leaky_relu;
    throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

/// layer_dims = {input, hidden..., feature}. A single entry means the
/// classifier reads the raw input.
struct MlpSpec {
    std::vector<std::size_t> layer_dims;
    Activation activation = Activation::relu;
    std::size_t num_classes = 2;

    void validate() const {
        if (layer_dims.empty()) throw std::invalid_argument("MlpSpec: no layer dimensions");
        for (auto d : layer_dims)
            if (d == 0) throw std::invalid_argument("MlpSpec: zero layer dimension");
        if (num_classes < 2) throw std::invalid_argument("MlpSpec: need at least two classes");
    }
    [[nodiscard]] std::size_t input_dim() const { return layer_dims.front(); }
    [[nodiscard]] std::size_t feature_dim() const { return layer_dims.back(); }

    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

struct Dense {
    Matrix weight;  // in × out
    Matrix bias;    // 1 × out

    Dense() = default;
    Dense(std::size_t in, std::size_t out) : weight(in, out), bias(1, out) {}

    friend bool operator==(const Dense&, const Dense&) = default;
};

using Extractor = std::vector<Dense>;

struct MlpModel {
    MlpSpec spec;
    Extractor extractor;
    Dense classifier;
    /// Bumped by every optimizer step; forward caches record it.
    std::uint64_t revision = 0;
};

struct MlpGradients {
    Extractor extractor;
    Dense classifier;
};

/// Source extractor g_s, target extractor g_t, shared classifier f.
struct ShdaModel {
    MlpSpec source_spec;
    MlpSpec target_spec;
    Extractor source;
    Extractor target;
    Dense classifier;
    std::uint64_t revision = 0;
};

struct ShdaGradients {
    Extractor source;
    Extractor target;
    Dense classifier;
};

// --- parameter enumeration -------------------------------------------------

template <class M>
struct TensorRef {
    std::string path;
    M* tensor;
    bool is_weight;
};

namespace detail {

template <class M, class E>
void list_extractor(std::vector<TensorRef<M>>& out, const std::string& prefix, E& ext) {
    for (std::size_t l = 0; l < ext.size(); ++l) {
        const std::string base = prefix + "." + std::to_string(l);
        out.push_back({base + ".weight", &ext[l].weight, true});
        out.push_back({base + ".bias", &ext[l].bias, false});
    }
}

template <class M, class D>
void list_dense(std::vector<TensorRef<M>>& out, const std::string& name, D& d) {
    out.push_back({name + ".weight", &d.weight, true});
    out.push_back({name + ".bias", &d.bias, false});
}

}  // namespace detail

/// Parameters in serialization order: extractor layers, then classifier;
/// weight before bias within a layer.
template <class T>
    requires std::is_same_v<std::remove_const_t<T>, MlpModel> ||
             std::is_same_v<std::remove_const_t<T>, MlpGradients>
[[nodiscard]] auto tensors(T& m) {
    using M = std::conditional_t<std::is_const_v<T>, const Matrix, Matrix>;
    std::vector<TensorRef<M>> out;
    detail::list_extractor<M>(out, "extractor", m.extractor);
    detail::list_dense<M>(out, "classifier", m.classifier);
    return out;
}

template <class T>
    requires std::is_same_v<std::remove_const_t<T>, ShdaModel> ||
             std::is_same_v<std::remove_const_t<T>, ShdaGradients>
[[nodiscard]] auto tensors(T& m) {
    using M = std::conditional_t<std::is_const_v<T>, const Matrix, Matrix>;
    std::vector<TensorRef<M>> out;
    detail::list_extractor<M>(out, "source", m.source);
    detail::list_extractor<M>(out, "target", m.target);
    detail::list_dense<M>(out, "classifier", m.classifier);
    return out;
}

template <class T>
[[nodiscard]] std::size_t parameter_count(const T& m) {
    std::size_t n = 0;
    for (const auto& t : tensors(m)) n += t.tensor->size();
    return n;
}

/// Σ‖W‖² over weight matrices only (biases excluded).
template <class T>
[[nodiscard]] double weight_norm_sq(const T& m) {
    double acc = 0.0;
    for (const auto& t : tensors(m))
        if (t.is_weight)
            for (double v : t.tensor->values()) acc += v * v;
    return acc;
}

template <class G>
void accumulate(G& into, const G& g) {
    auto dst = tensors(into);
    auto src = tensors(g);
    for (std::size_t k = 0; k < dst.size(); ++k) {
        auto d = dst[k].tensor->values();
        auto s = src[k].tensor->values();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
    }
}

// --- construction ----------------------------------------------------------

namespace detail {

inline Extractor make_extractor(const MlpSpec& spec) {
    Extractor ext;
    for (std::size_t l = 0; l + 1 < spec.layer_dims.size(); ++l)
        ext.emplace_back(spec.layer_dims[l], spec.layer_dims[l + 1]);
    return ext;
}

inline void he_init(Dense& d, Rng& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(d.weight.rows()));
    for (double& w : d.weight.values()) w = rng.normal(0.0, std);
}

}  // namespace detail

/// He-normal weights (std √(2/fan_in)), zero biases.
[[nodiscard]] inline MlpModel init_model(const MlpSpec& spec, Rng& rng) {
    spec.validate();
    MlpModel m{spec, detail::make_extractor(spec), Dense(spec.feature_dim(), spec.num_classes), 0};
    for (auto& layer : m.extractor) detail::he_init(layer, rng);
    detail::he_init(m.classifier, rng);
    return m;
}

[[nodiscard]] inline ShdaModel init_shda_model(const MlpSpec& source_spec, const MlpSpec& target_spec,
                                               Rng& rng) {
    source_spec.validate();
    target_spec.validate();
    if (source_spec.feature_dim() != target_spec.feature_dim() ||
        source_spec.num_classes != target_spec.num_classes ||
        source_spec.activation != target_spec.activation)
        throw std::invalid_argument("init_shda_model: extractors must share feature dim, classes "
                                    "and activation");
    ShdaModel m{source_spec,
                target_spec,
                detail::make_extractor(source_spec),
                detail::make_extractor(target_spec),
                Dense(source_spec.feature_dim(), source_spec.num_classes),
                0};
    for (auto& layer : m.source) detail::he_init(layer, rng);
    for (auto& layer : m.target) detail::he_init(layer, rng);
    detail::he_init(m.classifier, rng);
    return m;
}

[[nodiscard]] inline MlpGradients zeros_like(const MlpModel& m) {
    MlpGradients g{m.extractor, m.classifier};
    for (auto& t : tensors(g)) std::fill(t.tensor->values().begin(), t.tensor->values().end(), 0.0);
    return g;
}

[[nodiscard]] inline ShdaGradients zeros_like(const ShdaModel& m) {
    ShdaGradients g{m.source, m.target, m.classifier};
    for (auto& t : tensors(g)) std::fill(t.tensor->values().begin(), t.tensor->values().end(), 0.0);
    return g;
}

// --- forward / backward ----------------------------------------------------

struct ExtractorCache {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
};

/// Everything backward() needs from one forward call.
struct ForwardCache {
    std::uint64_t revision = 0;
    ExtractorCache extractor;
    Matrix features;
    Matrix probs;
};

struct ForwardResult {
    Matrix features;
    Matrix logits;
    ProbBatch probs;
    ForwardCache cache;
};

namespace detail {

inline Matrix affine(const Matrix& x, const Dense& d) {
    Matrix y = matmul(x, d.weight);
    for (std::size_t i = 0; i < y.rows(); ++i) {
        auto r = y.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += d.bias(0, j);
    }
    return y;
}

inline Matrix activate(const Matrix& pre, Activation a) {
    Matrix out = pre;
    const double slope = a == Activation::relu ? 0.0 : kLeakySlope;
    for (double& v : out.values())
        if (v <= 0.0) v *= slope;
    return out;
}

inline Matrix extractor_forward(const Extractor& ext, Activation act, const Matrix& x,
                                ExtractorCache& cache) {
    cache.inputs.clear();
    cache.pre.clear();
    Matrix h = x;
    for (const auto& layer : ext) {
        if (h.cols() != layer.weight.rows())
            throw std::invalid_argument("forward: input has " + std::to_string(h.cols()) +
                                        " columns, layer expects " +
                                        std::to_string(layer.weight.rows()));
        cache.inputs.push_back(h);
        cache.pre.push_back(affine(h, layer));
        h = activate(cache.pre.back(), act);
    }
    return h;
}

/// Accumulates dense-layer gradients and returns ∂/∂input.
inline Matrix dense_backward(const Dense& d, const Matrix& input, const Matrix& grad_out,
                             Dense& grad) {
    const Matrix gw = matmul_tn(input, grad_out);
    for (std::size_t k = 0; k < gw.size(); ++k) grad.weight.values()[k] += gw.values()[k];
    for (std::size_t i = 0; i < grad_out.rows(); ++i) {
        auto r = grad_out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) grad.bias(0, j) += r[j];
    }
    return matmul_nt(grad_out, d.weight);
}

inline void extractor_backward(const Extractor& ext, Activation act, const ExtractorCache& cache,
                               Matrix grad, Extractor& grads) {
    const double slope = act == Activation::relu ? 0.0 : kLeakySlope;
    for (std::size_t l = ext.size(); l-- > 0;) {
        const Matrix& pre = cache.pre[l];
        for (std::size_t k = 0; k < grad.size(); ++k)
            if (pre.values()[k] <= 0.0) grad.values()[k] *= slope;
        grad = dense_backward(ext[l], cache.inputs[l], grad, grads[l]);
    }
}

inline Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs) {
    Matrix g(probs.rows(), probs.cols());
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        auto p = probs.row(i);
        auto up = grad_probs.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) dot += p[j] * up[j];
        auto out = g.row(i);
        for (std::size_t j = 0; j < p.size(); ++j) out[j] = p[j] * (up[j] - dot);
    }
    return g;
}

/// Forward through one extractor and the classifier.
inline ForwardResult branch_forward(const Extractor& ext, Activation act, const Dense& head,
                                    const Matrix& x, std::uint64_t revision) {
    ForwardResult r;
    r.cache.revision = revision;
    r.features = extractor_forward(ext, act, x, r.cache.extractor);
    if (r.features.cols() != head.weight.rows())
        throw std::invalid_argument("forward: feature dimension mismatch");
    r.logits = affine(r.features, head);
    Matrix probs = softmax_rows(r.logits);
    r.cache.features = r.features;
    r.cache.probs = probs;
    r.probs = ProbBatch(std::move(probs));
    return r;
}

inline void branch_backward_logits(const Extractor& ext, Activation act, const Dense& head,
                                   const ForwardCache& cache, const Matrix& grad_logits,
                                   Extractor& grad_ext, Dense& grad_head) {
    if (grad_logits.rows() != cache.probs.rows() || grad_logits.cols() != cache.probs.cols())
        throw std::invalid_argument("backward: gradient shape does not match cached forward");
    if (cache.extractor.pre.size() != ext.size())
        throw std::invalid_argument("backward: cache depth does not match model");
    Matrix g = dense_backward(head, cache.features, grad_logits, grad_head);
    extractor_backward(ext, act, cache.extractor, std::move(g), grad_ext);
}

inline void check_revision(const ForwardCache& cache, std::uint64_t revision) {
    if (cache.revision != revision)
        throw std::logic_error("backward: stale forward cache (model was updated since forward)");
}

}  // namespace detail

[[nodiscard]] inline ForwardResult forward(const MlpModel& m, const Matrix& x) {
    if (x.cols() != m.spec.input_dim())
        throw std::invalid_argument("forward: input has " + std::to_string(x.cols()) +
                                    " columns, model expects " + std::to_string(m.spec.input_dim()));
    return detail::branch_forward(m.extractor, m.spec.activation, m.classifier, x, m.revision);
}

/// Gradients given ∂loss/∂logits (the fused softmax-cross-entropy path).
[[nodiscard]] inline MlpGradients backward_logits(const MlpModel& m, const ForwardCache& cache,
                                                  const Matrix& grad_logits) {
    detail::check_revision(cache, m.revision);
    MlpGradients g = zeros_like(m);
    detail::branch_backward_logits(m.extractor, m.spec.activation, m.classifier, cache, grad_logits,
                                   g.extractor, g.classifier);
    return g;
}

/// Gradients given ∂loss/∂probs; composes the softmax Jacobian.
[[nodiscard]] inline MlpGradients backward(const MlpModel& m, const ForwardCache& cache,
                                           const Matrix& grad_probs) {
    if (grad_probs.rows() != cache.probs.rows() || grad_probs.cols() != cache.probs.cols())
        throw std::invalid_argument("backward: gradient shape does not match cached forward");
    return backward_logits(m, cache, detail::softmax_backward(cache.probs, grad_probs));
}

/// ∂/∂logits of the mean cross-entropy: (p − onehot)/n.
[[nodiscard]] inline Matrix cross_entropy_logit_grad(const Matrix& probs,
                                                     std::span<const std::size_t> labels) {
    require_labels(labels, probs.rows(), probs.cols(), "cross_entropy_logit_grad");
    Matrix g = probs;
    const double inv_n = 1.0 / static_cast<double>(probs.rows());
    for (std::size_t i = 0; i < g.rows(); ++i) {
        g(i, labels[i]) -= 1.0;
        for (double& v : g.row(i)) v *= inv_n;
    }
    return g;
}

/// Mean cross-entropy computed from probabilities, clamped away from log(0).
[[nodiscard]] inline double cross_entropy(const Matrix& probs, std::span<const std::size_t> labels) {
    require_labels(labels, probs.rows(), probs.cols(), "cross_entropy");
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.rows(); ++i)
        acc -= std::log(std::max(probs(i, labels[i]), kLogClamp));
    return acc / static_cast<double>(probs.rows());
}

// --- optimizers ------------------------------------------------------------

enum class OptimizerKind { sgd_momentum, adam };

[[nodiscard]] inline const char* to_string(OptimizerKind k) noexcept {
    return k == OptimizerKind::sgd_momentum ? "sgd" : "adam";
}

[[nodiscard]] inline OptimizerKind parse_optimizer(std::string_view s) {
    if (s == "sgd") return OptimizerKind::sgd_momentum;
    if (s == "adam") return OptimizerKind::adam;
    throw std::invalid_argument("unknown optimizer '" + std::string(s) + "'");
}

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::sgd_momentum;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t steps = 0;
    std::vector<Matrix> first;   // momentum buffer or Adam first moment
    std::vector<Matrix> second;  // Adam second moment

    static OptimizerState sgd(double lr, double momentum = 0.9) {
        OptimizerState s;
        s.kind = OptimizerKind::sgd_momentum;
        s.learning_rate = lr;
        s.momentum = momentum;
        return s;
    }
    static OptimizerState adam(double lr) {
        OptimizerState s;
        s.kind = OptimizerKind::adam;
        s.learning_rate = lr;
        return s;
    }
};

/// One SGD-momentum (v ← μv + g; θ ← θ − ηv) or Adam update.
template <class Model, class Grads>
void step(Model& model, const Grads& grads, OptimizerState& opt) {
    auto params = tensors(model);
    const auto g = tensors(grads);
    if (params.size() != g.size()) throw std::invalid_argument("step: gradient layout mismatch");
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (params[k].tensor->rows() != g[k].tensor->rows() ||
            params[k].tensor->cols() != g[k].tensor->cols())
            throw std::invalid_argument("step: shape mismatch at " + params[k].path);
        if (!all_finite(*g[k].tensor))
            throw NonFiniteError("step: non-finite gradient at " + params[k].path);
    }
    if (opt.first.empty()) {
        for (const auto& p : params) {
            opt.first.emplace_back(p.tensor->rows(), p.tensor->cols());
            if (opt.kind == OptimizerKind::adam) opt.second.emplace_back(p.tensor->rows(), p.tensor->cols());
        }
    }
    ++opt.steps;
    const double t = static_cast<double>(opt.steps);
    const double bc1 = 1.0 - std::pow(opt.beta1, t);
    const double bc2 = 1.0 - std::pow(opt.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto theta = params[k].tensor->values();
        auto grad = g[k].tensor->values();
        auto m1 = opt.first[k].values();
        if (opt.kind == OptimizerKind::sgd_momentum) {
            for (std::size_t i = 0; i < theta.size(); ++i) {
                m1[i] = opt.momentum * m1[i] + grad[i];
                theta[i] -= opt.learning_rate * m1[i];
            }
        } else {
            auto m2 = opt.second[k].values();
            for (std::size_t i = 0; i < theta.size(); ++i) {
                m1[i] = opt.beta1 * m1[i] + (1.0 - opt.beta1) * grad[i];
                m2[i] = opt.beta2 * m2[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
                theta[i] -= opt.learning_rate * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + opt.epsilon);
            }
        }
    }
    ++model.revision;
}

// --- checkpoints -----------------------------------------------------------
//
// Text format, one token stream:
//   lerm-checkpoint 1
//   kind mlp|shda
//   activation relu|leaky_relu
//   classes C
//   dims k d0 .. d{k-1}            (mlp)   | source_dims ... / target_dims ... (shda)
//   tensor <path> <rows> <cols> v... (parameters in tensors() order, row-major)
//   end
// Values use the shortest round-trip decimal form, so save/load is exact.

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void write_dims(std::ostream& os, const char* key, const std::vector<std::size_t>& dims) {
    os << key << ' ' << dims.size();
    for (auto d : dims) os << ' ' << d;
    os << '\n';
}

template <class T>
void write_tensors(std::ostream& os, const T& model) {
    for (const auto& t : tensors(model)) {
        os << "tensor " << t.path << ' ' << t.tensor->rows() << ' ' << t.tensor->cols();
        for (std::size_t i = 0; i < t.tensor->rows(); ++i) {
            os << '\n';
            auto r = t.tensor->row(i);
            for (std::size_t j = 0; j < r.size(); ++j) os << (j ? " " : "") << format_double(r[j]);
        }
        os << '\n';
    }
    os << "end\n";
}

inline std::string expect_token(std::istream& is, std::string_view what) {
    std::string tok;
    if (!(is >> tok)) throw std::runtime_error("checkpoint: unexpected end of input, wanted " + std::string(what));
    return tok;
}

inline void expect_literal(std::istream& is, std::string_view lit) {
    const std::string tok = expect_token(is, lit);
    if (tok != lit) throw std::runtime_error("checkpoint: expected '" + std::string(lit) + "', got '" + tok + "'");
}

inline std::size_t read_count(std::istream& is, std::string_view what) {
    return static_cast<std::size_t>(parse_u64(expect_token(is, what)));
}

inline std::vector<std::size_t> read_dims(std::istream& is, std::string_view key) {
    expect_literal(is, key);
    std::vector<std::size_t> dims(read_count(is, key));
    for (auto& d : dims) d = read_count(is, key);
    return dims;
}

template <class T>
void read_tensors(std::istream& is, T& model) {
    for (auto& t : tensors(model)) {
        expect_literal(is, "tensor");
        expect_literal(is, t.path);
        const std::size_t r = read_count(is, "rows");
        const std::size_t c = read_count(is, "cols");
        if (r != t.tensor->rows() || c != t.tensor->cols())
            throw std::runtime_error("checkpoint: shape mismatch for " + t.path);
        for (double& v : t.tensor->values()) v = parse_double(expect_token(is, "value"));
    }
    expect_literal(is, "end");
}

}  // namespace detail

inline void save_checkpoint(std::ostream& os, const MlpModel& m) {
    os << "lerm-checkpoint " << kCheckpointVersion << "\nkind mlp\nactivation "
       << to_string(m.spec.activation) << "\nclasses " << m.spec.num_classes << '\n';
    detail::write_dims(os, "dims", m.spec.layer_dims);
    detail::write_tensors(os, m);
}

inline void save_checkpoint(std::ostream& os, const ShdaModel& m) {
    os << "lerm-checkpoint " << kCheckpointVersion << "\nkind shda\nactivation "
       << to_string(m.source_spec.activation) << "\nclasses " << m.source_spec.num_classes << '\n';
    detail::write_dims(os, "source_dims", m.source_spec.layer_dims);
    detail::write_dims(os, "target_dims", m.target_spec.layer_dims);
    detail::write_tensors(os, m);
}

/// Reads the header and returns its kind ("mlp" or "shda").
inline std::string read_checkpoint_header(std::istream& is, Activation& act, std::size_t& classes) {
    detail::expect_literal(is, "lerm-checkpoint");
    const auto version = detail::read_count(is, "version");
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    detail::expect_literal(is, "kind");
    std::string kind = detail::expect_token(is, "kind");
    detail::expect_literal(is, "activation");
    act = parse_activation(detail::expect_token(is, "activation"));
    detail::expect_literal(is, "classes");
    classes = detail::read_count(is, "classes");
    return kind;
}

[[nodiscard]] inline MlpModel load_checkpoint(std::istream& is) {
    Activation act{};
    std::size_t classes = 0;
    if (read_checkpoint_header(is, act, classes) != "mlp")
        throw std::runtime_error("checkpoint: expected an mlp checkpoint");
    MlpSpec spec{detail::read_dims(is, "dims"), act, classes};
    spec.validate();
    MlpModel m{spec, detail::make_extractor(spec), Dense(spec.feature_dim(), classes), 0};
    detail::read_tensors(is, m);
    return m;
}

[[nodiscard]] inline ShdaModel load_shda_checkpoint(std::istream& is) {
    Activation act{};
    std::size_t classes = 0;
    if (read_checkpoint_header(is, act, classes) != "shda")
        throw std::runtime_error("checkpoint: expected an shda checkpoint");
    MlpSpec s{detail::read_dims(is, "source_dims"), act, classes};
    MlpSpec t{detail::read_dims(is, "target_dims"), act, classes};
    s.validate();
    t.validate();
    ShdaModel m{s, t, detail::make_extractor(s), detail::make_extractor(t),
                Dense(s.feature_dim(), classes), 0};
    detail::read_tensors(is, m);
    return m;
}

}  // namespace lerm
