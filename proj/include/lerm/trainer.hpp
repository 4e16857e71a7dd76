#pragma once

// Composite objectives for the semi-supervised, unsupervised-adaptation,
// heterogeneous-adaptation and source-free settings; the seeded training loop;
// and test-split evaluation.
//
// The external-method slot α·L is fixed at zero, so every objective is a sum
// of cross-entropy terms on labeled data and a λ-weighted regularizer
// (label-encoding risk or entropy) on unlabeled predictions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "lerm/format.hpp"
#include "lerm/model.hpp"
#include "lerm/numerics.hpp"
#include "lerm/risks.hpp"
#include "lerm/tasks.hpp"

namespace lerm {

enum class Scenario { ssl, uda, shda, sfda };
enum class Regularizer { none, entmin, lerm };
enum class MeanScope { mini_batch, full_set };

[[nodiscard]] inline const char* to_string(Scenario s) noexcept {
    switch (s) {
        case Scenario::ssl: return "ssl";
        case Scenario::uda: return "uda";
        case Scenario::shda: return "shda";
        case Scenario::sfda: return "sfda";
    }
    return "?";
}
[[nodiscard]] inline const char* to_string(Regularizer r) noexcept {
    switch (r) {
        case Regularizer::none: return "none";
        case Regularizer::entmin: return "entmin";
        case Regularizer::lerm: return "lerm";
    }
    return "?";
}
[[nodiscard]] inline const char* to_string(MeanScope s) noexcept {
    return s == MeanScope::mini_batch ? "minibatch" : "fullset";
}

struct ObjectiveSpec {
    Scenario scenario = Scenario::ssl;
    bool use_erm = true;
    Regularizer regularizer = Regularizer::lerm;
    Divergence divergence = Divergence::l1;
    double lambda = 1.0;
    double mu = 0.1;
    /// Weight of an external method's loss. Only zero is supported.
    double alpha = 0.0;
    double tau = 0.01;
    MeanScope mean_scope = MeanScope::mini_batch;
    double mass_eps = kDefaultMassEps;
    AugmentPair augment{};

    static ObjectiveSpec defaults(Scenario s) {
        ObjectiveSpec o;
        o.scenario = s;
        if (s == Scenario::shda) o.mean_scope = MeanScope::full_set;
        if (s == Scenario::sfda) o.use_erm = false;
        return o;
    }

    void validate() const {
        if (!(lambda >= 0.0)) throw std::invalid_argument("ObjectiveSpec: lambda must be >= 0");
        if (!(mu >= 0.0)) throw std::invalid_argument("ObjectiveSpec: mu must be >= 0");
        if (!(tau >= 0.0)) throw std::invalid_argument("ObjectiveSpec: tau must be >= 0");
        if (alpha != 0.0)
            throw std::invalid_argument("ObjectiveSpec: alpha must be 0 (no external method is attached)");
        if (!(mass_eps > 0.0)) throw std::invalid_argument("ObjectiveSpec: mass_eps must be > 0");
        if (scenario == Scenario::sfda && regularizer == Regularizer::none)
            throw std::invalid_argument("ObjectiveSpec: source-free adaptation needs a regularizer");
        augment.validate();
    }
};

/// Loss value split into its reported components, plus parameter gradients.
template <class G>
struct ObjectiveResult {
    double loss = 0.0;
    double erm = 0.0;       // cross-entropy terms
    double reg = 0.0;       // λ-weighted regularizer
    double penalty = 0.0;   // τ-weighted weight norm (heterogeneous setting)
    G grads;
};

/// Unweighted regularizer value and its gradient with respect to the batch.
struct RegularizerTerm {
    double value = 0.0;
    Matrix grad;
};

[[nodiscard]] inline RegularizerTerm regularizer_term(const Matrix& probs, const ObjectiveSpec& spec) {
    switch (spec.regularizer) {
        case Regularizer::lerm: {
            const PredictionMeans m = raw::prediction_means_unlabeled(probs, spec.mass_eps);
            return {raw::label_encoding_risk(m, spec.divergence),
                    raw::label_encoding_risk_grad(probs, spec.divergence, spec.mass_eps)};
        }
        case Regularizer::entmin:
            return {raw::entropy_risk(probs), raw::entropy_risk_grad(probs)};
        case Regularizer::none: break;
    }
    return {0.0, Matrix(probs.rows(), probs.cols())};
}

namespace detail {

inline void scale(Matrix& m, double s) {
    for (double& v : m.values()) v *= s;
}

/// Adds weight·CE(model(x), labels) to `out`.
inline void add_cross_entropy(const MlpModel& model, const LabeledSet& batch, double weight,
                              ObjectiveResult<MlpGradients>& out) {
    const ForwardResult f = forward(model, batch.x);
    const double ce = cross_entropy(f.cache.probs, batch.labels);
    Matrix g = cross_entropy_logit_grad(f.cache.probs, batch.labels);
    scale(g, weight);
    accumulate(out.grads, backward_logits(model, f.cache, g));
    out.erm += weight * ce;
}

/// Adds λ·weight·R(model(x)) to `out`.
inline void add_regularizer(const MlpModel& model, const Matrix& x, double weight,
                            const ObjectiveSpec& spec, ObjectiveResult<MlpGradients>& out) {
    const ForwardResult f = forward(model, x);
    RegularizerTerm term = regularizer_term(f.cache.probs, spec);
    const double w = spec.lambda * weight;
    scale(term.grad, w);
    accumulate(out.grads, backward(model, f.cache, term.grad));
    out.reg += w * term.value;
}

inline void finish(ObjectiveResult<MlpGradients>& r) { r.loss = r.erm + r.reg + r.penalty; }

inline void require_scenario(const ObjectiveSpec& spec, Scenario s, const char* what) {
    spec.validate();
    if (spec.scenario != s)
        throw std::invalid_argument(std::string(what) + ": objective scenario is " + to_string(spec.scenario));
}

inline void require_unlabeled(const ObjectiveSpec& spec, const Matrix& x, const char* what) {
    if (spec.regularizer != Regularizer::none && x.rows() == 0)
        throw std::invalid_argument(std::string(what) + ": empty unlabeled batch with a regularizer");
}

}  // namespace detail

/// CE(ψ(x_l)) + μ·CE(Ψ(x_l)) + λ[R(ψ(x_u)) + μ·R(Ψ(x_u))].
/// Labeled and unlabeled perturbations draw from separate generators so the
/// labeled path is identical whether or not a regularizer is active.
[[nodiscard]] inline ObjectiveResult<MlpGradients>
ssl_objective(const MlpModel& model, const LabeledSet& labeled, const Matrix& unlabeled,
              const ObjectiveSpec& spec, Rng& labeled_aug, Rng& unlabeled_aug) {
    detail::require_scenario(spec, Scenario::ssl, "ssl_objective");
    detail::require_unlabeled(spec, unlabeled, "ssl_objective");
    ObjectiveResult<MlpGradients> r{0.0, 0.0, 0.0, 0.0, zeros_like(model)};
    if (spec.use_erm && labeled.size() > 0) {
        const LabeledSet weak{augment(labeled.x, spec.augment.weak, labeled_aug), labeled.labels};
        const LabeledSet strong{augment(labeled.x, spec.augment.strong, labeled_aug), labeled.labels};
        detail::add_cross_entropy(model, weak, 1.0, r);
        if (spec.mu > 0.0) detail::add_cross_entropy(model, strong, spec.mu, r);
    }
    if (spec.regularizer != Regularizer::none) {
        const Matrix weak = augment(unlabeled, spec.augment.weak, unlabeled_aug);
        const Matrix strong = augment(unlabeled, spec.augment.strong, unlabeled_aug);
        detail::add_regularizer(model, weak, 1.0, spec, r);
        if (spec.mu > 0.0) detail::add_regularizer(model, strong, spec.mu, spec, r);
    }
    detail::finish(r);
    return r;
}

/// CE(source) + λ·R(target).
[[nodiscard]] inline ObjectiveResult<MlpGradients>
uda_objective(const MlpModel& model, const LabeledSet& source, const Matrix& target,
              const ObjectiveSpec& spec) {
    detail::require_scenario(spec, Scenario::uda, "uda_objective");
    detail::require_unlabeled(spec, target, "uda_objective");
    ObjectiveResult<MlpGradients> r{0.0, 0.0, 0.0, 0.0, zeros_like(model)};
    if (spec.use_erm && source.size() > 0) detail::add_cross_entropy(model, source, 1.0, r);
    if (spec.regularizer != Regularizer::none) detail::add_regularizer(model, target, 1.0, spec, r);
    detail::finish(r);
    return r;
}

/// Regularizer alone on unlabeled target data, starting from a source model.
[[nodiscard]] inline ObjectiveResult<MlpGradients>
sfda_objective(const MlpModel& model, const Matrix& target, const ObjectiveSpec& spec) {
    detail::require_scenario(spec, Scenario::sfda, "sfda_objective");
    detail::require_unlabeled(spec, target, "sfda_objective");
    ObjectiveResult<MlpGradients> r{0.0, 0.0, 0.0, 0.0, zeros_like(model)};
    const ForwardResult f = forward(model, target);
    RegularizerTerm term = regularizer_term(f.cache.probs, spec);
    r.reg = term.value;
    r.grads = backward(model, f.cache, term.grad);
    detail::finish(r);
    return r;
}

/// CE(f∘g_s(source)) + CE(f∘g_t(labeled target)) + λ·R(f∘g_t(unlabeled))
/// + τ(‖f‖² + ‖g_s‖² + ‖g_t‖²), the norms taken over weight matrices.
[[nodiscard]] inline ObjectiveResult<ShdaGradients>
shda_objective(const ShdaModel& model, const LabeledSet& source, const LabeledSet& labeled_target,
               const Matrix& unlabeled_target, const ObjectiveSpec& spec) {
    detail::require_scenario(spec, Scenario::shda, "shda_objective");
    detail::require_unlabeled(spec, unlabeled_target, "shda_objective");
    if (source.x.cols() != model.source_spec.input_dim())
        throw std::invalid_argument("shda_objective: source batch dimension mismatch");
    if (labeled_target.x.cols() != model.target_spec.input_dim() ||
        unlabeled_target.cols() != model.target_spec.input_dim())
        throw std::invalid_argument("shda_objective: target batch dimension mismatch");

    const Activation act = model.source_spec.activation;
    ObjectiveResult<ShdaGradients> r{0.0, 0.0, 0.0, 0.0, zeros_like(model)};
    auto add_ce = [&](const Extractor& ext, Extractor& grad_ext, const LabeledSet& batch) {
        const ForwardResult f = detail::branch_forward(ext, act, model.classifier, batch.x, model.revision);
        r.erm += cross_entropy(f.cache.probs, batch.labels);
        detail::branch_backward_logits(ext, act, model.classifier, f.cache,
                                       cross_entropy_logit_grad(f.cache.probs, batch.labels),
                                       grad_ext, r.grads.classifier);
    };
    if (spec.use_erm) {
        if (source.size() > 0) add_ce(model.source, r.grads.source, source);
        if (labeled_target.size() > 0) add_ce(model.target, r.grads.target, labeled_target);
    }
    if (spec.regularizer != Regularizer::none) {
        const ForwardResult f = detail::branch_forward(model.target, act, model.classifier,
                                                       unlabeled_target, model.revision);
        RegularizerTerm term = regularizer_term(f.cache.probs, spec);
        detail::scale(term.grad, spec.lambda);
        r.reg = spec.lambda * term.value;
        detail::branch_backward_logits(model.target, act, model.classifier, f.cache,
                                       detail::softmax_backward(f.cache.probs, term.grad),
                                       r.grads.target, r.grads.classifier);
    }
    if (spec.tau > 0.0) {
        r.penalty = spec.tau * weight_norm_sq(model);
        auto params = tensors(model);
        auto grads = tensors(r.grads);
        for (std::size_t k = 0; k < params.size(); ++k) {
            if (!params[k].is_weight) continue;
            auto p = params[k].tensor->values();
            auto g = grads[k].tensor->values();
            for (std::size_t i = 0; i < p.size(); ++i) g[i] += 2.0 * spec.tau * p[i];
        }
    }
    r.loss = r.erm + r.reg + r.penalty;
    return r;
}

// --- evaluation --------------------------------------------------------------

struct MetricsRecord {
    std::size_t epoch = 0;
    double loss_erm = 0.0;
    double loss_reg = 0.0;
    double top1 = 0.0;
    double macro_f1 = 0.0;
    double mean_entropy = 0.0;
    std::vector<std::size_t> histogram;  // predicted-class counts on the test split
    std::vector<double> recall;          // per-class recall

    friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

/// Index of the largest entry; ties go to the lowest class index.
[[nodiscard]] inline std::size_t argmax(std::span<const double> row) {
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

/// Accuracy, macro-F1 (unweighted over classes that occur in the truth or the
/// predictions), mean prediction entropy, predicted-class histogram.
[[nodiscard]] inline MetricsRecord evaluate(const Matrix& probs, std::span<const std::size_t> labels) {
    if (probs.rows() == 0) throw std::invalid_argument("evaluate: empty test set");
    const std::size_t C = probs.cols();
    require_labels(labels, probs.rows(), C, "evaluate");
    MetricsRecord r;
    r.histogram.assign(C, 0);
    std::vector<std::size_t> tp(C, 0), truth(C, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        const std::size_t pred = argmax(probs.row(i));
        ++r.histogram[pred];
        ++truth[labels[i]];
        if (pred == labels[i]) {
            ++correct;
            ++tp[pred];
        }
    }
    double f1_sum = 0.0;
    std::size_t f1_classes = 0;
    r.recall.assign(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        const std::size_t denom = truth[c] + r.histogram[c];
        if (truth[c] > 0) r.recall[c] = static_cast<double>(tp[c]) / static_cast<double>(truth[c]);
        if (denom == 0) continue;
        f1_sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
        ++f1_classes;
    }
    r.top1 = static_cast<double>(correct) / static_cast<double>(probs.rows());
    r.macro_f1 = f1_sum / static_cast<double>(f1_classes);
    r.mean_entropy = raw::entropy_risk(probs);
    return r;
}

[[nodiscard]] inline MetricsRecord evaluate(const MlpModel& model, const LabeledSet& test) {
    return evaluate(forward(model, test.x).cache.probs, test.labels);
}

/// Heterogeneous models are evaluated through the target extractor.
[[nodiscard]] inline MetricsRecord evaluate(const ShdaModel& model, const LabeledSet& test) {
    const auto f = detail::branch_forward(model.target, model.target_spec.activation,
                                          model.classifier, test.x, model.revision);
    return evaluate(f.cache.probs, test.labels);
}

/// Header `epoch,loss_erm,loss_reg,top1,macro_f1,mean_entropy,hist_1..hist_C`.
inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRecord>& records,
                              std::size_t classes) {
    os << "epoch,loss_erm,loss_reg,top1,macro_f1,mean_entropy";
    for (std::size_t c = 0; c < classes; ++c) os << ",hist_" << c + 1;
    os << '\n';
    for (const auto& r : records) {
        os << r.epoch << ',' << format_double(r.loss_erm) << ',' << format_double(r.loss_reg) << ','
           << format_double(r.top1) << ',' << format_double(r.macro_f1) << ','
           << format_double(r.mean_entropy);
        for (auto h : r.histogram) os << ',' << h;
        os << '\n';
    }
}

// --- training ----------------------------------------------------------------

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    OptimizerKind optimizer = OptimizerKind::sgd_momentum;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    std::size_t eval_every = 1;
    /// Extractor widths after the input; the last entry is the feature dimension.
    std::vector<std::size_t> hidden{64};
    Activation activation = Activation::relu;

    void validate() const {
        if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
        if (eval_every == 0) throw std::invalid_argument("TrainConfig: eval_every must be positive");
        if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be positive");
        for (auto h : hidden)
            if (h == 0) throw std::invalid_argument("TrainConfig: zero hidden width");
    }
};

struct TrainResult {
    std::variant<MlpModel, ShdaModel> model;
    std::vector<MetricsRecord> metrics;
    bool diverged = false;
    std::string message;
    /// Set when batch_size < C (per-batch prediction means may miss classes).
    bool small_batch_warning = false;
};

/// Endless stream of shuffled indices into a set of size n; reshuffles on wrap.
class BatchStream {
public:
    BatchStream(std::size_t n, Rng rng) : rng_(rng), order_(n) {
        for (std::size_t i = 0; i < n; ++i) order_[i] = i;
        rng_.shuffle(order_);
    }

    /// min(k, n) indices, without repeats inside one call.
    std::vector<std::size_t> next(std::size_t k) {
        k = std::min(k, order_.size());
        std::vector<std::size_t> out;
        out.reserve(k);
        while (out.size() < k) {
            if (pos_ == order_.size()) {
                rng_.shuffle(order_);
                pos_ = 0;
            }
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

namespace detail {

// Generator streams derived from the training seed.
enum Stream : std::uint64_t {
    kInitStream = 1,
    kLabeledStream = 2,
    kUnlabeledStream = 3,
    kLabeledAugStream = 4,
    kUnlabeledAugStream = 5,
    kSourceStream = 6,
};

inline LabeledSet gather(const LabeledSet& s, const std::vector<std::size_t>& idx) {
    LabeledSet out{gather_rows(s.x, idx), {}};
    out.labels.reserve(idx.size());
    for (auto i : idx) out.labels.push_back(s.labels[i]);
    return out;
}

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

inline void check_task(const TaskBundle& task, const ObjectiveSpec& spec) {
    const TaskKind k = task.meta.kind;
    const bool ok = (spec.scenario == Scenario::ssl && (k == TaskKind::ssl || k == TaskKind::ssl_imbalanced)) ||
                    (spec.scenario == Scenario::uda && k == TaskKind::uda) ||
                    (spec.scenario == Scenario::sfda && k == TaskKind::uda) ||
                    (spec.scenario == Scenario::shda && k == TaskKind::shda);
    if (!ok)
        throw std::invalid_argument(std::string("train: task kind ") + to_string(k) +
                                    " does not match scenario " + to_string(spec.scenario));
    if (spec.regularizer != Regularizer::none && task.unlabeled.rows() == 0)
        throw std::invalid_argument("train: regularizer needs unlabeled samples");
    if (task.test.size() == 0) throw std::invalid_argument("train: empty test split");
    if ((spec.scenario == Scenario::uda || spec.scenario == Scenario::shda) && !task.source)
        throw std::invalid_argument("train: scenario needs a source domain");
}

struct LossAverager {
    double erm = 0.0;
    double reg = 0.0;
    std::size_t steps = 0;

    template <class G>
    void add(const ObjectiveResult<G>& r) {
        erm += r.erm;
        reg += r.reg;
        ++steps;
    }
    void flush_into(MetricsRecord& m) {
        if (steps > 0) {
            m.loss_erm = erm / static_cast<double>(steps);
            m.loss_reg = reg / static_cast<double>(steps);
        }
        *this = {};
    }
};

}  // namespace detail

/// Runs the seeded optimization loop and records test metrics at epoch 0 and
/// every `eval_every` epochs. Source-free adaptation requires `initial`, the
/// pretrained source model; for the other scenarios `initial` optionally
/// replaces the seeded initialization.
[[nodiscard]] inline TrainResult train(const TaskBundle& task, const ObjectiveSpec& spec,
                                       const TrainConfig& cfg, const MlpModel* initial = nullptr) {
    spec.validate();
    cfg.validate();
    detail::check_task(task, spec);
    const std::size_t C = task.meta.num_classes;
    const Rng root(cfg.seed);
    Rng init_rng = root.split(detail::kInitStream);

    TrainResult result;
    result.small_batch_warning = cfg.batch_size < C;

    auto layer_dims = [&](std::size_t input) {
        std::vector<std::size_t> dims{input};
        dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
        return dims;
    };

    OptimizerState opt = cfg.optimizer == OptimizerKind::adam
                             ? OptimizerState::adam(cfg.learning_rate)
                             : OptimizerState::sgd(cfg.learning_rate, cfg.momentum);
    detail::LossAverager avg;

    // Generic loop: `one_step` performs one optimizer step and returns false on divergence.
    auto run = [&](auto& model, std::size_t steps_per_epoch, auto&& one_step) {
        MetricsRecord first = evaluate(model, task.test);
        first.epoch = 0;
        result.metrics.push_back(first);
        for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
            for (std::size_t s = 0; s < steps_per_epoch; ++s) {
                std::string why;
                try {
                    if (!one_step(model)) why = "non-finite loss or parameters";
                } catch (const NonFiniteError& e) {
                    why = e.what();
                }
                if (!why.empty()) {
                    result.diverged = true;
                    result.message = "epoch " + std::to_string(epoch) + ": " + why;
                    return;
                }
            }
            if (epoch % cfg.eval_every == 0) {
                MetricsRecord rec = evaluate(model, task.test);
                rec.epoch = epoch;
                avg.flush_into(rec);
                result.metrics.push_back(rec);
            }
        }
    };

    // Rolls back to the last finite parameters if the update overflows.
    auto apply = [&](auto& model, auto&& r) {
        if (!std::isfinite(r.loss)) return false;
        const auto before = model;
        step(model, r.grads, opt);
        for (const auto& t : tensors(model)) {
            if (!all_finite(*t.tensor)) {
                model = before;
                return false;
            }
        }
        avg.add(r);
        return true;
    };

    if (spec.scenario == Scenario::shda) {
        const LabeledSet& source = *task.source;
        MlpSpec s_spec{layer_dims(source.x.cols()), cfg.activation, C};
        MlpSpec t_spec{layer_dims(task.unlabeled.cols() ? task.unlabeled.cols() : task.test.x.cols()),
                       cfg.activation, C};
        ShdaModel model = init_shda_model(s_spec, t_spec, init_rng);
        BatchStream src_stream(source.size(), root.split(detail::kSourceStream));
        BatchStream lab_stream(task.labeled.size(), root.split(detail::kLabeledStream));
        BatchStream unl_stream(task.unlabeled.rows(), root.split(detail::kUnlabeledStream));
        const bool full = spec.mean_scope == MeanScope::full_set;
        const std::size_t steps =
            full ? 1 : detail::ceil_div(std::max(source.size(), task.unlabeled.rows()), cfg.batch_size);
        run(model, steps, [&](ShdaModel& m) {
            if (full) return apply(m, shda_objective(m, source, task.labeled, task.unlabeled, spec));
            const LabeledSet s = detail::gather(source, src_stream.next(cfg.batch_size));
            const LabeledSet l = detail::gather(task.labeled, lab_stream.next(cfg.batch_size));
            const Matrix u = gather_rows(task.unlabeled, unl_stream.next(cfg.batch_size));
            return apply(m, shda_objective(m, s, l, u, spec));
        });
        result.model = std::move(model);
        return result;
    }

    MlpModel model;
    if (initial) {
        model = *initial;
    } else {
        if (spec.scenario == Scenario::sfda)
            throw std::invalid_argument("train: source-free adaptation needs a pretrained source model");
        const std::size_t input = spec.scenario == Scenario::uda ? task.source->x.cols() : task.test.x.cols();
        model = init_model(MlpSpec{layer_dims(input), cfg.activation, C}, init_rng);
    }
    const bool full = spec.mean_scope == MeanScope::full_set;
    BatchStream unl_stream(task.unlabeled.rows(), root.split(detail::kUnlabeledStream));
    auto unlabeled_batch = [&]() {
        return full ? task.unlabeled : gather_rows(task.unlabeled, unl_stream.next(cfg.batch_size));
    };

    switch (spec.scenario) {
        case Scenario::ssl: {
            BatchStream lab_stream(task.labeled.size(), root.split(detail::kLabeledStream));
            Rng lab_aug = root.split(detail::kLabeledAugStream);
            Rng unl_aug = root.split(detail::kUnlabeledAugStream);
            const std::size_t steps = detail::ceil_div(
                std::max<std::size_t>({task.labeled.size(), task.unlabeled.rows(), 1}), cfg.batch_size);
            run(model, steps, [&](MlpModel& m) {
                const LabeledSet l = detail::gather(task.labeled, lab_stream.next(cfg.batch_size));
                const Matrix u = spec.regularizer == Regularizer::none ? Matrix(0, task.unlabeled.cols())
                                                                       : unlabeled_batch();
                return apply(m, ssl_objective(m, l, u, spec, lab_aug, unl_aug));
            });
            break;
        }
        case Scenario::uda: {
            const LabeledSet& source = *task.source;
            BatchStream src_stream(source.size(), root.split(detail::kSourceStream));
            const std::size_t steps = detail::ceil_div(
                std::max<std::size_t>({source.size(), task.unlabeled.rows(), 1}), cfg.batch_size);
            run(model, steps, [&](MlpModel& m) {
                const LabeledSet s = detail::gather(source, src_stream.next(cfg.batch_size));
                const Matrix u = spec.regularizer == Regularizer::none ? Matrix(0, task.unlabeled.cols())
                                                                       : unlabeled_batch();
                return apply(m, uda_objective(m, s, u, spec));
            });
            break;
        }
        case Scenario::sfda: {
            const std::size_t steps = detail::ceil_div(task.unlabeled.rows(), cfg.batch_size);
            run(model, steps, [&](MlpModel& m) { return apply(m, sfda_objective(m, unlabeled_batch(), spec)); });
            break;
        }
        case Scenario::shda: break;
    }
    result.model = std::move(model);
    return result;
}

/// Source-only training on the labeled source split of an adaptation task.
[[nodiscard]] inline MlpModel pretrain_source(const TaskBundle& task, const TrainConfig& cfg) {
    ObjectiveSpec spec = ObjectiveSpec::defaults(Scenario::uda);
    spec.regularizer = Regularizer::none;
    auto r = train(task, spec, cfg);
    if (r.diverged) throw std::runtime_error("pretrain_source: " + r.message);
    return std::get<MlpModel>(std::move(r.model));
}

}  // namespace lerm
