#pragma once

// Flat key=value run configuration: parsing with line-numbered diagnostics,
// scenario-dependent defaults, a fixed-order `resolved.cfg` writer, and
// builders for the task, objective and training settings.

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lerm/format.hpp"
#include "lerm/model.hpp"
#include "lerm/risks.hpp"
#include "lerm/tasks.hpp"
#include "lerm/trainer.hpp"

namespace lerm {

/// Raised for malformed configuration; `line` is 1-based, 0 when not tied to a line.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(const std::string& msg, std::size_t line = 0)
        : std::invalid_argument(line ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
    [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

enum class TaskPreset { blobs, imbalanced, uda, shda };

[[nodiscard]] inline const char* to_string(TaskPreset t) noexcept {
    switch (t) {
        case TaskPreset::blobs: return "blobs";
        case TaskPreset::imbalanced: return "imbalanced";
        case TaskPreset::uda: return "uda";
        case TaskPreset::shda: return "shda";
    }
    return "?";
}

struct RunConfig {
    Scenario scenario = Scenario::ssl;
    TaskPreset task = TaskPreset::blobs;
    std::uint64_t seed_task = 1;
    std::uint64_t seed_train = 1;
    std::size_t repeats = 1;

    // generator
    std::size_t classes = 10;
    std::size_t dim = 16;
    double spread = 0.3;
    std::size_t labeled_per_class = 1;
    std::size_t unlabeled_per_class = 200;
    std::size_t test_per_class = 100;
    std::size_t majority_n = 100;
    std::size_t minority_n = 2;
    std::vector<std::size_t> minority_classes{9, 10};  // 1-based
    std::size_t source_per_class = 100;
    double shift = 0.0;
    double rotation = 0.0;
    std::size_t latent_dim = 8;
    std::size_t source_dim = 20;
    std::size_t target_dim = 7;

    // objective
    bool use_erm = true;
    Regularizer regularizer = Regularizer::lerm;
    Divergence divergence = Divergence::l1;
    double lambda = 1.0;
    double mu = 0.1;
    double alpha = 0.0;
    double tau = 0.01;
    MeanScope mean_scope = MeanScope::mini_batch;
    double aug_weak_sigma = 0.0;
    double aug_strong_sigma = 0.0;
    double aug_dropout = 0.2;

    // training
    std::size_t epochs = 60;
    std::size_t batch_size = 32;
    double learning_rate = 0.01;
    OptimizerKind optimizer = OptimizerKind::sgd_momentum;
    double momentum = 0.9;
    std::size_t eval_every = 1;
    std::vector<std::size_t> hidden{64};
    Activation activation = Activation::relu;
    std::size_t pretrain_epochs = 30;
    std::string source_checkpoint;

    std::string out;

    /// Defaults for a scenario, including its natural task preset.
    static RunConfig defaults(Scenario s);

    [[nodiscard]] TaskBundle make_task(std::uint64_t seed) const;
    [[nodiscard]] TaskBundle make_task() const { return make_task(seed_task); }
    [[nodiscard]] ObjectiveSpec objective() const;
    [[nodiscard]] TrainConfig train_config() const;
    [[nodiscard]] TrainConfig train_config(std::uint64_t seed) const;
};

namespace detail {

inline std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = s.find(',', start);
        out.emplace_back(trim(s.substr(start, comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::vector<std::size_t> parse_size_list(std::string_view s) {
    std::vector<std::size_t> out;
    if (trim(s).empty()) return out;
    for (const auto& item : split_list(s)) out.push_back(static_cast<std::size_t>(parse_u64(item)));
    return out;
}

inline std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

inline bool parse_bool(std::string_view s) {
    s = trim(s);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw std::invalid_argument("not a boolean: '" + std::string(s) + "'");
}

inline Scenario parse_scenario(std::string_view s) {
    for (auto v : {Scenario::ssl, Scenario::uda, Scenario::shda, Scenario::sfda})
        if (s == to_string(v)) return v;
    throw std::invalid_argument("unknown scenario '" + std::string(s) + "'");
}

inline TaskPreset parse_task(std::string_view s) {
    for (auto v : {TaskPreset::blobs, TaskPreset::imbalanced, TaskPreset::uda, TaskPreset::shda})
        if (s == to_string(v)) return v;
    throw std::invalid_argument("unknown task '" + std::string(s) + "'");
}

inline Regularizer parse_regularizer(std::string_view s) {
    for (auto v : {Regularizer::none, Regularizer::entmin, Regularizer::lerm})
        if (s == to_string(v)) return v;
    throw std::invalid_argument("unknown regularizer '" + std::string(s) + "'");
}

inline Divergence parse_divergence(std::string_view s) {
    for (auto v : {Divergence::l1, Divergence::l2, Divergence::ce})
        if (s == to_string(v)) return v;
    throw std::invalid_argument("unknown divergence '" + std::string(s) + "'");
}

inline MeanScope parse_mean_scope(std::string_view s) {
    if (s == "minibatch") return MeanScope::mini_batch;
    if (s == "fullset") return MeanScope::full_set;
    throw std::invalid_argument("unknown mean_scope '" + std::string(s) + "'");
}

struct KeyInfo {
    const char* name;
    bool numeric;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define LERM_SIZE_KEY(field) \
    KeyInfo{#field, true, [](RunConfig& c, std::string_view v) { c.field = static_cast<std::size_t>(parse_u64(v)); }, \
            [](const RunConfig& c) { return std::to_string(c.field); }}
#define LERM_U64_KEY(field) \
    KeyInfo{#field, true, [](RunConfig& c, std::string_view v) { c.field = parse_u64(v); }, \
            [](const RunConfig& c) { return std::to_string(c.field); }}
#define LERM_REAL_KEY(field) \
    KeyInfo{#field, true, [](RunConfig& c, std::string_view v) { c.field = parse_double(v); }, \
            [](const RunConfig& c) { return format_double(c.field); }}
#define LERM_ENUM_KEY(field, parser) \
    KeyInfo{#field, false, [](RunConfig& c, std::string_view v) { c.field = parser(trim(v)); }, \
            [](const RunConfig& c) { return std::string(to_string(c.field)); }}

/// Every accepted key, in `resolved.cfg` order.
inline const std::vector<KeyInfo>& key_table() {
    static const std::vector<KeyInfo> keys = {
        LERM_ENUM_KEY(scenario, parse_scenario),
        LERM_ENUM_KEY(task, parse_task),
        LERM_U64_KEY(seed_task),
        LERM_U64_KEY(seed_train),
        LERM_SIZE_KEY(repeats),
        LERM_SIZE_KEY(classes),
        LERM_SIZE_KEY(dim),
        LERM_REAL_KEY(spread),
        LERM_SIZE_KEY(labeled_per_class),
        LERM_SIZE_KEY(unlabeled_per_class),
        LERM_SIZE_KEY(test_per_class),
        LERM_SIZE_KEY(majority_n),
        LERM_SIZE_KEY(minority_n),
        KeyInfo{"minority_classes", false,
                [](RunConfig& c, std::string_view v) { c.minority_classes = parse_size_list(v); },
                [](const RunConfig& c) { return join(c.minority_classes); }},
        LERM_SIZE_KEY(source_per_class),
        LERM_REAL_KEY(shift),
        LERM_REAL_KEY(rotation),
        LERM_SIZE_KEY(latent_dim),
        LERM_SIZE_KEY(source_dim),
        LERM_SIZE_KEY(target_dim),
        KeyInfo{"use_erm", false, [](RunConfig& c, std::string_view v) { c.use_erm = parse_bool(v); },
                [](const RunConfig& c) { return format_bool(c.use_erm); }},
        LERM_ENUM_KEY(regularizer, parse_regularizer),
        LERM_ENUM_KEY(divergence, parse_divergence),
        LERM_REAL_KEY(lambda),
        LERM_REAL_KEY(mu),
        LERM_REAL_KEY(alpha),
        LERM_REAL_KEY(tau),
        LERM_ENUM_KEY(mean_scope, parse_mean_scope),
        LERM_REAL_KEY(aug_weak_sigma),
        LERM_REAL_KEY(aug_strong_sigma),
        LERM_REAL_KEY(aug_dropout),
        LERM_SIZE_KEY(epochs),
        LERM_SIZE_KEY(batch_size),
        LERM_REAL_KEY(learning_rate),
        LERM_ENUM_KEY(optimizer, parse_optimizer),
        LERM_REAL_KEY(momentum),
        LERM_SIZE_KEY(eval_every),
        KeyInfo{"hidden", false, [](RunConfig& c, std::string_view v) { c.hidden = parse_size_list(v); },
                [](const RunConfig& c) { return join(c.hidden); }},
        LERM_ENUM_KEY(activation, parse_activation),
        LERM_SIZE_KEY(pretrain_epochs),
        KeyInfo{"source_checkpoint", false,
                [](RunConfig& c, std::string_view v) { c.source_checkpoint = std::string(trim(v)); },
                [](const RunConfig& c) { return c.source_checkpoint; }},
        KeyInfo{"out", false, [](RunConfig& c, std::string_view v) { c.out = std::string(trim(v)); },
                [](const RunConfig& c) { return c.out; }},
    };
    return keys;
}

#undef LERM_SIZE_KEY
#undef LERM_U64_KEY
#undef LERM_REAL_KEY
#undef LERM_ENUM_KEY

inline const KeyInfo* find_key(std::string_view name) {
    for (const auto& k : key_table())
        if (name == k.name) return &k;
    return nullptr;
}

}  // namespace detail

inline RunConfig RunConfig::defaults(Scenario s) {
    RunConfig c;
    c.scenario = s;
    switch (s) {
        case Scenario::ssl: break;
        case Scenario::uda:
        case Scenario::sfda:
            c.task = TaskPreset::uda;
            c.shift = 1.0;
            c.rotation = 0.6;
            c.unlabeled_per_class = 100;
            if (s == Scenario::sfda) c.use_erm = false;
            break;
        case Scenario::shda:
            c.task = TaskPreset::shda;
            c.labeled_per_class = 5;
            c.unlabeled_per_class = 100;
            c.tau = 0.01;
            c.mean_scope = MeanScope::full_set;
            c.optimizer = OptimizerKind::adam;
            c.learning_rate = 0.001;
            c.activation = Activation::leaky_relu;
            c.hidden = {64};
            c.spread = 0.2;
            c.epochs = 500;
            c.eval_every = 25;
            break;
    }
    const AugmentPair aug = AugmentPair::for_spread(c.spread);
    c.aug_weak_sigma = aug.weak.sigma;
    c.aug_strong_sigma = aug.strong.sigma;
    c.aug_dropout = aug.strong.dropout;
    return c;
}

/// True when `key` names a numeric setting (valid sweep target).
[[nodiscard]] inline bool is_numeric_key(std::string_view key) {
    const auto* k = detail::find_key(key);
    return k && k->numeric;
}

/// Applies one key=value assignment. Augmentation strengths follow `spread`
/// unless they were set explicitly (tracked in `explicit_keys`).
inline void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value,
                          std::set<std::string>* explicit_keys = nullptr, std::size_t line = 0) {
    const auto* k = detail::find_key(key);
    if (!k) throw ConfigError("unknown key '" + std::string(key) + "'", line);
    try {
        k->set(cfg, value);
    } catch (const std::exception& e) {
        throw ConfigError(std::string(key) + ": " + e.what(), line);
    }
    if (explicit_keys) explicit_keys->insert(std::string(key));
}

namespace detail {

inline void refresh_augment(RunConfig& cfg, const std::set<std::string>& explicit_keys) {
    const AugmentPair aug = AugmentPair::for_spread(cfg.spread);
    if (!explicit_keys.count("aug_weak_sigma")) cfg.aug_weak_sigma = aug.weak.sigma;
    if (!explicit_keys.count("aug_strong_sigma")) cfg.aug_strong_sigma = aug.strong.sigma;
}

}  // namespace detail

/// Parses config text. The scenario line, wherever it appears, selects the
/// defaults; every other line overrides them.
[[nodiscard]] inline RunConfig parse_config(std::string_view text) {
    struct Line {
        std::size_t number;
        std::string key, value;
    };
    std::vector<Line> lines;
    std::set<std::string> seen;
    std::istringstream in{std::string(text)};
    std::string raw_line;
    std::size_t number = 0;
    while (std::getline(in, raw_line)) {
        ++number;
        std::string_view s = raw_line;
        if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
        s = trim(s);
        if (s.empty()) continue;
        const auto eq = s.find('=');
        if (eq == std::string_view::npos) throw ConfigError("expected key=value", number);
        std::string key(trim(s.substr(0, eq)));
        if (key.empty()) throw ConfigError("empty key", number);
        if (!detail::find_key(key)) throw ConfigError("unknown key '" + key + "'", number);
        if (!seen.insert(key).second) throw ConfigError("duplicate key '" + key + "'", number);
        lines.push_back({number, std::move(key), std::string(trim(s.substr(eq + 1)))});
    }

    RunConfig cfg;
    for (const auto& l : lines) {
        if (l.key != "scenario") continue;
        try {
            cfg = RunConfig::defaults(detail::parse_scenario(l.value));
        } catch (const std::exception& e) {
            throw ConfigError(e.what(), l.number);
        }
    }
    std::set<std::string> explicit_keys;
    for (const auto& l : lines) apply_setting(cfg, l.key, l.value, &explicit_keys, l.number);
    detail::refresh_augment(cfg, explicit_keys);
    return cfg;
}

[[nodiscard]] inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Every effective value, one `key=value` per line in a fixed order.
inline void write_resolved(std::ostream& os, const RunConfig& cfg) {
    for (const auto& k : detail::key_table()) os << k.name << '=' << k.get(cfg) << '\n';
}

[[nodiscard]] inline std::string resolved_text(const RunConfig& cfg) {
    std::ostringstream ss;
    write_resolved(ss, cfg);
    return ss.str();
}

/// Value of a key in its resolved textual form.
[[nodiscard]] inline std::string get_setting(const RunConfig& cfg, std::string_view key) {
    const auto* k = detail::find_key(key);
    if (!k) throw ConfigError("unknown key '" + std::string(key) + "'");
    return k->get(cfg);
}

inline TaskBundle RunConfig::make_task(std::uint64_t seed) const {
    Rng rng(seed);
    switch (task) {
        case TaskPreset::blobs:
            return gen_blobs_ssl(rng, classes, labeled_per_class, unlabeled_per_class, test_per_class, dim,
                                 spread);
        case TaskPreset::imbalanced: {
            std::vector<std::size_t> minority;
            for (auto c : minority_classes) {
                if (c == 0) throw ConfigError("minority_classes are 1-based");
                minority.push_back(c - 1);
            }
            return gen_imbalanced_ssl(rng, classes, majority_n, minority_n, minority, dim, spread,
                                      unlabeled_per_class, test_per_class);
        }
        case TaskPreset::uda:
            return gen_uda(rng, classes, source_per_class, unlabeled_per_class, dim, spread, shift, rotation,
                           test_per_class);
        case TaskPreset::shda:
            return gen_shda(rng, classes, source_per_class, labeled_per_class, unlabeled_per_class, latent_dim,
                            source_dim, target_dim, spread, test_per_class);
    }
    throw ConfigError("unknown task preset");
}

inline ObjectiveSpec RunConfig::objective() const {
    ObjectiveSpec o;
    o.scenario = scenario;
    o.use_erm = use_erm;
    o.regularizer = regularizer;
    o.divergence = divergence;
    o.lambda = lambda;
    o.mu = mu;
    o.alpha = alpha;
    o.tau = tau;
    o.mean_scope = mean_scope;
    o.augment = {{aug_weak_sigma, 0.0}, {aug_strong_sigma, aug_dropout}};
    o.validate();
    return o;
}

inline TrainConfig RunConfig::train_config(std::uint64_t seed) const {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.learning_rate = learning_rate;
    t.optimizer = optimizer;
    t.momentum = momentum;
    t.seed = seed;
    t.eval_every = eval_every;
    t.hidden = hidden;
    t.activation = activation;
    t.validate();
    return t;
}

inline TrainConfig RunConfig::train_config() const { return train_config(seed_train); }

/// Trains one configured run for repeat `r` (seeds offset by r). Source-free
/// runs pretrain on the source split first unless a checkpoint is configured.
[[nodiscard]] inline TrainResult run_once(const RunConfig& cfg, std::size_t r = 0) {
    const TaskBundle task = cfg.make_task(cfg.seed_task + r);
    const TrainConfig tc = cfg.train_config(cfg.seed_train + r);
    if (cfg.scenario != Scenario::sfda) return train(task, cfg.objective(), tc);
    MlpModel source;
    if (!cfg.source_checkpoint.empty()) {
        std::ifstream in(cfg.source_checkpoint, std::ios::binary);
        if (!in) throw ConfigError("cannot read checkpoint '" + cfg.source_checkpoint + "'");
        source = load_checkpoint(in);
    } else {
        TrainConfig pre = tc;
        pre.epochs = cfg.pretrain_epochs;
        source = pretrain_source(task, pre);
    }
    return train(task, cfg.objective(), tc, &source);
}

}  // namespace lerm
