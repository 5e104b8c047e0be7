#pragma once

// Continual training loop with optional memory evolution, plus the reference
// regimes it is compared against.

#include <algorithm>
#include <chrono>
#include <functional>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "drme/errors.hpp"
#include "drme/eval.hpp"
#include "drme/evolution.hpp"
#include "drme/memory.hpp"
#include "drme/nnet.hpp"
#include "drme/stream.hpp"

namespace drme {

enum class TrainMethod { FineTune, ER, ER_WGF_LD, ER_WGF_SVGD, ER_WGF_HMC, IidOffline };

inline std::string_view to_string(TrainMethod m) {
    switch (m) {
        case TrainMethod::FineTune: return "FineTune";
        case TrainMethod::ER: return "ER";
        case TrainMethod::ER_WGF_LD: return "ER_WGF_LD";
        case TrainMethod::ER_WGF_SVGD: return "ER_WGF_SVGD";
        case TrainMethod::ER_WGF_HMC: return "ER_WGF_HMC";
        case TrainMethod::IidOffline: return "IidOffline";
    }
    return "?";
}

inline std::optional<TrainMethod> parse_train_method(std::string_view s) {
    for (auto m : {TrainMethod::FineTune, TrainMethod::ER, TrainMethod::ER_WGF_LD, TrainMethod::ER_WGF_SVGD,
                   TrainMethod::ER_WGF_HMC, TrainMethod::IidOffline})
        if (to_string(m) == s) return m;
    return std::nullopt;
}

/// Evolution method implied by a training method, if it evolves memory.
inline std::optional<EvolutionMethod> evolution_of(TrainMethod m) {
    switch (m) {
        case TrainMethod::ER_WGF_LD: return EvolutionMethod::LD;
        case TrainMethod::ER_WGF_SVGD: return EvolutionMethod::SVGD;
        case TrainMethod::ER_WGF_HMC: return EvolutionMethod::HMC;
        default: return std::nullopt;
    }
}

struct TrainConfig {
    TrainMethod method = TrainMethod::ER;
    double lr = 0.05;
    std::size_t memory_capacity = 200;
    /// Replay minibatch size; 0 means "same as the incoming batch".
    std::size_t replay_batch = 0;
    EvolutionConfig evolution;
    int epochs = 5;  // IidOffline only
    std::uint64_t seed = 0;
    /// Checkpoint interval in batches (epochs for IidOffline); 0 = end only.
    int eval_every = 0;

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
        if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
        if (eval_every < 0) throw ConfigError("train.eval_every must be >= 0");
        evolution.validate();
    }
};

struct MetricsRow {
    std::int64_t step = 0;
    std::string method;
    std::uint64_t seed = 0;
    std::vector<double> task_accs;
    double avg_acc = 0.0;
    double wall_ms = 0.0;  // cumulative training time, evaluation excluded
};

struct RunMetrics {
    std::vector<MetricsRow> rows;

    const MetricsRow& final_row() const {
        if (rows.empty()) throw std::logic_error("no metrics recorded");
        return rows.back();
    }
};

namespace detail {

class Stopwatch {
public:
    void start() { t0_ = Clock::now(); }
    void stop() { total_ += std::chrono::duration<double, std::milli>(Clock::now() - t0_).count(); }
    double ms() const { return total_; }

private:
    using Clock = std::chrono::steady_clock;
    Clock::time_point t0_;
    double total_ = 0.0;
};

inline void check_model_fits(const Mlp& model, const Stream& stream) {
    if (model.input_dim() != stream.dim)
        throw ConfigError("model input dim " + std::to_string(model.input_dim()) + " does not match stream dim " +
                          std::to_string(stream.dim));
    if (model.num_classes() != stream.num_classes)
        throw ConfigError("model has " + std::to_string(model.num_classes()) + " outputs, stream has " +
                          std::to_string(stream.num_classes) + " classes");
}

inline MetricsRow checkpoint(const Mlp& model, const Stream& stream, std::int64_t step, TrainMethod method,
                             std::uint64_t seed, double wall_ms) {
    auto acc = accuracy(model, stream.test_sets);
    return {step, std::string(to_string(method)), seed, std::move(acc.per_task), acc.average, wall_ms};
}

// Independent streams derived from the run seed.
inline std::uint64_t memory_seed(std::uint64_t seed) { return seed * 0x9E3779B97F4A7C15ULL + 1; }
inline std::uint64_t evolution_seed(std::uint64_t seed) { return seed * 0xBF58476D1CE4E5B9ULL + 2; }
inline std::uint64_t shuffle_seed(std::uint64_t seed) { return seed * 0x94D049BB133111EBULL + 3; }

}  // namespace detail

/// Optional per-batch observer, called with the batch index and the model
/// after its update.
using StepObserver = std::function<void(std::int64_t, const Mlp&)>;

/// One pass over the stream. Per incoming batch: draw a replay minibatch,
/// evolve it (WGF methods), take one SGD step on the sum of the replay and
/// incoming mean losses, then offer the incoming samples to the reservoir.
/// Task ids are stripped before anything else sees a batch.
inline RunMetrics run_continual(const Stream& stream, Mlp& model, const TrainConfig& config,
                                const StepObserver& observer = {}) {
    config.validate();
    detail::check_model_fits(model, stream);
    if (config.method == TrainMethod::IidOffline) throw ConfigError("run_continual does not run IidOffline");

    const bool replay = config.method != TrainMethod::FineTune;
    const auto evo_method = evolution_of(config.method);
    EvolutionConfig evo = config.evolution;
    if (evo_method) evo.method = *evo_method;

    MemoryBuffer memory(replay ? config.memory_capacity : 0, detail::memory_seed(config.seed));
    std::mt19937_64 evo_rng(detail::evolution_seed(config.seed));

    RunMetrics metrics;
    detail::Stopwatch clock;
    const auto n_batches = std::int64_t(stream.batches.size());
    for (std::int64_t k = 0; k < n_batches; ++k) {
        clock.start();
        const Batch incoming = erase_tasks(stream.batches[std::size_t(k)]);
        Vector grad = param_grad(model, incoming).second;
        if (replay && !memory.empty()) {
            const std::size_t b = config.replay_batch ? config.replay_batch : std::size_t(incoming.size());
            Batch replayed = erase_tasks(memory.sample_minibatch(b));
            if (evo_method) replayed = evolve(replayed, model, evo, evo_rng);
            grad += param_grad(model, replayed).second;
        }
        model = sgd_step(model, grad, config.lr);
        if (replay) memory.reservoir_update(incoming);
        clock.stop();
        if (observer) observer(k, model);

        const bool last = k + 1 == n_batches;
        if (last || (config.eval_every > 0 && (k + 1) % config.eval_every == 0))
            metrics.rows.push_back(detail::checkpoint(model, stream, k + 1, config.method, config.seed, clock.ms()));
    }
    if (metrics.rows.empty()) metrics.rows.push_back(detail::checkpoint(model, stream, 0, config.method, config.seed, 0.0));
    return metrics;
}

/// Upper-bound reference: shuffled multi-epoch training on the pooled stream.
/// Rows are recorded at epoch ends (step = epoch); epochs = 0 records the
/// untrained model.
inline RunMetrics run_iid_offline(const Stream& stream, Mlp& model, const TrainConfig& config) {
    config.validate();
    detail::check_model_fits(model, stream);
    std::vector<Sample> pool;
    for (const auto& b : stream.batches)
        for (Index i = 0; i < b.size(); ++i) pool.push_back({b.inputs.row(i).transpose(), b.labels[std::size_t(i)], 0});
    const int batch_size = stream.batches.empty() ? 1 : int(stream.batches.front().size());

    std::mt19937_64 rng(detail::shuffle_seed(config.seed));
    RunMetrics metrics;
    detail::Stopwatch clock;
    metrics.rows.push_back(detail::checkpoint(model, stream, 0, TrainMethod::IidOffline, config.seed, 0.0));
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        clock.start();
        std::shuffle(pool.begin(), pool.end(), rng);
        for (const auto& batch : detail::chunk(pool, batch_size, stream.dim))
            model = sgd_step(model, param_grad(model, batch).second, config.lr);
        clock.stop();
        const bool record = epoch == config.epochs || (config.eval_every > 0 && epoch % config.eval_every == 0);
        if (record)
            metrics.rows.push_back(
                detail::checkpoint(model, stream, epoch, TrainMethod::IidOffline, config.seed, clock.ms()));
    }
    return metrics;
}

inline RunMetrics run(const Stream& stream, Mlp& model, const TrainConfig& config) {
    return config.method == TrainMethod::IidOffline ? run_iid_offline(stream, model, config)
                                                    : run_continual(stream, model, config);
}

}  // namespace drme
