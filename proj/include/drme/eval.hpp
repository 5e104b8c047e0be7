#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "drme/errors.hpp"
#include "drme/evolution.hpp"
#include "drme/nnet.hpp"

namespace drme {

/// Argmax class per row; ties go to the lowest index.
inline std::vector<int> predict(const Mlp& model, const Matrix& inputs) {
    const Matrix logits = forward(model, inputs);
    std::vector<int> out(std::size_t(logits.rows()));
    for (Index i = 0; i < logits.rows(); ++i) {
        Index best = 0;
        logits.row(i).maxCoeff(&best);
        out[std::size_t(i)] = int(best);
    }
    return out;
}

/// Fraction of rows whose argmax matches the label.
inline double batch_accuracy(const Mlp& model, const Batch& batch) {
    if (batch.empty()) throw EmptyBatchError("accuracy of an empty test set");
    const auto pred = predict(model, batch.inputs);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == batch.labels[i];
    return double(hit) / double(pred.size());
}

struct AccuracyReport {
    std::vector<double> per_task;
    double average = 0.0;  // unweighted mean over tasks
};

inline AccuracyReport accuracy(const Mlp& model, const std::vector<Batch>& test_sets) {
    if (test_sets.empty()) throw EmptyBatchError("accuracy needs at least one test set");
    AccuracyReport r;
    for (const auto& t : test_sets) r.per_task.push_back(batch_accuracy(model, t));
    double s = 0.0;
    for (double a : r.per_task) s += a;
    r.average = s / double(r.per_task.size());
    return r;
}

/// Untargeted L-infinity PGD on the training cross-entropy.
struct AttackConfig {
    std::vector<double> epsilons;
    int steps = 20;
    double step_size = 2.0 / 255.0;
    bool random_start = false;
    std::optional<Clamp> clamp = Clamp{0.0, 1.0};
    std::uint64_t seed = 0;

    void validate() const {
        if (epsilons.empty()) throw ConfigError("attack.epsilons must not be empty");
        for (double e : epsilons)
            if (!(e >= 0.0)) throw ConfigError("attack.epsilons must be >= 0");
        if (steps < 1) throw ConfigError("attack.steps must be >= 1");
        if (!(step_size > 0.0)) throw ConfigError("attack.step_size must be > 0");
        if (clamp && !(clamp->lo <= clamp->hi)) throw ConfigError("attack.clamp needs lo <= hi");
    }

    /// Budgets k/255 * scale for k = 1..10 with step 2/255 * scale, for inputs
    /// whose natural range has width `scale`.
    static AttackConfig standard_grid(double scale = 1.0) {
        AttackConfig c;
        for (int k = 1; k <= 10; ++k) c.epsilons.push_back(k / 255.0 * scale);
        c.step_size = 2.0 / 255.0 * scale;
        return c;
    }
};

namespace detail {

/// Largest double hi' <= x0 + eps with hi' - x0 <= eps in floating point.
inline double ball_upper(double x0, double eps) {
    double hi = x0 + eps;
    while (hi - x0 > eps) hi = std::nextafter(hi, x0);
    return hi;
}

inline double ball_lower(double x0, double eps) {
    double lo = x0 - eps;
    while (x0 - lo > eps) lo = std::nextafter(lo, x0);
    return lo;
}

}  // namespace detail

/// Per-coordinate feasible box: the eps-ball around x0 intersected with the
/// input domain. Every point inside satisfies both bounds exactly.
struct FeasibleBox {
    Matrix lo, hi;

    FeasibleBox(const Matrix& x0, double eps, const std::optional<Clamp>& clamp) : lo(x0.rows(), x0.cols()),
                                                                                  hi(x0.rows(), x0.cols()) {
        for (Index c = 0; c < x0.cols(); ++c)
            for (Index r = 0; r < x0.rows(); ++r) {
                double l = detail::ball_lower(x0(r, c), eps), h = detail::ball_upper(x0(r, c), eps);
                if (clamp) {
                    l = std::max(l, clamp->lo);
                    h = std::min(h, clamp->hi);
                    // x0 outside the domain: stay at the nearest domain point
                    if (l > h) l = h = std::clamp(x0(r, c), clamp->lo, clamp->hi);
                }
                lo(r, c) = l;
                hi(r, c) = h;
            }
    }

    Matrix project(const Matrix& x) const { return x.cwiseMax(lo).cwiseMin(hi); }
};

/// Adversarial inputs for one budget. `start_offsets` (entries in [-1, 1])
/// place the start at x0 + eps * offset; pass an empty matrix for x0.
inline Matrix pgd_perturb(const Mlp& model, const Batch& batch, double eps, const AttackConfig& cfg,
                          const Matrix& start_offsets) {
    const FeasibleBox box(batch.inputs, eps, cfg.clamp);
    Matrix x = start_offsets.size() == 0 ? batch.inputs : Matrix(batch.inputs + eps * start_offsets);
    x = box.project(x);
    if (eps == 0.0) return x;
    for (int s = 0; s < cfg.steps; ++s) {
        const Matrix g = input_grads(model, x, batch.labels);
        x = box.project(x + cfg.step_size * g.unaryExpr([](double v) { return double((v > 0.0) - (v < 0.0)); }));
    }
    return x;
}

/// Robust accuracy on `batch` for each budget in cfg.epsilons. With
/// random_start, every budget shares one draw of start offsets.
inline std::vector<double> pgd_attack(const Mlp& model, const Batch& batch, const AttackConfig& cfg) {
    cfg.validate();
    if (batch.empty()) throw EmptyBatchError("pgd_attack on an empty batch");
    Matrix offsets;
    if (cfg.random_start) {
        std::mt19937_64 rng(cfg.seed);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        offsets.resize(batch.size(), batch.dim());
        for (Index c = 0; c < offsets.cols(); ++c)
            for (Index r = 0; r < offsets.rows(); ++r) offsets(r, c) = u(rng);
    }
    std::vector<double> out;
    for (double eps : cfg.epsilons) {
        Batch adv = batch;
        adv.inputs = pgd_perturb(model, batch, eps, cfg, offsets);
        out.push_back(batch_accuracy(model, adv));
    }
    return out;
}

/// Concatenation of batches (e.g. per-task test sets) into one.
inline Batch concat(const std::vector<Batch>& parts) {
    Batch out;
    Index n = 0, d = 0;
    for (const auto& p : parts) {
        n += p.size();
        if (p.size() > 0) d = p.dim();
    }
    out.inputs.resize(n, d);
    Index at = 0;
    for (const auto& p : parts) {
        if (p.size() == 0) continue;
        out.inputs.middleRows(at, p.size()) = p.inputs;
        at += p.size();
        out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
        out.tasks.insert(out.tasks.end(), p.tasks.begin(), p.tasks.end());
    }
    return out;
}

}  // namespace drme
