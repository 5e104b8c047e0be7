#pragma once

// Stationary-law checks for the three samplers on the quadratic energy
// U(x) = |x|^2 / 2, whose target law is the standard normal.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "drme/evolution.hpp"

namespace drme {

struct MomentCheck {
    EvolutionMethod method;
    Vector mean;
    Vector var;
    double mean_tol;
    double var_lo;
    double var_hi;

    bool pass() const {
        return mean.cwiseAbs().maxCoeff() < mean_tol && var.minCoeff() >= var_lo && var.maxCoeff() <= var_hi;
    }
};

struct SanityOptions {
    Index dim = 2;
    Index particles = 2000;  // LD and HMC; SVGD uses svgd_particles
    Index svgd_particles = 100;
    int steps = 5000;
    int svgd_steps = 4000;
    double alpha = 0.01;
    double svgd_alpha = 0.1;
    double tau = 0.1;
    std::uint64_t seed = 0;
};

inline Matrix quadratic_energy_grad(const Matrix& x) { return x; }

namespace detail {

struct MomentAccumulator {
    Vector sum, sum_sq;
    double count = 0.0;

    explicit MomentAccumulator(Index d) : sum(Vector::Zero(d)), sum_sq(Vector::Zero(d)) {}

    void add(const Matrix& x) {
        sum += x.colwise().sum().transpose();
        sum_sq += x.array().square().matrix().colwise().sum().transpose();
        count += double(x.rows());
    }
    Vector mean() const { return sum / count; }
    Vector var() const { return (sum_sq / count).array() - mean().array().square(); }
};

}  // namespace detail

/// Langevin or HMC: runs `steps` steps from a point mass at 3 and averages
/// particle moments over snapshots taken every 100 steps in the second half.
inline MomentCheck check_stochastic_sampler(EvolutionMethod method, const SanityOptions& opt) {
    EvolutionConfig cfg;
    cfg.method = method;
    cfg.alpha = opt.alpha;
    cfg.tau = opt.tau;
    std::mt19937_64 rng(opt.seed);
    ParticleState p{Matrix::Constant(opt.particles, opt.dim, 3.0), std::vector<int>(std::size_t(opt.particles), 0),
                    std::nullopt};
    if (method == EvolutionMethod::HMC) p.momenta = Matrix::Zero(opt.particles, opt.dim);
    const EnergyGradFn grad = quadratic_energy_grad;
    detail::MomentAccumulator acc(opt.dim);
    for (int t = 1; t <= opt.steps; ++t) {
        p = step(std::move(p), grad, cfg, rng);
        if (2 * t > opt.steps && t % 100 == 0) acc.add(p.positions);
    }
    return {method, acc.mean(), acc.var(), 0.05, 0.9, 1.1};
}

/// SVGD from a seeded N(2, 0.3^2) cloud; moments of the final configuration.
inline MomentCheck check_svgd(const SanityOptions& opt) {
    EvolutionConfig cfg;
    cfg.method = EvolutionMethod::SVGD;
    cfg.alpha = opt.svgd_alpha;
    std::mt19937_64 rng(opt.seed);
    ParticleState p{(0.3 * standard_normal(opt.svgd_particles, opt.dim, rng)).array() + 2.0,
                    std::vector<int>(std::size_t(opt.svgd_particles), 0), std::nullopt};
    const EnergyGradFn grad = quadratic_energy_grad;
    for (int t = 0; t < opt.svgd_steps; ++t) p = step_svgd(std::move(p), grad, cfg);
    detail::MomentAccumulator acc(opt.dim);
    acc.add(p.positions);
    return {EvolutionMethod::SVGD, acc.mean(), acc.var(), 0.05, 0.85, 1.15};
}

inline MomentCheck run_sanity(EvolutionMethod method, const SanityOptions& opt = {}) {
    return method == EvolutionMethod::SVGD ? check_svgd(opt) : check_stochastic_sampler(method, opt);
}

}  // namespace drme
