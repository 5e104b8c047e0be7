#pragma once

// Memory evolution: particle discretizations of a Wasserstein gradient flow
// that push a replayed minibatch toward higher loss while the noise or kernel
// repulsion keeps it spread out.
//
// The energy of a particle x with label y is
//
//     U(x) = -loss(theta, x, y) - beta * grad_theta loss(theta, x, y) . v
//
// where v is the mean parameter gradient over the raw (pre-evolution) batch.
// Each stepper moves particles down grad_x U, i.e. toward harder examples.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "drme/errors.hpp"
#include "drme/nnet.hpp"

namespace drme {

enum class EvolutionMethod { LD, SVGD, HMC };

inline std::string_view to_string(EvolutionMethod m) {
    switch (m) {
        case EvolutionMethod::LD: return "ld";
        case EvolutionMethod::SVGD: return "svgd";
        case EvolutionMethod::HMC: return "hmc";
    }
    return "?";
}

struct Clamp {
    double lo = 0.0;
    double hi = 1.0;
};

/// How the plain loss gradient at theta is obtained when beta > 0.
///
/// Exact runs its own backward pass. Symmetric reuses the two passes of the
/// central difference, 0.5 * (g(theta + h) + g(theta - h)), which differs from
/// the exact value by O(h^2) and saves a third of the work per step.
enum class CenterGradient { Exact, Symmetric };

struct EvolutionConfig {
    EvolutionMethod method = EvolutionMethod::LD;
    double alpha = 0.01;
    int steps = 5;
    double beta = 0.003;
    double tau = 0.1;
    /// Fixed kernel bandwidth; unset selects the median heuristic each step.
    std::optional<double> kernel_sigma;
    double fd_eps = kDefaultFdEps;
    CenterGradient center = CenterGradient::Symmetric;
    std::optional<Clamp> clamp;

    void validate() const {
        if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("evolution.alpha must be >= 0");
        if (steps < 0) throw ConfigError("evolution.steps must be >= 0");
        if (!(beta >= 0.0)) throw ConfigError("evolution.beta must be >= 0");
        if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("evolution.tau must lie in [0, 1]");
        if (kernel_sigma && !(*kernel_sigma > 0.0)) throw ConfigError("evolution.kernel_sigma must be > 0");
        if (!(fd_eps > 0.0)) throw ConfigError("evolution.fd_eps must be > 0");
        if (clamp && !(clamp->lo <= clamp->hi)) throw ConfigError("evolution.clamp needs lo <= hi");
    }
};

/// Evolving copies of a memory minibatch. `momenta` is present only for HMC.
struct ParticleState {
    Matrix positions;
    std::vector<int> labels;
    std::optional<Matrix> momenta;

    Index size() const { return positions.rows(); }
};

inline ParticleState make_particles(const Batch& batch, EvolutionMethod method) {
    ParticleState s{batch.inputs, batch.labels, std::nullopt};
    if (method == EvolutionMethod::HMC) s.momenta = Matrix::Zero(batch.inputs.rows(), batch.inputs.cols());
    return s;
}

inline void apply_clamp(Matrix& x, const std::optional<Clamp>& clamp) {
    if (clamp) x = x.cwiseMax(clamp->lo).cwiseMin(clamp->hi);
}

// ---------------------------------------------------------------------------
// kernel

struct KernelValue {
    double k;
    Vector grad_xj;  // gradient of k with respect to its second argument
};

/// k = exp(-|xi - xj|^2 / (2 sigma^2)); d k / d xj = k (xi - xj) / sigma^2.
inline KernelValue gaussian_kernel(const Vector& xi, const Vector& xj, double sigma) {
    if (!(sigma > 0.0)) throw ConfigError("kernel bandwidth must be positive");
    if (xi.size() != xj.size()) throw ShapeError("kernel arguments differ in dimension");
    const double s2 = sigma * sigma;
    const Vector diff = xi - xj;
    const double k = std::exp(-diff.squaredNorm() / (2.0 * s2));
    return {k, k * diff / s2};
}

inline constexpr double kMinBandwidthSq = 1e-6;

/// Median heuristic: sigma^2 = median pairwise |xi - xj|^2 / (2 ln(n + 1)),
/// floored at 1e-6. Returns sigma.
inline double median_bandwidth(const Matrix& positions) {
    const Index n = positions.rows();
    std::vector<double> d2;
    d2.reserve(std::size_t(n * (n - 1) / 2));
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) d2.push_back((positions.row(i) - positions.row(j)).squaredNorm());
    double med = 0.0;
    if (!d2.empty()) {
        const std::size_t mid = d2.size() / 2;
        std::nth_element(d2.begin(), d2.begin() + std::ptrdiff_t(mid), d2.end());
        med = d2[mid];
        if (d2.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d2.begin(), d2.begin() + std::ptrdiff_t(mid)));
    }
    const double s2 = std::max(med / (2.0 * std::log(double(n) + 1.0)), kMinBandwidthSq);
    return std::sqrt(s2);
}

// ---------------------------------------------------------------------------
// energy gradient

/// Mean parameter gradient over the anchor batch (the v of the dot-product term).
inline Vector anchor_direction(const Mlp& model, const Batch& anchor) {
    return param_grad(model, anchor).second;
}

/// grad_x U for every particle given a precomputed anchor direction.
inline Matrix energy_grad(const Mlp& model, const Matrix& positions, std::span<const int> labels,
                          const Vector& anchor_dir, double beta, double fd_eps = kDefaultFdEps,
                          CenterGradient center = CenterGradient::Exact) {
    model.check_flat_size(anchor_dir);
    const double norm = anchor_dir.norm();
    if (beta == 0.0 || norm == 0.0 || center == CenterGradient::Exact) {
        Matrix g = -input_grads(model, positions, labels);
        if (beta != 0.0) g -= beta * mixed_grad_fd(model, positions, labels, anchor_dir, fd_eps);
        return g;
    }
    if (!(fd_eps > 0.0)) throw ConfigError("fd_eps must be positive");
    const Vector unit = anchor_dir / norm;
    const Matrix plus = input_grads(model.shifted(unit, fd_eps), positions, labels);
    const Matrix minus = input_grads(model.shifted(unit, -fd_eps), positions, labels);
    return -0.5 * (plus + minus) - beta * (norm / (2.0 * fd_eps)) * (plus - minus);
}

inline Matrix energy_grad(const Mlp& model, const ParticleState& particles, const Batch& anchor, double beta,
                          double fd_eps = kDefaultFdEps) {
    if (beta == 0.0) return -input_grads(model, particles.positions, particles.labels);
    if (anchor.empty()) throw EmptyBatchError("energy_grad needs a nonempty anchor when beta > 0");
    return energy_grad(model, particles.positions, particles.labels, anchor_direction(model, anchor), beta, fd_eps);
}

/// Energy gradient of a model with the anchor direction frozen, as a callable
/// over particle positions.
struct ModelEnergy {
    const Mlp* model;
    std::vector<int> labels;
    Vector anchor_dir;
    double beta;
    double fd_eps;
    CenterGradient center;

    ModelEnergy(const Mlp& m, std::vector<int> y, const Batch& anchor, double beta_, double fd_eps_,
                CenterGradient center_ = CenterGradient::Exact)
        : model(&m), labels(std::move(y)), beta(beta_), fd_eps(fd_eps_), center(center_) {
        if (beta != 0.0) {
            if (anchor.empty()) throw EmptyBatchError("energy needs a nonempty anchor when beta > 0");
            anchor_dir = anchor_direction(m, anchor);
        }
    }

    Matrix operator()(const Matrix& positions) const {
        if (beta == 0.0) return -input_grads(*model, positions, labels);
        return energy_grad(*model, positions, labels, anchor_dir, beta, fd_eps, center);
    }
};

using EnergyGradFn = std::function<Matrix(const Matrix&)>;

inline Matrix standard_normal(Index rows, Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    Matrix out(rows, cols);
    for (Index c = 0; c < cols; ++c)
        for (Index r = 0; r < rows; ++r) out(r, c) = n01(rng);
    return out;
}

// ---------------------------------------------------------------------------
// update rules with explicit gradients and noise

/// x - alpha * grad + sqrt(2 alpha) * noise.
inline Matrix ld_update(const Matrix& x, const Matrix& grad, double alpha, const Matrix& noise) {
    return x - alpha * grad + std::sqrt(2.0 * alpha) * noise;
}

/// x_i - (alpha / n) sum_j [k(x_i, x_j) grad_j - d k(x_i, x_j) / d x_j].
///
/// The kernel-gradient term pushes x_i away from x_j. `repulsion = false`
/// drops it, leaving only the kernel-smoothed gradient.
inline Matrix svgd_update(const Matrix& x, const Matrix& grad, double alpha, double sigma, bool repulsion = true) {
    const Index n = x.rows();
    if (n == 0) return x;
    const double s2 = sigma * sigma;
    Matrix k(n, n);
    for (Index i = 0; i < n; ++i) {
        k(i, i) = 1.0;
        for (Index j = i + 1; j < n; ++j) k(i, j) = k(j, i) = std::exp(-(x.row(i) - x.row(j)).squaredNorm() / (2.0 * s2));
    }
    Matrix phi = k * grad;
    if (repulsion) {
        // sum_j k_ij (x_i - x_j) = rowsum(k)_i x_i - (k x)_i
        const Matrix pull = x.array().colwise() * k.rowwise().sum().array();
        phi -= (pull - k * x) / s2;
    }
    return x - (alpha / double(n)) * phi;
}

// ---------------------------------------------------------------------------
// one step of each method over an arbitrary energy

inline ParticleState step_ld(ParticleState particles, const EnergyGradFn& grad, const EvolutionConfig& cfg,
                             std::mt19937_64& rng) {
    const Matrix noise = standard_normal(particles.positions.rows(), particles.positions.cols(), rng);
    if (cfg.alpha == 0.0) return particles;
    particles.positions = ld_update(particles.positions, grad(particles.positions), cfg.alpha, noise);
    apply_clamp(particles.positions, cfg.clamp);
    return particles;
}

inline ParticleState step_svgd(ParticleState particles, const EnergyGradFn& grad, const EvolutionConfig& cfg) {
    if (particles.size() == 0) throw EmptyBatchError("step_svgd needs at least one particle");
    if (cfg.alpha == 0.0) return particles;
    const double sigma = cfg.kernel_sigma ? *cfg.kernel_sigma : median_bandwidth(particles.positions);
    particles.positions = svgd_update(particles.positions, grad(particles.positions), cfg.alpha, sigma);
    apply_clamp(particles.positions, cfg.clamp);
    return particles;
}

/// x <- x + v, then v <- v - alpha grad U(x) - tau v + sqrt(2 tau alpha) xi,
/// with the gradient taken at the moved position.
inline void hmc_update(Matrix& x, Matrix& v, const EnergyGradFn& grad, double alpha, double tau, const Matrix& noise,
                       const std::optional<Clamp>& clamp) {
    x += v;
    apply_clamp(x, clamp);
    const Matrix g = grad(x);
    v = v - alpha * g - tau * v + std::sqrt(2.0 * tau * alpha) * noise;
}

inline ParticleState step_hmc(ParticleState particles, const EnergyGradFn& grad, const EvolutionConfig& cfg,
                              std::mt19937_64& rng) {
    if (!particles.momenta) throw ConfigError("step_hmc needs momenta");
    const Matrix noise = standard_normal(particles.positions.rows(), particles.positions.cols(), rng);
    hmc_update(particles.positions, *particles.momenta, grad, cfg.alpha, cfg.tau, noise, cfg.clamp);
    return particles;
}

// ---------------------------------------------------------------------------
// model-driven steps

inline ParticleState step_ld(ParticleState particles, const Mlp& model, const Batch& anchor,
                             const EvolutionConfig& cfg, std::mt19937_64& rng) {
    const ModelEnergy energy(model, particles.labels, anchor, cfg.beta, cfg.fd_eps, cfg.center);
    return step_ld(std::move(particles), std::cref(energy), cfg, rng);
}

inline ParticleState step_svgd(ParticleState particles, const Mlp& model, const Batch& anchor,
                               const EvolutionConfig& cfg) {
    const ModelEnergy energy(model, particles.labels, anchor, cfg.beta, cfg.fd_eps, cfg.center);
    return step_svgd(std::move(particles), std::cref(energy), cfg);
}

inline ParticleState step_hmc(ParticleState particles, const Mlp& model, const Batch& anchor,
                              const EvolutionConfig& cfg, std::mt19937_64& rng) {
    const ModelEnergy energy(model, particles.labels, anchor, cfg.beta, cfg.fd_eps, cfg.center);
    return step_hmc(std::move(particles), std::cref(energy), cfg, rng);
}

inline ParticleState step(ParticleState particles, const EnergyGradFn& grad, const EvolutionConfig& cfg,
                          std::mt19937_64& rng) {
    switch (cfg.method) {
        case EvolutionMethod::LD: return step_ld(std::move(particles), grad, cfg, rng);
        case EvolutionMethod::SVGD: return step_svgd(std::move(particles), grad, cfg);
        case EvolutionMethod::HMC: return step_hmc(std::move(particles), grad, cfg, rng);
    }
    return particles;
}

/// Runs cfg.steps steps on a copy of `raw`, anchored at `raw` itself. Momenta
/// start at zero. With steps = 0 the inputs come back untouched and no
/// random numbers are drawn.
inline Batch evolve(const Batch& raw, const Mlp& model, const EvolutionConfig& cfg, std::mt19937_64& rng) {
    if (cfg.steps == 0 || raw.empty()) return raw;
    const ModelEnergy energy(model, raw.labels, raw, cfg.beta, cfg.fd_eps, cfg.center);
    const EnergyGradFn grad = std::cref(energy);
    ParticleState p = make_particles(raw, cfg.method);
    for (int t = 0; t < cfg.steps; ++t) p = step(std::move(p), grad, cfg, rng);
    Batch out = raw;
    out.inputs = std::move(p.positions);
    return out;
}

}  // namespace drme
