#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "drme/evolution.hpp"
#include "drme/sanity.hpp"
#include "oracles.hpp"

using namespace drme;

namespace {

const EnergyGradFn zero_grad = [](const Matrix& x) { return Matrix::Zero(x.rows(), x.cols()).eval(); };

ParticleState cloud(Index n, Index d, std::uint64_t seed, bool momenta = false) {
    std::mt19937_64 rng(seed);
    ParticleState p{standard_normal(n, d, rng), {}, std::nullopt};
    for (Index i = 0; i < n; ++i) p.labels.push_back(int(i % 3));
    if (momenta) p.momenta = standard_normal(n, d, rng);
    return p;
}

Mlp linear_model(std::uint64_t seed, int d = 4, int c = 3) {
    const std::vector<int> sizes{d, c};
    return Mlp::random(sizes, seed);
}

}  // namespace

// ---------------------------------------------------------------------------
// kernel

TEST(Kernel, CoincidentPoints) {
    Vector x(3);
    x << 0.2, -1.0, 4.0;
    const auto kv = gaussian_kernel(x, x, 0.7);
    EXPECT_EQ(kv.k, 1.0);
    EXPECT_TRUE(kv.grad_xj.isZero(0.0));
}

TEST(Kernel, FlatLimit) {
    Vector a(1), b(1);
    a << 0.0;
    b << 1.0;
    EXPECT_NEAR(gaussian_kernel(a, b, 1e6).k, 1.0, 1e-9);
}

TEST(Kernel, ClosedFormAndGradient) {
    Vector a(1), b(1);
    a << 0.0;
    b << 1.0;
    const auto kv = gaussian_kernel(a, b, 1.0);
    EXPECT_NEAR(kv.k, 0.60653065971263342, 1e-15);
    // moving xj away from xi lowers k: derivative is -k
    EXPECT_NEAR(kv.grad_xj(0), -0.60653065971263342, 1e-15);
    const double h = 1e-6;
    Vector bp = b, bm = b;
    bp(0) += h;
    bm(0) -= h;
    EXPECT_NEAR(kv.grad_xj(0), (gaussian_kernel(a, bp, 1.0).k - gaussian_kernel(a, bm, 1.0).k) / (2 * h), 1e-9);
    EXPECT_THROW(gaussian_kernel(a, b, 0.0), ConfigError);
}

TEST(Kernel, MedianBandwidth) {
    Matrix one(1, 2);
    one << 1.0, 2.0;
    EXPECT_NEAR(median_bandwidth(one), std::sqrt(1e-6), 1e-15);
    // points 0, 1, 3 on a line: squared distances 1, 4, 9 -> median 4
    Matrix three(3, 1);
    three << 0.0, 1.0, 3.0;
    EXPECT_NEAR(median_bandwidth(three), std::sqrt(4.0 / (2.0 * std::log(4.0))), 1e-15);
    // four points: six distances 1,4,9,1,4,1 -> sorted 1,1,1,4,4,9 -> median 2.5
    Matrix four(4, 1);
    four << 0.0, 1.0, 2.0, 3.0;
    EXPECT_NEAR(median_bandwidth(four), std::sqrt(2.5 / (2.0 * std::log(5.0))), 1e-15);
}

// ---------------------------------------------------------------------------
// energy gradient

TEST(EnergyGrad, BetaZeroIsNegativeInputGradient) {
    const std::vector<int> sizes{5, 8, 3};
    const Mlp m = Mlp::random(sizes, 4);
    std::mt19937_64 rng(4);
    const Batch b = oracle::random_batch(rng, 6, 5, 3);
    const ParticleState p{b.inputs, b.labels, std::nullopt};
    const Matrix expected = -loss_grads(m, b).input_grads;
    EXPECT_EQ(energy_grad(m, p, b, 0.0), expected);
    EXPECT_EQ(energy_grad(m, p, Batch{}, 0.0), expected);
}

TEST(EnergyGrad, MatchesFiniteDifferencesOfEnergy) {
    std::mt19937_64 rng(31);
    for (double beta : {0.003, 0.5}) {
        for (int trial = 0; trial < 5; ++trial) {
            const Mlp m = linear_model(rng());
            const Batch anchor = oracle::random_batch(rng, 8, 4, 3);
            const Batch particles = oracle::random_batch(rng, 5, 4, 3);
            const Vector v = loss_grads(m, anchor).param_grad;
            const Matrix expected = oracle::fd_energy_grad(m, particles, v, beta);
            const ParticleState p{particles.inputs, particles.labels, std::nullopt};
            EXPECT_LT(oracle::rel_error(energy_grad(m, p, anchor, beta), expected), 1e-2) << beta;
            for (auto center : {CenterGradient::Exact, CenterGradient::Symmetric}) {
                const Matrix g = energy_grad(m, particles.inputs, particles.labels, v, beta, 1e-3, center);
                EXPECT_LT(oracle::rel_error(g, expected), 1e-2) << beta;
            }
        }
    }
}

TEST(EnergyGrad, DeeperModelMatchesFiniteDifferences) {
    std::mt19937_64 rng(5);
    const std::vector<int> sizes{4, 10, 3};
    const Mlp m = Mlp::random(sizes, 5);
    const Batch anchor = oracle::random_batch(rng, 8, 4, 3);
    const Batch particles = oracle::random_batch(rng, 4, 4, 3);
    const Vector v = loss_grads(m, anchor).param_grad;
    const Matrix expected = oracle::fd_energy_grad(m, particles, v, 0.5);
    EXPECT_LT(oracle::rel_error(energy_grad(m, particles.inputs, particles.labels, v, 0.5), expected), 1e-2);
}

TEST(EnergyGrad, SymmetricCenterIsSecondOrderClose) {
    const std::vector<int> sizes{6, 16, 4};
    const Mlp m = Mlp::random(sizes, 12);
    std::mt19937_64 rng(12);
    const Batch anchor = oracle::random_batch(rng, 10, 6, 4);
    const Batch particles = oracle::random_batch(rng, 10, 6, 4);
    const Vector v = loss_grads(m, anchor).param_grad;
    const Matrix exact = energy_grad(m, particles.inputs, particles.labels, v, 0.003, 1e-3, CenterGradient::Exact);
    const Matrix sym = energy_grad(m, particles.inputs, particles.labels, v, 0.003, 1e-3, CenterGradient::Symmetric);
    EXPECT_LT(oracle::rel_error(sym, exact), 1e-5);
}

TEST(EnergyGrad, CriticalAnchorRemovesDotProductTerm) {
    // Zero linear model, balanced anchor with the same input in every class:
    // the mean parameter gradient vanishes.
    const std::vector<int> sizes{3, 3};
    const Mlp m = Mlp::zeros(sizes);
    Batch anchor;
    anchor.inputs = Matrix(6, 3);
    for (Index i = 0; i < 6; ++i) anchor.inputs.row(i) << 0.5, -1.0, 2.0;
    anchor.labels = {0, 1, 2, 0, 1, 2};
    EXPECT_LT(anchor_direction(m, anchor).norm(), 1e-15);
    std::mt19937_64 rng(6);
    const Batch particles = oracle::random_batch(rng, 4, 3, 3);
    const ParticleState p{particles.inputs, particles.labels, std::nullopt};
    const Matrix plain = -loss_grads(m, particles).input_grads;
    EXPECT_LT(oracle::rel_error(energy_grad(m, p, anchor, 0.003), plain), 1e-9);
    EXPECT_THROW(energy_grad(m, p, Batch{Matrix(0, 3), {}, {}}, 0.003), EmptyBatchError);
}

TEST(EnergyGrad, ContinuousInBeta) {
    const std::vector<int> sizes{4, 6, 3};
    const Mlp m = Mlp::random(sizes, 2);
    std::mt19937_64 rng(2);
    const Batch b = oracle::random_batch(rng, 5, 4, 3);
    const ParticleState p{b.inputs, b.labels, std::nullopt};
    const Matrix base = energy_grad(m, p, b, 0.0);
    double prev = 1e300;
    for (double beta : {1e-1, 1e-2, 1e-3, 1e-4}) {
        const double dist = (energy_grad(m, p, b, beta) - base).norm();
        EXPECT_LT(dist, prev);
        prev = dist;
    }
    EXPECT_LT(prev, 1e-3 * base.norm());
}

// ---------------------------------------------------------------------------
// Langevin

TEST(Langevin, ZeroStepLeavesParticles) {
    EvolutionConfig cfg;
    cfg.alpha = 0.0;
    std::mt19937_64 rng(1);
    const ParticleState p = cloud(5, 3, 1);
    EXPECT_EQ(step_ld(p, EnergyGradFn(quadratic_energy_grad), cfg, rng).positions, p.positions);
}

TEST(Langevin, FixedPointWithoutNoise) {
    const Matrix x = Matrix::Random(4, 2);
    EXPECT_EQ(ld_update(x, Matrix::Zero(4, 2), 0.05, Matrix::Zero(4, 2)), x);
}

TEST(Langevin, NoiseVarianceIsTwoAlpha) {
    EvolutionConfig cfg;
    cfg.alpha = 0.02;
    std::mt19937_64 rng(9);
    const ParticleState p{Matrix::Zero(1000, 100), std::vector<int>(1000, 0), std::nullopt};
    const Matrix inc = step_ld(p, zero_grad, cfg, rng).positions;
    const double var = inc.array().square().mean() - std::pow(inc.mean(), 2);
    EXPECT_NEAR(var, 2 * cfg.alpha, 0.05 * 2 * cfg.alpha);
}

TEST(Langevin, StationaryLawIsStandardNormal) {
    const auto r = run_sanity(EvolutionMethod::LD);
    EXPECT_TRUE(r.pass()) << "mean " << r.mean.transpose() << " var " << r.var.transpose();
}

// ---------------------------------------------------------------------------
// SVGD

TEST(Svgd, SingleParticleIsPlainGradientStep) {
    EvolutionConfig cfg;
    cfg.method = EvolutionMethod::SVGD;
    cfg.alpha = 0.1;
    ParticleState p{Matrix::Constant(1, 3, 2.0), {0}, std::nullopt};
    const Matrix out = step_svgd(p, EnergyGradFn(quadratic_energy_grad), cfg).positions;
    EXPECT_TRUE(out.isApprox(p.positions - 0.1 * p.positions, 1e-15));
}

TEST(Svgd, CollapsedPairAtRestStays) {
    EvolutionConfig cfg;
    cfg.method = EvolutionMethod::SVGD;
    cfg.alpha = 0.5;
    ParticleState p{Matrix::Constant(2, 2, 0.7), {0, 1}, std::nullopt};
    EXPECT_EQ(step_svgd(p, zero_grad, cfg).positions, p.positions);
}

TEST(Svgd, RepulsionPushesApart) {
    Matrix x(2, 1);
    x << -0.1, 0.1;
    const Matrix out = svgd_update(x, Matrix::Zero(2, 1), 0.1, 1.0);
    EXPECT_LT(out(0, 0), x(0, 0));
    EXPECT_GT(out(1, 0), x(1, 0));
}

TEST(Svgd, PermutationEquivariant) {
    const ParticleState p = cloud(9, 3, 17);
    std::vector<Index> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(3);
    std::shuffle(perm.begin(), perm.end(), rng);
    ParticleState q = p;
    for (Index i = 0; i < 9; ++i) q.positions.row(i) = p.positions.row(perm[std::size_t(i)]);
    EvolutionConfig cfg;
    cfg.method = EvolutionMethod::SVGD;
    cfg.alpha = 0.3;
    const Matrix a = step_svgd(p, EnergyGradFn(quadratic_energy_grad), cfg).positions;
    const Matrix b = step_svgd(q, EnergyGradFn(quadratic_energy_grad), cfg).positions;
    for (Index i = 0; i < 9; ++i) EXPECT_LT((b.row(i) - a.row(perm[std::size_t(i)])).norm(), 1e-12);
}

TEST(Svgd, WideKernelWithoutRepulsionAveragesGradients) {
    const ParticleState p = cloud(6, 2, 8);
    const Matrix grad = p.positions.array().sin();
    const double alpha = 0.2;
    const Matrix out = svgd_update(p.positions, grad, alpha, 1e6, false);
    const Vector mean_grad = grad.colwise().mean().transpose();
    for (Index i = 0; i < 6; ++i)
        EXPECT_LT((out.row(i) - (p.positions.row(i) - alpha * mean_grad.transpose())).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Svgd, OneDimensionalGaussianTarget) {
    SanityOptions opt;
    opt.dim = 1;
    const auto r = check_svgd(opt);
    EXPECT_NEAR(r.mean(0), 0.0, 0.05);
    EXPECT_NEAR(r.var(0), 1.0, 0.15);
}

TEST(Svgd, TwoDimensionalGaussianTarget) {
    const auto r = run_sanity(EvolutionMethod::SVGD);
    EXPECT_TRUE(r.pass()) << "mean " << r.mean.transpose() << " var " << r.var.transpose();
}

// ---------------------------------------------------------------------------
// HMC

TEST(Hmc, NullDynamics) {
    EvolutionConfig cfg;
    cfg.method = EvolutionMethod::HMC;
    cfg.alpha = 0.0;
    cfg.tau = 0.0;
    ParticleState p = cloud(5, 2, 4);
    p.momenta = Matrix::Zero(5, 2);
    std::mt19937_64 rng(1);
    const auto out = step_hmc(p, EnergyGradFn(quadratic_energy_grad), cfg, rng);
    EXPECT_EQ(out.positions, p.positions);
    EXPECT_EQ(*out.momenta, *p.momenta);
}

TEST(Hmc, FrictionlessIsDeterministic) {
    EvolutionConfig cfg;
    cfg.method = EvolutionMethod::HMC;
    cfg.alpha = 0.1;
    cfg.tau = 0.0;
    const ParticleState p = cloud(4, 3, 5, true);
    std::mt19937_64 r1(1), r2(2);
    const auto a = step_hmc(p, EnergyGradFn(quadratic_energy_grad), cfg, r1);
    const auto b = step_hmc(p, EnergyGradFn(quadratic_energy_grad), cfg, r2);
    const Matrix x_next = p.positions + *p.momenta;
    EXPECT_TRUE(a.positions.isApprox(x_next, 1e-15));
    EXPECT_TRUE(a.momenta->isApprox(*p.momenta - 0.1 * x_next, 1e-15));
    EXPECT_EQ(a.positions, b.positions);
    EXPECT_EQ(*a.momenta, *b.momenta);
}

TEST(Hmc, RequiresMomenta) {
    EvolutionConfig cfg;
    cfg.method = EvolutionMethod::HMC;
    std::mt19937_64 rng(1);
    EXPECT_THROW(step_hmc(cloud(3, 2, 1), zero_grad, cfg, rng), ConfigError);
}

TEST(Hmc, StationaryLawIsStandardNormal) {
    const auto r = run_sanity(EvolutionMethod::HMC);
    EXPECT_TRUE(r.pass()) << "mean " << r.mean.transpose() << " var " << r.var.transpose();
}

// ---------------------------------------------------------------------------
// shared properties

TEST(Steppers, PreserveLabelsCountAndClamp) {
    const std::vector<int> sizes{4, 8, 3};
    const Mlp m = Mlp::random(sizes, 21);
    std::mt19937_64 rng(21);
    Batch raw = oracle::random_batch(rng, 7, 4, 3);
    raw.inputs = raw.inputs.cwiseAbs().cwiseMin(1.0);
    for (auto method : {EvolutionMethod::LD, EvolutionMethod::SVGD, EvolutionMethod::HMC}) {
        EvolutionConfig cfg;
        cfg.method = method;
        cfg.alpha = 0.5;
        cfg.clamp = Clamp{0.0, 1.0};
        ParticleState p = make_particles(raw, method);
        ParticleState out = p;
        for (int t = 0; t < 3; ++t) {
            switch (method) {
                case EvolutionMethod::LD: out = step_ld(out, m, raw, cfg, rng); break;
                case EvolutionMethod::SVGD: out = step_svgd(out, m, raw, cfg); break;
                case EvolutionMethod::HMC: out = step_hmc(out, m, raw, cfg, rng); break;
            }
        }
        EXPECT_EQ(out.labels, raw.labels);
        EXPECT_EQ(out.size(), raw.size());
        EXPECT_GE(out.positions.minCoeff(), 0.0);
        EXPECT_LE(out.positions.maxCoeff(), 1.0);
        EXPECT_TRUE(out.positions.allFinite());
        EXPECT_EQ(out.momenta.has_value(), method == EvolutionMethod::HMC);
    }
}

TEST(Evolve, ZeroStepsIsIdentityAndDrawsNothing) {
    const std::vector<int> sizes{3, 5, 2};
    const Mlp m = Mlp::random(sizes, 2);
    std::mt19937_64 rng(2), untouched(2);
    const Batch raw = oracle::random_batch(rng, 4, 3, 2);
    rng.seed(2);
    EvolutionConfig cfg;
    cfg.steps = 0;
    const Batch out = evolve(raw, m, cfg, rng);
    EXPECT_EQ(out.inputs, raw.inputs);
    EXPECT_EQ(rng(), untouched());
}

TEST(Evolve, IncreasesLossWithoutNoise) {
    // SVGD is noise-free; a wide kernel reduces it to ascent on the mean loss
    const std::vector<int> sizes{4, 12, 3};
    const Mlp m = Mlp::random(sizes, 14);
    std::mt19937_64 rng(14);
    const Batch raw = oracle::random_batch(rng, 8, 4, 3);
    EvolutionConfig cfg;
    cfg.method = EvolutionMethod::SVGD;
    cfg.kernel_sigma = 1e3;
    cfg.alpha = 0.5;
    const Batch out = evolve(raw, m, cfg, rng);
    EXPECT_GT(mean_loss(m, out), mean_loss(m, raw));
    EXPECT_EQ(out.labels, raw.labels);
}

TEST(EvolutionConfig, Validation) {
    EvolutionConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.tau = 1.5;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.clamp = Clamp{1.0, 0.0};
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.kernel_sigma = 0.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}
