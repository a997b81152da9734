#include "splitlab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "splitlab/errors.hpp"
#include "splitlab/rng.hpp"

namespace splitlab {

Region Region::ball(std::size_t dim, double radius) {
    if (dim == 0 || radius <= 0.0) throw contract_error("Region::ball: bad dimensions");
    Region r;
    r.kind = Kind::ball;
    r.dim = dim;
    r.radius = radius;
    return r;
}

Region Region::box(std::size_t dim, double side) {
    if (dim == 0 || side <= 0.0) throw contract_error("Region::box: bad dimensions");
    Region r;
    r.kind = Kind::box;
    r.dim = dim;
    r.side = side;
    return r;
}

double Region::half_extent() const { return kind == Kind::ball ? radius : side / 2.0; }

double Region::boundary_distance(const double* x) const {
    if (kind == Kind::ball) {
        double norm2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) norm2 += x[j] * x[j];
        return std::abs(radius - std::sqrt(norm2));
    }
    const double half = side / 2.0;
    double dist = half;
    for (std::size_t j = 0; j < dim; ++j) dist = std::min(dist, half - std::abs(x[j]));
    return std::abs(dist);
}

double potential_energy(const std::vector<double>& positions, std::size_t dim) {
    if (dim == 0 || positions.size() % dim != 0)
        throw contract_error("potential_energy: positions do not tile the dimension");
    const std::size_t n = positions.size() / dim;
    double pe = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double d2 = 0.0;
            for (std::size_t c = 0; c < dim; ++c) {
                const double diff = positions[i * dim + c] - positions[j * dim + c];
                d2 += diff * diff;
            }
            pe += 1.0 / std::max(std::sqrt(d2), 1e-12);
        }
    }
    return pe;
}

namespace {

void project(const Region& region, double* x) {
    if (region.kind == Region::Kind::ball) {
        double norm2 = 0.0;
        for (std::size_t j = 0; j < region.dim; ++j) norm2 += x[j] * x[j];
        const double norm = std::sqrt(norm2);
        if (norm > region.radius) {
            const double scale = region.radius / norm;
            for (std::size_t j = 0; j < region.dim; ++j) x[j] *= scale;
        }
    } else {
        const double half = region.side / 2.0;
        for (std::size_t j = 0; j < region.dim; ++j) x[j] = std::clamp(x[j], -half, half);
    }
}

std::vector<double> uniform_start(const Region& region, std::size_t n, Rng& rng) {
    std::vector<double> pos(n * region.dim);
    if (region.kind == Region::Kind::ball) {
        for (std::size_t i = 0; i < n; ++i) {
            double norm2 = 0.0;
            std::vector<double> dir(region.dim);
            for (std::size_t j = 0; j < region.dim; ++j) {
                dir[j] = rng.normal();
                norm2 += dir[j] * dir[j];
            }
            const double norm = std::max(std::sqrt(norm2), 1e-300);
            const double r =
                region.radius *
                std::pow(rng.uniform(), 1.0 / static_cast<double>(region.dim));
            for (std::size_t j = 0; j < region.dim; ++j) pos[i * region.dim + j] = dir[j] / norm * r;
        }
    } else {
        const double half = region.side / 2.0;
        for (double& v : pos) v = rng.uniform(-half, half);
    }
    return pos;
}

} // namespace

ParticleResult minimize_potential_energy(const ParticleConfig& cfg) {
    if (cfg.n == 0) throw contract_error("minimize_potential_energy: need at least one particle");
    if (cfg.step <= 0.0) throw contract_error("minimize_potential_energy: step must be positive");
    if (cfg.iterations < 0)
        throw contract_error("minimize_potential_energy: iterations must be non-negative");

    const std::size_t dim = cfg.region.dim;
    Rng rng(mix64(cfg.seed ^ 0x7e0f1ULL));

    ParticleResult res;
    res.positions = uniform_start(cfg.region, cfg.n, rng);
    const double initial_pe = potential_energy(res.positions, dim);
    res.final_pe = initial_pe;
    if (cfg.n == 1 || cfg.iterations == 0) {
        res.converged = true;
        return res;
    }

    const double cap = 0.05 * cfg.region.half_extent();
    double step = cfg.step;
    double prev_pe = initial_pe;
    int increase_streak = 0;
    std::vector<double> grad(cfg.n * dim);
    std::vector<double> diff(dim);

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < cfg.n; ++i) {
            for (std::size_t j = i + 1; j < cfg.n; ++j) {
                double d2 = 0.0;
                for (std::size_t c = 0; c < dim; ++c) {
                    diff[c] = res.positions[i * dim + c] - res.positions[j * dim + c];
                    d2 += diff[c] * diff[c];
                }
                const double r = std::max(std::sqrt(d2), 1e-12);
                const double coef = 1.0 / (r * r * r); // -grad of 1/r along diff
                for (std::size_t c = 0; c < dim; ++c) {
                    grad[i * dim + c] -= coef * diff[c];
                    grad[j * dim + c] += coef * diff[c];
                }
            }
        }
        for (std::size_t i = 0; i < cfg.n; ++i) {
            double move2 = 0.0;
            for (std::size_t c = 0; c < dim; ++c) {
                diff[c] = -step * grad[i * dim + c];
                move2 += diff[c] * diff[c];
            }
            const double move = std::sqrt(move2);
            const double scale = move > cap ? cap / move : 1.0;
            for (std::size_t c = 0; c < dim; ++c) res.positions[i * dim + c] += scale * diff[c];
            project(cfg.region, &res.positions[i * dim]);
        }

        const double pe = potential_energy(res.positions, dim);
        res.pe_trace.push_back(pe);
        res.iterations_run = iter + 1;
        if (pe > prev_pe) {
            if (++increase_streak >= 10) {
                step /= 2.0;
                increase_streak = 0;
            }
        } else {
            increase_streak = 0;
        }
        prev_pe = pe;
    }

    res.final_pe = res.pe_trace.back();
    res.converged = res.final_pe <= initial_pe;
    return res;
}

double border_mass(const std::vector<double>& positions, const Region& region, double tol) {
    if (tol <= 0.0) throw contract_error("border_mass: tolerance must be positive");
    if (positions.empty() || positions.size() % region.dim != 0)
        throw contract_error("border_mass: positions do not tile the dimension");
    const std::size_t n = positions.size() / region.dim;
    std::size_t near = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (region.boundary_distance(&positions[i * region.dim]) <= tol) ++near;
    return static_cast<double>(near) / static_cast<double>(n);
}

namespace {

double sphere_marginal_at_zero(std::size_t dim) {
    // Density of one coordinate of a uniform point on S^{dim-1} at 0:
    // Gamma(d/2) / (sqrt(pi) Gamma((d-1)/2)).
    const double d = static_cast<double>(dim);
    return std::exp(std::lgamma(d / 2.0) - std::lgamma((d - 1.0) / 2.0)) /
           std::sqrt(std::acos(-1.0));
}

} // namespace

GenErrorResult generalization_error_mc(const GenErrorConfig& cfg) {
    const double pi = std::acos(-1.0);
    if (cfg.dim < 2) throw contract_error("generalization_error_mc: dim must be at least 2");
    if (cfg.epsilon <= 0.0 || cfg.epsilon >= pi / 4.0)
        throw contract_error("generalization_error_mc: epsilon outside (0, pi/4)");
    if (cfg.samples == 0) throw contract_error("generalization_error_mc: need samples");
    if (cfg.density == DensityKind::uniform_box && !(cfg.lo < 0.0 && 0.0 < cfg.hi))
        throw contract_error("generalization_error_mc: box must straddle zero");

    GenErrorResult out;
    out.p1_zero = cfg.density == DensityKind::uniform_sphere ? sphere_marginal_at_zero(cfg.dim)
                                                             : 1.0 / (cfg.hi - cfg.lo);
    out.bound = 2.0 * cfg.epsilon * out.p1_zero;

    Rng rng(mix64(cfg.seed ^ 0x93c7eULL));
    const double w1 = std::cos(cfg.epsilon);
    const double w2 = std::sin(cfg.epsilon);
    std::vector<double> x(cfg.dim);
    std::size_t disagreements = 0;
    for (std::size_t s = 0; s < cfg.samples; ++s) {
        if (cfg.density == DensityKind::uniform_sphere) {
            double norm2 = 0.0;
            for (std::size_t j = 0; j < cfg.dim; ++j) {
                x[j] = rng.normal();
                norm2 += x[j] * x[j];
            }
            const double norm = std::max(std::sqrt(norm2), 1e-300);
            for (std::size_t j = 0; j < cfg.dim; ++j) x[j] /= norm;
        } else {
            for (std::size_t j = 0; j < cfg.dim; ++j) x[j] = rng.uniform(cfg.lo, cfg.hi);
        }
        const double proj = w1 * x[0] + w2 * x[1];
        if (x[0] > 0.0 && proj <= 0.0) ++disagreements;
    }
    out.measured_r =
        2.0 * static_cast<double>(disagreements) / static_cast<double>(cfg.samples);
    return out;
}

ScalingResult sampling_error_scaling(const ScalingConfig& cfg) {
    if (cfg.dim < 2) throw contract_error("sampling_error_scaling: dim must be at least 2");
    if (cfg.sample_sizes.size() < 2)
        throw contract_error("sampling_error_scaling: need at least two sample sizes");
    for (std::size_t m : cfg.sample_sizes)
        if (m == 0) throw contract_error("sampling_error_scaling: sample sizes must be positive");
    if (cfg.trials < 1) throw contract_error("sampling_error_scaling: trials must be positive");

    ScalingResult out;
    Rng rng(mix64(cfg.seed ^ 0x5ca1eULL));
    std::vector<double> x(cfg.dim);
    std::vector<double> mean(cfg.dim);

    for (std::size_t m : cfg.sample_sizes) {
        double acc = 0.0;
        for (int t = 0; t < cfg.trials; ++t) {
            std::fill(mean.begin(), mean.end(), 0.0);
            for (std::size_t s = 0; s < m; ++s) {
                double norm2 = 0.0;
                for (std::size_t j = 0; j < cfg.dim; ++j) {
                    x[j] = rng.normal();
                    norm2 += x[j] * x[j];
                }
                const double norm = std::max(std::sqrt(norm2), 1e-300);
                for (std::size_t j = 0; j < cfg.dim; ++j) x[j] /= norm;
                if (cfg.shape != HemisphereShape::uniform) {
                    // squeeze toward the equator (shrink x1) or the pole
                    // (shrink everything else), then renormalize
                    if (cfg.shape == HemisphereShape::boundary)
                        x[0] *= 0.05;
                    else
                        for (std::size_t j = 1; j < cfg.dim; ++j) x[j] *= 0.05;
                    double n2 = 0.0;
                    for (std::size_t j = 0; j < cfg.dim; ++j) n2 += x[j] * x[j];
                    const double nn = std::max(std::sqrt(n2), 1e-300);
                    for (std::size_t j = 0; j < cfg.dim; ++j) x[j] /= nn;
                }
                if (x[0] < 0.0) x[0] = -x[0]; // positive hemisphere
                for (std::size_t j = 0; j < cfg.dim; ++j) mean[j] += x[j];
            }
            double norm2 = 0.0;
            for (std::size_t j = 0; j < cfg.dim; ++j) norm2 += mean[j] * mean[j];
            const double norm = std::max(std::sqrt(norm2), 1e-300);
            const double cosang = std::clamp(mean[0] / norm, -1.0, 1.0);
            const double eps = std::acos(cosang);
            acc += eps * eps;
        }
        out.mean_sq_eps.push_back(acc / static_cast<double>(cfg.trials));
    }

    // log-log least squares slope
    const std::size_t k = cfg.sample_sizes.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        mx += std::log(static_cast<double>(cfg.sample_sizes[i]));
        my += std::log(out.mean_sq_eps[i]);
    }
    mx /= static_cast<double>(k);
    my /= static_cast<double>(k);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double dx = std::log(static_cast<double>(cfg.sample_sizes[i])) - mx;
        num += dx * (std::log(out.mean_sq_eps[i]) - my);
        den += dx * dx;
    }
    out.slope = num / den;
    return out;
}

} // namespace splitlab
