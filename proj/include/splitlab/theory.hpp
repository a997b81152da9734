#pragma once

#include <cstdint>
#include <vector>

namespace splitlab {

struct Region {
    enum class Kind { ball, box };
    Kind kind = Kind::ball;
    std::size_t dim = 2;
    double radius = 1.0; // ball
    double side = 1.0;   // box, centered at the origin

    static Region ball(std::size_t dim, double radius);
    static Region box(std::size_t dim, double side);

    // Characteristic half-extent: ball radius or half the box side.
    double half_extent() const;
    // Distance from a point (dim coords) to the region boundary.
    double boundary_distance(const double* x) const;
};

struct ParticleConfig {
    std::size_t n = 64;
    Region region = Region::ball(2, 1.0);
    double step = 1e-4;
    int iterations = 2000;
    std::uint64_t seed = 0;
};

struct ParticleResult {
    std::vector<double> positions; // n x dim row-major
    std::vector<double> pe_trace;  // potential energy after each iteration
    double final_pe = 0.0;
    int iterations_run = 0;
    bool converged = false; // final potential energy at or below the initial one
};

// Pairwise Riesz potential sum_{i<j} 1/|x_i - x_j| over the positions.
double potential_energy(const std::vector<double>& positions, std::size_t dim);

// Projected gradient descent on the potential energy: particles start
// uniformly inside the region, every displacement is capped at 5% of the
// region's half-extent, moves are projected back into the region, and the
// step is halved after ten consecutive energy increases.
ParticleResult minimize_potential_energy(const ParticleConfig& cfg);

// Fraction of particles within tol of the region boundary. tol must be
// positive.
double border_mass(const std::vector<double>& positions, const Region& region, double tol);

enum class DensityKind { uniform_sphere, uniform_box };

struct GenErrorConfig {
    DensityKind density = DensityKind::uniform_sphere;
    std::size_t dim = 3;      // sphere S^{dim-1} or box [lo,hi]^dim
    double epsilon = 0.1;     // angle between w and e1, in (0, pi/4)
    double lo = -1.0;         // box bounds, must straddle 0
    double hi = 1.0;
    std::size_t samples = 100000;
    std::uint64_t seed = 0;
};

struct GenErrorResult {
    double measured_r = 0.0; // 2 P(x1 > 0 and w.x <= 0), Monte Carlo
    double bound = 0.0;      // 2 epsilon p1(0)
    double p1_zero = 0.0;    // analytic marginal density of x1 at 0
};

// Error of the tilted halfspace classifier w = e1 cos(eps) + e2 sin(eps)
// against the sign of x1, estimated by Monte Carlo, with the linear bound.
GenErrorResult generalization_error_mc(const GenErrorConfig& cfg);

// Where the hemisphere samples sit: spread uniformly, squeezed toward the
// equator (the decision boundary), or squeezed toward the pole e1.
enum class HemisphereShape { uniform, boundary, pole };

struct ScalingConfig {
    std::size_t dim = 3;
    std::vector<std::size_t> sample_sizes = {8, 16, 32, 64, 128};
    int trials = 2000;
    std::uint64_t seed = 0;
    HemisphereShape shape = HemisphereShape::uniform;
};

struct ScalingResult {
    std::vector<double> mean_sq_eps; // E[eps^2] per sample size
    double slope = 0.0;              // log-log least squares slope
};

// Squared angular deviation of the empirical mean direction from e1 as a
// function of the sample count.
ScalingResult sampling_error_scaling(const ScalingConfig& cfg);

} // namespace splitlab
