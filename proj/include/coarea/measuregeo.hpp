#pragma once

// Geometric measure primitives: m-dimensional Jacobians, numerical rank,
// preimage search for k <= n maps, and quadratures approximating integrals
// against the Hausdorff measure H^{k-n} on level sets phi^{-1}(y).

#include "coarea/exprmap.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

namespace coarea {

/// Axis-aligned box. Bounds may be infinite where an operation allows it.
struct Box {
    std::vector<double> lo;
    std::vector<double> hi;

    Box() = default;
    Box(std::vector<double> lo_, std::vector<double> hi_);
    /// Same interval [lo, hi] on every axis.
    static Box cube(std::size_t dim, double lo, double hi);

    std::size_t dim() const noexcept { return lo.size(); }
    bool contains(std::span<const double> x, double slack = 0.0) const;
    bool is_finite() const;
    double volume() const;
    double diagonal() const;
    Point center() const;
};

inline constexpr double kDefaultRankTol = 1e-9;

/// sqrt of the sum of squared m-by-m minors of J. Throws DimensionError unless
/// 1 <= m <= min(rows, cols).
double jacobian_m(const Eigen::MatrixXd& J, std::size_t m);

/// Number of singular values above rel_tol times the largest one.
std::size_t estimate_rank(const Eigen::MatrixXd& J, double rel_tol = kDefaultRankTol);

/// Isolated solutions of phi(x) = y inside `box` for maps with k <= n. Starts
/// damped Gauss-Newton from the center of each of resolution^k cells; cells
/// whose run stalls close to a root are subdivided before giving up with
/// ConvergenceError. Returned points satisfy |phi(x) - y| <= 1e-10 (1 + |y|),
/// are merged within 1e-8 and sorted lexicographically.
std::vector<Point> preimage_points(const MapExpr& m, std::span<const double> y, const Box& box,
                                   std::size_t resolution);

/// Nodes and nonnegative weights approximating integration against H^d over a
/// fiber, where d = fiber_dim.
struct FiberQuadrature {
    std::vector<Point> nodes;
    std::vector<double> weights;
    std::size_t fiber_dim = 0;
    Box bounding_box;
    std::size_t resolution = 0;

    bool empty() const noexcept { return nodes.empty(); }
    std::size_t size() const noexcept { return nodes.size(); }
    double total_weight() const;
};

/// Values of phi on the vertices of a regular grid over `box`, from which the
/// level sets phi^{-1}(y) can be extracted by marching simplices (Kuhn
/// triangulation, k! simplices per cell). The field is built once and reused
/// for many y. Requires fiber dimension k - n in {1, 2} and k <= 4.
class LevelSetField {
public:
    LevelSetField(const MapExpr& m, const Box& box, std::size_t resolution);

    std::size_t input_dim() const noexcept { return k_; }
    std::size_t output_dim() const noexcept { return n_; }
    const Box& box() const noexcept { return box_; }
    std::size_t resolution() const noexcept { return res_; }

    /// One node per grid simplex crossing the level: the centroid of the
    /// intersection polytope, weighted by its (k-n)-dimensional content.
    /// Nodes are ordered by cell index (lexicographic), then simplex.
    FiberQuadrature extract(std::span<const double> y) const;

private:
    void process_cell(std::size_t cell, std::span<const double> y,
                      std::vector<Point>& nodes, std::vector<double>& weights) const;

    std::size_t k_, n_, res_;
    Box box_;
    std::vector<double> step_;
    std::vector<std::size_t> vstride_;   // vertex index strides
    std::vector<double> values_;         // (res+1)^k vertices x n, NaN where phi is undefined
    std::vector<std::vector<unsigned>> simplices_;  // corner bitmasks per Kuhn simplex
    std::size_t block_ = 8;
    std::size_t nblock_ = 0;             // blocks per axis
    std::vector<double> block_lo_, block_hi_;  // per block and output coordinate
};

/// Single-level convenience wrapper around LevelSetField.
FiberQuadrature fiber_quadrature_levelset(const MapExpr& m, std::span<const double> y,
                                          const Box& box, std::size_t resolution);

/// Midpoint rule over a parametrized fiber psi: R^d -> R^k on `domain`, with
/// weight J_d psi(u) times the cell volume at each node psi(u).
FiberQuadrature fiber_quadrature_param(const MapExpr& psi, const Box& domain,
                                       std::size_t resolution);

/// Sigma = Q diag(lambdas) Q^T with lambdas nonincreasing, Q orthogonal.
/// Columns of Q are signed so that their largest-magnitude entry is positive.
struct EigenFactorization {
    Eigen::MatrixXd Q;
    Eigen::VectorXd lambdas;
    std::size_t rank = 0;
};

/// Cyclic Jacobi eigendecomposition of a symmetric positive semidefinite
/// matrix. Slightly negative eigenvalues are clamped to 0; NotPSD is raised
/// below -1e-8 * trace, NotSymmetric when asymmetry exceeds 1e-12.
EigenFactorization eigen_psd(const Eigen::MatrixXd& sigma, double rank_tol = kDefaultRankTol);

// Damped Gauss-Newton for phi(x) = y starting at x0. Shared by the preimage
// search and the pushforward inverses.
struct NewtonResult {
    Point x;
    double residual = 0.0;
    bool converged = false;
};

NewtonResult solve_newton(const MapExpr& m, std::span<const double> y, Point x0, double tol,
                          double max_step, int max_iter = 100);

}  // namespace coarea
