#pragma once

// Densities of Y = phi(X) from the density of X, one operator per shape of
// phi: injective pieces with k = n, affine maps of any rank, level-set
// integration for k > n and preimage sums for k < n.

#include "coarea/density.hpp"
#include "coarea/exprmap.hpp"
#include "coarea/measuregeo.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace coarea {

/// Y = phi(X) with k = n. Each branch domain is a box on which phi is
/// injective (bounds may be infinite); the density at y sums
/// f_X(x_i) / J_k phi(x_i) over the branch inverses x_i. Inverses are found
/// by Newton from a lattice of starts inside branch and support; a branch
/// without a root in its domain contributes 0. An empty branch list means a
/// single branch covering R^k.
DensitySpec pushforward_equal(const DensitySpec& fX, const MapExpr& phi,
                              const std::vector<Box>& branch_domains);

/// Y = A X + y0. With m = rank A: m = n = k uses the inverse, m = n < k
/// integrates f_X over the fiber x_y + Ker A, and m < n yields a density
/// with respect to H^m on the carrier A R^k + y0 (0 with OffCarrier
/// elsewhere). In every case the fiber integral is divided by J_m A.
DensitySpec pushforward_affine(const DensitySpec& fX, const Eigen::MatrixXd& A,
                               const Eigen::VectorXd& y0);

/// Y = phi(X) with k > n on a cell-centered lattice of `grid_resolution`
/// points per axis over `output_box`. Each value is the fiber quadrature of
/// f_X / J_n phi over phi^{-1}(y) inside the support box of f_X, extracted
/// by marching simplices at `fiber_resolution` cells per axis.
GridDensity pushforward_coarea(const DensitySpec& fX, const MapExpr& phi, const Box& output_box,
                               std::size_t grid_resolution, std::size_t fiber_resolution);

/// Explicit fiber for one output value: psi maps `domain` onto phi^{-1}(y).
struct FiberChart {
    MapExpr psi;
    Box domain;
};
using FiberParametrization = std::function<FiberChart(std::span<const double> y)>;

/// As above with fibers given by a parametrization, integrated by the
/// midpoint rule at `fiber_resolution` cells per parameter axis. Lifts the
/// codimension limit of the level-set path.
GridDensity pushforward_coarea(const DensitySpec& fX, const MapExpr& phi, const Box& output_box,
                               std::size_t grid_resolution, const FiberParametrization& fibers,
                               std::size_t fiber_resolution);

struct AreaResult {
    double density = 0.0;  // with respect to H^k on phi(R^k)
    bool off_manifold = false;
    std::vector<Point> preimages;
};

/// Y = phi(X) with k < n at one query point. Preimages come from
/// Gauss-Newton started on a lattice over the support box of f_X and are
/// accepted at residual <= 1e-8.
AreaResult pushforward_area(const DensitySpec& fX, const MapExpr& phi, std::span<const double> y);

/// Density of the mean of k iid copies of a 1-D density f: the sum goes
/// through the coarea operator with the hyperplane chart
/// u -> (u, s - sum u), then f_Z(z) = k f_S(k z).
GridDensity sample_mean_density(const DensitySpec& f, std::size_t k, const Box& output_box,
                                std::size_t grid_resolution, std::size_t fiber_resolution);

/// Density of X1 X2 at y for a joint density on R^2, by adaptive
/// quadrature of f_X(t, y/t) / |t|. Raises QuadratureFailure when the
/// error estimate exceeds 1e-6.
double product_density(const DensitySpec& fX, double y);

/// Density of X1 / X2 at y, by adaptive quadrature of f_X(t y, t) |t|.
double ratio_density(const DensitySpec& fX, double y);

}  // namespace coarea
