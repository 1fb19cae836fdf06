#pragma once

// One-dimensional quadrature used across the library: adaptive
// Gauss-Kronrod (7/15) over finite or infinite intervals with optional
// breakpoints, and a tabulated CDF built from a density.

#include <cstddef>
#include <functional>
#include <vector>

namespace coarea {

using ScalarFn = std::function<double(double)>;

struct QuadResult {
    double value = 0.0;
    double error = 0.0;  // Kronrod error estimate
};

/// Globally adaptive G7/K15 on [a, b]: the panel with the largest error is
/// bisected until the total error meets rel_tol, a panel reaches max_depth
/// bisections, or 4000 panels exist. a and b may be infinite. Endpoints are
/// never evaluated, so integrable endpoint singularities are allowed.
QuadResult integrate(const ScalarFn& f, double a, double b, double rel_tol = 1e-12,
                     unsigned max_depth = 200);

/// Same, splitting [points.front(), points.back()] at every interior point.
/// Points must be nondecreasing; repeated points are skipped.
QuadResult integrate_pieces(const ScalarFn& f, const std::vector<double>& points,
                            double rel_tol = 1e-12, unsigned max_depth = 200);

/// Single non-adaptive K15 panel with its error estimate.
QuadResult kronrod15(const ScalarFn& f, double a, double b);

/// CDF of a univariate density, tabulated on [lo, hi] (finite). Panel edges
/// follow x = center + scale * sinh(s) for uniform s, with geometric
/// refinement towards every breakpoint so kinks and integrable singularities
/// land on panel edges. Mass below lo is taken as 0; values above hi return
/// the tabulated total, which is not renormalized.
class NumericCdf {
public:
    NumericCdf() = default;
    NumericCdf(ScalarFn pdf, double lo, double hi, std::vector<double> breakpoints = {},
               double center = 0.0, double scale = 1.0, std::size_t panels = 8192);

    double operator()(double t) const;
    double total() const noexcept { return cum_.empty() ? 0.0 : cum_.back(); }
    double lo() const noexcept { return edges_.front(); }
    double hi() const noexcept { return edges_.back(); }

private:
    ScalarFn pdf_;
    std::vector<double> edges_;
    std::vector<double> cum_;  // cumulative mass at each edge
};

}  // namespace coarea
