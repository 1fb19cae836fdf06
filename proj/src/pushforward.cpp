#include "coarea/pushforward.hpp"

#include "coarea/errors.hpp"
#include "coarea/parallel.hpp"
#include "coarea/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

namespace coarea {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMinJacobian = 1e-12;
constexpr double kAreaResidual = 1e-8;

double norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

Box whole_space(std::size_t dim) { return Box::cube(dim, -kInf, kInf); }

std::optional<Box> intersect(const Box& a, const Box& b) {
    Box c = a;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        c.lo[i] = std::max(a.lo[i], b.lo[i]);
        c.hi[i] = std::min(a.hi[i], b.hi[i]);
        if (c.lo[i] > c.hi[i]) return std::nullopt;
    }
    return c;
}

// Newton starting values along one axis of a possibly unbounded interval.
std::vector<double> axis_starts(double lo, double hi, std::size_t count) {
    std::vector<double> out;
    if (std::isfinite(lo) && std::isfinite(hi)) {
        for (std::size_t i = 0; i < count; ++i) out.push_back(lo + (hi - lo) * (double(i) + 0.5) / double(count));
        return out;
    }
    static const double offsets[] = {1e-3, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0};
    if (std::isfinite(lo)) {
        for (double d : offsets) out.push_back(lo + d);
    } else if (std::isfinite(hi)) {
        for (double d : offsets) out.push_back(hi - d);
    } else {
        for (double v : {-10.0, -3.0, -1.0, -0.3, 0.0, 0.3, 1.0, 3.0, 10.0}) out.push_back(v);
    }
    return out;
}

std::vector<Point> start_lattice(const Box& region, std::size_t per_axis) {
    std::vector<Point> out{Point{}};
    for (std::size_t a = 0; a < region.dim(); ++a) {
        const auto vals = axis_starts(region.lo[a], region.hi[a], per_axis);
        std::vector<Point> next;
        next.reserve(out.size() * vals.size());
        for (const auto& p : out)
            for (double v : vals) {
                Point q = p;
                q.push_back(v);
                next.push_back(std::move(q));
            }
        out = std::move(next);
    }
    return out;
}

double step_limit(const Box& region) {
    return region.is_finite() ? std::max(region.diagonal() / 2.0, 1e-6) : 10.0;
}

// J_m phi at x, or nullopt where phi is not differentiable.
std::optional<double> map_jacobian(const MapExpr& phi, const Point& x, std::size_t m) {
    try {
        return jacobian_m(phi.jacobian(x), m);
    } catch (const DomainError&) {
    } catch (const NondifferentiablePoint&) {
    }
    return std::nullopt;
}

const Box& finite_support(const DensitySpec& fX, const char* who) {
    const Box* b = fX.support_box();
    if (!b || !b->is_finite())
        throw DomainError(std::string(who) + ": the input density needs a finite support box");
    return *b;
}

void check_map_dims(const DensitySpec& fX, const MapExpr& phi, const char* who) {
    if (fX.dim() != phi.input_dim())
        throw DimensionError(std::string(who) + ": density has dimension " + std::to_string(fX.dim()) +
                             " but the map expects " + std::to_string(phi.input_dim()));
    if (fX.reference().kind != ReferenceKind::Lebesgue)
        throw DimensionError(std::string(who) + ": the input density must be a Lebesgue density");
}

// Fails when phi drops rank on more than 1% of a lattice over the support box.
void check_rank(const MapExpr& phi, const Box& box) {
    const std::size_t k = phi.input_dim(), n = phi.output_dim();
    const std::size_t per_axis = k <= 3 ? 20 : 10;
    const auto pts = start_lattice(box, per_axis);
    std::size_t low = 0, seen = 0;
    for (const auto& x : pts) {
        Eigen::MatrixXd J;
        try {
            J = phi.jacobian(x);
        } catch (const Error&) {
            continue;
        }
        ++seen;
        if (estimate_rank(J) < n) ++low;
    }
    if (seen > 0 && double(low) > 0.01 * double(seen))
        throw RankDeficient("map has rank below " + std::to_string(n) + " on " + std::to_string(low) +
                            " of " + std::to_string(seen) + " sampled support points");
}

std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

// Records how much of X's mass the input box holds and how much of Y's the
// output grid holds.
void record_truncation(GridDensity& g, const DensitySpec& fX, const Box& input_box,
                       std::size_t fiber_resolution) {
    const std::size_t k = input_box.dim();
    const auto cap = static_cast<std::size_t>(std::floor(std::pow(4e6, 1.0 / double(k))));
    const double captured = integrate_box(fX, input_box, std::max<std::size_t>(2, std::min(fiber_resolution, cap)));
    const double total = std::isnan(fX.normalization_estimate()) ? 1.0 : fX.normalization_estimate();
    g.truncation_mass = std::max(0.0, total - captured);
    g.mass_in_box = g.riemann_mass();
    g.truncation_note = "input box holds " + fmt_g(captured) + " of the input mass (" +
                        (g.truncation_mass <= 1e-6 ? "meets" : "BELOW") +
                        " the 1-1e-6 target); output box holds " + fmt_g(g.mass_in_box);
}

double fiber_sum(const DensitySpec& fX, const MapExpr& phi, const FiberQuadrature& q) {
    const std::size_t n = phi.output_dim();
    double acc = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double f = fX.evaluate(q.nodes[i]);
        if (f == 0.0) continue;
        const auto J = map_jacobian(phi, q.nodes[i], n);
        if (!J || *J < kMinJacobian) continue;
        acc += q.weights[i] * f / *J;
    }
    return acc;
}

// Integral of f over the line x + t v clipped to `box`.
double line_integral(const DensitySpec& f, const Box& box, const Eigen::VectorXd& x,
                     const Eigen::VectorXd& v, double rel_tol) {
    double t0 = -kInf, t1 = kInf;
    for (Eigen::Index a = 0; a < x.size(); ++a) {
        if (v(a) == 0.0) {
            if (x(a) < box.lo[a] || x(a) > box.hi[a]) return 0.0;
            continue;
        }
        double e0 = (box.lo[a] - x(a)) / v(a), e1 = (box.hi[a] - x(a)) / v(a);
        if (e0 > e1) std::swap(e0, e1);
        t0 = std::max(t0, e0);
        t1 = std::min(t1, e1);
    }
    if (!(t0 < t1)) return 0.0;
    Point p(static_cast<std::size_t>(x.size()));
    const QuadResult r = integrate(
        [&](double t) {
            for (Eigen::Index a = 0; a < x.size(); ++a) p[a] = x(a) + t * v(a);
            return f.evaluate(p);
        },
        t0, t1, rel_tol, 15);
    return r.value;
}

// Integral of f over x + span(N) (orthonormal columns) inside `box`.
double flat_integral(const DensitySpec& f, const Box& box, const Eigen::VectorXd& x,
                     const Eigen::MatrixXd& N, Eigen::Index col = 0) {
    const Eigen::Index d = N.cols();
    if (col == d - 1) return line_integral(f, box, x, N.col(col), 1e-11);
    double R = 0.0;
    for (Eigen::Index a = 0; a < x.size(); ++a)
        R += std::pow(std::max(std::fabs(box.lo[a] - x(a)), std::fabs(box.hi[a] - x(a))), 2);
    R = std::sqrt(R);
    return integrate(
               [&](double t) { return flat_integral(f, box, x + t * N.col(col), N, col + 1); },
               -R, R, 1e-9, 12)
        .value;
}

// Bounding box of A B + y0 by interval arithmetic.
Box affine_image(const Box& b, const Eigen::MatrixXd& A, const Eigen::VectorXd& y0) {
    const auto n = static_cast<std::size_t>(A.rows());
    Box out{std::vector<double>(n), std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        double lo = y0(i), hi = y0(i);
        for (Eigen::Index j = 0; j < A.cols(); ++j) {
            const double a = A(i, j);
            if (a == 0.0) continue;
            const double p = a * b.lo[j], q = a * b.hi[j];
            lo += std::min(p, q);
            hi += std::max(p, q);
        }
        out.lo[i] = lo;
        out.hi[i] = hi;
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------- k = n

DensitySpec pushforward_equal(const DensitySpec& fX, const MapExpr& phi,
                              const std::vector<Box>& branch_domains) {
    check_map_dims(fX, phi, "pushforward_equal");
    const std::size_t k = phi.input_dim();
    if (phi.output_dim() != k)
        throw DimensionError("pushforward_equal needs k = n, got k=" + std::to_string(k) +
                             " n=" + std::to_string(phi.output_dim()));
    std::vector<Box> branches = branch_domains;
    if (branches.empty()) branches.push_back(whole_space(k));
    for (const auto& b : branches)
        if (b.dim() != k) throw DimensionError("pushforward_equal: branch domain dimension");

    std::vector<Box> regions;  // branch clipped to the support, where X lives
    std::vector<std::size_t> owner;
    for (std::size_t i = 0; i < branches.size(); ++i) {
        std::optional<Box> r = branches[i];
        if (const Box* sb = fX.support_box()) r = intersect(branches[i], *sb);
        if (!r) continue;
        regions.push_back(*r);
        owner.push_back(i);
    }
    const std::size_t per_axis = k == 1 ? 9 : (k == 2 ? 5 : 3);

    auto eval = [fX, phi, branches, regions, owner, per_axis, k](std::span<const double> y) {
        const double tol = 1e-10 * (1.0 + norm(y));
        double total = 0.0;
        for (std::size_t r = 0; r < regions.size(); ++r) {
            const Box& dom = branches[owner[r]];
            bool any_finite = false;
            for (const auto& x0 : start_lattice(regions[r], per_axis)) {
                const NewtonResult res = solve_newton(phi, y, x0, tol, step_limit(regions[r]));
                if (std::isfinite(res.residual)) any_finite = true;
                if (!res.converged || !dom.contains(res.x)) continue;
                const auto J = map_jacobian(phi, res.x, k);
                if (!J || *J < kMinJacobian)
                    throw RankDeficient("J_k phi vanishes at a preimage of the query point");
                total += fX.evaluate(res.x) / *J;
                break;  // injective on the branch: at most one root
            }
            if (!any_finite)
                throw ConvergenceError("branch inverse: the map is undefined at every starting point");
        }
        return DensityValue{total};
    };
    return DensitySpec(k, eval, whole_space(k), ReferenceMeasure::lebesgue(k),
                       fX.normalization_estimate());
}

// ---------------------------------------------------------------- affine

DensitySpec pushforward_affine(const DensitySpec& fX, const Eigen::MatrixXd& A,
                               const Eigen::VectorXd& y0) {
    const auto n = static_cast<std::size_t>(A.rows());
    const auto k = static_cast<std::size_t>(A.cols());
    if (fX.dim() != k) throw DimensionError("pushforward_affine: A has " + std::to_string(k) +
                                            " columns but the density has dimension " +
                                            std::to_string(fX.dim()));
    if (static_cast<std::size_t>(y0.size()) != n)
        throw DimensionError("pushforward_affine: y0 length must equal the rows of A");
    const std::size_t m = estimate_rank(A);
    if (m == 0) throw SingularSystem("pushforward_affine: A is zero");

    if (m == n && m == k) {
        const Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
        const double det = std::fabs(lu.determinant());
        Support support = whole_space(n);
        if (const Box* sb = fX.support_box()) support = affine_image(*sb, A, y0);
        return DensitySpec(
            n,
            [fX, lu, y0, det](std::span<const double> y) {
                const Eigen::VectorXd x =
                    lu.solve(Eigen::Map<const Eigen::VectorXd>(y.data(), y.size()) - y0);
                return DensityValue{fX.evaluate(std::span<const double>(x.data(), x.size())) / det};
            },
            std::move(support), ReferenceMeasure::lebesgue(n), fX.normalization_estimate());
    }

    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto mi = static_cast<Eigen::Index>(m);
    const Eigen::MatrixXd Um = svd.matrixU().leftCols(mi);
    const Eigen::MatrixXd Vm = svd.matrixV().leftCols(mi);
    const Eigen::VectorXd sm = svd.singularValues().head(mi);
    const Eigen::MatrixXd kernel = svd.matrixV().rightCols(static_cast<Eigen::Index>(k) - mi);
    const double Am = jacobian_m(A, m);
    const Box box = fX.support_box() ? *fX.support_box() : whole_space(k);

    auto eval = [fX, Um, Vm, sm, kernel, Am, box, y0, m, n](std::span<const double> y) {
        const Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(y.data(), y.size()) - y0;
        const Eigen::VectorXd c = Um.transpose() * d;
        if (m < n) {
            const double off = (d - Um * c).norm();
            if (off > 1e-9 * (1.0 + d.norm())) return DensityValue{0.0, DensityFlag::OffCarrier};
        }
        const Eigen::VectorXd xy = Vm * c.cwiseQuotient(sm);
        double inner;
        if (kernel.cols() == 0) {
            inner = fX.evaluate(std::span<const double>(xy.data(), xy.size()));
        } else {
            inner = flat_integral(fX, box, xy, kernel);
        }
        return DensityValue{inner / Am};
    };

    if (m == n) {
        Support support = whole_space(n);
        if (const Box* sb = fX.support_box()) support = affine_image(*sb, A, y0);
        return DensitySpec(n, eval, std::move(support), ReferenceMeasure::lebesgue(n),
                           fX.normalization_estimate());
    }
    AffineSubspace carrier{Um, y0};
    return DensitySpec(n, eval, carrier, ReferenceMeasure::hausdorff(m, carrier),
                       fX.normalization_estimate());
}

// ---------------------------------------------------------------- k > n

GridDensity pushforward_coarea(const DensitySpec& fX, const MapExpr& phi, const Box& output_box,
                               std::size_t grid_resolution, std::size_t fiber_resolution) {
    check_map_dims(fX, phi, "pushforward_coarea");
    const std::size_t k = phi.input_dim(), n = phi.output_dim();
    if (k <= n) throw DimensionError("pushforward_coarea needs k > n");
    if (output_box.dim() != n) throw DimensionError("pushforward_coarea: output box dimension");
    const Box& box = finite_support(fX, "pushforward_coarea");
    const LevelSetField field(phi, box, fiber_resolution);
    check_rank(phi, box);

    GridDensity g = make_grid(output_box, grid_resolution, ReferenceMeasure::lebesgue(n));
    parallel_for(g.size(), [&](std::size_t j) {
        const Point y = g.point(j);
        g.values[j] = fiber_sum(fX, phi, field.extract(y));
    });
    record_truncation(g, fX, box, fiber_resolution);
    return g;
}

GridDensity pushforward_coarea(const DensitySpec& fX, const MapExpr& phi, const Box& output_box,
                               std::size_t grid_resolution, const FiberParametrization& fibers,
                               std::size_t fiber_resolution) {
    check_map_dims(fX, phi, "pushforward_coarea");
    const std::size_t k = phi.input_dim(), n = phi.output_dim();
    if (k <= n) throw DimensionError("pushforward_coarea needs k > n");
    if (output_box.dim() != n) throw DimensionError("pushforward_coarea: output box dimension");
    if (!fibers) throw Error("pushforward_coarea: missing fiber parametrization");
    const Box& box = finite_support(fX, "pushforward_coarea");
    check_rank(phi, box);

    GridDensity g = make_grid(output_box, grid_resolution, ReferenceMeasure::lebesgue(n));
    parallel_for(g.size(), [&](std::size_t j) {
        const Point y = g.point(j);
        const FiberChart chart = fibers(y);
        if (chart.psi.input_dim() != k - n || chart.psi.output_dim() != k)
            throw DimensionError("fiber chart must map R^(k-n) into R^k");
        g.values[j] = fiber_sum(fX, phi, fiber_quadrature_param(chart.psi, chart.domain, fiber_resolution));
    });
    record_truncation(g, fX, box, fiber_resolution);
    return g;
}

// ---------------------------------------------------------------- k < n

AreaResult pushforward_area(const DensitySpec& fX, const MapExpr& phi, std::span<const double> y) {
    check_map_dims(fX, phi, "pushforward_area");
    const std::size_t k = phi.input_dim(), n = phi.output_dim();
    if (k >= n) throw DimensionError("pushforward_area needs k < n");
    if (y.size() != n) throw DimensionError("pushforward_area: query point dimension");
    const Box& box = finite_support(fX, "pushforward_area");

    const std::size_t per_axis = k == 1 ? 64 : (k == 2 ? 16 : (k == 3 ? 8 : 5));
    const double tol = 1e-12 * (1.0 + norm(y));
    const double snap = 1e-9 * box.diagonal();
    AreaResult out;
    bool any_finite = false;
    for (const auto& x0 : start_lattice(box, per_axis)) {
        NewtonResult r = solve_newton(phi, y, x0, tol, step_limit(box));
        if (std::isfinite(r.residual)) any_finite = true;
        if (!(r.residual <= kAreaResidual)) continue;
        for (std::size_t a = 0; a < k; ++a) {
            if (std::fabs(r.x[a] - box.lo[a]) <= snap) r.x[a] = box.lo[a];
            if (std::fabs(r.x[a] - box.hi[a]) <= snap) r.x[a] = box.hi[a];
        }
        bool dup = false;
        for (const auto& p : out.preimages) {
            double d2 = 0.0;
            for (std::size_t a = 0; a < k; ++a) d2 += (p[a] - r.x[a]) * (p[a] - r.x[a]);
            if (std::sqrt(d2) <= 1e-8 * (1.0 + norm(p))) {
                dup = true;
                break;
            }
        }
        if (!dup) out.preimages.push_back(r.x);
    }
    if (!any_finite) throw ConvergenceError("pushforward_area: the map is undefined at every start");
    std::sort(out.preimages.begin(), out.preimages.end());
    if (out.preimages.empty()) {
        out.off_manifold = true;
        return out;
    }
    for (const auto& x : out.preimages) {
        const auto J = map_jacobian(phi, x, k);
        if (!J || *J < kMinJacobian)
            throw RankDeficient("J_k phi vanishes at a preimage; rank-deficient nonlinear maps are not supported");
        out.density += fX.evaluate(x) / *J;
    }
    return out;
}

// ---------------------------------------------------------------- examples

GridDensity sample_mean_density(const DensitySpec& f, std::size_t k, const Box& output_box,
                                std::size_t grid_resolution, std::size_t fiber_resolution) {
    if (f.dim() != 1 || output_box.dim() != 1)
        throw DimensionError("sample_mean_density works with univariate densities");
    if (k == 0) throw DomainError("sample_mean_density: k must be positive");
    if (k == 1) return tabulate(f, output_box, grid_resolution);
    const Box& sb = finite_support(f, "sample_mean_density");

    const DensitySpec joint = independent_product(std::vector<DensitySpec>(k, f));
    std::string sum = "x1";
    for (std::size_t i = 2; i <= k; ++i) sum += "+x" + std::to_string(i);
    const MapExpr phi = parse_map(sum, k, 1);

    const double kk = double(k);
    const Box sum_box({kk * output_box.lo[0]}, {kk * output_box.hi[0]});
    const Box domain = Box::cube(k - 1, sb.lo[0], sb.hi[0]);
    auto fibers = [k, domain](std::span<const double> s) {
        std::string src, rest;
        for (std::size_t i = 1; i < k; ++i) {
            src += "x" + std::to_string(i) + "; ";
            rest += "-x" + std::to_string(i);
        }
        src += "(" + format_double(s[0]) + ")" + rest;
        return FiberChart{parse_map(src, k - 1, k), domain};
    };
    GridDensity g = pushforward_coarea(joint, phi, sum_box, grid_resolution, fibers, fiber_resolution);
    g.box = output_box;
    for (double& v : g.values) v *= kk;
    g.mass_in_box = g.riemann_mass();
    return g;
}

namespace {

Box plane_box(const DensitySpec& fX, const char* who) {
    if (fX.dim() != 2 || fX.reference().kind != ReferenceKind::Lebesgue)
        throw DimensionError(std::string(who) + " needs a Lebesgue density on R^2");
    return fX.support_box() ? *fX.support_box() : whole_space(2);
}

double finish_quadrature(const QuadResult& r, const char* who, double y) {
    if (!std::isfinite(r.value) || !(r.error <= 1e-6))
        throw QuadratureFailure(std::string(who) + " at y=" + format_double(y) +
                                ": error estimate " + format_double(r.error));
    return r.value;
}

std::vector<double> cut_points(double lo, double hi, std::initializer_list<double> inner) {
    std::vector<double> pts{lo, hi};
    for (double c : inner)
        if (std::isfinite(c) && c > lo && c < hi) pts.push_back(c);
    std::sort(pts.begin(), pts.end());
    return pts;
}

}  // namespace

double product_density(const DensitySpec& fX, double y) {
    const Box b = plane_box(fX, "product_density");
    const auto pts = cut_points(b.lo[0], b.hi[0],
                                {0.0, b.lo[1] != 0.0 ? y / b.lo[1] : kInf, b.hi[1] != 0.0 ? y / b.hi[1] : kInf});
    const auto g = [&](double t) {
        if (t == 0.0) return 0.0;
        const double x[2] = {t, y / t};
        return fX.evaluate(x) / std::fabs(t);
    };
    return finish_quadrature(integrate_pieces(g, pts, 1e-10), "product_density", y);
}

double ratio_density(const DensitySpec& fX, double y) {
    const Box b = plane_box(fX, "ratio_density");
    const auto pts = cut_points(b.lo[1], b.hi[1],
                                {0.0, y != 0.0 ? b.lo[0] / y : kInf, y != 0.0 ? b.hi[0] / y : kInf});
    const auto g = [&](double t) {
        const double x[2] = {t * y, t};
        return fX.evaluate(x) * std::fabs(t);
    };
    return finish_quadrature(integrate_pieces(g, pts, 1e-10), "ratio_density", y);
}

}  // namespace coarea
