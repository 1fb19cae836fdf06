#include "coarea/measuregeo.hpp"

#include "coarea/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace coarea {

// ----------------------------------------------------------------------- Box

Box::Box(std::vector<double> lo_, std::vector<double> hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
    if (lo.size() != hi.size()) throw DimensionError("box bounds have different lengths");
    for (std::size_t i = 0; i < lo.size(); ++i)
        if (!(lo[i] <= hi[i])) throw DimensionError("box lower bound exceeds upper bound");
}

Box Box::cube(std::size_t dim, double lo, double hi) {
    return Box(std::vector<double>(dim, lo), std::vector<double>(dim, hi));
}

bool Box::contains(std::span<const double> x, double slack) const {
    if (x.size() != dim()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] < lo[i] - slack || x[i] > hi[i] + slack) return false;
    return true;
}

bool Box::is_finite() const {
    for (std::size_t i = 0; i < dim(); ++i)
        if (!std::isfinite(lo[i]) || !std::isfinite(hi[i])) return false;
    return true;
}

double Box::volume() const {
    double v = 1.0;
    for (std::size_t i = 0; i < dim(); ++i) v *= hi[i] - lo[i];
    return v;
}

double Box::diagonal() const {
    double s = 0.0;
    for (std::size_t i = 0; i < dim(); ++i) s += (hi[i] - lo[i]) * (hi[i] - lo[i]);
    return std::sqrt(s);
}

Point Box::center() const {
    Point c(dim());
    for (std::size_t i = 0; i < dim(); ++i) c[i] = 0.5 * (lo[i] + hi[i]);
    return c;
}

// ------------------------------------------------------------------ Jacobians

namespace {

// Advance `idx` (strictly increasing, values < n) to the next m-combination.
bool next_combination(std::vector<std::size_t>& idx, std::size_t n) {
    const std::size_t m = idx.size();
    std::size_t i = m;
    while (i > 0) {
        --i;
        if (idx[i] < n - m + i) {
            ++idx[i];
            for (std::size_t j = i + 1; j < m; ++j) idx[j] = idx[j - 1] + 1;
            return true;
        }
    }
    return false;
}

double norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

double jacobian_m(const Eigen::MatrixXd& J, std::size_t m) {
    const auto rows = static_cast<std::size_t>(J.rows());
    const auto cols = static_cast<std::size_t>(J.cols());
    if (m < 1 || m > std::min(rows, cols))
        throw DimensionError("jacobian_m: m=" + std::to_string(m) + " outside [1, " +
                             std::to_string(std::min(rows, cols)) + "]");
    if (m == 1) return J.norm();

    std::vector<std::size_t> r(m), c(m);
    Eigen::MatrixXd minor(m, m);
    double sum = 0.0;
    std::iota(r.begin(), r.end(), std::size_t{0});
    do {
        std::iota(c.begin(), c.end(), std::size_t{0});
        do {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < m; ++j) minor(i, j) = J(r[i], c[j]);
            const double det = minor.partialPivLu().determinant();
            sum += det * det;
        } while (next_combination(c, cols));
    } while (next_combination(r, rows));
    return std::sqrt(sum);
}

std::size_t estimate_rank(const Eigen::MatrixXd& J, double rel_tol) {
    if (J.size() == 0) return 0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(J);
    const auto& s = svd.singularValues();
    if (s.size() == 0 || s(0) == 0.0) return 0;
    std::size_t rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > rel_tol * s(0)) ++rank;
    return rank;
}

// -------------------------------------------------------------------- Newton

NewtonResult solve_newton(const MapExpr& m, std::span<const double> y, Point x0, double tol,
                          double max_step, int max_iter) {
    const std::size_t n = m.output_dim();
    NewtonResult out;
    out.x = std::move(x0);
    Point fx(n);
    auto residual_at = [&](const Point& x, Eigen::VectorXd& r) -> bool {
        try {
            m.eval_into(x, fx);
        } catch (const DomainError&) {
            return false;
        }
        r.resize(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) r(i) = fx[i] - y[i];
        return true;
    };

    Eigen::VectorXd r;
    if (!residual_at(out.x, r)) {
        out.residual = std::numeric_limits<double>::infinity();
        return out;
    }
    out.residual = r.norm();
    int polish = 0;
    for (int it = 0; it < max_iter; ++it) {
        if (out.residual <= tol) {
            // Keep iterating a little past tolerance to reach full precision.
            if (out.residual == 0.0 || polish++ >= 3) break;
        }
        Eigen::MatrixXd J;
        try {
            J = m.jacobian(out.x);
        } catch (const Error&) {
            break;
        }
        Eigen::VectorXd delta = J.completeOrthogonalDecomposition().solve(-r);
        if (!delta.allFinite() || delta.norm() == 0.0) break;
        if (delta.norm() > max_step) delta *= max_step / delta.norm();

        bool accepted = false;
        Point trial(out.x.size());
        Eigen::VectorXd rt;
        for (double t = 1.0; t > 1e-12; t *= 0.5) {
            for (std::size_t j = 0; j < trial.size(); ++j) trial[j] = out.x[j] + t * delta(j);
            if (residual_at(trial, rt) && rt.norm() < out.residual) {
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
        out.x = trial;
        r = rt;
        out.residual = rt.norm();
    }
    out.converged = out.residual <= tol;
    return out;
}

// ----------------------------------------------------------------- preimages

namespace {

// Centers of the res^d cells of `box`, in lexicographic order.
template <class F>
void for_each_cell_center(const Box& box, std::size_t res, F&& f) {
    const std::size_t d = box.dim();
    std::vector<std::size_t> idx(d, 0);
    Point x(d);
    for (;;) {
        for (std::size_t a = 0; a < d; ++a)
            x[a] = box.lo[a] + (static_cast<double>(idx[a]) + 0.5) * (box.hi[a] - box.lo[a]) /
                                   static_cast<double>(res);
        f(x, idx);
        std::size_t a = d;
        while (a > 0) {
            --a;
            if (++idx[a] < res) break;
            idx[a] = 0;
            if (a == 0) return;
        }
        if (d == 0) return;
    }
}

Box cell_box(const Box& box, std::size_t res, const std::vector<std::size_t>& idx) {
    Box c = box;
    for (std::size_t a = 0; a < box.dim(); ++a) {
        const double h = (box.hi[a] - box.lo[a]) / static_cast<double>(res);
        c.lo[a] = box.lo[a] + static_cast<double>(idx[a]) * h;
        c.hi[a] = c.lo[a] + h;
    }
    return c;
}

void merge_points(std::vector<Point>& pts, double tol) {
    std::sort(pts.begin(), pts.end());
    std::vector<Point> merged;
    for (auto& p : pts) {
        bool dup = false;
        for (const auto& q : merged) {
            double d2 = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) d2 += (p[i] - q[i]) * (p[i] - q[i]);
            if (d2 <= tol * tol) {
                dup = true;
                break;
            }
        }
        if (!dup) merged.push_back(std::move(p));
    }
    pts = std::move(merged);
}

}  // namespace

std::vector<Point> preimage_points(const MapExpr& m, std::span<const double> y, const Box& box,
                                   std::size_t resolution) {
    const std::size_t k = m.input_dim();
    if (k > m.output_dim()) throw DimensionError("preimage_points requires k <= n");
    if (y.size() != m.output_dim()) throw DimensionError("target point has wrong dimension");
    if (box.dim() != k || !box.is_finite()) throw DimensionError("preimage_points needs a finite box in R^k");
    if (resolution == 0) throw DimensionError("resolution must be positive");

    const double scale = 1.0 + norm(y);
    const double tol = 1e-10 * scale;
    const double near_miss = 1e-6 * scale;
    const double max_step = box.diagonal();
    const double snap = 1e-9 * std::max(1.0, box.diagonal());

    std::vector<Point> found;
    auto accept = [&](NewtonResult& r) {
        if (!r.converged || !box.contains(r.x, snap)) return false;
        for (std::size_t a = 0; a < k; ++a) r.x[a] = std::clamp(r.x[a], box.lo[a], box.hi[a]);
        found.push_back(r.x);
        return true;
    };

    for_each_cell_center(box, resolution, [&](const Point& x0, const std::vector<std::size_t>& idx) {
        NewtonResult r = solve_newton(m, y, x0, tol, max_step);
        if (accept(r) || r.converged || r.residual > near_miss) return;
        // Stalled next to a root: retry from a finer set of starts in this cell.
        const Box cell = cell_box(box, resolution, idx);
        for (std::size_t sub : {2u, 4u}) {
            bool ok = false;
            for_each_cell_center(cell, sub, [&](const Point& s0, const std::vector<std::size_t>&) {
                NewtonResult rs = solve_newton(m, y, s0, tol, max_step);
                if (accept(rs) || rs.converged) ok = true;
            });
            if (ok) return;
        }
        throw ConvergenceError("Newton iteration stalled at residual " +
                               std::to_string(r.residual) + " near a preimage");
    });
    merge_points(found, 1e-8);
    return found;
}

// --------------------------------------------------------- fiber quadratures

double FiberQuadrature::total_weight() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
}

namespace {

// Content and centroid of the convex polytope spanned by `pts` (dimension
// `dim` in {1, 2}) embedded in R^k.
bool polytope_content(std::vector<Point>& pts, std::size_t dim, double dedupe, Point& centroid,
                      double& content) {
    const std::size_t k = pts.empty() ? 0 : pts[0].size();
    // Drop coincident points (level passing through a vertex).
    std::vector<Point> u;
    for (auto& p : pts) {
        bool dup = false;
        for (const auto& q : u) {
            double d2 = 0.0;
            for (std::size_t i = 0; i < k; ++i) d2 += (p[i] - q[i]) * (p[i] - q[i]);
            if (d2 <= dedupe * dedupe) {
                dup = true;
                break;
            }
        }
        if (!dup) u.push_back(p);
    }
    if (u.size() < dim + 1) return false;

    if (dim == 1) {
        double best = -1.0;
        std::size_t bi = 0, bj = 0;
        for (std::size_t i = 0; i < u.size(); ++i)
            for (std::size_t j = i + 1; j < u.size(); ++j) {
                double d2 = 0.0;
                for (std::size_t a = 0; a < k; ++a) d2 += (u[i][a] - u[j][a]) * (u[i][a] - u[j][a]);
                if (d2 > best) {
                    best = d2;
                    bi = i;
                    bj = j;
                }
            }
        content = std::sqrt(best);
        centroid.assign(k, 0.0);
        for (std::size_t a = 0; a < k; ++a) centroid[a] = 0.5 * (u[bi][a] + u[bj][a]);
        return content > 0.0;
    }

    // dim == 2: orthonormal frame of the polygon's plane.
    Point c(k, 0.0);
    for (const auto& p : u)
        for (std::size_t a = 0; a < k; ++a) c[a] += p[a] / static_cast<double>(u.size());
    Eigen::VectorXd e1 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
    double far = 0.0;
    for (const auto& p : u) {
        Eigen::VectorXd d(static_cast<Eigen::Index>(k));
        for (std::size_t a = 0; a < k; ++a) d(a) = p[a] - c[a];
        if (d.norm() > far) {
            far = d.norm();
            e1 = d;
        }
    }
    if (far == 0.0) return false;
    e1 /= far;
    Eigen::VectorXd e2 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
    double far2 = 0.0;
    for (const auto& p : u) {
        Eigen::VectorXd d(static_cast<Eigen::Index>(k));
        for (std::size_t a = 0; a < k; ++a) d(a) = p[a] - c[a];
        d -= d.dot(e1) * e1;
        if (d.norm() > far2) {
            far2 = d.norm();
            e2 = d;
        }
    }
    if (far2 <= 1e-12 * far) return false;
    e2 /= far2;

    struct P2 {
        double a, b, ang;
    };
    std::vector<P2> q;
    for (const auto& p : u) {
        double a = 0.0, b = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            a += (p[i] - c[i]) * e1(i);
            b += (p[i] - c[i]) * e2(i);
        }
        q.push_back({a, b, std::atan2(b, a)});
    }
    std::sort(q.begin(), q.end(), [](const P2& l, const P2& r) { return l.ang < r.ang; });
    double area2 = 0.0, ca = 0.0, cb = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const P2& p0 = q[i];
        const P2& p1 = q[(i + 1) % q.size()];
        const double cr = p0.a * p1.b - p1.a * p0.b;
        area2 += cr;
        ca += (p0.a + p1.a) * cr;
        cb += (p0.b + p1.b) * cr;
    }
    if (area2 == 0.0) return false;
    ca /= 3.0 * area2;
    cb /= 3.0 * area2;
    content = 0.5 * std::fabs(area2);
    centroid.assign(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) centroid[i] = c[i] + ca * e1(i) + cb * e2(i);
    return content > 0.0;
}

}  // namespace

LevelSetField::LevelSetField(const MapExpr& m, const Box& box, std::size_t resolution)
    : k_(m.input_dim()), n_(m.output_dim()), res_(resolution), box_(box) {
    if (k_ <= n_ || k_ - n_ > 2 || k_ > 4)
        throw UnsupportedCodimension("level-set extraction supports fiber dimension k-n in {1,2} "
                                     "with k <= 4 (got k=" + std::to_string(k_) +
                                     ", n=" + std::to_string(n_) + ")");
    if (box_.dim() != k_ || !box_.is_finite()) throw DimensionError("level-set box must be finite and in R^k");
    if (res_ == 0) throw DimensionError("resolution must be positive");

    const std::size_t nv = res_ + 1;
    double total = 1.0;
    for (std::size_t a = 0; a < k_; ++a) total *= static_cast<double>(nv);
    if (total * static_cast<double>(n_) > 4e8) throw DimensionError("level-set grid too large");

    step_.resize(k_);
    vstride_.resize(k_);
    std::size_t stride = 1;
    for (std::size_t a = k_; a-- > 0;) {
        step_[a] = (box_.hi[a] - box_.lo[a]) / static_cast<double>(res_);
        vstride_[a] = stride;
        stride *= nv;
    }
    const std::size_t nvert = stride;

    values_.assign(nvert * n_, std::numeric_limits<double>::quiet_NaN());
    Point x(k_);
    std::vector<std::size_t> idx(k_, 0);
    for (std::size_t v = 0; v < nvert; ++v) {
        std::size_t rem = v;
        for (std::size_t a = 0; a < k_; ++a) {
            idx[a] = rem / vstride_[a];
            rem %= vstride_[a];
            x[a] = idx[a] == res_ ? box_.hi[a] : box_.lo[a] + static_cast<double>(idx[a]) * step_[a];
        }
        try {
            m.eval_into(x, std::span<double>(values_.data() + v * n_, n_));
        } catch (const DomainError&) {
            std::fill_n(values_.begin() + static_cast<std::ptrdiff_t>(v * n_), n_,
                        std::numeric_limits<double>::quiet_NaN());
        }
    }

    // Kuhn triangulation: one simplex per permutation of the axes.
    std::vector<std::size_t> perm(k_);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    do {
        std::vector<unsigned> s{0u};
        unsigned mask = 0;
        for (std::size_t a : perm) {
            mask |= 1u << a;
            s.push_back(mask);
        }
        simplices_.push_back(std::move(s));
    } while (std::next_permutation(perm.begin(), perm.end()));

    // Per-block value ranges so that extraction can skip empty regions.
    nblock_ = (res_ + block_ - 1) / block_;
    std::size_t nblocks = 1;
    for (std::size_t a = 0; a < k_; ++a) nblocks *= nblock_;
    block_lo_.assign(nblocks * n_, std::numeric_limits<double>::infinity());
    block_hi_.assign(nblocks * n_, -std::numeric_limits<double>::infinity());
    std::vector<std::size_t> bidx(k_);
    for (std::size_t b = 0; b < nblocks; ++b) {
        std::size_t rem = b;
        for (std::size_t a = k_; a-- > 0;) {
            bidx[a] = rem % nblock_;
            rem /= nblock_;
        }
        std::vector<std::size_t> lo(k_), hi(k_), it(k_);
        for (std::size_t a = 0; a < k_; ++a) {
            lo[a] = bidx[a] * block_;
            hi[a] = std::min(res_, lo[a] + block_);
            it[a] = lo[a];
        }
        for (;;) {
            std::size_t v = 0;
            for (std::size_t a = 0; a < k_; ++a) v += it[a] * vstride_[a];
            for (std::size_t c = 0; c < n_; ++c) {
                const double val = values_[v * n_ + c];
                if (std::isnan(val)) continue;
                block_lo_[b * n_ + c] = std::min(block_lo_[b * n_ + c], val);
                block_hi_[b * n_ + c] = std::max(block_hi_[b * n_ + c], val);
            }
            std::size_t a = k_;
            bool done = true;
            while (a > 0) {
                --a;
                if (++it[a] <= hi[a]) {
                    done = false;
                    break;
                }
                it[a] = lo[a];
            }
            if (done) break;
        }
    }
}

void LevelSetField::process_cell(std::size_t cell, std::span<const double> y,
                                 std::vector<Point>& nodes, std::vector<double>& weights) const {
    std::vector<std::size_t> idx(k_);
    std::size_t rem = cell;
    for (std::size_t a = k_; a-- > 0;) {
        idx[a] = rem % res_;
        rem /= res_;
    }
    std::size_t base = 0;
    for (std::size_t a = 0; a < k_; ++a) base += idx[a] * vstride_[a];

    const unsigned ncorner = 1u << k_;
    double cv[16 * 4];  // corner values, at most 2^4 corners x 4 outputs
    for (unsigned c = 0; c < ncorner; ++c) {
        std::size_t v = base;
        for (std::size_t a = 0; a < k_; ++a)
            if (c & (1u << a)) v += vstride_[a];
        for (std::size_t o = 0; o < n_; ++o) {
            cv[c * n_ + o] = values_[v * n_ + o];
            if (std::isnan(cv[c * n_ + o])) return;
        }
    }
    for (std::size_t o = 0; o < n_; ++o) {
        double lo = cv[o], hi = cv[o];
        for (unsigned c = 1; c < ncorner; ++c) {
            lo = std::min(lo, cv[c * n_ + o]);
            hi = std::max(hi, cv[c * n_ + o]);
        }
        if (y[o] < lo || y[o] > hi) return;
    }

    auto corner_point = [&](unsigned c) {
        Point p(k_);
        for (std::size_t a = 0; a < k_; ++a) {
            const std::size_t i = idx[a] + ((c >> a) & 1u);
            p[a] = i == res_ ? box_.hi[a] : box_.lo[a] + static_cast<double>(i) * step_[a];
        }
        return p;
    };

    double hmin = step_[0];
    for (double h : step_) hmin = std::min(hmin, h);
    const double dedupe = 1e-12 * hmin;
    const std::size_t fiber_dim = k_ - n_;

    std::vector<Point> pts;
    for (const auto& simplex : simplices_) {
        pts.clear();
        if (n_ == 1) {
            // A vertex exactly at the level counts as "above", so each crossing
            // is attributed to exactly one side.
            for (std::size_t i = 0; i < simplex.size(); ++i)
                for (std::size_t j = i + 1; j < simplex.size(); ++j) {
                    const double vi = cv[simplex[i]], vj = cv[simplex[j]];
                    const bool ai = vi >= y[0], aj = vj >= y[0];
                    if (ai == aj) continue;
                    const double t = (y[0] - vi) / (vj - vi);
                    Point pi = corner_point(simplex[i]), pj = corner_point(simplex[j]);
                    for (std::size_t a = 0; a < k_; ++a) pi[a] += t * (pj[a] - pi[a]);
                    pts.push_back(std::move(pi));
                }
        } else {
            bool outside = false;
            for (std::size_t o = 0; o < n_ && !outside; ++o) {
                double lo = cv[simplex[0] * n_ + o], hi = lo;
                for (unsigned c : simplex) {
                    lo = std::min(lo, cv[c * n_ + o]);
                    hi = std::max(hi, cv[c * n_ + o]);
                }
                outside = y[o] < lo || y[o] > hi;
            }
            if (outside) continue;
            // Vertices of {lambda >= 0, sum lambda = 1, sum lambda_i v_i = y}:
            // supported on n+1 of the simplex vertices.
            const std::size_t s = n_ + 1;
            std::vector<std::size_t> sub(s);
            std::iota(sub.begin(), sub.end(), std::size_t{0});
            Eigen::MatrixXd M(s, s);
            Eigen::VectorXd rhs(s);
            for (std::size_t o = 0; o < n_; ++o) rhs(o) = y[o];
            rhs(n_) = 1.0;
            do {
                for (std::size_t j = 0; j < s; ++j) {
                    for (std::size_t o = 0; o < n_; ++o) M(o, j) = cv[simplex[sub[j]] * n_ + o];
                    M(n_, j) = 1.0;
                }
                auto lu = M.fullPivLu();
                if (lu.rank() < static_cast<Eigen::Index>(s)) continue;
                Eigen::VectorXd lam = lu.solve(rhs);
                if (lam.minCoeff() < -1e-12) continue;
                Point p(k_, 0.0);
                for (std::size_t j = 0; j < s; ++j) {
                    const Point q = corner_point(simplex[sub[j]]);
                    const double l = std::max(0.0, lam(j));
                    for (std::size_t a = 0; a < k_; ++a) p[a] += l * q[a];
                }
                pts.push_back(std::move(p));
            } while (next_combination(sub, simplex.size()));
        }
        Point centroid;
        double content = 0.0;
        if (polytope_content(pts, fiber_dim, dedupe, centroid, content)) {
            nodes.push_back(std::move(centroid));
            weights.push_back(content);
        }
    }
}

FiberQuadrature LevelSetField::extract(std::span<const double> y_in) const {
    if (y_in.size() != n_) throw DimensionError("level value has wrong dimension");
    // For n >= 2 ties are broken by lowering the level by a tiny generic
    // amount, the analogue of the "vertex at the level counts as above" rule
    // used for n == 1. Without it a fiber lying exactly on a shared grid face
    // is collected by both neighbouring cells.
    static constexpr double kTieShift[] = {1.0, 0.7548776662466927, 0.5698402909980532,
                                           0.4301597090019468};
    Point y(y_in.begin(), y_in.end());
    if (n_ >= 2)
        for (std::size_t o = 0; o < n_; ++o) y[o] -= 1e-11 * std::max(1.0, std::fabs(y[o])) * kTieShift[o];
    FiberQuadrature q;
    q.fiber_dim = k_ - n_;
    q.bounding_box = box_;
    q.resolution = res_;

    std::size_t nblocks = 1;
    for (std::size_t a = 0; a < k_; ++a) nblocks *= nblock_;
    std::vector<std::size_t> cell_of_node;
    std::vector<std::size_t> bidx(k_), lo(k_), hi(k_), it(k_);
    for (std::size_t b = 0; b < nblocks; ++b) {
        bool hit = true;
        for (std::size_t o = 0; o < n_ && hit; ++o)
            hit = y[o] >= block_lo_[b * n_ + o] && y[o] <= block_hi_[b * n_ + o];
        if (!hit) continue;
        std::size_t rem = b;
        for (std::size_t a = k_; a-- > 0;) {
            bidx[a] = rem % nblock_;
            rem /= nblock_;
        }
        for (std::size_t a = 0; a < k_; ++a) {
            lo[a] = bidx[a] * block_;
            hi[a] = std::min(res_, lo[a] + block_);
            it[a] = lo[a];
        }
        for (;;) {
            std::size_t cell = 0;
            for (std::size_t a = 0; a < k_; ++a) cell = cell * res_ + it[a];
            process_cell(cell, y, q.nodes, q.weights);
            cell_of_node.resize(q.nodes.size(), cell);
            std::size_t a = k_;
            bool done = true;
            while (a > 0) {
                --a;
                if (++it[a] < hi[a]) {
                    done = false;
                    break;
                }
                it[a] = lo[a];
            }
            if (done) break;
        }
    }

    // Cell-lexicographic order independent of the block traversal.
    std::vector<std::size_t> order(q.nodes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return cell_of_node[a] < cell_of_node[b]; });
    FiberQuadrature sorted;
    sorted.fiber_dim = q.fiber_dim;
    sorted.bounding_box = q.bounding_box;
    sorted.resolution = q.resolution;
    sorted.nodes.reserve(order.size());
    sorted.weights.reserve(order.size());
    for (std::size_t i : order) {
        sorted.nodes.push_back(std::move(q.nodes[i]));
        sorted.weights.push_back(q.weights[i]);
    }
    return sorted;
}

FiberQuadrature fiber_quadrature_levelset(const MapExpr& m, std::span<const double> y,
                                          const Box& box, std::size_t resolution) {
    if (y.size() != m.output_dim()) throw DimensionError("level value has wrong dimension");
    return LevelSetField(m, box, resolution).extract(y);
}

FiberQuadrature fiber_quadrature_param(const MapExpr& psi, const Box& domain,
                                       std::size_t resolution) {
    const std::size_t d = psi.input_dim();
    const std::size_t k = psi.output_dim();
    if (d > k) throw DimensionError("parametrization must have d <= k");
    if (domain.dim() != d || !domain.is_finite()) throw DimensionError("parameter domain must be a finite box in R^d");
    if (resolution == 0) throw DimensionError("resolution must be positive");

    double cell = 1.0;
    for (std::size_t a = 0; a < d; ++a)
        cell *= (domain.hi[a] - domain.lo[a]) / static_cast<double>(resolution);

    FiberQuadrature q;
    q.fiber_dim = d;
    q.resolution = resolution;
    Point lo(k, std::numeric_limits<double>::infinity());
    Point hi(k, -std::numeric_limits<double>::infinity());
    for_each_cell_center(domain, resolution, [&](const Point& u, const std::vector<std::size_t>&) {
        Point x = psi.eval(u);
        const double w = jacobian_m(psi.jacobian(u), d) * cell;
        for (std::size_t a = 0; a < k; ++a) {
            lo[a] = std::min(lo[a], x[a]);
            hi[a] = std::max(hi[a], x[a]);
        }
        q.nodes.push_back(std::move(x));
        q.weights.push_back(w);
    });
    q.bounding_box = Box(lo, hi);
    return q;
}

// ---------------------------------------------------------------- eigen_psd

EigenFactorization eigen_psd(const Eigen::MatrixXd& sigma, double rank_tol) {
    if (sigma.rows() != sigma.cols() || sigma.rows() == 0) throw DimensionError("matrix must be square");
    const Eigen::Index k = sigma.rows();
    const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
    if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw NotSymmetric("matrix is not symmetric");

    Eigen::MatrixXd a = 0.5 * (sigma + sigma.transpose());
    Eigen::MatrixXd v = Eigen::MatrixXd::Identity(k, k);
    const double total = a.squaredNorm();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (Eigen::Index p = 0; p < k; ++p)
            for (Eigen::Index q = p + 1; q < k; ++q) off += a(p, q) * a(p, q);
        if (off <= 1e-32 * total || off == 0.0) break;
        for (Eigen::Index p = 0; p < k; ++p) {
            for (Eigen::Index q = p + 1; q < k; ++q) {
                if (a(p, q) == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (Eigen::Index r = 0; r < k; ++r) {
                    const double arp = a(r, p), arq = a(r, q);
                    a(r, p) = c * arp - s * arq;
                    a(r, q) = s * arp + c * arq;
                }
                for (Eigen::Index r = 0; r < k; ++r) {
                    const double apr = a(p, r), aqr = a(q, r);
                    a(p, r) = c * apr - s * aqr;
                    a(q, r) = s * apr + c * aqr;
                }
                for (Eigen::Index r = 0; r < k; ++r) {
                    const double vrp = v(r, p), vrq = v(r, q);
                    v(r, p) = c * vrp - s * vrq;
                    v(r, q) = s * vrp + c * vrq;
                }
            }
        }
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });

    const double trace = sigma.trace();
    EigenFactorization f;
    f.Q.resize(k, k);
    f.lambdas.resize(k);
    for (Eigen::Index c = 0; c < k; ++c) {
        double lam = a(order[c], order[c]);
        if (lam < -1e-8 * std::fabs(trace))
            throw NotPSD("matrix has eigenvalue " + std::to_string(lam));
        f.lambdas(c) = std::max(0.0, lam);
        Eigen::VectorXd col = v.col(order[c]);
        Eigen::Index imax = 0;
        for (Eigen::Index r = 1; r < k; ++r)
            if (std::fabs(col(r)) > std::fabs(col(imax))) imax = r;
        if (col(imax) < 0.0) col = -col;
        f.Q.col(c) = col;
    }
    const double top = f.lambdas(0);
    f.rank = 0;
    if (top > 0.0)
        for (Eigen::Index c = 0; c < k; ++c)
            if (f.lambdas(c) > rank_tol * top) ++f.rank;
    return f;
}

}  // namespace coarea
