#include "coarea/quadrature.hpp"

#include "coarea/errors.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace coarea {

namespace {

using GK = boost::math::quadrature::gauss_kronrod<double, 15>;

constexpr std::size_t kMaxSegments = 4000;
constexpr double kEps = std::numeric_limits<double>::epsilon();

struct Segment {
    double a, b, value, error, l1;
    unsigned depth;
    bool operator<(const Segment& o) const { return error < o.error; }
};

// One K15 panel from Boost's node tables. Boost's own non-adaptive error
// estimate is left in [-1, 1] coordinates, so it is recomputed here.
Segment panel(const ScalarFn& f, double a, double b, unsigned depth) {
    using G7 = boost::math::quadrature::gauss<double, 7>;
    const auto& x = GK::abscissa();
    const auto& wk = GK::weights();
    const auto& wg = G7::weights();
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    const double f0 = f(mid);
    double k = f0 * wk[0], g = f0 * wg[0], l1 = std::fabs(f0) * wk[0];
    for (std::size_t i = 1; i < x.size(); ++i) {
        const double fp = f(mid + half * x[i]), fm = f(mid - half * x[i]);
        k += (fp + fm) * wk[i];
        l1 += (std::fabs(fp) + std::fabs(fm)) * wk[i];
        if (i % 2 == 0) g += (fp + fm) * wg[i / 2];
    }
    return Segment{a, b, half * k, half * std::fabs(k - g), half * l1, depth};
}

// Globally adaptive: always bisect the segment with the largest error.
QuadResult adapt(const ScalarFn& f, double a, double b, double rel_tol, unsigned max_depth) {
    std::priority_queue<Segment> open;
    std::vector<Segment> done;
    open.push(panel(f, a, b, 0));
    double value = open.top().value, error = open.top().error, l1 = open.top().l1;
    std::size_t count = 1;
    while (!open.empty()) {
        if (error <= std::max(rel_tol * std::fabs(value), 50 * kEps * l1)) break;
        if (count >= kMaxSegments) break;
        Segment s = open.top();
        open.pop();
        const double mid = 0.5 * (s.a + s.b);
        if (s.depth >= max_depth || s.error <= 50 * kEps * s.l1 || !(s.a < mid && mid < s.b)) {
            done.push_back(s);
            continue;
        }
        const Segment left = panel(f, s.a, mid, s.depth + 1);
        const Segment right = panel(f, mid, s.b, s.depth + 1);
        value += left.value + right.value - s.value;
        error += left.error + right.error - s.error;
        l1 += left.l1 + right.l1 - s.l1;
        open.push(left);
        open.push(right);
        ++count;
    }
    QuadResult r;
    for (; !open.empty(); open.pop()) done.push_back(open.top());
    std::sort(done.begin(), done.end(), [](const Segment& x, const Segment& y) { return x.a < y.a; });
    for (const auto& s : done) {
        r.value += s.value;
        r.error += s.error;
    }
    if (!std::isfinite(r.value)) throw DomainError("integrate: integrand is not finite");
    return r;
}

// Guards 0 * inf near a mapped endpoint.
double weighted(const ScalarFn& f, double x, double w) {
    const double v = f(x);
    return v == 0.0 ? 0.0 : v * w;
}

}  // namespace

QuadResult integrate(const ScalarFn& f, double a, double b, double rel_tol, unsigned max_depth) {
    if (std::isnan(a) || std::isnan(b)) throw DomainError("integrate: NaN limit");
    if (a == b) return {};
    if (a > b) {
        QuadResult r = integrate(f, b, a, rel_tol, max_depth);
        r.value = -r.value;
        return r;
    }
    const bool lo_inf = std::isinf(a), hi_inf = std::isinf(b);
    if (lo_inf && hi_inf) {
        return adapt(
            [&](double t) {
                const double d = 1.0 - t * t;
                return weighted(f, t / d, (1.0 + t * t) / (d * d));
            },
            -1.0, 1.0, rel_tol, max_depth);
    }
    if (hi_inf) {
        return adapt([&](double t) { return weighted(f, a + t / (1.0 - t), 1.0 / ((1.0 - t) * (1.0 - t))); }, 0.0,
                     1.0, rel_tol, max_depth);
    }
    if (lo_inf) {
        return adapt([&](double t) { return weighted(f, b - t / (1.0 - t), 1.0 / ((1.0 - t) * (1.0 - t))); }, 0.0,
                     1.0, rel_tol, max_depth);
    }
    return adapt(f, a, b, rel_tol, max_depth);
}

QuadResult integrate_pieces(const ScalarFn& f, const std::vector<double>& points, double rel_tol,
                            unsigned max_depth) {
    QuadResult total;
    for (std::size_t i = 0; i + 1 < points.size(); ++i) {
        if (points[i + 1] < points[i]) throw DomainError("integrate_pieces: points must be sorted");
        if (points[i + 1] == points[i]) continue;
        const QuadResult r = integrate(f, points[i], points[i + 1], rel_tol, max_depth);
        total.value += r.value;
        total.error += r.error;
    }
    return total;
}

QuadResult kronrod15(const ScalarFn& f, double a, double b) {
    if (a == b) return {};
    const Segment s = panel(f, a, b, 0);
    return {s.value, s.error};
}

NumericCdf::NumericCdf(ScalarFn pdf, double lo, double hi, std::vector<double> breakpoints,
                       double center, double scale, std::size_t panels)
    : pdf_(std::move(pdf)) {
    if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi))
        throw DomainError("NumericCdf: need finite lo < hi");
    if (!(scale > 0.0) || panels < 2) throw DomainError("NumericCdf: bad panel layout");

    const double s0 = std::asinh((lo - center) / scale);
    const double s1 = std::asinh((hi - center) / scale);
    edges_.reserve(panels + 1 + 80 * breakpoints.size());
    for (std::size_t i = 0; i <= panels; ++i) {
        const double s = s0 + (s1 - s0) * double(i) / double(panels);
        edges_.push_back(std::clamp(center + scale * std::sinh(s), lo, hi));
    }
    edges_.front() = lo;
    edges_.back() = hi;

    const double ds = (s1 - s0) / double(panels);
    for (double bp : breakpoints) {
        if (!(bp >= lo && bp <= hi)) continue;
        const double width = scale * std::cosh(std::asinh((bp - center) / scale)) * ds;
        edges_.push_back(bp);
        for (int j = 1; j <= 40; ++j) {
            const double d = width * std::ldexp(1.0, -j);
            if (bp - d > lo) edges_.push_back(bp - d);
            if (bp + d < hi) edges_.push_back(bp + d);
        }
    }
    std::sort(edges_.begin(), edges_.end());
    edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());

    cum_.assign(edges_.size(), 0.0);
    for (std::size_t i = 0; i + 1 < edges_.size(); ++i)
        cum_[i + 1] = cum_[i] + integrate(pdf_, edges_[i], edges_[i + 1], 1e-12, 12).value;
}

double NumericCdf::operator()(double t) const {
    if (edges_.empty()) throw DomainError("NumericCdf: empty table");
    if (std::isnan(t)) return t;
    if (t <= edges_.front()) return 0.0;
    if (t >= edges_.back()) return cum_.back();
    const auto it = std::upper_bound(edges_.begin(), edges_.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - edges_.begin()) - 1;
    if (t == edges_[i]) return cum_[i];
    return cum_[i] + kronrod15(pdf_, edges_[i], t).value;
}

}  // namespace coarea
