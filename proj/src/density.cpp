#include "coarea/density.hpp"

#include "coarea/errors.hpp"
#include "coarea/parallel.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

namespace coarea {

Point AffineSubspace::embed(std::span<const double> u) const {
    if (u.size() != dim()) throw DimensionError("AffineSubspace::embed: wrong coordinate count");
    const Eigen::VectorXd x = offset + basis * Eigen::Map<const Eigen::VectorXd>(u.data(), u.size());
    return Point(x.data(), x.data() + x.size());
}

Point AffineSubspace::coordinates(std::span<const double> x) const {
    if (x.size() != ambient_dim()) throw DimensionError("AffineSubspace::coordinates: wrong dimension");
    const Eigen::VectorXd u =
        basis.transpose() * (Eigen::Map<const Eigen::VectorXd>(x.data(), x.size()) - offset);
    return Point(u.data(), u.data() + u.size());
}

double AffineSubspace::residual(std::span<const double> x) const {
    if (x.size() != ambient_dim()) throw DimensionError("AffineSubspace::residual: wrong dimension");
    const Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size()) - offset;
    return (d - basis * (basis.transpose() * d)).norm();
}

ReferenceMeasure ReferenceMeasure::lebesgue(std::size_t d) {
    return {ReferenceKind::Lebesgue, d, std::nullopt};
}

ReferenceMeasure ReferenceMeasure::hausdorff(std::size_t m, std::optional<AffineSubspace> carrier) {
    return {ReferenceKind::Hausdorff, m, std::move(carrier)};
}

ReferenceMeasure ReferenceMeasure::counting() { return {ReferenceKind::Counting, 0, std::nullopt}; }

std::string ReferenceMeasure::tag() const {
    switch (kind) {
        case ReferenceKind::Lebesgue: return "lebesgue:" + std::to_string(dim);
        case ReferenceKind::Hausdorff: return "hausdorff:" + std::to_string(dim);
        case ReferenceKind::Counting: return "counting";
    }
    return "unknown";
}

DensitySpec::DensitySpec(std::size_t dim, FlaggedFn fn, Support support, ReferenceMeasure reference,
                         double normalization_estimate)
    : dim_(dim),
      fn_(std::move(fn)),
      support_(std::move(support)),
      reference_(std::move(reference)),
      normalization_(normalization_estimate) {
    if (dim_ == 0) throw DimensionError("DensitySpec: dimension must be positive");
    if (!fn_) throw Error("DensitySpec: missing density function");
}

DensitySpec DensitySpec::lebesgue(std::size_t dim, PlainFn f, Box support, double normalization_estimate) {
    if (support.dim() != dim) throw DimensionError("DensitySpec::lebesgue: support box dimension");
    return DensitySpec(
        dim, [f = std::move(f)](std::span<const double> x) { return DensityValue{f(x)}; },
        std::move(support), ReferenceMeasure::lebesgue(dim), normalization_estimate);
}

DensityValue DensitySpec::evaluate_flagged(std::span<const double> x) const {
    if (x.size() != dim_)
        throw DimensionError("density expects " + std::to_string(dim_) + " coordinates, got " +
                             std::to_string(x.size()));
    return fn_(x);
}

DensitySpec DensitySpec::with_support(Support s) const {
    DensitySpec copy = *this;
    copy.support_ = std::move(s);
    return copy;
}

DensitySpec independent_product(const std::vector<DensitySpec>& factors) {
    if (factors.empty()) throw DimensionError("independent_product: no factors");
    Box box;
    double norm = 1.0;
    for (const auto& f : factors) {
        const Box* b = f.support_box();
        if (f.dim() != 1 || !b || f.reference().kind != ReferenceKind::Lebesgue)
            throw DimensionError("independent_product: factors must be 1-D Lebesgue densities");
        box.lo.push_back(b->lo[0]);
        box.hi.push_back(b->hi[0]);
        norm *= f.normalization_estimate();
    }
    const std::size_t k = factors.size();
    return DensitySpec::lebesgue(
        k,
        [factors](std::span<const double> x) {
            double p = 1.0;
            for (std::size_t i = 0; i < factors.size() && p != 0.0; ++i)
                p *= factors[i].evaluate(x.subspan(i, 1));
            return p;
        },
        std::move(box), norm);
}

double integrate_box(const DensitySpec& f, const Box& box, std::size_t resolution) {
    if (box.dim() != f.dim()) throw DimensionError("integrate_box: box dimension");
    if (!box.is_finite()) throw DomainError("integrate_box: box must be finite");
    if (resolution == 0) throw DomainError("integrate_box: resolution must be positive");
    const GridDensity grid = tabulate(f, box, resolution);
    return grid.riemann_mass();
}

double GridDensity::spacing(std::size_t a) const { return (box.hi[a] - box.lo[a]) / double(shape[a]); }

double GridDensity::cell_volume() const {
    double v = 1.0;
    for (std::size_t a = 0; a < dim(); ++a) v *= spacing(a);
    return v;
}

std::vector<double> GridDensity::axis(std::size_t a) const {
    std::vector<double> out(shape[a]);
    const double h = spacing(a);
    for (std::size_t i = 0; i < shape[a]; ++i) out[i] = box.lo[a] + (double(i) + 0.5) * h;
    return out;
}

Point GridDensity::point(std::size_t flat) const {
    Point p(dim());
    for (std::size_t a = dim(); a-- > 0;) {
        const std::size_t i = flat % shape[a];
        flat /= shape[a];
        p[a] = box.lo[a] + (double(i) + 0.5) * spacing(a);
    }
    return p;
}

std::optional<std::size_t> GridDensity::locate(std::span<const double> y) const {
    if (y.size() != dim()) throw DimensionError("GridDensity::locate: dimension mismatch");
    std::size_t flat = 0;
    for (std::size_t a = 0; a < dim(); ++a) {
        if (!(y[a] >= box.lo[a] && y[a] < box.hi[a])) return std::nullopt;
        auto i = static_cast<std::size_t>((y[a] - box.lo[a]) / spacing(a));
        if (i >= shape[a]) i = shape[a] - 1;
        flat = flat * shape[a] + i;
    }
    return flat;
}

double GridDensity::riemann_mass() const {
    return std::accumulate(values.begin(), values.end(), 0.0) * cell_volume();
}

double GridDensity::cdf(double t) const {
    if (dim() != 1) throw DimensionError("GridDensity::cdf: only for 1-D grids");
    const double h = spacing(0);
    if (t <= box.lo[0]) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < shape[0]; ++i) {
        const double left = box.lo[0] + double(i) * h;
        if (t < left + h) return acc + values[i] * (t - left);
        acc += values[i] * h;
    }
    return acc;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string GridDensity::to_csv() const {
    std::string out;
    const bool on_carrier = reference.carrier.has_value();
    const char* name = on_carrier ? "u" : "y";
    for (std::size_t a = 0; a < dim(); ++a) out += std::string(name) + std::to_string(a + 1) + ",";
    if (on_carrier)
        for (std::size_t a = 0; a < reference.carrier->ambient_dim(); ++a)
            out += "y" + std::to_string(a + 1) + ",";
    out += "value\n";
    for (std::size_t j = 0; j < values.size(); ++j) {
        const Point p = point(j);
        for (double c : p) out += format_double(c) + ",";
        if (on_carrier)
            for (double c : reference.carrier->embed(p)) out += format_double(c) + ",";
        out += format_double(values[j]) + "\n";
    }
    return out;
}

nlohmann::json GridDensity::to_json() const {
    nlohmann::json j;
    j["reference_measure"] = reference.tag();
    j["dim"] = dim();
    j["box"] = {{"lo", box.lo}, {"hi", box.hi}};
    j["shape"] = shape;
    j["mass_in_box"] = mass_in_box;
    j["truncation_mass"] = truncation_mass;
    j["truncation_note"] = truncation_note;
    if (reference.carrier) {
        const auto& c = *reference.carrier;
        std::vector<std::vector<double>> basis(c.ambient_dim(), std::vector<double>(c.dim()));
        for (std::size_t r = 0; r < c.ambient_dim(); ++r)
            for (std::size_t q = 0; q < c.dim(); ++q) basis[r][q] = c.basis(r, q);
        j["carrier"] = {{"basis", basis},
                        {"offset", std::vector<double>(c.offset.data(), c.offset.data() + c.offset.size())}};
    }
    j["values"] = values;
    return j;
}

GridDensity make_grid(const Box& box, std::size_t resolution, ReferenceMeasure reference) {
    if (!box.is_finite()) throw DomainError("grid box must be finite");
    if (resolution == 0) throw DomainError("grid resolution must be positive");
    for (std::size_t a = 0; a < box.dim(); ++a)
        if (!(box.lo[a] < box.hi[a])) throw DomainError("grid box must have lo < hi on every axis");
    GridDensity g;
    g.box = box;
    g.shape.assign(box.dim(), resolution);
    std::size_t total = 1;
    for (std::size_t a = 0; a < box.dim(); ++a) total *= resolution;
    g.values.assign(total, 0.0);
    g.reference = std::move(reference);
    return g;
}

GridDensity tabulate(const DensitySpec& f, const Box& box, std::size_t resolution) {
    const auto& ref = f.reference();
    const std::size_t coord_dim = ref.carrier ? ref.carrier->dim() : f.dim();
    if (box.dim() != coord_dim) throw DimensionError("tabulate: box dimension does not match density");
    GridDensity g = make_grid(box, resolution, ref);
    parallel_for(g.values.size(), [&](std::size_t j) {
        const Point p = g.point(j);
        g.values[j] = ref.carrier ? f.evaluate(ref.carrier->embed(p)) : f.evaluate(p);
    });
    g.mass_in_box = g.riemann_mass();
    return g;
}

}  // namespace coarea
