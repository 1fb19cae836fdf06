#pragma once

// Density objects: a pointwise density with its support and reference
// measure (DensitySpec), and densities tabulated on a regular lattice
// (GridDensity).

#include "coarea/exprmap.hpp"
#include "coarea/measuregeo.hpp"

#include <Eigen/Dense>

#include "json.hpp"

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace coarea {

/// {offset + basis * u : u in R^m}, basis with orthonormal columns.
struct AffineSubspace {
    Eigen::MatrixXd basis;   // n x m
    Eigen::VectorXd offset;  // n

    std::size_t ambient_dim() const noexcept { return static_cast<std::size_t>(basis.rows()); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(basis.cols()); }
    Point embed(std::span<const double> u) const;
    Point coordinates(std::span<const double> x) const;
    /// Euclidean distance from x to the subspace.
    double residual(std::span<const double> x) const;
};

struct ManifoldPatch {
    MapExpr psi;
    Box domain;
};

struct PointSet {
    std::vector<Point> points;
};

using Support = std::variant<Box, AffineSubspace, ManifoldPatch, PointSet>;

enum class ReferenceKind { Lebesgue, Hausdorff, Counting };

struct ReferenceMeasure {
    ReferenceKind kind = ReferenceKind::Lebesgue;
    std::size_t dim = 0;
    std::optional<AffineSubspace> carrier;  // set for Hausdorff measure on a flat

    static ReferenceMeasure lebesgue(std::size_t d);
    static ReferenceMeasure hausdorff(std::size_t m, std::optional<AffineSubspace> carrier = {});
    static ReferenceMeasure counting();
    /// "lebesgue:2", "hausdorff:1", "counting".
    std::string tag() const;
};

enum class DensityFlag { None, OffCarrier, OffManifold };

struct DensityValue {
    double value = 0.0;
    DensityFlag flag = DensityFlag::None;
};

class DensitySpec {
public:
    using FlaggedFn = std::function<DensityValue(std::span<const double>)>;
    using PlainFn = std::function<double(std::span<const double>)>;

    DensitySpec() = default;
    DensitySpec(std::size_t dim, FlaggedFn fn, Support support, ReferenceMeasure reference,
                double normalization_estimate = std::numeric_limits<double>::quiet_NaN());

    /// Lebesgue density on R^dim. `f` itself must vanish off `support`; the
    /// box is metadata for truncation and quadrature.
    static DensitySpec lebesgue(std::size_t dim, PlainFn f, Box support,
                                double normalization_estimate = 1.0);

    /// Value only; points of the wrong length raise DimensionError.
    double evaluate(std::span<const double> x) const { return evaluate_flagged(x).value; }
    DensityValue evaluate_flagged(std::span<const double> x) const;
    double operator()(std::span<const double> x) const { return evaluate(x); }

    std::size_t dim() const noexcept { return dim_; }
    const Support& support() const noexcept { return support_; }
    /// The support box, or nullptr when the support is not a box.
    const Box* support_box() const noexcept { return std::get_if<Box>(&support_); }
    const ReferenceMeasure& reference() const noexcept { return reference_; }
    double normalization_estimate() const noexcept { return normalization_; }

    DensitySpec with_support(Support s) const;

private:
    std::size_t dim_ = 0;
    FlaggedFn fn_;
    Support support_;
    ReferenceMeasure reference_;
    double normalization_ = std::numeric_limits<double>::quiet_NaN();
};

/// Joint density of independent components, each a 1-D Lebesgue density
/// with a box support. The joint support is the product box.
DensitySpec independent_product(const std::vector<DensitySpec>& factors);

/// Midpoint-rule integral of a Lebesgue density over `box` with
/// `resolution` cells per axis.
double integrate_box(const DensitySpec& f, const Box& box, std::size_t resolution);

/// Density values on the cell centers of a regular lattice. For Hausdorff
/// densities on an affine carrier the lattice lives in carrier coordinates.
struct GridDensity {
    Box box;
    std::vector<std::size_t> shape;  // cells per axis
    std::vector<double> values;      // row-major, last axis fastest
    ReferenceMeasure reference;
    double mass_in_box = 0.0;
    double truncation_mass = 0.0;  // input mass left outside the integration box
    std::string truncation_note;

    std::size_t dim() const noexcept { return shape.size(); }
    std::size_t size() const noexcept { return values.size(); }
    double cell_volume() const;
    double spacing(std::size_t axis) const;
    std::vector<double> axis(std::size_t axis) const;
    Point point(std::size_t flat) const;
    /// Cell containing y, or nullopt outside the box (upper faces excluded).
    std::optional<std::size_t> locate(std::span<const double> y) const;
    /// Riemann sum of the values.
    double riemann_mass() const;
    /// 1-D only: integral of the piecewise-constant density up to t.
    double cdf(double t) const;

    /// Header "y1,...,yn,value" (carrier grids add the ambient coordinates
    /// after the carrier ones); numbers with 17 significant digits.
    std::string to_csv() const;
    nlohmann::json to_json() const;
};

/// Regular lattice with `resolution` cells per axis over `box`.
GridDensity make_grid(const Box& box, std::size_t resolution, ReferenceMeasure reference);

/// Evaluates f on make_grid(box, resolution, f.reference()).
GridDensity tabulate(const DensitySpec& f, const Box& box, std::size_t resolution);

/// printf "%.17g": enough digits to round-trip any double.
std::string format_double(double v);

}  // namespace coarea
