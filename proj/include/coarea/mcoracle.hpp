#pragma once

// Monte Carlo checks: push random draws of X through phi and compare the
// empirical law of Y with a computed density.

#include "coarea/catalog.hpp"
#include "coarea/density.hpp"
#include "coarea/exprmap.hpp"

#include "json.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace coarea {

/// Independent coordinates, one univariate law each.
struct ProductModel {
    std::vector<UnivariateModel> factors;
};

using SamplerModel = std::variant<UnivariateModel, DegenerateNormal, ProductModel>;

std::size_t sampler_dim(const SamplerModel& model);
Point draw(const SamplerModel& model, PhiloxStream& g);

struct SampleBatch {
    std::vector<double> points;  // row-major, size() x dim
    std::size_t dim = 0;
    std::uint64_t seed = 0;
    std::string generator_name;
    std::size_t domain_errors = 0;  // draws rejected by the map and redrawn

    std::size_t size() const noexcept { return dim == 0 ? 0 : points.size() / dim; }
    std::span<const double> row(std::size_t i) const { return {points.data() + i * dim, dim}; }
    /// Header "y1,...,yn"; numbers with 17 significant digits.
    std::string to_csv() const;
};

/// Draws per shard; shard s uses the stream (seed, s).
inline constexpr std::size_t kShardSize = 1u << 16;

/// N draws of X mapped through phi. A draw where phi raises DomainError is
/// counted and replaced by the next draw of the same shard.
SampleBatch push_samples(const SamplerModel& model, const MapExpr& phi, std::size_t N, std::uint64_t seed);

/// sup_t |F_N(t) - cdf(t)| over the jumps of the empirical CDF, using
/// cdf(nextafter(x, -inf)) as the left limit at each jump. Needs dim 1.
double ks_distance(const SampleBatch& batch, const std::function<double(double)>& cdf);

struct HistogramComparison {
    double sup_error = 0.0;
    double l1_error = 0.0;
};

/// Bins the batch on the grid's cells (counts / (N cell_volume)) and
/// compares cellwise. For a grid on an affine carrier, ambient samples are
/// first pulled back to carrier coordinates.
HistogramComparison histogram_compare(const GridDensity& grid, const SampleBatch& batch);

/// Carrier coordinates of every sample.
SampleBatch pull_back_to_carrier(const SampleBatch& batch, const AffineSubspace& carrier);

/// {"sup_error", "l1_error", "ks", "N", "seed", "generator"}; ks is null when
/// not computed.
nlohmann::json comparison_report(const SampleBatch& batch, const HistogramComparison& h,
                                 const double* ks = nullptr);

}  // namespace coarea
