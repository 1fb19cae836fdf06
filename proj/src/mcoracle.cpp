#include "coarea/mcoracle.hpp"

#include "coarea/errors.hpp"
#include "coarea/parallel.hpp"
#include "coarea/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace coarea {

namespace {

constexpr std::size_t kMaxRejectsInARow = 10000;

}  // namespace

std::size_t sampler_dim(const SamplerModel& model) {
    struct {
        std::size_t operator()(const UnivariateModel&) const { return 1; }
        std::size_t operator()(const DegenerateNormal& d) const { return d.dim(); }
        std::size_t operator()(const ProductModel& p) const { return p.factors.size(); }
    } visitor;
    return std::visit(visitor, model);
}

Point draw(const SamplerModel& model, PhiloxStream& g) {
    struct {
        PhiloxStream& g;
        Point operator()(const UnivariateModel& m) const { return {m.sample(g)}; }
        Point operator()(const DegenerateNormal& d) const { return d.sample(g); }
        Point operator()(const ProductModel& p) const {
            Point x;
            x.reserve(p.factors.size());
            for (const auto& f : p.factors) x.push_back(f.sample(g));
            return x;
        }
    } visitor{g};
    return std::visit(visitor, model);
}

std::string SampleBatch::to_csv() const {
    std::string out;
    for (std::size_t a = 0; a < dim; ++a) out += (a ? ",y" : "y") + std::to_string(a + 1);
    out += '\n';
    for (std::size_t i = 0; i < size(); ++i) {
        for (std::size_t a = 0; a < dim; ++a) {
            if (a) out += ',';
            out += format_double(points[i * dim + a]);
        }
        out += '\n';
    }
    return out;
}

SampleBatch push_samples(const SamplerModel& model, const MapExpr& phi, std::size_t N, std::uint64_t seed) {
    if (N == 0) throw DomainError("push_samples: N must be at least 1");
    const std::size_t k = sampler_dim(model);
    if (phi.input_dim() != k)
        throw DimensionError("push_samples: sampler has dimension " + std::to_string(k) + " but the map expects " +
                             std::to_string(phi.input_dim()));
    const std::size_t n = phi.output_dim();
    SampleBatch batch;
    batch.dim = n;
    batch.seed = seed;
    batch.generator_name = kGeneratorName;
    batch.points.assign(N * n, 0.0);

    const std::size_t shards = (N + kShardSize - 1) / kShardSize;
    std::vector<std::size_t> rejects(shards, 0);
    parallel_for(shards, [&](std::size_t s) {
        PhiloxStream g(seed, s);
        const std::size_t begin = s * kShardSize, end = std::min(N, begin + kShardSize);
        for (std::size_t i = begin; i < end; ++i) {
            std::size_t in_a_row = 0;
            for (;;) {
                const Point x = draw(model, g);
                try {
                    phi.eval_into(x, std::span<double>(batch.points.data() + i * n, n));
                    break;
                } catch (const DomainError&) {
                    ++rejects[s];
                    if (++in_a_row >= kMaxRejectsInARow)
                        throw DomainError("push_samples: the map is undefined on " +
                                          std::to_string(kMaxRejectsInARow) + " consecutive draws");
                }
            }
        }
    });
    for (std::size_t r : rejects) batch.domain_errors += r;
    return batch;
}

double ks_distance(const SampleBatch& batch, const std::function<double(double)>& cdf) {
    if (batch.dim != 1) throw DimensionError("ks_distance needs one-dimensional samples");
    const std::size_t N = batch.size();
    if (N == 0) throw DomainError("ks_distance: empty batch");
    std::vector<double> xs = batch.points;
    std::sort(xs.begin(), xs.end());
    const double n = double(N);
    double d = 0.0;
    for (std::size_t i = 0; i < N;) {
        std::size_t j = i;
        while (j < N && xs[j] == xs[i]) ++j;  // ties form one jump
        const double x = xs[i];
        const double below = cdf(std::nextafter(x, -std::numeric_limits<double>::infinity()));
        const double at = cdf(x);
        d = std::max({d, std::fabs(below - double(i) / n), std::fabs(double(j) / n - at)});
        i = j;
    }
    return d;
}

SampleBatch pull_back_to_carrier(const SampleBatch& batch, const AffineSubspace& carrier) {
    if (batch.dim != carrier.ambient_dim())
        throw DimensionError("pull_back_to_carrier: samples have dimension " + std::to_string(batch.dim) +
                             ", carrier lives in R^" + std::to_string(carrier.ambient_dim()));
    SampleBatch out;
    out.dim = carrier.dim();
    out.seed = batch.seed;
    out.generator_name = batch.generator_name;
    out.domain_errors = batch.domain_errors;
    out.points.reserve(batch.size() * out.dim);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Point u = carrier.coordinates(batch.row(i));
        out.points.insert(out.points.end(), u.begin(), u.end());
    }
    return out;
}

HistogramComparison histogram_compare(const GridDensity& grid, const SampleBatch& batch) {
    if (batch.size() == 0) throw DomainError("histogram_compare: empty batch");
    if (grid.reference.kind == ReferenceKind::Counting)
        throw DimensionError("histogram_compare: counting densities have no histogram");
    const auto& carrier = grid.reference.carrier;
    if (carrier && batch.dim == carrier->ambient_dim() && batch.dim != grid.dim())
        return histogram_compare(grid, pull_back_to_carrier(batch, *carrier));
    if (batch.dim != grid.dim())
        throw DimensionError("histogram_compare: samples have dimension " + std::to_string(batch.dim) +
                             " but the grid has " + std::to_string(grid.dim()));

    std::vector<std::size_t> counts(grid.size(), 0);
    for (std::size_t i = 0; i < batch.size(); ++i)
        if (const auto cell = grid.locate(batch.row(i))) ++counts[*cell];
    const double scale = 1.0 / (double(batch.size()) * grid.cell_volume());
    HistogramComparison h;
    for (std::size_t c = 0; c < grid.size(); ++c) {
        const double e = std::fabs(double(counts[c]) * scale - grid.values[c]);
        h.sup_error = std::max(h.sup_error, e);
        h.l1_error += e * grid.cell_volume();
    }
    return h;
}

nlohmann::json comparison_report(const SampleBatch& batch, const HistogramComparison& h, const double* ks) {
    nlohmann::json j;
    j["sup_error"] = h.sup_error;
    j["l1_error"] = h.l1_error;
    j["ks"] = ks ? nlohmann::json(*ks) : nlohmann::json(nullptr);
    j["N"] = batch.size();
    j["seed"] = batch.seed;
    j["generator"] = batch.generator_name;
    return j;
}

}  // namespace coarea
