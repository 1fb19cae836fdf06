#include "coarea/cli.hpp"

#include "coarea/catalog.hpp"
#include "coarea/errors.hpp"
#include "coarea/mcoracle.hpp"
#include "coarea/pushforward.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

namespace coarea::cli {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// ------------------------------------------------------------ config access

[[noreturn]] void bad(const std::string& where, const std::string& what) {
    throw ConfigError(where + ": " + what);
}

const json& need(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) bad(where, std::string("missing field \"") + key + "\"");
    return j[key];
}

double num(const json& j, const std::string& where) {
    if (!j.is_number()) bad(where, "expected a number, got " + j.dump());
    return j.get<double>();
}

std::size_t count(const json& j, const std::string& where, std::size_t min = 1) {
    if (!j.is_number_integer() && !(j.is_number() && j.get<double>() == std::floor(j.get<double>())))
        bad(where, "expected an integer, got " + j.dump());
    const double v = j.get<double>();
    if (v < double(min)) bad(where, "must be at least " + std::to_string(min));
    return static_cast<std::size_t>(v);
}

std::vector<double> vec(const json& j, const std::string& where) {
    if (!j.is_array()) bad(where, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(num(j[i], where + "[" + std::to_string(i) + "]"));
    return out;
}

Eigen::MatrixXd matrix(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty() || !j[0].is_array()) bad(where, "expected a nonempty array of rows");
    const std::size_t rows = j.size(), cols = j[0].size();
    Eigen::MatrixXd M(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto row = vec(j[r], where + "[" + std::to_string(r) + "]");
        if (row.size() != cols) bad(where, "rows have different lengths");
        for (std::size_t c = 0; c < cols; ++c) M(r, c) = row[c];
    }
    return M;
}

Eigen::VectorXd evec(const std::vector<double>& v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()); }

Box box_from(const json& j, const std::string& where) {
    const auto lo = vec(need(j, "lo", where), where + ".lo");
    const auto hi = vec(need(j, "hi", where), where + ".hi");
    if (lo.size() != hi.size() || lo.empty()) bad(where, "lo and hi must be nonempty and of equal length");
    return Box(lo, hi);
}

// ------------------------------------------------------------ base density

struct Base {
    std::optional<DensitySpec> density;
    std::optional<SamplerModel> sampler;
    std::optional<MapExpr> sample_map;           // applied to sampler draws before phi
    std::optional<UnivariateModel> univariate;  // exact CDF when the law is a catalog model
    std::size_t dim = 0;
};

UnivariateModel model_at(const json& j, const std::string& where) {
    try {
        return model_from_json(j);
    } catch (const ConfigError& e) {
        bad(where, e.what());
    }
}

// Map picking the i-th smallest coordinate (i = 0 means all, sorted).
MapExpr sort_map(std::size_t k, std::size_t i) {
    return MapExpr::from_callback(k, i == 0 ? k : 1, [k, i](std::span<const double> x, std::span<double> out) {
        std::vector<double> s(x.begin(), x.end());
        std::sort(s.begin(), s.end());
        if (i == 0)
            std::copy(s.begin(), s.end(), out.begin());
        else
            out[0] = s[i - 1];
        (void)k;
    });
}

Base build_base(const json& cfg) {
    const std::string where = "base_density";
    const json& b = need(cfg, "base_density", "config");
    if (!b.is_object()) bad(where, "must be an object");
    Base out;
    const char* kinds[] = {"model", "product", "degenerate_normal", "expression", "order_stat", "order_stat_joint"};
    int present = 0;
    for (const char* k : kinds) present += b.contains(k) ? 1 : 0;
    if (present != 1)
        bad(where, "give exactly one of model, product, degenerate_normal, expression, order_stat, order_stat_joint");

    if (b.contains("model")) {
        const auto m = model_at(b["model"], where + ".model");
        const std::size_t iid = b.contains("iid") ? count(b["iid"], where + ".iid") : 1;
        if (iid == 1) {
            out.density = m.density();
            out.sampler = m;
            out.univariate = m;
        } else {
            out.density = independent_product(std::vector<DensitySpec>(iid, m.density()));
            out.sampler = ProductModel{std::vector<UnivariateModel>(iid, m)};
        }
        out.dim = iid;
    } else if (b.contains("product")) {
        const json& p = b["product"];
        if (!p.is_array() || p.empty()) bad(where + ".product", "expected a nonempty array of models");
        ProductModel pm;
        std::vector<DensitySpec> parts;
        for (std::size_t i = 0; i < p.size(); ++i) {
            pm.factors.push_back(model_at(p[i], where + ".product[" + std::to_string(i) + "]"));
            parts.push_back(pm.factors.back().density());
        }
        out.density = independent_product(parts);
        out.dim = parts.size();
        out.sampler = std::move(pm);
    } else if (b.contains("degenerate_normal")) {
        const json& d = b["degenerate_normal"];
        const auto mean = vec(need(d, "mean", where + ".degenerate_normal"), where + ".degenerate_normal.mean");
        const auto cov = matrix(need(d, "cov", where + ".degenerate_normal"), where + ".degenerate_normal.cov");
        if (cov.rows() != cov.cols() || std::size_t(cov.rows()) != mean.size())
            bad(where + ".degenerate_normal", "cov must be square with the length of mean");
        const auto dn = degenerate_normal(evec(mean), cov);
        out.density = dn.density();
        out.sampler = dn;
        out.dim = mean.size();
    } else if (b.contains("expression")) {
        const json& e = b["expression"];
        if (!e.is_string()) bad(where + ".expression", "expected a string");
        const Box box = box_from(need(b, "box", where), where + ".box");
        const std::size_t k = box.dim();
        const MapExpr f = parse_map(e.get<std::string>(), k, 1);
        const double norm = b.contains("normalization") ? num(b["normalization"], where + ".normalization") : 1.0;
        out.density = DensitySpec::lebesgue(
            k,
            [f, box](std::span<const double> x) {
                if (!box.contains(x)) return 0.0;
                return f.eval(x)[0];
            },
            box, norm);
        out.dim = k;
    } else if (b.contains("order_stat")) {
        const json& o = b["order_stat"];
        const auto m = model_at(need(o, "model", where + ".order_stat"), where + ".order_stat.model");
        const int k = int(count(need(o, "k", where + ".order_stat"), where + ".order_stat.k"));
        const int i = int(count(need(o, "i", where + ".order_stat"), where + ".order_stat.i"));
        if (i > k) bad(where + ".order_stat", "need 1 <= i <= k");
        out.density = DensitySpec::lebesgue(
            1, [m, k, i](std::span<const double> y) { return order_stat_pdf(m, k, i, y[0]); }, m.box());
        out.sampler = ProductModel{std::vector<UnivariateModel>(std::size_t(k), m)};
        out.sample_map = sort_map(std::size_t(k), std::size_t(i));
        out.dim = 1;
    } else {
        const json& o = b["order_stat_joint"];
        const auto m = model_at(need(o, "model", where + ".order_stat_joint"), where + ".order_stat_joint.model");
        const int k = int(count(need(o, "k", where + ".order_stat_joint"), where + ".order_stat_joint.k"));
        const Box mb = m.box();
        out.density = DensitySpec::lebesgue(
            std::size_t(k), [m, k](std::span<const double> y) { return order_stat_joint_pdf(m, k, y); },
            Box::cube(std::size_t(k), mb.lo[0], mb.hi[0]));
        out.sampler = ProductModel{std::vector<UnivariateModel>(std::size_t(k), m)};
        out.sample_map = sort_map(std::size_t(k), 0);
        out.dim = std::size_t(k);
    }
    if (b.contains("box") && !b.contains("expression")) {
        const Box box = box_from(b["box"], where + ".box");
        if (box.dim() != out.dim) bad(where + ".box", "dimension " + std::to_string(box.dim()) + " does not match the density");
        if (out.density->reference().kind != ReferenceKind::Lebesgue)
            bad(where + ".box", "only Lebesgue densities take a support box");
        out.density = out.density->with_support(box);
    }
    return out;
}

MapExpr build_map(const json& cfg, std::size_t k) {
    const json& m = need(cfg, "map", "config");
    try {
        if (m.is_string()) {
            const std::string src = m.get<std::string>();
            const std::size_t n = 1 + std::size_t(std::count(src.begin(), src.end(), ';'));
            return parse_map(src, k, n);
        }
        const MapExpr phi = map_from_json(m);
        if (phi.input_dim() != k)
            bad("map", "takes " + std::to_string(phi.input_dim()) + " inputs but base_density has dimension " +
                           std::to_string(k));
        return phi;
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        bad("map", e.what());
    }
}

MapExpr affine_map(const Eigen::MatrixXd& A, const Eigen::VectorXd& y0) {
    return MapExpr::from_callback(
        std::size_t(A.cols()), std::size_t(A.rows()),
        [A, y0](std::span<const double> x, std::span<double> out) {
            const Eigen::VectorXd y = A * Eigen::Map<const Eigen::VectorXd>(x.data(), x.size()) + y0;
            std::copy(y.data(), y.data() + y.size(), out.begin());
        },
        [A](std::span<const double>, Eigen::MatrixXd& jac) { jac = A; });
}

// ------------------------------------------------------------ jobs

struct Output {
    Box box;
    std::size_t resolution = 0;
    std::size_t fiber_resolution = 0;
    std::string path;
};

Output read_output(const json& cfg, bool need_fiber) {
    const json& o = need(cfg, "output", "config");
    Output out;
    out.box = box_from(need(o, "box", "output"), "output.box");
    out.resolution = count(need(o, "resolution", "output"), "output.resolution");
    if (need_fiber) out.fiber_resolution = count(need(o, "fiber_resolution", "output"), "output.fiber_resolution", 2);
    const json& p = need(o, "path", "output");
    if (!p.is_string() || p.get<std::string>().empty()) bad("output.path", "expected a nonempty string");
    out.path = p.get<std::string>();
    return out;
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path);
    f << text;
    if (!f) throw ConfigError("failed writing " + path);
}

struct Computed {
    std::string mode;
    std::optional<GridDensity> grid;
    std::string csv;  // set for area mode
    json extra = json::object();
    Base base;
    std::optional<MapExpr> phi;  // the map pushed samples go through
};

void require_dims(const std::string& mode, std::size_t k, std::size_t n) {
    const bool ok = (mode == "equal" && k == n) || (mode == "coarea" && k > n) || (mode == "area" && k < n);
    if (!ok)
        bad("mode", "\"" + mode + "\" needs " +
                        (mode == "equal" ? std::string("k = n") : mode == "coarea" ? "k > n" : "k < n") +
                        " but the map has k=" + std::to_string(k) + ", n=" + std::to_string(n));
}

void check_box_dim(const Box& box, std::size_t want, const char* what) {
    if (box.dim() != want)
        bad("output.box", "has dimension " + std::to_string(box.dim()) + " but " + what + " has dimension " +
                              std::to_string(want));
}

Computed compute(const json& cfg) {
    Computed c;
    const json& mode_j = need(cfg, "mode", "config");
    if (!mode_j.is_string()) bad("mode", "expected a string");
    c.mode = mode_j.get<std::string>();
    static const char* modes[] = {"area", "equal", "coarea", "affine", "catalog"};
    if (std::find_if(std::begin(modes), std::end(modes), [&](const char* m) { return c.mode == m; }) == std::end(modes))
        bad("mode", "unknown mode \"" + c.mode + "\" (area, equal, coarea, affine, catalog)");
    c.base = build_base(cfg);
    const DensitySpec& fX = *c.base.density;
    const std::size_t k = c.base.dim;

    if (c.mode == "catalog") {
        const Output out = read_output(cfg, false);
        const std::size_t coord_dim = fX.reference().carrier ? fX.reference().carrier->dim() : k;
        check_box_dim(out.box, coord_dim, "the density");
        c.grid = tabulate(fX, out.box, out.resolution);
        if (c.base.univariate) {
            const auto& m = *c.base.univariate;
            c.grid->truncation_mass = m.cdf(out.box.lo[0]) + (1.0 - m.cdf(out.box.hi[0]));
            c.grid->truncation_note = "closed-form density; law mass outside the output box " +
                                      format_double(c.grid->truncation_mass);
        }
        c.phi = c.base.sample_map ? std::nullopt : std::optional<MapExpr>(identity_map(k));
        return c;
    }
    if (c.mode == "affine") {
        const json& a = need(cfg, "affine", "config");
        const Eigen::MatrixXd A = matrix(need(a, "A", "affine"), "affine.A");
        if (std::size_t(A.cols()) != k)
            bad("affine.A", "has " + std::to_string(A.cols()) + " columns but base_density has dimension " +
                                std::to_string(k));
        const auto y0v = a.contains("y0") ? vec(a["y0"], "affine.y0") : std::vector<double>(A.rows(), 0.0);
        if (y0v.size() != std::size_t(A.rows())) bad("affine.y0", "length must equal the rows of A");
        const Eigen::VectorXd y0 = evec(y0v);
        const DensitySpec fY = pushforward_affine(fX, A, y0);
        const Output out = read_output(cfg, false);
        const std::size_t coord_dim = fY.reference().carrier ? fY.reference().carrier->dim() : std::size_t(A.rows());
        check_box_dim(out.box, coord_dim, fY.reference().carrier ? "the carrier" : "the output");
        c.grid = tabulate(fY, out.box, out.resolution);
        c.grid->truncation_note = "affine pushforward; output box holds " + format_double(c.grid->mass_in_box);
        c.extra["rank"] = estimate_rank(A);
        c.phi = affine_map(A, y0);
        return c;
    }

    const MapExpr phi = build_map(cfg, k);
    require_dims(c.mode, phi.input_dim(), phi.output_dim());
    c.phi = phi;
    if (c.mode == "equal") {
        std::vector<Box> branches;
        if (cfg.contains("branches")) {
            const json& bj = cfg["branches"];
            if (!bj.is_array()) bad("branches", "expected an array of boxes");
            for (std::size_t i = 0; i < bj.size(); ++i) {
                const std::string w = "branches[" + std::to_string(i) + "]";
                // JSON has no infinity; null stands for an unbounded side.
                auto ends = [&](const char* key, double inf) {
                    const json& e = need(bj[i], key, w);
                    if (!e.is_array()) bad(w + "." + key, "expected an array");
                    std::vector<double> v;
                    for (const auto& x : e) v.push_back(x.is_null() ? inf : num(x, w + "." + key));
                    return v;
                };
                branches.emplace_back(ends("lo", -kInf), ends("hi", kInf));
                if (branches.back().dim() != k) bad(w, "dimension does not match the map");
            }
        }
        const Output out = read_output(cfg, false);
        check_box_dim(out.box, k, "the output");
        c.grid = tabulate(pushforward_equal(fX, phi, branches), out.box, out.resolution);
        c.grid->truncation_note = "change of variables; output box holds " + format_double(c.grid->mass_in_box);
        return c;
    }
    if (c.mode == "coarea") {
        const Output out = read_output(cfg, true);
        check_box_dim(out.box, phi.output_dim(), "the output");
        c.grid = pushforward_coarea(fX, phi, out.box, out.resolution, out.fiber_resolution);
        return c;
    }

    // area: density on the image manifold, at explicit queries or at the
    // images of a lattice over the parameter box.
    const json& o = need(cfg, "output", "config");
    const json& p = need(o, "path", "output");
    if (!p.is_string() || p.get<std::string>().empty()) bad("output.path", "expected a nonempty string");
    const std::size_t n = phi.output_dim();
    std::vector<Point> params, queries;
    if (o.contains("queries") && !o["queries"].is_null()) {
        const json& q = o["queries"];
        if (!q.is_array() || q.empty()) bad("output.queries", "expected a nonempty array of points");
        for (std::size_t i = 0; i < q.size(); ++i) {
            queries.push_back(vec(q[i], "output.queries[" + std::to_string(i) + "]"));
            if (queries.back().size() != n) bad("output.queries", "points must have the map's output dimension");
        }
    } else {
        const Box pbox = box_from(need(o, "box", "output"), "output.box");
        check_box_dim(pbox, k, "the parameter space");
        const GridDensity lattice = make_grid(pbox, count(need(o, "resolution", "output"), "output.resolution"),
                                              ReferenceMeasure::lebesgue(k));
        for (std::size_t j = 0; j < lattice.size(); ++j) {
            params.push_back(lattice.point(j));
            queries.push_back(phi.eval(params.back()));
        }
        c.extra["parameter_cell_volume"] = lattice.cell_volume();
    }
    std::string csv;
    for (std::size_t a = 0; a < k && !params.empty(); ++a) csv += "u" + std::to_string(a + 1) + ",";
    for (std::size_t a = 0; a < n; ++a) csv += "y" + std::to_string(a + 1) + ",";
    csv += "value,off_manifold,preimages\n";
    double mass = 0.0;
    std::size_t off = 0;
    for (std::size_t j = 0; j < queries.size(); ++j) {
        const AreaResult r = pushforward_area(fX, phi, queries[j]);
        if (!params.empty()) {
            for (double v : params[j]) csv += format_double(v) + ",";
            mass += r.density * jacobian_m(phi.jacobian(params[j]), k);
        }
        for (double v : queries[j]) csv += format_double(v) + ",";
        csv += format_double(r.density) + "," + (r.off_manifold ? "1" : "0") + "," +
               std::to_string(r.preimages.size()) + "\n";
        off += r.off_manifold ? 1 : 0;
    }
    c.csv = std::move(csv);
    c.extra["reference_measure"] = ReferenceMeasure::hausdorff(k).tag();
    c.extra["queries"] = queries.size();
    c.extra["off_manifold"] = off;
    if (!params.empty()) c.extra["mass_in_box"] = mass * c.extra["parameter_cell_volume"].get<double>();
    return c;
}

json grid_report(const GridDensity& g) {
    json j = g.to_json();
    j.erase("values");
    return j;
}

std::string path_of(const json& cfg) { return cfg["output"]["path"].get<std::string>(); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

// ------------------------------------------------------------ overrides

json apply_overrides(json config, const std::vector<std::string>& sets) {
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key.path=value, got \"" + s + "\"");
        const std::string path = s.substr(0, eq), raw = s.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::parse_error&) {
            value = raw;
        }
        json* node = &config;
        std::size_t start = 0;
        for (;;) {
            const auto dot = path.find('.', start);
            const std::string seg = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (seg.empty()) throw ConfigError("--set: empty segment in \"" + path + "\"");
            if (node->is_array()) {
                std::size_t idx = 0;
                try {
                    idx = std::stoul(seg);
                } catch (const std::exception&) {
                    throw ConfigError("--set: \"" + seg + "\" indexes an array but is not a number");
                }
                if (idx >= node->size()) throw ConfigError("--set: index " + seg + " out of range in \"" + path + "\"");
                node = &(*node)[idx];
            } else {
                if (!node->is_object() && !node->is_null())
                    throw ConfigError("--set: \"" + seg + "\" descends into a scalar in \"" + path + "\"");
                node = &(*node)[seg];
            }
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        *node = value;
    }
    return config;
}

// ------------------------------------------------------------ jobs

json run_density_job(const json& config, bool timing) {
    const auto t0 = std::chrono::steady_clock::now();
    Computed c = compute(config);
    const std::string path = path_of(config);
    json report;
    report["command"] = "density";
    report["mode"] = c.mode;
    report["config"] = config;
    if (c.grid) {
        json g = grid_report(*c.grid);
        for (auto it = g.begin(); it != g.end(); ++it) report[it.key()] = it.value();
        write_file(path + ".csv", c.grid->to_csv());
        json full = report;
        full["values"] = c.grid->values;
        report = std::move(full);
    } else {
        write_file(path + ".csv", c.csv);
    }
    for (auto it = c.extra.begin(); it != c.extra.end(); ++it) report[it.key()] = it.value();
    report["files"] = {{"csv", path + ".csv"}, {"json", path + ".json"}};
    if (timing) report["runtime_seconds"] = seconds_since(t0);
    write_file(path + ".json", report.dump(2) + "\n");
    return report;
}

json run_mc_job(const json& config, bool timing, bool& thresholds_met) {
    const auto t0 = std::chrono::steady_clock::now();
    const json& mc = need(config, "mc", "config");
    const std::size_t N = count(need(mc, "N", "mc"), "mc.N");
    const json& seed_j = need(mc, "seed", "mc");
    if (!seed_j.is_number_unsigned() && !(seed_j.is_number_integer() && seed_j.get<long long>() >= 0))
        bad("mc.seed", "expected a nonnegative integer");
    const std::uint64_t seed = seed_j.get<std::uint64_t>();
    const double max_ks = mc.contains("max_ks") ? num(mc["max_ks"], "mc.max_ks") : 0.005;
    const double max_sup = mc.contains("max_sup") ? num(mc["max_sup"], "mc.max_sup") : kInf;
    const double max_l1 = mc.contains("max_l1") ? num(mc["max_l1"], "mc.max_l1") : kInf;

    json density_report = run_density_job(config, false);
    Computed c = compute(config);
    if (!c.grid) bad("mode", "mc-check needs a gridded density (area mode has none)");

    // Samples come from the base law unless mc.sampler names another one.
    Base sampling = c.base;
    if (mc.contains("sampler")) {
        json alt = config;
        alt["base_density"] = mc["sampler"];
        sampling = build_base(alt);
        if (sampling.dim != c.base.dim) bad("mc.sampler", "dimension does not match base_density");
    }
    if (!sampling.sampler) bad("mc", "base_density has no sampler (expression densities cannot be sampled)");
    MapExpr phi = c.phi ? *c.phi : identity_map(sampling.sample_map ? sampling.sample_map->output_dim() : c.base.dim);
    if (sampling.sample_map) phi = c.phi ? compose(*c.phi, *sampling.sample_map) : *sampling.sample_map;
    const SampleBatch batch = push_samples(*sampling.sampler, phi, N, seed);

    const HistogramComparison h = histogram_compare(*c.grid, batch);
    std::optional<double> ks;
    if (batch.dim == 1 && c.grid->dim() == 1 && c.grid->reference.kind == ReferenceKind::Lebesgue) {
        if (c.mode == "catalog" && c.base.univariate) {
            const auto& m = *c.base.univariate;
            ks = ks_distance(batch, [&m](double t) { return m.cdf(t); });
        } else {
            const GridDensity& g = *c.grid;
            ks = ks_distance(batch, [&g](double t) { return g.cdf(t); });
        }
    }
    json report = comparison_report(batch, h, ks ? &*ks : nullptr);
    report["command"] = "mc-check";
    report["mode"] = c.mode;
    report["config"] = config;
    report["domain_errors"] = batch.domain_errors;
    report["bins"] = {{"shape", c.grid->shape}, {"box", {{"lo", c.grid->box.lo}, {"hi", c.grid->box.hi}}}};
    report["ks_cdf"] = !ks ? "none" : (c.mode == "catalog" && c.base.univariate ? "closed-form" : "grid");
    report["mass_in_box"] = density_report["mass_in_box"];
    report["thresholds"] = {{"max_ks", max_ks},
                            {"max_sup", std::isfinite(max_sup) ? json(max_sup) : json(nullptr)},
                            {"max_l1", std::isfinite(max_l1) ? json(max_l1) : json(nullptr)}};
    thresholds_met = (!ks || *ks <= max_ks) && h.sup_error <= max_sup && h.l1_error <= max_l1;
    report["pass"] = thresholds_met;
    if (timing) report["runtime_seconds"] = seconds_since(t0);
    const std::string path = path_of(config) + ".mc.json";
    report["files"] = {{"report", path}};
    write_file(path, report.dump(2) + "\n");
    return report;
}

// ------------------------------------------------------------ command line

namespace {

json load_config(const std::string& file, const std::vector<std::string>& sets) {
    std::ifstream f(file);
    if (!f) throw ConfigError("cannot open config file " + file);
    json cfg;
    try {
        cfg = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError(file + ": " + e.what());
    }
    return apply_overrides(std::move(cfg), sets);
}

std::vector<double> parse_list(const std::string& s, const char* what) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError(std::string(what) + ": \"" + item + "\" is not a number");
        }
    }
    if (out.empty()) throw ConfigError(std::string(what) + ": empty list");
    return out;
}

int fiber_command(const std::string& map_src, std::size_t k, const std::string& y_s, const std::string& lo_s,
                  const std::string& hi_s, std::size_t resolution, const std::string& out_path, std::ostream& out,
                  std::ostream& err) {
    const auto y = parse_list(y_s, "--y");
    const std::size_t n = y.size();
    MapExpr phi = [&] {
        try {
            return parse_map(map_src, k, n);
        } catch (const Error& e) {
            throw ConfigError(std::string("--map: ") + e.what());
        }
    }();
    const Box box(parse_list(lo_s, "--lo"), parse_list(hi_s, "--hi"));
    if (box.dim() != k) throw ConfigError("--lo/--hi must have k=" + std::to_string(k) + " entries");
    const FiberQuadrature q = fiber_quadrature_levelset(phi, y, box, resolution);
    std::string csv;
    for (std::size_t a = 0; a < k; ++a) csv += "x" + std::to_string(a + 1) + ",";
    csv += "weight\n";
    if (q.size() == 0) csv += "# EmptyFiber: no grid simplex meets the level set inside the box\n";
    for (std::size_t i = 0; i < q.size(); ++i) {
        for (double v : q.nodes[i]) csv += format_double(v) + ",";
        csv += format_double(q.weights[i]) + "\n";
    }
    if (out_path.empty()) {
        out << csv;
    } else {
        write_file(out_path, csv);
    }
    err << "fiber: " << q.size() << " nodes, total weight " << format_double(q.total_weight()) << "\n";
    return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"coarea: pushforward densities via the area and coarea formulas"};
    app.require_subcommand(1);
    bool timing = false;
    app.add_flag("--timing", timing, "Include runtime in reports");

    std::string config_file, model_json, out_prefix;
    std::vector<std::string> sets;
    auto* density = app.add_subcommand("density", "Compute a pushforward density from a JSON job");
    density->add_option("--config", config_file, "Job file")->required();
    density->add_option("--set", sets, "Override key.path=value (repeatable)");

    auto* catalog = app.add_subcommand("catalog", "Tabulate a closed-form density");
    catalog->add_option("--config", config_file, "Job file (mode forced to catalog)");
    catalog->add_option("--model", model_json, R"(Model descriptor, e.g. {"name":"chi2","k":2})");
    double lo = 0, hi = 0;
    std::size_t resolution = 0;
    catalog->add_option("--lo", lo, "Lower end of the grid");
    catalog->add_option("--hi", hi, "Upper end of the grid");
    catalog->add_option("--resolution", resolution, "Grid cells");
    catalog->add_option("--out", out_prefix, "Output path prefix");
    catalog->add_option("--set", sets, "Override key.path=value (repeatable)");
    // Short form: catalog chi2 --k 3 --grid 0,20,200 --out f
    std::string model_name, grid_s;
    std::map<std::string, double> params;
    catalog->add_option("name", model_name, "Model name (normal, uniform, chi2, ncchi2, student_t)");
    for (const char* p : {"k", "lambda", "mean", "sd", "a", "b"})
        catalog->add_option_function<double>(std::string("--") + p, [&params, p](double v) { params[p] = v; },
                                              std::string("Model parameter ") + p);
    catalog->add_option("--grid", grid_s, "lo,hi,resolution");

    auto* mc = app.add_subcommand("mc-check", "Compare a computed density against pushed samples");
    mc->add_option("--config", config_file, "Job file with an mc block")->required();
    mc->add_option("--set", sets, "Override key.path=value (repeatable)");

    std::string map_src, y_s, lo_s, hi_s, fiber_out;
    std::size_t k = 0, fiber_res = 256;
    auto* fiber = app.add_subcommand("fiber", "Dump the level-set quadrature of phi^{-1}(y)");
    fiber->add_option("--map", map_src, "Map, components separated by ';'")->required();
    fiber->add_option("--k", k, "Input dimension")->required();
    fiber->add_option("--y", y_s, "Level, comma separated")->required();
    fiber->add_option("--lo", lo_s, "Box lower corner, comma separated")->required();
    fiber->add_option("--hi", hi_s, "Box upper corner, comma separated")->required();
    fiber->add_option("--resolution", fiber_res, "Cells per axis");
    fiber->add_option("--out", fiber_out, "CSV file (stdout when absent)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    }

    const auto t0 = std::chrono::steady_clock::now();
    try {
        if (*fiber) return fiber_command(map_src, k, y_s, lo_s, hi_s, fiber_res, fiber_out, out, err);
        if (*catalog) {
            json cfg;
            if (!config_file.empty()) {
                cfg = load_config(config_file, {});
            } else {
                if (!grid_s.empty()) {
                    const auto g = parse_list(grid_s, "--grid");
                    if (g.size() != 3 || g[2] < 1 || g[2] != std::floor(g[2]))
                        throw ConfigError("--grid expects lo,hi,resolution");
                    lo = g[0];
                    hi = g[1];
                    resolution = std::size_t(g[2]);
                }
                if (!model_name.empty() && !model_json.empty())
                    throw ConfigError("give a model name or --model, not both");
                if ((model_json.empty() && model_name.empty()) || out_prefix.empty() || resolution == 0)
                    throw ConfigError("catalog needs --config, or a model (name or --model) with a grid and --out");
                if (!model_name.empty()) {
                    json m = {{"name", model_name}};
                    for (const auto& [key, v] : params) m[key] = v;
                    cfg["base_density"]["model"] = m;
                } else {
                    try {
                        cfg["base_density"]["model"] = json::parse(model_json);
                    } catch (const json::parse_error& e) {
                        throw ConfigError(std::string("--model: ") + e.what());
                    }
                }
                cfg["output"] = {{"box", {{"lo", {lo}}, {"hi", {hi}}}}, {"resolution", resolution}, {"path", out_prefix}};
            }
            cfg["mode"] = "catalog";
            if (!out_prefix.empty()) cfg["output"]["path"] = out_prefix;
            cfg = apply_overrides(std::move(cfg), sets);
            const json r = run_density_job(cfg, timing);
            out << r["files"]["csv"].get<std::string>() << "\n";
        } else if (*density) {
            const json r = run_density_job(load_config(config_file, sets), timing);
            out << r["files"]["csv"].get<std::string>() << "\n";
        } else {
            bool met = false;
            const json r = run_mc_job(load_config(config_file, sets), timing, met);
            out << r.dump(2) << "\n";
            err << "runtime " << seconds_since(t0) << " s\n";
            return met ? kOk : kThresholdViolation;
        }
        err << "runtime " << seconds_since(t0) << " s\n";
        return kOk;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const SyntaxError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const UnknownVariable& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const ArityError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const Error& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kNumericFailure;
    } catch (const json::exception& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    }
}

}  // namespace coarea::cli
