#include "doctest.h"

#include "coarea/cli.hpp"
#include "coarea/errors.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch() {
    const fs::path d = fs::temp_directory_path() / "coarea_test_cli";
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream s;
    s << f.rdbuf();
    return s.str();
}

fs::path write_config(const std::string& name, const json& j) {
    const fs::path p = scratch() / (name + ".cfg.json");
    std::ofstream(p) << j.dump(2);
    return p;
}

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "coarea");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = coarea::cli::run(int(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

json sum_config() {
    return {{"mode", "coarea"},
            {"base_density", {{"model", {{"name", "normal"}}}, {"iid", 2}}},
            {"map", "x1+x2"},
            {"output",
             {{"box", {{"lo", {-6}}, {"hi", {6}}}},
              {"resolution", 121},
              {"fiber_resolution", 256},
              {"path", (scratch() / "sum").string()}}},
            {"mc", {{"N", 200000}, {"seed", 5}}}};
}

// Value of the row whose first column is y in a "y1,value" CSV.
double csv_value_at(const std::string& csv, double y) {
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    double best = NAN, dist = INFINITY;
    while (std::getline(in, line)) {
        const auto comma = line.find(',');
        const double t = std::stod(line.substr(0, comma)), v = std::stod(line.substr(comma + 1));
        if (std::fabs(t - y) < dist) {
            dist = std::fabs(t - y);
            best = v;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("apply_overrides") {
    json c = {{"a", {{"b", 1}}}, {"list", {1, 2, 3}}};
    c = coarea::cli::apply_overrides(c, {"a.b=2.5", "a.c=hello", "list.1={\"x\":true}", "new.deep=[1,2]"});
    CHECK(c["a"]["b"] == 2.5);
    CHECK(c["a"]["c"] == "hello");
    CHECK(c["list"][1]["x"] == true);
    CHECK(c["new"]["deep"] == json({1, 2}));
    CHECK_THROWS_AS(coarea::cli::apply_overrides(c, {"novalue"}), coarea::ConfigError);
    CHECK_THROWS_AS(coarea::cli::apply_overrides(c, {"list.9=1"}), coarea::ConfigError);
    CHECK_THROWS_AS(coarea::cli::apply_overrides(c, {"a.b.c=1"}), coarea::ConfigError);
}

TEST_CASE("density job: sum of two normals") {
    const auto cfg = write_config("sum", sum_config());
    const auto r = cli({"density", "--config", cfg.string()});
    REQUIRE(r.code == 0);
    const std::string csv = slurp(scratch() / "sum.csv");
    CHECK(csv.rfind("y1,value\n", 0) == 0);
    CHECK(std::fabs(csv_value_at(csv, 0.0) - 1.0 / (2.0 * std::sqrt(std::numbers::pi))) < 1e-6);
    const json rep = json::parse(slurp(scratch() / "sum.json"));
    CHECK(rep["mode"] == "coarea");
    CHECK(rep["reference_measure"] == "lebesgue:1");
    CHECK(rep["config"] == sum_config());
    CHECK(!rep.contains("runtime_seconds"));
    CHECK(std::fabs(rep["mass_in_box"].get<double>() - 1.0) < 1e-3);

    // Identical bytes on a rerun.
    const std::string json_before = slurp(scratch() / "sum.json");
    REQUIRE(cli({"density", "--config", cfg.string()}).code == 0);
    CHECK(slurp(scratch() / "sum.csv") == csv);
    CHECK(slurp(scratch() / "sum.json") == json_before);
}

TEST_CASE("configuration errors exit with code 2") {
    const auto cfg = write_config("sum", sum_config());
    CHECK(cli({"density", "--config", cfg.string(), "--set", "mode=equal"}).code == 2);
    CHECK(cli({"density", "--config", cfg.string(), "--set", "mode=bogus"}).code == 2);
    CHECK(cli({"density", "--config", cfg.string(), "--set", "map=x1+y"}).code == 2);
    CHECK(cli({"density", "--config", cfg.string(), "--set", "map=x1+"}).code == 2);
    CHECK(cli({"density", "--config", cfg.string(), "--set", "base_density.model.name=nope"}).code == 2);
    CHECK(cli({"density", "--config", cfg.string(), "--set", "output.box.lo=[-1,-1]"}).code == 2);
    CHECK(cli({"density", "--config", (scratch() / "missing.json").string()}).code == 2);
    std::ofstream(scratch() / "broken.json") << "{ not json";
    CHECK(cli({"density", "--config", (scratch() / "broken.json").string()}).code == 2);
    CHECK(cli({"density"}).code == 2);
    CHECK(cli({"nonsense"}).code == 2);
    const auto r = cli({"mc-check", "--config", cfg.string(), "--set", "mc.N=0"});
    CHECK(r.code == 2);
    CHECK(r.err.find("mc.N") != std::string::npos);
}

TEST_CASE("catalog subcommand") {
    const std::string prefix = (scratch() / "chi2").string();
    const auto r = cli({"catalog", "--model", R"({"name":"chi2","k":2})", "--lo", "0", "--hi", "10", "--resolution", "10",
                        "--out", prefix});
    REQUIRE(r.code == 0);
    const std::string csv = slurp(prefix + ".csv");
    // Cell centres 0.5, 1.5, ...; chi2(2) density is exp(-y/2)/2.
    CHECK(std::fabs(csv_value_at(csv, 0.5) - 0.5 * std::exp(-0.25)) < 1e-15);
    CHECK(std::fabs(csv_value_at(csv, 9.5) - 0.5 * std::exp(-4.75)) < 1e-15);
    const json rep = json::parse(slurp(prefix + ".json"));
    CHECK(std::fabs(rep["truncation_mass"].get<double>() - std::exp(-5.0)) < 1e-12);
    // Positional form; k arrives as a double and must still be accepted.
    const std::string short_prefix = (scratch() / "chi2_short").string();
    REQUIRE(cli({"catalog", "chi2", "--k", "2", "--grid", "0,10,10", "--out", short_prefix}).code == 0);
    CHECK(slurp(short_prefix + ".csv") == csv);
    CHECK(cli({"catalog", "chi2", "--k", "2", "--grid", "0,10", "--out", short_prefix}).code == 2);
    CHECK(cli({"catalog", "ncchi2", "--k", "2", "--grid", "0,10,10", "--out", short_prefix}).code == 2);
    CHECK(cli({"catalog", "--model", R"({"name":"chi2"})", "--lo", "0", "--hi", "1", "--resolution", "4", "--out",
               prefix})
              .code == 2);
}

TEST_CASE("fiber subcommand") {
    const std::string out = (scratch() / "circle.csv").string();
    auto r = cli({"fiber", "--map", "x1^2+x2^2", "--k", "2", "--y", "1", "--lo", "-2,-2", "--hi", "2,2", "--resolution",
                  "512", "--out", out});
    REQUIRE(r.code == 0);
    std::istringstream in(slurp(out));
    std::string line;
    std::getline(in, line);
    CHECK(line == "x1,x2,weight");
    double total = 0.0, worst = 0.0;
    while (std::getline(in, line)) {
        double x, y, w;
        char c;
        std::istringstream(line) >> x >> c >> y >> c >> w;
        total += w;
        worst = std::max(worst, std::fabs(std::hypot(x, y) - 1.0));
    }
    CHECK(std::fabs(total - 2 * std::numbers::pi) < 1e-3);
    // Nodes lie on chords of length about h = 4/512.
    CHECK(worst < std::pow(4.0 / 512, 2));

    r = cli({"fiber", "--map", "x1^2+x2^2", "--k", "2", "--y", "-1", "--lo", "-2,-2", "--hi", "2,2"});
    CHECK(r.code == 0);
    CHECK(r.out == "x1,x2,weight\n# EmptyFiber: no grid simplex meets the level set inside the box\n");

    // Three-dimensional fibers are not extracted.
    r = cli({"fiber", "--map", "x1+x2+x3+x4", "--k", "4", "--y", "0", "--lo", "-1,-1,-1,-1", "--hi", "1,1,1,1",
             "--resolution", "8"});
    CHECK(r.code == 3);
    CHECK(r.err.find("fiber dimension") != std::string::npos);
    CHECK(cli({"fiber", "--map", "x1", "--k", "2", "--y", "0", "--lo", "a,b", "--hi", "1,1"}).code == 2);
}

TEST_CASE("mc-check") {
    json c = sum_config();
    c["mode"] = "catalog";
    c["base_density"] = {{"model", {{"name", "chi2"}, {"k", 2}}}};
    c["output"] = {{"box", {{"lo", {0}}, {"hi", {20}}}}, {"resolution", 100}, {"path", (scratch() / "mc_chi2").string()}};
    c["mc"] = {{"N", 1000000}, {"seed", 9}};
    const auto cfg = write_config("mc_chi2", c);
    auto r = cli({"mc-check", "--config", cfg.string()});
    CHECK(r.code == 0);
    const json rep = json::parse(slurp(scratch() / "mc_chi2.mc.json"));
    CHECK(rep["pass"] == true);
    CHECK(rep["ks"].get<double>() < 0.005);
    CHECK(rep["ks_cdf"] == "closed-form");
    CHECK(rep["config"] == c);
    CHECK(rep["seed"] == 9);
    CHECK(rep["generator"] == "philox4x32-10");
    CHECK(json::parse(r.out) == rep);

    // Normal samples against the chi2 density fail.
    r = cli({"mc-check", "--config", cfg.string(), "--set", R"(mc.sampler={"model":{"name":"normal"}})"});
    CHECK(r.code == 4);

    // The squared radius of a standard normal pair is chi2(2).
    json sq = c;
    sq["mode"] = "coarea";
    sq["base_density"] = {{"model", {{"name", "normal"}}}, {"iid", 2}};
    sq["map"] = "x1^2+x2^2";
    sq["output"]["fiber_resolution"] = 512;
    sq["mc"]["max_ks"] = 0.01;
    r = cli({"mc-check", "--config", write_config("mc_sq", sq).string()});
    CHECK(r.code == 0);
}

TEST_CASE("affine and area jobs") {
    json a = {{"mode", "affine"},
              {"base_density", {{"model", {{"name", "normal"}}}, {"iid", 2}}},
              {"affine", {{"A", {{1, 1}, {1, 1}}}, {"y0", {0, 0}}}},
              {"output", {{"box", {{"lo", {-14}}, {"hi", {14}}}}, {"resolution", 280}, {"path", (scratch() / "aff").string()}}},
              {"mc", {{"N", 200000}, {"seed", 3}, {"max_sup", 0.02}}}};
    auto r = cli({"mc-check", "--config", write_config("aff", a).string()});
    CHECK(r.code == 0);
    const json rep = json::parse(slurp(scratch() / "aff.json"));
    CHECK(rep["rank"] == 1);
    CHECK(rep["reference_measure"] == "hausdorff:1");
    // Carrier coordinate sqrt(2)(x1 + x2) has standard deviation 2.
    CHECK(std::fabs(rep["mass_in_box"].get<double>() - 1.0) < 1e-6);

    json area = {{"mode", "area"},
                 {"base_density", {{"model", {{"name", "normal"}}}}},
                 {"map", "x1; x1"},
                 {"output", {{"queries", {{1, 1}, {1, 2}}}, {"path", (scratch() / "area").string()}}}};
    r = cli({"density", "--config", write_config("area", area).string()});
    REQUIRE(r.code == 0);
    CHECK(slurp(scratch() / "area.csv") ==
          "y1,y2,value,off_manifold,preimages\n1,1,0.17109914015610828,0,1\n1,2,0,1,0\n");

    area["output"] = {{"box", {{"lo", {-7}}, {"hi", {7}}}}, {"resolution", 700}, {"path", (scratch() / "area").string()}};
    r = cli({"density", "--config", write_config("area", area).string()});
    REQUIRE(r.code == 0);
    const json arep = json::parse(slurp(scratch() / "area.json"));
    CHECK(std::fabs(arep["mass_in_box"].get<double>() - 1.0) < 1e-4);
    CHECK(arep["reference_measure"] == "hausdorff:1");
}
