#include "doctest.h"

#include "coarea/catalog.hpp"
#include "coarea/errors.hpp"
#include "coarea/quadrature.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/non_central_chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/bessel.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <numbers>
#include <random>

using namespace coarea;

namespace {

const double kPi = std::numbers::pi;
const double kInf = std::numeric_limits<double>::infinity();

double rel_err(double a, double b) { return std::fabs(a - b) / std::max(std::fabs(b), 1e-300); }

}  // namespace

TEST_CASE("gamma_fn examples and accuracy") {
    CHECK(gamma_fn(0.5) == doctest::Approx(std::sqrt(kPi)).epsilon(1e-15).scale(0));
    CHECK(gamma_fn(5) == 24.0);
    CHECK(gamma_fn(1.5) == doctest::Approx(std::sqrt(kPi) / 2).epsilon(1e-15).scale(0));
    double worst = 0.0;
    for (double r = 1e-3; r <= 170; r *= 1.07) worst = std::max(worst, rel_err(gamma_fn(r), boost::math::tgamma(r)));
    CHECK(worst <= 1e-12);
    CHECK_THROWS_AS(gamma_fn(171), OverflowError);
    CHECK_THROWS_AS(gamma_fn(0), DomainError);
    CHECK(log_gamma(500.5) == doctest::Approx(boost::math::lgamma(500.5)).epsilon(1e-14).scale(0));
    CHECK_THROWS_AS(log_gamma(-1), DomainError);
}

TEST_CASE("bessel_i examples") {
    CHECK(bessel_i(0, 0) == 1.0);
    CHECK(bessel_i(0.5, 1) == doctest::Approx(std::sqrt(2 / kPi) * std::sinh(1.0)).epsilon(1e-14).scale(0));
    // Reference series, 30 terms.
    double ref = 0.0;
    for (int j = 0; j < 30; ++j) ref += 1.0 / (std::tgamma(j + 1.0) * std::tgamma(j + 2.0));
    CHECK(bessel_i(1, 2) == doctest::Approx(ref).epsilon(1e-14).scale(0));
    CHECK(bessel_i(1, 2) == doctest::Approx(1.590637).epsilon(1e-6).scale(0));
    CHECK(bessel_i(-0.5, 3) == doctest::Approx(std::sqrt(2 / (kPi * 3)) * std::cosh(3.0)).epsilon(1e-14).scale(0));
    CHECK_THROWS_AS(bessel_i(0, -1), DomainError);
    CHECK_THROWS_AS(bessel_i(-1, 1), DomainError);
}

TEST_CASE("bessel_i agrees with Boost across both regimes") {
    double worst = 0.0;
    for (double nu : {0.0, 0.5, 1.0, 1.5, 2.5, 4.0, 7.5, 20.0})
        for (double y = 0.01; y < 700; y *= 1.13) {
            const double ours = bessel_i(nu, y);
            const double theirs = boost::math::cyl_bessel_i(nu, y);
            if (theirs == 0.0 || !std::isfinite(theirs)) continue;
            worst = std::max(worst, rel_err(ours, theirs));
        }
    CHECK(worst < 1e-12);
    // Scaled form stays finite where I_nu overflows.
    CHECK(bessel_i_scaled(1, 1e5) == doctest::Approx(1 / std::sqrt(2 * kPi * 1e5)).epsilon(1e-5).scale(0));
    CHECK(bessel_i_scaled(30, 40) == doctest::Approx(boost::math::cyl_bessel_i(30, 40) * std::exp(-40.0)).epsilon(1e-11).scale(0));
}

TEST_CASE("bessel_i matches its integral representation") {
    for (double nu : {0.0, 0.5, 1.0, 1.5, 3.0})
        for (double y : {0.5, 5.0, 20.0, 45.0}) {
            const double integral =
                integrate([&](double t) { return std::exp(y * (std::cos(t) - 1)) * std::pow(std::sin(t), 2 * nu); }, 0,
                          kPi)
                    .value;
            const double rep = std::pow(y / 2, nu) / (std::sqrt(kPi) * std::tgamma(nu + 0.5)) * integral;
            INFO("nu=", nu, " y=", y);
            CHECK(rel_err(bessel_i_scaled(nu, y), rep) < 1e-11);
        }
}

TEST_CASE("chi2_pdf examples and oracle") {
    CHECK(std::fabs(chi2_pdf(2, 2) - 0.5 * std::exp(-1.0)) < 1e-15);
    CHECK(std::fabs(chi2_pdf(2, 2) - 0.183940) < 1e-6);
    CHECK(chi2_pdf(1, 1) == doctest::Approx(std::exp(-0.5) / std::sqrt(2 * kPi)).epsilon(1e-14).scale(0));
    CHECK(chi2_pdf(4, 1e-300) < 1e-299);
    CHECK(chi2_pdf(3, 0) == 0.0);
    CHECK(chi2_pdf(3, -1) == 0.0);
    for (int k = 1; k <= 12; ++k)
        for (double y = 0.05; y < 60; y += 0.37)
            CHECK(rel_err(chi2_pdf(k, y), boost::math::pdf(boost::math::chi_squared(k), y)) < 1e-12);
}

TEST_CASE("noncentral_chi2_pdf examples") {
    CHECK(std::fabs(noncentral_chi2_pdf(3, 1e-8, 2) - chi2_pdf(3, 2)) < 1e-4);
    CHECK(noncentral_chi2_pdf(3, 1e-11, 2) == chi2_pdf(3, 2));
    CHECK(noncentral_chi2_pdf(2, 1, 1) ==
          doctest::Approx(0.5 * std::exp(-1.0) * boost::math::cyl_bessel_i(0, 1.0)).epsilon(1e-14).scale(0));
    CHECK(std::fabs(noncentral_chi2_pdf(2, 1, 1) - 0.232880) < 1e-6);
    for (int k : {3, 4, 7}) CHECK(noncentral_chi2_pdf(k, 2.0, 1e-12) < 1e-5);
    CHECK(noncentral_chi2_pdf(3, 2.0, 0) == 0.0);
    CHECK_THROWS_AS(noncentral_chi2_pdf(3, -1, 1), DomainError);
}

TEST_CASE("noncentral_chi2_pdf matches Boost and integrates to one") {
    for (int k : {1, 2, 3, 5, 10})
        for (double lambda : {0.5, 1.0, 4.0, 30.0, 200.0})
            for (double y = 0.1; y < 400; y *= 1.4) {
                const double theirs = boost::math::pdf(boost::math::non_central_chi_squared(k, lambda), y);
                if (theirs < 1e-250) continue;
                INFO("k=", k, " lambda=", lambda, " y=", y);
                CHECK(rel_err(noncentral_chi2_pdf(k, lambda, y), theirs) < 1e-9);
            }
    for (int k : {1, 2, 5})
        for (double lambda : {0.5, 1.0, 4.0}) {
            const auto r = integrate_pieces([&](double y) { return noncentral_chi2_pdf(k, lambda, y); },
                                            {0.0, 1.0, 10.0, kInf});
            INFO("k=", k, " lambda=", lambda);
            CHECK(std::fabs(r.value - 1.0) < 1e-8);
        }
}

TEST_CASE("student_t_pdf examples and oracle") {
    CHECK(std::fabs(student_t_pdf(1, 0) - 1 / kPi) < 1e-15);
    CHECK(student_t_pdf(2, 1) ==
          doctest::Approx(std::tgamma(1.5) / (std::sqrt(2 * kPi) * std::tgamma(1.0)) * std::pow(1.5, -1.5)).epsilon(1e-14).scale(0));
    CHECK(std::fabs(student_t_pdf(2, 1) - 0.192450) < 1e-6);
    CHECK(std::fabs(student_t_pdf(1000, 0) - 1 / std::sqrt(2 * kPi)) < 1e-3);
    for (int k : {1, 2, 3, 5, 30, 1000})
        for (double y = -30; y <= 30; y += 0.77)
            CHECK(rel_err(student_t_pdf(k, y), boost::math::pdf(boost::math::students_t(k), y)) < 1e-12);
}

TEST_CASE("univariate models: cdf limits, monotonicity and derivative") {
    const std::vector<UnivariateModel> models = {normal_model(),        normal_model(1.5, 0.5), uniform_model(0, 1),
                                                 chi2_model(1),         chi2_model(3),          noncentral_chi2_model(3, 2),
                                                 student_t_model(1),    student_t_model(5)};
    for (const auto& m : models) {
        INFO(m.descriptor().dump());
        CHECK(m.cdf(-1e6) == doctest::Approx(0.0).epsilon(1e-6));
        CHECK(std::fabs(m.cdf(1e6) - 1.0) < 1e-6);
        double prev = -1.0;
        for (double t = -20; t <= 40; t += 0.01) {
            const double F = m.cdf(t);
            CHECK(F >= prev);
            prev = F;
        }
        const double h = 1e-5;
        for (double t = -4.03; t <= 9; t += 0.29) {
            if (m.pdf(t - h) == 0.0 || m.pdf(t + h) == 0.0) continue;  // across a support edge
            const double fd = (m.cdf(t + h) - m.cdf(t - h)) / (2 * h);
            CHECK(std::fabs(fd - m.pdf(t)) < 1e-5);
        }
    }
}

TEST_CASE("model CDFs agree with Boost") {
    auto chi3 = chi2_model(3);
    auto nc = noncentral_chi2_model(3, 2);
    auto t5 = student_t_model(5);
    auto t1 = student_t_model(1);
    for (double y = 0.01; y < 60; y *= 1.3) {
        CHECK(std::fabs(chi3.cdf(y) - boost::math::cdf(boost::math::chi_squared(3), y)) < 1e-10);
        CHECK(std::fabs(nc.cdf(y) - boost::math::cdf(boost::math::non_central_chi_squared(3, 2), y)) < 1e-10);
    }
    for (double y = -50; y < 50; y += 0.9) {
        CHECK(std::fabs(t5.cdf(y) - boost::math::cdf(boost::math::students_t(5), y)) < 1e-9);
        CHECK(std::fabs(t1.cdf(y) - boost::math::cdf(boost::math::students_t(1), y)) < 1e-9);
    }
}

TEST_CASE("model descriptors round trip") {
    for (const char* src : {R"({"name":"normal","mean":1,"sd":2})", R"({"name":"uniform","a":-1,"b":3})",
                            R"({"name":"chi2","k":4})", R"({"name":"ncchi2","k":2,"lambda":1.5})",
                            R"({"name":"student_t","k":3})"}) {
        auto m = model_from_json(nlohmann::json::parse(src));
        auto again = model_from_json(m.descriptor());
        CHECK(again.pdf(0.7) == m.pdf(0.7));
    }
    CHECK_THROWS_AS(model_from_json(nlohmann::json::parse(R"({"name":"cauchy"})")), ConfigError);
    CHECK_THROWS_AS(model_from_json(nlohmann::json::parse(R"({"name":"chi2"})")), ConfigError);
    CHECK_THROWS_AS(model_from_json(nlohmann::json::parse(R"({"name":"chi2","k":2.5})")), ConfigError);
    CHECK_THROWS_AS(model_from_json(nlohmann::json::parse(R"({"name":"uniform","a":1,"b":0})")), ConfigError);
}

TEST_CASE("order statistics examples") {
    auto u = uniform_model(0, 1);
    CHECK(order_stat_pdf(u, 3, 3, 0.5) == 0.75);
    auto n = normal_model();
    CHECK(order_stat_pdf(n, 1, 1, 0.3) == n.pdf(0.3));
    CHECK(order_stat_pdf(u, 2, 1, 0.25) == doctest::Approx(1.5).epsilon(1e-15).scale(0));
    CHECK_THROWS_AS(order_stat_pdf(u, 3, 4, 0.5), IndexError);
    CHECK_THROWS_AS(order_stat_pdf(u, 3, 0, 0.5), IndexError);

    CHECK(order_stat_pair_pdf(u, 2, 1, 2, 0.3, 0.7) == 2.0);
    CHECK(order_stat_pair_pdf(n, 4, 1, 3, 0.8, 0.2) == 0.0);
    CHECK(order_stat_pair_pdf(u, 3, 1, 3, 0.2, 0.8) == doctest::Approx(3.6).epsilon(1e-15).scale(0));
    CHECK_THROWS_AS(order_stat_pair_pdf(u, 3, 2, 2, 0.1, 0.2), IndexError);

    const double y3[] = {0.1, 0.5, 0.9};
    CHECK(order_stat_joint_pdf(u, 3, y3) == 6.0);
    const double bad[] = {0.1, 0.9, 0.5};
    CHECK(order_stat_joint_pdf(u, 3, bad) == 0.0);
    const double y2[] = {0.5, 1.5};
    CHECK(order_stat_joint_pdf({uniform_model(0, 1), uniform_model(0, 2)}, y2) == 0.5);
    const double y9[] = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    CHECK_THROWS_AS(order_stat_joint_pdf(std::vector<UnivariateModel>(9, u), y9), FactorialOverflow);
}

TEST_CASE("order statistic densities integrate to one") {
    for (const auto& m : {uniform_model(0, 1), normal_model(), chi2_model(3)}) {
        const Box b = m.box();
        std::vector<double> pts = {b.lo[0], b.hi[0]};
        for (int k = 1; k <= 10; ++k)
            for (int i = 1; i <= k; ++i) {
                const auto r = integrate_pieces([&](double y) { return order_stat_pdf(m, k, i, y); }, pts);
                INFO(m.name(), " k=", k, " i=", i);
                CHECK(std::fabs(r.value - 1.0) < 1e-8);
            }
    }
}

TEST_CASE("pair density marginalizes to the single order statistic") {
    for (const auto& m : {uniform_model(0, 1), normal_model()}) {
        const Box b = m.box();
        for (int k = 2; k <= 5; ++k)
            for (int i = 1; i < k; ++i)
                for (int j = i + 1; j <= k; ++j)
                    for (double y1 : {-0.7, 0.2, 0.45, 0.8}) {
                        if (m.pdf(y1) == 0.0) continue;
                        const double marg =
                            integrate([&](double y2) { return order_stat_pair_pdf(m, k, i, j, y1, y2); }, y1,
                                      b.hi[0])
                                .value;
                        INFO(m.name(), " k=", k, " i=", i, " j=", j, " y1=", y1);
                        CHECK(std::fabs(marg - order_stat_pdf(m, k, i, y1)) < 1e-6);
                    }
    }
}

TEST_CASE("joint order-statistic density has unit mass on the ordered region") {
    // Monte Carlo over the box [lo, hi]^k; only ordered points contribute.
    for (const auto& m : {uniform_model(0, 1), normal_model()}) {
        const double lo = m.name() == "uniform" ? 0.0 : -5.0, hi = m.name() == "uniform" ? 1.0 : 5.0;
        for (int k = 1; k <= 4; ++k) {
            PhiloxStream g(20240 + k, 3);
            const int N = 2'000'000;
            double acc = 0.0;
            std::vector<double> y(k);
            for (int s = 0; s < N; ++s) {
                for (auto& v : y) v = lo + (hi - lo) * g.uniform();
                std::sort(y.begin(), y.end());  // the density vanishes off the ordered region
                acc += order_stat_joint_pdf(m, k, y);
            }
            double tgamma_k = std::tgamma(k + 1.0);
            const double est = std::pow(hi - lo, k) / tgamma_k * acc / N;
            INFO(m.name(), " k=", k);
            CHECK(std::fabs(est - 1.0) < 1e-2);
        }
    }
}

TEST_CASE("degenerate normal examples") {
    auto full = degenerate_normal(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity());
    CHECK(full.m == 2);
    const double o[] = {0, 0};
    CHECK(full.pdf_on_carrier(o).value == doctest::Approx(1 / (2 * kPi)).epsilon(1e-15).scale(0));

    Eigen::Matrix2d S;
    S << 1, 1, 1, 1;
    auto d = degenerate_normal(Eigen::Vector2d::Zero(), S);
    CHECK(d.m == 1);
    CHECK(d.sqrt_pseudo_det() == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15).scale(0));
    CHECK(std::fabs(d.pdf_on_carrier(o).value - 0.282095) < 1e-6);
    CHECK(d.pdf_on_carrier(o).value == doctest::Approx(1 / (std::sqrt(2 * kPi) * std::sqrt(2.0))).epsilon(1e-14).scale(0));
    CHECK(d.pdf_on_carrier(o).flag == DensityFlag::None);
    const double off[] = {1, -1};
    CHECK(d.pdf_on_carrier(off).value == 0.0);
    CHECK(d.pdf_on_carrier(off).flag == DensityFlag::OffCarrier);

    Eigen::Matrix2d neg;
    neg << 1, 2, 2, 1;
    CHECK_THROWS_AS(degenerate_normal(Eigen::Vector2d::Zero(), neg), NotPSD);
}

TEST_CASE("degenerate normal invariants") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> z;
    for (int t = 0; t < 30; ++t) {
        const int k = 2 + t % 3, r = 1 + t % k;
        Eigen::MatrixXd B(k, r);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < r; ++j) B(i, j) = z(rng);
        Eigen::VectorXd a(k);
        for (int i = 0; i < k; ++i) a(i) = z(rng);
        auto d = degenerate_normal(a, B * B.transpose());
        REQUIRE(d.m == static_cast<std::size_t>(r));
        CHECK((d.P.transpose() * d.P - Eigen::MatrixXd::Identity(r, r)).cwiseAbs().maxCoeff() < 1e-10);
        // factor() maps R^m onto the carrier directions.
        CHECK((d.factor() * d.factor().transpose() - d.Sigma).norm() < 1e-9 * d.Sigma.norm());
        Eigen::VectorXd u(r);
        for (int i = 0; i < r; ++i) u(i) = z(rng);
        const Eigen::VectorXd x = d.factor() * u + a;
        CHECK(d.carrier().residual(std::span<const double>(x.data(), k)) < 1e-10);
        CHECK(d.pdf_on_carrier(std::span<const double>(x.data(), k)).flag == DensityFlag::None);
    }

    // Carrier density has unit mass on the subspace (m = 1 and m = 2 in R^3).
    Eigen::Matrix3d S1 = Eigen::Vector3d(1, 2, -1) * Eigen::Vector3d(1, 2, -1).transpose();
    auto d1 = degenerate_normal(Eigen::Vector3d(0.5, 0, 1), S1);
    const double L1 = 12 * std::sqrt(d1.lambdas(0));
    double mass = integrate([&](double u) {
                      return d1.pdf_on_carrier(d1.carrier().embed(std::vector<double>{u})).value;
                  },
                  -L1, L1)
                      .value;
    CHECK(std::fabs(mass - 1.0) < 1e-4);

    Eigen::MatrixXd B(3, 2);
    B << 1, 0, 0.5, 2, -1, 1;
    auto d2 = degenerate_normal(Eigen::Vector3d(0, 1, 0), B * B.transpose());
    REQUIRE(d2.m == 2);
    const int res = 400;
    const double L0 = 9 * std::sqrt(d2.lambdas(0)), L1b = 9 * std::sqrt(d2.lambdas(1));
    double acc = 0.0;
    for (int i = 0; i < res; ++i)
        for (int j = 0; j < res; ++j) {
            std::vector<double> u = {-L0 + 2 * L0 * (i + 0.5) / res, -L1b + 2 * L1b * (j + 0.5) / res};
            acc += d2.pdf_on_carrier(d2.carrier().embed(u)).value;
        }
    CHECK(std::fabs(acc * (2 * L0 / res) * (2 * L1b / res) - 1.0) < 1e-4);
}

TEST_CASE("full-rank degenerate normal equals the usual formula") {
    Eigen::Matrix3d S;
    S << 2, 0.3, -0.4, 0.3, 1, 0.2, -0.4, 0.2, 0.7;
    Eigen::Vector3d a(1, -1, 0.5);
    auto d = degenerate_normal(a, S);
    REQUIRE(d.m == 3);
    for (auto x : {Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(1, -1, 0.5), Eigen::Vector3d(2, 0.3, -1)}) {
        const Eigen::Vector3d r = x - a;
        const double ref = std::exp(-0.5 * r.dot(S.inverse() * r)) / (std::pow(2 * kPi, 1.5) * std::sqrt(S.determinant()));
        CHECK(d.pdf_on_carrier(std::span<const double>(x.data(), 3)).value == doctest::Approx(ref).epsilon(1e-12).scale(0));
    }
    CHECK(d.density().reference().kind == ReferenceKind::Lebesgue);
}

TEST_CASE("degenerate normal sampler moments") {
    Eigen::Matrix2d S;
    S << 1, 1, 1, 1;
    Eigen::Vector2d a(0.5, -1);
    auto d = degenerate_normal(a, S);
    PhiloxStream g(77);
    const int N = 1'000'000;
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d second = Eigen::Matrix2d::Zero();
    for (int i = 0; i < N; ++i) {
        const Point p = d.sample(g);
        Eigen::Vector2d v(p[0], p[1]);
        mean += v;
        second += (v - a) * (v - a).transpose();
    }
    mean /= N;
    const Eigen::Matrix2d cov = second / N - (mean - a) * (mean - a).transpose();
    for (int i = 0; i < 2; ++i) CHECK(std::fabs(mean(i) - a(i)) < 3 * std::sqrt(S(i, i) / N));
    CHECK((cov - S).norm() < 0.05 * S.norm());
    CHECK((mean(0) - a(0)) == doctest::Approx(mean(1) - a(1)).epsilon(1e-6).scale(0));  // stays on the carrier
}
