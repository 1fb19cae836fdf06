#include "coarea/catalog.hpp"

#include "coarea/errors.hpp"
#include "coarea/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

namespace coarea {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double lgamma_pos(double r) {
#if defined(__GLIBC__)
    int sign = 0;
    return ::lgamma_r(r, &sign);  // reentrant: std::lgamma writes signgam
#else
    return std::lgamma(r);
#endif
}

void require_dof(int k, const char* who) {
    if (k < 1) throw DomainError(std::string(who) + ": degrees of freedom must be >= 1");
}

}  // namespace

// ------------------------------------------------------------ special functions

double gamma_fn(double r) {
    if (!(r > 0.0)) throw DomainError("gamma_fn: r must be positive");
    if (r > 170.0) throw OverflowError("gamma_fn: overflow for r > 170, use log_gamma");
    return std::tgamma(r);
}

double log_gamma(double r) {
    if (!(r > 0.0)) throw DomainError("log_gamma: r must be positive");
    return lgamma_pos(r);
}

namespace {

// sum_j (y/2)^(2j+nu) / (j! Gamma(nu+j+1)) times exp(-y), for moderate y.
double series_scaled(double nu, double y) {
    const double q = 0.25 * y * y;
    double term = std::exp(nu * std::log(0.5 * y) - lgamma_pos(nu + 1.0) - y);
    double sum = term;
    for (int j = 1; j < 10000; ++j) {
        term *= q / (double(j) * (nu + double(j)));
        sum += term;
        if (term < 1e-17 * sum) break;
    }
    return sum;
}

// Same series summed outward from its largest term; no underflow at large y.
double peak_series_scaled(double nu, double y) {
    const double q = 0.25 * y * y;
    const double jstar = std::max(0.0, std::floor(0.5 * (std::sqrt(nu * nu + y * y) - nu) - 1.0));
    const auto j0 = static_cast<long>(jstar);
    const double log_peak = (2.0 * jstar + nu) * std::log(0.5 * y) - lgamma_pos(jstar + 1.0) -
                            lgamma_pos(nu + jstar + 1.0);
    double sum = 1.0;
    double term = 1.0;
    for (long j = j0; j < j0 + 1000000; ++j) {  // upward
        term *= q / (double(j + 1) * (nu + double(j + 1)));
        sum += term;
        if (term < 1e-17 * sum) break;
    }
    term = 1.0;
    for (long j = j0; j > 0; --j) {  // downward
        term *= double(j) * (nu + double(j)) / q;
        sum += term;
        if (term < 1e-17 * sum) break;
    }
    return std::exp(log_peak - y) * sum;
}

// Hankel expansion of exp(-y) I_nu(y); false when it does not reach full
// precision before its terms start to grow.
bool hankel_scaled(double nu, double y, double& out) {
    const double mu = 4.0 * nu * nu;
    double term = 1.0, sum = 1.0;
    for (int k = 1; k < 200; ++k) {
        const double odd = 2.0 * k - 1.0;
        const double next = -term * (mu - odd * odd) / (8.0 * k * y);
        if (std::fabs(next) > std::fabs(term) && k > 1) return false;
        term = next;
        sum += term;
        if (std::fabs(term) < 1e-17 * std::fabs(sum)) {
            out = sum / std::sqrt(2.0 * std::numbers::pi * y);
            return true;
        }
    }
    return false;
}

}  // namespace

double bessel_i_scaled(double nu, double y) {
    if (!(nu > -1.0)) throw DomainError("bessel_i: order must exceed -1");
    if (!(y >= 0.0)) throw DomainError("bessel_i: argument must be nonnegative");
    if (y == 0.0) return nu == 0.0 ? 1.0 : (nu > 0.0 ? 0.0 : kInf);
    if (y <= 30.0) return series_scaled(nu, y);
    double h;
    if (hankel_scaled(nu, y, h)) return h;
    return peak_series_scaled(nu, y);
}

double bessel_i(double nu, double y) {
    const double s = bessel_i_scaled(nu, y);
    if (y <= 30.0) return s * std::exp(y);
    return std::exp(y + std::log(s));
}

// ------------------------------------------------------------ closed forms

double chi2_pdf(int k, double y) {
    require_dof(k, "chi2_pdf");
    if (!(y > 0.0)) return 0.0;
    const double h = 0.5 * k;
    return std::exp((h - 1.0) * std::log(y) - 0.5 * y - h * std::numbers::ln2 - lgamma_pos(h));
}

double noncentral_chi2_pdf(int k, double lambda, double y) {
    require_dof(k, "noncentral_chi2_pdf");
    if (!(lambda >= 0.0)) throw DomainError("noncentral_chi2_pdf: lambda must be nonnegative");
    if (lambda < 1e-10) return chi2_pdf(k, y);
    if (!(y > 0.0)) return 0.0;
    const double z = std::sqrt(lambda * y);
    const double s = bessel_i_scaled(0.5 * k - 1.0, z);
    if (s == 0.0) return 0.0;
    return 0.5 * std::exp(-0.5 * (y + lambda) + z + (0.25 * k - 0.5) * std::log(y / lambda) + std::log(s));
}

double student_t_pdf(int k, double y) {
    require_dof(k, "student_t_pdf");
    const double kk = double(k);
    return std::exp(lgamma_pos(0.5 * (kk + 1.0)) - lgamma_pos(0.5 * kk) - 0.5 * std::log(kk * std::numbers::pi) -
                    0.5 * (kk + 1.0) * std::log1p(y * y / kk));
}

double normal_pdf(double x, double mean, double sd) {
    const double z = (x - mean) / sd;
    return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

// ------------------------------------------------------------ models

UnivariateModel::UnivariateModel(std::string name, nlohmann::json params, RealFn pdf, RealFn cdf,
                                 Sampler sampler, double support_lo, double support_hi, double box_lo,
                                 double box_hi)
    : name_(std::move(name)),
      params_(std::move(params)),
      pdf_(std::move(pdf)),
      cdf_(std::move(cdf)),
      sampler_(std::move(sampler)),
      support_lo_(support_lo),
      support_hi_(support_hi),
      box_lo_(box_lo),
      box_hi_(box_hi) {}

nlohmann::json UnivariateModel::descriptor() const {
    nlohmann::json j = params_;
    j["name"] = name_;
    return j;
}

DensitySpec UnivariateModel::density() const {
    auto pdf = pdf_;
    return DensitySpec::lebesgue(
        1, [pdf](std::span<const double> x) { return pdf(x[0]); }, box());
}

namespace {

// Numerically integrated CDF shared by the copies of a model.
UnivariateModel::RealFn tabulated_cdf(UnivariateModel::RealFn pdf, double lo, double hi,
                                      std::vector<double> breakpoints, double scale) {
    auto table = std::make_shared<NumericCdf>(pdf, lo, hi, std::move(breakpoints), lo, scale);
    return [table](double t) { return (*table)(t); };
}

double chi2_sample(int k, PhiloxStream& g) {
    double s = 0.0;
    for (int i = 0; i < k; ++i) {
        const double z = g.normal();
        s += z * z;
    }
    return s;
}

// Upper end holding all but exp(-x) of a chi-squared(k, lambda) law.
double chi2_upper(int k, double lambda, double x) {
    return k + lambda + 2.0 * std::sqrt((k + 2.0 * lambda) * x) + 2.0 * x;
}

}  // namespace

UnivariateModel normal_model(double mean, double sd) {
    if (!(sd > 0.0) || !std::isfinite(mean)) throw DomainError("normal_model: need finite mean and sd > 0");
    return UnivariateModel(
        "normal", {{"mean", mean}, {"sd", sd}},
        [mean, sd](double x) { return normal_pdf(x, mean, sd); },
        [mean, sd](double x) { return 0.5 * std::erfc(-(x - mean) / (sd * std::numbers::sqrt2)); },
        [mean, sd](PhiloxStream& g) { return mean + sd * g.normal(); }, -kInf, kInf, mean - 10.0 * sd,
        mean + 10.0 * sd);
}

UnivariateModel uniform_model(double a, double b) {
    if (!(a < b) || !std::isfinite(a) || !std::isfinite(b)) throw DomainError("uniform_model: need a < b");
    const double h = 1.0 / (b - a);
    return UnivariateModel(
        "uniform", {{"a", a}, {"b", b}}, [a, b, h](double x) { return x >= a && x < b ? h : 0.0; },
        [a, b](double x) { return x <= a ? 0.0 : (x >= b ? 1.0 : (x - a) / (b - a)); },
        [a, b](PhiloxStream& g) { return a + (b - a) * g.uniform(); }, a, b, a, b);
}

UnivariateModel chi2_model(int k) {
    require_dof(k, "chi2_model");
    const double hi = chi2_upper(k, 0.0, 28.0);
    auto pdf = [k](double y) { return chi2_pdf(k, y); };
    return UnivariateModel("chi2", {{"k", k}}, pdf, tabulated_cdf(pdf, 0.0, hi, {0.0}, 1.0),
                           [k](PhiloxStream& g) { return chi2_sample(k, g); }, 0.0, kInf, 0.0, hi);
}

UnivariateModel noncentral_chi2_model(int k, double lambda) {
    require_dof(k, "noncentral_chi2_model");
    if (!(lambda >= 0.0)) throw DomainError("noncentral_chi2_model: lambda must be nonnegative");
    const double hi = chi2_upper(k, lambda, 28.0);
    const double shift = std::sqrt(lambda);
    auto pdf = [k, lambda](double y) { return noncentral_chi2_pdf(k, lambda, y); };
    return UnivariateModel(
        "ncchi2", {{"k", k}, {"lambda", lambda}}, pdf, tabulated_cdf(pdf, 0.0, hi, {0.0}, 1.0),
        [k, shift](PhiloxStream& g) {
            const double z = g.normal() + shift;
            return z * z + chi2_sample(k - 1, g);
        },
        0.0, kInf, 0.0, hi);
}

UnivariateModel student_t_model(int k) {
    require_dof(k, "student_t_model");
    // Two-sided tail of about 1e-6 from the power-law asymptote of the pdf.
    const double kk = double(k);
    const double c = student_t_pdf(k, 0.0) * std::pow(kk, 0.5 * (kk - 1.0));
    const double L = std::max(40.0, std::pow(2.0 * c / 1e-6, 1.0 / kk));
    auto pdf = [k](double y) { return student_t_pdf(k, y); };
    // Tails beyond +-L are integrated directly.
    auto table = std::make_shared<NumericCdf>(pdf, -L, L, std::vector<double>{}, 0.0, 1.0);
    const double tail = integrate(pdf, -kInf, -L).value;
    auto cdf = [table, tail, pdf, L](double t) {
        if (t < -L) return integrate(pdf, -kInf, t).value;
        if (t > L) return 1.0 - integrate(pdf, t, kInf).value;
        return std::clamp(tail + (*table)(t), 0.0, 1.0);
    };
    return UnivariateModel(
        "student_t", {{"k", k}}, pdf, cdf,
        [k](PhiloxStream& g) {
            const double z = g.normal();
            return z / std::sqrt(chi2_sample(k, g) / double(k));
        },
        -kInf, kInf, -L, L);
}

UnivariateModel model_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("name") || !j["name"].is_string())
        throw ConfigError("model descriptor needs a string field \"name\"");
    const std::string name = j["name"];
    auto num = [&](const char* key, double fallback, bool required) {
        if (!j.contains(key)) {
            if (required) throw ConfigError("model \"" + name + "\" needs field \"" + key + "\"");
            return fallback;
        }
        if (!j[key].is_number()) throw ConfigError("model field \"" + std::string(key) + "\" must be a number");
        return j[key].get<double>();
    };
    auto dof = [&]() {
        const double k = num("k", 0, true);
        if (k != std::floor(k) || k < 1) throw ConfigError("model field \"k\" must be a positive integer");
        return static_cast<int>(k);
    };
    try {
        if (name == "normal") return normal_model(num("mean", 0.0, false), num("sd", 1.0, false));
        if (name == "uniform") return uniform_model(num("a", 0.0, false), num("b", 1.0, false));
        if (name == "chi2") return chi2_model(dof());
        if (name == "ncchi2") return noncentral_chi2_model(dof(), num("lambda", 0.0, true));
        if (name == "student_t") return student_t_model(dof());
    } catch (const DomainError& e) {
        throw ConfigError(std::string("model \"") + name + "\": " + e.what());
    }
    throw ConfigError("unknown model \"" + name + "\" (normal, uniform, chi2, ncchi2, student_t)");
}

// ------------------------------------------------------------ order statistics

namespace {

// Exact in double while the result stays below 2^53.
double binomial(int n, int r) {
    if (r < 0 || r > n) return 0.0;
    r = std::min(r, n - r);
    double c = 1.0;
    for (int i = 0; i < r; ++i) c = c * double(n - i) / double(i + 1);
    return c;
}

void check_index(int k, int i, const char* who) {
    if (k < 1 || i < 1 || i > k)
        throw IndexError(std::string(who) + ": need 1 <= i <= k, got i=" + std::to_string(i) +
                         " k=" + std::to_string(k));
}

double factorial(int k) {
    double f = 1.0;
    for (int i = 2; i <= k; ++i) f *= i;
    return f;
}

}  // namespace

double order_stat_pdf(const UnivariateModel& model, int k, int i, double y) {
    check_index(k, i, "order_stat_pdf");
    const double f = model.pdf(y);
    if (f == 0.0) return 0.0;
    const double F = model.cdf(y);
    // i C(k, i) = k! / ((i-1)! (k-i)!)
    const double coef = double(i) * binomial(k, i);
    return coef * f * std::pow(F, i - 1) * std::pow(1.0 - F, k - i);
}

double order_stat_pair_pdf(const UnivariateModel& model, int k, int i, int j, double y1, double y2) {
    check_index(k, i, "order_stat_pair_pdf");
    check_index(k, j, "order_stat_pair_pdf");
    if (!(i < j)) throw IndexError("order_stat_pair_pdf: need i < j");
    if (!(y1 < y2)) return 0.0;
    const double f1 = model.pdf(y1), f2 = model.pdf(y2);
    if (f1 == 0.0 || f2 == 0.0) return 0.0;
    const double F1 = model.cdf(y1), F2 = model.cdf(y2);
    // k! / ((i-1)! (j-i-1)! (k-j)!) as a product of binomials
    const double coef = binomial(k, i - 1) * binomial(k - i + 1, j - i - 1) * binomial(k - j + 2, 2) * 2.0;
    return coef * f1 * f2 * std::pow(F1, i - 1) * std::pow(F2 - F1, j - i - 1) * std::pow(1.0 - F2, k - j);
}

double order_stat_joint_pdf(const UnivariateModel& model, int k, std::span<const double> y) {
    if (k < 1 || static_cast<std::size_t>(k) != y.size())
        throw IndexError("order_stat_joint_pdf: need k >= 1 coordinates, got " + std::to_string(y.size()));
    for (std::size_t i = 1; i < y.size(); ++i)
        if (!(y[i - 1] < y[i])) return 0.0;
    double p = factorial(k);
    for (double v : y) p *= model.pdf(v);
    return p;
}

double order_stat_joint_pdf(const std::vector<UnivariateModel>& models, std::span<const double> y) {
    const std::size_t k = models.size();
    if (k == 0 || y.size() != k) throw IndexError("order_stat_joint_pdf: need one model per coordinate");
    if (k > 8) throw FactorialOverflow("permutation sum limited to k <= 8, got " + std::to_string(k));
    for (std::size_t i = 1; i < k; ++i)
        if (!(y[i - 1] < y[i])) return 0.0;
    // f[i][r] = f_i(y_r)
    std::vector<std::vector<double>> f(k, std::vector<double>(k));
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t r = 0; r < k; ++r) f[i][r] = models[i].pdf(y[r]);
    std::vector<std::size_t> sigma(k);
    for (std::size_t i = 0; i < k; ++i) sigma[i] = i;
    double total = 0.0;
    do {
        double p = 1.0;
        for (std::size_t i = 0; i < k && p != 0.0; ++i) p *= f[i][sigma[i]];
        total += p;
    } while (std::next_permutation(sigma.begin(), sigma.end()));
    return total;
}

// ------------------------------------------------------------ degenerate normal

DegenerateNormal degenerate_normal(const Eigen::VectorXd& a, const Eigen::MatrixXd& Sigma) {
    if (Sigma.rows() != Sigma.cols() || Sigma.rows() != a.size())
        throw DimensionError("degenerate_normal: Sigma must be k x k with k = length of a");
    const EigenFactorization ef = eigen_psd(Sigma);
    if (ef.rank == 0) throw NotPSD("degenerate_normal: Sigma has rank 0");
    DegenerateNormal d;
    d.a = a;
    d.Sigma = Sigma;
    d.m = ef.rank;
    const auto m = static_cast<Eigen::Index>(ef.rank);
    d.P = ef.Q.leftCols(m);
    d.lambdas = ef.lambdas.head(m);
    return d;
}

Eigen::MatrixXd DegenerateNormal::factor() const { return P * lambdas.cwiseSqrt().asDiagonal(); }

double DegenerateNormal::sqrt_pseudo_det() const { return lambdas.cwiseSqrt().prod(); }

AffineSubspace DegenerateNormal::carrier() const { return AffineSubspace{P, a}; }

DensityValue DegenerateNormal::pdf_on_carrier(std::span<const double> x) const {
    if (x.size() != dim()) throw DimensionError("pdf_on_carrier: point dimension");
    const Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size()) - a;
    const Eigen::VectorXd c = P.transpose() * d;
    if ((d - P * c).norm() > 1e-9 * (1.0 + d.norm())) return {0.0, DensityFlag::OffCarrier};
    const Eigen::VectorXd y = c.cwiseQuotient(lambdas.cwiseSqrt());
    const double md = double(m);
    return {std::exp(-0.5 * y.squaredNorm()) / (std::pow(2.0 * std::numbers::pi, 0.5 * md) * sqrt_pseudo_det())};
}

Point DegenerateNormal::sample(PhiloxStream& g) const {
    Eigen::VectorXd y(static_cast<Eigen::Index>(m));
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = g.normal();
    const Eigen::VectorXd x = factor() * y + a;
    return Point(x.data(), x.data() + x.size());
}

DensitySpec DegenerateNormal::density() const {
    const DegenerateNormal self = *this;
    auto fn = [self](std::span<const double> x) { return self.pdf_on_carrier(x); };
    if (m == dim()) {
        const Eigen::VectorXd half = 10.0 * Sigma.diagonal().cwiseSqrt();
        Box box{std::vector<double>(dim()), std::vector<double>(dim())};
        for (std::size_t i = 0; i < dim(); ++i) {
            box.lo[i] = a(static_cast<Eigen::Index>(i)) - half(static_cast<Eigen::Index>(i));
            box.hi[i] = a(static_cast<Eigen::Index>(i)) + half(static_cast<Eigen::Index>(i));
        }
        return DensitySpec(dim(), fn, box, ReferenceMeasure::lebesgue(dim()), 1.0);
    }
    return DensitySpec(dim(), fn, carrier(), ReferenceMeasure::hausdorff(m, carrier()), 1.0);
}

}  // namespace coarea
