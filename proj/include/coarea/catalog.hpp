#pragma once

// Closed-form densities: chi-squared (central and noncentral), Student's t,
// order statistics and the possibly degenerate multivariate normal, with the
// special functions they need.

#include "coarea/density.hpp"
#include "coarea/random.hpp"

#include <Eigen/Dense>

#include "json.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace coarea {

/// Gamma function for r > 0; OverflowError above 170.
double gamma_fn(double r);
double log_gamma(double r);

/// Modified Bessel function of the first kind, I_nu(y), for nu > -1 and
/// y >= 0. Power series up to y = 30, Hankel expansion beyond when it
/// converges, otherwise the power series summed outward from its largest
/// term.
double bessel_i(double nu, double y);
/// exp(-y) I_nu(y), finite for every y.
double bessel_i_scaled(double nu, double y);

/// Chi-squared density with k degrees of freedom; 0 for y <= 0.
double chi2_pdf(int k, double y);
/// Noncentral chi-squared density; falls back to chi2_pdf for lambda < 1e-10.
double noncentral_chi2_pdf(int k, double lambda, double y);
double student_t_pdf(int k, double y);
double normal_pdf(double x, double mean = 0.0, double sd = 1.0);

/// A univariate law: pdf, cdf, sampler and support. `box` is the finite
/// interval used when the law feeds a quadrature or a fiber search; it holds
/// all but about 1e-12 of the mass (1e-6 for heavy-tailed t laws).
class UnivariateModel {
public:
    using RealFn = std::function<double(double)>;
    using Sampler = std::function<double(PhiloxStream&)>;

    UnivariateModel(std::string name, nlohmann::json params, RealFn pdf, RealFn cdf, Sampler sampler,
                    double support_lo, double support_hi, double box_lo, double box_hi);

    double pdf(double y) const { return pdf_(y); }
    double cdf(double y) const { return cdf_(y); }
    double sample(PhiloxStream& g) const { return sampler_(g); }
    const std::string& name() const noexcept { return name_; }
    /// {"name": ..., parameters...}
    nlohmann::json descriptor() const;
    double support_lo() const noexcept { return support_lo_; }
    double support_hi() const noexcept { return support_hi_; }
    Box box() const { return Box({box_lo_}, {box_hi_}); }
    /// The pdf as a 1-D Lebesgue DensitySpec supported on box().
    DensitySpec density() const;

private:
    std::string name_;
    nlohmann::json params_;
    RealFn pdf_, cdf_;
    Sampler sampler_;
    double support_lo_, support_hi_, box_lo_, box_hi_;
};

UnivariateModel normal_model(double mean = 0.0, double sd = 1.0);
/// Uniform on the half-open interval [a, b).
UnivariateModel uniform_model(double a, double b);
UnivariateModel chi2_model(int k);
UnivariateModel noncentral_chi2_model(int k, double lambda);
UnivariateModel student_t_model(int k);
/// From a descriptor such as {"name": "chi2", "k": 3}; ConfigError otherwise.
UnivariateModel model_from_json(const nlohmann::json& j);

/// Density of the i-th smallest of k iid draws.
double order_stat_pdf(const UnivariateModel& model, int k, int i, double y);
/// Joint density of the i-th and j-th order statistics (i < j); 0 unless y1 < y2.
double order_stat_pair_pdf(const UnivariateModel& model, int k, int i, int j, double y1, double y2);
/// Joint density of all k order statistics; 0 unless y is strictly increasing.
double order_stat_joint_pdf(const UnivariateModel& model, int k, std::span<const double> y);
/// Independent but not identically distributed draws: the sum over
/// permutations sigma of prod_i f_i(y_sigma(i)). Limited to k <= 8.
double order_stat_joint_pdf(const std::vector<UnivariateModel>& models, std::span<const double> y);

/// N(a, Sigma) with Sigma = P diag(lambdas) P^T, P the k x m matrix of
/// eigenvectors for the m positive eigenvalues. The law lives on the
/// carrier a + range(P) and has a density with respect to H^m there.
struct DegenerateNormal {
    Eigen::VectorXd a;
    Eigen::MatrixXd Sigma;
    Eigen::MatrixXd P;
    Eigen::VectorXd lambdas;
    std::size_t m = 0;

    std::size_t dim() const noexcept { return static_cast<std::size_t>(a.size()); }
    /// P diag(sqrt(lambdas)): X = factor() Y + a with Y ~ N(0, I_m).
    Eigen::MatrixXd factor() const;
    /// prod sqrt(lambda_i).
    double sqrt_pseudo_det() const;
    AffineSubspace carrier() const;
    /// Density at x with respect to H^m; 0 with OffCarrier when the
    /// least-squares residual exceeds 1e-9 (1 + |x - a|).
    DensityValue pdf_on_carrier(std::span<const double> x) const;
    Point sample(PhiloxStream& g) const;
    /// Lebesgue when m = k, otherwise Hausdorff on carrier().
    DensitySpec density() const;
};

DegenerateNormal degenerate_normal(const Eigen::VectorXd& a, const Eigen::MatrixXd& Sigma);

}  // namespace coarea
