#pragma once

// Reference computations used to verify the toolkit. Each oracle evaluates its
// quantity from first principles instead of calling the code under test.

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace etts::checks {

/// Monte-Carlo estimate of KL(N(mu, diag e^log_var) || N(0, I)) as the sample
/// mean of log q(z) - log p(z), z ~ q. Inputs are 1-D float64 tensors.
struct MonteCarloEstimate {
    double mean = 0.0;
    double standard_error = 0.0;
};
MonteCarloEstimate kld_monte_carlo(const torch::Tensor& mu, const torch::Tensor& log_var, std::int64_t samples,
                                   std::uint64_t seed);

/// Largest singular value of a weight reshaped to (rows, -1), from a full SVD.
double max_singular_value(const torch::Tensor& weight);

struct GradCheckReport {
    std::int64_t entries = 0;      // parameter entries compared
    double max_rel_error = 0.0;
    std::string worst;             // "<param>[index]: analytic vs numeric"
    bool passed = false;
};

/// Central finite differences on every entry of `params` (float64 leaves). The
/// loss closure must be deterministic. An entry passes when
/// |a - n| <= abs_tol + rel_tol * |n|. The reported maximum relative error skips
/// entries whose magnitude is below abs_floor.
GradCheckReport gradient_check(const std::function<torch::Tensor()>& loss,
                               const std::vector<std::pair<std::string, torch::Tensor>>& params, double eps = 1e-6,
                               double rel_tol = 1e-3, double abs_tol = 1e-8,
                               double abs_floor = 1e-6);

/// Kolmogorov-Smirnov distance between the empirical distribution of `samples`
/// and the continuous CDF `cdf`.
double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf);

/// Composite trapezoid rule over sorted abscissae.
double trapezoid(const std::vector<double>& x, const std::vector<double>& y);

/// Standard logistic density and CDF at (x - mean) / scale.
double logistic_pdf(double x, double mean, double scale);
double logistic_cdf(double x, double mean, double scale);

/// Density of x under affine flows applied in order to a standard logistic,
/// s_f = mu_f + sigma_f * s_{f-1}, by inverting the flows one at a time.
double sequential_flow_density(double x, const std::vector<double>& mu, const std::vector<double>& sigma);

/// Discretized logistic mixture mass of grid point x on `levels` points of [-1, 1],
/// with the edge bins absorbing the tails. Plain double arithmetic.
double mol_bin_mass(double x, const std::vector<double>& weights, const std::vector<double>& means,
                    const std::vector<double>& scales, std::int64_t levels);

}  // namespace etts::checks
