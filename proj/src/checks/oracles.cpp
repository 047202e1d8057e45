#include "etts/checks/oracles.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace etts::checks {

MonteCarloEstimate kld_monte_carlo(const torch::Tensor& mu, const torch::Tensor& log_var, std::int64_t samples,
                                   std::uint64_t seed) {
    torch::NoGradGuard no_grad;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    const auto m = mu.to(torch::kFloat64).reshape({1, -1});
    const auto lv = log_var.to(torch::kFloat64).reshape({1, -1});
    const auto sd = torch::exp(0.5 * lv);
    // log q(z) - log p(z) with z = mu + sd * eps, expanded as c + a . eps + b . eps^2
    const double c = (0.5 * (m.pow(2) - lv)).sum().item<double>();
    const auto a = (m * sd).reshape({-1}).to(torch::kFloat32);
    const auto b = (0.5 * (sd.pow(2) - 1.0)).reshape({-1}).to(torch::kFloat32);
    const std::int64_t chunk = 50000;
    double sum = 0.0, sum_sq = 0.0;
    auto eps = torch::empty({chunk, m.size(1)}, torch::kFloat32);
    for (std::int64_t done = 0; done < samples; done += chunk) {
        const auto n = std::min(chunk, samples - done);
        auto e = eps.slice(0, 0, n);
        e.normal_(0.0, 1.0, gen);
        auto ratio = (torch::mv(e * e, b) + torch::mv(e, a)).to(torch::kFloat64) + c;
        sum += ratio.sum().item<double>();
        sum_sq += ratio.pow(2).sum().item<double>();
    }
    const double mean = sum / static_cast<double>(samples);
    const double var = sum_sq / static_cast<double>(samples) - mean * mean;
    return {mean, std::sqrt(std::max(var, 0.0) / static_cast<double>(samples))};
}

double max_singular_value(const torch::Tensor& weight) {
    torch::NoGradGuard no_grad;
    auto w = weight.detach().to(torch::kFloat64).reshape({weight.size(0), -1});
    return torch::linalg_svdvals(w).max().item<double>();
}

GradCheckReport gradient_check(const std::function<torch::Tensor()>& loss,
                               const std::vector<std::pair<std::string, torch::Tensor>>& params, double eps,
                               double rel_tol, double abs_tol, double abs_floor) {
    for (const auto& [name, p] : params) {
        if (p.grad().defined()) p.mutable_grad().zero_();
    }
    auto value = loss();
    value.backward();

    GradCheckReport report;
    report.passed = true;
    for (const auto& [name, p] : params) {
        auto analytic = p.grad().defined() ? p.grad().detach().clone() : torch::zeros_like(p);
        auto flat = p.detach().view({-1});
        auto grad_flat = analytic.view({-1});
        for (std::int64_t i = 0; i < flat.numel(); ++i) {
            double numeric = 0.0;
            {
                torch::NoGradGuard no_grad;
                const double orig = flat[i].item<double>();
                flat[i] = orig + eps;
                const double up = loss().item<double>();
                flat[i] = orig - eps;
                const double down = loss().item<double>();
                flat[i] = orig;
                numeric = (up - down) / (2.0 * eps);
            }
            const double a = grad_flat[i].item<double>();
            const double scale = std::max(std::abs(a), std::abs(numeric));
            const double err = std::abs(a - numeric);
            const double rel = scale > 0.0 ? err / scale : 0.0;
            ++report.entries;
            if (scale >= abs_floor && rel > report.max_rel_error) {
                report.max_rel_error = rel;
                std::ostringstream s;
                s << name << "[" << i << "]: " << a << " vs " << numeric;
                report.worst = s.str();
            }
            if (err > abs_tol + rel_tol * std::abs(numeric)) report.passed = false;
        }
    }
    return report;
}

double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double f = cdf(samples[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
    double total = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) total += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
    return total;
}

double logistic_pdf(double x, double mean, double scale) {
    const double u = (x - mean) / scale;
    const double e = std::exp(-std::abs(u));
    return e / (scale * (1.0 + e) * (1.0 + e));
}

double logistic_cdf(double x, double mean, double scale) {
    const double u = (x - mean) / scale;
    return u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
}

double sequential_flow_density(double x, const std::vector<double>& mu, const std::vector<double>& sigma) {
    double s = x;
    double jacobian = 1.0;
    for (std::size_t f = mu.size(); f-- > 0;) {
        s = (s - mu[f]) / sigma[f];
        jacobian /= sigma[f];
    }
    return logistic_pdf(s, 0.0, 1.0) * jacobian;
}

double mol_bin_mass(double x, const std::vector<double>& weights, const std::vector<double>& means,
                    const std::vector<double>& scales, std::int64_t levels) {
    const double delta = 1.0 / static_cast<double>(levels - 1);
    double mass = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        const double upper = x >= 1.0 - 0.5 * delta ? 1.0 : logistic_cdf(x + delta, means[k], scales[k]);
        const double lower = x <= -1.0 + 0.5 * delta ? 0.0 : logistic_cdf(x - delta, means[k], scales[k]);
        mass += weights[k] * (upper - lower);
    }
    return mass;
}

}  // namespace etts::checks
