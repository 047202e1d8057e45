#include "etts/acoustic/vae.hpp"

#include "etts/error.hpp"

namespace etts::acoustic {

torch::Tensor reparameterize(const GaussianPosterior& q, const torch::Tensor& noise) {
    if (!q.mu.sizes().equals(noise.sizes())) throw ShapeError("reparameterize: noise shape differs from mu");
    return q.mu + torch::exp(0.5 * q.log_var) * noise;
}

torch::Tensor kld_closed_form(const GaussianPosterior& q) {
    if (!q.mu.sizes().equals(q.log_var.sizes())) throw ShapeError("kld: mu and log_var shapes differ");
    return 0.5 * (q.mu.square() + torch::exp(q.log_var) - 1.0 - q.log_var).sum(-1);
}

}  // namespace etts::acoustic
