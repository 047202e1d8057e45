#pragma once

#include <torch/torch.h>

namespace etts::acoustic {

/// Diagonal Gaussian q(z | y); both tensors (B, latent_dim) or (latent_dim).
struct GaussianPosterior {
    torch::Tensor mu;
    torch::Tensor log_var;
};

/// z = mu + exp(log_var / 2) * noise.
torch::Tensor reparameterize(const GaussianPosterior& q, const torch::Tensor& noise);

/// KL(q || N(0, I)) summed over the last dimension:
/// sum_d 0.5 * (mu_d^2 + exp(log_var_d) - 1 - log_var_d).
torch::Tensor kld_closed_form(const GaussianPosterior& q);

}  // namespace etts::acoustic
