#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include <torch/torch.h>

namespace airr::testing {

// Relative error between the autograd gradient of f at x and central finite
// differences, measured as |g - n| / max(|g| + |n|, floor) over all entries.
inline double gradient_relative_error(const std::function<torch::Tensor(const torch::Tensor&)>& f,
                                      const torch::Tensor& x0, double eps = 1e-6) {
  auto x = x0.detach().to(torch::kFloat64).clone().set_requires_grad(true);
  f(x).backward();
  const auto analytic = x.grad().detach().clone();

  auto probe = x0.detach().to(torch::kFloat64).clone();
  auto numeric = torch::zeros_like(probe);
  torch::NoGradGuard guard;
  auto flat = probe.view({-1});
  auto nflat = numeric.view({-1});
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + eps;
    const double up = f(probe).item<double>();
    flat[i] = orig - eps;
    const double down = f(probe).item<double>();
    flat[i] = orig;
    nflat[i] = (up - down) / (2 * eps);
  }
  const double diff = (analytic - numeric).norm().item<double>();
  const double scale = analytic.norm().item<double>() + numeric.norm().item<double>();
  return diff / std::max(scale, 1e-10);
}

}  // namespace airr::testing
