#pragma once

#include <functional>
#include <vector>

namespace adaptfed {

/// Central-difference gradient: (f(x + h e_k) - f(x - h e_k)) / (2h) per
/// coordinate. Throws std::runtime_error naming the coordinate if f returns
/// a non-finite value. Requires h > 0.
std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> x, double h = 1e-6);

/// Max relative error between an analytic gradient and its central-difference
/// estimate: |a_k - n_k| / (|a_k| + eps), maximized over k.
double max_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                     double eps = 1e-8);

}  // namespace adaptfed
