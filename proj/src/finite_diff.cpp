#include "adaptfed/finite_diff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace adaptfed {

std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> x, double h) {
    if (!(h > 0)) throw std::invalid_argument("finite_diff_grad: requires h > 0");
    std::vector<double> g(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double orig = x[k];
        x[k] = orig + h;
        const double fp = f(x);
        x[k] = orig - h;
        const double fm = f(x);
        x[k] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_diff_grad: non-finite f at coordinate " +
                                     std::to_string(k));
        g[k] = (fp - fm) / (2.0 * h);
    }
    return g;
}

double max_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                     double eps) {
    if (analytic.size() != numeric.size())
        throw std::invalid_argument("max_rel_error: length mismatch");
    double worst = 0.0;
    for (std::size_t k = 0; k < analytic.size(); ++k) {
        const double err = std::fabs(analytic[k] - numeric[k]) / (std::fabs(analytic[k]) + eps);
        if (err > worst) worst = err;
    }
    return worst;
}

}  // namespace adaptfed
