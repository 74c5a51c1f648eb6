#include "m2m/gradcheck.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace m2m::diff {

double gradcheck(const std::function<Tensor(const Tensor&)>& op,
                 const Tensor& point, double h) {
  Tensor x = point.detached_copy();
  x.set_requires_grad(true);

  std::vector<double> analytic;
  {
    Tape tape;
    Tensor loss = op(x);
    if (loss.numel() != 1)
      throw std::invalid_argument("gradcheck: op must return a scalar");
    tape.backward(loss);
    Tensor g = tape.grad(x);
    analytic.assign(g.data().begin(), g.data().end());
  }

  NoTapeGuard no_tape;
  double worst = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    Tensor plus = x.detached_copy();
    plus.raw_data()[i] += h;
    double fp = op(plus).value();
    Tensor minus = x.detached_copy();
    minus.raw_data()[i] -= h;
    double fm = op(minus).value();
    double fd = (fp - fm) / (2.0 * h);
    if (!std::isfinite(fd))
      throw std::runtime_error("gradcheck: non-finite difference quotient");
    double denom = std::fabs(fd) > 1.0 ? std::fabs(fd) : 1.0;
    double err = std::fabs(analytic[i] - fd) / denom;
    if (err > worst) worst = err;
  }
  return worst;
}

}  // namespace m2m::diff
