#include "d2d/nn/grad_check.hpp"

#include <cmath>

namespace d2d::nn {

GradCheckReport grad_check(ParamStore& store, const std::function<Var(Tape&)>& build,
                           double eps_scale) {
  store.zero_grads();
  {
    Tape tape(&store, false);
    Var loss = build(tape);
    tape.backward(loss);
  }

  auto eval = [&]() {
    Tape tape(&store, false);
    return tape.scalar(build(tape));
  };

  GradCheckReport rep;
  for (int pi = 0; pi < store.count(); ++pi) {
    Parameter& p = store.by_index(pi);
    for (int i = 0; i < p.value.numel(); ++i) {
      float theta = p.value.data[size_t(i)];
      double eps = eps_scale * std::max(1.0, std::abs(double(theta)));
      p.value.data[size_t(i)] = float(double(theta) + eps);
      double lp = eval();
      p.value.data[size_t(i)] = float(double(theta) - eps);
      double lm = eval();
      p.value.data[size_t(i)] = theta;

      double numeric = (lp - lm) / (2.0 * eps);
      double analytic = double(p.grad.data[size_t(i)]);
      double rel = std::abs(analytic - numeric) /
                   std::max(1.0, std::abs(analytic) + std::abs(numeric));
      ++rep.coords;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = p.name;
        rep.worst_index = i;
      }
    }
  }
  store.zero_grads();
  return rep;
}

}  // namespace d2d::nn
