#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "itrl/ops.hpp"

namespace itrl {

template <typename S>
using ScalarFn = std::function<Tensor<S>(Tape<S>&, const Tensor<S>&)>;

// Max over elements of |g_tape - g_fd| / max(|g_tape|, |g_fd|, 1e-8), where
// g_fd is the central difference with the given step.
template <typename S>
double grad_check(const ScalarFn<S>& f, const Matrix<S>& x, S step) {
  if (!(step > S(0))) throw Error("grad_check: step must be positive");

  Matrix<S> g_tape;
  {
    Tape<S> tape;
    auto xv = tape.variable(x);
    auto loss = f(tape, xv);
    if (loss.shape() != Shape{1, 1}) throw TapeError("grad_check: f must return a scalar, got " + loss.shape().str());
    if (!std::isfinite(static_cast<double>(loss.value()(0, 0)))) throw Error("grad_check: f(x) is not finite");
    tape.backward(loss);
    g_tape = tape.grad(xv);
  }

  auto eval = [&](const Matrix<S>& at) {
    Tape<S> tape;
    return f(tape, tape.constant(at)).value()(0, 0);
  };

  double worst = 0.0;
  Matrix<S> probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const S orig = x.data()[i];
    const S hi = orig + step;
    const S lo = orig - step;
    probe.data()[i] = hi;
    const S f_hi = eval(probe);
    probe.data()[i] = lo;
    const S f_lo = eval(probe);
    probe.data()[i] = orig;
    const double fd = (static_cast<double>(f_hi) - static_cast<double>(f_lo)) /
                      (static_cast<double>(hi) - static_cast<double>(lo));
    const double gt = static_cast<double>(g_tape.data()[i]);
    const double denom = std::max({std::abs(gt), std::abs(fd), 1e-8});
    worst = std::max(worst, std::abs(gt - fd) / denom);
  }
  return worst;
}

struct ParamCheckResult {
  double worst = 0.0;
  std::string worst_param;
  int entries = 0;
};

// Central-difference check of d loss / d params on `per_param` random entries
// of every parameter in `store`. `loss` must build a fresh graph on the tape.
template <typename S>
ParamCheckResult param_grad_check(ParamStore<S>& store, const std::function<Tensor<S>(Tape<S>&)>& loss, S step,
                                  int per_param, std::uint64_t seed) {
  std::vector<Matrix<S>> grads;
  {
    Tape<S> tape;
    auto l = loss(tape);
    if (l.shape() != Shape{1, 1}) throw TapeError("param_grad_check: loss must be scalar, got " + l.shape().str());
    tape.backward(l);
    grads = tape.parameter_grads(store);
  }
  auto eval = [&] {
    Tape<S> tape;
    return static_cast<double>(loss(tape).value()(0, 0));
  };
  std::mt19937_64 rng(seed);
  ParamCheckResult out;
  for (std::size_t p = 0; p < store.size(); ++p) {
    Matrix<S>& v = store.at(p).value;
    for (int k = 0; k < per_param; ++k) {
      const Index i = static_cast<Index>(rng() % static_cast<std::uint64_t>(v.size()));
      const S orig = v.data()[i];
      v.data()[i] = orig + step;
      const double hi = eval();
      v.data()[i] = orig - step;
      const double lo = eval();
      v.data()[i] = orig;
      const double fd = (hi - lo) / (2.0 * static_cast<double>(step));
      const double gt = static_cast<double>(grads[p].data()[i]);
      const double e = std::abs(gt - fd) / std::max({std::abs(gt), std::abs(fd), 1e-8});
      ++out.entries;
      if (e > out.worst) {
        out.worst = e;
        out.worst_param = store.at(p).name;
      }
    }
  }
  return out;
}

}  // namespace itrl
