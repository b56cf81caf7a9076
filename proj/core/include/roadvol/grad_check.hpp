#pragma once
#include <functional>
#include <span>
#include <vector>

#include "roadvol/params.hpp"
#include "roadvol/tensor.hpp"

namespace roadvol::diff {

struct GradCheckResult {
  double max_rel_err = 0.0;
  int nan_count = 0;
  // coordinates where left/right one-sided differences disagree, i.e. the
  // smoothness precondition fails (a relu/huber kink inside the step)
  int nonsmooth_count = 0;
  int checked_count = 0;
};

// Relative-error denominator floor. Absorbs finite-difference rounding noise
// on coordinates whose true gradient is ~0.
inline constexpr double kGradCheckEps = 1e-4;

namespace detail {

// Central difference vs analytic for one coordinate, with a kink filter:
// where the one-sided slopes disagree, f is not differentiable inside the
// step and the sample is discarded rather than scored.
inline void score_coordinate(double analytic, double fp, double fc, double fm, double h, GradCheckResult& res) {
  double fd = (fp - fm) / (2.0 * h);
  if (!std::isfinite(fd) || !std::isfinite(analytic)) {
    ++res.nan_count;
    return;
  }
  double left = (fc - fm) / h;
  double right = (fp - fc) / h;
  if (std::abs(right - left) > 1e-3 * (1.0 + std::abs(analytic) + std::abs(fd))) {
    ++res.nonsmooth_count;
    return;
  }
  double err = std::abs(analytic - fd) / (std::abs(analytic) + kGradCheckEps);
  res.max_rel_err = std::max(res.max_rel_err, err);
  ++res.checked_count;
}

}  // namespace detail

// Central finite differences against the analytic gradient of a scalar
// function of one input tensor. f must be deterministic and smooth at x.
template <typename S>
GradCheckResult grad_check(const std::function<TensorT<S>(TapeT<S>&, TensorT<S>)>& f, const Shape& shape,
                           std::span<const double> x0, double h) {
  std::vector<double> x(x0.begin(), x0.end());
  std::vector<double> analytic(x.size(), 0.0);
  {
    TapeT<S> tape;
    std::vector<S> xs(x.begin(), x.end());
    auto xin = tape.constant(shape, std::span<const S>(xs));
    auto loss = f(tape, xin);
    tape.backward(loss);
    auto g = tape.grad(xin.id());
    for (size_t i = 0; i < g.size(); ++i) analytic[i] = static_cast<double>(g[i]);
  }
  auto eval = [&](std::span<const double> xv) {
    TapeT<S> tape;
    std::vector<S> xs(xv.begin(), xv.end());
    auto xin = tape.constant(shape, std::span<const S>(xs));
    return static_cast<double>(f(tape, xin).item());
  };
  const double fc = eval(x);
  GradCheckResult res;
  for (size_t i = 0; i < x.size(); ++i) {
    double keep = x[i];
    x[i] = keep + h;
    double fp = eval(x);
    x[i] = keep - h;
    double fm = eval(x);
    x[i] = keep;
    detail::score_coordinate(analytic[i], fp, fc, fm, h, res);
  }
  return res;
}

// Same check against every coordinate of every parameter in a store. The
// function builds the loss on a fresh tape from current store values.
inline GradCheckResult grad_check_params(const std::function<Tensor(Tape&)>& loss_fn, ParamStore& store,
                                         double h) {
  store.zero_grad();
  {
    Tape tape;
    auto loss = loss_fn(tape);
    tape.backward(loss);
    store.accumulate_grads(tape);
  }
  auto eval = [&]() {
    Tape tape;
    return loss_fn(tape).item();
  };
  const double fc = eval();
  GradCheckResult res;
  for (size_t pid = 0; pid < store.count(); ++pid) {
    auto& e = store.entry(static_cast<int>(pid));
    for (size_t i = 0; i < e.value.size(); ++i) {
      double keep = e.value[i];
      e.value[i] = keep + h;
      double fp = eval();
      e.value[i] = keep - h;
      double fm = eval();
      e.value[i] = keep;
      detail::score_coordinate(e.grad[i], fp, fc, fm, h, res);
    }
  }
  return res;
}

}  // namespace roadvol::diff
