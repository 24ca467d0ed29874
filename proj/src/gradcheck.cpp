#include "supnerf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "supnerf/errors.hpp"
#include "supnerf/rng.hpp"

namespace supnerf {

namespace {

double eval(const CheckedFn& f,
            const std::vector<std::pair<std::string, Tensor>>& params,
            bool with_grad, std::vector<Tensor>* grads) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.leaf(p.second, with_grad));
  Var loss = f(tape, vars);
  if (tape.value(loss).numel() != 1)
    throw std::invalid_argument("grad_check: function must return a scalar");
  double v = tape.value(loss)[0];
  if (with_grad) {
    tape.backward(loss);
    grads->clear();
    for (Var p : vars) grads->push_back(tape.grad(p));
  }
  return v;
}

}  // namespace

GradCheckReport grad_check(const CheckedFn& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double h, double tol, std::uint64_t seed,
                           std::int64_t max_coords) {
  std::vector<Tensor> grads;
  double v0 = eval(f, params, true, &grads);
  double v1 = eval(f, params, false, nullptr);
  if (std::memcmp(&v0, &v1, sizeof(double)) != 0)
    throw DeterminismError("grad_check: two forward passes disagree (" +
                           std::to_string(v0) + " vs " + std::to_string(v1) +
                           ")");

  GradCheckReport report;
  report.tolerance = tol;
  report.step = h;
  report.pass = true;

  auto mutable_params = params;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor& p = params[pi].second;
    std::int64_t n = p.numel();
    std::vector<std::int64_t> coords;
    if (n <= max_coords) {
      coords.resize(n);
      for (std::int64_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      Rng rng = Rng::derive(seed, 0x6772616463686bull, pi);
      coords.reserve(max_coords);
      for (std::int64_t i = 0; i < max_coords; ++i)
        coords.push_back(static_cast<std::int64_t>(rng.below(n)));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }

    GradCheckEntry entry;
    entry.name = params[pi].first;
    entry.coords_checked = static_cast<std::int64_t>(coords.size());
    Tensor& target = mutable_params[pi].second;
    for (std::int64_t c : coords) {
      double orig = target[c];
      target[c] = orig + h;
      double fp = eval(f, mutable_params, false, nullptr);
      target[c] = orig - h;
      double fm = eval(f, mutable_params, false, nullptr);
      target[c] = orig;
      double numeric = (fp - fm) / (2.0 * h);
      double analytic = grads[pi][c];
      double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-4});
      double rel = std::fabs(analytic - numeric) / denom;
      if (rel > entry.max_rel_err) entry.max_rel_err = rel;
    }
    if (entry.max_rel_err > tol) report.pass = false;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace supnerf
