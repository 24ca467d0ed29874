#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "supnerf/tape.hpp"

namespace supnerf {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::int64_t coords_checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  double step = 0.0;
  bool pass = false;

  double worst() const {
    double w = 0.0;
    for (const auto& e : entries)
      if (e.max_rel_err > w) w = e.max_rel_err;
    return w;
  }
};

// Scalar function of named parameters, expressed on a fresh tape per call.
using CheckedFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Central-difference comparison of tape gradients. Coordinates are
// subsampled (at most max_coords per parameter, seeded) and the function is
// required to be deterministic: two identical forward passes must agree
// bit-for-bit or a DeterminismError is thrown.
GradCheckReport grad_check(const CheckedFn& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double h, double tol, std::uint64_t seed = 0,
                           std::int64_t max_coords = 256);

}  // namespace supnerf
