#include "supnerf/tensor.hpp"

#include <cmath>

namespace supnerf {

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str(const std::vector<std::int64_t>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

std::int64_t Tensor::checked_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t e : shape) {
    if (e < 0) throw ShapeError("Tensor: negative extent in " + shape_str(shape));
    n *= e;
  }
  return n;
}

}  // namespace supnerf
