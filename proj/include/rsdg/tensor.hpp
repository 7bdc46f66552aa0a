#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "rsdg/error.hpp"

namespace rsdg {

using Shape = std::vector<int>;

inline int shape_numel(const Shape& s) {
  int n = 1;
  for (int d : s) {
    require(d > 0, "tensor shape dimensions must be positive");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

// Dense row-major tensor of doubles. `g` holds the gradient with respect to
// `v` when a backward pass has produced one; it is empty otherwise.
struct Tensor {
  Shape shape;
  std::vector<double> v;
  std::vector<double> g;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), v(std::move(values)) {
    require(static_cast<int>(v.size()) == shape_numel(shape),
            "tensor value count does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s) {
    const int n = shape_numel(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  }

  int numel() const { return static_cast<int>(v.size()); }

  bool finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  Tensor& ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), 0.0);
    return *this;
  }
};

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

}  // namespace rsdg
