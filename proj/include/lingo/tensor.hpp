#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lingo {

// Dense row-major f64 tensor. Desk-scale sizes keep everything in double;
// matrices are rank 2, images rank 3 (H x W x C).
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
    v.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
  }
  Tensor(std::vector<std::int64_t> s, std::vector<double> data)
      : shape(std::move(s)), v(std::move(data)) {
    if (static_cast<std::int64_t>(v.size()) != numel_of(shape))
      throw std::runtime_error("tensor data size does not match shape " +
                               shape_str());
  }

  static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (auto d : s) {
      if (d <= 0) throw std::runtime_error("nonpositive tensor extent");
      n *= d;
    }
    return n;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
  bool is_scalar() const { return v.size() == 1; }

  // rank-2 accessors
  std::int64_t rows() const { return shape.at(0); }
  std::int64_t cols() const { return shape.at(1); }
  double& at(std::int64_t r, std::int64_t c) { return v[r * cols() + c]; }
  double at(std::int64_t r, std::int64_t c) const { return v[r * cols() + c]; }

  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
      os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
  }

  static Tensor scalar(double x) { return Tensor({1}, {x}); }
  static Tensor vec(std::vector<double> data) {
    auto n = static_cast<std::int64_t>(data.size());
    return Tensor({n}, std::move(data));
  }
};

inline bool same_shape(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape;
}

}  // namespace lingo
