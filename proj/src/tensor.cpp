#include "headlamp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace headlamp {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

void validate_shape(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw ArgumentError("tensor shape must have rank >= 1");
  for (auto extent : shape) {
    if (extent == 0) throw ArgumentError("tensor extents must be positive: " + shape_string(shape));
  }
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ')';
  return out.str();
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(product(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != product(shape_)) {
    throw ArgumentError("data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 1) return 1;
  if (shape_.size() != 2) throw ArgumentError("rows() on rank-" + std::to_string(shape_.size()) + " tensor");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() == 1) return shape_[0];
  if (shape_.size() != 2) throw ArgumentError("cols() on rank-" + std::to_string(shape_.size()) + " tensor");
  return shape_[1];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform_open() {
  double u = 0.0;
  do {
    u = uniform();
  } while (u == 0.0);
  return u;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform_open();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw ArgumentError("Rng::below(0)");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = 0;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

std::uint64_t Rng::fork_seed() {
  std::uint64_t z = engine_() + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Tensor random_normal(std::vector<std::size_t> shape, Rng& rng, double scale) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

double check_gradient(const DifferentiableFn& f, const Tensor& x, double step) {
  if (!(step >= 1e-7 && step <= 1e-3)) {
    throw ArgumentError("gradient-check step must lie in [1e-7, 1e-3]");
  }
  const ValueAndGradient base = f(x);
  if (!std::isfinite(base.value)) throw EvaluationError("non-finite value at the unperturbed point");
  if (!base.gradient.same_shape(x)) {
    throw ArgumentError("analytic gradient shape " + shape_string(base.gradient.shape()) +
                        " differs from input shape " + shape_string(x.shape()));
  }

  Tensor probe = x;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + step;
    const double plus = f(probe).value;
    probe[i] = original - step;
    const double minus = f(probe).value;
    probe[i] = original;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw EvaluationError("non-finite value when perturbing coordinate " + std::to_string(i));
    }
    const double numeric = (plus - minus) / (2.0 * step);
    const double err = std::abs(base.gradient[i] - numeric) / std::max(1.0, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace headlamp
