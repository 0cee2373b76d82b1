#ifndef TSMT_TESTS_SUPPORT_HPP
#define TSMT_TESTS_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <unistd.h>

#include "tsmt/ops.hpp"
#include "tsmt/random.hpp"

namespace tsmt::test {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0, bool requires_grad = false) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(shape, 0.0, requires_grad);
  for (Index i = 0; i < t.numel(); ++i) t[i] = n(rng);
  return t;
}

/// Values bounded away from zero so relu/max kinks are not straddled by a
/// finite-difference step.
inline Tensor kink_free_tensor(const Shape& shape, Rng& rng, bool requires_grad = false) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor t(shape, 0.0, requires_grad);
  for (Index i = 0; i < t.numel(); ++i) t[i] = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

/// ||a - n|| / max(||a||, ||n||, 1e-12).
inline double relative_error(const Vector& analytic, const Vector& numeric) {
  const double denom = std::max({analytic.norm(), numeric.norm(), 1e-12});
  return (analytic - numeric).norm() / denom;
}

/// Central differences of the scalar `f` with respect to every entry of `x`.
inline Vector numeric_gradient(const std::function<double()>& f, Tensor& x, double h = 1e-6) {
  Vector g(x.numel());
  for (Index i = 0; i < x.numel(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Contracts an output with fixed random weights so every output entry
/// contributes to the checked scalar.
inline Tensor probe(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

using GradFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Worst relative error between backward() and central differences over
/// every input that requires grad, probing the output with random weights.
inline double gradcheck(const GradFn& fn, std::vector<Tensor> inputs, Rng& rng) {
  Tensor out = fn(inputs);
  Tensor weights = random_tensor(out.shape(), rng);
  for (Tensor& t : inputs)
    if (t.requires_grad()) t.zero_grad();
  backward(probe(out, weights));

  double worst = 0.0;
  for (Tensor& t : inputs) {
    if (!t.requires_grad()) continue;
    const Vector analytic = t.grad();
    auto f = [&] {
      NoGradGuard guard;
      return probe(fn(inputs), weights).item();
    };
    worst = std::max(worst, relative_error(analytic, numeric_gradient(f, t)));
  }
  return worst;
}

inline Index pick(Rng& rng, Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); }

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("tsmt_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace tsmt::test

#endif  // TSMT_TESTS_SUPPORT_HPP
