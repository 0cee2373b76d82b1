#include <doctest.h>

#include "support.hpp"
#include "tsmt/model.hpp"

using namespace tsmt;
using test::gradcheck;
using test::kink_free_tensor;
using test::pick;
using test::random_tensor;

namespace {

constexpr int kSeeds = 20;
constexpr double kTolerance = 1e-6;

}  // namespace

TEST_CASE("gradcheck: elementwise, reductions, reshape, stack") {
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(1000 + s);
    const Shape shape{pick(rng, 1, 3), pick(rng, 2, 4), pick(rng, 1, 3)};
    Tensor a = random_tensor(shape, rng, 1.0, true), b = random_tensor(shape, rng, 1.0, true);
    CHECK(gradcheck([](auto& v) { return add(v[0], v[1]); }, {a, b}, rng) < kTolerance);
    CHECK(gradcheck([](auto& v) { return sub(v[0], v[1]); }, {a, b}, rng) < kTolerance);
    CHECK(gradcheck([](auto& v) { return mul(v[0], v[1]); }, {a, b}, rng) < kTolerance);
    CHECK(gradcheck([](auto& v) { return scale(v[0], -1.7); }, {a}, rng) < kTolerance);
    CHECK(gradcheck([](auto& v) { return mean(mul(v[0], v[0])); }, {a}, rng) < kTolerance);
    CHECK(gradcheck([](auto& v) { return reshape(v[0], {v[0].numel()}); }, {a}, rng) < kTolerance);
    Tensor c = random_tensor({shape[0], pick(rng, 1, 3), shape[2]}, rng, 1.0, true);
    CHECK(gradcheck([](auto& v) { return stack({v[0], v[1]}, 1); }, {a, c}, rng) < kTolerance);
    Tensor k = kink_free_tensor(shape, rng, true);
    CHECK(gradcheck([](auto& v) { return relu(v[0]); }, {k}, rng) < kTolerance);
  }
}

TEST_CASE("gradcheck: softmax and linear") {
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(2000 + s);
    Tensor x = random_tensor({pick(rng, 1, 4), pick(rng, 2, 5)}, rng, 2.0, true);
    CHECK(gradcheck([](auto& v) { return softmax(v[0], 1); }, {x}, rng) < kTolerance);
    CHECK(gradcheck([](auto& v) { return softmax(v[0], 0); }, {x}, rng) < kTolerance);
    const Index out = pick(rng, 1, 4);
    Tensor w = random_tensor({out, x.dim(1)}, rng, 1.0, true), b = random_tensor({out}, rng, 1.0, true);
    CHECK(gradcheck([](auto& v) { return linear(v[0], v[1], v[2]); }, {x, w, b}, rng) < kTolerance);
  }
}

TEST_CASE("gradcheck: conv3d with groups, stride and padding") {
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(3000 + s);
    const Index groups = pick(rng, 1, 2), cig = pick(rng, 1, 2), cog = pick(rng, 1, 2);
    const Triple k{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
    const Triple st{pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 2)};
    const Triple p{pick(rng, 0, k[0] - 1), pick(rng, 0, k[1] - 1), pick(rng, 0, k[2] - 1)};
    Tensor x = random_tensor({pick(rng, 1, 2), groups * cig, k[0] + pick(rng, 0, 2), k[1] + pick(rng, 0, 3),
                              k[2] + pick(rng, 0, 3)},
                             rng, 1.0, true);
    Tensor w = random_tensor({groups * cog, cig, k[0], k[1], k[2]}, rng, 1.0, true);
    Tensor b = random_tensor({groups * cog}, rng, 1.0, true);
    auto fn = [&](auto& v) { return conv3d(v[0], v[1], v[2], st, p, groups); };
    CHECK(gradcheck(fn, {x, w, b}, rng) < kTolerance);
  }
}

TEST_CASE("gradcheck: conv2d and conv_transpose2d") {
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(4000 + s);
    const Index groups = pick(rng, 1, 2), ci = groups * pick(rng, 1, 2), co = groups * pick(rng, 1, 2);
    const Index k = pick(rng, 1, 4), st = pick(rng, 1, 3), p = pick(rng, 0, k - 1);
    Tensor x = random_tensor({pick(rng, 1, 2), ci, k + pick(rng, 0, 4), k + pick(rng, 0, 4)}, rng, 1.0, true);
    Tensor w = random_tensor({co, ci / groups, k, k}, rng, 1.0, true), b = random_tensor({co}, rng, 1.0, true);
    CHECK(gradcheck([&](auto& v) { return conv2d(v[0], v[1], v[2], {st, st}, {p, p}, groups); }, {x, w, b}, rng) <
          kTolerance);

    const Index op = pick(rng, 0, st - 1);
    Tensor y = random_tensor({pick(rng, 1, 2), ci, pick(rng, 1, 4), pick(rng, 1, 4)}, rng, 1.0, true);
    Tensor tw = random_tensor({ci, co, k, k}, rng, 1.0, true), tb = random_tensor({co}, rng, 1.0, true);
    if ((y.dim(2) - 1) * st - 2 * p + k + op < 1 || (y.dim(3) - 1) * st - 2 * p + k + op < 1) continue;
    auto fn = [&](auto& v) { return conv_transpose2d(v[0], v[1], v[2], {st, st}, {p, p}, {op, op}); };
    CHECK(gradcheck(fn, {y, tw, tb}, rng) < kTolerance);
  }
}

TEST_CASE("gradcheck: batch norm in train and eval mode") {
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(5000 + s);
    const Index c = pick(rng, 1, 3);
    // With only a handful of values per channel the normalized output is
    // almost constant and its input gradient sinks into finite-difference
    // noise, so keep at least eight values per channel.
    Tensor x = random_tensor({pick(rng, 2, 4), c, pick(rng, 2, 3), pick(rng, 2, 3)}, rng, 1.5, true);
    Tensor g = random_tensor({c}, rng, 1.0, true), b = random_tensor({c}, rng, 1.0, true);
    Tensor rm = random_tensor({c}, rng), rv = Tensor::full({c}, 0.7);
    auto train = [&](auto& v) {
      Tensor m = rm.clone(), var = rv.clone();
      return batch_norm(v[0], v[1], v[2], m, var, NormMode::Train);
    };
    CHECK(gradcheck(train, {x, g, b}, rng) < kTolerance);
    auto eval = [&](auto& v) { return batch_norm(v[0], v[1], v[2], rm, rv, NormMode::Eval); };
    CHECK(gradcheck(eval, {x, g, b}, rng) < kTolerance);
  }
}

TEST_CASE("gradcheck: pooling") {
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(6000 + s);
    Tensor x = random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 2, 6), pick(rng, 2, 6)},
                             rng, 1.0, true);
    CHECK(gradcheck([](auto& v) { return max_pool3d(v[0], {1, 2, 2}, {1, 2, 2}); }, {x}, rng) < kTolerance);
    Tensor y = random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 7), pick(rng, 2, 7)}, rng, 1.0, true);
    CHECK(gradcheck([](auto& v) { return max_pool2d(v[0], {2, 2}, {2, 2}); }, {y}, rng) < kTolerance);
    const Pair out{pick(rng, 1, y.dim(2)), pick(rng, 1, y.dim(3))};
    CHECK(gradcheck([&](auto& v) { return adaptive_avg_pool2d(v[0], out); }, {y}, rng) < kTolerance);
  }
}

TEST_CASE("gradcheck: losses") {
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(7000 + s);
    const Index n = pick(rng, 1, 5);
    Tensor logits = random_tensor({n, 2}, rng, 1.0, true);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int& l : labels) l = static_cast<int>(pick(rng, 0, 1));
    auto ce = [&](auto& v) { return model::cross_entropy_loss(softmax(v[0], 1), labels); };
    CHECK(gradcheck(ce, {logits}, rng) < kTolerance);

    Tensor pred = random_tensor({n, 1, 48, 48}, rng, 1.0, true), label = random_tensor({n, 1, 48, 48}, rng, 1.0, true);
    const RowMatrix<double> wm = model::build_weight_matrix();
    auto reg = [&](auto& v) { return model::regression_loss(v[0], v[1], wm); };
    CHECK(gradcheck(reg, {pred, label}, rng) < kTolerance);
  }
}

TEST_CASE("gradcheck: end-to-end combined loss on a two-sample batch") {
  Rng rng(8000);
  model::ModelConfig mc;
  model::Network net(mc);
  for (Parameter& p : net.store().parameters())
    for (Index i = 0; i < p.tensor.numel(); ++i) p.tensor[i] = std::normal_distribution<double>(0.0, 0.15)(rng);
  for (Parameter& p : net.store().parameters()) p.tensor.set_requires_grad();
  Tensor radar = random_tensor({2, 1, 5, 54, 54}, rng), sat = random_tensor({2, 13, 3, 27, 27}, rng);
  Tensor label = random_tensor({2, 1, 48, 48}, rng);
  const std::vector<int> labels = {0, 1};
  const RowMatrix<double> wm = model::build_weight_matrix();

  // Batch statistics are recomputed on every call; running buffers are
  // restored so repeated evaluations see identical state.
  std::vector<Vector> buffers;
  for (const Parameter& b : net.store().buffers()) buffers.push_back(b.tensor.data());
  auto loss = [&] {
    for (std::size_t i = 0; i < buffers.size(); ++i) net.store().buffers()[i].tensor.data() = buffers[i];
    const model::Outputs out = net.forward(radar, sat, NormMode::Train);
    return model::combined_loss(model::cross_entropy_loss(out.probs, labels),
                                model::regression_loss(out.regression, label, wm), 1.0, 1.0);
  };
  net.store().zero_grad();
  backward(loss());

  std::vector<double> a, n;
  for (Parameter& p : net.store().parameters()) {
    for (int k = 0; k < 3; ++k) {
      const Index i = pick(rng, 0, p.tensor.numel() - 1);
      const double saved = p.tensor[i];
      NoGradGuard guard;
      p.tensor[i] = saved + 1e-6;
      const double up = loss().item();
      p.tensor[i] = saved - 1e-6;
      const double down = loss().item();
      p.tensor[i] = saved;
      a.push_back(p.tensor.grad()[i]);
      n.push_back((up - down) / 2e-6);
    }
  }
  const double err = test::relative_error(Eigen::Map<Vector>(a.data(), Index(a.size())),
                                          Eigen::Map<Vector>(n.data(), Index(n.size())));
  CAPTURE(err);
  CHECK(err < 1e-3);
}
