#include <cmath>
#include <random>

#include <doctest.h>

#include "errors.hpp"
#include "oracles.hpp"
#include "tensor.hpp"

using namespace dormant;

namespace {

std::vector<double> as_double(const Tensor& t) { return {t.data.begin(), t.data.end()}; }

void require_gradcheck(const oracle::GradCheck& r) {
  CHECK(r.checked > 0);
  CHECK(r.worst < 1e-4);
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("tensor construction validates sizes") {
    CHECK(Tensor({2, 3}).numel() == 6);
    CHECK(Tensor::scalar(2.5f).item() == 2.5f);
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>(5)), Error);
    CHECK_THROWS_AS(Tensor({2, 0}), Error);
    CHECK_THROWS_AS(Tensor({2}).item(), Error);
  }

  TEST_CASE("matmul identity and hand product") {
    Graph g;
    const auto r = matmul(g.constant(Tensor({2, 2}, {1, 0, 0, 1})), g.constant(Tensor({2, 2}, {3, 4, 5, 6})));
    CHECK(r.value().data == std::vector<float>{3, 4, 5, 6});
    const auto p = matmul(g.constant(Tensor({1, 2}, {1, 2})), g.constant(Tensor({2, 1}, {3, 4})));
    CHECK(p.value().shape == Shape{1, 1});
    CHECK(p.value()[0] == 11.0f);
  }

  TEST_CASE("matmul matches triple-loop oracle") {
    std::mt19937_64 gen(1);
    const Tensor a = oracle::random_tensor({4, 5}, gen), b = oracle::random_tensor({5, 3}, gen);
    Graph g;
    const auto c = matmul(g.constant(a), g.constant(b)).value();
    const auto ref = oracle::matmul(as_double(a), as_double(b), 4, 5, 3);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::fabs(c[i] - ref[i]) < 1e-6);
  }

  TEST_CASE("matmul shape mismatch names both shapes") {
    Graph g;
    try {
      matmul(g.constant(Tensor({2, 3})), g.constant(Tensor({2, 3})));
      FAIL("expected a dimension error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Dimension);
      CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
    }
  }

  TEST_CASE("gemm kernels agree with the oracle for transposed operands") {
    std::mt19937_64 gen(2);
    const Tensor a = oracle::random_tensor({7, 6}, gen), b = oracle::random_tensor({7, 5}, gen);
    std::vector<float> c(6 * 5);
    gemm_tn(6, 5, 7, a.data.data(), b.data.data(), c.data(), false);
    std::vector<double> at(42);
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 6; ++j) at[static_cast<std::size_t>(j * 7 + i)] = a[static_cast<std::size_t>(i * 6 + j)];
    const auto ref = oracle::matmul(at, as_double(b), 6, 7, 5);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::fabs(c[i] - ref[i]) < 1e-5);
  }

  TEST_CASE("conv2d scalar kernel and zero input") {
    Graph g;
    const auto y = conv2d(g.constant(Tensor({1, 1, 3, 3}, 1.0f)), g.constant(Tensor({1, 1, 1, 1}, {2})),
                          g.constant(Tensor({1}, {0})));
    CHECK(y.value().shape == Shape{1, 1, 3, 3});
    for (float v : y.value().data) CHECK(v == 2.0f);

    std::mt19937_64 gen(3);
    const auto z = conv2d(g.constant(Tensor({2, 2, 5, 5})), g.constant(oracle::random_tensor({3, 2, 3, 3}, gen)),
                          g.constant(Tensor({3}, {0.5f, -1.0f, 2.0f})));
    for (int n = 0; n < 2; ++n)
      for (int f = 0; f < 3; ++f)
        for (int i = 0; i < 9; ++i) CHECK(z.value()[static_cast<std::size_t>((n * 3 + f) * 9 + i)] == (f == 0 ? 0.5f : f == 1 ? -1.0f : 2.0f));
  }

  TEST_CASE("conv2d matches sliding-window oracle") {
    std::mt19937_64 gen(4);
    for (const auto& [in, ker] : std::vector<std::pair<Shape, Shape>>{{{1, 1, 5, 5}, {1, 1, 3, 3}},
                                                                       {{2, 3, 7, 6}, {4, 3, 3, 2}}}) {
      const Tensor x = oracle::random_tensor(in, gen), k = oracle::random_tensor(ker, gen);
      const Tensor b = oracle::random_tensor({ker[0]}, gen);
      Graph g;
      const auto y = conv2d(g.constant(x), g.constant(k), g.constant(b)).value();
      const auto ref = oracle::conv2d(x, k, b);
      REQUIRE(y.numel() == ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::fabs(y[i] - ref[i]) < 1e-6);
    }
  }

  TEST_CASE("conv2d rejects kernels larger than the input") {
    Graph g;
    CHECK_THROWS_AS(conv2d(g.constant(Tensor({1, 1, 2, 2})), g.constant(Tensor({1, 1, 3, 3})),
                           g.constant(Tensor({1}))),
                    Error);
  }

  TEST_CASE("elementwise semantics") {
    Graph g;
    CHECK(relu(g.constant(Tensor({3}, {-1, 0, 2}))).value().data == std::vector<float>{0, 0, 2});
    CHECK(l2norm(g.constant(Tensor({2}, {3, 4}))).value().item() == 5.0f);
    CHECK(abs(g.constant(Tensor({3}, {-2, 0, 1.5f}))).value().data == std::vector<float>{2, 0, 1.5f});
    CHECK(sum(g.constant(Tensor({2, 2}, {1, 2, 3, 4}))).value().item() == 10.0f);
    const auto mp = maxpool2x2(g.constant(Tensor({1, 1, 2, 3}, {1, 5, 2, 3, 4, 9}))).value();
    CHECK(mp.shape == Shape{1, 1, 1, 1});
    CHECK(mp[0] == 5.0f);
    CHECK_THROWS_AS(add(g.constant(Tensor({2})), g.constant(Tensor({3}))), Error);
    CHECK_THROWS_AS(div(g.constant(Tensor({1}, {1})), g.constant(Tensor({1}, {0}))), Error);
  }

  TEST_CASE("dot(a,a) equals squared l2norm") {
    std::mt19937_64 gen(5);
    for (int trial = 0; trial < 20; ++trial) {
      Graph g;
      const Var a = g.constant(oracle::random_tensor({17}, gen));
      const double n = l2norm(a).value().item();
      CHECK(std::fabs(dot(a, a).value().item() - n * n) < 1e-5);
    }
  }

  TEST_CASE("softmax cross-entropy values") {
    Graph g;
    const std::vector<int> zero{0};
    CHECK(softmax_cross_entropy(g.constant(Tensor({1, 2}, {0, 0})), zero).value().item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-6));
    const float sat = softmax_cross_entropy(g.constant(Tensor({1, 2}, {1000, 0})), zero).value().item();
    CHECK(std::isfinite(sat));
    CHECK(sat == doctest::Approx(0.0).epsilon(1e-6));

    std::mt19937_64 gen(6);
    const Tensor logits = oracle::random_tensor({3, 4}, gen, -3, 3);
    const std::vector<int> labels{2, 0, 3};
    CHECK(std::fabs(softmax_cross_entropy(g.constant(logits), labels).value().item() -
                    oracle::cross_entropy(logits, labels)) < 1e-5);
    const std::vector<int> bad{4, 0, 0};
    CHECK_THROWS_AS(softmax_cross_entropy(g.constant(logits), bad), Error);
  }

  TEST_CASE("backward basics") {
    Graph g;
    const Var x = g.leaf(Tensor({2, 3}, {1, -2, 3, 0.5f, 7, -1}), true);
    g.backward(sum(x));
    for (float v : g.grad(x).data) CHECK(v == 1.0f);

    Graph h;
    const Tensor xv({4}, {1, -2, 3, 0.5f});
    const Var y = h.leaf(xv, true);
    h.backward(dot(y, y));
    for (std::size_t i = 0; i < 4; ++i) CHECK(h.grad(y)[i] == 2.0f * xv[i]);

    // Accumulates until reset.
    h.backward(dot(y, y));
    CHECK(h.grad(y)[0] == 4.0f);
    h.zero_grad();
    CHECK(h.grad(y)[0] == 0.0f);

    CHECK_THROWS_AS(h.backward(y), Error);
  }

  TEST_CASE("relu and abs subgradients at zero are zero") {
    Graph g;
    const Var x = g.leaf(Tensor({3}, {0, 0, 1}), true);
    g.backward(add(sum(relu(x)), sum(abs(x))));
    CHECK(g.grad(x).data == std::vector<float>{0, 0, 2});
  }

  TEST_CASE("finite-difference gradient checks on every op") {
    std::mt19937_64 gen(7);
    using V = const std::vector<Var>&;
    SUBCASE("matmul") {
      require_gradcheck(oracle::check_gradients(
          {oracle::random_tensor({3, 4}, gen), oracle::random_tensor({4, 2}, gen)},
          [](Graph&, V v) { return matmul(v[0], v[1]); }));
    }
    SUBCASE("bias_add") {
      require_gradcheck(oracle::check_gradients(
          {oracle::random_tensor({3, 4}, gen), oracle::random_tensor({4}, gen)},
          [](Graph&, V v) { return bias_add(v[0], v[1]); }));
    }
    SUBCASE("conv2d") {
      require_gradcheck(oracle::check_gradients(
          {oracle::random_tensor({2, 2, 5, 5}, gen), oracle::random_tensor({3, 2, 3, 3}, gen),
           oracle::random_tensor({3}, gen)},
          [](Graph&, V v) { return conv2d(v[0], v[1], v[2]); }));
    }
    SUBCASE("relu") {
      require_gradcheck(oracle::check_gradients({oracle::away_from_zero({5, 4}, gen)},
                                                [](Graph&, V v) { return relu(v[0]); }));
    }
    SUBCASE("maxpool2x2") {
      // Well-separated distinct values so a step of 1e-3 never changes the winner.
      Tensor x({2, 1, 4, 5});
      std::vector<int> perm(x.numel());
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
      std::shuffle(perm.begin(), perm.end(), gen);
      for (std::size_t i = 0; i < perm.size(); ++i) x[i] = 0.05f * static_cast<float>(perm[i]) - 1.0f;
      require_gradcheck(
          oracle::check_gradients({x}, [](Graph&, V v) { return maxpool2x2(v[0]); }));
    }
    SUBCASE("flatten and reshape") {
      require_gradcheck(oracle::check_gradients({oracle::random_tensor({2, 3, 2, 2}, gen)}, [](Graph&, V v) {
        return add(reshape(flatten(v[0]), {4, 6}), reshape(v[0], {4, 6}));
      }));
    }
    SUBCASE("add sub mul neg scale add_scalar") {
      require_gradcheck(oracle::check_gradients(
          {oracle::random_tensor({6}, gen), oracle::random_tensor({6}, gen)}, [](Graph&, V v) {
            const Var y = add(mul(v[0], v[1]), sub(scale(v[0], 1.5f), neg(add_scalar(v[1], 0.25f))));
            return y;
          }));
    }
    SUBCASE("div") {
      require_gradcheck(oracle::check_gradients(
          {oracle::random_tensor({6}, gen), oracle::away_from_zero({6}, gen, 0.5, 1.5)},
          [](Graph&, V v) { return div(v[0], v[1]); }));
    }
    SUBCASE("abs and tanh") {
      require_gradcheck(oracle::check_gradients({oracle::away_from_zero({8}, gen)}, [](Graph&, V v) {
        return add(abs(v[0]), tanh(v[0]));
      }));
    }
    SUBCASE("sum dot l2norm") {
      require_gradcheck(oracle::check_gradients(
          {oracle::random_tensor({7}, gen), oracle::random_tensor({7}, gen)},
          [](Graph&, V v) { return add(add(sum(v[0]), dot(v[0], v[1])), l2norm(v[1])); }));
    }
    SUBCASE("softmax cross-entropy") {
      const std::vector<int> labels{1, 0, 3, 3, 2};
      require_gradcheck(oracle::check_gradients({oracle::random_tensor({5, 4}, gen, -2, 2)},
                                                [labels](Graph&, V v) { return softmax_cross_entropy(v[0], labels); }));
    }
    SUBCASE("scatter_add") {
      const std::vector<std::uint32_t> idx{1, 4, 9};
      require_gradcheck(oracle::check_gradients(
          {oracle::random_tensor({3, 4}, gen), oracle::random_tensor({3}, gen)},
          [idx](Graph&, V v) { return scatter_add(v[0], idx, v[1]); }));
    }
    SUBCASE("stamp") {
      require_gradcheck(oracle::check_gradients(
          {oracle::random_tensor({2, 3, 4, 4}, gen, 0, 1), oracle::random_tensor({4, 4}, gen, 0, 1),
           oracle::random_tensor({3, 4, 4}, gen, 0, 1)},
          [](Graph&, V v) { return stamp(v[0], v[1], v[2]); }));
    }
  }

  TEST_CASE("stamp stays in the unit interval") {
    std::mt19937_64 gen(8);
    Graph g;
    const auto y = stamp(g.constant(oracle::random_tensor({3, 2, 5, 5}, gen, 0, 1)),
                         g.constant(oracle::random_tensor({5, 5}, gen, 0, 1)),
                         g.constant(oracle::random_tensor({2, 5, 5}, gen, 0, 1)))
                       .value();
    for (float v : y.data) CHECK((v >= 0.0f && v <= 1.0f));
  }

  TEST_CASE("forward ops are deterministic and finite") {
    std::mt19937_64 gen(9);
    const Tensor x = oracle::random_tensor({8, 3, 9, 9}, gen), k = oracle::random_tensor({4, 3, 3, 3}, gen);
    const Tensor b = oracle::random_tensor({4}, gen);
    auto run = [&] {
      Graph g;
      return maxpool2x2(relu(conv2d(g.constant(x), g.constant(k), g.constant(b)))).value();
    };
    const Tensor a = run();
    CHECK(bitwise_equal(a, run()));
    CHECK(all_finite(a));
  }
}
