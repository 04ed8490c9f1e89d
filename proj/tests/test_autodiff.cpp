#include <doctest.h>

#include <cmath>

#include "ditic/conv.hpp"
#include "ditic/gradcheck.hpp"
#include "ditic/ops.hpp"

using namespace ditic;

namespace {

Tensor<double> randn(Shape shape, uint64_t seed, double lo = -2.0, double hi = 2.0) {
  Rng rng(seed);
  return Tensor<double>::rand_uniform(std::move(shape), rng, lo, hi);
}

}  // namespace

TEST_CASE("sum of x gives all-ones gradient") {
  Tensor<double> x = randn({3, 5}, 1);
  Tape<double> tape;
  auto xl = tape.leaf(x);
  auto [loss, grads] = autodiff_eval(tape, {{"x", xl}}, sum(xl));
  double expect = 0;
  for (int64_t i = 0; i < x.size(); ++i) expect += x[i];
  CHECK(loss == doctest::Approx(expect));
  for (int64_t i = 0; i < x.size(); ++i) CHECK(grads["x"][i] == 1.0);
}

TEST_CASE("zero-scaled loss gives all-zero gradient") {
  Tensor<double> x = randn({4}, 2);
  Tape<double> tape;
  auto xl = tape.leaf(x);
  auto [loss, grads] = autodiff_eval(tape, {{"x", xl}}, sum(mul_scalar(xl, 0.0)));
  CHECK(loss == 0.0);
  for (int64_t i = 0; i < x.size(); ++i) CHECK(grads["x"][i] == 0.0);
}

TEST_CASE("non-participating leaves get zero gradients") {
  Tensor<double> x = randn({3}, 3);
  Tensor<double> y = randn({2}, 4);
  Tape<double> tape;
  auto xl = tape.leaf(x);
  auto yl = tape.leaf(y);
  auto [loss, grads] = autodiff_eval(tape, {{"x", xl}, {"y", yl}}, sum(xl));
  (void)loss;
  CHECK(grads["y"].shape() == y.shape());
  for (int64_t i = 0; i < y.size(); ++i) CHECK(grads["y"][i] == 0.0);
}

TEST_CASE("non-scalar loss and shape mismatches are structured errors") {
  Tensor<double> x = randn({3}, 5);
  Tape<double> tape;
  auto xl = tape.leaf(x);
  CHECK_THROWS_AS(tape.backward(xl), TensorError);
  CHECK_THROWS_WITH_AS(add(xl, randn({4}, 6)), doctest::Contains("add: shape mismatch"),
                       TensorError);
  CHECK_THROWS_WITH_AS(matmul(randn({2, 3}, 7), randn({2, 3}, 8)),
                       doctest::Contains("matmul"), TensorError);
}

TEST_CASE("layernorm-dot loss matches central finite differences") {
  // loss = sum(layernorm(x) . w) on a random 4x8 input, eps = 1e-4.
  Tensor<double> x = randn({4, 8}, 11);
  Tensor<double> w = randn({4, 8}, 12);
  Tensor<double> gamma = Tensor<double>::full({8}, 1.0);
  Tensor<double> beta({8});
  auto f = [&](const Tensor<double>& in) {
    return sum(mul(layernorm_rows(in, gamma, beta), w));
  };
  auto report = finite_diff_gradcheck<double>(f, x, 1e-4);
  CHECK(report.max_rel_err < 1e-5);
  CHECK_FALSE(report.nondiff_node);
}

TEST_CASE("gradcheck is exact for quadratics") {
  Tensor<double> x = randn({6}, 13);
  auto f = [](const Tensor<double>& in) { return mul_scalar(sum(square(in)), 0.5); };
  auto report = finite_diff_gradcheck<double>(f, x, 1e-4);
  CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("gradcheck flags hard round, accepts straight-through") {
  Tensor<double> x = randn({5}, 14);
  auto hard = [](const Tensor<double>& in) { return sum(round_hard(in)); };
  auto st = [](const Tensor<double>& in) { return sum(round_st(in)); };
  CHECK(finite_diff_gradcheck<double>(hard, x, 1e-4).nondiff_node);
  auto r = finite_diff_gradcheck<double>(st, x, 1e-4);
  CHECK_FALSE(r.nondiff_node);
}

TEST_CASE("gradcheck reports non-finite function values") {
  Tensor<double> x({2}, {0.5, -1.0});
  auto f = [](const Tensor<double>& in) { return sum(log(in)); };
  CHECK_THROWS_WITH_AS((finite_diff_gradcheck<double>(f, x, 1e-4)),
                       doctest::Contains("non-finite"), TensorError);
}

TEST_CASE("softmax rows sum to one, layernorm is standardized") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Tensor<double> x = randn({6, 17}, 100 + seed);
    Tensor<double> sm = softmax_rows(x);
    for (int r = 0; r < 6; ++r) {
      double s = 0;
      for (int c = 0; c < 17; ++c) s += sm[r * 17 + c];
      CHECK(std::fabs(s - 1.0) < 1e-6);
    }
    Tensor<double> gamma = Tensor<double>::full({17}, 1.0);
    Tensor<double> beta({17});
    Tensor<double> ln = layernorm_rows(x, gamma, beta);
    for (int r = 0; r < 6; ++r) {
      double m = 0, v = 0;
      for (int c = 0; c < 17; ++c) m += ln[r * 17 + c];
      m /= 17;
      for (int c = 0; c < 17; ++c) v += (ln[r * 17 + c] - m) * (ln[r * 17 + c] - m);
      v /= 17;
      CHECK(std::fabs(m) < 1e-6);
      CHECK(std::fabs(v - 1.0) < 1e-5);
    }
  }
}

TEST_CASE("attention: single key returns v exactly") {
  Tensor<double> q = randn({1, 8}, 21);
  Tensor<double> k = randn({1, 8}, 22);
  Tensor<double> v = randn({1, 8}, 23);
  Tensor<double> out = attention(q, k, v, 2);
  for (int i = 0; i < 8; ++i) CHECK(out[i] == doctest::Approx(v[i]).epsilon(1e-12));
}

TEST_CASE("attention: identical keys give the mean of v rows") {
  const int L = 5, d = 6;
  Tensor<double> q = randn({L, d}, 24);
  Tensor<double> k({L, d});
  double* kd = k.mutable_data();
  for (int r = 0; r < L; ++r)
    for (int c = 0; c < d; ++c) kd[r * d + c] = 0.3 * c - 0.1;
  Tensor<double> v = randn({L, d}, 25);
  Tensor<double> out = attention(q, k, v, 1);
  for (int c = 0; c < d; ++c) {
    double m = 0;
    for (int r = 0; r < L; ++r) m += v[r * d + c];
    m /= L;
    for (int r = 0; r < L; ++r) CHECK(out[r * d + c] == doctest::Approx(m).epsilon(1e-10));
  }
}

TEST_CASE("attention matches the naive per-head oracle") {
  const int L = 8, d = 16, heads = 2, dh = d / heads;
  Tensor<double> q = randn({L, d}, 31);
  Tensor<double> k = randn({L, d}, 32);
  Tensor<double> v = randn({L, d}, 33);
  Tensor<double> out = attention(q, k, v, heads);

  // Naive O(L^2) reference, one head at a time.
  std::vector<double> ref(L * d, 0.0);
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < L; ++i) {
      std::vector<double> logits(L);
      double mx = -1e300;
      for (int j = 0; j < L; ++j) {
        double s = 0;
        for (int c = 0; c < dh; ++c) s += q[i * d + h * dh + c] * k[j * d + h * dh + c];
        logits[j] = s / std::sqrt(double(dh));
        mx = std::max(mx, logits[j]);
      }
      double denom = 0;
      for (int j = 0; j < L; ++j) denom += std::exp(logits[j] - mx);
      for (int j = 0; j < L; ++j) {
        double wgt = std::exp(logits[j] - mx) / denom;
        for (int c = 0; c < dh; ++c) ref[i * d + h * dh + c] += wgt * v[j * d + h * dh + c];
      }
    }
  }
  for (int i = 0; i < L * d; ++i) CHECK(std::fabs(out[i] - ref[i]) < 1e-6);
}

TEST_CASE("attention input validation") {
  Tensor<double> q = randn({2, 8}, 41);
  Tensor<double> bad = q.clone();
  bad.mutable_data()[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(attention(bad, q, q, 2), TensorError);
  CHECK_THROWS_AS(attention(q, q, q, 3), TensorError);  // 8 % 3 != 0
  Tensor<double> empty({0, 8});
  CHECK_THROWS_AS(attention(empty, empty, empty, 2), TensorError);
}

TEST_CASE("every layer passes finite-difference checks across 20 seeds") {
  struct Case {
    const char* name;
    std::function<double(uint64_t)> run;  // returns max_rel_err
  };

  auto check_fn = [](const std::function<Tensor<double>(const Tensor<double>&)>& f,
                     const Tensor<double>& x) {
    return finite_diff_gradcheck<double>(f, x, 1e-5).max_rel_err;
  };

  std::vector<Case> cases;
  cases.push_back({"linear", [&](uint64_t s) {
    Tensor<double> w = randn({6, 4}, s * 7 + 1);
    Tensor<double> b = randn({4}, s * 7 + 2);
    Tensor<double> x = randn({3, 6}, s * 7 + 3);
    // gradient w.r.t. the weight
    auto f = [&](const Tensor<double>& wt) { return sum(square(bias_add(matmul(x, wt), b))); };
    return check_fn(f, w);
  }});
  cases.push_back({"conv", [&](uint64_t s) {
    Tensor<double> x = randn({2, 5, 5}, s * 11 + 1);
    Tensor<double> w = randn({3, 2 * 9}, s * 11 + 2);
    Tensor<double> b = randn({3}, s * 11 + 3);
    auto f = [&](const Tensor<double>& in) { return sum(square(conv2d(in, w, b, 3, 3, 2, 1))); };
    return check_fn(f, x);
  }});
  cases.push_back({"depthwise", [&](uint64_t s) {
    Tensor<double> x = randn({3, 4, 4}, s * 13 + 1);
    Tensor<double> w = randn({3, 9}, s * 13 + 2);
    Tensor<double> b = randn({3}, s * 13 + 3);
    auto f = [&](const Tensor<double>& in) {
      return sum(square(depthwise_conv2d(in, w, b, 3, 3, 1)));
    };
    return check_fn(f, x);
  }});
  cases.push_back({"layernorm", [&](uint64_t s) {
    Tensor<double> gamma = randn({6}, s * 17 + 1, 0.5, 1.5);
    Tensor<double> beta = randn({6}, s * 17 + 2);
    Tensor<double> w = randn({4, 6}, s * 17 + 3);
    Tensor<double> x = randn({4, 6}, s * 17 + 4);
    auto f = [&](const Tensor<double>& in) { return sum(mul(layernorm_rows(in, gamma, beta), w)); };
    return check_fn(f, x);
  }});
  cases.push_back({"attention", [&](uint64_t s) {
    Tensor<double> k = randn({4, 8}, s * 19 + 1);
    Tensor<double> v = randn({4, 8}, s * 19 + 2);
    Tensor<double> w = randn({4, 8}, s * 19 + 3);
    Tensor<double> q = randn({4, 8}, s * 19 + 4);
    auto f = [&](const Tensor<double>& in) { return sum(mul(attention(in, k, v, 2), w)); };
    return check_fn(f, q);
  }});
  cases.push_back({"softmax", [&](uint64_t s) {
    Tensor<double> w = randn({3, 7}, s * 23 + 1);
    Tensor<double> x = randn({3, 7}, s * 23 + 2);
    auto f = [&](const Tensor<double>& in) { return sum(mul(softmax_rows(in), w)); };
    return check_fn(f, x);
  }});
  cases.push_back({"silu", [&](uint64_t s) {
    Tensor<double> x = randn({20}, s * 29 + 1);
    auto f = [](const Tensor<double>& in) { return sum(square(silu(in))); };
    return check_fn(f, x);
  }});
  cases.push_back({"gelu", [&](uint64_t s) {
    Tensor<double> x = randn({20}, s * 31 + 1);
    auto f = [](const Tensor<double>& in) { return sum(square(gelu(in))); };
    return check_fn(f, x);
  }});

  for (const auto& c : cases) {
    double worst = 0;
    for (uint64_t seed = 0; seed < 20; ++seed) worst = std::max(worst, c.run(seed));
    INFO(c.name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("misc op gradients: erf, softplus, sincos, broadcast, slicing, pad") {
  auto check_fn = [](const std::function<Tensor<double>(const Tensor<double>&)>& f,
                     const Tensor<double>& x) {
    return finite_diff_gradcheck<double>(f, x, 1e-5).max_rel_err;
  };
  Tensor<double> x = randn({3, 4}, 51);
  Tensor<double> w = randn({3, 4}, 52);

  CHECK(check_fn([&](const Tensor<double>& in) { return sum(mul(erf(in), w)); }, x) < 1e-6);
  CHECK(check_fn([&](const Tensor<double>& in) { return sum(mul(softplus(in), w)); }, x) < 1e-6);
  CHECK(check_fn([&](const Tensor<double>& in) { return sum(square(reciprocal(add_scalar(in, 3.0)))); }, x) < 1e-6);
  CHECK(check_fn([&](const Tensor<double>& in) {
          Tensor<double> s = randn({3}, 53);
          return sum(square(row_scale(row_add(in, s), s)));
        }, x) < 1e-6);
  CHECK(check_fn([&](const Tensor<double>& in) {
          return sum(square(concat_cols<double>({slice_cols(in, 1, 2), slice_cols(in, 0, 1)})));
        }, x) < 1e-6);
  CHECK(check_fn([&](const Tensor<double>& in) {
          return sum(square(mul_bcast_scalar(in, mean(in))));
        }, x) < 1e-6);

  Tensor<double> t = randn({5}, 54, 0.0, 1.0);
  std::vector<double> freqs = {1.0, 2.0, 7.5};
  Tensor<double> wf = randn({5, 6}, 56);
  CHECK(check_fn([&](const Tensor<double>& in) { return sum(mul(sincos_embed(in, freqs), wf)); }, t) < 1e-6);

  Tensor<double> img = randn({2, 3, 4}, 55);
  CHECK(check_fn([&](const Tensor<double>& in) {
          return sum(square(reflect_pad(in, 2, 1, 3, 2)));
        }, img) < 1e-6);
  CHECK(check_fn([&](const Tensor<double>& in) {
          return sum(square(upsample_nearest2x(in)));
        }, img) < 1e-6);
  CHECK(check_fn([&](const Tensor<double>& in) {
          return sum(square(crop2d(in, 1, 1, 2, 2)));
        }, img) < 1e-6);
}

TEST_CASE("forward replay is bit-identical") {
  Rng rng(99);
  Tensor<float> x = Tensor<float>::randn({4, 6}, rng);
  auto run = [&]() {
    Tensor<float> g = Tensor<float>::full({6}, 1.0f);
    Tensor<float> b({6});
    Tensor<float> y = layernorm_rows(x, g, b);
    y = softmax_rows(matmul(y, transpose2d(y)));
    return sum(y).item();
  };
  float a = run();
  float c = run();
  CHECK(std::memcmp(&a, &c, sizeof(float)) == 0);
}

TEST_CASE("gradients accumulate across fan-out") {
  Tensor<double> x = randn({4}, 61);
  Tape<double> tape;
  auto xl = tape.leaf(x);
  auto y = add(mul(xl, xl), mul_scalar(xl, 3.0));  // x^2 + 3x
  tape.backward(sum(y));
  auto g = tape.grad(xl);
  for (int i = 0; i < 4; ++i) CHECK(g[i] == doctest::Approx(2 * x[i] + 3.0));
}
