#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "gcg/ops.hpp"
#include "gcg/rng.hpp"
#include "gcg/tensor.hpp"
#include "oracles.hpp"

using namespace gcg;

namespace {

Tensor rand_param(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor::from_data(shape, oracle::rand_vec(rng, shape_numel(shape), lo, hi))
      .set_requires_grad(true);
}

// uniform magnitude in [0.25, 1], random sign: keeps relu/abs kinks at a
// safe distance from the finite-difference step
Tensor rand_param_off_zero(const Shape& shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(0.25, 1.0) * (rng.next_double() < 0.5 ? -1.0 : 1.0);
  return Tensor::from_data(shape, std::move(v)).set_requires_grad(true);
}

// scalarize with fixed random output weights so backward index bugs can't
// hide behind a uniform output gradient
Tensor weighted_sum(const Tensor& t, const Tensor& w_const) {
  return ops::sum(ops::mul(t, w_const));
}

Tensor const_like(const Tensor& t, Rng& rng) {
  return Tensor::from_data(t.shape(), oracle::rand_vec(rng, t.size(), -1.0, 1.0));
}

void check_fd(std::vector<Parameter> params, const std::function<Tensor()>& loss,
              double tol = 1e-5) {
  oracle::FdReport rep = oracle::fd_check(params, loss);
  CAPTURE(rep.worst_param);
  CAPTURE(rep.worst_index);
  CAPTURE(rep.analytic);
  CAPTURE(rep.fd);
  CHECK(rep.max_rel < tol);
}

} // namespace

TEST_CASE("shape helpers") {
  CHECK(shape_numel({2, 3, 4}) == 24);
  CHECK(shape_str({2, 3}) == "[2,3]");
  CHECK(shape_eq({2, 3}, {2, 3}));
  CHECK_FALSE(shape_eq({2, 3}, {3, 2}));
  CHECK_THROWS_AS(Tensor::zeros({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
}

TEST_CASE("tensor handles share storage; scalars unwrap") {
  Tensor a = Tensor::full({2, 2}, 3.0);
  Tensor b = a;
  b.mutable_data()[0] = 7.0;
  CHECK(a.data()[0] == 7.0);
  CHECK(Tensor::scalar(2.5).value() == 2.5);
  CHECK_THROWS_AS(a.value(), ContractError);
  CHECK_THROWS_AS(Tensor{}.shape(), ContractError);
  CHECK_THROWS_AS(a.grad(), ContractError);
}

TEST_CASE("backward computes simple closed forms and accumulates fan-out") {
  Tensor x = Tensor::from_data({3}, {1.0, -2.0, 0.5}).set_requires_grad(true);
  Tensor c = Tensor::from_data({3}, {2.0, 3.0, -1.0});
  {
    Tape tape;
    // loss = sum(c * (x + x)) => dx = 2c
    Tensor loss = ops::sum(ops::mul(c, ops::add(x, x)));
    CHECK(loss.value() == doctest::Approx(2.0 * (2.0 - 6.0 - 0.5)));
    tape.backward(loss);
  }
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(6.0));
  CHECK(x.grad()[2] == doctest::Approx(-2.0));
}

TEST_CASE("backward requires a scalar recorded loss") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}).set_requires_grad(true);
  Tape tape;
  Tensor y = ops::add(x, x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
  CHECK_THROWS_AS(tape.backward(Tensor{}), ContractError);
}

TEST_CASE("ops outside a tape do not build a graph") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}).set_requires_grad(true);
  Tensor y = ops::add(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
  {
    Tape tape;
    Tensor z = ops::add(x, x);
    CHECK(z.requires_grad());
    CHECK(tape.num_recorded() == 1);
    // constants-only subgraphs stay off the tape
    Tensor c = ops::add(Tensor::full({2}, 1.0), Tensor::full({2}, 2.0));
    CHECK_FALSE(c.requires_grad());
    CHECK(tape.num_recorded() == 1);
  }
}

TEST_CASE("leaves without requires_grad receive no gradient") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}).set_requires_grad(true);
  Tensor b = Tensor::from_data({2}, {5.0, 5.0});
  Tape tape;
  Tensor loss = ops::sum(ops::mul(x, b));
  tape.backward(loss);
  CHECK(x.has_grad());
  CHECK_FALSE(b.has_grad());
}

TEST_CASE("elementwise forwards") {
  Tensor a = Tensor::from_data({2, 2}, {1.0, -2.0, 3.0, -4.0});
  Tensor b = Tensor::from_data({2, 2}, {0.5, 0.5, -1.0, 2.0});
  CHECK(ops::add(a, b).data() == std::vector<double>{1.5, -1.5, 2.0, -2.0});
  CHECK(ops::mul(a, b).data() == std::vector<double>{0.5, -1.0, -3.0, -8.0});
  CHECK(ops::scale(a, -2.0).data() == std::vector<double>{-2.0, 4.0, -6.0, 8.0});
  CHECK(ops::add_scalar(a, 1.0).data() == std::vector<double>{2.0, -1.0, 4.0, -3.0});
  CHECK(ops::relu(a).data() == std::vector<double>{1.0, 0.0, 3.0, 0.0});
  CHECK_THROWS_AS(ops::add(a, Tensor::zeros({3})), DimensionError);
}

TEST_CASE("relu subgradient at zero is zero") {
  Tensor x = Tensor::from_data({3}, {-1.0, 0.0, 2.0}).set_requires_grad(true);
  Tape tape;
  tape.backward(ops::sum(ops::relu(x)));
  CHECK(x.grad() == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("sigmoid is stable and strictly inside (0,1)") {
  Tensor x = Tensor::from_data({4}, {-1000.0, -5.0, 5.0, 1000.0});
  Tensor y = ops::sigmoid(x);
  for (double v : y.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK(y.data()[1] == doctest::Approx(1.0 / (1.0 + std::exp(5.0))).epsilon(1e-12));
  CHECK(y.data()[2] == doctest::Approx(1.0 / (1.0 + std::exp(-5.0))).epsilon(1e-12));
}

TEST_CASE("softmax matches oracle and sums to one") {
  Rng rng(101);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> v = oracle::rand_vec(rng, 7, -4.0, 4.0);
    Tensor p = ops::softmax(Tensor::from_data({7}, v));
    std::vector<double> want = oracle::softmax(v);
    double s = 0;
    for (int i = 0; i < 7; ++i) {
      CHECK(p.data()[i] == doctest::Approx(want[i]).epsilon(1e-12));
      s += p.data()[i];
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  // rank-2: softmax per row
  Tensor m = Tensor::from_data({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.0, 1.0});
  Tensor p = ops::softmax(m);
  std::vector<double> r0 = oracle::softmax({1.0, 2.0, 3.0});
  std::vector<double> r1 = oracle::softmax({-1.0, 0.0, 1.0});
  for (int j = 0; j < 3; ++j) {
    CHECK(p.data()[j] == doctest::Approx(r0[j]).epsilon(1e-12));
    CHECK(p.data()[3 + j] == doctest::Approx(r1[j]).epsilon(1e-12));
  }
}

TEST_CASE("softmax of huge logits does not overflow") {
  Tensor p = ops::softmax(Tensor::from_data({3}, {1000.0, 1000.0, 999.0}));
  CHECK(std::isfinite(p.data()[0]));
  CHECK(p.data()[0] == doctest::Approx(p.data()[1]).epsilon(1e-12));
  CHECK(p.data()[0] > p.data()[2]);
}

TEST_CASE("finite differences: elementwise and reductions") {
  Rng rng(202);
  Tensor a = rand_param({3, 4}, rng);
  Tensor b = rand_param({3, 4}, rng);
  Tensor w = const_like(a, rng);
  std::vector<Parameter> ps = {{"a", ParamKind::weight, a}, {"b", ParamKind::weight, b}};
  check_fd(ps, [&] { return weighted_sum(ops::mul(ops::add(a, b), ops::mul(a, b)), w); });
  check_fd(ps, [&] {
    return ops::add(ops::sum(ops::mul(a, b)),
                    ops::add(ops::mean(ops::add(a, b)), ops::sum_square(a)));
  });
  check_fd(ps, [&] { return weighted_sum(ops::sigmoid(ops::mul(a, b)), w); });
  check_fd(ps, [&] { return weighted_sum(ops::scale(ops::add_scalar(ops::mul(a, b), 0.7), -1.3), w); });
}

TEST_CASE("finite differences: kinked and domain-limited ops") {
  Rng rng(203);
  Tensor a = rand_param_off_zero({4, 3}, rng);
  Tensor w = const_like(a, rng);
  std::vector<Parameter> ps = {{"a", ParamKind::weight, a}};
  check_fd(ps, [&] { return weighted_sum(ops::relu(a), w); });
  check_fd(ps, [&] { return ops::sum_abs(a); });
  // log needs positive arguments: square first
  check_fd(ps, [&] { return weighted_sum(ops::log_elem(ops::add_scalar(ops::mul(a, a), 0.1)), w); });
}

TEST_CASE("finite differences: softmax") {
  Rng rng(204);
  Tensor a = rand_param({2, 5}, rng, -2.0, 2.0);
  Tensor w = const_like(a, rng);
  std::vector<Parameter> ps = {{"a", ParamKind::weight, a}};
  check_fd(ps, [&] { return weighted_sum(ops::softmax(a), w); });
}

TEST_CASE("dense forward and gradients, rank-1 and rank-2") {
  Rng rng(205);
  Tensor x1 = rand_param({4}, rng);
  Tensor x2 = rand_param({3, 4}, rng);
  Tensor wt = rand_param({4, 2}, rng);
  Tensor bias = rand_param({2}, rng);

  Tensor y = ops::dense(x1, wt, bias);
  for (int o = 0; o < 2; ++o) {
    double want = bias.data()[o];
    for (int i = 0; i < 4; ++i) want += x1.data()[i] * wt.data()[i * 2 + o];
    CHECK(y.data()[o] == doctest::Approx(want).epsilon(1e-12));
  }
  Tensor y2 = ops::dense(x2, wt, Tensor{});
  CHECK(shape_eq(y2.shape(), {3, 2}));
  for (int r = 0; r < 3; ++r)
    for (int o = 0; o < 2; ++o) {
      double want = 0;
      for (int i = 0; i < 4; ++i) want += x2.data()[r * 4 + i] * wt.data()[i * 2 + o];
      CHECK(y2.data()[r * 2 + o] == doctest::Approx(want).epsilon(1e-12));
    }

  Rng wr(206);
  Tensor wo1 = Tensor::from_data({2}, oracle::rand_vec(wr, 2));
  Tensor wo2 = Tensor::from_data({3, 2}, oracle::rand_vec(wr, 6));
  std::vector<Parameter> ps = {{"x1", ParamKind::weight, x1},
                               {"x2", ParamKind::weight, x2},
                               {"w", ParamKind::weight, wt},
                               {"b", ParamKind::bias, bias}};
  check_fd(ps, [&] {
    return ops::add(weighted_sum(ops::dense(x1, wt, bias), wo1),
                    weighted_sum(ops::dense(x2, wt, bias), wo2));
  });
  CHECK_THROWS_AS(ops::dense(Tensor::zeros({5}), wt, Tensor{}), DimensionError);
}

TEST_CASE("pointwise conv equals a per-position dense map") {
  Rng rng(207);
  Tensor x = rand_param({3, 2, 4}, rng);
  Tensor wt = rand_param({4, 2}, rng);
  Tensor bias = rand_param({2}, rng);
  Tensor y = ops::pointwise_conv(x, wt, bias);
  CHECK(shape_eq(y.shape(), {3, 2, 2}));
  for (int h = 0; h < 3; ++h)
    for (int w = 0; w < 2; ++w)
      for (int o = 0; o < 2; ++o) {
        double want = bias.data()[o];
        for (int c = 0; c < 4; ++c)
          want += x.data()[idx3(x.shape(), h, w, c)] * wt.data()[c * 2 + o];
        CHECK(y.data()[idx3(y.shape(), h, w, o)] == doctest::Approx(want).epsilon(1e-12));
      }
  Tensor wo = const_like(y, rng);
  std::vector<Parameter> ps = {{"x", ParamKind::weight, x},
                               {"w", ParamKind::weight, wt},
                               {"b", ParamKind::bias, bias}};
  check_fd(ps, [&] { return weighted_sum(ops::pointwise_conv(x, wt, bias), wo); });
}

TEST_CASE("conv3x3 matches a naive zero-padded loop") {
  Rng rng(208);
  Tensor x = rand_param({4, 5, 2}, rng);
  Tensor wt = rand_param({3, 3, 2, 3}, rng);
  Tensor bias = rand_param({3}, rng);
  Tensor y = ops::conv3x3(x, wt, bias);
  CHECK(shape_eq(y.shape(), {4, 5, 3}));
  for (int h = 0; h < 4; ++h)
    for (int w = 0; w < 5; ++w)
      for (int o = 0; o < 3; ++o) {
        double want = bias.data()[o];
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int sy = h + dy, sx = w + dx;
            if (sy < 0 || sy >= 4 || sx < 0 || sx >= 5) continue;
            for (int c = 0; c < 2; ++c) {
              size_t wi = ((static_cast<size_t>(dy + 1) * 3 + (dx + 1)) * 2 + c) * 3 + o;
              want += x.data()[idx3(x.shape(), sy, sx, c)] * wt.data()[wi];
            }
          }
        CHECK(y.data()[idx3(y.shape(), h, w, o)] == doctest::Approx(want).epsilon(1e-10));
      }
  Tensor wo = const_like(y, rng);
  std::vector<Parameter> ps = {{"x", ParamKind::weight, x},
                               {"w", ParamKind::weight, wt},
                               {"b", ParamKind::bias, bias}};
  check_fd(ps, [&] { return weighted_sum(ops::conv3x3(x, wt, bias), wo); });
}

TEST_CASE("avg_pool2 averages valid windows, ragged edges included") {
  // 3x3 single channel: corner windows shrink to 1 or 2 cells
  Tensor x = Tensor::from_data({3, 3, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor y = ops::avg_pool2(x);
  CHECK(shape_eq(y.shape(), {2, 2, 1}));
  CHECK(y.data()[0] == doctest::Approx((1 + 2 + 4 + 5) / 4.0));
  CHECK(y.data()[1] == doctest::Approx((3 + 6) / 2.0));
  CHECK(y.data()[2] == doctest::Approx((7 + 8) / 2.0));
  CHECK(y.data()[3] == doctest::Approx(9.0));

  Rng rng(209);
  Tensor x2 = rand_param({5, 4, 2}, rng);
  Tensor wo = const_like(ops::avg_pool2(x2), rng);
  std::vector<Parameter> ps = {{"x", ParamKind::weight, x2}};
  check_fd(ps, [&] { return weighted_sum(ops::avg_pool2(x2), wo); });
}

TEST_CASE("layer_norm forward matches oracle; gradients check out") {
  Rng rng(210);
  Tensor x = rand_param({6}, rng, -2.0, 2.0);
  Tensor sc = rand_param({6}, rng, 0.5, 1.5);
  Tensor sh = rand_param({6}, rng);
  Tensor y = ops::layer_norm(x, sc, sh);
  std::vector<double> want = oracle::layer_norm(x.data(), sc.data(), sh.data());
  for (int i = 0; i < 6; ++i) CHECK(y.data()[i] == doctest::Approx(want[i]).epsilon(1e-12));

  Tensor wo = const_like(y, rng);
  std::vector<Parameter> ps = {{"x", ParamKind::weight, x},
                               {"scale", ParamKind::weight, sc},
                               {"shift", ParamKind::bias, sh}};
  check_fd(ps, [&] { return weighted_sum(ops::layer_norm(x, sc, sh), wo); });
}

TEST_CASE("layer_norm epsilon shrinks unit variance as documented") {
  Rng rng(211);
  std::vector<double> v = oracle::rand_vec(rng, 32, -3.0, 3.0);
  Tensor y = ops::layer_norm(Tensor::from_data({32}, v), Tensor::full({32}, 1.0),
                             Tensor::zeros({32}));
  double mu = 0;
  for (double q : y.data()) mu += q;
  mu /= 32;
  double var = 0;
  for (double q : y.data()) var += (q - mu) * (q - mu);
  var /= 32;
  double mu0 = 0;
  for (double q : v) mu0 += q;
  mu0 /= 32;
  double var0 = 0;
  for (double q : v) var0 += (q - mu0) * (q - mu0);
  var0 /= 32;
  CHECK(mu == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(var == doctest::Approx(var0 / (var0 + 1e-5)).epsilon(1e-9));
}

TEST_CASE("batch_norm training stats, buffer EMA, and eval path") {
  Rng rng(212);
  int n = 6, c = 3;
  Tensor x = rand_param({n, c}, rng, -2.0, 2.0);
  Tensor sc = rand_param({c}, rng, 0.5, 1.5);
  Tensor sh = rand_param({c}, rng);
  Tensor rm = Tensor::zeros({c});
  Tensor rv = Tensor::full({c}, 1.0);

  Tensor y = ops::batch_norm(x, sc, sh, rm, rv, true, 0.9);
  for (int ch = 0; ch < c; ++ch) {
    double mu = 0;
    for (int i = 0; i < n; ++i) mu += x.data()[i * c + ch];
    mu /= n;
    double var = 0;
    for (int i = 0; i < n; ++i) {
      double d = x.data()[i * c + ch] - mu;
      var += d * d;
    }
    var /= n;
    for (int i = 0; i < n; ++i) {
      double want = sc.data()[ch] * ((x.data()[i * c + ch] - mu) / std::sqrt(var + 1e-5)) +
                    sh.data()[ch];
      CHECK(y.data()[i * c + ch] == doctest::Approx(want).epsilon(1e-12));
    }
    CHECK(rm.data()[ch] == doctest::Approx(0.1 * mu).epsilon(1e-12));
    CHECK(rv.data()[ch] == doctest::Approx(0.9 * 1.0 + 0.1 * var).epsilon(1e-12));
  }

  // eval path normalizes with the buffers and leaves them untouched
  std::vector<double> rm_before = rm.data(), rv_before = rv.data();
  Tensor ye = ops::batch_norm(x, sc, sh, rm, rv, false, 0.9);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      double want =
          sc.data()[ch] * ((x.data()[i * c + ch] - rm_before[ch]) /
                           std::sqrt(rv_before[ch] + 1e-5)) +
          sh.data()[ch];
      CHECK(ye.data()[i * c + ch] == doctest::Approx(want).epsilon(1e-12));
    }
  CHECK(rm.data() == rm_before);
  CHECK(rv.data() == rv_before);
}

TEST_CASE("batch_norm gradients, train and eval mode") {
  Rng rng(213);
  int n = 5, c = 2;
  Tensor x = rand_param({n, c}, rng, -2.0, 2.0);
  Tensor sc = rand_param({c}, rng, 0.5, 1.5);
  Tensor sh = rand_param({c}, rng);
  Tensor rm = Tensor::from_data({c}, {0.2, -0.1});
  Tensor rv = Tensor::from_data({c}, {0.8, 1.3});
  Tensor wo = Tensor::from_data({n, c}, oracle::rand_vec(rng, n * c));
  std::vector<Parameter> ps = {{"x", ParamKind::weight, x},
                               {"scale", ParamKind::weight, sc},
                               {"shift", ParamKind::bias, sh}};
  check_fd(ps, [&] { return weighted_sum(ops::batch_norm(x, sc, sh, rm, rv, true, 0.9), wo); });
  check_fd(ps, [&] { return weighted_sum(ops::batch_norm(x, sc, sh, rm, rv, false, 0.9), wo); });
}

TEST_CASE("dropout modes") {
  Rng rng(214);
  Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}).set_requires_grad(true);

  // rate 0 and eval mode are identities that share the input node
  CHECK(ops::dropout(x, 0.0, rng, true).node() == x.node());
  CHECK(ops::dropout(x, 0.5, rng, false).node() == x.node());
  CHECK(rng.draws() == 0);

  std::vector<unsigned char> keep = {1, 0, 1, 0, 1, 0};
  Tensor y = ops::dropout(x, 0.5, rng, true, &keep);
  CHECK(y.data() == std::vector<double>{2, 0, 6, 0, 10, 0}); // kept values scaled by 1/keep
  CHECK(rng.draws() == 0);                                   // forced mask consumes no draws

  CHECK_THROWS_AS(ops::dropout(x, 1.0, rng, true), ConfigError);
  CHECK_THROWS_AS(ops::dropout(x, -0.1, rng, true), ConfigError);
  std::vector<unsigned char> bad = {1, 0};
  CHECK_THROWS_AS(ops::dropout(x, 0.5, rng, true, &bad), DimensionError);

  // sampled path: values are either dropped or boosted, and draws advance
  Tensor z = ops::dropout(x, 0.4, rng, true);
  CHECK(rng.draws() > 0);
  for (size_t i = 0; i < z.size(); ++i) {
    bool dropped = z.data()[i] == 0.0;
    bool boosted = z.data()[i] == doctest::Approx(x.data()[i] / 0.6).epsilon(1e-12);
    CHECK((dropped || boosted));
  }

  Tensor wo = const_like(x, rng);
  std::vector<Parameter> ps = {{"x", ParamKind::weight, x}};
  check_fd(ps, [&] { return weighted_sum(ops::dropout(x, 0.5, rng, true, &keep), wo); });
}

TEST_CASE("broadcast and spatial ops match loops") {
  Rng rng(215);
  Tensor x = rand_param({3, 4, 2}, rng);
  Tensor v = rand_param({2}, rng);
  Tensor gate1 = rand_param({3, 4, 1}, rng, 0.1, 0.9);
  Tensor gated = rand_param({3, 4, 2}, rng, 0.1, 0.9);
  Tensor wmap = rand_param({3, 4}, rng);

  Tensor ba = ops::broadcast_add_channel(x, v);
  Tensor mg1 = ops::mul_gate(x, gate1);
  Tensor mgd = ops::mul_gate(x, gated);
  Tensor cs = ops::channel_scale(x, v);
  Tensor ws = ops::weighted_spatial_sum(x, wmap);
  Tensor sm = ops::spatial_mean(x);
  for (int h = 0; h < 3; ++h)
    for (int w = 0; w < 4; ++w)
      for (int c = 0; c < 2; ++c) {
        size_t i = idx3(x.shape(), h, w, c);
        CHECK(ba.data()[i] == doctest::Approx(x.data()[i] + v.data()[c]).epsilon(1e-12));
        CHECK(mg1.data()[i] ==
              doctest::Approx(x.data()[i] * gate1.data()[idx3(gate1.shape(), h, w, 0)])
                  .epsilon(1e-12));
        CHECK(mgd.data()[i] == doctest::Approx(x.data()[i] * gated.data()[i]).epsilon(1e-12));
        CHECK(cs.data()[i] == doctest::Approx(x.data()[i] * v.data()[c]).epsilon(1e-12));
      }
  for (int c = 0; c < 2; ++c) {
    double wsum = 0, msum = 0;
    for (int h = 0; h < 3; ++h)
      for (int w = 0; w < 4; ++w) {
        wsum += wmap.data()[idx2(wmap.shape(), h, w)] * x.data()[idx3(x.shape(), h, w, c)];
        msum += x.data()[idx3(x.shape(), h, w, c)];
      }
    CHECK(ws.data()[c] == doctest::Approx(wsum).epsilon(1e-12));
    CHECK(sm.data()[c] == doctest::Approx(msum / 12.0).epsilon(1e-12));
  }
  // [H,W,1] weight map accepted as well
  Tensor ws2 = ops::weighted_spatial_sum(x, ops::reshape(wmap, {3, 4, 1}));
  CHECK(max_abs_diff(ws, ws2) < 1e-15);

  Tensor wo3 = const_like(x, rng);
  Tensor wo1 = const_like(sm, rng);
  std::vector<Parameter> ps = {{"x", ParamKind::weight, x},
                               {"v", ParamKind::weight, v},
                               {"gate1", ParamKind::weight, gate1},
                               {"gated", ParamKind::weight, gated},
                               {"wmap", ParamKind::weight, wmap}};
  check_fd(ps, [&] {
    Tensor t1 = weighted_sum(ops::broadcast_add_channel(x, v), wo3);
    Tensor t2 = weighted_sum(ops::mul_gate(x, gate1), wo3);
    Tensor t3 = weighted_sum(ops::mul_gate(x, gated), wo3);
    Tensor t4 = weighted_sum(ops::channel_scale(x, v), wo3);
    Tensor t5 = weighted_sum(ops::weighted_spatial_sum(x, wmap), wo1);
    Tensor t6 = weighted_sum(ops::spatial_mean(x), wo1);
    return ops::add(ops::add(ops::add(t1, t2), ops::add(t3, t4)), ops::add(t5, t6));
  });
  CHECK_THROWS_AS(ops::mul_gate(x, Tensor::zeros({3, 4, 3})), DimensionError);
  CHECK_THROWS_AS(ops::weighted_spatial_sum(x, Tensor::zeros({4, 3})), DimensionError);
}

TEST_CASE("reshape, stack_rows, slice_rows") {
  Rng rng(216);
  Tensor x = rand_param({2, 3}, rng);
  Tensor r = ops::reshape(x, {6});
  CHECK(shape_eq(r.shape(), {6}));
  CHECK(r.data() == x.data());
  CHECK_THROWS_AS(ops::reshape(x, {4}), DimensionError);

  Tensor a = rand_param({3}, rng);
  Tensor b = rand_param({3}, rng);
  Tensor s = ops::stack_rows({a, b});
  CHECK(shape_eq(s.shape(), {2, 3}));
  for (int j = 0; j < 3; ++j) {
    CHECK(s.data()[j] == a.data()[j]);
    CHECK(s.data()[3 + j] == b.data()[j]);
  }
  CHECK_THROWS_AS(ops::stack_rows({a, rand_param({4}, rng)}), DimensionError);
  CHECK_THROWS_AS(ops::stack_rows({}), DimensionError);

  Tensor sl = ops::slice_rows(s, 1, 1);
  CHECK(shape_eq(sl.shape(), {1, 3}));
  for (int j = 0; j < 3; ++j) CHECK(sl.data()[j] == b.data()[j]);
  CHECK_THROWS_AS(ops::slice_rows(s, 1, 2), DimensionError);
  CHECK_THROWS_AS(ops::slice_rows(s, -1, 1), DimensionError);

  Tensor wo2 = Tensor::from_data({2, 3}, oracle::rand_vec(rng, 6));
  Tensor wo1 = Tensor::from_data({1, 3}, oracle::rand_vec(rng, 3));
  std::vector<Parameter> ps = {{"x", ParamKind::weight, x},
                               {"a", ParamKind::weight, a},
                               {"b", ParamKind::weight, b}};
  check_fd(ps, [&] {
    Tensor j = ops::stack_rows({a, b});
    return ops::add(weighted_sum(ops::reshape(x, {6}), ops::reshape(wo2, {6})),
                    ops::add(weighted_sum(j, wo2), weighted_sum(ops::slice_rows(j, 0, 1), wo1)));
  });
}

TEST_CASE("gradient accumulates across two backward passes") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}).set_requires_grad(true);
  for (int pass = 0; pass < 2; ++pass) {
    Tape tape;
    tape.backward(ops::sum(ops::mul(x, x)));
  }
  CHECK(x.grad()[0] == doctest::Approx(4.0)); // 2x accumulated twice
  CHECK(x.grad()[1] == doctest::Approx(8.0));
  x.zero_grad();
  CHECK(x.grad() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("rng determinism and stream independence") {
  Rng a(42), b(42), c(43);
  bool all_eq = true, any_diff = false;
  for (int i = 0; i < 64; ++i) {
    uint64_t va = a.next_u64();
    all_eq = all_eq && va == b.next_u64();
    any_diff = any_diff || va != c.next_u64();
  }
  CHECK(all_eq);
  CHECK(any_diff);
  CHECK(a.draws() == 64);

  Rng d(7);
  for (int i = 0; i < 1000; ++i) {
    double v = d.next_double();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
  CHECK(d.draws() == 1000);
  d.normal();
  CHECK(d.draws() == 1002); // box-muller takes exactly two

  // int_range is inclusive and covers both endpoints
  Rng e(9);
  bool lo_hit = false, hi_hit = false;
  for (int i = 0; i < 500; ++i) {
    int64_t v = e.int_range(2, 4);
    CHECK(v >= 2);
    CHECK(v <= 4);
    lo_hit = lo_hit || v == 2;
    hi_hit = hi_hit || v == 4;
  }
  CHECK(lo_hit);
  CHECK(hi_hit);

  CHECK(derive_seed(5, "alpha") != derive_seed(5, "beta"));
  CHECK(derive_seed(5, "alpha") != derive_seed(6, "alpha"));
  CHECK(derive_seed(5, "alpha") == derive_seed(5, "alpha"));
  CHECK(derive_seed(5, uint64_t{1}) != derive_seed(5, uint64_t{2}));
}

TEST_CASE("max_abs_diff") {
  Tensor a = Tensor::from_data({3}, {1.0, 2.0, 3.0});
  Tensor b = Tensor::from_data({3}, {1.5, 2.0, 2.0});
  CHECK(max_abs_diff(a, b) == doctest::Approx(1.0));
  CHECK_THROWS_AS(max_abs_diff(a, Tensor::zeros({2})), DimensionError);
}
