#include <cmath>
#include <random>

#include "doctest.h"
#include "sleepdet/autodiff.hpp"
#include "sleepdet/gradcheck.hpp"

using namespace sleepdet;
using namespace sleepdet::ad;

namespace {

Tensor<double> random_tensor(std::vector<int64_t> shape, std::mt19937_64& rng,
                             double scale = 1.0) {
  return randn<double>(std::move(shape), rng, scale);
}

std::shared_ptr<Tensor<double>> probe_weights(const std::vector<int64_t>& shape,
                                              uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = std::make_shared<Tensor<double>>(randn<double>(shape, rng, 1.0));
  return w;
}

// Independent direct convolution: nested loops, zero padding, stride 1.
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w,
                           const Tensor<double>& b, int dilation, int groups) {
  const int64_t cin = x.dim(0), tlen = x.dim(1);
  const int64_t cout = w.dim(0), cin_g = w.dim(1), k = w.dim(2);
  const int64_t cout_g = cout / groups;
  const int64_t pad_left = ((k - 1) * dilation) / 2;
  Tensor<double> y = Tensor<double>::zeros({cout, tlen});
  for (int64_t oc = 0; oc < cout; ++oc) {
    const int64_t gi = oc / cout_g;
    for (int64_t t = 0; t < tlen; ++t) {
      double s = b.data[oc];
      for (int64_t icl = 0; icl < cin_g; ++icl)
        for (int64_t j = 0; j < k; ++j) {
          const int64_t xi = t + j * dilation - pad_left;
          if (xi < 0 || xi >= tlen) continue;
          s += w.data[(oc * cin_g + icl) * k + j] * x.at2(gi * cin_g + icl, xi);
        }
      y.at2(oc, t) = s;
    }
  }
  (void)cin;
  return y;
}

}  // namespace

TEST_CASE("conv1d delta kernel is identity") {
  std::mt19937_64 rng(7);
  Graph<double> g;
  auto x = g.input(random_tensor({3, 20}, rng));
  auto w = g.input(Tensor<double>::from({3, 1, 3}, {0, 1, 0, 0, 1, 0, 0, 1, 0}));
  auto b = g.input(Tensor<double>::zeros({3}));
  auto y = conv1d(g, x, w, b, 1, 3);
  for (int64_t i = 0; i < x->value.numel(); ++i)
    CHECK(y->value.data[i] == doctest::Approx(x->value.data[i]).epsilon(1e-15));
}

TEST_CASE("conv1d pointwise equals per-timestep linear map") {
  std::mt19937_64 rng(8);
  Graph<double> g;
  auto x = g.input(random_tensor({3, 10}, rng));
  auto w = g.input(random_tensor({2, 3, 1}, rng));
  auto b = g.input(random_tensor({2}, rng));
  auto y = conv1d(g, x, w, b, 1, 1);
  for (int64_t t = 0; t < 10; ++t)
    for (int64_t o = 0; o < 2; ++o) {
      double s = b->value.data[o];
      for (int64_t c = 0; c < 3; ++c) s += w->value.data[o * 3 + c] * x->value.at2(c, t);
      CHECK(y->value.at2(o, t) == doctest::Approx(s).epsilon(1e-14));
    }
}

TEST_CASE("conv1d matches direct oracle on random dilated case") {
  std::mt19937_64 rng(9);
  auto x = random_tensor({4, 16}, rng);
  auto w = random_tensor({6, 2, 3}, rng);
  auto b = random_tensor({6}, rng);
  Graph<double> g;
  auto y = conv1d(g, g.input(x), g.input(w), g.input(b), 2, 2);
  auto ref = conv_oracle(x, w, b, 2, 2);
  for (int64_t i = 0; i < ref.numel(); ++i)
    CHECK(std::abs(y->value.data[i] - ref.data[i]) < 1e-12);
}

TEST_CASE("depthwise + pointwise composition matches separable oracle") {
  std::mt19937_64 rng(10);
  auto x = random_tensor({4, 12}, rng);
  auto dw = random_tensor({4, 1, 3}, rng);
  auto db = random_tensor({4}, rng);
  auto pw = random_tensor({5, 4, 1}, rng);
  auto pb = random_tensor({5}, rng);
  Graph<double> g;
  auto mid = conv1d(g, g.input(x), g.input(dw), g.input(db), 1, 4);
  auto y = conv1d(g, mid, g.input(pw), g.input(pb), 1, 1);
  auto mid_ref = conv_oracle(x, dw, db, 1, 4);
  auto ref = conv_oracle(mid_ref, pw, pb, 1, 1);
  for (int64_t i = 0; i < ref.numel(); ++i)
    CHECK(std::abs(y->value.data[i] - ref.data[i]) < 1e-12);
}

TEST_CASE("conv1d gradient check (plain, dilated, grouped)") {
  std::mt19937_64 rng(11);
  struct Case {
    int64_t cin, cout, k, t;
    int dilation, groups;
  };
  for (const Case& c : {Case{3, 4, 3, 15, 1, 1}, Case{4, 4, 3, 12, 2, 4},
                        Case{6, 4, 5, 20, 3, 2}, Case{2, 2, 1, 9, 1, 1}}) {
    auto probe = probe_weights({c.cout, c.t}, 99);
    auto res = grad_check(
        [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) {
          return weighted_sum(g, conv1d(g, in[0], in[1], in[2], c.dilation, c.groups),
                              probe);
        },
        {random_tensor({c.cin, c.t}, rng), random_tensor({c.cout, c.cin / c.groups, c.k}, rng),
         random_tensor({c.cout}, rng)});
    CHECK(res.max_rel_error < 1e-6);
  }
}

TEST_CASE("maxpool basic semantics") {
  Graph<double> g;
  auto x = g.input(Tensor<double>::from({1, 4}, {1, 3, 2, 4}));
  auto y = maxpool1d(g, x, 2);
  CHECK(y->value.data == std::vector<double>{3, 4});
}

TEST_CASE("three pools of widths 2,5,5 reduce length 50n to n") {
  std::mt19937_64 rng(12);
  Graph<double> g;
  auto x = g.input(random_tensor({2, 50 * 7}, rng));
  auto y = maxpool1d(g, maxpool1d(g, maxpool1d(g, x, 2), 5), 5);
  CHECK(y->value.dim(1) == 7);
}

TEST_CASE("maxpool gradient routes to argmax") {
  std::mt19937_64 rng(13);
  auto probe = probe_weights({2, 10}, 100);
  auto res = grad_check(
      [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) {
        return weighted_sum(g, maxpool1d(g, in[0], 2), probe);
      },
      {random_tensor({2, 20}, rng)});
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("selu and relu reference values") {
  Graph<double> g;
  auto x = g.input(Tensor<double>::from({1, 4}, {0.0, 1.0, -30.0, -2.0}));
  auto y = selu(g, x);
  CHECK(y->value.data[0] == doctest::Approx(0.0));
  CHECK(y->value.data[1] == doctest::Approx(kSeluLambda));
  CHECK(y->value.data[2] == doctest::Approx(-1.758099).epsilon(1e-6));
  // Limit value: lambda * alpha.
  CHECK(std::abs(y->value.data[2] + kSeluLambda * kSeluAlpha) < 1e-6);
  auto r = relu(g, x);
  CHECK(r->value.data[3] == 0.0);
  CHECK(r->value.data[1] == 2.0 / 2.0);
  Graph<double> g2;
  auto r2 = relu(g2, g2.input(Tensor<double>::from({1, 2}, {-2.0, 2.0})));
  CHECK(r2->value.data[0] == 0.0);
  CHECK(r2->value.data[1] == 2.0);
}

TEST_CASE("activation gradient checks") {
  std::mt19937_64 rng(14);
  auto probe = probe_weights({3, 11}, 101);
  for (auto* name : {"selu", "relu", "tanh"}) {
    auto res = grad_check(
        [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) -> NodePtr<double> {
          NodePtr<double> y;
          if (std::string(name) == "selu") y = selu(g, in[0]);
          else if (std::string(name) == "relu") y = relu(g, in[0]);
          else y = tanh_op(g, in[0]);
          return weighted_sum(g, y, probe);
        },
        {random_tensor({3, 11}, rng)});
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("weight_norm identity and scale invariance") {
  Graph<double> g;
  // One output channel, direction already unit norm.
  Tensor<double> v = Tensor<double>::from({1, 4, 1}, {0.5, 0.5, 0.5, 0.5});
  auto w = weight_norm(g, g.input(v), g.input(Tensor<double>::full({1}, 1.0)));
  for (int i = 0; i < 4; ++i) CHECK(w->value.data[i] == doctest::Approx(0.5));

  Tensor<double> v10 = v;
  for (auto& e : v10.data) e *= 10.0;
  Graph<double> g2;
  auto w10 = weight_norm(g2, g2.input(v10), g2.input(Tensor<double>::full({1}, 1.0)));
  for (int i = 0; i < 4; ++i)
    CHECK(w10->value.data[i] == doctest::Approx(w->value.data[i]).epsilon(1e-12));
}

TEST_CASE("weight_norm gradient check") {
  std::mt19937_64 rng(15);
  auto probe = probe_weights({3, 2, 3}, 102);
  auto res = grad_check(
      [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) {
        return weighted_sum(g, weight_norm(g, in[0], in[1]), probe);
      },
      {random_tensor({3, 2, 3}, rng), random_tensor({3}, rng, 0.5)});
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("batch_norm train mode normalizes and updates running stats") {
  std::mt19937_64 rng(16);
  Graph<double> g;
  auto x = g.input(random_tensor({3, 400}, rng, 2.5));
  auto gamma = g.input(Tensor<double>::full({3}, 1.0));
  auto beta = g.input(Tensor<double>::zeros({3}));
  Tensor<double> rm = Tensor<double>::zeros({3});
  Tensor<double> rv = Tensor<double>::full({3}, 1.0);
  auto y = batch_norm(g, x, gamma, beta, {&rm, &rv}, Mode::train);
  for (int64_t c = 0; c < 3; ++c) {
    double s = 0, sq = 0;
    for (int64_t t = 0; t < 400; ++t) s += y->value.at2(c, t);
    const double mean = s / 400;
    for (int64_t t = 0; t < 400; ++t) {
      const double d = y->value.at2(c, t) - mean;
      sq += d * d;
    }
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(sq / 400 - 1.0) < 1e-4);
    CHECK(rm.data[c] != 0.0);  // momentum update happened
  }
}

TEST_CASE("batch_norm eval with unit stats and identity affine is identity") {
  std::mt19937_64 rng(17);
  Graph<double> g;
  Tensor<double> xv = random_tensor({2, 50}, rng);
  auto x = g.input(xv);
  Tensor<double> rm = Tensor<double>::zeros({2});
  Tensor<double> rv = Tensor<double>::full({2}, 1.0);
  auto y = batch_norm(g, x, g.input(Tensor<double>::full({2}, 1.0)),
                      g.input(Tensor<double>::zeros({2})), {&rm, &rv}, Mode::eval);
  for (int64_t i = 0; i < xv.numel(); ++i)
    CHECK(y->value.data[i] == doctest::Approx(xv.data[i]).epsilon(2e-5));
}

TEST_CASE("batch_norm gradient check (train and eval)") {
  std::mt19937_64 rng(18);
  auto probe = probe_weights({3, 12}, 103);
  for (Mode mode : {Mode::train, Mode::eval}) {
    auto res = grad_check(
        [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) {
          // Fresh running stats per evaluation keep the builder deterministic.
          auto rm = std::make_shared<Tensor<double>>(Tensor<double>::zeros({3}));
          auto rv = std::make_shared<Tensor<double>>(Tensor<double>::full({3}, 1.0));
          return weighted_sum(g, batch_norm(g, in[0], in[1], in[2], {rm.get(), rv.get()}, mode),
                              probe);
        },
        {random_tensor({3, 12}, rng), random_tensor({3}, rng),
         random_tensor({3}, rng)});
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("positionwise_norm zero-mean columns and constant-column guard") {
  std::mt19937_64 rng(19);
  Graph<double> g;
  auto x = g.input(random_tensor({5, 9}, rng));
  auto y = positionwise_norm(g, x);
  for (int64_t t = 0; t < 9; ++t) {
    double s = 0;
    for (int64_t c = 0; c < 5; ++c) s += y->value.at2(c, t);
    CHECK(std::abs(s / 5) < 1e-9);
  }
  Graph<double> g2;
  auto yc = positionwise_norm(g2, g2.input(Tensor<double>::full({4, 3}, 2.5)));
  for (double v : yc->value.data) CHECK(v == 0.0);
}

TEST_CASE("positionwise_norm gradient check") {
  std::mt19937_64 rng(20);
  auto probe = probe_weights({4, 7}, 104);
  auto res = grad_check(
      [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) {
        return weighted_sum(g, positionwise_norm(g, in[0]), probe);
      },
      {random_tensor({4, 7}, rng)});
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("bilstm zero weights give zero output") {
  std::mt19937_64 rng(21);
  Graph<double> g;
  auto x = g.input(random_tensor({3, 6}, rng));
  LstmDirectionWeights<double> f{g.input(Tensor<double>::zeros({8, 3})),
                                 g.input(Tensor<double>::zeros({8, 2})),
                                 g.input(Tensor<double>::zeros({8}))};
  LstmDirectionWeights<double> b{g.input(Tensor<double>::zeros({8, 3})),
                                 g.input(Tensor<double>::zeros({8, 2})),
                                 g.input(Tensor<double>::zeros({8}))};
  auto y = bilstm(g, x, f, b);
  CHECK(y->value.dim(0) == 4);
  for (double v : y->value.data) CHECK(v == 0.0);
}

TEST_CASE("bilstm with shared direction weights is symmetric at T=1") {
  std::mt19937_64 rng(22);
  Graph<double> g;
  auto x = g.input(random_tensor({3, 1}, rng));
  auto wx = g.input(random_tensor({8, 3}, rng));
  auto wh = g.input(random_tensor({8, 2}, rng));
  auto bb = g.input(random_tensor({8}, rng));
  auto y = bilstm(g, x, {wx, wh, bb}, {wx, wh, bb});
  for (int64_t j = 0; j < 2; ++j)
    CHECK(y->value.at2(j, 0) == doctest::Approx(y->value.at2(2 + j, 0)).epsilon(1e-14));
}

TEST_CASE("bilstm gradient check") {
  std::mt19937_64 rng(23);
  const int64_t c = 3, t = 5, h = 4;
  auto probe = probe_weights({2 * h, t}, 105);
  auto res = grad_check(
      [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) {
        LstmDirectionWeights<double> f{in[1], in[2], in[3]};
        LstmDirectionWeights<double> b{in[4], in[5], in[6]};
        return weighted_sum(g, bilstm(g, in[0], f, b), probe);
      },
      {random_tensor({c, t}, rng), random_tensor({4 * h, c}, rng, 0.5),
       random_tensor({4 * h, h}, rng, 0.5), random_tensor({4 * h}, rng, 0.5),
       random_tensor({4 * h, c}, rng, 0.5), random_tensor({4 * h, h}, rng, 0.5),
       random_tensor({4 * h}, rng, 0.5)});
  CHECK(res.max_rel_error < 1e-3);
}

TEST_CASE("concat shapes and add backward") {
  std::mt19937_64 rng(24);
  Graph<double> g;
  Tensor<double> a = random_tensor({2, 6}, rng);
  Tensor<double> b = random_tensor({3, 6}, rng);
  Tensor<double> grads_a = Tensor<double>::zeros({2, 6});
  auto na = g.param(a, &grads_a);
  auto nb = g.input(b);
  auto y = concat_channels(g, {na, nb});
  CHECK(y->value.dim(0) == 5);
  CHECK(y->value.dim(1) == 6);

  // add backward: both inputs receive the upstream gradient unchanged.
  Tensor<double> ga = Tensor<double>::zeros({2, 3}), gb = Tensor<double>::zeros({2, 3});
  Graph<double> g2;
  auto pa = g2.param(Tensor<double>::full({2, 3}, 1.0), &ga);
  auto pb = g2.param(Tensor<double>::full({2, 3}, 2.0), &gb);
  auto probe = probe_weights({2, 3}, 106);
  auto root = weighted_sum(g2, add(g2, pa, pb), probe);
  g2.backward(root);
  for (int64_t i = 0; i < 6; ++i) {
    CHECK(ga.data[i] == doctest::Approx(probe->data[i]));
    CHECK(gb.data[i] == doctest::Approx(probe->data[i]));
  }
}

TEST_CASE("softmax columns sum to one") {
  std::mt19937_64 rng(25);
  Graph<double> g;
  auto y = softmax_channels(g, g.input(random_tensor({4, 17}, rng, 3.0)));
  for (int64_t t = 0; t < 17; ++t) {
    double s = 0;
    for (int64_t c = 0; c < 4; ++c) s += y->value.at2(c, t);
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("softmax gradient check") {
  std::mt19937_64 rng(26);
  auto probe = probe_weights({4, 6}, 107);
  auto res = grad_check(
      [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) {
        return weighted_sum(g, softmax_channels(g, in[0]), probe);
      },
      {random_tensor({4, 6}, rng)});
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("dropout eval is identity, train scales surviving units") {
  std::mt19937_64 rng(27);
  Tensor<double> xv = Tensor<double>::full({2, 100}, 1.0);
  Graph<double> g;
  std::mt19937_64 oprng(5);
  auto y = dropout(g, g.input(xv), 0.5, oprng, Mode::eval);
  for (double v : y->value.data) CHECK(v == 1.0);
  Graph<double> g2;
  std::mt19937_64 oprng2(5);
  auto yt = dropout(g2, g2.input(xv), 0.5, oprng2, Mode::train);
  int kept = 0;
  for (double v : yt->value.data) {
    CHECK((v == 0.0 || v == 2.0));
    if (v != 0.0) ++kept;
  }
  CHECK(kept > 50);
  CHECK(kept < 150);
}

TEST_CASE("gradient accumulates when a tensor feeds multiple consumers") {
  std::mt19937_64 rng(28);
  Tensor<double> xv = random_tensor({2, 4}, rng);
  Tensor<double> gx = Tensor<double>::zeros({2, 4});
  Graph<double> g;
  auto x = g.param(xv, &gx);
  auto y = add(g, selu(g, x), tanh_op(g, x));
  auto probe = probe_weights({2, 4}, 108);
  g.backward(weighted_sum(g, y, probe));
  for (int64_t i = 0; i < 8; ++i) {
    const double v = xv.data[i];
    const double dselu = v > 0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(v);
    const double th = std::tanh(v);
    CHECK(gx.data[i] == doctest::Approx(probe->data[i] * (dselu + 1.0 - th * th)).epsilon(1e-10));
  }
}

TEST_CASE("grad_check is tight for linear ops and loud for corrupted backward") {
  std::mt19937_64 rng(29);
  auto probe = probe_weights({3, 5}, 109);
  auto linear = grad_check(
      [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) {
        return weighted_sum(g, in[0], probe);
      },
      {random_tensor({3, 5}, rng)});
  CHECK(linear.max_rel_error < 1e-8);

  // Negative control: forward x^2 with backward claiming 3x.
  auto corrupted = grad_check(
      [&](Graph<double>& g, const std::vector<NodePtr<double>>& in) {
        auto y = unary_map<double>(
            g, in[0], [](double v) { return v * v; },
            [](double v, double) { return 3.0 * v; });
        return weighted_sum(g, y, probe);
      },
      {random_tensor({3, 5}, rng)});
  CHECK(corrupted.max_rel_error > 1e-2);
}

TEST_CASE("non-finite input is rejected") {
  Graph<double> g;
  Tensor<double> bad = Tensor<double>::full({1, 2}, 1.0);
  bad.data[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(g.input(bad), NumericalError);
}

TEST_CASE("shape mismatches are rejected") {
  std::mt19937_64 rng(30);
  Graph<double> g;
  auto a = g.input(random_tensor({2, 4}, rng));
  auto b = g.input(random_tensor({2, 5}, rng));
  CHECK_THROWS_AS(add(g, a, b), ValidationError);
  auto w = g.input(random_tensor({4, 3, 3}, rng));
  auto bias = g.input(random_tensor({4}, rng));
  CHECK_THROWS_AS(conv1d(g, a, w, bias, 1, 1), ValidationError);
}
