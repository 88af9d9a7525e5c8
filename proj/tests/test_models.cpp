#include <atomic>
#include <cmath>
#include <random>
#include <thread>

#include "doctest.h"
#include "helpers.hpp"
#include "tkd/error.hpp"
#include "tkd/models.hpp"

using namespace tkd;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// <decoder_forward(p, f), w>, the scalar whose gradient decoder_grad returns.
double contracted(const DecoderParams& p, const FeatureFrame& f, const DetectionTensor& w) {
  return decoder_forward(p, f).values().cwiseProduct(w.values()).sum();
}

template <typename Get>
void check_fd(DecoderParams p, const FeatureFrame& f, const DetectionTensor& w, Get get, double analytic) {
  const double eps = 1e-5;
  double& x = get(p);
  const double x0 = x;
  x = x0 + eps;
  const double up = contracted(p, f, w);
  x = x0 - eps;
  const double down = contracted(p, f, w);
  x = x0;
  const double fd = (up - down) / (2 * eps);
  if (std::abs(fd) < 1e-7 && std::abs(analytic) < 1e-7) return;
  CHECK(test::rel_err(fd, analytic) <= 1e-4);
}

}  // namespace

TEST_CASE("backbone is deterministic and pools mean and max") {
  BackboneConfig cfg;
  cfg.input_dim = 6;
  cfg.hidden_dim = 10;
  cfg.feature_dim = 5;
  const Backbone a(cfg);
  const Backbone b(cfg);
  FeatureFrame zero;
  zero.s = 3;
  zero.values = Matrix::Zero(9, 6);
  const auto z1 = a.forward(zero);
  const auto z2 = b.forward(zero);
  CHECK(z1.features.values == z2.features.values);
  CHECK(z1.summary == z2.summary);
  // identical input rows give identical output rows
  for (int r = 1; r < 9; ++r) CHECK(z1.features.values.row(r) == z1.features.values.row(0));

  std::mt19937_64 rng(2);
  const FeatureFrame f = test::random_features(3, 6, rng);
  const auto out = a.forward(f);
  CHECK(out.features.values == a.forward(f).features.values);
  CHECK(out.summary.size() == 10);
  for (int d = 0; d < 5; ++d) {
    double sum = 0.0;
    double mx = -1e300;
    for (int cell = 0; cell < 9; ++cell) {
      sum += out.features.values(cell, d);
      mx = std::max(mx, out.features.values(cell, d));
    }
    CHECK(out.summary(d) == doctest::Approx(sum / 9));
    CHECK(out.summary(5 + d) == mx);
  }

  FeatureFrame wrong;
  wrong.s = 3;
  wrong.values = Matrix::Zero(9, 4);
  CHECK_THROWS_AS(a.forward(wrong), std::invalid_argument);
}

TEST_CASE("summary of a one-hot frame") {
  FeatureFrame f;
  f.s = 2;
  f.values = Matrix::Zero(4, 3);
  f.values(2, 1) = 5.0;
  const FeatureSummary s = summarize(f);
  CHECK(s(1) == doctest::Approx(1.25));
  CHECK(s(3 + 1) == 5.0);
  CHECK(s(3 + 0) == 0.0);
}

TEST_CASE("decoder forward") {
  FeatureFrame f;
  f.s = 2;
  f.values = Matrix::Random(4, 3);
  const DecoderParams zero = zero_decoder(3, 4, 2);
  CHECK(decoder_forward(zero, f).values().isZero(0.0));
  CHECK(decoder_forward(zero, f).shape() == GridShape{2, 2});

  // single cell, hand-computed: out = w2 * tanh(w1 x + b1) + b2
  DecoderParams p = zero_decoder(2, 2, 1);
  p.w1 << 1.0, 0.0, 0.0, 2.0;
  p.b1 << 0.5, -0.5;
  p.w2.setZero();
  p.w2(0, 0) = 1.0;
  p.w2(5, 1) = -3.0;
  p.b2(3) = 0.25;
  FeatureFrame one;
  one.s = 1;
  one.values = Matrix(1, 2);
  one.values << 0.3, 0.2;
  const DetectionTensor out = decoder_forward(p, one);
  CHECK(out.values()(0, 0) == doctest::Approx(std::tanh(0.8)));
  CHECK(out.values()(0, 5) == doctest::Approx(-3.0 * std::tanh(-0.1)));
  CHECK(out.values()(0, 3) == doctest::Approx(0.25));
  CHECK(out.values()(0, 1) == 0.0);

  std::mt19937_64 rng(4);
  const DecoderParams g = make_decoder(3, 5, 2, 9);
  const FeatureFrame r = test::random_features(3, 3, rng);
  CHECK(decoder_forward(g, r).values() == decoder_forward(g, r).values());
  CHECK_THROWS_AS(decoder_forward(make_decoder(4, 5, 2, 1), r), std::invalid_argument);
}

TEST_CASE("decoder gradient matches finite differences") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const DecoderParams p = make_decoder(4, 6, 3, 100 + trial);
    const FeatureFrame f = test::random_features(3, 4, rng);
    const DetectionTensor w = test::random_tensor(GridShape{3, 3}, rng, 1.0);
    const DecoderGrad g = decoder_grad(p, f, w);
    CHECK(g.all_finite());
    for (int r = 0; r < p.w1.rows(); ++r)
      for (int c = 0; c < p.w1.cols(); ++c)
        check_fd(p, f, w, [&](DecoderParams& q) -> double& { return q.w1(r, c); }, g.w1(r, c));
    for (int r = 0; r < p.b1.size(); ++r)
      check_fd(p, f, w, [&](DecoderParams& q) -> double& { return q.b1(r); }, g.b1(r));
    for (int r = 0; r < p.w2.rows(); ++r)
      for (int c = 0; c < p.w2.cols(); ++c)
        check_fd(p, f, w, [&](DecoderParams& q) -> double& { return q.w2(r, c); }, g.w2(r, c));
    for (int r = 0; r < p.b2.size(); ++r)
      check_fd(p, f, w, [&](DecoderParams& q) -> double& { return q.b2(r); }, g.b2(r));
  }
}

TEST_CASE("decoder gradient structure") {
  std::mt19937_64 rng(8);
  const DecoderParams p = make_decoder(4, 6, 3, 1);
  const FeatureFrame f = test::random_features(2, 4, rng);
  DetectionTensor w(GridShape{2, 3});
  const DecoderGrad zero = decoder_grad(p, f, w);
  CHECK(zero.w1.isZero(0.0));
  CHECK(zero.w2.isZero(0.0));
  CHECK(zero.b2.isZero(0.0));

  w.values().col(channel::kTw).setOnes();
  const DecoderGrad g = decoder_grad(p, f, w);
  for (int r = 0; r < g.w2.rows(); ++r) {
    if (r == channel::kTw) continue;
    CHECK(g.w2.row(r).isZero(0.0));
    CHECK(g.b2(r) == 0.0);
  }
  CHECK(g.b2(channel::kTw) == 4.0);
}

TEST_CASE("sgd step") {
  DecoderParams p = make_decoder(3, 4, 2, 5);
  p.version = 7;
  const DecoderParams same = sgd_step(p, zero_grad_like(p), 0.1);
  CHECK(same.version == 8);
  CHECK(same.w1 == p.w1);
  DecoderGrad g{p.w1, p.b1, p.w2, p.b2};
  const DecoderParams z = sgd_step(p, g, 1.0);
  CHECK(z.w1.isZero(0.0));
  CHECK(z.w2.isZero(0.0));
  g.w1(0, 0) = std::nan("");
  CHECK_THROWS_AS(sgd_step(p, g, 0.1), NumericError);
  CHECK_THROWS(sgd_step(p, zero_grad_like(p), 0.0));
}

TEST_CASE("sgd on a fixed quadratic target decreases MSE monotonically") {
  std::mt19937_64 rng(12);
  DecoderParams p = make_decoder(4, 8, 2, 3);
  const FeatureFrame f = test::random_features(3, 4, rng);
  const DetectionTensor target = test::random_tensor(GridShape{3, 2}, rng, 0.5);
  auto mse = [&](const DecoderParams& q) {
    return (decoder_forward(q, f).values() - target.values()).squaredNorm() / target.values().size();
  };
  double prev = mse(p);
  for (int step = 0; step < 50; ++step) {
    DetectionTensor grad = decoder_forward(p, f);
    grad.values() = 2.0 * (grad.values() - target.values()) / target.values().size();
    p = sgd_step(p, decoder_grad(p, f, grad), 0.05);
    const double cur = mse(p);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("decoder store commits versions monotonically") {
  DecoderStore store(make_decoder(3, 4, 2, 1));
  CHECK(store.version() == 0);
  const auto snap = store.snapshot();
  DecoderParams next = *snap;
  next = sgd_step(next, zero_grad_like(next), 0.1);
  CHECK(store.commit(next) == 1);
  CHECK(snap->version == 0);  // earlier snapshots stay intact
  CHECK(store.snapshot()->version == 1);
  CHECK_THROWS_AS(store.commit(next), std::logic_error);

  // a concurrent reader never sees a version going backwards
  std::atomic<bool> done{false};
  std::atomic<bool> ok{true};
  std::thread reader([&] {
    std::uint64_t last = 0;
    while (!done) {
      const auto s = store.snapshot();
      if (s->version < last || !s->all_finite()) ok = false;
      last = s->version;
    }
  });
  DecoderParams cur = *store.snapshot();
  for (int i = 0; i < 2000; ++i) {
    cur = sgd_step(cur, zero_grad_like(cur), 0.1);
    store.commit(cur);
  }
  done = true;
  reader.join();
  CHECK(ok);
  CHECK(store.version() == 2001);
}

TEST_CASE("lstm forward") {
  LstmParams z = zero_lstm(4, 3);
  Vector x = Vector::Ones(4);
  CHECK(lstm_forward(z, x).score == 0.5);

  LstmParams p = make_lstm(4, 3, 17, 0.8);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 4; ++i) x(i) = n(rng);
  p.state.h = Vector::Constant(3, 0.2);
  p.state.c = Vector::Constant(3, -0.4);
  const LstmStep step = lstm_forward(p, x);

  // scalar re-implementation
  const int h = 3;
  for (int j = 0; j < h; ++j) {
    double pre[4];
    for (int gate = 0; gate < 4; ++gate) {
      double v = p.b(gate * h + j);
      for (int k = 0; k < 4; ++k) v += p.wx(gate * h + j, k) * x(k);
      for (int k = 0; k < h; ++k) v += p.wh(gate * h + j, k) * p.state.h(k);
      pre[gate] = v;
    }
    const double c = sig(pre[1]) * p.state.c(j) + sig(pre[0]) * std::tanh(pre[2]);
    CHECK(step.state.c(j) == doctest::Approx(c).epsilon(1e-12));
    CHECK(step.state.h(j) == doctest::Approx(sig(pre[3]) * std::tanh(c)).epsilon(1e-12));
  }
  double z_out = p.b_out;
  for (int j = 0; j < h; ++j) z_out += p.w_out(j) * step.state.h(j);
  CHECK(step.score == doctest::Approx(sig(z_out)).epsilon(1e-12));

  // bounded hidden state under repeated input
  for (int t = 0; t < 200; ++t) {
    p.state = lstm_forward(p, x).state;
    CHECK(p.state.h.cwiseAbs().maxCoeff() <= 1.0);
  }
  CHECK_THROWS_AS(lstm_forward(p, Vector::Ones(5)), std::invalid_argument);
}

TEST_CASE("lstm bce gradient matches finite differences") {
  std::mt19937_64 rng(30);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 4; ++trial) {
    LstmParams p = make_lstm(5, 4, 40 + trial, 0.7);
    Vector x(5);
    for (int i = 0; i < 5; ++i) x(i) = n(rng);
    for (int i = 0; i < 4; ++i) {
      p.state.h(i) = 0.5 * n(rng);
      p.state.c(i) = n(rng);
    }
    const int label = trial % 2;
    const LstmGrad g = lstm_bce_grad(p, x, label);
    const double eps = 1e-5;
    auto fd = [&](double& ref) {
      const double x0 = ref;
      ref = x0 + eps;
      const double up = lstm_bce(p, x, label);
      ref = x0 - eps;
      const double down = lstm_bce(p, x, label);
      ref = x0;
      return (up - down) / (2 * eps);
    };
    auto check = [&](double numeric, double analytic) {
      if (std::abs(numeric) < 1e-8 && std::abs(analytic) < 1e-8) return;
      CHECK(test::rel_err(numeric, analytic) <= 1e-4);
    };
    for (int r = 0; r < p.wx.rows(); ++r)
      for (int c = 0; c < p.wx.cols(); ++c) check(fd(p.wx(r, c)), g.wx(r, c));
    for (int r = 0; r < p.wh.rows(); ++r)
      for (int c = 0; c < p.wh.cols(); ++c) check(fd(p.wh(r, c)), g.wh(r, c));
    for (int r = 0; r < p.b.size(); ++r) check(fd(p.b(r)), g.b(r));
    for (int r = 0; r < p.w_out.size(); ++r) check(fd(p.w_out(r)), g.w_out(r));
    check(fd(p.b_out), g.b_out);
  }
  CHECK_THROWS_AS(lstm_bce_grad(make_lstm(2, 2, 1, 0.1), Vector::Ones(2), 2), std::invalid_argument);
}

TEST_CASE("lstm train step") {
  LstmParams sat = zero_lstm(3, 2);
  sat.b_out = 30.0;  // score ~ 1
  const LstmParams after = lstm_train_step(sat, Vector::Ones(3), 1, 0.5);
  CHECK(std::abs(after.b_out - sat.b_out) < 1e-10);
  CHECK((after.wx - sat.wx).cwiseAbs().maxCoeff() < 1e-10);

  // linearly separable: label = [x0 > 0]
  LstmParams p = make_lstm(4, 6, 3, 0.3);
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Vector> xs;
  std::vector<int> ys;
  for (int i = 0; i < 40; ++i) {
    Vector x(4);
    for (int k = 0; k < 4; ++k) x(k) = n(rng);
    x(0) += x(0) > 0 ? 0.5 : -0.5;
    xs.push_back(x);
    ys.push_back(x(0) > 0 ? 1 : 0);
  }
  for (int step = 0; step < 200; ++step) {
    for (std::size_t i = 0; i < xs.size(); ++i) p = lstm_train_step(p, xs[i], ys[i], 0.5);
  }
  int correct = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) correct += (lstm_forward(p, xs[i]).score >= 0.5) == (ys[i] == 1);
  CHECK(correct >= 38);  // 95%
}
