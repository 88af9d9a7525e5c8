#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "tkd/error.hpp"
#include "tkd/selector.hpp"
#include "tkd/sim_stream.hpp"

using namespace tkd;

namespace {

constexpr int kDim = 6;

SelectorState make_state(double p_init, int tau, std::uint64_t seed = 1) {
  SelectorConfig cfg;
  cfg.p_init = p_init;
  cfg.tau = tau;
  cfg.seed = seed;
  return make_selector_state(cfg, kDim);
}

// Output layer pinned so the score is ~0 (or ~1) whatever the input.
void pin_lstm(SelectorState& st, bool vote) {
  st.lstm.w_out.setZero();
  st.lstm.b_out = vote ? 50.0 : -50.0;
}

FeedbackRecord feedback(std::int64_t frame, double delta_l) {
  FeedbackRecord fb;
  fb.frame_id = frame;
  fb.delta_l = delta_l;
  return fb;
}

Vector summary(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vector v(kDim);
  for (int i = 0; i < kDim; ++i) v(i) = n(rng);
  return v;
}

}  // namespace

TEST_CASE("p_t transition examples") {
  // helpful outcome, LSTM voted for it
  CHECK(next_probability(0.50, true, true, 0.05, 0.05) == doctest::Approx(0.45).epsilon(1e-12));
  CHECK(next_probability(0.05, true, true, 0.05, 0.05) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(next_probability(0.60, false, true, 0.05, 0.05) == doctest::Approx(1.0));
  CHECK(next_probability(0.30, false, true, 0.05, 0.05) == doctest::Approx(0.60));
  // the LSTM abstained and the random vote found nothing: the LSTM was right
  CHECK(next_probability(0.30, false, false, 0.05, 0.05) == doctest::Approx(0.25));
  // the LSTM abstained on a helpful frame
  CHECK(next_probability(0.30, true, false, 0.05, 0.05) == doctest::Approx(0.60));
}

TEST_CASE("apply_feedback drives p_t through sigma") {
  auto st = make_state(0.5, 0);
  pin_lstm(st, true);
  std::mt19937_64 rng(2);
  Decision d = decide(st, 0, summary(rng));
  REQUIRE(d.train);
  apply_feedback(st, feedback(0, -0.2));
  CHECK(st.p_t == doctest::Approx(0.45));

  st.p_t = 0.6;
  pin_lstm(st, true);
  d = decide(st, 1, summary(rng));
  REQUIRE(d.train);
  apply_feedback(st, feedback(1, 0.05));
  CHECK(st.p_t == doctest::Approx(1.0));

  // exactly sigma is not below sigma
  st.p_t = 0.4;
  pin_lstm(st, true);
  d = decide(st, 2, summary(rng));
  REQUIRE(d.train);
  apply_feedback(st, feedback(2, -0.1));
  CHECK(st.p_t == doctest::Approx(0.8));
}

TEST_CASE("p_t reaches the floor after 19 helpful events and stays in range") {
  auto st = make_state(1.0, 0);
  std::mt19937_64 rng(3);
  int steps = 0;
  while (st.p_t > st.p_min + 1e-12) {
    pin_lstm(st, true);
    const Decision d = decide(st, steps, summary(rng));
    REQUIRE(d.train);
    apply_feedback(st, feedback(steps, -1.0));
    ++steps;
    REQUIRE(steps < 100);
  }
  CHECK(steps == 19);

  std::bernoulli_distribution helpful(0.5);
  for (int i = 0; i < 2000; ++i) {
    const double p = next_probability(st.p_t, helpful(rng), helpful(rng), 0.05, 0.05);
    CHECK(p >= 0.05);
    CHECK(p <= 1.0);
    st.p_t = p;
  }
}

TEST_CASE("tau suppresses the frames after a training") {
  auto st = make_state(1.0, 2);
  std::mt19937_64 rng(4);
  Decision d = decide(st, 0, summary(rng));
  CHECK(d.train);
  d = decide(st, 1, summary(rng));
  CHECK_FALSE(d.train);
  CHECK(d.suppressed);
  pin_lstm(st, true);
  d = decide(st, 2, summary(rng));
  CHECK_FALSE(d.train);
  CHECK(d.suppressed);
  d = decide(st, 3, summary(rng));
  CHECK(d.train);
}

TEST_CASE("tau property over a recorded decision log") {
  for (int tau : {0, 1, 2, 5}) {
    auto st = make_state(0.5, tau, 9 + tau);
    std::mt19937_64 rng(5);
    std::vector<std::int64_t> trained;
    for (int f = 0; f < 10000; ++f) {
      const Decision d = decide(st, f, summary(rng));
      if (d.suppressed) CHECK_FALSE(d.train);
      if (!d.suppressed) CHECK(d.train == (d.lstm_vote || d.random_vote));
      if (d.train) {
        trained.push_back(f);
        apply_feedback(st, feedback(f, f % 3 == 0 ? -0.5 : 0.1));
      }
    }
    REQUIRE(trained.size() > 100);
    for (std::size_t i = 1; i < trained.size(); ++i) CHECK(trained[i] - trained[i - 1] > tau);
  }
}

TEST_CASE("p_t = 1 always trains when not suppressed") {
  auto st = make_state(1.0, 0);
  pin_lstm(st, false);
  std::mt19937_64 rng(6);
  for (int f = 0; f < 500; ++f) {
    const Decision d = decide(st, f, summary(rng));
    CHECK(d.train);
    CHECK(d.random_vote);
    CHECK_FALSE(d.lstm_vote);
  }
}

TEST_CASE("Monte-Carlo: floor rate with the LSTM silenced") {
  auto st = make_state(0.05, 0, 77);
  pin_lstm(st, false);
  std::mt19937_64 rng(7);
  const Vector s = summary(rng);
  int positives = 0;
  const int n = 100000;
  for (int f = 0; f < n; ++f) {
    const Decision d = decide(st, f, s);
    if (d.train) {
      ++positives;
      discard_pending(st, f);
    }
  }
  CHECK(std::abs(positives / double(n) - 0.05) <= 0.005);
}

TEST_CASE("feedback errors") {
  auto st = make_state(1.0, 0);
  CHECK_THROWS_AS(apply_feedback(st, feedback(42, -1.0)), std::invalid_argument);

  std::mt19937_64 rng(8);
  pin_lstm(st, true);
  st.p_t = 0.5;
  const Decision d = decide(st, 0, summary(rng));
  REQUIRE(d.train);
  const LstmParams before = st.lstm;
  FeedbackRecord fb = feedback(0, -1.0);
  fb.error = "non-finite loss";
  apply_feedback(st, fb);
  CHECK(st.p_t == 0.5);
  CHECK(st.lstm.w_out == before.w_out);
  CHECK(st.lstm.wx == before.wx);
  CHECK(st.pending.empty());
  // a second delivery of the same frame is rejected
  CHECK_THROWS_AS(apply_feedback(st, fb), std::invalid_argument);
}

TEST_CASE("apply_feedback is deterministic and keeps the live LSTM state") {
  std::mt19937_64 rng(9);
  auto a = make_state(0.7, 0, 5);
  std::vector<Vector> inputs;
  for (int i = 0; i < 5; ++i) inputs.push_back(summary(rng));
  decide(a, 0, inputs[0]);
  a.pending.clear();
  a.p_t = 1.0;
  const Decision d = decide(a, 1, inputs[1]);
  REQUIRE(d.train);
  decide(a, 2, inputs[2]);
  auto b = a;
  const double b_out_before = a.lstm.b_out;
  const LstmState live = a.lstm.state;
  apply_feedback(a, feedback(1, -0.4));
  apply_feedback(b, feedback(1, -0.4));
  CHECK(a.p_t == b.p_t);
  CHECK(a.lstm.wx == b.lstm.wx);
  CHECK(a.lstm.b_out == b.lstm.b_out);
  CHECK(a.lstm.state.h == live.h);
  CHECK(a.lstm.state.c == live.c);
  // one step toward label 1 raises the output bias
  CHECK(a.lstm.b_out > b_out_before);
}

TEST_CASE("the LSTM state advances on suppressed frames") {
  auto st = make_state(1.0, 3);
  std::mt19937_64 rng(10);
  decide(st, 0, summary(rng));
  st.pending.clear();
  const LstmState s0 = st.lstm.state;
  const Decision d = decide(st, 1, summary(rng));
  CHECK(d.suppressed);
  CHECK(st.lstm.state.h != s0.h);
}

TEST_CASE("random selector") {
  RandomSelector never(0.0, 0, 1);
  for (int f = 0; f < 1000; ++f) CHECK_FALSE(never.decide(f).train);
  RandomSelector always(1.0, 0, 1);
  for (int f = 0; f < 1000; ++f) CHECK(always.decide(f).train);

  RandomSelector r(0.27, 0, 123);
  int positives = 0;
  const int n = 100000;
  for (int f = 0; f < n; ++f) positives += r.decide(f).train ? 1 : 0;
  CHECK(std::abs(positives / double(n) - 0.27) <= 0.01);

  RandomSelector gated(1.0, 2, 1);
  std::vector<int> pattern;
  for (int f = 0; f < 9; ++f) pattern.push_back(gated.decide(f).train ? 1 : 0);
  CHECK(pattern == std::vector<int>{1, 0, 0, 1, 0, 0, 1, 0, 0});
  CHECK_THROWS_AS(RandomSelector(1.5, 0, 1), ConfigError);
}

TEST_CASE("periodic selector") {
  PeriodicSelector every(1, 0);
  for (int f = 0; f < 100; ++f) CHECK(every.decide(f).train);
  PeriodicSelector p4(4, 0);
  int count = 0;
  for (int f = 0; f < 100; ++f) {
    const bool t = p4.decide(f).train;
    CHECK(t == (f % 4 == 0));
    count += t;
  }
  CHECK(count == 25);
  CHECK_THROWS_AS(PeriodicSelector(0, 0), ConfigError);
}

TEST_CASE("scene change selector basics") {
  std::mt19937_64 rng(11);
  const FeatureFrame a = test::random_features(4, 5, rng);
  CHECK(frame_difference(a, a) == 0.0);
  for (double thr : {1e-9, 0.1, 3.0}) CHECK_FALSE(scene_change(a, a, thr));
  FeatureFrame b = a;
  b.values.array() += 1.0;
  CHECK(frame_difference(a, b) == doctest::Approx(1.0));
  CHECK(scene_change(a, b, 0.5));
  const FeatureFrame wrong = test::random_features(3, 5, rng);
  CHECK_THROWS_AS(frame_difference(a, wrong), std::invalid_argument);

  SceneChangeSelector sel(0.5);
  CHECK_FALSE(sel.decide(a).train);  // nothing to compare the first frame to
  CHECK(sel.decide(b).train);
  CHECK_FALSE(sel.decide(b).train);
}

TEST_CASE("scene change selector finds generated scene boundaries") {
  // Threshold tuned on one stream, scored on another.
  auto make = [](std::uint64_t seed) {
    std::vector<SceneSpec> scenes;
    for (int i = 0; i < 6; ++i) {
      SceneSpec sc;
      sc.scene_id = i;
      sc.class_distribution.assign(6, 0.0);
      sc.class_distribution[i] = 0.5;
      sc.class_distribution[(i + 1) % 6] = 0.5;
      sc.duration = {60, 60};
      sc.appearance_shift = 1.0;
      sc.background = 1.0;
      scenes.push_back(sc);
    }
    StreamConfig cfg;
    cfg.n_frames = 360;
    cfg.transition_len = 2;
    cfg.frame_noise = 0.01;
    cfg.seed = seed;
    return generate_stream(scenes, cfg);
  };
  auto diffs = [](const Stream& s) {
    std::vector<double> d(s.frames.size(), 0.0);
    for (std::size_t i = 1; i < s.frames.size(); ++i)
      d[i] = frame_difference(s.frames[i - 1].frame, s.frames[i].frame);
    return d;
  };

  const Stream tune = make(21);
  const auto tune_d = diffs(tune);
  const auto tune_cp = tune.change_points();
  REQUIRE(tune_cp.size() == 5);
  // halfway between the busiest ordinary frame and the quietest boundary
  double calm = 0.0;
  for (std::size_t i = 1; i < tune_d.size(); ++i) {
    bool near = false;
    for (auto cp : tune_cp) near = near || std::abs(static_cast<std::int64_t>(i) - cp) <= 2;
    if (!near) calm = std::max(calm, tune_d[i]);
  }
  double boundary = 1e9;
  for (auto cp : tune_cp)
    boundary = std::min(boundary, std::max({tune_d[cp - 1], tune_d[cp], tune_d[cp + 1]}));
  REQUIRE(boundary > calm);
  const double threshold = 0.5 * (calm + boundary);

  const Stream test_stream = make(22);
  SceneChangeSelector sel(threshold);
  std::vector<bool> flagged;
  for (const auto& rec : test_stream.frames) flagged.push_back(sel.decide(rec.frame).train);
  const auto cps = test_stream.change_points();
  int hit = 0;
  for (auto cp : cps) {
    bool found = false;
    for (std::int64_t f = std::max<std::int64_t>(cp - 1, 0);
         f <= std::min<std::int64_t>(cp + 1, static_cast<std::int64_t>(flagged.size()) - 1); ++f)
      found = found || flagged[f];
    hit += found;
  }
  CHECK(hit >= 0.9 * static_cast<double>(cps.size()));
}
