#include "tkd/selector.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "tkd/error.hpp"

namespace tkd {

namespace {

bool bernoulli(std::mt19937_64& rng, double p) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

}  // namespace

void SelectorConfig::validate() const {
  if (!(p_min >= 0.0 && p_min <= 1.0)) throw ConfigError("selector.p_min must lie in [0, 1]");
  if (!(p_init >= p_min && p_init <= 1.0)) throw ConfigError("selector.p_init must lie in [p_min, 1]");
  if (!(p_step >= 0.0)) throw ConfigError("selector.p_step must be >= 0");
  if (tau < 0) throw ConfigError("selector.tau must be >= 0");
  if (lstm_hidden < 1) throw ConfigError("selector.lstm_hidden must be >= 1");
  if (!(lstm_lr >= 0.0)) throw ConfigError("selector.lstm_lr must be >= 0");
}

DecisionSource Decision::source() const {
  if (lstm_vote && random_vote) return DecisionSource::both;
  if (lstm_vote) return DecisionSource::lstm;
  if (random_vote) return DecisionSource::random;
  return DecisionSource::external;
}

SelectorState make_selector_state(const SelectorConfig& config, int summary_dim) {
  config.validate();
  SelectorState state;
  state.p_t = config.p_init;
  state.p_min = config.p_min;
  state.p_step = config.p_step;
  state.tau = config.tau;
  state.frames_since_train = config.tau;
  state.sigma = config.sigma;
  state.lstm_lr = config.lstm_lr;
  state.lstm = make_lstm(summary_dim, config.lstm_hidden, config.seed ^ 0x5eed1ce5ULL,
                         config.lstm_init_scale);
  state.rng.seed(config.seed);
  return state;
}

Decision decide(SelectorState& state, std::int64_t frame_id, const FeatureSummary& summary) {
  const LstmState before = state.lstm.state;
  const LstmStep step = lstm_forward(state.lstm, summary);
  state.lstm.state = step.state;

  Decision d;
  d.frame_id = frame_id;
  d.score = step.score;
  d.p_t = state.p_t;
  if (state.frames_since_train < state.tau) {
    d.suppressed = true;
    ++state.frames_since_train;
    return d;
  }
  d.lstm_vote = step.score >= 0.5;
  d.random_vote = bernoulli(state.rng, state.p_t);
  d.train = d.lstm_vote || d.random_vote;
  if (d.train) {
    state.frames_since_train = 0;
    state.pending[frame_id] = PendingDecision{summary, before, d.lstm_vote, d.random_vote};
  } else {
    ++state.frames_since_train;
  }
  return d;
}

double next_probability(double p_t, bool helpful, bool lstm_vote, double p_min, double p_step) {
  const bool lstm_correct = lstm_vote == helpful;
  if (lstm_correct) return std::max(p_t - p_step, p_min);
  return std::min(2.0 * p_t, 1.0);
}

void apply_feedback(SelectorState& state, const FeedbackRecord& fb) {
  auto it = state.pending.find(fb.frame_id);
  if (it == state.pending.end()) {
    throw std::invalid_argument("apply_feedback: frame " + std::to_string(fb.frame_id) +
                                " was never selected for training");
  }
  const PendingDecision pending = std::move(it->second);
  state.pending.erase(it);
  if (!fb.ok()) return;

  const bool helpful = fb.delta_l < state.sigma;
  state.p_t = next_probability(state.p_t, helpful, pending.lstm_vote, state.p_min, state.p_step);

  LstmParams at_decision = state.lstm;
  at_decision.state = pending.state_before;
  const LstmState live = state.lstm.state;
  state.lstm = lstm_train_step(at_decision, pending.summary, helpful ? 1 : 0, state.lstm_lr);
  state.lstm.state = live;
}

void discard_pending(SelectorState& state, std::int64_t frame_id) { state.pending.erase(frame_id); }

bool TrainGate::admit(bool wants_train) {
  if (!open()) {
    ++since_;
    return false;
  }
  if (wants_train) {
    since_ = 0;
  } else {
    ++since_;
  }
  return true;
}

RandomSelector::RandomSelector(double prob, int tau, std::uint64_t seed)
    : prob_(prob), gate_(tau), rng_(seed) {
  if (!(prob >= 0.0 && prob <= 1.0)) throw ConfigError("selector.prob must lie in [0, 1]");
  if (tau < 0) throw ConfigError("selector.tau must be >= 0");
}

Decision RandomSelector::decide(std::int64_t frame_id) {
  Decision d;
  d.frame_id = frame_id;
  d.p_t = prob_;
  if (!gate_.open()) {
    gate_.admit(false);
    d.suppressed = true;
    return d;
  }
  d.random_vote = bernoulli(rng_, prob_);
  d.train = d.random_vote;
  gate_.admit(d.train);
  return d;
}

PeriodicSelector::PeriodicSelector(int period, int tau) : period_(period), gate_(tau) {
  if (period < 1) throw ConfigError("selector.period must be >= 1");
  if (tau < 0) throw ConfigError("selector.tau must be >= 0");
}

Decision PeriodicSelector::decide(std::int64_t frame_id) {
  Decision d;
  d.frame_id = frame_id;
  const bool due = seen_++ % period_ == 0;
  if (!gate_.open()) {
    gate_.admit(false);
    d.suppressed = true;
    return d;
  }
  d.train = due;
  gate_.admit(due);
  return d;
}

double frame_difference(const FeatureFrame& prev, const FeatureFrame& cur) {
  if (prev.values.rows() != cur.values.rows() || prev.values.cols() != cur.values.cols()) {
    throw std::invalid_argument("frame_difference: frame dimensions differ");
  }
  if (cur.values.size() == 0) return 0.0;
  return (cur.values - prev.values).cwiseAbs().mean();
}

bool scene_change(const FeatureFrame& prev, const FeatureFrame& cur, double threshold) {
  return frame_difference(prev, cur) > threshold;
}

Decision SceneChangeSelector::decide(const FeatureFrame& frame) {
  Decision d;
  d.frame_id = frame.frame_id;
  if (prev_) {
    d.score = frame_difference(*prev_, frame);
    d.train = d.score > threshold_;
  }
  prev_ = frame;
  return d;
}

}  // namespace tkd
