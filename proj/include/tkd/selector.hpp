#pragma once

// Key-frame selection.
//
// The adaptive selector takes the disjunction of an LSTM vote on the
// frame's feature summary and a Bernoulli(p_t) safeguard vote. After a
// training it refuses to select again for tau frames. When distillation
// feedback for a selected frame arrives, the LSTM is supervised with the
// observed outcome (helpful iff delta_l < sigma) and p_t is adjusted: it
// shrinks by p_step (floored at p_min) when the LSTM's vote agreed with the
// outcome and doubles (capped at 1) when it did not.

#include <cstdint>
#include <map>
#include <optional>
#include <random>

#include "tkd/distill.hpp"
#include "tkd/models.hpp"

namespace tkd {

struct SelectorConfig {
  double p_init = 1.0;
  double p_min = 0.05;
  double p_step = 0.05;
  int tau = 2;
  double sigma = -0.1;
  int lstm_hidden = 8;
  double lstm_lr = 0.1;
  double lstm_init_scale = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Decision {
  std::int64_t frame_id = 0;
  bool train = false;
  bool lstm_vote = false;
  bool random_vote = false;
  bool suppressed = false;
  double score = 0.0;  // LSTM score, 0 for selectors without one
  double p_t = 0.0;    // trigger probability in effect for this decision

  DecisionSource source() const;
};

// Everything needed to supervise the LSTM once a selected frame's feedback lands.
struct PendingDecision {
  FeatureSummary summary;
  LstmState state_before;
  bool lstm_vote = false;
  bool random_vote = false;
};

struct SelectorState {
  double p_t = 1.0;
  double p_min = 0.05;
  double p_step = 0.05;
  int frames_since_train = 0;
  int tau = 2;
  double sigma = -0.1;
  double lstm_lr = 0.1;
  LstmParams lstm;
  std::mt19937_64 rng;
  std::map<std::int64_t, PendingDecision> pending;
};

SelectorState make_selector_state(const SelectorConfig& config, int summary_dim);

// Advances the LSTM on every frame, including suppressed ones.
Decision decide(SelectorState& state, std::int64_t frame_id, const FeatureSummary& summary);

// Throws std::invalid_argument for a frame that was never selected. Aborted
// events (fb.error set) are discarded without touching p_t or the LSTM.
void apply_feedback(SelectorState& state, const FeedbackRecord& fb);

// Forgets a selected frame whose training never ran (e.g. dropped from a queue).
void discard_pending(SelectorState& state, std::int64_t frame_id);

// Pure p_t transition; lstm_vote is the LSTM's vote on the selected frame.
double next_probability(double p_t, bool helpful, bool lstm_vote, double p_min, double p_step);

// Shared tau gate for the baseline selectors.
class TrainGate {
 public:
  explicit TrainGate(int tau) : tau_(tau), since_(tau) {}
  bool open() const { return since_ >= tau_; }
  // Records the frame outcome; returns false if the gate suppressed it.
  bool admit(bool wants_train);

 private:
  int tau_;
  int since_;
};

class RandomSelector {
 public:
  RandomSelector(double prob, int tau, std::uint64_t seed);
  Decision decide(std::int64_t frame_id);
  double prob() const { return prob_; }

 private:
  double prob_;
  TrainGate gate_;
  std::mt19937_64 rng_;
};

class PeriodicSelector {
 public:
  PeriodicSelector(int period, int tau);
  Decision decide(std::int64_t frame_id);

 private:
  int period_;
  std::int64_t seen_ = 0;
  TrainGate gate_;
};

// Mean absolute element difference between two equally sized frames.
double frame_difference(const FeatureFrame& prev, const FeatureFrame& cur);
bool scene_change(const FeatureFrame& prev, const FeatureFrame& cur, double threshold);

class SceneChangeSelector {
 public:
  explicit SceneChangeSelector(double threshold) : threshold_(threshold) {}
  Decision decide(const FeatureFrame& frame);

 private:
  double threshold_;
  std::optional<FeatureFrame> prev_;
};

}  // namespace tkd
