#pragma once

// Toy differentiable detectors: a frozen random backbone, the per-cell
// two-layer decoder head shared by the general and TKD decoders, and the
// single-cell LSTM used by the key-frame selector.

#include <cstdint>
#include <memory>
#include <mutex>
#include <vector>

#include "tkd/detection.hpp"

namespace tkd {

// Grid of per-cell feature vectors (cells x dim, row-major cell order).
struct FeatureFrame {
  std::int64_t frame_id = 0;
  int s = 0;
  Matrix values;

  int dim() const { return static_cast<int>(values.cols()); }
  int cells() const { return s * s; }
};

// Per-channel mean followed by per-channel max over the grid; length 2 * dim.
using FeatureSummary = Vector;

FeatureSummary summarize(const FeatureFrame& features);

struct BackboneConfig {
  int input_dim = 24;
  int hidden_dim = 192;  // 0 -> single affine layer
  int feature_dim = 32;
  std::uint64_t seed = 1;
};

class Backbone {
 public:
  struct Output {
    FeatureFrame features;
    FeatureSummary summary;
  };

  explicit Backbone(const BackboneConfig& config);

  const BackboneConfig& config() const { return config_; }
  Output forward(const FeatureFrame& frame) const;

 private:
  struct Layer {
    Matrix weight;  // out x in
    Vector bias;
  };
  BackboneConfig config_;
  std::vector<Layer> layers_;
};

// Two per-cell affine layers with tanh between: d -> hidden -> 5 + c.
struct DecoderParams {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
  std::uint64_t version = 0;

  int input_dim() const { return static_cast<int>(w1.cols()); }
  int hidden_dim() const { return static_cast<int>(w1.rows()); }
  int output_dim() const { return static_cast<int>(w2.rows()); }
  int classes() const { return output_dim() - 5; }
  bool all_finite() const;
};

struct DecoderGrad {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;

  bool all_finite() const;
};

DecoderParams make_decoder(int input_dim, int hidden_dim, int classes, std::uint64_t seed,
                           double init_scale = 1.0);
DecoderParams zero_decoder(int input_dim, int hidden_dim, int classes);
DecoderGrad zero_grad_like(const DecoderParams& params);

// Throws std::invalid_argument on a feature/parameter dimension mismatch.
DetectionTensor decoder_forward(const DecoderParams& params, const FeatureFrame& features);

struct DecoderActivations {
  Matrix hidden;  // cells x hidden, post-tanh
  DetectionTensor output;
};

DecoderActivations decoder_forward_cached(const DecoderParams& params, const FeatureFrame& features);

// Gradient of <output, loss_grad> with respect to every parameter.
DecoderGrad decoder_grad(const DecoderParams& params, const FeatureFrame& features,
                         const DetectionTensor& loss_grad);
DecoderGrad decoder_backward(const DecoderParams& params, const FeatureFrame& features,
                             const DecoderActivations& acts, const DetectionTensor& loss_grad);

// params - lr * grad with version + 1. Non-finite gradients throw NumericError.
DecoderParams sgd_step(const DecoderParams& params, const DecoderGrad& grad, double lr);

// Readers take immutable snapshots; a single writer commits new versions.
class DecoderStore {
 public:
  explicit DecoderStore(DecoderParams initial);

  std::shared_ptr<const DecoderParams> snapshot() const;
  // Throws std::logic_error if next.version does not exceed the current version.
  std::uint64_t commit(DecoderParams next);
  std::uint64_t version() const;

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const DecoderParams> current_;
};

struct LstmState {
  Vector h;
  Vector c;
};

// Gate rows are stacked as [input, forget, candidate, output].
struct LstmParams {
  Matrix wx;  // 4h x input
  Matrix wh;  // 4h x h
  Vector b;   // 4h
  Vector w_out;
  double b_out = 0.0;
  LstmState state;

  int input_dim() const { return static_cast<int>(wx.cols()); }
  int hidden_dim() const { return static_cast<int>(wh.cols()); }
};

LstmParams make_lstm(int input_dim, int hidden_dim, std::uint64_t seed, double init_scale);
LstmParams zero_lstm(int input_dim, int hidden_dim);
void reset_state(LstmParams& params);

struct LstmStep {
  double score = 0.5;
  LstmState state;  // state after consuming the input
  Vector i, f, g, o;
};

LstmStep lstm_forward(const LstmParams& params, const FeatureSummary& summary);

struct LstmGrad {
  Matrix wx;
  Matrix wh;
  Vector b;
  Vector w_out;
  double b_out = 0.0;
};

// Binary cross-entropy of the step score against label, from params.state.
double lstm_bce(const LstmParams& params, const FeatureSummary& summary, int label);
// Gradient truncated at the current step: the incoming state is a constant.
LstmGrad lstm_bce_grad(const LstmParams& params, const FeatureSummary& summary, int label);
// One SGD step on lstm_bce; the recurrent state is left untouched.
LstmParams lstm_train_step(const LstmParams& params, const FeatureSummary& summary, int label,
                           double lr);

}  // namespace tkd
