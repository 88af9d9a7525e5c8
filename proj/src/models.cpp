#include "tkd/models.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "tkd/error.hpp"

namespace tkd {

namespace {

Matrix gaussian(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

Vector sigmoid_vec(const Vector& x) { return x.unaryExpr([](double v) { return sigmoid(v); }); }

void check_features(const DecoderParams& params, const FeatureFrame& features) {
  if (features.values.rows() != features.cells()) {
    throw std::invalid_argument("decoder: feature frame has " +
                                std::to_string(features.values.rows()) + " rows for s=" +
                                std::to_string(features.s));
  }
  if (features.dim() != params.input_dim()) {
    throw std::invalid_argument("decoder: feature dim " + std::to_string(features.dim()) +
                                " does not match decoder input dim " +
                                std::to_string(params.input_dim()));
  }
  if (params.output_dim() < 6) {
    throw std::invalid_argument("decoder: output dim must be 5 + c with c >= 1");
  }
}

}  // namespace

FeatureSummary summarize(const FeatureFrame& features) {
  const int d = features.dim();
  FeatureSummary out(2 * d);
  out.head(d) = features.values.colwise().mean().transpose();
  out.tail(d) = features.values.colwise().maxCoeff().transpose();
  return out;
}

Backbone::Backbone(const BackboneConfig& config) : config_(config) {
  if (config.input_dim < 1 || config.feature_dim < 1 || config.hidden_dim < 0) {
    throw std::invalid_argument("backbone: dimensions must be positive");
  }
  std::mt19937_64 rng(config.seed);
  std::vector<int> widths{config.input_dim};
  if (config.hidden_dim > 0) widths.push_back(config.hidden_dim);
  widths.push_back(config.feature_dim);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    Layer layer;
    // gain keeps tanh in its responsive range for unit-scale inputs
    layer.weight = gaussian(widths[i + 1], widths[i], 1.2 / std::sqrt(widths[i]), rng);
    layer.bias = gaussian(widths[i + 1], 1, 0.1, rng).col(0);
    layers_.push_back(std::move(layer));
  }
}

Backbone::Output Backbone::forward(const FeatureFrame& frame) const {
  if (frame.dim() != config_.input_dim) {
    throw std::invalid_argument("backbone: frame dim " + std::to_string(frame.dim()) +
                                " does not match input dim " + std::to_string(config_.input_dim));
  }
  Matrix x = frame.values;
  for (const Layer& layer : layers_) {
    Matrix z = x * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    x = z.array().tanh().matrix();
  }
  Output out;
  out.features.frame_id = frame.frame_id;
  out.features.s = frame.s;
  out.features.values = std::move(x);
  out.summary = summarize(out.features);
  return out;
}

bool DecoderParams::all_finite() const {
  return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite();
}

bool DecoderGrad::all_finite() const {
  return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite();
}

DecoderParams make_decoder(int input_dim, int hidden_dim, int classes, std::uint64_t seed,
                           double init_scale) {
  std::mt19937_64 rng(seed);
  DecoderParams p;
  p.w1 = gaussian(hidden_dim, input_dim, init_scale / std::sqrt(input_dim), rng);
  p.b1 = Vector::Zero(hidden_dim);
  p.w2 = gaussian(5 + classes, hidden_dim, init_scale / std::sqrt(hidden_dim), rng);
  p.b2 = Vector::Zero(5 + classes);
  return p;
}

DecoderParams zero_decoder(int input_dim, int hidden_dim, int classes) {
  DecoderParams p;
  p.w1 = Matrix::Zero(hidden_dim, input_dim);
  p.b1 = Vector::Zero(hidden_dim);
  p.w2 = Matrix::Zero(5 + classes, hidden_dim);
  p.b2 = Vector::Zero(5 + classes);
  return p;
}

DecoderGrad zero_grad_like(const DecoderParams& params) {
  DecoderGrad g;
  g.w1 = Matrix::Zero(params.w1.rows(), params.w1.cols());
  g.b1 = Vector::Zero(params.b1.size());
  g.w2 = Matrix::Zero(params.w2.rows(), params.w2.cols());
  g.b2 = Vector::Zero(params.b2.size());
  return g;
}

DecoderActivations decoder_forward_cached(const DecoderParams& params, const FeatureFrame& features) {
  check_features(params, features);
  Matrix z = features.values * params.w1.transpose();
  z.rowwise() += params.b1.transpose();
  DecoderActivations acts;
  acts.hidden = z.array().tanh().matrix();
  Matrix y = acts.hidden * params.w2.transpose();
  y.rowwise() += params.b2.transpose();
  acts.output = DetectionTensor(GridShape{features.s, params.classes()}, std::move(y));
  return acts;
}

DetectionTensor decoder_forward(const DecoderParams& params, const FeatureFrame& features) {
  return decoder_forward_cached(params, features).output;
}

DecoderGrad decoder_backward(const DecoderParams& params, const FeatureFrame& features,
                             const DecoderActivations& acts, const DetectionTensor& loss_grad) {
  const Matrix& g = loss_grad.values();
  if (g.rows() != acts.output.values().rows() || g.cols() != acts.output.values().cols()) {
    throw std::invalid_argument("decoder_backward: loss gradient shape mismatch");
  }
  DecoderGrad out;
  out.w2 = g.transpose() * acts.hidden;
  out.b2 = g.colwise().sum().transpose();
  const Matrix dz = ((g * params.w2).array() * (1.0 - acts.hidden.array().square())).matrix();
  out.w1 = dz.transpose() * features.values;
  out.b1 = dz.colwise().sum().transpose();
  return out;
}

DecoderGrad decoder_grad(const DecoderParams& params, const FeatureFrame& features,
                         const DetectionTensor& loss_grad) {
  return decoder_backward(params, features, decoder_forward_cached(params, features), loss_grad);
}

DecoderParams sgd_step(const DecoderParams& params, const DecoderGrad& grad, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: lr must be > 0");
  if (!grad.all_finite()) throw NumericError("sgd_step: non-finite gradient, update rejected");
  DecoderParams next = params;
  next.w1 -= lr * grad.w1;
  next.b1 -= lr * grad.b1;
  next.w2 -= lr * grad.w2;
  next.b2 -= lr * grad.b2;
  next.version = params.version + 1;
  return next;
}

DecoderStore::DecoderStore(DecoderParams initial)
    : current_(std::make_shared<const DecoderParams>(std::move(initial))) {}

std::shared_ptr<const DecoderParams> DecoderStore::snapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  return current_;
}

std::uint64_t DecoderStore::commit(DecoderParams next) {
  auto ptr = std::make_shared<const DecoderParams>(std::move(next));
  std::lock_guard<std::mutex> lock(mu_);
  if (ptr->version <= current_->version) {
    throw std::logic_error("DecoderStore: version " + std::to_string(ptr->version) +
                           " does not advance " + std::to_string(current_->version));
  }
  current_ = std::move(ptr);
  return current_->version;
}

std::uint64_t DecoderStore::version() const {
  std::lock_guard<std::mutex> lock(mu_);
  return current_->version;
}

LstmParams zero_lstm(int input_dim, int hidden_dim) {
  LstmParams p;
  p.wx = Matrix::Zero(4 * hidden_dim, input_dim);
  p.wh = Matrix::Zero(4 * hidden_dim, hidden_dim);
  p.b = Vector::Zero(4 * hidden_dim);
  p.w_out = Vector::Zero(hidden_dim);
  p.b_out = 0.0;
  reset_state(p);
  return p;
}

LstmParams make_lstm(int input_dim, int hidden_dim, std::uint64_t seed, double init_scale) {
  std::mt19937_64 rng(seed);
  LstmParams p = zero_lstm(input_dim, hidden_dim);
  p.wx = gaussian(4 * hidden_dim, input_dim, init_scale / std::sqrt(input_dim), rng);
  p.wh = gaussian(4 * hidden_dim, hidden_dim, init_scale / std::sqrt(hidden_dim), rng);
  p.w_out = gaussian(hidden_dim, 1, init_scale / std::sqrt(hidden_dim), rng).col(0);
  p.b.segment(hidden_dim, hidden_dim).setOnes();  // forget gate bias
  return p;
}

void reset_state(LstmParams& params) {
  params.state.h = Vector::Zero(params.hidden_dim());
  params.state.c = Vector::Zero(params.hidden_dim());
}

LstmStep lstm_forward(const LstmParams& params, const FeatureSummary& summary) {
  if (summary.size() != params.input_dim()) {
    throw std::invalid_argument("lstm: summary length " + std::to_string(summary.size()) +
                                " does not match input dim " + std::to_string(params.input_dim()));
  }
  const int h = params.hidden_dim();
  const Vector pre = params.wx * summary + params.wh * params.state.h + params.b;
  LstmStep step;
  step.i = sigmoid_vec(pre.segment(0, h));
  step.f = sigmoid_vec(pre.segment(h, h));
  step.g = pre.segment(2 * h, h).array().tanh().matrix();
  step.o = sigmoid_vec(pre.segment(3 * h, h));
  step.state.c = step.f.cwiseProduct(params.state.c) + step.i.cwiseProduct(step.g);
  step.state.h = step.o.cwiseProduct(step.state.c.array().tanh().matrix());
  step.score = sigmoid(params.w_out.dot(step.state.h) + params.b_out);
  return step;
}

double lstm_bce(const LstmParams& params, const FeatureSummary& summary, int label) {
  const LstmStep step = lstm_forward(params, summary);
  const double p = std::clamp(step.score, 1e-12, 1.0 - 1e-12);
  return label ? -std::log(p) : -std::log1p(-p);
}

LstmGrad lstm_bce_grad(const LstmParams& params, const FeatureSummary& summary, int label) {
  if (label != 0 && label != 1) throw std::invalid_argument("lstm: label must be 0 or 1");
  const int h = params.hidden_dim();
  const LstmStep step = lstm_forward(params, summary);
  const double dz = step.score - static_cast<double>(label);

  LstmGrad g;
  g.b_out = dz;
  g.w_out = dz * step.state.h;
  const Vector dh = dz * params.w_out;
  const Vector tanh_c = step.state.c.array().tanh().matrix();
  const Vector d_o = dh.cwiseProduct(tanh_c);
  const Vector dc = dh.cwiseProduct(step.o).cwiseProduct((1.0 - tanh_c.array().square()).matrix());

  Vector dpre(4 * h);
  dpre.segment(0, h) = dc.cwiseProduct(step.g).cwiseProduct(
      step.i.cwiseProduct((1.0 - step.i.array()).matrix()));
  dpre.segment(h, h) = dc.cwiseProduct(params.state.c)
                           .cwiseProduct(step.f.cwiseProduct((1.0 - step.f.array()).matrix()));
  dpre.segment(2 * h, h) =
      dc.cwiseProduct(step.i).cwiseProduct((1.0 - step.g.array().square()).matrix());
  dpre.segment(3 * h, h) =
      d_o.cwiseProduct(step.o.cwiseProduct((1.0 - step.o.array()).matrix()));

  g.wx = dpre * summary.transpose();
  g.wh = dpre * params.state.h.transpose();
  g.b = dpre;
  return g;
}

LstmParams lstm_train_step(const LstmParams& params, const FeatureSummary& summary, int label,
                           double lr) {
  const LstmGrad g = lstm_bce_grad(params, summary, label);
  LstmParams next = params;
  next.wx -= lr * g.wx;
  next.wh -= lr * g.wh;
  next.b -= lr * g.b;
  next.w_out -= lr * g.w_out;
  next.b_out -= lr * g.b_out;
  return next;
}

}  // namespace tkd
