#include "tkd/detection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace tkd {

namespace {

// Offsets and sizes are kept strictly inside (0, 1) so encoding stays finite.
constexpr double kFractionEps = 1e-6;

double clamp_fraction(double v) { return std::clamp(v, kFractionEps, 1.0 - kFractionEps); }

bool by_confidence(const Detection& a, const Detection& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  return a.cell < b.cell;
}

}  // namespace

void validate(const GridShape& shape) {
  if (shape.s < 1) throw std::invalid_argument("grid shape: s must be >= 1");
  if (shape.c < 1) throw std::invalid_argument("grid shape: c must be >= 1");
}

DetectionTensor::DetectionTensor(GridShape shape)
    : shape_(shape), values_(Matrix::Zero(shape.cells(), shape.channels())) {
  validate(shape);
}

DetectionTensor::DetectionTensor(GridShape shape, Matrix values)
    : shape_(shape), values_(std::move(values)) {
  validate(shape);
  if (values_.rows() != shape.cells() || values_.cols() != shape.channels()) {
    throw std::invalid_argument("detection tensor: values are " + std::to_string(values_.rows()) +
                                "x" + std::to_string(values_.cols()) + ", shape expects " +
                                std::to_string(shape.cells()) + "x" +
                                std::to_string(shape.channels()));
  }
}

int CellMask::count() const {
  return static_cast<int>(std::count(flags_.begin(), flags_.end(), std::uint8_t{1}));
}

bool Box::valid() const {
  return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h) &&
         w > 0.0 && h > 0.0;
}

double sigmoid(double x) {
  if (x >= 0.0) {
    const double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  const double z = std::exp(x);
  return z / (1.0 + z);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("iou: degenerate box");
  const double ix = std::min(a.cx + a.w / 2, b.cx + b.w / 2) - std::max(a.cx - a.w / 2, b.cx - b.w / 2);
  const double iy = std::min(a.cy + a.h / 2, b.cy + b.h / 2) - std::max(a.cy - a.h / 2, b.cy - b.h / 2);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<Detection> decode_tensor(const DetectionTensor& tensor, double conf_threshold) {
  if (!(conf_threshold >= 0.0 && conf_threshold <= 1.0)) {
    throw std::invalid_argument("decode_tensor: conf_threshold must lie in [0, 1]");
  }
  const GridShape& shape = tensor.shape();
  const Matrix& v = tensor.values();
  const int c = shape.c;
  std::vector<Detection> out;
  std::vector<double> probs(c);
  for (int cell = 0; cell < shape.cells(); ++cell) {
    const double obj = sigmoid(v(cell, channel::kObjectness));
    // max class probability <= 1, so this cell cannot pass
    if (obj < conf_threshold) continue;

    double max_logit = v(cell, channel::kClass0);
    for (int k = 1; k < c; ++k) max_logit = std::max(max_logit, v(cell, channel::kClass0 + k));
    double z = 0.0;
    for (int k = 0; k < c; ++k) {
      probs[k] = std::exp(v(cell, channel::kClass0 + k) - max_logit);
      z += probs[k];
    }
    int best = 0;
    for (int k = 0; k < c; ++k) {
      probs[k] /= z;
      if (probs[k] > probs[best]) best = k;
    }
    const double conf = obj * probs[best];
    if (conf < conf_threshold) continue;

    const int row = cell / shape.s;
    const int col = cell % shape.s;
    Detection det;
    det.box.cx = (col + sigmoid(v(cell, channel::kTx))) / shape.s;
    det.box.cy = (row + sigmoid(v(cell, channel::kTy))) / shape.s;
    // sigmoid underflows to 0 for very negative logits
    det.box.w = std::max(sigmoid(v(cell, channel::kTw)), 1e-9);
    det.box.h = std::max(sigmoid(v(cell, channel::kTh)), 1e-9);
    det.class_id = best;
    det.confidence = conf;
    det.objectness = obj;
    det.cell = cell;
    det.class_probs = probs;
    out.push_back(std::move(det));
  }
  std::sort(out.begin(), out.end(), by_confidence);
  return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::stable_sort(dets.begin(), dets.end(), by_confidence);
  std::vector<bool> suppressed(dets.size(), false);
  std::vector<Detection> kept;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (suppressed[i]) continue;
    for (std::size_t j = i + 1; j < dets.size(); ++j) {
      if (suppressed[j] || dets[j].class_id != dets[i].class_id) continue;
      if (iou(dets[i].box, dets[j].box) > iou_threshold) suppressed[j] = true;
    }
    kept.push_back(std::move(dets[i]));
  }
  return kept;
}

CellPartition partition_cells(const DetectionTensor& oracle, double theta_h) {
  if (!(theta_h > 0.0 && theta_h < 1.0)) {
    throw std::invalid_argument("partition_cells: theta_h must lie in (0, 1)");
  }
  CellPartition part{CellMask(oracle.shape()), CellMask(oracle.shape())};
  const Matrix& v = oracle.values();
  for (int cell = 0; cell < oracle.shape().cells(); ++cell) {
    const bool high = sigmoid(v(cell, channel::kObjectness)) >= theta_h;
    part.high.set(cell, high);
    part.empty.set(cell, !high);
  }
  return part;
}

CellEncoding encode_box(const Box& box, const GridShape& shape) {
  if (!box.valid()) throw std::invalid_argument("encode_box: degenerate box");
  const double gx = std::clamp(box.cx, 0.0, 1.0 - kFractionEps) * shape.s;
  const double gy = std::clamp(box.cy, 0.0, 1.0 - kFractionEps) * shape.s;
  const int col = std::min(static_cast<int>(gx), shape.s - 1);
  const int row = std::min(static_cast<int>(gy), shape.s - 1);
  CellEncoding enc;
  enc.cell = row * shape.s + col;
  enc.tx = logit(clamp_fraction(gx - col));
  enc.ty = logit(clamp_fraction(gy - row));
  enc.tw = logit(clamp_fraction(box.w));
  enc.th = logit(clamp_fraction(box.h));
  return enc;
}

double distance_to_cell_center(const Box& box, const GridShape& shape) {
  const double gx = std::clamp(box.cx, 0.0, 1.0 - kFractionEps) * shape.s;
  const double gy = std::clamp(box.cy, 0.0, 1.0 - kFractionEps) * shape.s;
  const double fx = gx - std::floor(gx) - 0.5;
  const double fy = gy - std::floor(gy) - 0.5;
  return std::hypot(fx, fy);
}

}  // namespace tkd
