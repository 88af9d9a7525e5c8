#pragma once

// Grid detection tensors, box geometry, decoding and suppression.
//
// A detection tensor is an S x S grid where every cell carries 5 + C
// channels: objectness logit, box offsets (tx, ty, tw, th) and C class
// logits. Values are stored pre-activation; decoding applies the sigmoid
// and softmax. Cells are addressed in row-major order (cell = row * s + col).

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace tkd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace channel {
inline constexpr int kObjectness = 0;
inline constexpr int kTx = 1;
inline constexpr int kTy = 2;
inline constexpr int kTw = 3;
inline constexpr int kTh = 4;
inline constexpr int kClass0 = 5;
}  // namespace channel

struct GridShape {
  int s = 8;  // cells per side
  int c = 6;  // class count

  int channels() const { return 5 + c; }
  int cells() const { return s * s; }
  std::size_t size() const {
    return static_cast<std::size_t>(cells()) * static_cast<std::size_t>(channels());
  }
  bool operator==(const GridShape&) const = default;
};

// Throws std::invalid_argument unless s >= 1 and c >= 1.
void validate(const GridShape& shape);

class DetectionTensor {
 public:
  DetectionTensor() = default;
  explicit DetectionTensor(GridShape shape);
  DetectionTensor(GridShape shape, Matrix values);

  const GridShape& shape() const { return shape_; }
  const Matrix& values() const { return values_; }
  Matrix& values() { return values_; }

  int cell_index(int row, int col) const { return row * shape_.s + col; }
  double operator()(int row, int col, int ch) const { return values_(cell_index(row, col), ch); }
  double& operator()(int row, int col, int ch) { return values_(cell_index(row, col), ch); }

  bool all_finite() const { return values_.allFinite(); }

 private:
  GridShape shape_{};
  Matrix values_;  // cells x channels
};

class CellMask {
 public:
  CellMask() = default;
  explicit CellMask(GridShape shape) : shape_(shape), flags_(shape.cells(), 0) {}

  const GridShape& shape() const { return shape_; }
  bool operator[](int cell) const { return flags_[cell] != 0; }
  void set(int cell, bool on) { flags_[cell] = on ? 1 : 0; }
  int count() const;
  int size() const { return static_cast<int>(flags_.size()); }

 private:
  GridShape shape_{};
  std::vector<std::uint8_t> flags_;
};

// Axis-aligned box in normalized image coordinates.
struct Box {
  double cx = 0.5;
  double cy = 0.5;
  double w = 0.1;
  double h = 0.1;

  double area() const { return w * h; }
  bool valid() const;
};

struct Detection {
  Box box;
  int class_id = 0;
  double confidence = 0.0;  // objectness * max class probability
  double objectness = 0.0;
  int cell = -1;
  std::vector<double> class_probs;
};

struct GroundTruthObject {
  Box box;
  int class_id = 0;
  std::int64_t object_id = 0;
};

double sigmoid(double x);
double logit(double p);

// Intersection over union. Throws std::invalid_argument on a degenerate box.
double iou(const Box& a, const Box& b);

std::vector<Detection> decode_tensor(const DetectionTensor& tensor, double conf_threshold);

// Class-aware greedy suppression. Output is ordered by descending confidence.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

struct CellPartition {
  CellMask high;   // oracle objectness >= theta_h
  CellMask empty;  // complement of high
};

CellPartition partition_cells(const DetectionTensor& oracle, double theta_h);

// Pre-activation box channels for a box placed in its containing cell.
struct CellEncoding {
  int cell = 0;
  double tx = 0.0;
  double ty = 0.0;
  double tw = 0.0;
  double th = 0.0;
};

CellEncoding encode_box(const Box& box, const GridShape& shape);

// Cell-local center as a fraction of the cell; used to break cell collisions.
double distance_to_cell_center(const Box& box, const GridShape& shape);

}  // namespace tkd
