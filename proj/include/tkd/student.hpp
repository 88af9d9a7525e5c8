#pragma once

// The student detector: frozen backbone, frozen general decoder and the
// starting point of the trainable TKD decoder.
//
// The general decoder is fitted offline on a generic stream (uniform classes,
// canonical appearance, no scene background) against a clean oracle. Scenes
// that bend class appearance or add background then leave it mediocre, which
// is the gap online distillation closes.

#include <cstdint>

#include "tkd/detection.hpp"
#include "tkd/models.hpp"
#include "tkd/sim_stream.hpp"

namespace tkd {

struct ModelConfig {
  BackboneConfig backbone;
  int decoder_hidden = 32;
  std::uint64_t seed = 7;
  int pretrain_frames = 1500;
  int pretrain_epochs = 3;
  double pretrain_lr = 0.05;

  void validate() const;
};

class Student {
 public:
  // Pretrains the general decoder; deterministic given (model, stream) configs.
  Student(const ModelConfig& model, const StreamConfig& world);

  const ModelConfig& config() const { return model_; }
  const GridShape& shape() const { return shape_; }
  const Backbone& backbone() const { return backbone_; }
  const DecoderParams& general() const { return general_; }
  // Initial TKD decoder: a copy of the general decoder.
  DecoderParams initial_tkd() const { return general_; }

 private:
  ModelConfig model_;
  GridShape shape_;
  Backbone backbone_;
  DecoderParams general_;
};

}  // namespace tkd
