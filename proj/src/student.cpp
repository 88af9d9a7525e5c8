#include "tkd/student.hpp"

#include <map>
#include <mutex>
#include <sstream>

#include "tkd/distill.hpp"
#include "tkd/error.hpp"

namespace tkd {

namespace {

DecoderParams pretrain_general(const ModelConfig& model, const StreamConfig& world,
                               const Backbone& backbone) {
  StreamConfig generic = world;
  generic.n_frames = model.pretrain_frames;
  generic.seed = model.seed * 7919 + 17;
  const Stream stream = generate_stream({generic_scene(world.shape.c)}, generic);

  OracleNoiseSpec clean;
  clean.empty_cell_noise_rate = 0.0;
  clean.box_jitter_sigma = 0.0;

  std::vector<FeatureFrame> features;
  std::vector<DetectionTensor> targets;
  features.reserve(stream.frames.size());
  targets.reserve(stream.frames.size());
  for (const FrameRecord& rec : stream.frames) {
    features.push_back(backbone.forward(rec.frame).features);
    targets.push_back(oracle_for_frame(rec, clean, world.shape, model.seed));
  }

  DistillConfig fit;
  fit.lambda = 0.0;
  DecoderParams params = make_decoder(model.backbone.feature_dim, model.decoder_hidden,
                                      world.shape.c, model.seed);
  for (int epoch = 0; epoch < model.pretrain_epochs; ++epoch) {
    for (std::size_t i = 0; i < features.size(); ++i) {
      const DecoderActivations acts = decoder_forward_cached(params, features[i]);
      const DetectionTensor g = tkd_loss_grad(acts.output, targets[i], fit);
      params = sgd_step(params, decoder_backward(params, features[i], acts, g), model.pretrain_lr);
    }
  }
  params.version = 0;
  return params;
}

std::string cache_key(const ModelConfig& m, const StreamConfig& w) {
  std::ostringstream os;
  os.precision(17);
  os << m.backbone.input_dim << ' ' << m.backbone.hidden_dim << ' ' << m.backbone.feature_dim << ' '
     << m.backbone.seed << ' ' << m.decoder_hidden << ' ' << m.seed << ' ' << m.pretrain_frames << ' '
     << m.pretrain_epochs << ' ' << m.pretrain_lr << '|' << w.shape.s << ' ' << w.shape.c << ' '
     << w.input_dim << ' ' << w.transition_len << ' ' << w.world_seed << ' ' << w.amplitude << ' '
     << w.halo << ' ' << w.texture << ' ' << w.frame_noise << ' ' << w.size_min << ' ' << w.size_max;
  return os.str();
}

// Pretraining is deterministic, so repeated constructions in one process share it.
DecoderParams cached_pretrain(const ModelConfig& model, const StreamConfig& world,
                              const Backbone& backbone) {
  static std::mutex mu;
  static std::map<std::string, DecoderParams> cache;
  const std::string key = cache_key(model, world);
  {
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  DecoderParams params = pretrain_general(model, world, backbone);
  std::lock_guard<std::mutex> lock(mu);
  cache.emplace(key, params);
  return params;
}

}  // namespace

void ModelConfig::validate() const {
  if (backbone.input_dim < 1) throw ConfigError("model.input_dim must be >= 1");
  if (backbone.hidden_dim < 0) throw ConfigError("model.backbone_hidden must be >= 0");
  if (backbone.feature_dim < 1) throw ConfigError("model.feature_dim must be >= 1");
  if (decoder_hidden < 1) throw ConfigError("model.decoder_hidden must be >= 1");
  if (pretrain_frames < 1) throw ConfigError("model.pretrain_frames must be >= 1");
  if (pretrain_epochs < 0) throw ConfigError("model.pretrain_epochs must be >= 0");
  if (!(pretrain_lr > 0.0)) throw ConfigError("model.pretrain_lr must be > 0");
}

Student::Student(const ModelConfig& model, const StreamConfig& world)
    : model_(model), shape_(world.shape), backbone_([&] {
        model.validate();
        world.validate();
        if (model.backbone.input_dim != world.input_dim) {
          throw ConfigError("model.input_dim must equal stream.input_dim");
        }
        return model.backbone;
      }()) {
  general_ = cached_pretrain(model_, world, backbone_);
}

}  // namespace tkd
