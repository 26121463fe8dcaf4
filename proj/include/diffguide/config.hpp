#pragma once

#include <fstream>

#include <json.hpp>

#include "diffguide/augment.hpp"
#include "diffguide/detector.hpp"
#include "diffguide/fusion.hpp"

namespace diffguide {

enum class Regime { baseline, diffusion_detector, guided };

inline std::string regime_name(Regime r) {
  switch (r) {
    case Regime::baseline: return "baseline";
    case Regime::diffusion_detector: return "diffusion_detector";
    case Regime::guided: return "guided";
  }
  throw std::logic_error("regime_name: bad enum");
}

inline Regime regime_from_name(const std::string& s) {
  if (s == "baseline") return Regime::baseline;
  if (s == "diffusion_detector") return Regime::diffusion_detector;
  if (s == "guided") return Regime::guided;
  throw std::invalid_argument("unknown regime: " + s);
}

struct RunConfig {
  Regime regime = Regime::baseline;
  int iterations = 20000;
  int batch_size = 16;
  double learning_rate = 0.02;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  int T = 5;
  int max_timestep = 100;
  int num_train_steps = kNumTrainStepsDefault;
  int tap_channels = 8;
  int reduce_channels = 32;
  uint64_t denoiser_seed = 7;

  double lambda_feature = 0.5;
  double lambda_object = 1.0;
  double tau = 1.0;
  double ema_decay = 0.999;

  DetectorConfig detector;
  AugmentationConfig aug;

  std::string train_annotations;
  std::string eval_annotations;
  std::string image_root;
  std::string teacher_checkpoint;  // required for the guided regime
  uint64_t seed = 0;

  FusionConfig fusion_config() const {
    FusionConfig f;
    f.channel_base = detector.channel_base;
    f.reduce_channels = reduce_channels;
    f.tap_channels = tap_channels;
    f.T = T;
    return f;
  }

  void validate() const {
    if (iterations < 1 || batch_size < 1)
      throw std::invalid_argument("RunConfig: iterations and batch_size must be >= 1");
    if (learning_rate <= 0) throw std::invalid_argument("RunConfig: learning_rate <= 0");
    if (momentum < 0 || momentum >= 1)
      throw std::invalid_argument("RunConfig: momentum outside [0,1)");
    if (T < 1 || max_timestep < T || max_timestep > num_train_steps)
      throw std::invalid_argument("RunConfig: need 1 <= T <= max_timestep <= horizon");
    if (lambda_feature < 0 || lambda_object < 0)
      throw std::invalid_argument("RunConfig: negative lambda");
    if (tau <= 0) throw std::invalid_argument("RunConfig: tau must be positive");
    if (ema_decay < 0 || ema_decay > 1)
      throw std::invalid_argument("RunConfig: ema_decay outside [0,1]");
    if (regime == Regime::guided && teacher_checkpoint.empty())
      throw std::invalid_argument("RunConfig: guided regime needs teacher_checkpoint");
    aug.validate();
  }
};

// 64x64 synthetic preset: small channels, short schedule, cheap heads.
inline RunConfig desk_preset() {
  RunConfig c;
  c.iterations = 500;
  c.batch_size = 8;
  c.learning_rate = 0.005;  // larger rates collapse the tiny backbone's features
  c.T = 5;
  c.max_timestep = 100;
  c.detector.channel_base = 32;
  c.detector.rpn_channels = 32;
  c.detector.roi_reduce_channels = 16;
  c.detector.pool_size = 5;
  c.detector.head_dim = 64;
  c.detector.rpn_pre_nms = 256;
  c.detector.rpn_post_nms_train = 64;
  c.detector.rpn_post_nms_eval = 128;
  c.detector.rpn_batch = 32;
  c.detector.roi_batch = 16;
  c.reduce_channels = 32;
  c.ema_decay = 0.99;  // short runs need a faster-moving average
  // augmentation off by default at desk scale; enable per run as needed
  c.aug.p_color_jitter = c.aug.p_contrast = c.aug.p_equalize = 0;
  c.aug.p_sharpness = c.aug.p_rotate = c.aug.p_shear = c.aug.p_translate = 0;
  return c;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["regime"] = regime_name(c.regime);
  j["iterations"] = c.iterations;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["T"] = c.T;
  j["max_timestep"] = c.max_timestep;
  j["num_train_steps"] = c.num_train_steps;
  j["tap_channels"] = c.tap_channels;
  j["reduce_channels"] = c.reduce_channels;
  j["denoiser_seed"] = c.denoiser_seed;
  j["lambda_feature"] = c.lambda_feature;
  j["lambda_object"] = c.lambda_object;
  j["tau"] = c.tau;
  j["ema_decay"] = c.ema_decay;
  j["seed"] = c.seed;
  j["train_annotations"] = c.train_annotations;
  j["eval_annotations"] = c.eval_annotations;
  j["image_root"] = c.image_root;
  j["teacher_checkpoint"] = c.teacher_checkpoint;
  auto& d = j["detector"];
  d["channel_base"] = c.detector.channel_base;
  d["num_classes"] = c.detector.num_classes;
  d["rpn_channels"] = c.detector.rpn_channels;
  d["roi_reduce_channels"] = c.detector.roi_reduce_channels;
  d["pool_size"] = c.detector.pool_size;
  d["head_dim"] = c.detector.head_dim;
  d["anchor_scale"] = c.detector.anchor_scale;
  d["rpn_pre_nms"] = c.detector.rpn_pre_nms;
  d["rpn_post_nms_train"] = c.detector.rpn_post_nms_train;
  d["rpn_post_nms_eval"] = c.detector.rpn_post_nms_eval;
  d["rpn_batch"] = c.detector.rpn_batch;
  d["roi_batch"] = c.detector.roi_batch;
  d["score_thr"] = c.detector.score_thr;
  auto& a = j["augment"];
  a["p_color_jitter"] = c.aug.p_color_jitter;
  a["p_contrast"] = c.aug.p_contrast;
  a["p_equalize"] = c.aug.p_equalize;
  a["p_sharpness"] = c.aug.p_sharpness;
  a["p_rotate"] = c.aug.p_rotate;
  a["p_shear"] = c.aug.p_shear;
  a["p_translate"] = c.aug.p_translate;
  a["fda_beta"] = c.aug.fda_beta;
  return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c = desk_preset();
  if (j.contains("preset")) {
    std::string p = j["preset"].get<std::string>();
    if (p == "full") {
      c = RunConfig{};
    } else if (p != "desk") {
      throw std::invalid_argument("config: unknown preset " + p);
    }
  }
  if (j.contains("regime")) c.regime = regime_from_name(j["regime"].get<std::string>());
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.T = j.value("T", c.T);
  c.max_timestep = j.value("max_timestep", c.max_timestep);
  c.num_train_steps = j.value("num_train_steps", c.num_train_steps);
  c.tap_channels = j.value("tap_channels", c.tap_channels);
  c.reduce_channels = j.value("reduce_channels", c.reduce_channels);
  c.denoiser_seed = j.value("denoiser_seed", c.denoiser_seed);
  c.lambda_feature = j.value("lambda_feature", c.lambda_feature);
  c.lambda_object = j.value("lambda_object", c.lambda_object);
  c.tau = j.value("tau", c.tau);
  c.ema_decay = j.value("ema_decay", c.ema_decay);
  c.seed = j.value("seed", c.seed);
  c.train_annotations = j.value("train_annotations", c.train_annotations);
  c.eval_annotations = j.value("eval_annotations", c.eval_annotations);
  c.image_root = j.value("image_root", c.image_root);
  c.teacher_checkpoint = j.value("teacher_checkpoint", c.teacher_checkpoint);
  if (j.contains("detector")) {
    const auto& d = j["detector"];
    c.detector.channel_base = d.value("channel_base", c.detector.channel_base);
    c.detector.num_classes = d.value("num_classes", c.detector.num_classes);
    c.detector.rpn_channels = d.value("rpn_channels", c.detector.rpn_channels);
    c.detector.roi_reduce_channels =
        d.value("roi_reduce_channels", c.detector.roi_reduce_channels);
    c.detector.pool_size = d.value("pool_size", c.detector.pool_size);
    c.detector.head_dim = d.value("head_dim", c.detector.head_dim);
    c.detector.anchor_scale = d.value("anchor_scale", c.detector.anchor_scale);
    c.detector.rpn_pre_nms = d.value("rpn_pre_nms", c.detector.rpn_pre_nms);
    c.detector.rpn_post_nms_train =
        d.value("rpn_post_nms_train", c.detector.rpn_post_nms_train);
    c.detector.rpn_post_nms_eval =
        d.value("rpn_post_nms_eval", c.detector.rpn_post_nms_eval);
    c.detector.rpn_batch = d.value("rpn_batch", c.detector.rpn_batch);
    c.detector.roi_batch = d.value("roi_batch", c.detector.roi_batch);
    c.detector.score_thr = d.value("score_thr", c.detector.score_thr);
  }
  if (j.contains("augment")) {
    const auto& a = j["augment"];
    c.aug.p_color_jitter = a.value("p_color_jitter", c.aug.p_color_jitter);
    c.aug.p_contrast = a.value("p_contrast", c.aug.p_contrast);
    c.aug.p_equalize = a.value("p_equalize", c.aug.p_equalize);
    c.aug.p_sharpness = a.value("p_sharpness", c.aug.p_sharpness);
    c.aug.p_rotate = a.value("p_rotate", c.aug.p_rotate);
    c.aug.p_shear = a.value("p_shear", c.aug.p_shear);
    c.aug.p_translate = a.value("p_translate", c.aug.p_translate);
    c.aug.fda_beta = a.value("fda_beta", c.aug.fda_beta);
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("load_config: malformed JSON in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

// FNV-1a over the canonical serialized config; stamped into checkpoints
inline uint64_t config_hash(const RunConfig& c) {
  std::string s = config_to_json(c).dump();
  uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace diffguide
