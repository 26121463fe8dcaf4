#pragma once

#include <unordered_map>

#include "diffguide/alignment.hpp"
#include "diffguide/checkpoint.hpp"
#include "diffguide/config.hpp"
#include "diffguide/dataset.hpp"

namespace diffguide {

// Conv-backbone detector: the baseline regime and the guided student.
struct StudentModel {
  StudentBackbone backbone;
  DetectorHeads heads;
  ParamTree params;  // aliases backbone + heads parameters, fixed order

  StudentModel() = default;
  StudentModel(const DetectorConfig& cfg, uint64_t seed) {
    Rng brng(derive_seed(seed, "init/backbone"));
    backbone = StudentBackbone(cfg, brng);
    Rng hrng(derive_seed(seed, "init/heads"));
    heads = DetectorHeads(cfg, hrng);
    params.append(backbone.tree, "");
    params.append(heads.tree, "");
  }

  FeaturePyramid forward(const Tensor& image) const { return backbone.forward(image); }
};

// Frozen-denoiser detector: trainable bottlenecks, aggregation weights and
// detector heads over multi-timestep denoiser features. Used directly in
// the diffusion_detector regime and as the frozen teacher in guided runs.
struct DiffusionDetectorModel {
  FusionConfig fcfg;
  ToyDenoiser denoiser;
  NoiseSchedule schedule;
  TimestepPlan plan;
  BottleneckParams bottleneck;
  AggregationWeights agg;
  DetectorHeads heads;
  ParamTree params;  // bottleneck + aggregation + heads
  uint64_t noise_base_seed = 0;

  // taps are a pure function of (image bytes, noise seed); cache them per
  // key when the input image is stable across iterations
  mutable std::unordered_map<std::string, std::vector<DenoiserFeatures>> tap_cache;

  DiffusionDetectorModel() = default;
  DiffusionDetectorModel(const RunConfig& cfg, uint64_t seed)
      : fcfg(cfg.fusion_config()),
        denoiser(cfg.denoiser_seed, cfg.tap_channels, cfg.num_train_steps),
        schedule(build_noise_schedule(cfg.num_train_steps)),
        plan(sample_timesteps(cfg.T, cfg.max_timestep)),
        noise_base_seed(seed) {
    Rng prng(derive_seed(seed, "init/bottleneck"));
    bottleneck = BottleneckParams(fcfg, prng);
    agg = AggregationWeights(fcfg.T);
    Rng hrng(derive_seed(seed, "init/teacher_heads"));
    heads = DetectorHeads(cfg.detector, hrng);
    params.append(bottleneck.tree, "");
    params.append(agg.tree, "");
    params.append(heads.tree, "");
  }

  const std::vector<DenoiserFeatures>& taps_for(const Tensor& image,
                                                const std::string& cache_key) const {
    if (!cache_key.empty()) {
      auto it = tap_cache.find(cache_key);
      if (it != tap_cache.end()) return it->second;
    }
    uint64_t noise_seed = derive_seed(noise_base_seed, "diffuse/" + cache_key);
    auto feats = extract_multistep_features(image, plan, schedule, denoiser, noise_seed);
    if (cache_key.empty()) {
      transient_taps_ = std::move(feats);  // not cached; recomputed per call
      return transient_taps_;
    }
    return tap_cache.emplace(cache_key, std::move(feats)).first->second;
  }

  mutable std::vector<DenoiserFeatures> transient_taps_;

  FeaturePyramid forward(const Tensor& image, const std::string& cache_key) const {
    const auto& feats = taps_for(image, cache_key);
    std::vector<FeaturePyramid> per_step;
    per_step.reserve(feats.size());
    for (const auto& f : feats)
      per_step.push_back(project_bottleneck(f, bottleneck, image.dim(1), image.dim(2)));
    return aggregate_timesteps(per_step, agg);
  }

  void freeze() {
    freeze_tree(bottleneck.tree);
    freeze_tree(agg.tree);
    freeze_tree(heads.tree);
  }

  bool frozen() const {
    for (const auto& [k, v] : params.params)
      if (v.requires_grad()) return false;
    return true;
  }
};

// deep-copied tree with the same names/shapes (for EMA shadows)
inline ParamTree clone_tree(const ParamTree& src) {
  ParamTree out;
  for (const auto& [name, var] : src.params) out.add(name, var.value());
  return out;
}

// copy values from one tree into another (used to run eval on EMA weights)
inline void copy_tree_values(const ParamTree& from, ParamTree& to) {
  if (from.params.size() != to.params.size())
    throw std::invalid_argument("copy_tree_values: tree mismatch");
  for (size_t i = 0; i < from.params.size(); ++i) {
    if (from.params[i].first != to.params[i].first)
      throw std::invalid_argument("copy_tree_values: name mismatch at " +
                                  from.params[i].first);
    to.params[i].second.value().data = from.params[i].second.value().data;
  }
}

}  // namespace diffguide
