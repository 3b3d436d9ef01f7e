// Copyright 2026 The dmirec Authors
// SPDX-License-Identifier: Apache-2.0

#include "dmi/model.hpp"

namespace dmi {

DenoiserConfig ModelConfig::denoiser_config() const {
  DenoiserConfig c;
  c.dim = extractor.dim;
  c.steps = steps;
  c.heads = heads;
  c.ff_dim = ff_dim;
  c.use_transformer = use_transformer;
  return c;
}

Model Model::init(std::size_t num_items, const ModelConfig& config, CounterRng& rng) {
  if (num_items == 0) throw ConfigError("model needs at least one item");
  Model m;
  m.config = config;
  m.schedule = build_schedule(config.steps, config.noise_scale, config.alpha_min, config.alpha_max);
  // Separate streams keep the extractor initialization identical across
  // variants that differ only in the denoiser.
  CounterRng extractor_rng = rng.substream(1);
  CounterRng denoiser_rng = rng.substream(2);
  m.extractor = ExtractorParams::init(num_items, config.extractor, extractor_rng);
  m.denoiser = DenoiserParams::init(config.denoiser_config(), denoiser_rng);
  return m;
}

Model Model::clone() const {
  Model m = *this;
  for (Tensor* t : {&m.extractor.embeddings, &m.extractor.w1, &m.extractor.w2, &m.denoiser.step_embedding,
                    &m.denoiser.wq, &m.denoiser.wk, &m.denoiser.wv, &m.denoiser.wo, &m.denoiser.ln1_gain,
                    &m.denoiser.ln1_bias, &m.denoiser.ln2_gain, &m.denoiser.ln2_bias, &m.denoiser.ff1_w,
                    &m.denoiser.ff1_b, &m.denoiser.ff2_w, &m.denoiser.ff2_b, &m.denoiser.mlp1_w, &m.denoiser.mlp1_b,
                    &m.denoiser.mlp2_w, &m.denoiser.mlp2_b, &m.denoiser.mlp3_w, &m.denoiser.mlp3_b})
    if (t->defined()) *t = t->clone();
  return m;
}

std::vector<Tensor> Model::trainable() const {
  std::vector<Tensor> out = extractor.parameters();
  if (config.refine.use_diffusion) {
    auto d = denoiser.parameters();
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

std::vector<Tensor> Model::arrays() const {
  std::vector<Tensor> out = extractor.parameters();
  auto d = denoiser.parameters();
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

std::vector<std::string> Model::array_names() const {
  std::vector<std::string> out = {"extractor.embeddings", "extractor.w1", "extractor.w2"};
  auto d = denoiser.parameter_names();
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

}  // namespace dmi
