#pragma once

#include <string>
#include <vector>

#include "headlamp/corpus.hpp"
#include "headlamp/model.hpp"

namespace fixture {

inline headlamp::TaggedDocument document(std::vector<std::string> tokens, std::vector<std::string> summary = {}) {
  headlamp::TaggedDocument d;
  d.pos.assign(tokens.size(), "NOUN");
  d.is_ne.assign(tokens.size(), false);
  if (summary.empty()) summary = tokens;
  d.tokens = std::move(tokens);
  d.summary = std::move(summary);
  return d;
}

/// One encoder and one decoder layer, two heads of width 4.
inline headlamp::ModelConfig tiny_config(headlamp::ActivationPlan plan = headlamp::ActivationPlan::Dense,
                                         std::uint64_t seed = 3) {
  headlamp::ModelConfig c;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.heads_per_layer = 2;
  c.model_dim = 8;
  c.head_dim = 4;
  c.ffn_dim = 8;
  c.max_src_len = 16;
  c.max_tgt_len = 16;
  c.plan = plan;
  c.seed = seed;
  return c;
}

inline headlamp::Model tiny_model(headlamp::ActivationPlan plan = headlamp::ActivationPlan::Dense,
                                  std::uint64_t seed = 3) {
  return headlamp::Model::initialise(tiny_config(plan, seed), headlamp::Vocabulary({"a", "b", "c", "d"}));
}

}  // namespace fixture
