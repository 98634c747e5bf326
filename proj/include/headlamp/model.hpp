#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "headlamp/activations.hpp"
#include "headlamp/corpus.hpp"
#include "headlamp/gating.hpp"
#include "headlamp/tape.hpp"
#include "headlamp/tensor.hpp"
#include "headlamp/vocab.hpp"

namespace headlamp {

/// Raised when a model is run with an inconsistent configuration (missing
/// gates, wrong parameter shapes).
class ConfigurationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Where softmax is replaced by sparsemax.
///
///  dense       softmax everywhere
///  sparse-enc  sparsemax in encoder self-attention only
///  sparse-tl   sparsemax everywhere except the decoder's top layer
///  sparse-ch   sparsemax everywhere except the copy head
///  sparse-all  sparsemax everywhere
///
/// Decoder self-attention is softmax under every plan.
enum class ActivationPlan { Dense, SparseEnc, SparseTL, SparseCH, SparseAll };

std::string_view to_string(ActivationPlan plan);
ActivationPlan plan_from_string(std::string_view name);

enum class AttentionSite { EncoderSelf, DecoderSelf, DecoderCross };

struct ModelConfig {
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t heads_per_layer = 4;
  std::size_t model_dim = 32;
  std::size_t head_dim = 8;
  std::size_t ffn_dim = 64;
  std::size_t vocab_size = 0;
  std::size_t max_src_len = 400;
  std::size_t max_tgt_len = 32;
  ActivationPlan plan = ActivationPlan::Dense;
  std::uint64_t seed = 1;
  /// Initialise every head of a block as a copy of head 0 (redundancy
  /// fixture). Identical heads stay identical under open binary gates.
  bool duplicate_heads = false;

  void validate() const;
  GateLayout gate_layout() const { return {enc_layers, dec_layers, heads_per_layer}; }
  HeadAddress copy_head() const { return {Region::DecoderCross, dec_layers - 1, 0}; }
  AttentionKind kind(AttentionSite site, std::size_t layer, std::size_t head) const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& config);
void from_json(const nlohmann::json& j, ModelConfig& config);

/// Named parameter tensors in a fixed order.
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor value);
  std::size_t index(std::string_view name) const;
  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Tensor& operator[](std::size_t i) const { return values_[i]; }
  Tensor& operator[](std::size_t i) { return values_[i]; }
  const Tensor& get(std::string_view name) const { return values_[index(name)]; }
  Tensor& get(std::string_view name) { return values_[index(name)]; }
  std::size_t scalar_count() const;

  /// All values in order, flattened.
  Tensor flatten() const;
  void unflatten(const Tensor& flat);

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

/// Rows of one head's attention distribution for one document.
struct AttentionRecord {
  HeadAddress address;
  /// (query steps x key positions)
  Tensor rows;
};

/// Trained state: configuration, vocabulary, parameters and gates.
struct Model {
  ModelConfig config;
  Vocabulary vocab;
  ParamStore params;
  GateSet gates = GateSet::open({});
  /// Seed of the training run that produced the parameters (0 if untrained).
  std::uint64_t train_seed = 0;

  /// Fresh model with deterministic initialisation from config.seed.
  static Model initialise(ModelConfig config, Vocabulary vocab);
  /// Gates used at inference: trainable gates are replaced by their inferred
  /// values.
  GateSet inference_gates() const;
};

/// Single-head scaled dot-product attention on values.
struct AttendResult {
  Tensor context;
  Tensor weights;
};
AttendResult attend(const Tensor& q, const Tensor& k, const Tensor& v, AttentionKind kind);

/// Parameters of one multi-head attention block.
struct AttentionBlock {
  Tensor wq, wk, wv, wo, bo;
};

/// Value-level gated multi-head attention: per head project, attend with
/// kinds[h], scale by gates[h] (empty gates means ungated), concatenate,
/// output projection.
Tensor multi_head(const Tensor& x_q, const Tensor& x_kv, const AttentionBlock& block,
                  std::span<const AttentionKind> kinds, std::span<const double> gates, bool causal,
                  std::size_t head_dim);

/// Pointer-generator mixture over vocab + source OOVs:
/// P(w) = p_gen * softmax(logits)(w) + (1 - p_gen) * sum_{i: src_i = w} copy_i.
std::vector<double> extended_vocab_dist(std::span<const double> vocab_logits,
                                        std::span<const double> copy_attention, double p_gen,
                                        std::span<const std::size_t> source_extended_ids,
                                        std::size_t extended_size);

/// Output of a teacher-forced pass.
struct TeacherForced {
  /// (target steps x extended vocab) distributions.
  Tensor distributions;
  std::vector<AttentionRecord> records;
};

/// Output of greedy decoding.
struct Decoded {
  std::vector<std::size_t> ids;
  std::vector<std::string> tokens;
  std::vector<AttentionRecord> records;
};

struct ForwardOptions {
  bool trace = false;
};

TeacherForced forward_teacher(const Model& model, const GateSet& gates, const TaggedDocument& doc,
                              ForwardOptions options = {});
Decoded greedy_decode(const Model& model, const GateSet& gates, const TaggedDocument& doc,
                      ForwardOptions options = {});

/// Gradient of one teacher-forced example.
struct ExampleGradient {
  /// Mean over target steps of -ln max(P(w*), 1e-12).
  double cross_entropy = 0.0;
  std::vector<Tensor> params;
  /// d cross_entropy / d gate, one per gate.
  std::vector<double> gates;
};

ExampleGradient example_gradient(const Model& model, const GateSet& gates, const TaggedDocument& doc);

/// Mean cross-entropy with the clamp at 1e-12 on target probabilities.
/// Throws DataError when a target lies outside the extended vocabulary.
double mean_cross_entropy(const Tensor& distributions, std::span<const std::size_t> targets);

inline constexpr double kProbabilityFloor = 1e-12;

}  // namespace headlamp
