#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "headlamp/tensor.hpp"

namespace headlamp {

/// Attention regions that carry gates and get traced. Decoder
/// self-attention is neither gated nor analysed.
enum class Region { EncoderSelf, DecoderCross };

std::string_view to_string(Region region);
Region region_from_string(std::string_view name);

struct HeadAddress {
  Region region = Region::EncoderSelf;
  std::size_t layer = 0;
  std::size_t head = 0;

  friend bool operator==(const HeadAddress&, const HeadAddress&) = default;
};

std::string to_string(const HeadAddress& address);

/// Flat indexing of gates: encoder-self heads first (layer-major), then
/// decoder-cross heads.
struct GateLayout {
  std::size_t enc_layers = 0;
  std::size_t dec_layers = 0;
  std::size_t heads = 0;

  std::size_t count() const { return (enc_layers + dec_layers) * heads; }
  std::size_t index(const HeadAddress& address) const;
  HeadAddress address(std::size_t index) const;
  std::vector<HeadAddress> all() const;

  friend bool operator==(const GateLayout&, const GateLayout&) = default;
};

/// Hard-Concrete gate parameters. epsilon stretches the concrete sample to
/// (-epsilon, 1 + epsilon) before clamping to [0, 1].
struct HardConcreteParams {
  std::vector<double> log_alpha;
  double beta = 2.0 / 3.0;
  double epsilon = 0.1;
  double lambda = 0.0;

  static constexpr double kDefaultLogAlpha = 2.0;

  void validate() const;
  friend bool operator==(const HardConcreteParams&, const HardConcreteParams&) = default;
};

enum class GateMode { Binary, HardConcreteTraining, InferredFixed };

std::string_view to_string(GateMode mode);
GateMode gate_mode_from_string(std::string_view name);

/// Immutable per-head gate values plus, for trainable gates, their
/// Hard-Concrete parameters.
class GateSet {
 public:
  /// Binary gates, all open.
  static GateSet open(const GateLayout& layout);
  static GateSet binary(const GateLayout& layout, std::vector<double> values);
  /// Trainable gates; `values` holds the current batch sample.
  static GateSet hard_concrete(const GateLayout& layout, HardConcreteParams params,
                               std::vector<double> values);
  static GateSet inferred(const GateLayout& layout, std::vector<double> values,
                          std::optional<HardConcreteParams> params = std::nullopt);

  GateMode mode() const { return mode_; }
  const GateLayout& layout() const { return layout_; }
  const std::vector<double>& values() const { return values_; }
  const std::optional<HardConcreteParams>& params() const { return params_; }

  double value(const HeadAddress& address) const { return values_[layout_.index(address)]; }
  /// Same set with one gate replaced; the mode is kept.
  GateSet with_value(const HeadAddress& address, double value) const;

  friend bool operator==(const GateSet&, const GateSet&) = default;

 private:
  GateSet(GateMode mode, GateLayout layout, std::vector<double> values,
          std::optional<HardConcreteParams> params);

  GateMode mode_ = GateMode::Binary;
  GateLayout layout_;
  std::vector<double> values_;
  std::optional<HardConcreteParams> params_;
};

/// One batch worth of Hard-Concrete draws. `u` is kept so the pathwise
/// gradient can be evaluated against the exact sample.
struct GateSample {
  std::vector<double> u;
  std::vector<double> values;
};

/// Per gate: u ~ U(0,1), s = sigmoid((ln u - ln(1-u) + log_alpha) / beta),
/// gate = clamp(s * (1 + 2 eps) - eps, 0, 1).
GateSample sample_gates(const HardConcreteParams& params, Rng& rng);

/// Gate value for a fixed uniform draw.
double hard_concrete_gate(double log_alpha, double u, double beta, double epsilon);

/// Probability that a gate is non-zero: sigmoid(log_alpha - beta ln(eps / (1 + eps))).
double gate_open_probability(double log_alpha, double beta, double epsilon);

/// Sum of gate_open_probability over all gates; the relaxed count of open
/// heads.
double expected_l0_penalty(const HardConcreteParams& params);

/// d expected_l0_penalty / d log_alpha, per gate.
std::vector<double> expected_l0_penalty_gradient(const HardConcreteParams& params);

/// Deterministic inference-time gates:
/// clamp(sigmoid(log_alpha) * (1 + 2 eps) - eps, 0, 1).
std::vector<double> infer_gate_values(const HardConcreteParams& params);
GateSet infer_gates(const HardConcreteParams& params, const GateLayout& layout);

/// Ablation switch on a Binary set. `value` must be 0 or 1.
GateSet set_binary_gate(const GateSet& gates, const HeadAddress& address, int value);

/// d loss / d log_alpha for gates sampled from `u`: the reparameterised
/// pathwise term upstream * dgate/dlog_alpha (zero where the clamp was
/// active) plus lambda times the penalty derivative.
std::vector<double> gate_gradient(const HardConcreteParams& params, std::span<const double> u,
                                  std::span<const double> upstream);

}  // namespace headlamp
