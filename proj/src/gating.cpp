#include "headlamp/gating.hpp"

#include <algorithm>
#include <cmath>

namespace headlamp {

namespace {

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double penalty_shift(double beta, double epsilon) { return beta * std::log(epsilon / (1.0 + epsilon)); }

}  // namespace

std::string_view to_string(Region region) {
  return region == Region::EncoderSelf ? "encoder-self" : "decoder-cross";
}

Region region_from_string(std::string_view name) {
  if (name == "encoder-self") return Region::EncoderSelf;
  if (name == "decoder-cross") return Region::DecoderCross;
  throw ArgumentError("unknown region '" + std::string(name) + "'");
}

std::string to_string(const HeadAddress& address) {
  return std::string(to_string(address.region)) + "/L" + std::to_string(address.layer) + "/H" +
         std::to_string(address.head);
}

std::size_t GateLayout::index(const HeadAddress& address) const {
  const std::size_t layers = address.region == Region::EncoderSelf ? enc_layers : dec_layers;
  if (address.layer >= layers || address.head >= heads) {
    throw ArgumentError("head address " + to_string(address) + " outside layout");
  }
  const std::size_t base = address.region == Region::EncoderSelf ? 0 : enc_layers * heads;
  return base + address.layer * heads + address.head;
}

HeadAddress GateLayout::address(std::size_t index) const {
  if (index >= count()) throw ArgumentError("gate index " + std::to_string(index) + " outside layout");
  const std::size_t enc = enc_layers * heads;
  if (index < enc) return {Region::EncoderSelf, index / heads, index % heads};
  index -= enc;
  return {Region::DecoderCross, index / heads, index % heads};
}

std::vector<HeadAddress> GateLayout::all() const {
  std::vector<HeadAddress> out;
  out.reserve(count());
  for (std::size_t i = 0; i < count(); ++i) out.push_back(address(i));
  return out;
}

void HardConcreteParams::validate() const {
  if (!(beta > 0.0 && beta <= 1.0)) throw ArgumentError("Hard-Concrete beta must lie in (0, 1]");
  if (!(epsilon > 0.0)) throw ArgumentError("Hard-Concrete epsilon must be positive");
  if (!(lambda >= 0.0)) throw ArgumentError("L0 penalty weight lambda must be non-negative");
  for (double a : log_alpha) {
    if (!std::isfinite(a)) throw ArgumentError("log_alpha must be finite");
  }
}

std::string_view to_string(GateMode mode) {
  switch (mode) {
    case GateMode::Binary: return "binary";
    case GateMode::HardConcreteTraining: return "hard-concrete";
    case GateMode::InferredFixed: return "inferred";
  }
  return "binary";
}

GateMode gate_mode_from_string(std::string_view name) {
  if (name == "binary") return GateMode::Binary;
  if (name == "hard-concrete") return GateMode::HardConcreteTraining;
  if (name == "inferred") return GateMode::InferredFixed;
  throw ArgumentError("unknown gate mode '" + std::string(name) + "'");
}

GateSet::GateSet(GateMode mode, GateLayout layout, std::vector<double> values,
                 std::optional<HardConcreteParams> params)
    : mode_(mode), layout_(layout), values_(std::move(values)), params_(std::move(params)) {
  if (values_.size() != layout_.count()) {
    throw ArgumentError("gate set has " + std::to_string(values_.size()) + " values, layout needs " +
                        std::to_string(layout_.count()));
  }
  for (double v : values_) {
    if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("gate values must lie in [0, 1]");
    if (mode_ == GateMode::Binary && v != 0.0 && v != 1.0) {
      throw ArgumentError("binary gates must be exactly 0 or 1");
    }
  }
  if (params_) {
    params_->validate();
    if (params_->log_alpha.size() != layout_.count()) {
      throw ArgumentError("Hard-Concrete parameter count does not match the gate layout");
    }
  }
  if (mode_ == GateMode::HardConcreteTraining && !params_) {
    throw ArgumentError("trainable gates need Hard-Concrete parameters");
  }
}

GateSet GateSet::open(const GateLayout& layout) {
  return GateSet(GateMode::Binary, layout, std::vector<double>(layout.count(), 1.0), std::nullopt);
}

GateSet GateSet::binary(const GateLayout& layout, std::vector<double> values) {
  return GateSet(GateMode::Binary, layout, std::move(values), std::nullopt);
}

GateSet GateSet::hard_concrete(const GateLayout& layout, HardConcreteParams params,
                               std::vector<double> values) {
  return GateSet(GateMode::HardConcreteTraining, layout, std::move(values), std::move(params));
}

GateSet GateSet::inferred(const GateLayout& layout, std::vector<double> values,
                          std::optional<HardConcreteParams> params) {
  return GateSet(GateMode::InferredFixed, layout, std::move(values), std::move(params));
}

GateSet GateSet::with_value(const HeadAddress& address, double value) const {
  GateSet copy = *this;
  const std::size_t i = layout_.index(address);
  if (!(value >= 0.0 && value <= 1.0)) throw ArgumentError("gate values must lie in [0, 1]");
  copy.values_[i] = value;
  return copy;
}

double hard_concrete_gate(double log_alpha, double u, double beta, double epsilon) {
  const double s = logistic((std::log(u) - std::log1p(-u) + log_alpha) / beta);
  return std::clamp(s * (1.0 + 2.0 * epsilon) - epsilon, 0.0, 1.0);
}

GateSample sample_gates(const HardConcreteParams& params, Rng& rng) {
  params.validate();
  GateSample sample;
  sample.u.reserve(params.log_alpha.size());
  sample.values.reserve(params.log_alpha.size());
  for (double log_alpha : params.log_alpha) {
    double u = 0.0;
    do {
      u = rng.uniform();
    } while (u <= 0.0 || u >= 1.0);
    sample.u.push_back(u);
    sample.values.push_back(hard_concrete_gate(log_alpha, u, params.beta, params.epsilon));
  }
  return sample;
}

double gate_open_probability(double log_alpha, double beta, double epsilon) {
  return logistic(log_alpha - penalty_shift(beta, epsilon));
}

double expected_l0_penalty(const HardConcreteParams& params) {
  params.validate();
  double total = 0.0;
  for (double a : params.log_alpha) total += gate_open_probability(a, params.beta, params.epsilon);
  return total;
}

std::vector<double> expected_l0_penalty_gradient(const HardConcreteParams& params) {
  params.validate();
  std::vector<double> grad;
  grad.reserve(params.log_alpha.size());
  for (double a : params.log_alpha) {
    const double p = gate_open_probability(a, params.beta, params.epsilon);
    grad.push_back(p * (1.0 - p));
  }
  return grad;
}

std::vector<double> infer_gate_values(const HardConcreteParams& params) {
  params.validate();
  std::vector<double> out;
  out.reserve(params.log_alpha.size());
  for (double a : params.log_alpha) {
    out.push_back(std::clamp(logistic(a) * (1.0 + 2.0 * params.epsilon) - params.epsilon, 0.0, 1.0));
  }
  return out;
}

GateSet infer_gates(const HardConcreteParams& params, const GateLayout& layout) {
  return GateSet::inferred(layout, infer_gate_values(params), params);
}

GateSet set_binary_gate(const GateSet& gates, const HeadAddress& address, int value) {
  if (gates.mode() != GateMode::Binary) throw ArgumentError("set_binary_gate needs a binary gate set");
  if (value != 0 && value != 1) throw ArgumentError("binary gate value must be 0 or 1");
  return gates.with_value(address, static_cast<double>(value));
}

std::vector<double> gate_gradient(const HardConcreteParams& params, std::span<const double> u,
                                  std::span<const double> upstream) {
  params.validate();
  const std::size_t n = params.log_alpha.size();
  if (u.size() != n || upstream.size() != n) {
    throw ArgumentError("gate_gradient: draws, upstream and parameters must have equal length");
  }
  std::vector<double> grad = expected_l0_penalty_gradient(params);
  const double stretch = 1.0 + 2.0 * params.epsilon;
  for (std::size_t i = 0; i < n; ++i) {
    grad[i] *= params.lambda;
    const double s = logistic((std::log(u[i]) - std::log1p(-u[i]) + params.log_alpha[i]) / params.beta);
    const double stretched = s * stretch - params.epsilon;
    if (stretched > 0.0 && stretched < 1.0) {
      grad[i] += upstream[i] * stretch * s * (1.0 - s) / params.beta;
    }
  }
  return grad;
}

}  // namespace headlamp
