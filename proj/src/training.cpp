#include "headlamp/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "headlamp/parallel.hpp"

namespace headlamp {

std::string_view to_string(Optimizer optimizer) { return optimizer == Optimizer::Sgd ? "sgd" : "adam"; }

Optimizer optimizer_from_string(std::string_view name) {
  if (name == "sgd") return Optimizer::Sgd;
  if (name == "adam") return Optimizer::Adam;
  throw ArgumentError("unknown optimizer '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ArgumentError("lambda must be a finite value >= 0");
  if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be positive");
  if (batch_size == 0) throw ArgumentError("batch_size must be positive");
  if (!(grad_clip > 0.0)) throw ArgumentError("grad_clip must be positive");
  if (!(beta > 0.0 && beta <= 1.0)) throw ArgumentError("beta must lie in (0, 1]");
  if (!(epsilon > 0.0)) throw ArgumentError("epsilon must be positive");
}

double summarization_loss(const Tensor& distributions, std::span<const std::size_t> targets,
                          const HardConcreteParams* gates, double lambda) {
  double loss = mean_cross_entropy(distributions, targets);
  if (gates) loss += lambda * expected_l0_penalty(*gates);
  return loss;
}

namespace {

// Adam with bias correction; SGD ignores the moment buffers.
class OptimizerState {
 public:
  OptimizerState(Optimizer kind, double lr, std::size_t n) : kind_(kind), lr_(lr), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> values, std::span<const double> grads, double lr_scale) {
    ++t_;
    const double lr = lr_ * lr_scale;
    if (kind_ == Optimizer::Sgd) {
      for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * grads[i];
      return;
    }
    constexpr double b1 = 0.9, b2 = 0.98, eps = 1e-9;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < values.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i] * grads[i];
      values[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
    }
  }

 private:
  Optimizer kind_;
  double lr_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace

TrainResult train(Model model, const std::vector<TaggedDocument>& corpus, const TrainConfig& config,
                  const StepCallback& on_step) {
  config.validate();
  if (corpus.empty()) throw ArgumentError("training corpus is empty");
  const GateLayout layout = model.config.gate_layout();

  std::optional<HardConcreteParams> hc;
  if (config.prune) {
    if (model.gates.mode() == GateMode::HardConcreteTraining ||
        (model.gates.params() && model.gates.mode() == GateMode::InferredFixed)) {
      hc = *model.gates.params();
    } else {
      hc = HardConcreteParams{std::vector<double>(layout.count(), HardConcreteParams::kDefaultLogAlpha),
                              config.beta, config.epsilon, config.lambda};
    }
    hc->beta = config.beta;
    hc->epsilon = config.epsilon;
    hc->lambda = config.lambda;
    hc->validate();
  }

  Rng rng(config.seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  auto shuffle = [&] {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  };
  shuffle();
  std::size_t cursor = 0;

  Tensor flat = model.params.flatten();
  const std::size_t n_params = flat.size();
  const std::size_t n_gates = hc ? hc->log_alpha.size() : 0;
  OptimizerState optimizer(config.optimizer, config.learning_rate, n_params + n_gates);
  std::vector<double> values(n_params + n_gates), grads(n_params + n_gates);

  TrainResult result;
  result.curve.reserve(config.max_steps);
  for (std::size_t step = 0; step < config.max_steps; ++step) {
    std::vector<std::size_t> batch(config.batch_size);
    for (auto& b : batch) {
      if (cursor == order.size()) {
        shuffle();
        cursor = 0;
      }
      b = order[cursor++];
    }

    GateSample sample;
    GateSet gates = model.gates;
    if (hc) {
      sample = sample_gates(*hc, rng);
      gates = GateSet::hard_concrete(layout, *hc, sample.values);
    }

    std::vector<ExampleGradient> per_example(batch.size());
    try {
      parallel_for(batch.size(), [&](std::size_t i) { per_example[i] = example_gradient(model, gates, corpus[batch[i]]); });
    } catch (const EvaluationError& e) {
      throw DivergenceError(step, "training diverged at step " + std::to_string(step) + " (" + e.what() + ")");
    }

    // Ordered reduction.
    std::fill(grads.begin(), grads.end(), 0.0);
    std::vector<double> gate_upstream(layout.count(), 0.0);
    double ce = 0.0;
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    for (const auto& ex : per_example) {
      ce += ex.cross_entropy;
      std::size_t offset = 0;
      for (const auto& g : ex.params) {
        for (std::size_t k = 0; k < g.size(); ++k) grads[offset + k] += g[k] * inv_batch;
        offset += g.size();
      }
      for (std::size_t k = 0; k < gate_upstream.size(); ++k) gate_upstream[k] += ex.gates[k] * inv_batch;
    }
    ce *= inv_batch;

    LossPoint point{step, ce, 0.0, ce};
    if (hc) {
      point.l0_penalty = expected_l0_penalty(*hc);
      point.total = ce + config.lambda * point.l0_penalty;
      const auto gg = gate_gradient(*hc, sample.u, gate_upstream);
      std::copy(gg.begin(), gg.end(), grads.begin() + static_cast<std::ptrdiff_t>(n_params));
    }
    if (!std::isfinite(point.total)) {
      throw DivergenceError(step, "training diverged at step " + std::to_string(step) + " (loss is not finite)");
    }

    double norm = 0.0;
    for (double g : grads) norm += g * g;
    norm = std::sqrt(norm);
    if (!std::isfinite(norm)) {
      throw DivergenceError(step, "training diverged at step " + std::to_string(step) + " (gradient is not finite)");
    }
    if (norm > config.grad_clip) {
      const double s = config.grad_clip / norm;
      for (auto& g : grads) g *= s;
    }

    flat = model.params.flatten();
    std::copy(flat.raw().begin(), flat.raw().end(), values.begin());
    if (hc) std::copy(hc->log_alpha.begin(), hc->log_alpha.end(), values.begin() + static_cast<std::ptrdiff_t>(n_params));
    const double lr_scale =
        config.linear_decay ? 1.0 - static_cast<double>(step) / static_cast<double>(config.max_steps) : 1.0;
    optimizer.step(values, grads, lr_scale);
    if (!std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); })) {
      throw DivergenceError(step, "training diverged at step " + std::to_string(step) + " (parameters are not finite)");
    }
    std::copy_n(values.begin(), n_params, flat.raw().begin());
    model.params.unflatten(flat);
    if (hc) {
      std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(n_params), n_gates, hc->log_alpha.begin());
      model.gates = GateSet::hard_concrete(layout, *hc, infer_gate_values(*hc));
    }

    result.curve.push_back(point);
    if (on_step) on_step(point);
  }
  model.train_seed = config.seed;
  result.model = std::move(model);
  return result;
}

std::string loss_curve_csv(const std::vector<LossPoint>& curve) {
  std::ostringstream out;
  out.precision(17);
  out << "step,cross_entropy,l0_penalty,total\n";
  for (const auto& p : curve) out << p.step << ',' << p.cross_entropy << ',' << p.l0_penalty << ',' << p.total << '\n';
  return out.str();
}

TaskMetrics evaluate(const Model& model, const GateSet& gates, const std::vector<TaggedDocument>& docs) {
  if (docs.empty()) throw ArgumentError("evaluate: no documents");
  std::vector<Tokens> outputs(docs.size());
  parallel_for(docs.size(), [&](std::size_t i) { outputs[i] = greedy_decode(model, gates, docs[i]).tokens; });
  TaskMetrics m;
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto& ref = docs[i].summary;
    for (std::size_t t = 0; t < ref.size(); ++t) correct += (t < outputs[i].size() && outputs[i][t] == ref[t]);
    total += ref.size();
    const auto r = rouge(outputs[i], ref);
    m.rouge.r1_f1 += r.r1_f1;
    m.rouge.r2_f1 += r.r2_f1;
    m.rouge.rl_f1 += r.rl_f1;
  }
  const double n = static_cast<double>(docs.size());
  m.rouge.r1_f1 /= n;
  m.rouge.r2_f1 /= n;
  m.rouge.rl_f1 /= n;
  m.token_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return m;
}

PrunedCount count_pruned(const GateSet& gates) {
  PrunedCount c;
  const auto& layout = gates.layout();
  for (std::size_t i = 0; i < layout.count(); ++i) {
    if (gates.values()[i] != 0.0) continue;
    if (layout.address(i).region == Region::EncoderSelf) ++c.encoder;
    else ++c.decoder;
  }
  return c;
}

std::vector<SweepPoint> lambda_sweep(const Model& base, const std::vector<TaggedDocument>& train_docs,
                                     const std::vector<TaggedDocument>& eval_docs, const std::vector<double>& lambdas,
                                     const TrainConfig& config) {
  if (lambdas.empty()) throw ArgumentError("lambda sweep needs at least one lambda");
  std::vector<SweepPoint> points;
  points.reserve(lambdas.size());
  for (double lambda : lambdas) {
    TrainConfig c = config;
    c.lambda = lambda;
    c.prune = true;
    Model start = base;
    start.gates = GateSet::open(base.config.gate_layout());
    auto trained = train(std::move(start), train_docs, c);
    SweepPoint p;
    p.lambda = lambda;
    const GateSet gates = trained.model.inference_gates();
    p.pruned = count_pruned(gates);
    p.metrics = evaluate(trained.model, gates, eval_docs);
    p.model = std::move(trained.model);
    p.curve = std::move(trained.curve);
    points.push_back(std::move(p));
  }
  return points;
}

}  // namespace headlamp
