#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "headlamp/evalstats.hpp"
#include "headlamp/gating.hpp"
#include "headlamp/model.hpp"

namespace headlamp {

enum class Optimizer { Sgd, Adam };

std::string_view to_string(Optimizer optimizer);
Optimizer optimizer_from_string(std::string_view name);

struct TrainConfig {
  double lambda = 0.0;
  double learning_rate = 0.5;
  std::size_t batch_size = 16;
  std::size_t max_steps = 800;
  std::uint64_t seed = 1;
  /// Global gradient-norm clip (parameters and log_alpha together).
  double grad_clip = 1.0;
  Optimizer optimizer = Optimizer::Sgd;
  /// Scale the learning rate by 1 - step / max_steps.
  bool linear_decay = true;
  /// Train Hard-Concrete gates with the L0 penalty. When the model has no
  /// trainable gates yet they start at log_alpha = 2.
  bool prune = false;
  double beta = 2.0 / 3.0;
  double epsilon = 0.1;

  void validate() const;
};

/// Training stopped on a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct LossPoint {
  std::size_t step = 0;
  double cross_entropy = 0.0;
  double l0_penalty = 0.0;
  double total = 0.0;
};

/// Mean target cross-entropy plus lambda times the expected L0 penalty. The
/// penalty term is skipped when `gates` is null.
double summarization_loss(const Tensor& distributions, std::span<const std::size_t> targets,
                          const HardConcreteParams* gates, double lambda);

struct TrainResult {
  Model model;
  std::vector<LossPoint> curve;
};

using StepCallback = std::function<void(const LossPoint&)>;

/// Mini-batch training with per-batch gate re-sampling. Batch examples are
/// differentiated in parallel and reduced in batch order, so runs are
/// bit-reproducible for a fixed seed.
TrainResult train(Model model, const std::vector<TaggedDocument>& corpus, const TrainConfig& config,
                  const StepCallback& on_step = {});

/// Columns: step,cross_entropy,l0_penalty,total
std::string loss_curve_csv(const std::vector<LossPoint>& curve);

struct TaskMetrics {
  /// Position-wise greedy token accuracy against the reference summary.
  double token_accuracy = 0.0;
  RougeScores rouge;
};

TaskMetrics evaluate(const Model& model, const GateSet& gates, const std::vector<TaggedDocument>& docs);

struct PrunedCount {
  std::size_t encoder = 0;
  std::size_t decoder = 0;
  std::size_t total() const { return encoder + decoder; }
};

/// Gates whose inferred value is exactly zero, by region.
PrunedCount count_pruned(const GateSet& gates);

struct SweepPoint {
  double lambda = 0.0;
  PrunedCount pruned;
  TaskMetrics metrics;
  Model model;
  std::vector<LossPoint> curve;
};

/// Fine-tunes `base` with trainable gates once per lambda and reports the
/// exactly-zero inferred gates and task metrics on `eval_docs`.
std::vector<SweepPoint> lambda_sweep(const Model& base, const std::vector<TaggedDocument>& train_docs,
                                     const std::vector<TaggedDocument>& eval_docs,
                                     const std::vector<double>& lambdas, const TrainConfig& config);

}  // namespace headlamp
