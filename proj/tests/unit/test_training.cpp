#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "../support/fixtures.hpp"
#include "headlamp/training.hpp"

using namespace headlamp;

namespace {

std::vector<TaggedDocument> tiny_corpus(std::size_t n = 12) {
  CorpusSpec spec;
  spec.n_docs = n;
  spec.min_src_len = 3;
  spec.max_src_len = 5;
  spec.vocab_size = 8;
  spec.seed = 4;
  return generate(spec);
}

Model tiny_for(const std::vector<TaggedDocument>& docs, ActivationPlan plan = ActivationPlan::Dense) {
  return Model::initialise(fixture::tiny_config(plan), Vocabulary::build(docs, 100));
}

TrainConfig short_run(std::size_t steps) {
  TrainConfig c;
  c.max_steps = steps;
  c.batch_size = 4;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_CASE("summarization loss examples") {
  const std::vector<std::size_t> targets{0, 2, 1};
  const auto perfect = Tensor::matrix(3, 3, {1, 0, 0, 0, 0, 1, 0, 1, 0});
  CHECK(summarization_loss(perfect, targets, nullptr, 0.0) == 0.0);

  const std::size_t n = 7;
  const auto uniform = Tensor({3, n}, 1.0 / n);
  CHECK(summarization_loss(uniform, targets, nullptr, 0.0) == doctest::Approx(std::log(7.0)).epsilon(1e-14));

  HardConcreteParams one_gate;
  one_gate.log_alpha = {0.0};
  const double ce = summarization_loss(uniform, targets, nullptr, 0.0);
  CHECK(summarization_loss(uniform, targets, &one_gate, 1.0) == doctest::Approx(ce + 0.8318).epsilon(1e-4));
  CHECK(summarization_loss(uniform, targets, &one_gate, 0.0) == ce);
  CHECK(summarization_loss(uniform, targets, &one_gate, 2.0) - ce ==
        doctest::Approx(2.0 * expected_l0_penalty(one_gate)).epsilon(1e-14));

  const std::vector<std::size_t> outside{0, 2, 7};
  CHECK_THROWS_AS(summarization_loss(uniform, outside, nullptr, 0.0), DataError);
}

TEST_CASE("training config validation") {
  auto docs = tiny_corpus();
  auto model = tiny_for(docs);
  auto bad = [&](auto mutate) {
    auto c = short_run(1);
    mutate(c);
    return c;
  };
  CHECK_THROWS_AS(train(model, docs, bad([](TrainConfig& c) { c.lambda = -1; })), ArgumentError);
  CHECK_THROWS_AS(train(model, docs, bad([](TrainConfig& c) { c.learning_rate = 0; })), ArgumentError);
  CHECK_THROWS_AS(train(model, docs, bad([](TrainConfig& c) { c.batch_size = 0; })), ArgumentError);
  CHECK_THROWS_AS(train(model, {}, short_run(1)), ArgumentError);
  CHECK_THROWS_AS(optimizer_from_string("rmsprop"), ArgumentError);
  CHECK(optimizer_from_string("adam") == Optimizer::Adam);
}

TEST_CASE("same seed gives identical runs regardless of thread count") {
  const auto docs = tiny_corpus();
  const auto model = tiny_for(docs, ActivationPlan::SparseAll);
  auto c = short_run(6);
  c.prune = true;
  c.lambda = 0.5;
  ::setenv("HEADLAMP_THREADS", "1", 1);
  const auto a = train(model, docs, c);
  ::setenv("HEADLAMP_THREADS", "3", 1);
  const auto b = train(model, docs, c);
  ::unsetenv("HEADLAMP_THREADS");
  REQUIRE(a.curve.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(a.curve[i].total == b.curve[i].total);
    CHECK(a.curve[i].step == i);
  }
  CHECK(a.model.params == b.model.params);
  CHECK(a.model.gates == b.model.gates);
  CHECK(a.model.train_seed == 9);

  c.seed = 10;
  CHECK_FALSE(train(model, docs, c).model.params == a.model.params);
}

TEST_CASE("loss curve records the penalty term") {
  const auto docs = tiny_corpus();
  auto c = short_run(3);
  const auto plain = train(tiny_for(docs), docs, c);
  for (const auto& p : plain.curve) {
    CHECK(p.l0_penalty == 0.0);
    CHECK(p.total == p.cross_entropy);
  }
  c.prune = true;
  c.lambda = 0.25;
  const auto gated = train(tiny_for(docs), docs, c);
  CHECK(gated.curve[0].l0_penalty == doctest::Approx(4 * gate_open_probability(2.0, 2.0 / 3.0, 0.1)).epsilon(1e-14));
  for (const auto& p : gated.curve) CHECK(p.total == doctest::Approx(p.cross_entropy + 0.25 * p.l0_penalty).epsilon(1e-14));

  const auto csv = loss_curve_csv(gated.curve);
  CHECK(csv.starts_with("step,cross_entropy,l0_penalty,total\n0,"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("a large penalty closes every gate") {
  const auto docs = tiny_corpus();
  auto c = short_run(150);
  c.prune = true;
  c.lambda = 50;
  const auto r = train(tiny_for(docs), docs, c);
  const auto gates = r.model.inference_gates();
  for (double g : gates.values()) CHECK(g == 0.0);
  CHECK(count_pruned(gates).total() == 4);
  // With every gate shut the model sees no source: the cross-entropy no
  // longer depends on gate samples and settles.
  const auto& tail = r.curve.back();
  CHECK(tail.l0_penalty < 0.1);
  const auto zero = GateSet::binary(r.model.config.gate_layout(), std::vector<double>(4, 0.0));
  for (const auto& d : docs)
    CHECK(forward_teacher(r.model, gates, d).distributions == forward_teacher(r.model, zero, d).distributions);
}

TEST_CASE("lambda zero prunes nothing and counts split by region") {
  const auto docs = tiny_corpus();
  const auto points = lambda_sweep(tiny_for(docs), docs, docs, {0.0}, short_run(20));
  REQUIRE(points.size() == 1);
  CHECK(points[0].pruned.total() == 0);
  CHECK(points[0].curve.size() == 20);
  CHECK(points[0].metrics.token_accuracy >= 0.0);
  CHECK(points[0].metrics.token_accuracy <= 1.0);
  CHECK_THROWS_AS(lambda_sweep(tiny_for(docs), docs, docs, {}, short_run(1)), ArgumentError);

  GateLayout layout{2, 2, 2};
  const auto g = GateSet::inferred(layout, {0, 1, 0, 0, 0.5, 0, 1, 1});
  CHECK(count_pruned(g).encoder == 3);
  CHECK(count_pruned(g).decoder == 1);
}

TEST_CASE("divergence aborts with the step index") {
  const auto docs = tiny_corpus();
  auto c = short_run(5);
  c.learning_rate = 1e300;
  c.grad_clip = 1e300;
  c.linear_decay = false;
  try {
    train(tiny_for(docs), docs, c);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("step " + std::to_string(e.step())) != std::string::npos);
    CHECK(e.step() < 5);
  }
}

TEST_CASE("evaluate reports bounded metrics") {
  const auto docs = tiny_corpus(4);
  const auto model = tiny_for(docs);
  const auto m = evaluate(model, model.gates, docs);
  CHECK(m.token_accuracy >= 0.0);
  CHECK(m.rouge.r1_f1 <= 1.0);
  CHECK_THROWS_AS(evaluate(model, model.gates, {}), ArgumentError);
}
