#include <doctest.h>

#include <filesystem>
#include <functional>

#include <unistd.h>

#include "../support/fixtures.hpp"
#include "headlamp/io.hpp"
#include "headlamp/training.hpp"

using namespace headlamp;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("headlamp_unit_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "<no error>";
}

Model trained_tiny() {
  CorpusSpec spec;
  spec.n_docs = 8;
  spec.min_src_len = 3;
  spec.max_src_len = 5;
  spec.vocab_size = 8;
  const auto docs = generate(spec);
  auto model = Model::initialise(fixture::tiny_config(ActivationPlan::SparseCH), Vocabulary::build(docs, 50));
  TrainConfig c;
  c.max_steps = 3;
  c.batch_size = 2;
  c.prune = true;
  c.lambda = 0.3;
  c.seed = 21;
  return train(model, docs, c).model;
}

}  // namespace

TEST_CASE("tensor file golden bytes") {
  const Tensor t({2}, std::vector<double>{1.0, -2.0});
  const std::string expected("ATND\x01\x01"
                             "\x01\x00\x00\x00"
                             "\x02\x00\x00\x00"
                             "\x00\x00\x00\x00\x00\x00\xf0\x3f"
                             "\x00\x00\x00\x00\x00\x00\x00\xc0",
                             30);
  CHECK(encode_tensor(t) == expected);
  CHECK(decode_tensor(expected) == t);
}

TEST_CASE("tensor file round trip and corruption errors") {
  Rng rng(2);
  const auto t = random_normal({3, 4, 2}, rng);
  const auto bytes = encode_tensor(t);
  CHECK(decode_tensor(bytes) == t);
  const auto path = scratch("tensor") / "t.atnd";
  write_tensor(path, t);
  CHECK(read_tensor(path) == t);

  CHECK(error_of([&] { decode_tensor(bytes.substr(0, bytes.size() - 3), "x"); }) ==
        "x: payload is 189 bytes, expected 192");
  CHECK(error_of([&] { decode_tensor(bytes.substr(0, 9), "x"); }).starts_with("x: truncated rank"));
  auto bad = bytes;
  bad[0] = 'B';
  CHECK_THROWS_AS(decode_tensor(bad), FormatError);
  bad = bytes;
  bad[4] = 2;
  CHECK(error_of([&] { decode_tensor(bad, "x"); }) == "x: tensor file version 2, expected 1");
  bad = bytes;
  bad[5] = 7;
  CHECK_THROWS_AS(decode_tensor(bad), FormatError);
}

TEST_CASE("checkpoint round trip is bit-identical") {
  const auto model = trained_tiny();
  REQUIRE(model.gates.mode() == GateMode::HardConcreteTraining);
  const auto dir = scratch("ckpt");
  save_checkpoint(model, dir / "a.ckpt");
  const auto back = load_checkpoint(dir / "a.ckpt");
  CHECK(back.config == model.config);
  CHECK(back.vocab == model.vocab);
  CHECK(back.params == model.params);
  CHECK(back.gates == model.gates);
  CHECK(back.train_seed == 21);
  save_checkpoint(back, dir / "b.ckpt");
  CHECK(read_text(dir / "a.ckpt") == read_text(dir / "b.ckpt"));

  const auto doc = fixture::document({model.vocab.words()[0], "unseen", model.vocab.words()[1]});
  CHECK(forward_teacher(back, back.inference_gates(), doc).distributions ==
        forward_teacher(model, model.inference_gates(), doc).distributions);
}

TEST_CASE("checkpoint compatibility checks") {
  const auto model = trained_tiny();
  const auto dir = scratch("ckpt_checks");
  const auto path = dir / "m.ckpt";
  save_checkpoint(model, path);
  const auto bytes = read_text(path);

  auto v2 = bytes;
  v2[4] = 2;
  write_text(dir / "v2.ckpt", v2);
  const auto msg = error_of([&] { load_checkpoint(dir / "v2.ckpt"); });
  CHECK(msg.find("version 2") != std::string::npos);
  CHECK(msg.find("version 1") != std::string::npos);
  CHECK_THROWS_AS(load_checkpoint(dir / "v2.ckpt"), FormatError);

  write_text(dir / "trail.ckpt", bytes + "x");
  CHECK_THROWS_AS(load_checkpoint(dir / "trail.ckpt"), FormatError);
  write_text(dir / "short.ckpt", bytes.substr(0, bytes.size() - 8));
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), FormatError);

  LoadOptions other_plan;
  other_plan.plan = ActivationPlan::Dense;
  CHECK_THROWS_AS(load_checkpoint(path, other_plan), ArgumentError);
  other_plan.allow_plan_override = true;
  CHECK(load_checkpoint(path, other_plan).config.plan == ActivationPlan::Dense);
  LoadOptions same_plan;
  same_plan.plan = ActivationPlan::SparseCH;
  CHECK_NOTHROW(load_checkpoint(path, same_plan));

  LoadOptions expect;
  expect.expected = model.config;
  CHECK_NOTHROW(load_checkpoint(path, expect));
  expect.expected->heads_per_layer = 4;
  expect.expected->model_dim = 16;
  CHECK_THROWS_AS(load_checkpoint(path, expect), FormatError);
}

TEST_CASE("trace round trip writes one file per head plus a manifest") {
  ModelConfig c;
  c.max_src_len = 16;
  c.max_tgt_len = 5;
  c.plan = ActivationPlan::SparseAll;
  const auto model = Model::initialise(c, Vocabulary({"a", "b", "c"}));
  Trace trace{greedy_decode(model, model.gates, fixture::document({"a", "c", "b", "q"}), {.trace = true}).records};
  REQUIRE(trace[0].size() == 16);
  const auto dir = scratch("trace");
  const auto manifest = write_trace(trace, dir);
  CHECK(manifest.at("entries").size() == 16);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir)) files += e.is_regular_file();
  CHECK(files == 17);
  CHECK(fs::exists(dir / "doc0_encoder-self_L1_H3.atnd"));
  const auto back = read_trace(dir);
  REQUIRE(back.size() == 1);
  REQUIRE(back[0].size() == 16);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(back[0][i].address == trace[0][i].address);
    CHECK(back[0][i].rows == trace[0][i].rows);
  }

  write_tensor(dir / "doc0_encoder-self_L0_H0.atnd", Tensor({2, 2}, 0.5));
  CHECK_THROWS_AS(read_trace(dir), FormatError);
}
