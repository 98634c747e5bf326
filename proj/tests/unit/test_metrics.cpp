#include <doctest.h>

#include <cmath>

#include "../support/fixtures.hpp"
#include "headlamp/metrics.hpp"

using namespace headlamp;

namespace {

TaggedDocument tagged(std::vector<std::string> pos, std::vector<bool> ne) {
  TaggedDocument d;
  for (std::size_t i = 0; i < pos.size(); ++i) d.tokens.push_back("t" + std::to_string(i));
  d.pos = std::move(pos);
  d.is_ne = std::move(ne);
  return d;
}

Tensor superdiagonal(std::size_t n) {
  Tensor t({n - 1, n}, 0.0);
  for (std::size_t q = 0; q + 1 < n; ++q) t.at(q, q + 1) = 1.0;
  return t;
}

HeadReport report(Region region, std::size_t layer, std::size_t head, double v) {
  HeadReport r;
  r.head = {region, layer, head};
  r.rel_location.offsets = {-1, 1};
  r.rel_location.ratios = {v, v / 2};
  r.rel_location.headline = v;
  r.confidence = v;
  r.pos_kl = v;
  r.ne_ratio = v;
  r.doc_count = 3;
  return r;
}

}  // namespace

TEST_CASE("relative location fixtures") {
  const std::vector<Tensor> rows{superdiagonal(5), superdiagonal(3)};
  const std::vector<int> offsets{-1, 1};
  const auto r = relative_location(rows, offsets);
  CHECK(r.ratios[0] == 0.0);
  CHECK(r.ratios[1] == 1.0);
  CHECK(r.headline == 1.0);

  // Ties go to the lowest key: a uniform row points at key 0.
  const std::vector<Tensor> uniform{Tensor({3, 3}, 1.0 / 3)};
  const std::vector<int> zero{0};
  CHECK(relative_location(uniform, zero).headline == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(default_offsets(Region::EncoderSelf) == std::vector<int>{-1, 1});
  CHECK(default_offsets(Region::DecoderCross) == std::vector<int>{-1, 0, 1});
  CHECK_THROWS_AS(relative_location(std::vector<Tensor>{}, offsets), ArgumentError);
}

TEST_CASE("confidence fixtures") {
  const std::vector<Tensor> a{Tensor::matrix(2, 2, {0.7, 0.3, 0.5, 0.5})};
  CHECK(std::abs(confidence(a) - 0.6) <= 1e-9);
  for (std::size_t k : {2, 5, 9}) {
    const std::vector<Tensor> u{Tensor({4, k}, 1.0 / static_cast<double>(k))};
    CHECK(std::abs(confidence(u) - 1.0 / static_cast<double>(k)) <= 1e-9);
  }
  // Documents are weighted equally regardless of row count.
  const std::vector<Tensor> two{Tensor::matrix(1, 2, {1, 0}), Tensor({5, 2}, 0.5)};
  CHECK(confidence(two) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("pos_kl fixtures") {
  const std::vector<std::string> tags{"A", "B", "C", "D"};
  const std::vector<TaggedDocument> docs{tagged({"A", "B", "C", "D"}, {false, false, false, false})};
  const std::vector<Tensor> focused{Tensor::matrix(2, 4, {1, 0, 0, 0, 1, 0, 0, 0})};
  CHECK(std::abs(pos_kl(focused, docs, tags) - std::log(4.0)) <= 1e-9);
  const std::vector<Tensor> uniform{Tensor({3, 4}, 0.25)};
  CHECK(std::abs(pos_kl(uniform, docs, tags)) <= 1e-9);

  // Attention spread like the document histogram gives zero.
  const std::vector<TaggedDocument> skew{tagged({"A", "A", "A", "B"}, {false, false, false, false})};
  CHECK(std::abs(pos_kl(uniform, skew, tags)) <= 1e-9);

  const std::vector<TaggedDocument> unknown{tagged({"A", "Z", "A", "B"}, {false, false, false, false})};
  CHECK_THROWS_AS(pos_kl(uniform, unknown, tags), DataError);
  const std::vector<Tensor> wrong{Tensor({1, 3}, 1.0 / 3)};
  CHECK_THROWS_AS(pos_kl(wrong, docs, tags), DataError);
}

TEST_CASE("ne_ratio fixtures") {
  const std::vector<TaggedDocument> docs{tagged({"A", "A", "A", "A", "A"}, {true, false, true, false, false})};
  const std::vector<Tensor> uniform{Tensor({3, 5}, 0.2)};
  CHECK(std::abs(ne_ratio(uniform, docs) - 0.4) <= 1e-9);
  const std::vector<Tensor> on_entity{Tensor::matrix(1, 5, {0, 0, 1, 0, 0})};
  CHECK(ne_ratio(on_entity, docs) == 1.0);
}

TEST_CASE("metrics do not depend on document order") {
  Rng rng(31);
  const std::vector<std::string> tags{"A", "B", "C"};
  std::vector<Tensor> rows;
  std::vector<TaggedDocument> docs;
  for (int d = 0; d < 7; ++d) {
    const std::size_t n = 2 + rng.below(6);
    std::vector<std::string> pos;
    std::vector<bool> ne;
    for (std::size_t i = 0; i < n; ++i) {
      pos.push_back(tags[rng.below(3)]);
      ne.push_back(rng.uniform() < 0.3);
    }
    docs.push_back(tagged(pos, ne));
    Tensor r({3, n});
    for (std::size_t q = 0; q < 3; ++q) {
      std::vector<double> z(n);
      for (auto& v : z) v = rng.normal();
      const auto s = softmax(z).values;
      for (std::size_t k = 0; k < n; ++k) r.at(q, k) = s[k];
    }
    rows.push_back(r);
  }
  const std::vector<int> offsets{-1, 0, 1};
  auto all = [&](const std::vector<Tensor>& r, const std::vector<TaggedDocument>& d) {
    return std::vector<double>{relative_location(r, offsets).headline, confidence(r), pos_kl(r, d, tags),
                               ne_ratio(r, d)};
  };
  const auto before = all(rows, docs);
  std::reverse(rows.begin(), rows.end());
  std::reverse(docs.begin(), docs.end());
  std::swap(rows[1], rows[4]);
  std::swap(docs[1], docs[4]);
  CHECK(all(rows, docs) == before);
}

TEST_CASE("analyze_heads reports every traced head") {
  const auto model = fixture::tiny_model();
  std::vector<TaggedDocument> docs{fixture::document({"a", "b", "c"}), fixture::document({"d", "a"})};
  for (auto& d : docs) d.pos.assign(d.tokens.size(), "NOUN");
  std::vector<std::vector<AttentionRecord>> traces;
  for (const auto& d : docs) traces.push_back(greedy_decode(model, model.gates, d, {.trace = true}).records);
  const auto reports = analyze_heads(traces, docs, default_pos_tags());
  REQUIRE(reports.size() == 4);
  for (const auto& r : reports) {
    CHECK(r.doc_count == 2);
    CHECK(r.confidence > 0.0);
    CHECK(r.confidence <= 1.0);
    CHECK(r.pos_kl >= 0.0);
  }
  CHECK_THROWS_AS(head_rows(traces, {Region::EncoderSelf, 3, 0}), ArgumentError);
  const auto s = zero_entries(traces, Region::EncoderSelf);
  CHECK(s.total == 2 * (9 + 4));
  CHECK(s.zeros == 0);
}

TEST_CASE("compare_seeds compares sorted profiles") {
  std::vector<HeadReport> a{report(Region::EncoderSelf, 0, 0, 0.2), report(Region::EncoderSelf, 0, 1, 0.9),
                            report(Region::DecoderCross, 0, 0, 0.5)};
  const auto self = compare_seeds(a, a);
  CHECK(self.size() == 8);
  for (const auto& c : self)
    for (double d : c.difference) CHECK(d == 0.0);

  // Heads swapped between seeds compare as equal profiles.
  std::vector<HeadReport> b{report(Region::EncoderSelf, 0, 0, 0.9), report(Region::EncoderSelf, 0, 1, 0.2),
                            report(Region::DecoderCross, 0, 0, 0.4)};
  const auto cmp = compare_seeds(a, b);
  CHECK(cmp[0].profile_a == std::vector<double>{0.9, 0.2});
  CHECK(cmp[0].difference == std::vector<double>{0.0, 0.0});
  const auto& dec = cmp[4];
  CHECK(dec.region == Region::DecoderCross);
  CHECK(dec.difference[0] == doctest::Approx(0.1).epsilon(1e-12));

  b.pop_back();
  CHECK_THROWS_AS(compare_seeds(a, b), ArgumentError);
}

TEST_CASE("report serialisation") {
  const std::vector<HeadReport> r{report(Region::DecoderCross, 1, 2, 0.5)};
  const auto csv = head_report_csv(r);
  CHECK(csv.starts_with("region,layer,head,metric,value,doc_count\n"));
  CHECK(csv.find("decoder-cross,1,2,rel_location,0.5,3\n") != std::string::npos);
  CHECK(csv.find("decoder-cross,1,2,rel_location[+1],0.25,3\n") != std::string::npos);
  CHECK(csv.find("decoder-cross,1,2,ne_ratio,0.5,3\n") != std::string::npos);
  const auto j = head_report_json(r);
  CHECK(j.at("v") == 1);
  CHECK(j.at("heads").at(0).at("region") == "decoder-cross");
  CHECK(j.at("heads").at(0).at("rel_location").at("ratios") == nlohmann::json::array({0.5, 0.25}));
  const auto c = comparison_json(compare_seeds(r, r));
  CHECK(c.at("comparisons").size() == 4);
  CHECK(c.at("comparisons").at(0).at("metric") == "rel_location");
}
