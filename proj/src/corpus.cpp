#include "headlamp/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "headlamp/tensor.hpp"

namespace headlamp {

namespace {

constexpr std::size_t kOovPoolSize = 10'000'000;

std::vector<std::string> common_tags(const std::vector<std::string>& tags) {
  const std::string ne = ne_tag(tags);
  std::vector<std::string> out;
  for (const auto& t : tags)
    if (t != ne) out.push_back(t);
  return out;
}

}  // namespace

void TaggedDocument::validate() const {
  if (pos.size() != tokens.size()) {
    throw DataError("pos has " + std::to_string(pos.size()) + " entries for " +
                    std::to_string(tokens.size()) + " tokens");
  }
  if (is_ne.size() != tokens.size()) {
    throw DataError("ne has " + std::to_string(is_ne.size()) + " entries for " +
                    std::to_string(tokens.size()) + " tokens");
  }
}

std::string_view to_string(Task task) {
  switch (task) {
    case Task::Copy: return "copy";
    case Task::SelectEntities: return "select-entities";
    case Task::LeadK: return "lead-k";
  }
  return "copy";
}

Task task_from_string(std::string_view name) {
  if (name == "copy") return Task::Copy;
  if (name == "select-entities") return Task::SelectEntities;
  if (name == "lead-k") return Task::LeadK;
  throw SpecError("unknown task '" + std::string(name) + "'");
}

const std::vector<std::string>& default_pos_tags() {
  static const std::vector<std::string> tags{"NOUN", "VERB", "DET", "PUNCT", "PROPN", "OTHER"};
  return tags;
}

std::string ne_tag(const std::vector<std::string>& tags) {
  if (std::find(tags.begin(), tags.end(), "PROPN") != tags.end()) return "PROPN";
  if (tags.empty()) throw SpecError("empty tag vocabulary");
  return tags.back();
}

bool is_generated_oov(std::string_view token) {
  return token.starts_with("xw") || token.starts_with("Xe");
}

void CorpusSpec::validate() const {
  if (n_docs == 0) throw SpecError("n_docs must be positive");
  if (min_src_len < 1) throw SpecError("src_len must be >= 1");
  if (max_src_len < min_src_len) throw SpecError("max_src_len must be >= min_src_len");
  if (!(ne_rate >= 0.0 && ne_rate <= 1.0)) throw SpecError("ne_rate must lie in [0, 1], got " + std::to_string(ne_rate));
  if (!(oov_rate >= 0.0 && oov_rate <= 1.0)) throw SpecError("oov_rate must lie in [0, 1], got " + std::to_string(oov_rate));
  if (tags.size() < 2) throw SpecError("tag vocabulary needs at least two symbols");
  if (vocab_size < tags.size()) {
    throw SpecError("vocab_size " + std::to_string(vocab_size) + " too small for " + std::to_string(tags.size()) +
                    " tag classes (need one word type per tag)");
  }
  if (task == Task::LeadK && lead_k == 0) throw SpecError("lead_k must be positive");
}

void to_json(nlohmann::json& j, const CorpusSpec& spec) {
  j = nlohmann::json{{"n_docs", spec.n_docs},       {"min_src_len", spec.min_src_len},
                     {"max_src_len", spec.max_src_len}, {"tags", spec.tags},
                     {"ne_rate", spec.ne_rate},     {"vocab_size", spec.vocab_size},
                     {"oov_rate", spec.oov_rate},   {"seed", spec.seed},
                     {"task", to_string(spec.task)}, {"lead_k", spec.lead_k}};
}

void from_json(const nlohmann::json& j, CorpusSpec& spec) {
  try {
    spec = CorpusSpec{};
    if (j.contains("n_docs")) spec.n_docs = j.at("n_docs").get<std::size_t>();
    if (j.contains("src_len")) {
      const auto& r = j.at("src_len");
      if (r.is_array()) {
        spec.min_src_len = r.at(0).get<std::size_t>();
        spec.max_src_len = r.at(1).get<std::size_t>();
      } else {
        spec.min_src_len = spec.max_src_len = r.get<std::size_t>();
      }
    }
    if (j.contains("min_src_len")) spec.min_src_len = j.at("min_src_len").get<std::size_t>();
    if (j.contains("max_src_len")) spec.max_src_len = j.at("max_src_len").get<std::size_t>();
    if (j.contains("tags")) spec.tags = j.at("tags").get<std::vector<std::string>>();
    if (j.contains("ne_rate")) spec.ne_rate = j.at("ne_rate").get<double>();
    if (j.contains("vocab_size")) spec.vocab_size = j.at("vocab_size").get<std::size_t>();
    if (j.contains("oov_rate")) spec.oov_rate = j.at("oov_rate").get<double>();
    if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("task")) spec.task = task_from_string(j.at("task").get<std::string>());
    if (j.contains("lead_k")) spec.lead_k = j.at("lead_k").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("corpus spec: ") + e.what());
  }
}

std::vector<TaggedDocument> generate(const CorpusSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  const std::string entity_tag = ne_tag(spec.tags);
  const auto commons = common_tags(spec.tags);
  const std::size_t entity_types = std::max<std::size_t>(1, spec.vocab_size / 4);
  const std::size_t common_types = spec.vocab_size - entity_types;

  auto draw_token = [&](bool named_entity, bool oov, std::string& token, std::string& tag) {
    if (oov) {
      const std::size_t k = rng.below(kOovPoolSize);
      token = (named_entity ? "Xe" : "xw") + std::to_string(k);
      tag = named_entity ? entity_tag : commons[k % commons.size()];
    } else if (named_entity) {
      token = "E" + std::to_string(rng.below(entity_types));
      tag = entity_tag;
    } else {
      const std::size_t k = rng.below(common_types);
      token = "w" + std::to_string(k);
      tag = commons[k % commons.size()];
    }
  };

  std::vector<TaggedDocument> docs;
  docs.reserve(spec.n_docs);
  for (std::size_t d = 0; d < spec.n_docs; ++d) {
    TaggedDocument doc;
    const std::size_t len = spec.min_src_len + rng.below(spec.max_src_len - spec.min_src_len + 1);
    doc.tokens.resize(len);
    doc.pos.resize(len);
    doc.is_ne.resize(len);
    for (std::size_t i = 0; i < len; ++i) {
      const bool entity = rng.uniform() < spec.ne_rate;
      const bool oov = rng.uniform() < spec.oov_rate;
      draw_token(entity, oov, doc.tokens[i], doc.pos[i]);
      doc.is_ne[i] = entity;
    }
    if (spec.task == Task::SelectEntities &&
        std::none_of(doc.is_ne.begin(), doc.is_ne.end(), [](bool b) { return b; })) {
      // An entity-free document would have an empty summary; re-roll one slot.
      const std::size_t i = rng.below(len);
      draw_token(true, rng.uniform() < spec.oov_rate, doc.tokens[i], doc.pos[i]);
      doc.is_ne[i] = true;
    }
    switch (spec.task) {
      case Task::Copy:
        doc.summary = doc.tokens;
        break;
      case Task::SelectEntities:
        for (std::size_t i = 0; i < len; ++i)
          if (doc.is_ne[i]) doc.summary.push_back(doc.tokens[i]);
        break;
      case Task::LeadK:
        doc.summary.assign(doc.tokens.begin(), doc.tokens.begin() + std::min(spec.lead_k, len));
        break;
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::string to_jsonl(const std::vector<TaggedDocument>& docs) {
  std::string out;
  for (const auto& doc : docs) {
    nlohmann::json j;
    j["v"] = kCorpusSchemaVersion;
    j["tokens"] = doc.tokens;
    j["pos"] = doc.pos;
    j["ne"] = doc.is_ne;
    j["summary"] = doc.summary;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_tagged(const std::filesystem::path& path, const std::vector<TaggedDocument>& docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << to_jsonl(docs);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<TaggedDocument> parse_tagged(std::istream& in, std::string_view source_name) {
  std::vector<TaggedDocument> docs;
  std::string line;
  std::size_t line_no = 0;
  auto where = [&] { return std::string(source_name) + ":" + std::to_string(line_no) + ": "; };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where() + "invalid JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("v")) throw FormatError(where() + "missing schema version \"v\"");
    if (!j.at("v").is_number_integer() || j.at("v").get<int>() != kCorpusSchemaVersion) {
      throw FormatError(where() + "unknown schema version " + j.at("v").dump() + " (expected " +
                        std::to_string(kCorpusSchemaVersion) + ")");
    }
    TaggedDocument doc;
    try {
      doc.tokens = j.at("tokens").get<std::vector<std::string>>();
      doc.pos = j.at("pos").get<std::vector<std::string>>();
      doc.is_ne = j.at("ne").get<std::vector<bool>>();
      doc.summary = j.value("summary", std::vector<std::string>{});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where() + e.what());
    }
    try {
      doc.validate();
    } catch (const DataError& e) {
      throw DataError(where() + e.what());
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::vector<TaggedDocument> load_tagged(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_tagged(in, path.string());
}

}  // namespace headlamp
