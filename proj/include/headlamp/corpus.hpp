#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace headlamp {

/// Malformed input data (documents, targets, tags).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable or incompatible file (bad magic, version, truncation).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid generator or run specification.
class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Source tokens with per-token POS tag and named-entity flag, plus the
/// reference summary.
struct TaggedDocument {
  std::vector<std::string> tokens;
  std::vector<std::string> pos;
  std::vector<bool> is_ne;
  std::vector<std::string> summary;

  void validate() const;
  friend bool operator==(const TaggedDocument&, const TaggedDocument&) = default;
};

enum class Task { Copy, SelectEntities, LeadK };

std::string_view to_string(Task task);
Task task_from_string(std::string_view name);

/// The closed POS vocabulary used by the generator.
const std::vector<std::string>& default_pos_tags();

struct CorpusSpec {
  std::size_t n_docs = 200;
  std::size_t min_src_len = 6;
  std::size_t max_src_len = 10;
  std::vector<std::string> tags = default_pos_tags();
  double ne_rate = 0.15;
  std::size_t vocab_size = 40;
  double oov_rate = 0.0;
  std::uint64_t seed = 1;
  Task task = Task::Copy;
  std::size_t lead_k = 3;

  /// Throws SpecError.
  void validate() const;
};

void to_json(nlohmann::json& j, const CorpusSpec& spec);
void from_json(const nlohmann::json& j, CorpusSpec& spec);

/// Deterministic synthetic corpus.
///
/// In-vocabulary word types are split into named-entity types (tag PROPN)
/// and common types whose tag is fixed by type index, so POS histograms are
/// well populated. Each token is a named entity with probability ne_rate and
/// independently out-of-vocabulary with probability oov_rate; OOV tokens come
/// from a large pool disjoint from the in-vocabulary types.
std::vector<TaggedDocument> generate(const CorpusSpec& spec);

/// Tag carried by named-entity tokens for a tag vocabulary.
std::string ne_tag(const std::vector<std::string>& tags);

/// True for tokens drawn from the generator's out-of-vocabulary pool.
bool is_generated_oov(std::string_view token);

// JSONL, one document per line:
// {"v":1,"tokens":[...],"pos":[...],"ne":[...],"summary":[...]}
inline constexpr int kCorpusSchemaVersion = 1;

std::string to_jsonl(const std::vector<TaggedDocument>& docs);
void write_tagged(const std::filesystem::path& path, const std::vector<TaggedDocument>& docs);
std::vector<TaggedDocument> parse_tagged(std::istream& in, std::string_view source_name);
std::vector<TaggedDocument> load_tagged(const std::filesystem::path& path);

}  // namespace headlamp
