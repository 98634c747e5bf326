#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "headlamp/corpus.hpp"

namespace headlamp {

/// Fixed model vocabulary: three reserved symbols followed by word types.
class Vocabulary {
 public:
  static constexpr std::size_t kUnk = 0;
  static constexpr std::size_t kBos = 1;
  static constexpr std::size_t kEos = 2;
  static constexpr std::size_t kReserved = 3;

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}
  explicit Vocabulary(std::vector<std::string> words);

  /// The `max_words` most frequent source and summary tokens seen at least
  /// `min_count` times (ties broken lexicographically).
  static Vocabulary build(const std::vector<TaggedDocument>& docs, std::size_t max_words, std::size_t min_count = 1);

  std::size_t size() const { return kReserved + words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  std::optional<std::size_t> find(const std::string& word) const;
  const std::string& token(std::size_t id) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Source tokens mapped for the model. In-vocabulary tokens keep their id;
/// each distinct OOV token gets an extended id vocab.size() + k and is fed to
/// the encoder as kUnk.
struct EncodedSource {
  std::vector<std::size_t> input_ids;
  std::vector<std::size_t> extended_ids;
  std::vector<std::string> oov_words;

  std::size_t extended_size(const Vocabulary& vocab) const { return vocab.size() + oov_words.size(); }
};

EncodedSource encode_source(const Vocabulary& vocab, const std::vector<std::string>& tokens);

/// Summary tokens as extended ids followed by kEos. Tokens that are neither
/// in the vocabulary nor in the source map to kUnk.
std::vector<std::size_t> encode_target(const Vocabulary& vocab, const EncodedSource& source,
                                       const std::vector<std::string>& summary);

/// Extended id to token string; kEos/kBos/kUnk render as <eos>/<bos>/<unk>.
std::string decode_token(const Vocabulary& vocab, const EncodedSource& source, std::size_t id);

/// Feeds an extended id back into the embedding table.
inline std::size_t input_id(const Vocabulary& vocab, std::size_t extended_id) {
  return extended_id < vocab.size() ? extended_id : Vocabulary::kUnk;
}

}  // namespace headlamp
