#include "headlamp/vocab.hpp"

#include <algorithm>
#include <map>

#include "headlamp/tensor.hpp"

namespace headlamp {

namespace {
const std::string kSpecialNames[Vocabulary::kReserved] = {"<unk>", "<bos>", "<eos>"};
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], kReserved + i).second) {
      throw ArgumentError("duplicate vocabulary word '" + words_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::build(const std::vector<TaggedDocument>& docs, std::size_t max_words, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : docs) {
    for (const auto& t : doc.tokens) ++counts[t];
    for (const auto& t : doc.summary) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::erase_if(ranked, [&](const auto& entry) { return entry.second < min_count; });
  if (ranked.size() > max_words) ranked.resize(max_words);
  std::vector<std::string> words;
  words.reserve(ranked.size());
  for (auto& [w, c] : ranked) words.push_back(w);
  return Vocabulary(std::move(words));
}

std::optional<std::size_t> Vocabulary::find(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token(std::size_t id) const {
  if (id < kReserved) return kSpecialNames[id];
  if (id - kReserved >= words_.size()) throw ArgumentError("token id " + std::to_string(id) + " outside vocabulary");
  return words_[id - kReserved];
}

EncodedSource encode_source(const Vocabulary& vocab, const std::vector<std::string>& tokens) {
  EncodedSource out;
  out.input_ids.reserve(tokens.size());
  out.extended_ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (auto id = vocab.find(t)) {
      out.input_ids.push_back(*id);
      out.extended_ids.push_back(*id);
      continue;
    }
    auto it = std::find(out.oov_words.begin(), out.oov_words.end(), t);
    std::size_t k = static_cast<std::size_t>(it - out.oov_words.begin());
    if (it == out.oov_words.end()) out.oov_words.push_back(t);
    out.input_ids.push_back(Vocabulary::kUnk);
    out.extended_ids.push_back(vocab.size() + k);
  }
  return out;
}

std::vector<std::size_t> encode_target(const Vocabulary& vocab, const EncodedSource& source,
                                       const std::vector<std::string>& summary) {
  std::vector<std::size_t> out;
  out.reserve(summary.size() + 1);
  for (const auto& t : summary) {
    if (auto id = vocab.find(t)) {
      out.push_back(*id);
      continue;
    }
    auto it = std::find(source.oov_words.begin(), source.oov_words.end(), t);
    out.push_back(it == source.oov_words.end()
                      ? Vocabulary::kUnk
                      : vocab.size() + static_cast<std::size_t>(it - source.oov_words.begin()));
  }
  out.push_back(Vocabulary::kEos);
  return out;
}

std::string decode_token(const Vocabulary& vocab, const EncodedSource& source, std::size_t id) {
  if (id < vocab.size()) return vocab.token(id);
  const std::size_t k = id - vocab.size();
  if (k >= source.oov_words.size()) throw ArgumentError("extended id " + std::to_string(id) + " outside source OOVs");
  return source.oov_words[k];
}

}  // namespace headlamp
