#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "headlamp/corpus.hpp"
#include "headlamp/gating.hpp"
#include "headlamp/model.hpp"
#include "headlamp/tensor.hpp"

// Head-specialisation metrics. Each metric takes one head's attention rows
// for a set of documents (rows[d] belongs to docs[d]), computes a
// per-document value and averages documents with equal weight.

namespace headlamp {

/// Default "neighbouring" offsets: {-1, +1} for encoder self-attention,
/// {-1, 0, +1} for decoder cross-attention (decode step vs source position).
std::vector<int> default_offsets(Region region);

struct RelativeLocation {
  std::vector<int> offsets;
  /// Fraction of query steps whose argmax key sits at query + offset.
  std::vector<double> ratios;
  /// Max over the offsets.
  double headline = 0.0;
};

/// Argmax ties resolve to the lowest key position.
RelativeLocation relative_location(std::span<const Tensor> rows, std::span<const int> offsets);

/// Mean of the row maxima.
double confidence(std::span<const Tensor> rows);

/// KL(attention-weighted POS histogram || document POS histogram), natural
/// log. The document histogram is smoothed by 1e-9 per tag before
/// normalisation; attention mass only lands on document tokens, so the
/// attention histogram needs no smoothing and empty tags contribute 0.
double pos_kl(std::span<const Tensor> rows, std::span<const TaggedDocument> docs,
              const std::vector<std::string>& tags);

/// Share of attention mass on named-entity tokens.
double ne_ratio(std::span<const Tensor> rows, std::span<const TaggedDocument> docs);

struct HeadReport {
  HeadAddress head;
  RelativeLocation rel_location;
  double confidence = 0.0;
  double pos_kl = 0.0;
  double ne_ratio = 0.0;
  std::size_t doc_count = 0;
};

/// traces[d] holds every traced record of document d.
std::vector<HeadReport> analyze_heads(const std::vector<std::vector<AttentionRecord>>& traces,
                                      std::span<const TaggedDocument> docs, const std::vector<std::string>& tags);

/// Rows of one head across documents, in document order.
std::vector<Tensor> head_rows(const std::vector<std::vector<AttentionRecord>>& traces, const HeadAddress& head);

struct SparsityStats {
  std::size_t zeros = 0;
  std::size_t total = 0;
  double fraction() const { return total ? static_cast<double>(zeros) / static_cast<double>(total) : 0.0; }
};

/// Exact-zero attention entries among the records of one region.
SparsityStats zero_entries(const std::vector<std::vector<AttentionRecord>>& traces, Region region);

struct ProfileComparison {
  Region region = Region::EncoderSelf;
  std::string metric;
  /// Per-head values sorted in descending order; heads are not aligned
  /// across models, so profiles are compared as distributions.
  std::vector<double> profile_a;
  std::vector<double> profile_b;
  std::vector<double> difference;
};

std::vector<ProfileComparison> compare_seeds(const std::vector<HeadReport>& a, const std::vector<HeadReport>& b);

/// Long format: region,layer,head,metric,value,doc_count
std::string head_report_csv(const std::vector<HeadReport>& reports);
nlohmann::json head_report_json(const std::vector<HeadReport>& reports);
nlohmann::json comparison_json(const std::vector<ProfileComparison>& comparisons);

}  // namespace headlamp
