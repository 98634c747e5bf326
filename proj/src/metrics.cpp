#include "headlamp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <tuple>

namespace headlamp {

namespace {

constexpr double kHistogramSmoothing = 1e-9;

// Sum of per-document values independent of document order: the values are
// sorted before the (otherwise order-sensitive) floating-point summation.
double document_mean(std::vector<double> per_doc) {
  std::sort(per_doc.begin(), per_doc.end());
  double total = 0.0;
  for (double v : per_doc) total += v;
  return total / static_cast<double>(per_doc.size());
}

void require_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw ArgumentError("metric needs at least one document of attention rows");
}

void require_aligned(std::span<const Tensor> rows, std::span<const TaggedDocument> docs) {
  require_rows(rows);
  if (rows.size() != docs.size()) throw ArgumentError("attention rows and documents differ in count");
  for (std::size_t d = 0; d < rows.size(); ++d) {
    if (rows[d].cols() != docs[d].tokens.size()) {
      throw DataError("document " + std::to_string(d) + ": attention covers " + std::to_string(rows[d].cols()) +
                      " keys but the document has " + std::to_string(docs[d].tokens.size()) + " tokens");
    }
  }
}

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

std::vector<int> default_offsets(Region region) {
  return region == Region::EncoderSelf ? std::vector<int>{-1, 1} : std::vector<int>{-1, 0, 1};
}

RelativeLocation relative_location(std::span<const Tensor> rows, std::span<const int> offsets) {
  require_rows(rows);
  if (offsets.empty()) throw ArgumentError("relative_location needs at least one offset");
  RelativeLocation out;
  out.offsets.assign(offsets.begin(), offsets.end());
  out.ratios.assign(offsets.size(), 0.0);
  for (std::size_t o = 0; o < offsets.size(); ++o) {
    std::vector<double> per_doc;
    per_doc.reserve(rows.size());
    for (const auto& r : rows) {
      std::size_t hits = 0;
      for (std::size_t q = 0; q < r.rows(); ++q) {
        const auto key = static_cast<long long>(argmax(r.row(q)));
        hits += key - static_cast<long long>(q) == offsets[o];
      }
      per_doc.push_back(static_cast<double>(hits) / static_cast<double>(r.rows()));
    }
    out.ratios[o] = document_mean(std::move(per_doc));
  }
  out.headline = *std::max_element(out.ratios.begin(), out.ratios.end());
  return out;
}

double confidence(std::span<const Tensor> rows) {
  require_rows(rows);
  std::vector<double> per_doc;
  per_doc.reserve(rows.size());
  for (const auto& r : rows) {
    double total = 0.0;
    for (std::size_t q = 0; q < r.rows(); ++q) {
      auto row = r.row(q);
      total += *std::max_element(row.begin(), row.end());
    }
    per_doc.push_back(total / static_cast<double>(r.rows()));
  }
  return document_mean(std::move(per_doc));
}

double pos_kl(std::span<const Tensor> rows, std::span<const TaggedDocument> docs, const std::vector<std::string>& tags) {
  require_aligned(rows, docs);
  if (tags.empty()) throw ArgumentError("pos_kl needs a tag vocabulary");
  std::map<std::string, std::size_t> tag_index;
  for (std::size_t i = 0; i < tags.size(); ++i) tag_index.emplace(tags[i], i);

  std::vector<double> per_doc;
  per_doc.reserve(rows.size());
  for (std::size_t d = 0; d < rows.size(); ++d) {
    const auto& doc = docs[d];
    std::vector<std::size_t> token_tag(doc.tokens.size());
    for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
      auto it = tag_index.find(doc.pos[i]);
      if (it == tag_index.end()) {
        throw DataError("document " + std::to_string(d) + ": tag '" + doc.pos[i] + "' not in the tag vocabulary");
      }
      token_tag[i] = it->second;
    }
    std::vector<double> doc_hist(tags.size(), kHistogramSmoothing), attn_hist(tags.size(), 0.0);
    for (auto t : token_tag) doc_hist[t] += 1.0;
    const auto& r = rows[d];
    for (std::size_t q = 0; q < r.rows(); ++q)
      for (std::size_t k = 0; k < r.cols(); ++k) attn_hist[token_tag[k]] += r.at(q, k);
    double doc_total = 0.0, attn_total = 0.0;
    for (std::size_t t = 0; t < tags.size(); ++t) {
      doc_total += doc_hist[t];
      attn_total += attn_hist[t];
    }
    double kl = 0.0;
    for (std::size_t t = 0; t < tags.size(); ++t) {
      const double p = attn_hist[t] / attn_total;
      if (p <= 0.0) continue;
      kl += p * std::log(p / (doc_hist[t] / doc_total));
    }
    per_doc.push_back(std::max(kl, 0.0));
  }
  return document_mean(std::move(per_doc));
}

double ne_ratio(std::span<const Tensor> rows, std::span<const TaggedDocument> docs) {
  require_aligned(rows, docs);
  std::vector<double> per_doc;
  per_doc.reserve(rows.size());
  for (std::size_t d = 0; d < rows.size(); ++d) {
    const auto& r = rows[d];
    double ne = 0.0, total = 0.0;
    for (std::size_t q = 0; q < r.rows(); ++q) {
      for (std::size_t k = 0; k < r.cols(); ++k) {
        total += r.at(q, k);
        if (docs[d].is_ne[k]) ne += r.at(q, k);
      }
    }
    per_doc.push_back(total > 0.0 ? ne / total : 0.0);
  }
  return document_mean(std::move(per_doc));
}

std::vector<Tensor> head_rows(const std::vector<std::vector<AttentionRecord>>& traces, const HeadAddress& head) {
  std::vector<Tensor> rows;
  rows.reserve(traces.size());
  for (std::size_t d = 0; d < traces.size(); ++d) {
    auto it = std::find_if(traces[d].begin(), traces[d].end(), [&](const auto& r) { return r.address == head; });
    if (it == traces[d].end()) throw ArgumentError("document " + std::to_string(d) + " has no record for " + to_string(head));
    rows.push_back(it->rows);
  }
  return rows;
}

std::vector<HeadReport> analyze_heads(const std::vector<std::vector<AttentionRecord>>& traces,
                                      std::span<const TaggedDocument> docs, const std::vector<std::string>& tags) {
  if (traces.empty()) throw ArgumentError("analyze_heads: no traces");
  if (traces.size() != docs.size()) throw ArgumentError("analyze_heads: traces and documents differ in count");
  std::vector<HeadReport> reports;
  for (const auto& record : traces.front()) {
    const auto rows = head_rows(traces, record.address);
    HeadReport r;
    r.head = record.address;
    const auto offsets = default_offsets(record.address.region);
    r.rel_location = relative_location(rows, offsets);
    r.confidence = confidence(rows);
    r.pos_kl = pos_kl(rows, docs, tags);
    r.ne_ratio = ne_ratio(rows, docs);
    r.doc_count = rows.size();
    reports.push_back(std::move(r));
  }
  return reports;
}

SparsityStats zero_entries(const std::vector<std::vector<AttentionRecord>>& traces, Region region) {
  SparsityStats s;
  for (const auto& doc : traces) {
    for (const auto& record : doc) {
      if (record.address.region != region) continue;
      for (double v : record.rows.values()) s.zeros += v == 0.0;
      s.total += record.rows.size();
    }
  }
  return s;
}

namespace {

struct MetricAccessor {
  const char* name;
  double (*get)(const HeadReport&);
};

constexpr MetricAccessor kMetrics[] = {
    {"rel_location", [](const HeadReport& r) { return r.rel_location.headline; }},
    {"confidence", [](const HeadReport& r) { return r.confidence; }},
    {"pos_kl", [](const HeadReport& r) { return r.pos_kl; }},
    {"ne_ratio", [](const HeadReport& r) { return r.ne_ratio; }},
};

std::vector<HeadAddress> sorted_addresses(const std::vector<HeadReport>& reports) {
  std::vector<HeadAddress> out;
  for (const auto& r : reports) out.push_back(r.head);
  std::sort(out.begin(), out.end(), [](const HeadAddress& a, const HeadAddress& b) {
    return std::tie(a.region, a.layer, a.head) < std::tie(b.region, b.layer, b.head);
  });
  return out;
}

std::string offset_label(int offset) { return (offset > 0 ? "+" : "") + std::to_string(offset); }

}  // namespace

std::vector<ProfileComparison> compare_seeds(const std::vector<HeadReport>& a, const std::vector<HeadReport>& b) {
  if (sorted_addresses(a) != sorted_addresses(b)) {
    throw ArgumentError("compare_seeds: reports describe different architectures");
  }
  std::vector<ProfileComparison> out;
  for (Region region : {Region::EncoderSelf, Region::DecoderCross}) {
    for (const auto& metric : kMetrics) {
      ProfileComparison c;
      c.region = region;
      c.metric = metric.name;
      for (const auto& r : a)
        if (r.head.region == region) c.profile_a.push_back(metric.get(r));
      for (const auto& r : b)
        if (r.head.region == region) c.profile_b.push_back(metric.get(r));
      if (c.profile_a.empty()) continue;
      std::sort(c.profile_a.begin(), c.profile_a.end(), std::greater<>());
      std::sort(c.profile_b.begin(), c.profile_b.end(), std::greater<>());
      for (std::size_t i = 0; i < c.profile_a.size(); ++i) c.difference.push_back(c.profile_a[i] - c.profile_b[i]);
      out.push_back(std::move(c));
    }
  }
  return out;
}

std::string head_report_csv(const std::vector<HeadReport>& reports) {
  std::ostringstream out;
  out.precision(17);
  out << "region,layer,head,metric,value,doc_count\n";
  for (const auto& r : reports) {
    auto row = [&](const std::string& metric, double value) {
      out << to_string(r.head.region) << ',' << r.head.layer << ',' << r.head.head << ',' << metric << ',' << value
          << ',' << r.doc_count << '\n';
    };
    row("rel_location", r.rel_location.headline);
    for (std::size_t i = 0; i < r.rel_location.offsets.size(); ++i)
      row("rel_location[" + offset_label(r.rel_location.offsets[i]) + "]", r.rel_location.ratios[i]);
    row("confidence", r.confidence);
    row("pos_kl", r.pos_kl);
    row("ne_ratio", r.ne_ratio);
  }
  return out.str();
}

nlohmann::json head_report_json(const std::vector<HeadReport>& reports) {
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& r : reports) {
    heads.push_back({{"region", to_string(r.head.region)},
                     {"layer", r.head.layer},
                     {"head", r.head.head},
                     {"rel_location",
                      {{"offsets", r.rel_location.offsets},
                       {"ratios", r.rel_location.ratios},
                       {"headline", r.rel_location.headline}}},
                     {"confidence", r.confidence},
                     {"pos_kl", r.pos_kl},
                     {"ne_ratio", r.ne_ratio},
                     {"doc_count", r.doc_count}});
  }
  return {{"v", 1}, {"heads", heads}};
}

nlohmann::json comparison_json(const std::vector<ProfileComparison>& comparisons) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& c : comparisons) {
    items.push_back({{"region", to_string(c.region)},
                     {"metric", c.metric},
                     {"profile_a", c.profile_a},
                     {"profile_b", c.profile_b},
                     {"difference", c.difference}});
  }
  return {{"v", 1}, {"comparisons", items}};
}

}  // namespace headlamp
