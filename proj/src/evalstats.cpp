#include "headlamp/evalstats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "headlamp/parallel.hpp"

namespace headlamp {

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(const Tokens& tokens, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

double f1(double overlap, double cand_total, double ref_total) {
  if (overlap <= 0.0 || cand_total <= 0.0 || ref_total <= 0.0) return 0.0;
  const double p = overlap / cand_total;
  const double r = overlap / ref_total;
  return 2.0 * p * r / (p + r);
}

// Continued fraction for the incomplete beta (Numerical Recipes betacf).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIterations = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  return h;
}

}  // namespace

double rouge_n(const Tokens& candidate, const Tokens& reference, std::size_t n) {
  if (n == 0) throw ArgumentError("rouge_n needs n >= 1");
  const auto cand = ngram_counts(candidate, n);
  const auto ref = ngram_counts(reference, n);
  std::size_t overlap = 0;
  for (const auto& [gram, count] : cand) {
    auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(count, it->second);
  }
  const double cand_total = candidate.size() >= n ? static_cast<double>(candidate.size() - n + 1) : 0.0;
  const double ref_total = reference.size() >= n ? static_cast<double>(reference.size() - n + 1) : 0.0;
  return f1(static_cast<double>(overlap), cand_total, ref_total);
}

double rouge_l(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  std::vector<std::size_t> prev(reference.size() + 1, 0), cur(reference.size() + 1, 0);
  for (std::size_t i = 1; i <= candidate.size(); ++i) {
    for (std::size_t j = 1; j <= reference.size(); ++j) {
      cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return f1(static_cast<double>(prev[reference.size()]), static_cast<double>(candidate.size()),
            static_cast<double>(reference.size()));
}

RougeScores rouge(const Tokens& candidate, const Tokens& reference) {
  return {rouge_n(candidate, reference, 1), rouge_n(candidate, reference, 2), rouge_l(candidate, reference)};
}

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw ArgumentError("incomplete beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw ArgumentError("incomplete beta needs x in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double dof) {
  if (!(dof > 0.0)) throw ArgumentError("t distribution needs positive degrees of freedom");
  if (std::isinf(t)) return 0.0;
  const double x = dof / (dof + t * t);
  return std::clamp(regularized_incomplete_beta(dof / 2.0, 0.5, x), 0.0, 1.0);
}

TTestResult paired_t_test(std::span<const double> deltas, double alpha) {
  const std::size_t n = deltas.size();
  if (n < 2) throw ArgumentError("paired t-test needs at least two differences, got " + std::to_string(n));
  const double mean = std::accumulate(deltas.begin(), deltas.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double d : deltas) ss += (d - mean) * (d - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  TTestResult out;
  if (sd == 0.0) {
    if (mean == 0.0) return out;
    out.t = std::copysign(std::numeric_limits<double>::infinity(), mean);
    out.p = 0.0;
    out.significant = true;
    return out;
  }
  out.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  out.p = student_t_two_sided_p(out.t, static_cast<double>(n - 1));
  out.significant = out.p < alpha;
  return out;
}

std::vector<double> rouge1_per_document(const Model& model, const GateSet& gates,
                                        const std::vector<TaggedDocument>& docs) {
  std::vector<double> scores(docs.size());
  parallel_for(docs.size(), [&](std::size_t i) {
    try {
      scores[i] = rouge_n(greedy_decode(model, gates, docs[i]).tokens, docs[i].summary, 1);
    } catch (const std::exception& e) {
      throw std::runtime_error("document " + std::to_string(i) + ": " + e.what());
    }
  });
  return scores;
}

std::vector<AblationResult> ablate_heads(const Model& model, const std::vector<TaggedDocument>& docs,
                                         const std::vector<HeadAddress>& heads, double alpha) {
  const GateSet base = model.inference_gates();
  const auto intact = rouge1_per_document(model, base, docs);
  std::vector<AblationResult> results;
  results.reserve(heads.size());
  for (const auto& head : heads) {
    const GateSet ablated = base.mode() == GateMode::Binary ? set_binary_gate(base, head, 0) : base.with_value(head, 0.0);
    const auto scores = rouge1_per_document(model, ablated, docs);
    AblationResult r;
    r.head = head;
    r.deltas.resize(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) r.deltas[i] = scores[i] - intact[i];
    r.mean_delta = std::accumulate(r.deltas.begin(), r.deltas.end(), 0.0) / static_cast<double>(docs.size());
    const auto test = paired_t_test(r.deltas, alpha);
    r.t = test.t;
    r.p = test.p;
    r.significant = test.significant;
    results.push_back(std::move(r));
  }
  return results;
}

std::string ablation_csv(const std::vector<AblationResult>& results) {
  std::ostringstream out;
  out.precision(17);
  out << "region,layer,head,mean_delta,t,p,significant\n";
  for (const auto& r : results) {
    out << to_string(r.head.region) << ',' << r.head.layer << ',' << r.head.head << ',' << r.mean_delta << ','
        << r.t << ',' << r.p << ',' << (r.significant ? "true" : "false") << '\n';
  }
  return out.str();
}

}  // namespace headlamp
