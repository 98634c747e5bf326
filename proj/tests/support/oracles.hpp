#pragma once

// Independent reference implementations used as test oracles. They trade
// speed for obviousness and share no code with the library.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace oracle {

/// Euclidean projection onto the simplex by enumerating every non-empty
/// support S: the equality-constrained least-squares solution on S is
/// p_S = z_S - (sum z_S - 1)/|S|. Among feasible candidates (p_S >= 0) the
/// one closest to z is the projection.
inline std::vector<double> simplex_projection(const std::vector<double>& z) {
  const std::size_t n = z.size();
  std::vector<double> best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t mask = 1; mask < (std::size_t{1} << n); ++mask) {
    double sum = 0.0;
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) {
        sum += z[i];
        ++k;
      }
    const double tau = (sum - 1.0) / static_cast<double>(k);
    std::vector<double> p(n, 0.0);
    bool feasible = true;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) {
        p[i] = z[i] - tau;
        if (p[i] < 0.0) feasible = false;
      }
    if (!feasible) continue;
    double dist = 0.0;
    for (std::size_t i = 0; i < n; ++i) dist += (p[i] - z[i]) * (p[i] - z[i]);
    if (dist < best_dist) {
      best_dist = dist;
      best = p;
    }
  }
  return best;
}

using Tokens = std::vector<std::string>;

/// Clipped n-gram overlap by counting every n-gram window directly.
inline double rouge_n(const Tokens& cand, const Tokens& ref, std::size_t n) {
  auto grams = [n](const Tokens& t) {
    std::map<Tokens, int> counts;
    for (std::size_t i = 0; i + n <= t.size(); ++i) ++counts[Tokens(t.begin() + i, t.begin() + i + n)];
    return counts;
  };
  const auto c = grams(cand), r = grams(ref);
  int nc = 0, nr = 0, overlap = 0;
  for (const auto& [g, k] : c) nc += k;
  for (const auto& [g, k] : r) nr += k;
  for (const auto& [g, k] : c) {
    auto it = r.find(g);
    if (it != r.end()) overlap += std::min(k, it->second);
  }
  if (nc == 0 || nr == 0 || overlap == 0) return 0.0;
  const double p = double(overlap) / nc, rr = double(overlap) / nr;
  return 2 * p * rr / (p + rr);
}

/// Longest common subsequence by enumerating every subsequence of the
/// shorter sequence (lengths <= ~12) and testing it against the other.
inline std::size_t lcs_exhaustive(const Tokens& a, const Tokens& b) {
  const Tokens& s = a.size() <= b.size() ? a : b;
  const Tokens& t = a.size() <= b.size() ? b : a;
  std::size_t best = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << s.size()); ++mask) {
    std::size_t len = static_cast<std::size_t>(__builtin_popcountll(mask));
    if (len <= best) continue;
    std::size_t j = 0;
    bool ok = true;
    for (std::size_t i = 0; i < s.size() && ok; ++i) {
      if (!(mask >> i & 1)) continue;
      while (j < t.size() && t[j] != s[i]) ++j;
      if (j == t.size()) ok = false;
      else ++j;
    }
    if (ok) best = len;
  }
  return best;
}

inline double rouge_l(const Tokens& cand, const Tokens& ref) {
  if (cand.empty() || ref.empty()) return 0.0;
  const double l = static_cast<double>(lcs_exhaustive(cand, ref));
  if (l == 0.0) return 0.0;
  const double p = l / cand.size(), r = l / ref.size();
  return 2 * p * r / (p + r);
}

}  // namespace oracle
