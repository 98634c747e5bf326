#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "headlamp/gating.hpp"
#include "headlamp/model.hpp"

namespace headlamp {

struct RougeScores {
  double r1_f1 = 0.0;
  double r2_f1 = 0.0;
  double rl_f1 = 0.0;
};

using Tokens = std::vector<std::string>;

/// Clipped n-gram overlap F1. Zero when either side has no n-grams or the
/// overlap is empty.
double rouge_n(const Tokens& candidate, const Tokens& reference, std::size_t n);

/// Whole-sequence LCS F1 (summary-level, not split into sentences).
double rouge_l(const Tokens& candidate, const Tokens& reference);

RougeScores rouge(const Tokens& candidate, const Tokens& reference);

/// I_x(a, b) by continued fraction (modified Lentz).
double regularized_incomplete_beta(double a, double b, double x);

/// P(|T| >= |t|) for Student's t with `dof` degrees of freedom.
double student_t_two_sided_p(double t, double dof);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  bool significant = false;
};

/// Paired two-sided t-test on per-document differences.
///
/// Degenerate spread: all-zero differences give t = 0, p = 1; constant
/// non-zero differences give t = +/-inf, p = 0 and count as significant.
TTestResult paired_t_test(std::span<const double> deltas, double alpha = 0.05);

struct AblationResult {
  HeadAddress head;
  std::vector<double> deltas;
  double mean_delta = 0.0;
  double t = 0.0;
  double p = 1.0;
  bool significant = false;
};

/// Greedy ROUGE-1 F1 per document with the model's inference gates.
std::vector<double> rouge1_per_document(const Model& model, const GateSet& gates,
                                        const std::vector<TaggedDocument>& docs);

/// For each head, zero its gate, re-decode every document and test the
/// per-document ROUGE-1 F1 differences (ablated minus intact).
std::vector<AblationResult> ablate_heads(const Model& model, const std::vector<TaggedDocument>& docs,
                                         const std::vector<HeadAddress>& heads, double alpha = 0.05);

/// Columns: region,layer,head,mean_delta,t,p,significant
std::string ablation_csv(const std::vector<AblationResult>& results);

}  // namespace headlamp
