#include "headlamp/activations.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace headlamp {

namespace {

void require_nonempty(std::span<const double> z, const char* what) {
  if (z.empty()) throw ArgumentError(std::string(what) + ": empty input row");
}

std::vector<std::size_t> positive_support(const std::vector<double>& values) {
  std::vector<std::size_t> support;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] > 0.0) support.push_back(i);
  }
  return support;
}

}  // namespace

std::string_view to_string(AttentionKind kind) {
  return kind == AttentionKind::Softmax ? "softmax" : "sparsemax";
}

SimplexVector softmax(std::span<const double> z) {
  require_nonempty(z, "softmax");
  const double top = *std::max_element(z.begin(), z.end());
  SimplexVector out;
  out.values.resize(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out.values[i] = std::exp(z[i] - top);
    total += out.values[i];
  }
  for (auto& v : out.values) v /= total;
  out.support = positive_support(out.values);
  return out;
}

SimplexVector sparsemax(std::span<const double> z) {
  require_nonempty(z, "sparsemax");
  const double top = *std::max_element(z.begin(), z.end());
  std::vector<double> shifted(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) shifted[i] = z[i] - top;

  std::vector<double> sorted = shifted;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());

  double cumsum = 0.0;
  double support_sum = 0.0;
  std::size_t k = 0;
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    cumsum += sorted[j];
    const double rank = static_cast<double>(j + 1);
    if (1.0 + rank * sorted[j] > cumsum) {
      k = j + 1;
      support_sum = cumsum;
    } else {
      break;
    }
  }
  // k >= 1 always: the top entry is 0 after shifting and 1 + 0 > 0.
  const double tau = (support_sum - 1.0) / static_cast<double>(k);

  SimplexVector out;
  out.values.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out.values[i] = std::max(shifted[i] - tau, 0.0);
  out.support = positive_support(out.values);
  return out;
}

std::vector<double> softmax_vjp(std::span<const double> output, std::span<const double> upstream) {
  if (output.size() != upstream.size()) throw ArgumentError("softmax_vjp: length mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < output.size(); ++i) dot += output[i] * upstream[i];
  std::vector<double> grad(output.size());
  for (std::size_t i = 0; i < output.size(); ++i) grad[i] = output[i] * (upstream[i] - dot);
  return grad;
}

std::vector<double> sparsemax_vjp(const SimplexVector& output, std::span<const double> upstream) {
  if (output.values.size() != upstream.size()) {
    throw ArgumentError("sparsemax_vjp: output has " + std::to_string(output.values.size()) +
                        " entries, upstream has " + std::to_string(upstream.size()));
  }
  std::vector<double> grad(upstream.size(), 0.0);
  if (output.support.empty()) return grad;
  double mean = 0.0;
  for (auto i : output.support) mean += upstream[i];
  mean /= static_cast<double>(output.support.size());
  for (auto i : output.support) grad[i] = upstream[i] - mean;
  return grad;
}

Tensor attention_weights(const Tensor& scores, AttentionKind kind) {
  if (scores.empty() || scores.cols() == 0) throw ArgumentError("attention_weights: zero keys");
  Tensor weights(scores.shape());
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    const auto row = kind == AttentionKind::Softmax ? softmax(scores.row(r)) : sparsemax(scores.row(r));
    std::copy(row.values.begin(), row.values.end(), weights.row(r).begin());
  }
  return weights;
}

}  // namespace headlamp
