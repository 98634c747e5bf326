#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "headlamp/tensor.hpp"

namespace headlamp {

/// A point on the probability simplex together with its support (indices of
/// strictly positive entries, ascending).
struct SimplexVector {
  std::vector<double> values;
  std::vector<std::size_t> support;
};

enum class AttentionKind { Softmax, Sparsemax };

std::string_view to_string(AttentionKind kind);

/// Max-subtracted softmax; every entry is strictly positive.
SimplexVector softmax(std::span<const double> z);

/// Euclidean projection of z onto the simplex, by sort and threshold.
///
/// The support is the largest k with 1 + k * z_(k) > sum_{j<=k} z_(j) over
/// the descending order; equality excludes the entry, so exact ties resolve
/// toward the smaller support. The row maximum is subtracted first, which
/// makes the result bit-identical under exactly representable shifts.
SimplexVector sparsemax(std::span<const double> z);

/// Vector-Jacobian product of softmax: p_i * (u_i - <p, u>).
std::vector<double> softmax_vjp(std::span<const double> output, std::span<const double> upstream);

/// Vector-Jacobian product of sparsemax. On the support S the gradient is
/// u_i - mean_{j in S} u_j, zero elsewhere. At support boundaries this is the
/// one-sided derivative given by the current support.
std::vector<double> sparsemax_vjp(const SimplexVector& output, std::span<const double> upstream);

/// Row-wise activation of a (queries x keys) score matrix. Scores must
/// already be scaled by 1/sqrt(d_k).
Tensor attention_weights(const Tensor& scores, AttentionKind kind);

}  // namespace headlamp
