#pragma once

#include <vector>

#include "moue/types.hpp"

namespace moue {

/// Numerically stable softmax over the positions where `mask` is true.
/// Masked positions come back exactly 0; the rest are positive and sum to 1.
/// Throws std::invalid_argument("empty reachable set") when nothing is
/// unmasked.
Vector softmax_masked(const Eigen::Ref<const Vector>& logits, const std::vector<bool>& mask);

/// Same contract with the mask encoded in-band: entries equal to -inf are
/// masked. This is how routing logits arrive everywhere else in the library.
Vector softmax_neg_inf(const Eigen::Ref<const Vector>& logits);

/// Indices of the k largest finite scores, sorted by descending score and
/// ascending index on ties. -inf entries never qualify. Throws
/// std::invalid_argument("insufficient reachable experts") if fewer than k
/// finite entries exist.
std::vector<int> top_k_select(const Eigen::Ref<const Vector>& scores, int k);

/// ln C(n, k) via lgamma; exact to well under 0.5 ulp-of-integer for n <= 30.
/// Throws std::invalid_argument("invalid binomial") when k > n or k < 0.
double log_binomial(long long n, long long k);

}  // namespace moue
