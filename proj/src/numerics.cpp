#include "moue/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moue/rng.hpp"

namespace moue {

Vector softmax_masked(const Eigen::Ref<const Vector>& logits, const std::vector<bool>& mask) {
  if (static_cast<Eigen::Index>(mask.size()) != logits.size()) {
    throw std::invalid_argument("softmax_masked: mask/logits size mismatch");
  }
  double max_logit = kNegInf;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (mask[static_cast<std::size_t>(i)] && logits[i] > max_logit) max_logit = logits[i];
  }
  if (max_logit == kNegInf) {
    throw std::invalid_argument("empty reachable set");
  }
  Vector out = Vector::Zero(logits.size());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (mask[static_cast<std::size_t>(i)]) {
      out[i] = std::exp(logits[i] - max_logit);
      sum += out[i];
    }
  }
  out /= sum;
  return out;
}

Vector softmax_neg_inf(const Eigen::Ref<const Vector>& logits) {
  std::vector<bool> mask(static_cast<std::size_t>(logits.size()));
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    mask[static_cast<std::size_t>(i)] = logits[i] != kNegInf;
  }
  return softmax_masked(logits, mask);
}

std::vector<int> top_k_select(const Eigen::Ref<const Vector>& scores, int k) {
  std::vector<int> finite;
  finite.reserve(static_cast<std::size_t>(scores.size()));
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (std::isfinite(scores[i])) finite.push_back(static_cast<int>(i));
  }
  if (k < 0 || static_cast<std::size_t>(k) > finite.size()) {
    throw std::invalid_argument("insufficient reachable experts");
  }
  // Descending score, ascending index on ties; stable w.r.t. repeated calls.
  std::partial_sort(finite.begin(), finite.begin() + k, finite.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  finite.resize(static_cast<std::size_t>(k));
  return finite;
}

double log_binomial(long long n, long long k) {
  if (k < 0 || k > n || n < 0) {
    throw std::invalid_argument("invalid binomial");
  }
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

double SplitMix64::next_normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; u clamped away from 0 so log stays finite.
  double u = next_double();
  double v = next_double();
  if (u < 1e-300) u = 1e-300;
  const double r = std::sqrt(-2.0 * std::log(u));
  const double theta = 2.0 * M_PI * v;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

}  // namespace moue
