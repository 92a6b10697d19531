#pragma once

#include <cstdint>
#include <vector>

#include "moue/types.hpp"

namespace moue {

/// Seeded multi-domain Markov token generator (the pretraining-data
/// stand-in). Each domain gets its own peaked transition table so routing
/// can pick up domain structure. Every sequence is a pure function of
/// (seed, domain, sequence index), so batches are reproducible in isolation
/// and across runs.
class SyntheticCorpus {
 public:
  SyntheticCorpus(int vocab, int num_domains, std::uint64_t seed);

  int vocab() const { return vocab_; }
  int num_domains() const { return static_cast<int>(cumulative_.size()); }

  /// `count` sequences of `seq_len` tokens from one domain, starting at
  /// sequence index `base_index`.
  IntMatrix sample(int domain, int count, int seq_len, std::uint64_t base_index = 0) const;

  /// Training batch for a step: row b draws from domain (step*batch + b)
  /// mod num_domains with global sequence index step*batch + b.
  IntMatrix batch(long step, int batch, int seq_len) const;

  /// Domain of row `row` in the batch produced for `step`.
  int batch_domain(long step, int batch, int row) const;

 private:
  int vocab_;
  std::uint64_t seed_;
  std::vector<Matrix> cumulative_;  // per domain: vocab x vocab row-wise CDF

  void fill_sequence(int domain, std::uint64_t index, int seq_len, int* out) const;
};

}  // namespace moue
