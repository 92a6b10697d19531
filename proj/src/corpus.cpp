#include "moue/corpus.hpp"

#include <cmath>
#include <stdexcept>

#include "moue/rng.hpp"

namespace moue {

SyntheticCorpus::SyntheticCorpus(int vocab, int num_domains, std::uint64_t seed)
    : vocab_(vocab), seed_(seed) {
  if (vocab < 2 || vocab > 64) throw ConfigError("corpus: vocab must be in [2, 64]");
  if (num_domains < 1) throw ConfigError("corpus: need at least one domain");
  SplitMix64 rng(seed ^ 0x636f7270757331ULL);
  cumulative_.reserve(static_cast<std::size_t>(num_domains));
  for (int d = 0; d < num_domains; ++d) {
    Matrix cdf(vocab, vocab);
    for (int i = 0; i < vocab; ++i) {
      double sum = 0.0;
      for (int j = 0; j < vocab; ++j) {
        // Peaked rows: exp(2 z) weights give each domain a distinct
        // preferred-successor structure.
        cdf(i, j) = std::exp(2.0 * rng.next_normal());
        sum += cdf(i, j);
      }
      double acc = 0.0;
      for (int j = 0; j < vocab; ++j) {
        acc += cdf(i, j) / sum;
        cdf(i, j) = acc;
      }
      cdf(i, vocab - 1) = 1.0;
    }
    cumulative_.push_back(std::move(cdf));
  }
}

void SyntheticCorpus::fill_sequence(int domain, std::uint64_t index, int seq_len,
                                    int* out) const {
  SplitMix64 rng(seed_ ^ (0x9e3779b97f4a7c15ULL * (index + 1)) ^
                 (0xc2b2ae3d27d4eb4fULL * static_cast<std::uint64_t>(domain + 1)));
  const Matrix& cdf = cumulative_[static_cast<std::size_t>(domain)];
  int prev = rng.next_below(vocab_);
  out[0] = prev;
  for (int t = 1; t < seq_len; ++t) {
    const double u = rng.next_double();
    int j = 0;
    while (j + 1 < vocab_ && cdf(prev, j) <= u) ++j;
    out[t] = j;
    prev = j;
  }
}

IntMatrix SyntheticCorpus::sample(int domain, int count, int seq_len,
                                  std::uint64_t base_index) const {
  if (domain < 0 || domain >= num_domains()) throw ConfigError("corpus: bad domain");
  IntMatrix out(count, seq_len);
  for (int r = 0; r < count; ++r) {
    fill_sequence(domain, base_index + static_cast<std::uint64_t>(r), seq_len, out.row(r).data());
  }
  return out;
}

IntMatrix SyntheticCorpus::batch(long step, int batch, int seq_len) const {
  IntMatrix out(batch, seq_len);
  for (int b = 0; b < batch; ++b) {
    const std::uint64_t index = static_cast<std::uint64_t>(step) * batch + b;
    fill_sequence(static_cast<int>(index % num_domains()), index, seq_len, out.row(b).data());
  }
  return out;
}

int SyntheticCorpus::batch_domain(long step, int batch, int row) const {
  return static_cast<int>((static_cast<std::uint64_t>(step) * batch + row) % num_domains());
}

}  // namespace moue
