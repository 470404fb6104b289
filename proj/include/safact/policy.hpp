#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

// The reference desk-scale autoregressive policy. Byte-level vocabulary
// (0..255) plus BOS/EOS. The next-token logits for a context are the mean of
// the parameter rows of every token seen so far (BOS included), so the whole
// preceding text influences the distribution while the parameter table stays
// a single (258, 258) matrix. With a single-token context this reduces to an
// ordinary bigram table. log_prob, sample and log_prob_grad are exact.

namespace safact::policy {

inline constexpr int kVocab = 258;
inline constexpr int kBos = 256;
inline constexpr int kEos = 257;

struct PolicyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SnapshotVersionError : PolicyError {
  using PolicyError::PolicyError;
};
struct SnapshotCorruptError : PolicyError {
  using PolicyError::PolicyError;
};

struct Tokenizer {
  static std::vector<int> encode(std::string_view text);
  static std::string decode(const std::vector<int>& ids);  // BOS/EOS decode to ""
  static std::string decode_token(int id);
};

class PolicySnapshot {
 public:
  PolicySnapshot() : table_(size_t{kVocab} * kVocab, 0.0) {}

  // iid uniform(-scale, scale) entries, deterministic in seed.
  static PolicySnapshot random(uint64_t seed, double scale = 1.0);

  double at(int row, int col) const { return table_[size_t{unsigned(row)} * kVocab + unsigned(col)]; }
  double& at(int row, int col) { return table_[size_t{unsigned(row)} * kVocab + unsigned(col)]; }

  const std::vector<double>& table() const { return table_; }
  std::vector<double>& table() { return table_; }

  bool operator==(const PolicySnapshot& o) const { return table_ == o.table_; }

  std::string version = "1";

 private:
  std::vector<double> table_;
};

// Exact log pi(continuation | context). Always <= 0. Throws on empty
// continuation.
double log_prob(const PolicySnapshot& policy, std::string_view context,
                std::string_view continuation);

// Ancestral sampling from softmax(logits / temperature). Stops at EOS or
// max_tokens. Deterministic in (policy, context, temperature, seed).
std::string sample(const PolicySnapshot& policy, std::string_view context,
                   double temperature, int max_tokens, uint64_t seed);

// d log_prob / d table, flattened row-major (kVocab * kVocab). Rows of tokens
// never present in the conditioning context stay zero; every row sums to 0.
std::vector<double> log_prob_grad(const PolicySnapshot& policy, std::string_view context,
                                  std::string_view continuation);

// Snapshot file: magic "SAPO", u32 version, u32 vocab, row-major LE doubles.
void save_snapshot(const PolicySnapshot& policy, const std::string& path);
PolicySnapshot load_snapshot(const std::string& path);

// uniform in [0,1), 53-bit, from a raw 64-bit draw
inline double u01(uint64_t bits) { return double(bits >> 11) * 0x1.0p-53; }

}  // namespace safact::policy
