#include "safact/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>

namespace safact::policy {

std::vector<int> Tokenizer::encode(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(int(c));
  return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id >= 0 && id < 256) out.push_back(char(static_cast<unsigned char>(id)));
    // BOS/EOS contribute no bytes
  }
  return out;
}

std::string Tokenizer::decode_token(int id) {
  if (id >= 0 && id < 256) return std::string(1, char(static_cast<unsigned char>(id)));
  return {};
}

PolicySnapshot PolicySnapshot::random(uint64_t seed, double scale) {
  PolicySnapshot p;
  std::mt19937_64 rng(seed);
  for (double& v : p.table()) v = (2.0 * u01(rng()) - 1.0) * scale;
  return p;
}

namespace {

// Accumulated conditioning state: per-token counts plus the summed parameter
// rows, so the mean logits for the current prefix are rowsum / n.
struct Context {
  explicit Context(const PolicySnapshot& p)
      : policy(&p), rowsum(kVocab, 0.0), counts(kVocab, 0) {}

  void push(int tok) {
    const std::vector<double>& t = policy->table();
    const double* row = t.data() + size_t{unsigned(tok)} * kVocab;
    for (int j = 0; j < kVocab; ++j) rowsum[j] += row[j];
    if (counts[tok]++ == 0) present.push_back(tok);
    ++n;
  }

  // log softmax normalizer of rowsum / n (optionally tempered)
  double log_z(double inv_temp = 1.0) const {
    double mx = -HUGE_VAL;
    for (int j = 0; j < kVocab; ++j) mx = std::max(mx, rowsum[j]);
    long double sum = 0.0L;
    for (int j = 0; j < kVocab; ++j)
      sum += std::exp((rowsum[j] - mx) / n * inv_temp);
    return double(std::log(sum)) + mx / n * inv_temp;
  }

  double logit(int j) const { return rowsum[j] / n; }

  const PolicySnapshot* policy;
  std::vector<double> rowsum;
  std::vector<int> counts;
  std::vector<int> present;  // distinct tokens, insertion order
  double n = 0.0;
};

Context seed_context(const PolicySnapshot& policy, std::string_view context) {
  Context ctx(policy);
  ctx.push(kBos);
  for (unsigned char c : context) ctx.push(int(c));
  return ctx;
}

}  // namespace

double log_prob(const PolicySnapshot& policy, std::string_view context,
                std::string_view continuation) {
  if (continuation.empty()) throw PolicyError("log_prob: continuation must be non-empty");
  Context ctx = seed_context(policy, context);
  long double lp = 0.0L;
  for (unsigned char c : continuation) {
    lp += ctx.logit(int(c)) - ctx.log_z();
    ctx.push(int(c));
  }
  return double(std::min<long double>(lp, 0.0L));
}

std::string sample(const PolicySnapshot& policy, std::string_view context,
                   double temperature, int max_tokens, uint64_t seed) {
  if (!(temperature > 0.0)) throw PolicyError("sample: temperature must be > 0");
  if (max_tokens < 1) throw PolicyError("sample: max_tokens must be >= 1");
  std::mt19937_64 rng(seed);
  Context ctx = seed_context(policy, context);
  std::string out;
  double inv_temp = 1.0 / temperature;
  for (int step = 0; step < max_tokens; ++step) {
    double lz = ctx.log_z(inv_temp);
    double u = u01(rng());
    long double cum = 0.0L;
    int pick = kVocab - 1;
    for (int j = 0; j < kVocab; ++j) {
      cum += std::exp(ctx.logit(j) * inv_temp - lz);
      if (double(cum) > u) {
        pick = j;
        break;
      }
    }
    if (pick == kEos) break;
    if (pick < 256) out.push_back(char(static_cast<unsigned char>(pick)));
    // BOS drawn mid-sequence emits no byte but still conditions what follows
    ctx.push(pick);
  }
  return out;
}

std::vector<double> log_prob_grad(const PolicySnapshot& policy, std::string_view context,
                                  std::string_view continuation) {
  if (continuation.empty())
    throw PolicyError("log_prob_grad: continuation must be non-empty");
  std::vector<double> grad(size_t{kVocab} * kVocab, 0.0);
  Context ctx = seed_context(policy, context);
  std::vector<double> p(kVocab);
  for (unsigned char c : continuation) {
    int target = int(c);
    double lz = ctx.log_z();
    for (int j = 0; j < kVocab; ++j) p[j] = std::exp(ctx.logit(j) - lz);
    // d logit(j) / d table[i][j] = counts[i] / n for every context token i
    for (int i : ctx.present) {
      double w = ctx.counts[i] / ctx.n;
      double* row = grad.data() + size_t{unsigned(i)} * kVocab;
      for (int j = 0; j < kVocab; ++j) row[j] -= w * p[j];
      row[target] += w;
    }
    ctx.push(target);
  }
  return grad;
}

namespace {
constexpr char kMagic[4] = {'S', 'A', 'P', 'O'};
constexpr uint32_t kFormatVersion = 1;
}  // namespace

void save_snapshot(const PolicySnapshot& policy, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PolicyError("cannot open snapshot for writing: " + path);
  out.write(kMagic, 4);
  uint32_t version = kFormatVersion;
  uint32_t vocab = kVocab;
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&vocab), 4);
  out.write(reinterpret_cast<const char*>(policy.table().data()),
            std::streamsize(policy.table().size() * sizeof(double)));
  if (!out) throw PolicyError("snapshot write failed: " + path);
}

PolicySnapshot load_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PolicyError("cannot open snapshot: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw SnapshotCorruptError("bad magic in snapshot: " + path);
  uint32_t version = 0, vocab = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&vocab), 4);
  if (!in) throw SnapshotCorruptError("truncated snapshot header: " + path);
  if (version > kFormatVersion)
    throw SnapshotVersionError("snapshot version " + std::to_string(version) +
                               " is newer than supported in " + path);
  if (vocab != kVocab)
    throw SnapshotCorruptError("unexpected vocab size in snapshot: " + path);
  PolicySnapshot p;
  in.read(reinterpret_cast<char*>(p.table().data()),
          std::streamsize(p.table().size() * sizeof(double)));
  if (!in || in.gcount() != std::streamsize(p.table().size() * sizeof(double)))
    throw SnapshotCorruptError("truncated snapshot payload: " + path);
  char extra;
  if (in.read(&extra, 1)) throw SnapshotCorruptError("trailing bytes in snapshot: " + path);
  for (double v : p.table())
    if (!std::isfinite(v)) throw SnapshotCorruptError("non-finite entry in snapshot: " + path);
  p.version = std::to_string(version);
  return p;
}

}  // namespace safact::policy
