#pragma once

#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "itrl/tensor.hpp"

namespace itrl::text {

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kMask = 3;
inline constexpr int kReservedCount = 4;

// Closed word-level vocabulary. Ids 0..3 are <pad>, <unk>, <bos>, <mask>;
// the remaining words follow in lexicographic order.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  int lookup(std::string_view word) const;
  const std::string& decode(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Plain text, one token per line; line number (from 0) is the id.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Lower-cases and splits on whitespace and punctuation.
std::vector<std::string> normalize(std::string_view s);

Vocabulary build_vocab(std::span<const std::string> corpus);

struct TokenSeq {
  std::vector<int> ids;  // length n_max, right-padded with <pad>
  int true_length = 0;

  int n_max() const { return static_cast<int>(ids.size()); }
  bool operator==(const TokenSeq&) const = default;
};

TokenSeq encode(std::string_view s, const Vocabulary& vocab, int n_max);

// All-<pad> sequence, used when instructions are withheld.
TokenSeq blank(int n_max);

// Space-joined words after <bos>, stopping at true_length.
std::string decode(const TokenSeq& seq, const Vocabulary& vocab);

// Fixed sinusoidal table: row p holds sin/cos pairs at geometric frequencies,
// so row 0 is [0, 1, 0, 1, ...].
template <typename S>
Matrix<S> positions_1d(int n_max, int d) {
  if (d <= 0 || d % 2 != 0) throw Error("positions_1d: embedding width must be even, got " + std::to_string(d));
  Matrix<S> pe(n_max, d);
  for (int p = 0; p < n_max; ++p) {
    for (int i = 0; i < d / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / d);
      pe(p, 2 * i) = static_cast<S>(std::sin(p * freq));
      pe(p, 2 * i + 1) = static_cast<S>(std::cos(p * freq));
    }
  }
  return pe;
}

}  // namespace itrl::text
