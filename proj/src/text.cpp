#include "itrl/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

namespace itrl::text {

namespace {
const std::vector<std::string> kReserved = {"<pad>", "<unk>", "<bos>", "<mask>"};
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < kReserved.size() || !std::equal(kReserved.begin(), kReserved.end(), tokens_.begin()))
    throw Error("vocabulary must start with the reserved tokens <pad> <unk> <bos> <mask>");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw Error("vocabulary token '" + tokens_[i] + "' is duplicated");
  }
}

int Vocabulary::lookup(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::decode(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw Error("vocabulary id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write vocabulary: " + path.string());
  for (const auto& t : tokens_) os << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read vocabulary: " + path.string());
  std::vector<std::string> tokens;
  for (std::string line; std::getline(is, line);) tokens.push_back(line);
  return Vocabulary(std::move(tokens));
}

std::vector<std::string> normalize(std::string_view s) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c) || std::ispunct(c)) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

Vocabulary build_vocab(std::span<const std::string> corpus) {
  if (corpus.empty()) throw Error("build_vocab: corpus is empty");
  std::set<std::string> words;
  for (const auto& line : corpus)
    for (auto& w : normalize(line)) words.insert(std::move(w));
  std::vector<std::string> tokens = kReserved;
  for (const auto& w : words)
    if (std::find(kReserved.begin(), kReserved.end(), w) == kReserved.end()) tokens.push_back(w);
  return Vocabulary(std::move(tokens));
}

TokenSeq encode(std::string_view s, const Vocabulary& vocab, int n_max) {
  if (n_max < 2) throw Error("encode: n_max must be at least 2");
  TokenSeq seq;
  seq.ids.assign(static_cast<std::size_t>(n_max), kPad);
  seq.ids[0] = kBos;
  int n = 1;
  for (const auto& w : normalize(s)) {
    if (n == n_max) break;
    seq.ids[static_cast<std::size_t>(n++)] = vocab.lookup(w);
  }
  seq.true_length = n;
  return seq;
}

TokenSeq blank(int n_max) {
  TokenSeq seq;
  seq.ids.assign(static_cast<std::size_t>(n_max), kPad);
  return seq;
}

std::string decode(const TokenSeq& seq, const Vocabulary& vocab) {
  std::string out;
  for (int i = 0; i < seq.true_length; ++i) {
    const int id = seq.ids[static_cast<std::size_t>(i)];
    if (id == kBos || id == kPad) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.decode(id);
  }
  return out;
}

}  // namespace itrl::text
