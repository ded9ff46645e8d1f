#include "itrl/encoder.hpp"

#include <array>

namespace itrl::model {

namespace {

constexpr std::array<std::pair<Fusion, std::string_view>, 3> kFusionNames{{
    {Fusion::kJoint, "joint"},
    {Fusion::kConcat, "concat"},
    {Fusion::kFilm, "film"},
}};

constexpr std::array<std::pair<Selection, std::string_view>, 5> kSelectionNames{{
    {Selection::kLast, "last"},
    {Selection::kSecondToLast, "second_to_last"},
    {Selection::kConcatLastHalf, "concat_last_half"},
    {Selection::kConcatFirstHalf, "concat_first_half"},
    {Selection::kConcatAll, "concat_all"},
}};

}  // namespace

std::string_view fusion_name(Fusion f) {
  for (auto [k, n] : kFusionNames)
    if (k == f) return n;
  throw ConfigError("unknown fusion");
}

Fusion parse_fusion(std::string_view s) {
  for (auto [k, n] : kFusionNames)
    if (n == s) return k;
  throw ConfigError("unknown fusion '" + std::string(s) + "' (expected joint, concat or film)");
}

std::string_view selection_name(Selection s) {
  for (auto [k, n] : kSelectionNames)
    if (k == s) return n;
  throw ConfigError("unknown feature selection");
}

Selection parse_selection(std::string_view s) {
  for (auto [k, n] : kSelectionNames)
    if (n == s) return k;
  throw ConfigError("unknown feature selection '" + std::string(s) +
                    "' (expected last, second_to_last, concat_last_half, concat_first_half or concat_all)");
}

void EncoderConfig::validate() const {
  auto fail = [&](const std::string& msg) { throw ConfigError("encoder config (" + preset + "): " + msg); };
  if (d <= 0 || depth <= 0 || heads <= 0 || patch <= 0 || n_max <= 0 || mlp_ratio <= 0)
    fail("sizes must be positive");
  if (d % heads != 0) fail("width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  if (d % 4 != 0) fail("width " + std::to_string(d) + " must be divisible by 4 for 2D positions");
  if (image_size % patch != 0)
    fail("image size " + std::to_string(image_size) + " not divisible by patch " + std::to_string(patch));
  if (vocab_size <= text::kReservedCount) fail("vocabulary size " + std::to_string(vocab_size) + " too small");
}

void EncoderConfig::to_header(Header& h) const {
  h["encoder.preset"] = preset;
  h["encoder.d"] = std::to_string(d);
  h["encoder.depth"] = std::to_string(depth);
  h["encoder.heads"] = std::to_string(heads);
  h["encoder.patch"] = std::to_string(patch);
  h["encoder.image_size"] = std::to_string(image_size);
  h["encoder.n_max"] = std::to_string(n_max);
  h["encoder.mlp_ratio"] = std::to_string(mlp_ratio);
  h["encoder.vocab_size"] = std::to_string(vocab_size);
  h["encoder.fusion"] = std::string(fusion_name(fusion));
}

EncoderConfig EncoderConfig::from_header(const Header& h) {
  EncoderConfig c;
  c.preset = header_string(h, "encoder.preset");
  c.d = header_int(h, "encoder.d");
  c.depth = header_int(h, "encoder.depth");
  c.heads = header_int(h, "encoder.heads");
  c.patch = header_int(h, "encoder.patch");
  c.image_size = header_int(h, "encoder.image_size");
  c.n_max = header_int(h, "encoder.n_max");
  c.mlp_ratio = header_int(h, "encoder.mlp_ratio");
  c.vocab_size = header_int(h, "encoder.vocab_size");
  c.fusion = parse_fusion(header_string(h, "encoder.fusion"));
  c.validate();
  return c;
}

EncoderConfig encoder_preset(std::string_view name, int vocab_size, int n_max) {
  EncoderConfig c;
  c.preset = std::string(name);
  c.vocab_size = vocab_size;
  c.n_max = n_max;
  if (name == "tiny") {
    c.d = 32, c.depth = 2, c.heads = 2;
  } else if (name == "small") {
    c.d = 64, c.depth = 4, c.heads = 4;
  } else if (name == "medium") {
    c.d = 128, c.depth = 6, c.heads = 4;
  } else if (name == "large") {
    c.d = 192, c.depth = 8, c.heads = 6;
  } else {
    throw ConfigError("unknown encoder preset '" + std::string(name) + "' (expected tiny, small, medium or large)");
  }
  c.validate();
  return c;
}

int selection_layers(Selection s, int depth) {
  switch (s) {
    case Selection::kLast:
    case Selection::kSecondToLast: return 1;
    case Selection::kConcatLastHalf: return depth - depth / 2;
    case Selection::kConcatFirstHalf: return std::max(1, depth / 2);
    case Selection::kConcatAll: return depth;
  }
  throw ConfigError("unknown feature selection");
}

MaeMask make_mae_mask(int patches, int true_length, std::uint64_t seed, const MaeConfig& cfg) {
  std::mt19937_64 rng(seed);
  auto split = [&](int n, double ratio, std::vector<int>& visible, std::vector<int>& masked) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    int m = static_cast<int>(std::floor(ratio * n));
    if (n > 0) m = std::min(m, n - 1);
    masked.assign(idx.begin(), idx.begin() + m);
    visible.assign(idx.begin() + m, idx.end());
    std::sort(masked.begin(), masked.end());
    std::sort(visible.begin(), visible.end());
  };
  MaeMask out;
  split(patches, cfg.image_mask_ratio, out.visible_patches, out.masked_patches);
  split(true_length, cfg.text_mask_ratio, out.visible_text, out.masked_text);
  return out;
}

}  // namespace itrl::model
