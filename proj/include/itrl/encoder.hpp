#pragma once

// Vision-language encoder: patch and token embedding, pre-norm transformer
// blocks over the joint sequence, per-layer mean pooling, the concat and FiLM
// fusion variants, and the masked-autoencoder pretraining objective.

#include <algorithm>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "itrl/blockworld.hpp"
#include "itrl/checkpoint.hpp"
#include "itrl/nn.hpp"
#include "itrl/text.hpp"

namespace itrl::model {

enum class Fusion : std::uint8_t { kJoint, kConcat, kFilm };
enum class Selection : std::uint8_t { kLast, kSecondToLast, kConcatLastHalf, kConcatFirstHalf, kConcatAll };

std::string_view fusion_name(Fusion f);
Fusion parse_fusion(std::string_view s);
std::string_view selection_name(Selection s);
Selection parse_selection(std::string_view s);

struct EncoderConfig {
  std::string preset = "small";
  int d = 64;
  int depth = 4;
  int heads = 4;
  int patch = 8;
  int image_size = bw::kImageSize;
  int n_max = 32;
  int mlp_ratio = 4;
  int vocab_size = 0;
  Fusion fusion = Fusion::kJoint;

  void validate() const;
  int grid() const { return image_size / patch; }
  int patches() const { return grid() * grid(); }
  int patch_dim() const { return 3 * patch * patch; }
  int sequence_length() const { return patches() + n_max; }

  void to_header(Header& h) const;
  static EncoderConfig from_header(const Header& h);
  bool operator==(const EncoderConfig&) const = default;
};

// tiny d32/L2, small d64/L4, medium d128/L6, large d192/L8.
EncoderConfig encoder_preset(std::string_view name, int vocab_size, int n_max = 32);

// Number of layers a selection concatenates for an encoder of `depth` blocks.
int selection_layers(Selection s, int depth);

// Image bytes -> H x (W*3) floats in [0, 1], channels interleaved.
template <typename S>
Matrix<S> image_to_float(const bw::Image& img) {
  Matrix<S> out(bw::kImageSize, bw::kImageSize * 3);
  for (Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<S>(img[static_cast<std::size_t>(i)]) / S(255);
  return out;
}

// Raster-order patches; each row is the patch's pixels in (y, x, channel) order.
template <typename S>
Matrix<S> patchify(const Matrix<S>& img, int P) {
  const Index h = img.rows(), w = img.cols() / 3;
  if (P <= 0 || img.cols() % 3 != 0 || h % P != 0 || w % P != 0)
    throw ShapeError("patchify: image " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by patch " +
                     std::to_string(P));
  const Index gh = h / P, gw = w / P;
  Matrix<S> out(gh * gw, 3 * P * P);
  for (Index py = 0; py < gh; ++py)
    for (Index px = 0; px < gw; ++px) {
      const Index r = py * gw + px;
      for (Index y = 0; y < P; ++y) out.row(r).segment(y * 3 * P, 3 * P) = img.row(py * P + y).segment(px * P * 3, 3 * P);
    }
  return out;
}

template <typename S>
Matrix<S> unpatchify(const Matrix<S>& patches, int P, int image_size) {
  const Index g = image_size / P;
  if (P <= 0 || image_size % P != 0 || patches.rows() != g * g || patches.cols() != 3 * P * P)
    throw ShapeError("unpatchify: patch matrix " + shape_of(patches).str() + " does not match patch size " +
                     std::to_string(P));
  Matrix<S> img(image_size, image_size * 3);
  for (Index py = 0; py < g; ++py)
    for (Index px = 0; px < g; ++px)
      for (Index y = 0; y < P; ++y)
        img.row(py * P + y).segment(px * P * 3, 3 * P) = patches.row(py * g + px).segment(y * 3 * P, 3 * P);
  return img;
}

// Fixed 2D sin-cos table: the first d/2 columns encode the patch row, the
// rest the patch column.
template <typename S>
Matrix<S> positions_2d(int grid, int d) {
  if (d % 4 != 0) throw Error("positions_2d: width must be divisible by 4, got " + std::to_string(d));
  const Matrix<S> axis = text::positions_1d<S>(grid, d / 2);
  Matrix<S> out(grid * grid, d);
  for (int r = 0; r < grid; ++r)
    for (int c = 0; c < grid; ++c) {
      out.row(r * grid + c).head(d / 2) = axis.row(r);
      out.row(r * grid + c).tail(d / 2) = axis.row(c);
    }
  return out;
}

template <typename S>
void init_encoder(ParamStore<S>& store, const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  nn::Initializer<S> init(store, seed);
  init.linear("encoder.patch_proj", cfg.patch_dim(), cfg.d);
  init.normal("encoder.tok_embed", cfg.vocab_size, cfg.d, 0.02);
  init.normal("encoder.modality.image", 1, cfg.d, 0.02);
  init.normal("encoder.modality.text", 1, cfg.d, 0.02);
  for (int l = 0; l < cfg.depth; ++l) init.block("encoder.blocks." + std::to_string(l), cfg.d, cfg.mlp_ratio);
  if (cfg.fusion == Fusion::kConcat)
    for (int l = 0; l < cfg.depth; ++l) init.normal("encoder.concat." + std::to_string(l) + ".w", cfg.d, cfg.d, 0.02);
  if (cfg.fusion == Fusion::kFilm) {
    for (int l = 0; l < cfg.depth; ++l) {
      const std::string n = "encoder.film." + std::to_string(l);
      init.zeros(n + ".gamma.w", cfg.d, cfg.d);
      init.zeros(n + ".gamma.b", 1, cfg.d);
      init.zeros(n + ".beta.w", cfg.d, cfg.d);
      init.zeros(n + ".beta.b", 1, cfg.d);
    }
  }
}

// One (camera image, instruction) pair to encode.
template <typename S>
struct EncoderInput {
  const Matrix<S>* patches = nullptr;  // patches() x patch_dim()
  const text::TokenSeq* tokens = nullptr;
};

// Pooled features for a batch of inputs; row i of every tensor belongs to input i.
template <typename S>
struct FeatureStack {
  std::vector<Tensor<S>> layers;  // one [N x d] tensor per encoder block
  Tensor<S> final;                // o: the last block's pooled features
  Index count() const { return final.rows(); }
  std::size_t vectors_per_input() const { return layers.size() + 1; }
};

struct EncodeOptions {
  bool trainable = true;
  // Carry <pad> text positions through the blocks under an attention mask
  // instead of dropping them. Both paths give the same features.
  bool materialize_padding = false;
};

namespace detail {

// Which tokens of one input enter the sequence.
struct TokenPlan {
  std::vector<int> patch_ids;  // patches, in order
  std::vector<int> text_pos;   // token positions, in order
  int valid_text = 0;          // leading text positions that are not padding
};

inline TokenPlan full_plan(const EncoderConfig& cfg, const text::TokenSeq& tokens, bool materialize_padding) {
  if (tokens.n_max() != cfg.n_max)
    throw ShapeError("encoder: token sequence length " + std::to_string(tokens.n_max()) + " but n_max is " +
                     std::to_string(cfg.n_max));
  TokenPlan p;
  p.patch_ids.resize(static_cast<std::size_t>(cfg.patches()));
  std::iota(p.patch_ids.begin(), p.patch_ids.end(), 0);
  const int n = materialize_padding ? cfg.n_max : tokens.true_length;
  p.text_pos.resize(static_cast<std::size_t>(n));
  std::iota(p.text_pos.begin(), p.text_pos.end(), 0);
  p.valid_text = tokens.true_length;
  return p;
}

template <typename S>
struct Embedded {
  Tensor<S> image;  // all inputs' image rows, input-major
  std::optional<Tensor<S>> text;  // all inputs' text rows, input-major
  std::vector<Index> image_rows, text_rows;  // per-input counts
};

template <typename S>
Embedded<S> embed(const nn::Binder<S>& p, const EncoderConfig& cfg, std::span<const EncoderInput<S>> in,
                  const std::vector<TokenPlan>& plans) {
  Tape<S>& tape = p.tape;
  Embedded<S> e;
  Index n_img = 0, n_txt = 0;
  for (const auto& pl : plans) {
    e.image_rows.push_back(static_cast<Index>(pl.patch_ids.size()));
    e.text_rows.push_back(static_cast<Index>(pl.text_pos.size()));
    n_img += e.image_rows.back();
    n_txt += e.text_rows.back();
  }
  const Matrix<S> pos2 = positions_2d<S>(cfg.grid(), cfg.d);
  const Matrix<S> pos1 = text::positions_1d<S>(cfg.n_max, cfg.d);

  Matrix<S> pix(n_img, cfg.patch_dim());
  Matrix<S> ipos(n_img, cfg.d);
  Index r = 0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const Matrix<S>& src = *in[i].patches;
    if (src.rows() != cfg.patches() || src.cols() != cfg.patch_dim())
      throw ShapeError("encoder: patch matrix " + shape_of(src).str() + " does not match config [" +
                       std::to_string(cfg.patches()) + ", " + std::to_string(cfg.patch_dim()) + "]");
    for (int id : plans[i].patch_ids) {
      pix.row(r) = src.row(id);
      ipos.row(r) = pos2.row(id);
      ++r;
    }
  }
  e.image = add(add(nn::linear(p, "encoder.patch_proj", tape.constant(std::move(pix))), tape.constant(std::move(ipos))),
                p("encoder.modality.image"));

  if (n_txt > 0) {
    std::vector<int> ids;
    Matrix<S> tpos(n_txt, cfg.d);
    Index t = 0;
    for (std::size_t i = 0; i < in.size(); ++i)
      for (int pos : plans[i].text_pos) {
        const int id = in[i].tokens->ids[static_cast<std::size_t>(pos)];
        if (id < 0 || id >= cfg.vocab_size)
          throw ShapeError("encoder: token id " + std::to_string(id) + " outside vocabulary of " +
                           std::to_string(cfg.vocab_size));
        ids.push_back(id);
        tpos.row(t++) = pos1.row(pos);
      }
    e.text = add(add(embedding_lookup(p("encoder.tok_embed"), std::span<const int>(ids)), tape.constant(std::move(tpos))),
                 p("encoder.modality.text"));
  }
  return e;
}

// Interleaves image and text rows so each input's tokens are contiguous.
template <typename S>
Tensor<S> interleave(const Embedded<S>& e) {
  if (!e.text) return e.image;
  const Index n_img = e.image.rows();
  if (e.image_rows.size() == 1) return concat({e.image, *e.text}, 0);
  std::vector<int> order;
  Index ib = 0, tb = 0;
  for (std::size_t i = 0; i < e.image_rows.size(); ++i) {
    for (Index k = 0; k < e.image_rows[i]; ++k) order.push_back(static_cast<int>(ib + k));
    for (Index k = 0; k < e.text_rows[i]; ++k) order.push_back(static_cast<int>(n_img + tb + k));
    ib += e.image_rows[i];
    tb += e.text_rows[i];
  }
  return embedding_lookup(concat({e.image, *e.text}, 0), std::span<const int>(order));
}

template <typename S>
Matrix<S> padding_mask(Index len, Index valid) {
  Matrix<S> m = Matrix<S>::Zero(len, len);
  for (Index q = 0; q < len; ++q)
    for (Index k = valid; k < len; ++k)
      if (k != q) m(q, k) = static_cast<S>(nn::kMaskedScore);
  for (Index q = valid; q < len; ++q)
    for (Index k = 0; k < valid; ++k) m(q, k) = static_cast<S>(nn::kMaskedScore);
  return m;
}

// Runs every block; returns per-layer pooled features over `pool` ranges and
// the final hidden rows.
template <typename S>
std::pair<std::vector<Tensor<S>>, Tensor<S>> run_blocks(const nn::Binder<S>& p, const EncoderConfig& cfg,
                                                        Tensor<S> x, const std::vector<nn::Segment<S>>& segs,
                                                        const std::vector<std::pair<Index, Index>>& pool) {
  std::vector<Tensor<S>> pooled;
  for (int l = 0; l < cfg.depth; ++l) {
    x = nn::block(p, "encoder.blocks." + std::to_string(l), x, segs, cfg.heads);
    pooled.push_back(nn::segment_mean(x, pool));
  }
  return {pooled, x};
}

}  // namespace detail

template <typename S>
FeatureStack<S> encode(Tape<S>& tape, const ParamStore<S>& params, const EncoderConfig& cfg,
                       std::span<const EncoderInput<S>> in, const EncodeOptions& opt = {}) {
  if (in.empty()) throw ShapeError("encode: no inputs");
  const nn::Binder<S> p{tape, params, opt.trainable};
  const bool keep_pad = opt.materialize_padding && cfg.fusion == Fusion::kJoint;
  std::vector<detail::TokenPlan> plans;
  for (const auto& x : in) plans.push_back(detail::full_plan(cfg, *x.tokens, keep_pad));
  auto e = detail::embed(p, cfg, in, plans);
  const Index L = cfg.patches();
  FeatureStack<S> out;

  if (cfg.fusion == Fusion::kJoint) {
    std::vector<nn::Segment<S>> segs;
    std::vector<std::pair<Index, Index>> pool;
    Index start = 0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Index len = L + e.text_rows[i];
      const Index valid = L + plans[i].valid_text;
      nn::Segment<S> s{start, len, {}};
      if (keep_pad && valid < len) s.mask = detail::padding_mask<S>(len, valid);
      segs.push_back(std::move(s));
      pool.emplace_back(start, valid);
      start += len;
    }
    out.layers = detail::run_blocks(p, cfg, detail::interleave(e), segs, pool).first;
  } else if (cfg.fusion == Fusion::kConcat) {
    // Image-only and text-only passes through the same blocks, stacked as
    // separate segments; per layer, pooled text is projected and added.
    std::vector<nn::Segment<S>> segs;
    std::vector<std::pair<Index, Index>> img_pool, txt_pool;
    Index start = 0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      segs.push_back({start, L, {}});
      img_pool.emplace_back(start, L);
      start += L;
    }
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (e.text_rows[i] > 0) segs.push_back({start, e.text_rows[i], {}});
      txt_pool.emplace_back(start, e.text_rows[i]);
      start += e.text_rows[i];
    }
    Tensor<S> x = e.text ? concat({e.image, *e.text}, 0) : e.image;
    for (int l = 0; l < cfg.depth; ++l) {
      x = nn::block(p, "encoder.blocks." + std::to_string(l), x, segs, cfg.heads);
      auto img = nn::segment_mean(x, img_pool);
      if (e.text) {
        auto txt = nn::segment_mean(x, txt_pool);
        img = add(img, matmul(txt, p("encoder.concat." + std::to_string(l) + ".w")));
      }
      out.layers.push_back(img);
    }
  } else {
    // FiLM: image tokens only; a text summary scales and shifts each block's output.
    std::vector<nn::Segment<S>> segs;
    std::vector<std::pair<Index, Index>> pool, txt_pool;
    std::vector<int> owner;
    Index start = 0, tstart = 0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      segs.push_back({start, L, {}});
      pool.emplace_back(start, L);
      start += L;
      txt_pool.emplace_back(tstart, e.text_rows[i]);
      tstart += e.text_rows[i];
      for (Index k = 0; k < L; ++k) owner.push_back(static_cast<int>(i));
    }
    Tensor<S> summary = e.text ? nn::segment_mean(*e.text, txt_pool)
                               : tape.constant(Matrix<S>::Zero(static_cast<Index>(in.size()), cfg.d));
    auto one = tape.constant(Matrix<S>::Ones(1, 1));
    Tensor<S> x = e.image;
    for (int l = 0; l < cfg.depth; ++l) {
      const std::string n = "encoder.film." + std::to_string(l);
      x = nn::block(p, "encoder.blocks." + std::to_string(l), x, segs, cfg.heads);
      auto gamma = add(add(matmul(summary, p(n + ".gamma.w")), p(n + ".gamma.b")), one);
      auto beta = add(matmul(summary, p(n + ".beta.w")), p(n + ".beta.b"));
      x = add(multiply(x, embedding_lookup(gamma, std::span<const int>(owner))),
              embedding_lookup(beta, std::span<const int>(owner)));
      out.layers.push_back(nn::segment_mean(x, pool));
    }
  }
  out.final = out.layers.back();
  return out;
}

template <typename S>
Tensor<S> multiscale(const FeatureStack<S>& stack, Selection sel) {
  const int L = static_cast<int>(stack.layers.size());
  auto cat = [&](int from, int to) {
    if (to - from == 1) return stack.layers[static_cast<std::size_t>(from)];
    std::vector<Tensor<S>> xs(stack.layers.begin() + from, stack.layers.begin() + to);
    return concat<S>(std::span<const Tensor<S>>(xs), 1);
  };
  switch (sel) {
    case Selection::kLast: return stack.final;
    case Selection::kSecondToLast:
      if (L < 2) throw ConfigError("second_to_last needs an encoder with at least two blocks");
      return stack.layers[static_cast<std::size_t>(L - 2)];
    case Selection::kConcatLastHalf: return cat(L / 2, L);
    case Selection::kConcatFirstHalf: return cat(0, std::max(1, L / 2));
    case Selection::kConcatAll: return cat(0, L);
  }
  throw ConfigError("unknown feature selection");
}

// Masked-autoencoder pretraining.

struct MaeConfig {
  double image_mask_ratio = 0.75;
  double text_mask_ratio = 0.75;
  double text_weight = 0.5;
  int decoder_depth = 2;
};

struct MaeMask {
  std::vector<int> visible_patches, masked_patches;
  std::vector<int> visible_text, masked_text;  // positions < true_length
};

// Uniformly masks floor(ratio * n) of each modality, keeping at least one
// visible token per modality whenever that modality is non-empty.
MaeMask make_mae_mask(int patches, int true_length, std::uint64_t seed, const MaeConfig& cfg);

template <typename S>
void init_mae(ParamStore<S>& store, const EncoderConfig& cfg, const MaeConfig& mae, std::uint64_t seed) {
  nn::Initializer<S> init(store, seed);
  init.linear("mae.decoder_embed", cfg.d, cfg.d);
  init.normal("mae.mask_token", 1, cfg.d, 0.02);
  init.normal("mae.modality", 2, cfg.d, 0.02);
  for (int l = 0; l < mae.decoder_depth; ++l) init.block("mae.blocks." + std::to_string(l), cfg.d, cfg.mlp_ratio);
  init.layer_norm("mae.ln", cfg.d);
  init.linear("mae.image_head", cfg.d, cfg.patch_dim());
  init.linear("mae.text_head", cfg.d, cfg.vocab_size);
}

template <typename S>
struct MaeItem {
  const Matrix<S>* patches = nullptr;
  const text::TokenSeq* tokens = nullptr;
  MaeMask mask;
};

template <typename S>
struct MaeLoss {
  Tensor<S> total;
  S pixel = 0;
  S text = 0;
};

// Per-patch standardised pixels: the reconstruction target.
template <typename S>
Matrix<S> normalized_patches(const Matrix<S>& patches) {
  Matrix<S> out = patches;
  for (Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const S mu = row.mean();
    row.array() -= mu;
    const S var = row.squaredNorm() / static_cast<S>(row.size());
    row /= std::sqrt(var + static_cast<S>(1e-6));
  }
  return out;
}

template <typename S>
MaeLoss<S> mae_pretrain_loss(Tape<S>& tape, const ParamStore<S>& params, const EncoderConfig& cfg, const MaeConfig& mae,
                             std::span<const MaeItem<S>> items) {
  if (cfg.fusion != Fusion::kJoint) throw ConfigError("masked-autoencoder pretraining uses the joint encoder");
  if (items.empty()) throw ShapeError("mae_pretrain_loss: empty batch");
  const nn::Binder<S> p{tape, params, true};

  // Encoder over visible tokens only.
  std::vector<detail::TokenPlan> plans;
  std::vector<EncoderInput<S>> in;
  for (const auto& it : items) {
    detail::TokenPlan pl;
    pl.patch_ids = it.mask.visible_patches;
    pl.text_pos = it.mask.visible_text;
    pl.valid_text = static_cast<int>(pl.text_pos.size());
    plans.push_back(std::move(pl));
    in.push_back({it.patches, it.tokens});
  }
  auto e = detail::embed(p, cfg, std::span<const EncoderInput<S>>(in), plans);
  std::vector<nn::Segment<S>> segs;
  std::vector<std::pair<Index, Index>> pool;
  Index start = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Index len = e.image_rows[i] + e.text_rows[i];
    segs.push_back({start, len, {}});
    pool.emplace_back(start, len);
    start += len;
  }
  auto hidden = detail::run_blocks(p, cfg, detail::interleave(e), segs, pool).second;

  // Decoder over the full sequence with mask tokens in the masked slots.
  auto source = concat({nn::linear(p, "mae.decoder_embed", hidden), p("mae.mask_token")}, 0);
  const int mask_row = static_cast<int>(hidden.rows());
  const Matrix<S> pos2 = positions_2d<S>(cfg.grid(), cfg.d);
  const Matrix<S> pos1 = text::positions_1d<S>(cfg.n_max, cfg.d);
  std::vector<int> gather, modality;
  std::vector<Matrix<S>> pos_rows;
  std::vector<nn::Segment<S>> dsegs;
  std::vector<int> img_rows, txt_rows, txt_targets;
  std::vector<Matrix<S>> img_targets;
  Index vis_base = 0, drow = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& m = items[i].mask;
    const int n_text = items[i].tokens->true_length;
    const Index len = cfg.patches() + n_text;
    dsegs.push_back({drow, len, {}});
    // Visible rows sit in the encoder output as [visible patches..., visible text...].
    std::vector<int> where_patch(static_cast<std::size_t>(cfg.patches()), -1), where_text(static_cast<std::size_t>(n_text), -1);
    for (std::size_t k = 0; k < m.visible_patches.size(); ++k)
      where_patch[static_cast<std::size_t>(m.visible_patches[k])] = static_cast<int>(vis_base + static_cast<Index>(k));
    for (std::size_t k = 0; k < m.visible_text.size(); ++k)
      where_text[static_cast<std::size_t>(m.visible_text[k])] =
          static_cast<int>(vis_base + static_cast<Index>(m.visible_patches.size() + k));
    const Matrix<S> target = normalized_patches(*items[i].patches);
    for (int q = 0; q < cfg.patches(); ++q) {
      const int w = where_patch[static_cast<std::size_t>(q)];
      gather.push_back(w >= 0 ? w : mask_row);
      modality.push_back(0);
      pos_rows.push_back(pos2.row(q));
      if (w < 0) {
        img_rows.push_back(static_cast<int>(drow + q));
        img_targets.push_back(target.row(q));
      }
    }
    for (int q = 0; q < n_text; ++q) {
      const int w = where_text[static_cast<std::size_t>(q)];
      gather.push_back(w >= 0 ? w : mask_row);
      modality.push_back(1);
      pos_rows.push_back(pos1.row(q));
      if (w < 0) {
        txt_rows.push_back(static_cast<int>(drow + cfg.patches() + q));
        txt_targets.push_back(items[i].tokens->ids[static_cast<std::size_t>(q)]);
      }
    }
    vis_base += static_cast<Index>(m.visible_patches.size() + m.visible_text.size());
    drow += len;
  }
  Matrix<S> pos(drow, cfg.d);
  for (Index r = 0; r < drow; ++r) pos.row(r) = pos_rows[static_cast<std::size_t>(r)];
  auto x = add(add(embedding_lookup(source, std::span<const int>(gather)), tape.constant(std::move(pos))),
               embedding_lookup(p("mae.modality"), std::span<const int>(modality)));
  for (int l = 0; l < mae.decoder_depth; ++l) x = nn::block(p, "mae.blocks." + std::to_string(l), x, dsegs, cfg.heads);
  x = nn::layer_norm(p, "mae.ln", x);

  MaeLoss<S> out;
  std::optional<Tensor<S>> total;
  if (!img_rows.empty()) {
    Matrix<S> tgt(static_cast<Index>(img_targets.size()), cfg.patch_dim());
    for (std::size_t k = 0; k < img_targets.size(); ++k) tgt.row(static_cast<Index>(k)) = img_targets[k];
    auto pred = nn::linear(p, "mae.image_head", embedding_lookup(x, std::span<const int>(img_rows)));
    auto pix = mse(pred, tape.constant(std::move(tgt)));
    out.pixel = pix.value()(0, 0);
    total = pix;
  }
  if (!txt_rows.empty()) {
    auto logits = nn::linear(p, "mae.text_head", embedding_lookup(x, std::span<const int>(txt_rows)));
    auto ce = cross_entropy(logits, std::span<const int>(txt_targets));
    out.text = ce.value()(0, 0);
    auto weighted = scale(ce, static_cast<S>(mae.text_weight));
    total = total ? add(*total, weighted) : weighted;
  }
  // Nothing masked: the objective is identically zero.
  out.total = total ? *total : mean(scale(x, S(0)));
  return out;
}

}  // namespace itrl::model
