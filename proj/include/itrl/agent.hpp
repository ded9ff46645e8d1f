#pragma once

// A trained instruction-following agent: encoder and policy configs, the
// feature selection between them, the vocabulary and all parameters. Saved
// as one checkpoint whose header carries everything but the tensors.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "itrl/checkpoint.hpp"
#include "itrl/encoder.hpp"
#include "itrl/policy.hpp"
#include "itrl/text.hpp"

namespace itrl::model {

struct AgentSpec {
  EncoderConfig encoder;
  PolicyConfig policy;
  Selection selection = Selection::kConcatAll;
  bool instructions = true;  // false: every instruction is replaced by an all-<pad> sequence
};

// Derives the policy feature width from the encoder and selection.
AgentSpec make_agent_spec(const EncoderConfig& encoder, PolicyConfig policy, Selection selection, bool instructions);

class Agent {
 public:
  Agent() = default;
  Agent(AgentSpec spec, text::Vocabulary vocab, std::uint64_t seed);

  const AgentSpec& spec() const { return spec_; }
  const text::Vocabulary& vocab() const { return vocab_; }
  ParamStore<float>& params() { return params_; }
  const ParamStore<float>& params() const { return params_; }

  // Tokens the encoder sees for an instruction under this agent's settings.
  text::TokenSeq tokens(const std::string& instruction) const;

  // Copies every encoder.* tensor from an encoder or agent checkpoint. The
  // checkpoint's encoder config must match this agent's.
  void load_encoder(const std::filesystem::path& path);

  Header header() const;
  void save(const std::filesystem::path& path, const AdamWState<float>* optimizer = nullptr) const;
  static Agent load(const std::filesystem::path& path, AdamWState<float>* optimizer = nullptr);

  // One flag per parameter, in store order; encoder.* tensors are frozen on request.
  std::unique_ptr<bool[]> trainable_mask(bool freeze_encoder) const;

 private:
  AgentSpec spec_;
  text::Vocabulary vocab_;
  ParamStore<float> params_;
};

// Multi-scale features for a batch of encoder inputs: [N x feature_dim].
template <typename S>
Tensor<S> agent_features(Tape<S>& tape, const ParamStore<S>& params, const AgentSpec& spec,
                         std::span<const EncoderInput<S>> inputs, bool trainable = true) {
  return multiscale(encode(tape, params, spec.encoder, inputs, EncodeOptions{.trainable = trainable}), spec.selection);
}

// Vocabulary stored in a checkpoint header under "vocab".
void vocab_to_header(const text::Vocabulary& vocab, Header& h);
text::Vocabulary vocab_from_header(const Header& h);

}  // namespace itrl::model
