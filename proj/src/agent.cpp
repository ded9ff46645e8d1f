#include "itrl/agent.hpp"

#include <sstream>

namespace itrl::model {

AgentSpec make_agent_spec(const EncoderConfig& encoder, PolicyConfig policy, Selection selection, bool instructions) {
  encoder.validate();
  if (selection == Selection::kSecondToLast && encoder.depth < 2)
    throw ConfigError("second_to_last needs an encoder with at least two blocks");
  policy.feature_dim = selection_layers(selection, encoder.depth) * encoder.d;
  policy.validate();
  return {encoder, policy, selection, instructions};
}

Agent::Agent(AgentSpec spec, text::Vocabulary vocab, std::uint64_t seed) : spec_(std::move(spec)), vocab_(std::move(vocab)) {
  if (static_cast<int>(vocab_.size()) != spec_.encoder.vocab_size)
    throw ConfigError("agent: vocabulary has " + std::to_string(vocab_.size()) + " tokens but encoder expects " +
                      std::to_string(spec_.encoder.vocab_size));
  if (spec_.policy.feature_dim != selection_layers(spec_.selection, spec_.encoder.depth) * spec_.encoder.d)
    throw ConfigError("agent: policy feature width does not match the encoder and feature selection");
  init_encoder(params_, spec_.encoder, bw::mix_seed(seed, 1));
  init_policy(params_, spec_.policy, bw::mix_seed(seed, 2));
}

text::TokenSeq Agent::tokens(const std::string& instruction) const {
  if (!spec_.instructions) return text::blank(spec_.encoder.n_max);
  return text::encode(instruction, vocab_, spec_.encoder.n_max);
}

void Agent::load_encoder(const std::filesystem::path& path) {
  const auto data = read_checkpoint(path);
  auto theirs = EncoderConfig::from_header(data.header);
  auto ours = spec_.encoder;
  // Fusion only changes which extra tensors exist; shared tensors load by name.
  theirs.fusion = ours.fusion;
  theirs.preset = ours.preset;
  if (!(theirs == ours))
    throw ConfigError("encoder checkpoint " + path.string() + " has a different architecture (d=" +
                      header_string(data.header, "encoder.d") + ", depth=" + header_string(data.header, "encoder.depth") +
                      ") than this agent (d=" + std::to_string(ours.d) + ", depth=" + std::to_string(ours.depth) + ")");
  if (data.header.count("vocab") && !(vocab_from_header(data.header) == vocab_))
    throw ConfigError("encoder checkpoint " + path.string() + " was trained with a different vocabulary");
  // Fusion-specific tensors the checkpoint lacks keep their initial values.
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_.at(i);
    if (p.name.rfind("encoder.", 0) != 0) continue;
    const MatrixF* src = data.find(p.name);
    if (!src) {
      if (p.name.rfind("encoder.concat.", 0) == 0 || p.name.rfind("encoder.film.", 0) == 0) continue;
      throw ShapeError("encoder checkpoint " + path.string() + " is missing '" + p.name + "'");
    }
    if (shape_of(*src) != shape_of(p.value))
      throw ShapeError("parameter '" + p.name + "': checkpoint shape " + shape_of(*src).str() + " but expected " +
                       shape_of(p.value).str());
    p.value = *src;
  }
}

void vocab_to_header(const text::Vocabulary& vocab, Header& h) {
  std::string joined;
  for (const auto& t : vocab.tokens()) joined += (joined.empty() ? "" : " ") + t;
  h["vocab"] = joined;
}

text::Vocabulary vocab_from_header(const Header& h) {
  std::istringstream is(header_string(h, "vocab"));
  std::vector<std::string> tokens;
  for (std::string t; is >> t;) tokens.push_back(t);
  return text::Vocabulary(std::move(tokens));
}

Header Agent::header() const {
  Header h;
  h["kind"] = "agent";
  spec_.encoder.to_header(h);
  spec_.policy.to_header(h);
  h["agent.selection"] = std::string(selection_name(spec_.selection));
  h["agent.instructions"] = spec_.instructions ? "on" : "off";
  vocab_to_header(vocab_, h);
  return h;
}

void Agent::save(const std::filesystem::path& path, const AdamWState<float>* optimizer) const {
  save_checkpoint(path, header(), params_, optimizer);
}

Agent Agent::load(const std::filesystem::path& path, AdamWState<float>* optimizer) {
  const auto data = read_checkpoint(path);
  if (data.header.count("kind") == 0 || data.header.at("kind") != "agent")
    throw ConfigError("checkpoint " + path.string() + " is not an agent checkpoint");
  AgentSpec spec;
  spec.encoder = EncoderConfig::from_header(data.header);
  spec.policy = PolicyConfig::from_header(data.header);
  spec.selection = parse_selection(header_string(data.header, "agent.selection"));
  const std::string& inst = header_string(data.header, "agent.instructions");
  if (inst != "on" && inst != "off") throw IoError("checkpoint header 'agent.instructions' must be on or off");
  spec.instructions = inst == "on";
  Agent a(spec, vocab_from_header(data.header), 0);
  load_parameters(data, a.params_);
  if (optimizer) *optimizer = load_optimizer(data, a.params_);
  return a;
}

std::unique_ptr<bool[]> Agent::trainable_mask(bool freeze_encoder) const {
  auto mask = std::make_unique<bool[]>(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i)
    mask[i] = !(freeze_encoder && params_.at(i).name.rfind("encoder.", 0) == 0);
  return mask;
}

}  // namespace itrl::model
