#include "itrl/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <functional>
#include <memory>
#include <ostream>
#include <sstream>

#include "itrl/eval.hpp"
#include "itrl/render.hpp"

namespace itrl::cli {

namespace {

namespace fs = std::filesystem;

class UsageError : public Error {
 public:
  using Error::Error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!trim(item).empty()) out.push_back(trim(item));
  return out;
}

template <typename T>
std::string to_text(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else {
    std::ostringstream os;
    os << v;
    return os.str();
  }
}

// One verb: its CLI11 subcommand plus the resolved values to echo.
class Verb {
 public:
  Verb(CLI::App& app, const std::string& name, const std::string& about) : sub_(app.add_subcommand(name, about)) {}

  template <typename T>
  CLI::Option* option(const std::string& key, T& value, const std::string& about) {
    echo_.emplace_back(key, [&value] { return to_text(value); });
    return sub_->add_option("--" + key, value, about);
  }

  CLI::Option* flag(const std::string& key, bool& value, const std::string& about) {
    echo_.emplace_back(key, [&value] { return to_text(value); });
    return sub_->add_flag("--" + key, value, about);
  }

  CLI::App* app() const { return sub_; }
  std::string name() const { return sub_->get_name(); }

  void echo(std::ostream& os) const {
    os << "# resolved configuration: " << name() << "\n";
    for (const auto& [k, f] : echo_) os << k << "=" << f() << "\n";
    os.flush();
  }

 private:
  CLI::App* sub_;
  std::vector<std::pair<std::string, std::function<std::string()>>> echo_;
};

struct Common {
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
  int workers = 1;
  bool deterministic = true;
};

void add_common(Verb& v, Common& c, bool out_required) {
  v.option("seed", c.seed, "Seed for every random stream");
  auto* o = v.option("out", c.out, "Output path");
  if (out_required) o->required();
  // Consumed before parsing; registered so it shows in --help and is accepted.
  v.app()->add_option("--config", c.config, "key=value file; command-line keys override it");
  v.option("workers", c.workers, "Worker threads for data generation and evaluation")->check(CLI::PositiveNumber);
  v.option("deterministic", c.deterministic, "Seed-derived batches independent of worker timing");
}

struct ModelOptions {
  std::string preset = "small";
  std::string fusion = "joint";
  int context = 4;
  std::string features = "concat_all";
  std::string instructions = "on";
  std::string encoder;  // pretrained encoder checkpoint; empty: scratch
  int policy_d = 64;
  int policy_depth = 2;
  int policy_heads = 4;
};

void add_model(Verb& v, ModelOptions& m) {
  v.option("preset", m.preset, "Encoder size")->check(CLI::IsMember({"tiny", "small", "medium", "large"}));
  v.option("fusion", m.fusion, "Vision-language fusion")->check(CLI::IsMember({"joint", "concat", "film"}));
  v.option("context", m.context, "Policy history length")->check(CLI::PositiveNumber);
  v.option("features", m.features, "Encoder layers fed to the policy")
      ->check(CLI::IsMember({"last", "second_to_last", "concat_last_half", "concat_first_half", "concat_all"}));
  v.option("instructions", m.instructions, "Feed instructions to the encoder")->check(CLI::IsMember({"on", "off"}));
  v.option("encoder", m.encoder, "Pretrained encoder checkpoint (empty: train from scratch)");
  v.option("policy-d", m.policy_d, "Policy width")->check(CLI::PositiveNumber);
  v.option("policy-depth", m.policy_depth, "Policy blocks")->check(CLI::PositiveNumber);
  v.option("policy-heads", m.policy_heads, "Policy attention heads")->check(CLI::PositiveNumber);
}

model::PolicyConfig policy_config(const ModelOptions& m) {
  model::PolicyConfig p;
  p.d = m.policy_d;
  p.depth = m.policy_depth;
  p.heads = m.policy_heads;
  p.context = m.context;
  return p;
}

void add_train(Verb& v, train::TrainConfig& t, int default_iterations) {
  t.iterations = default_iterations;
  v.option("iterations", t.iterations, "Optimizer steps")->check(CLI::PositiveNumber);
  v.option("batch", t.batch, "Windows per step")->check(CLI::PositiveNumber);
  v.option("lr", t.lr, "Learning rate after warmup");
  v.option("weight-decay", t.weight_decay, "AdamW weight decay");
  v.option("warmup", t.warmup, "Linear warmup steps");
  v.option("jitter", t.jitter, "RGB jitter magnitude");
  v.flag("freeze-encoder", t.freeze_encoder, "Keep encoder weights fixed");
  v.option("checkpoint-every", t.checkpoint_every, "Steps between checkpoints (0: only the final one)");
  v.option("log-every", t.log_every, "Steps between metrics rows")->check(CLI::PositiveNumber);
}

void add_eval(Verb& v, eval::EvalConfig& e, std::string& tasks, std::string& split, std::string& style) {
  v.option("episodes", e.episodes, "Episodes per seed and task")->check(CLI::PositiveNumber);
  v.option("seeds", e.seeds, "Evaluation seeds")->check(CLI::PositiveNumber);
  v.option("tasks", tasks, "Comma-separated tasks (empty: all in the dataset)");
  v.option("split", split, "Instruction split")->check(CLI::IsMember({"seen", "unseen"}));
  v.option("style", style, "Instruction style")->check(CLI::IsMember({"default", "long", "none"}));
  v.option("holdout", e.holdout, "Unseen split only: restrict to one holdout label");
}

std::vector<bw::TaskKind> parse_tasks(const std::string& list) {
  std::vector<bw::TaskKind> out;
  for (const auto& t : split_list(list)) out.push_back(bw::parse_task(t));
  return out;
}

int parse_color(const std::string& s) {
  for (int c = 0; c < bw::kPaletteSize; ++c)
    if (bw::color_name(c) == s || std::to_string(c) == s) return c;
  throw ConfigError("unknown colour '" + s + "'");
}

void finish_eval_config(eval::EvalConfig& e, const Common& c, const std::string& tasks, const std::string& split,
                        const std::string& style) {
  e.tasks = parse_tasks(tasks);
  e.split = eval::parse_split(split);
  e.style = eval::parse_style(style);
  e.seed = c.seed;
  e.workers = c.workers;
}

text::Vocabulary dataset_vocab(const fs::path& data) {
  if (!fs::exists(data / "vocab.txt")) throw IoError("dataset " + data.string() + " has no vocab.txt");
  return text::Vocabulary::load(data / "vocab.txt");
}

text::Vocabulary grammar_vocab() {
  const auto sentences = bw::grammar_corpus();
  return text::build_vocab(std::span<const std::string>(sentences));
}

// Reads key=value lines; '#' starts a comment line.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot read config file '" + path + "'");
  std::vector<std::pair<std::string, std::string>> out;
  int n = 0;
  for (std::string line; std::getline(is, line);) {
    ++n;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty())
      throw UsageError("config file '" + path + "' line " + std::to_string(n) + ": expected key=value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

std::string find_config_path(const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config needs a file path");
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    }
  }
  return path;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Instruction-following manipulation agents on a toy block world", "itrl"};
  app.require_subcommand(1, 1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  // gen-data
  Common gd_c;
  std::string gd_tasks = "reach_target", gd_style = "default", gd_push_colors, gd_held_out_color;
  int gd_episodes = 100, gd_per_variation = 0, gd_holdout = 0;
  Verb gen_data(app, "gen-data", "Roll out scripted experts into an episode dataset");
  add_common(gen_data, gd_c, true);
  gen_data.option("tasks", gd_tasks, "Comma-separated tasks");
  gen_data.option("episodes", gd_episodes, "Episodes per task, spread over seen variations")->check(CLI::PositiveNumber);
  gen_data.option("episodes-per-variation", gd_per_variation, "Episodes per seen variation (overrides --episodes)");
  gen_data.option("style", gd_style, "Instruction style")->check(CLI::IsMember({"default", "long"}));
  gen_data.option("push-colors", gd_push_colors, "PushButtons: restrict orderings to these colours (comma list)");
  gen_data.option("holdout-orderings", gd_holdout, "PushButtons: orderings held out as unseen");
  gen_data.option("held-out-color", gd_held_out_color, "PushButtons: colour held out as unseen");

  // gen-pretrain-corpus
  Common gc_c;
  int gc_count = 2000;
  Verb gen_corpus(app, "gen-pretrain-corpus", "Render scene/caption pairs for encoder pretraining");
  add_common(gen_corpus, gc_c, true);
  gen_corpus.option("count", gc_count, "Image/caption pairs")->check(CLI::PositiveNumber);

  // pretrain
  Common pt_c;
  std::string pt_corpus, pt_preset = "small";
  model::MaeConfig pt_mae;
  train::TrainConfig pt_train;
  Verb pretrain(app, "pretrain", "Masked-autoencoder pretraining of the joint encoder");
  add_common(pretrain, pt_c, true);
  pretrain.option("corpus", pt_corpus, "Caption corpus file")->required();
  pretrain.option("preset", pt_preset, "Encoder size")->check(CLI::IsMember({"tiny", "small", "medium", "large"}));
  pretrain.option("image-mask-ratio", pt_mae.image_mask_ratio, "Fraction of patches masked");
  pretrain.option("text-mask-ratio", pt_mae.text_mask_ratio, "Fraction of text tokens masked");
  pretrain.option("text-weight", pt_mae.text_weight, "Weight of the text reconstruction loss");
  pretrain.option("decoder-depth", pt_mae.decoder_depth, "Decoder blocks")->check(CLI::PositiveNumber);
  add_train(pretrain, pt_train, 2000);

  // train
  Common tr_c;
  std::string tr_data;
  ModelOptions tr_model;
  train::TrainConfig tr_train;
  Verb train_verb(app, "train", "Behaviour cloning on a dataset");
  add_common(train_verb, tr_c, true);
  train_verb.option("data", tr_data, "Dataset directory")->required();
  add_model(train_verb, tr_model);
  add_train(train_verb, tr_train, 10000);

  // eval
  Common ev_c;
  std::string ev_data, ev_checkpoint, ev_controller = "learned", ev_tasks, ev_split = "seen", ev_style = "default";
  eval::EvalConfig ev_cfg;
  Verb eval_verb(app, "eval", "Closed-loop evaluation of a checkpoint or a reference controller");
  add_common(eval_verb, ev_c, false);
  eval_verb.option("data", ev_data, "Dataset directory whose manifest defines the splits")->required();
  eval_verb.option("checkpoint", ev_checkpoint, "Agent checkpoint (learned controller)");
  eval_verb.option("controller", ev_controller, "Controller")
      ->check(CLI::IsMember({"learned", "expert", "random", "random-objects"}));
  add_eval(eval_verb, ev_cfg, ev_tasks, ev_split, ev_style);

  // ablate
  Common ab_c;
  std::string ab_data, ab_axes = "fusion,context,features,instructions,preset", ab_tasks, ab_split = "seen",
                       ab_style = "default";
  ModelOptions ab_model;
  train::TrainConfig ab_train;
  eval::EvalConfig ab_eval;
  Verb ablate(app, "ablate", "Train and evaluate one model per ablation cell");
  add_common(ablate, ab_c, true);
  ablate.option("data", ab_data, "Dataset directory")->required();
  ablate.option("axes", ab_axes, "Comma-separated axes: fusion, context, features, instructions, encoder_init, preset");
  add_model(ablate, ab_model);
  add_train(ablate, ab_train, 10000);
  add_eval(ablate, ab_eval, ab_tasks, ab_split, ab_style);

  // render
  Common rd_c;
  std::string rd_data, rd_file;
  int rd_episode = 0;
  Verb render(app, "render", "Dump one PPM per camera per step of a dataset episode");
  add_common(render, rd_c, true);
  render.option("data", rd_data, "Dataset directory");
  render.option("episode", rd_episode, "Episode index in the manifest")->check(CLI::NonNegativeNumber);
  render.option("episode-file", rd_file, "Episode file (instead of --data/--episode)");

  const std::vector<Verb*> verbs = {&gen_data, &gen_corpus, &pretrain, &train_verb, &eval_verb, &ablate, &render};

  try {
    // Config-file entries go first so explicit arguments, parsed later, win.
    std::vector<std::string> argv = {"itrl"};
    if (!args.empty()) argv.push_back(args[0]);
    const std::string config = find_config_path(args);
    if (!config.empty()) {
      const Verb* verb = nullptr;
      for (const Verb* v : verbs)
        if (!args.empty() && v->name() == args[0]) verb = v;
      if (!verb) throw UsageError("--config needs a verb before it");
      for (const auto& [k, v] : read_config_file(config)) {
        if (k == "config" || !verb->app()->get_option_no_throw("--" + k))
          throw UsageError("config file '" + config + "': unknown key '" + k + "' for " + verb->name());
        argv.push_back("--" + k + "=" + v);
      }
    }
    argv.insert(argv.end(), args.begin() + (args.empty() ? 0 : 1), args.end());
    std::vector<char*> cargs;
    for (auto& a : argv) cargs.push_back(a.data());
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "itrl: " << e.what() << "\n";
    err << "run 'itrl --help' or 'itrl <verb> --help' for usage\n";
    return kExitUsageError;
  } catch (const UsageError& e) {
    err << "itrl: " << e.what() << "\n";
    return kExitUsageError;
  }

  const Verb* chosen = nullptr;
  for (const Verb* v : verbs)
    if (v->app()->parsed()) chosen = v;
  chosen->echo(out);
  const std::string verb = chosen->name();

  try {
    if (chosen == &gen_data) {
      bw::DatasetConfig dc;
      for (auto task : parse_tasks(gd_tasks)) {
        if (task == bw::TaskKind::kPushButtons && !gd_push_colors.empty()) {
          std::vector<int> colors;
          for (const auto& c : split_list(gd_push_colors)) colors.push_back(parse_color(c));
          std::optional<int> held;
          if (!gd_held_out_color.empty()) held = parse_color(gd_held_out_color);
          dc.plans.push_back(bw::push_buttons_plan(colors, gd_holdout, gd_c.seed, held));
        } else {
          if (gd_holdout > 0 || !gd_held_out_color.empty())
            throw ConfigError("holdout-orderings and held-out-color need push_buttons with push-colors");
          dc.plans.push_back(bw::all_variations(task));
        }
      }
      if (dc.plans.empty()) throw ConfigError("no tasks given");
      if (gd_per_variation > 0)
        dc.episodes_per_variation = gd_per_variation;
      else
        dc.episodes_per_task = gd_episodes;
      dc.seed = gd_c.seed;
      dc.style = bw::parse_style(gd_style);
      dc.workers = gd_c.workers;
      const auto m = bw::generate_dataset(dc, gd_c.out, &out);
      out << "wrote " << m.episodes.size() << " episodes and manifest.json to " << gd_c.out << "\n";
    } else if (chosen == &gen_corpus) {
      const auto pairs = bw::make_caption_corpus(gc_count, gc_c.seed, gc_c.workers);
      fs::create_directories(gc_c.out);
      bw::write_corpus(fs::path(gc_c.out) / "corpus.bwcp", pairs);
      out << "wrote " << pairs.size() << " pairs to " << (fs::path(gc_c.out) / "corpus.bwcp").string() << "\n";
    } else if (chosen == &pretrain) {
      const auto corpus = bw::read_corpus(pt_corpus);
      const auto vocab = grammar_vocab();
      train::Pretrainer p(model::encoder_preset(pt_preset, static_cast<int>(vocab.size())), pt_mae, vocab, pt_c.seed);
      pt_train.seed = pt_c.seed;
      pt_train.deterministic = pt_c.deterministic;
      const auto r = train::pretrain_encoder(p, corpus, pt_train, pt_c.out, &out);
      out << "pretrain loss " << r.initial_loss << " -> " << r.final_loss << "; encoder.itrl written to " << pt_c.out
          << "\n";
    } else if (chosen == &train_verb) {
      const auto data = bw::load_dataset(tr_data);
      const auto vocab = dataset_vocab(tr_data);
      auto enc = model::encoder_preset(tr_model.preset, static_cast<int>(vocab.size()));
      enc.fusion = model::parse_fusion(tr_model.fusion);
      const auto spec = model::make_agent_spec(enc, policy_config(tr_model), model::parse_selection(tr_model.features),
                                               tr_model.instructions == "on");
      model::Agent agent(spec, vocab, tr_c.seed);
      if (!tr_model.encoder.empty()) agent.load_encoder(tr_model.encoder);
      tr_train.seed = tr_c.seed;
      tr_train.deterministic = tr_c.deterministic;
      const auto r = train::train_bc(agent, data, tr_train, tr_c.out, &out);
      out << "train loss " << r.initial_loss << " -> " << r.final_loss << "; agent.itrl written to " << tr_c.out << "\n";
    } else if (chosen == &eval_verb) {
      const auto manifest = bw::Manifest::load(fs::path(ev_data) / "manifest.json");
      finish_eval_config(ev_cfg, ev_c, ev_tasks, ev_split, ev_style);
      eval::ResultTable table;
      std::optional<model::Agent> agent;
      if (ev_controller == "learned") {
        if (ev_checkpoint.empty()) throw UsageError("--checkpoint is required for the learned controller");
        agent = model::Agent::load(ev_checkpoint);
        if (fs::exists(fs::path(ev_data) / "vocab.txt") && !(dataset_vocab(ev_data) == agent->vocab()))
          throw ConfigError("checkpoint vocabulary (" + std::to_string(agent->vocab().size()) +
                            " tokens) does not match dataset vocabulary (" +
                            std::to_string(dataset_vocab(ev_data).size()) + " tokens)");
        table = eval::rollout_eval(*agent, manifest, ev_cfg, {{"controller", "learned"}}, &out);
      } else {
        const auto factory = ev_controller == "expert"   ? eval::expert_controller()
                             : ev_controller == "random" ? eval::random_controller(eval::RandomMode::kUniform)
                                                         : eval::random_controller(eval::RandomMode::kObjects);
        table = eval::rollout_eval(factory, manifest, ev_cfg, {{"controller", ev_controller}}, &out);
      }
      out << eval::format_report(table, eval::ReportFormat::kMarkdown);
      if (!ev_c.out.empty()) {
        eval::emit_report(table, eval::ReportFormat::kCsv, fs::path(ev_c.out) / "eval.csv");
        eval::emit_report(table, eval::ReportFormat::kMarkdown, fs::path(ev_c.out) / "eval.md");
      }
    } else if (chosen == &ablate) {
      const auto data = bw::load_dataset(ab_data);
      const auto vocab = dataset_vocab(ab_data);
      eval::AblationMatrix matrix;
      for (const auto& a : split_list(ab_axes)) matrix.axes.push_back(eval::parse_axis(a));
      eval::AblationBase base;
      base.preset = ab_model.preset;
      base.fusion = model::parse_fusion(ab_model.fusion);
      base.context = ab_model.context;
      base.selection = model::parse_selection(ab_model.features);
      base.instructions = ab_model.instructions == "on";
      base.encoder_checkpoint = ab_model.encoder;
      base.policy = policy_config(ab_model);
      base.seed = ab_c.seed;
      ab_train.seed = ab_c.seed;
      ab_train.deterministic = ab_c.deterministic;
      finish_eval_config(ab_eval, ab_c, ab_tasks, ab_split, ab_style);
      const auto table = eval::run_ablation(matrix, base, ab_train, data, vocab, ab_eval, ab_c.out, &out);
      if (table.rows.empty()) throw Error("every ablation cell aborted");
      eval::emit_report(table, eval::ReportFormat::kCsv, fs::path(ab_c.out) / "ablation.csv");
      eval::emit_report(table, eval::ReportFormat::kMarkdown, fs::path(ab_c.out) / "ablation.md");
      out << eval::format_report(table, eval::ReportFormat::kMarkdown);
    } else if (chosen == &render) {
      bw::EpisodeRecord ep;
      if (!rd_file.empty()) {
        ep = bw::read_episode(rd_file);
      } else {
        if (rd_data.empty()) throw UsageError("render needs --data or --episode-file");
        const auto m = bw::Manifest::load(fs::path(rd_data) / "manifest.json");
        if (rd_episode >= static_cast<int>(m.episodes.size()))
          throw ConfigError("episode " + std::to_string(rd_episode) + " out of range (dataset has " +
                            std::to_string(m.episodes.size()) + ")");
        ep = bw::read_episode(fs::path(rd_data) / m.episodes[static_cast<std::size_t>(rd_episode)].file);
      }
      fs::create_directories(rd_c.out);
      int files = 0;
      for (std::size_t s = 0; s < ep.steps.size(); ++s)
        for (auto cam : bw::kAllCameras) {
          std::ostringstream name;
          name << "step" << s << "_" << bw::camera_name(cam) << ".ppm";
          bw::write_ppm(fs::path(rd_c.out) / name.str(), ep.steps[s].obs.images[static_cast<std::size_t>(cam)]);
          ++files;
        }
      out << "wrote " << files << " frames for \"" << ep.instruction << "\" to " << rd_c.out << "\n";
    }
  } catch (const UsageError& e) {
    err << "itrl " << verb << ": " << e.what() << "\n";
    return kExitUsageError;
  } catch (const std::exception& e) {
    err << "itrl " << verb << ": " << e.what() << "\n";
    return kExitDomainError;
  }
  return kExitOk;
}

}  // namespace itrl::cli
