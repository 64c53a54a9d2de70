#include "pdgd/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "pdgd/annotation.hpp"
#include "pdgd/config.hpp"
#include "pdgd/error.hpp"
#include "pdgd/evaluation.hpp"
#include "pdgd/joint.hpp"
#include "pdgd/synthetic.hpp"
#include "pdgd/tokenizer.hpp"

namespace pdgd {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Usage problems detected after parsing (missing settings, bad values).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<long long> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config, "key = value settings file");
  cmd->add_option("--set", args.overrides, "override one setting, key=value (repeatable)");
  cmd->add_option("--seed", args.seed, "random seed");
}

RunConfig make_config(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config.empty()) cfg.merge_file(args.config);
  try {
    for (const auto& o : args.overrides) cfg.set(o);
    if (args.seed) cfg.set("seed", std::to_string(*args.seed));
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

fs::path required_path(const RunConfig& cfg, const std::string& key) {
  if (!cfg.has_value(key)) throw UsageError("setting '" + key + "' is required (use --set " + key + "=PATH)");
  return cfg.get(key);
}

WhitespaceTokenizer corpus_tokenizer(const RunConfig& cfg, const std::vector<Dialogue>& raw) {
  if (cfg.get("tokenizer") != "whitespace")
    throw UsageError("unknown tokenizer '" + cfg.get("tokenizer") + "' (available: whitespace)");
  const auto texts = corpus_texts(raw);
  return WhitespaceTokenizer::build(texts, static_cast<std::size_t>(cfg.get_int("tokenizer.min_count")));
}

WhitespaceTokenizer checkpoint_tokenizer(const Checkpoint& ckpt) {
  return WhitespaceTokenizer::from_vocabulary(ckpt.vocabulary);
}

DAMappingTable mapping_table(const RunConfig& cfg) {
  DAMappingTable table = DAMappingTable::standard();
  if (cfg.has_value("da_mapping")) table.merge(DAMappingTable::from_json_file(cfg.get("da_mapping")));
  return table;
}

void save(const fs::path& path, const Checkpoint& ckpt, std::ostream& out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_checkpoint(path, ckpt);
  out << "wrote " << path.string() << " sha256=" << file_digest(path) << "\n";
}

void save_curve(const fs::path& path, const LossCurve& curve, std::ostream& out) {
  write_loss_csv(path, curve);
  out << "wrote " << path.string() << "\n";
}

struct Models {
  PlannerModel planner;
  GeneratorModel generator;
  WhitespaceTokenizer tokenizer;
};

Models load_models(const fs::path& planner_path, const fs::path& generator_path) {
  const Checkpoint pc = load_checkpoint(planner_path);
  const Checkpoint gc = load_checkpoint(generator_path);
  if (pc.require_meta("tokenizer") != gc.require_meta("tokenizer"))
    throw DataError("planner and generator checkpoints were trained with different tokenizers");
  return Models{PlannerModel::from_checkpoint(pc), GeneratorModel::from_checkpoint(gc), checkpoint_tokenizer(pc)};
}

std::vector<TrainingExample> examples_for(const RunConfig& cfg, const std::vector<Dialogue>& dialogues,
                                          std::ostream& err) {
  auto set = build_examples(dialogues, static_cast<std::size_t>(cfg.get_int("context_window")));
  if (set.skipped_ungrounded > 0)
    err << "warning: skipped " << set.skipped_ungrounded << " ungrounded agent turns\n";
  if (set.examples.empty()) throw DataError("the corpus yields no grounded agent turns");
  return std::move(set.examples);
}

// ---- train --------------------------------------------------------------------

int cmd_train(const std::string& stage, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const fs::path dir = cfg.get("out_dir");
  fs::create_directories(dir);
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed"));

  if (stage == "da-tagger") {
    const auto table = mapping_table(cfg);
    const auto data =
        load_labeled_utterances(required_path(cfg, "corpus.da"), table, static_cast<std::size_t>(cfg.get_int("da_tagger.min_words")));
    std::vector<std::string> texts;
    for (const auto& u : data) texts.push_back(u.text);
    const auto tok = WhitespaceTokenizer::build(texts, static_cast<std::size_t>(cfg.get_int("tokenizer.min_count")));
    auto trained = train_da_tagger(data, tok, cfg.classifier("da_tagger"));
    for (const auto& w : trained.result.warnings) err << "warning: " << w << "\n";
    save(dir / "da_tagger.ckpt", trained.model.to_checkpoint(tok), out);
    save_curve(dir / "da_tagger_loss.csv", trained.result.curve, out);
    return 0;
  }

  const fs::path corpus = required_path(cfg, "corpus.train");
  const auto raw = load_corpus(corpus);
  const auto tok = corpus_tokenizer(cfg, raw);
  auto dialogues = raw;
  for (auto& d : dialogues) tokenize_dialogue(d, tok);

  if (stage == "topic-classifier") {
    auto trained = train_topic_classifier(dialogues, tok, cfg.classifier("topic_classifier"));
    for (const auto& w : trained.result.warnings) err << "warning: " << w << "\n";
    save(dir / "topic_classifier.ckpt", trained.model.to_checkpoint(tok), out);
    save_curve(dir / "topic_classifier_loss.csv", trained.result.curve, out);
    return 0;
  }

  const auto examples = examples_for(cfg, dialogues, err);
  if (stage == "planner") {
    PlannerModel model(static_cast<int>(tok.vocab_size()), cfg.planner(), seed);
    auto result = train_planner(model, examples, cfg.training("planner"));
    save(dir / "planner.ckpt", model.to_checkpoint(tok), out);
    save_curve(dir / "planner_loss.csv", result.curve, out);
    return 0;
  }
  if (stage == "generator") {
    GeneratorModel model(static_cast<int>(tok.vocab_size()), cfg.generator(), seed);
    auto result = train_generator(model, examples, cfg.training("generator"));
    save(dir / "generator.ckpt", model.to_checkpoint(tok), out);
    save_curve(dir / "generator_loss.csv", result.curve, out);
    return 0;
  }
  if (stage == "joint") {
    JointConfig jc;
    try {
      jc = cfg.joint();
    } catch (const ContractError& e) {
      throw UsageError(e.what());
    }
    Models m = load_models(dir / "planner.ckpt", dir / "generator.ckpt");
    if (m.tokenizer.identity() != tok.identity())
      throw DataError("checkpoints in " + dir.string() + " were trained on a different vocabulary");
    auto result = joint_train(m.planner, m.generator, examples, jc);
    save(dir / "joint_planner.ckpt", m.planner.to_checkpoint(tok), out);
    save(dir / "joint_generator.ckpt", m.generator.to_checkpoint(tok), out);
    save_curve(dir / "joint_loss.csv", result.curve, out);
    return 0;
  }
  throw UsageError("unknown stage '" + stage + "'");
}

// ---- annotate -----------------------------------------------------------------

struct AnnotateArgs {
  std::string corpus_in;
  std::string corpus_out;
  std::string mapping;
  std::string da_tagger;
  std::string topic_classifier;
};

int cmd_annotate(const AnnotateArgs& args, std::ostream& out) {
  DAMappingTable table = DAMappingTable::standard();
  if (!args.mapping.empty()) table.merge(DAMappingTable::from_json_file(args.mapping));
  std::optional<ClassifierModel> tagger, topic_model;
  std::optional<WhitespaceTokenizer> tagger_tok, topic_tok;
  if (!args.da_tagger.empty()) {
    const auto ckpt = load_checkpoint(args.da_tagger);
    tagger = ClassifierModel::from_checkpoint(ckpt);
    tagger_tok = checkpoint_tokenizer(ckpt);
  }
  if (!args.topic_classifier.empty()) {
    const auto ckpt = load_checkpoint(args.topic_classifier);
    topic_model = ClassifierModel::from_checkpoint(ckpt);
    topic_tok = checkpoint_tokenizer(ckpt);
  }

  std::ifstream in(args.corpus_in);
  if (!in) throw DataError("cannot open corpus '" + args.corpus_in + "'");
  std::vector<json> records;
  std::string text;
  std::size_t line = 0, tagged_da = 0, rule_topics = 0, tagged_topics = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(text);
    } catch (const json::parse_error& e) {
      throw DataError("line " + std::to_string(line) + ": malformed JSON: " + e.what());
    }
    if (!record.is_object() || !record.contains("turns") || !record["turns"].is_array())
      throw DataError("line " + std::to_string(line) + ": missing array field 'turns'");
    for (auto& turn : record["turns"]) {
      if (!turn.is_object()) throw DataError("line " + std::to_string(line) + ": turn is not an object");
      if (turn.contains("da") && turn["da"].is_string()) {
        try {
          turn["da"] = to_string(table.map(turn["da"].get<std::string>()));
        } catch (const UnmappedLabelError& e) {
          throw DataError("line " + std::to_string(line) + ": " + e.what());
        }
      } else {
        if (!tagger)
          throw DataError("line " + std::to_string(line) + ": a turn has no da label and no DA tagger was given");
        const auto ids = tagger_tok->encode(turn.value("text", ""));
        turn["da"] = to_string(predict_da(*tagger, ids).label);
        ++tagged_da;
      }
    }
    const Dialogue dialogue = dialogue_from_json(record, line);
    const auto rules = annotate_topic_intents(dialogue);
    std::vector<TopicIntent> intents;
    for (std::size_t i = 0; i < dialogue.turns.size(); ++i) {
      const Utterance& u = dialogue.turns[i];
      TopicIntent intent = rules[i];
      if (u.topic_intent) {
        intent = *u.topic_intent;
      } else if (!u.grounding && topic_model) {
        std::vector<std::vector<TokenId>> context;
        std::vector<TopicIntent> context_intents;
        for (std::size_t j = i > 3 ? i - 3 : 0; j < i; ++j) {
          context.push_back(topic_tok->encode(dialogue.turns[j].text));
          context_intents.push_back(intents[j]);
        }
        if (context.empty()) {
          context.push_back(topic_tok->encode(dialogue.initial_topic));
          context_intents.push_back(TopicIntent::kMiningInitial);
        }
        intent = predict_topic_intent(*topic_model, context, context_intents, topic_tok->encode(u.text)).label;
        ++tagged_topics;
      } else {
        ++rule_topics;
      }
      intents.push_back(intent);
      record["turns"][i]["topic_intent"] = to_string(intent);
    }
    records.push_back(std::move(record));
  }
  write_jsonl(args.corpus_out, records);
  out << "annotated " << records.size() << " dialogues: " << tagged_da << " tagged acts, " << rule_topics
      << " rule topic intents, " << tagged_topics << " classified topic intents\n";
  return 0;
}

// ---- evaluate / predict -------------------------------------------------------

struct ModelArgs {
  std::string planner;
  std::string generator;
  std::string corpus;
  std::optional<int> beam;
  std::optional<int> max_new;
};

void add_model_args(CLI::App* cmd, ModelArgs& args) {
  cmd->add_option("--planner", args.planner, "planner checkpoint (default OUT_DIR/planner.ckpt)");
  cmd->add_option("--generator", args.generator, "generator checkpoint (default OUT_DIR/generator.ckpt)");
  cmd->add_option("--corpus", args.corpus, "corpus JSONL (default corpus.eval, else corpus.train)");
  cmd->add_option("--beam", args.beam, "beam size");
  cmd->add_option("--max-new", args.max_new, "maximum generated tokens");
}

struct Loaded {
  Models models;
  std::vector<Dialogue> dialogues;
};

Loaded load_for_inference(RunConfig& cfg, const ModelArgs& args) {
  if (args.beam) cfg.set("beam", std::to_string(*args.beam));
  if (args.max_new) cfg.set("max_new", std::to_string(*args.max_new));
  if (cfg.get_int("beam") < 1) throw UsageError("--beam must be at least 1");
  const fs::path dir = cfg.get("out_dir");
  const fs::path planner = args.planner.empty() ? dir / "planner.ckpt" : fs::path(args.planner);
  const fs::path generator = args.generator.empty() ? dir / "generator.ckpt" : fs::path(args.generator);
  fs::path corpus = args.corpus;
  if (corpus.empty()) corpus = cfg.has_value("corpus.eval") ? fs::path(cfg.get("corpus.eval")) : required_path(cfg, "corpus.train");
  Models models = load_models(planner, generator);
  auto dialogues = load_corpus(corpus, models.tokenizer);
  return Loaded{std::move(models), std::move(dialogues)};
}

int cmd_evaluate(RunConfig& cfg, const ModelArgs& args, const std::string& report_path, const std::string& tsv,
                 std::ostream& out, std::ostream& err) {
  auto loaded = load_for_inference(cfg, args);
  const auto examples = examples_for(cfg, loaded.dialogues, err);
  const auto report =
      evaluate(loaded.models.planner, loaded.models.generator, examples, loaded.models.tokenizer, cfg.evaluation());
  const std::string body = report_json(report);
  const fs::path path = report_path.empty() ? fs::path(cfg.get("out_dir")) / "report.json" : fs::path(report_path);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream(path) << body;
  if (!tsv.empty()) write_report_tsv(tsv, report);
  out << body;
  return 0;
}

int cmd_predict(RunConfig& cfg, const ModelArgs& args, const std::string& dialogue_id, std::optional<int> turn,
                std::ostream& out, std::ostream& err) {
  auto loaded = load_for_inference(cfg, args);
  const auto it = std::find_if(loaded.dialogues.begin(), loaded.dialogues.end(),
                               [&](const Dialogue& d) { return d.id == dialogue_id; });
  if (it == loaded.dialogues.end()) throw DataError("no dialogue with id '" + dialogue_id + "'");
  const auto examples = examples_for(cfg, {*it}, err);
  const TrainingExample* ex = &examples.back();
  if (turn) {
    ex = nullptr;
    for (const auto& e : examples)
      if (static_cast<int>(e.turn_index) == *turn) ex = &e;
    if (!ex) throw DataError("turn " + std::to_string(*turn) + " of '" + dialogue_id + "' is not a grounded agent turn");
  }
  const auto& m = loaded.models;
  const auto sel = select_knowledge_over_chunks(m.planner, *ex);
  const PolicyLabel policy = sel.predicted_policy();
  const auto in = generator_input(ex->candidates.entries[sel.entry].tokens, ex->context, m.generator.config().context_budget);
  const auto response = generate(m.generator, in, policy, cfg.decode());
  out << "dialogue: " << ex->dialogue_id << "\n";
  out << "turn: " << ex->turn_index << "\n";
  out << "entry: " << sel.entry << " " << it->knowledge.entries[sel.entry].text << "\n";
  out << "policy: " << to_string(policy.da) << " " << to_string(policy.topic_intent) << "\n";
  out << "response: " << m.tokenizer.decode(response) << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Policy-driven document-grounded dialogue toolkit"};
  app.require_subcommand(1);

  AnnotateArgs annotate;
  auto* annotate_cmd = app.add_subcommand("annotate", "fill dialogue acts and topic intents of a corpus");
  annotate_cmd->add_option("--corpus", annotate.corpus_in, "input corpus JSONL")->required();
  annotate_cmd->add_option("--out", annotate.corpus_out, "output corpus JSONL")->required();
  annotate_cmd->add_option("--mapping", annotate.mapping, "extra fine-to-coarse act mapping (JSON object)");
  annotate_cmd->add_option("--da-tagger", annotate.da_tagger, "DA tagger checkpoint for unlabeled turns");
  annotate_cmd->add_option("--topic-classifier", annotate.topic_classifier,
                           "topic-intent classifier checkpoint for ungrounded turns");

  CommonArgs train_common;
  std::string stage;
  auto* train_cmd = app.add_subcommand("train", "train one stage and write its checkpoint and loss curve");
  train_cmd->add_option("stage", stage, "da-tagger | topic-classifier | planner | generator | joint")
      ->required()
      ->check(CLI::IsMember({"da-tagger", "topic-classifier", "planner", "generator", "joint"}));
  add_common(train_cmd, train_common);

  CommonArgs eval_common;
  ModelArgs eval_models;
  std::string report_path, tsv_path;
  auto* eval_cmd = app.add_subcommand("evaluate", "run the full pipeline on a corpus and report metrics");
  add_common(eval_cmd, eval_common);
  add_model_args(eval_cmd, eval_models);
  eval_cmd->add_option("--report", report_path, "report JSON path (default OUT_DIR/report.json)");
  eval_cmd->add_option("--tsv", tsv_path, "per-example TSV dump");

  CommonArgs predict_common;
  ModelArgs predict_models;
  std::string dialogue_id;
  std::optional<int> turn;
  auto* predict_cmd = app.add_subcommand("predict", "select knowledge, policy and a response for one turn");
  add_common(predict_cmd, predict_common);
  add_model_args(predict_cmd, predict_models);
  predict_cmd->add_option("--dialogue", dialogue_id, "dialogue id")->required();
  predict_cmd->add_option("--turn", turn, "agent turn index (default: last grounded agent turn)");

  std::string synth_out;
  SyntheticOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "write the synthetic fixture corpus");
  synth_cmd->add_option("--out", synth_out, "output corpus JSONL")->required();
  synth_cmd->add_option("--dialogues", synth.dialogues, "number of dialogues");
  synth_cmd->add_option("--seed", synth.seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    if (*annotate_cmd) return cmd_annotate(annotate, out);
    if (*train_cmd) return cmd_train(stage, make_config(train_common), out, err);
    if (*eval_cmd) {
      RunConfig cfg = make_config(eval_common);
      return cmd_evaluate(cfg, eval_models, report_path, tsv_path, out, err);
    }
    if (*predict_cmd) {
      RunConfig cfg = make_config(predict_common);
      return cmd_predict(cfg, predict_models, dialogue_id, turn, out, err);
    }
    if (*synth_cmd) {
      write_jsonl(synth_out, synthetic_corpus(synth));
      out << "wrote " << synth_out << "\n";
      return 0;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace pdgd
