#include "pdgd/config.hpp"

#include <charconv>
#include <fstream>

#include "pdgd/error.hpp"

namespace pdgd {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
    return s.substr(1, s.size() - 2);
  return s;
}

}  // namespace

RunConfig::RunConfig() {
  values_ = {
      {"corpus.train", ""},
      {"corpus.eval", ""},
      {"corpus.da", ""},
      {"da_mapping", ""},
      {"tokenizer", "whitespace"},
      {"tokenizer.min_count", "1"},
      {"out_dir", "run"},
      {"seed", "13"},
      {"model.dim", "64"},
      {"model.layers", "2"},
      {"model.heads", "4"},
      {"model.ffn_dim", "128"},
      {"max_len", "512"},
      {"context_budget", "60"},
      {"context_window", "3"},
      {"max_span_len", "90"},
      {"beam", "5"},
      {"max_new", "40"},
      {"batch_size", "4"},
      {"lr", "5e-5"},
      {"adam.beta1", "0.9"},
      {"adam.beta2", "0.999"},
      {"adam.eps", "1e-8"},
      {"clip_norm", "1.0"},
      {"planner.epochs", "3"},
      {"planner.lr", ""},
      {"planner.sentence_mode", "false"},
      {"generator.epochs", "4"},
      {"generator.lr", ""},
      {"generator.use_bias", "true"},
      {"bias.inform", "2"},
      {"bias.other_da", "1"},
      {"bias.starting_new", "2"},
      {"bias.mining_initial", "1"},
      {"bias.following_new", "0"},
      {"bias.context", "1"},
      {"da_tagger.epochs", "3"},
      {"da_tagger.lr", ""},
      {"da_tagger.max_len", "128"},
      {"da_tagger.min_words", "2"},
      {"topic_classifier.epochs", "3"},
      {"topic_classifier.lr", ""},
      {"topic_classifier.max_len", "128"},
      {"rl.lr_planner", "5e-6"},
      {"rl.lr_generator", "5e-5"},
      {"rl.batch_size", "4"},
      {"rl.steps", ""},
      {"rl.update_span_head", "false"},
      {"rouge.beta_squared", "1.2"},
  };
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  RunConfig c;
  c.merge_file(path);
  return c;
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config '" + path.string() + "'");
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError(path.string() + ":" + std::to_string(n) + ": expected key = value");
    try {
      set(trim(line.substr(0, eq)), unquote(trim(line.substr(eq + 1))));
    } catch (const ContractError& e) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ContractError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), unquote(trim(assignment.substr(eq + 1))));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ContractError("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ContractError("unknown config key '" + key + "'");
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ContractError("config key '" + key + "' needs an integer, got '" + v + "'");
  return out;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ContractError("config key '" + key + "' needs a number, got '" + v + "'");
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ContractError("config key '" + key + "' needs true or false, got '" + v + "'");
}

std::filesystem::path RunConfig::get_path(const std::string& key) const {
  if (!has_value(key)) throw ContractError("config key '" + key + "' is not set");
  return get(key);
}

TransformerShape RunConfig::shape() const {
  TransformerShape s;
  s.dim = get_int("model.dim");
  s.layers = get_int("model.layers");
  s.heads = get_int("model.heads");
  s.ffn_dim = get_int("model.ffn_dim");
  if (s.dim <= 0 || s.layers <= 0 || s.heads <= 0 || s.ffn_dim <= 0 || s.dim % s.heads != 0)
    throw ContractError("model.dim must be a positive multiple of model.heads");
  return s;
}

TrainingOptions RunConfig::training(const std::string& stage) const {
  TrainingOptions t;
  t.epochs = get_int(stage + ".epochs");
  const int batch = get_int("batch_size");
  if (batch <= 0 || t.epochs < 0) throw ContractError("batch_size and epochs must be positive");
  t.batch_size = static_cast<std::size_t>(batch);
  t.seed = static_cast<std::uint64_t>(get_int("seed"));
  t.adam.lr = has_value(stage + ".lr") ? get_double(stage + ".lr") : get_double("lr");
  t.adam.beta1 = get_double("adam.beta1");
  t.adam.beta2 = get_double("adam.beta2");
  t.adam.eps = get_double("adam.eps");
  t.adam.clip_norm = get_double("clip_norm");
  return t;
}

PlannerConfig RunConfig::planner() const {
  PlannerConfig p;
  p.shape = shape();
  p.max_len = get_int("max_len");
  p.context_budget = static_cast<std::size_t>(get_int("context_budget"));
  p.max_span_len = static_cast<std::size_t>(get_int("max_span_len"));
  p.sentence_mode = get_bool("planner.sentence_mode");
  return p;
}

GeneratorConfig RunConfig::generator() const {
  GeneratorConfig g;
  g.shape = shape();
  g.max_len = get_int("max_len");
  g.context_budget = static_cast<std::size_t>(get_int("context_budget"));
  g.use_bias = get_bool("generator.use_bias");
  g.bias.inform = get_double("bias.inform");
  g.bias.other_da = get_double("bias.other_da");
  g.bias.starting_new = get_double("bias.starting_new");
  g.bias.mining_initial = get_double("bias.mining_initial");
  g.bias.following_new = get_double("bias.following_new");
  g.bias.context = get_double("bias.context");
  return g;
}

ClassifierConfig RunConfig::classifier(const std::string& stage) const {
  ClassifierConfig c;
  c.shape = shape();
  c.max_len = get_int(stage + ".max_len");
  c.context_budget = static_cast<std::size_t>(get_int("context_budget"));
  c.training = training(stage);
  return c;
}

JointConfig RunConfig::joint() const {
  JointConfig j;
  j.lr_planner = get_double("rl.lr_planner");
  j.lr_generator = get_double("rl.lr_generator");
  const int batch = get_int("rl.batch_size");
  if (batch <= 0) throw ContractError("rl.batch_size must be positive");
  j.batch_size = static_cast<std::size_t>(batch);
  if (!has_value("rl.steps")) throw ContractError("rl.steps must be set for joint training");
  j.steps = get_int("rl.steps");
  j.seed = static_cast<std::uint64_t>(get_int("seed"));
  j.max_new = get_int("max_new");
  j.clip_norm = get_double("clip_norm");
  j.update_span_head = get_bool("rl.update_span_head");
  return j;
}

DecodeOptions RunConfig::decode() const {
  DecodeOptions d;
  d.beam = get_int("beam");
  d.max_new = get_int("max_new");
  return d;
}

EvalOptions RunConfig::evaluation() const {
  EvalOptions e;
  e.decode = decode();
  e.rouge_beta_squared = get_double("rouge.beta_squared");
  return e;
}

}  // namespace pdgd
