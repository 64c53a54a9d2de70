#include "pdgd/synthetic.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <random>
#include <string>

#include "pdgd/annotation.hpp"
#include "pdgd/corpus.hpp"
#include "pdgd/error.hpp"
#include "pdgd/labels.hpp"

namespace pdgd {

namespace {

constexpr std::array kTopics{"alpine", "baroque", "cactus", "delta",  "ember",  "fjord",  "glacier", "harbor",
                             "iris",   "jasper",  "kelp",   "lagoon", "meteor", "nebula", "orchid",  "prairie",
                             "quartz", "reef",    "sierra", "tundra", "umber",  "violet", "willow",  "zephyr"};
constexpr std::array kAttributes{"color", "origin", "size", "history", "habitat", "use", "shape", "age"};
constexpr std::array kValues{"red",   "ancient", "tiny",  "northern", "coastal", "rare",   "bright", "hollow",
                             "dense", "fragile", "sweet", "modern",   "remote",  "silent", "golden", "curved"};

struct ActCue {
  DialogueAct act;
  const char* user_cue;
  const char* agent_prefix;
};
constexpr std::array kActCues{
    ActCue{DialogueAct::kInform, "tell me about", "sure ,"},
    ActCue{DialogueAct::kQuestion, "i wonder about", "did you know"},
    ActCue{DialogueAct::kDirective, "any advice on", "you should read that"},
    ActCue{DialogueAct::kCommissive, "promise to explain", "i will explain that"},
};

template <class T>
std::size_t pick(std::mt19937_64& rng, const T& pool) {
  return static_cast<std::size_t>(rng() % pool.size());
}

}  // namespace

std::vector<nlohmann::json> synthetic_corpus(const SyntheticOptions& options) {
  if (options.topics_per_dialogue < 2 || options.topics_per_dialogue > kTopics.size())
    throw ContractError("synthetic dialogues need between 2 and " + std::to_string(kTopics.size()) + " topics");
  if (options.entries_per_topic < 1 || options.entries_per_topic > kAttributes.size())
    throw ContractError("too many entries per topic for the attribute pool");
  std::mt19937_64 rng(options.seed);
  std::vector<nlohmann::json> out;
  for (std::size_t d = 0; d < options.dialogues; ++d) {
    std::vector<std::size_t> topic_ids(kTopics.size());
    for (std::size_t i = 0; i < topic_ids.size(); ++i) topic_ids[i] = i;
    for (std::size_t i = topic_ids.size() - 1; i > 0; --i) std::swap(topic_ids[i], topic_ids[rng() % (i + 1)]);
    topic_ids.resize(options.topics_per_dialogue);

    nlohmann::json knowledge = nlohmann::json::array();
    std::vector<std::vector<std::size_t>> entry_attr(options.topics_per_dialogue);
    for (std::size_t t = 0; t < topic_ids.size(); ++t) {
      std::vector<std::size_t> attrs(kAttributes.size());
      for (std::size_t i = 0; i < attrs.size(); ++i) attrs[i] = i;
      for (std::size_t i = attrs.size() - 1; i > 0; --i) std::swap(attrs[i], attrs[rng() % (i + 1)]);
      attrs.resize(options.entries_per_topic);
      for (std::size_t a : attrs) {
        const std::string text = std::string(kTopics[topic_ids[t]]) + " " + kAttributes[a] + " is " +
                                 kValues[pick(rng, kValues)] + " and " + kValues[pick(rng, kValues)];
        knowledge.push_back({{"topic", kTopics[topic_ids[t]]}, {"text", text}});
      }
      entry_attr[t] = attrs;
    }

    // Agent topics: initial, a new one, then either back to the initial or
    // staying on the new one.
    const std::size_t second = 1 + static_cast<std::size_t>(rng() % (options.topics_per_dialogue - 1));
    const std::array<std::size_t, 3> agent_topics{0, second, rng() % 2 == 0 ? std::size_t{0} : second};
    nlohmann::json turns = nlohmann::json::array();
    for (std::size_t k = 0; k < agent_topics.size(); ++k) {
      const std::size_t t = agent_topics[k];
      const std::size_t slot = pick(rng, entry_attr[t]);
      const std::size_t entry = t * options.entries_per_topic + slot;
      const ActCue& cue = kActCues[pick(rng, kActCues)];
      const std::string topic = kTopics[topic_ids[t]];
      turns.push_back({{"speaker", "user"},
                       {"text", std::string(cue.user_cue) + " " + topic + " " + kAttributes[entry_attr[t][slot]]},
                       {"grounding", nullptr},
                       {"da", "question"}});
      turns.push_back({{"speaker", "agent"},
                       {"text", std::string(cue.agent_prefix) + " " + knowledge[entry]["text"].get<std::string>()},
                       {"grounding", entry},
                       {"da", to_string(cue.act)}});
    }
    nlohmann::json record{{"id", "synthetic-" + std::to_string(d)},
                          {"initial_topic", kTopics[topic_ids[0]]},
                          {"knowledge", knowledge},
                          {"turns", turns}};
    const auto intents = annotate_topic_intents(dialogue_from_json(record, d + 1));
    for (std::size_t i = 0; i < intents.size(); ++i) record["turns"][i]["topic_intent"] = to_string(intents[i]);
    out.push_back(std::move(record));
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : records) out << r.dump() << '\n';
}

}  // namespace pdgd
