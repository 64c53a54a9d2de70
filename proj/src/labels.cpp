#include "pdgd/labels.hpp"

namespace pdgd {

std::string_view to_string(DialogueAct da) {
  switch (da) {
    case DialogueAct::kInform: return "inform";
    case DialogueAct::kQuestion: return "question";
    case DialogueAct::kDirective: return "directive";
    case DialogueAct::kCommissive: return "commissive";
  }
  return "inform";
}

std::string_view to_string(TopicIntent intent) {
  switch (intent) {
    case TopicIntent::kMiningInitial: return "mining_initial";
    case TopicIntent::kStartingNew: return "starting_new";
    case TopicIntent::kFollowingNew: return "following_new";
  }
  return "mining_initial";
}

std::optional<DialogueAct> parse_dialogue_act(std::string_view name) {
  for (DialogueAct da : kAllDialogueActs) {
    if (to_string(da) == name) return da;
  }
  return std::nullopt;
}

std::optional<TopicIntent> parse_topic_intent(std::string_view name) {
  for (TopicIntent t : kAllTopicIntents) {
    if (to_string(t) == name) return t;
  }
  return std::nullopt;
}

}  // namespace pdgd
