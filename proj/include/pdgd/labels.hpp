#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace pdgd {

// Coarse utterance function.
enum class DialogueAct : int { kInform = 0, kQuestion = 1, kDirective = 2, kCommissive = 3 };

// How an utterance moves among the knowledge topics.
enum class TopicIntent : int { kMiningInitial = 0, kStartingNew = 1, kFollowingNew = 2 };

inline constexpr std::size_t kNumDialogueActs = 4;
inline constexpr std::size_t kNumTopicIntents = 3;

inline constexpr std::array<DialogueAct, kNumDialogueActs> kAllDialogueActs = {
    DialogueAct::kInform, DialogueAct::kQuestion, DialogueAct::kDirective, DialogueAct::kCommissive};
inline constexpr std::array<TopicIntent, kNumTopicIntents> kAllTopicIntents = {
    TopicIntent::kMiningInitial, TopicIntent::kStartingNew, TopicIntent::kFollowingNew};

struct PolicyLabel {
  DialogueAct da = DialogueAct::kInform;
  TopicIntent topic_intent = TopicIntent::kMiningInitial;

  friend bool operator==(const PolicyLabel&, const PolicyLabel&) = default;
};

std::string_view to_string(DialogueAct da);
std::string_view to_string(TopicIntent intent);

// Accept the canonical names written by to_string.
std::optional<DialogueAct> parse_dialogue_act(std::string_view name);
std::optional<TopicIntent> parse_topic_intent(std::string_view name);

inline int index_of(DialogueAct da) { return static_cast<int>(da); }
inline int index_of(TopicIntent intent) { return static_cast<int>(intent); }

}  // namespace pdgd
