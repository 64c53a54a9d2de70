#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

namespace pdgd {

// A small, fully labeled corpus whose policies and groundings are
// recoverable from the text: the user names the topic and attribute of the
// entry the agent should use, and a cue word fixes the agent's act.
struct SyntheticOptions {
  std::size_t dialogues = 50;
  std::size_t topics_per_dialogue = 3;
  std::size_t entries_per_topic = 2;
  std::uint64_t seed = 7;
};

std::vector<nlohmann::json> synthetic_corpus(const SyntheticOptions& options = {});
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);

}  // namespace pdgd
