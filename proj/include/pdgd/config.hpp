#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pdgd/annotation.hpp"
#include "pdgd/evaluation.hpp"
#include "pdgd/generator.hpp"
#include "pdgd/joint.hpp"
#include "pdgd/planner.hpp"

namespace pdgd {

// Flat key=value settings. Unknown keys are rejected so typos surface.
class RunConfig {
 public:
  RunConfig();

  // Lines of `key = value`; '#' starts a comment; values may be quoted.
  static RunConfig from_file(const std::filesystem::path& path);
  void merge_file(const std::filesystem::path& path);
  // "key=value"
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  bool has_value(const std::string& key) const { return !get(key).empty(); }
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::filesystem::path get_path(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  TransformerShape shape() const;
  TrainingOptions training(const std::string& stage) const;
  PlannerConfig planner() const;
  GeneratorConfig generator() const;
  ClassifierConfig classifier(const std::string& stage) const;
  JointConfig joint() const;
  DecodeOptions decode() const;
  EvalOptions evaluation() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace pdgd
