#pragma once

#include <stdexcept>
#include <string>

namespace pdgd {

// Bad input data: malformed corpus lines, out-of-range groundings, unknown
// labels, inconsistent checkpoints. The CLI maps these to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed arguments that violate an operation's contract.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised by map_iso_da for labels absent from the mapping table.
class UnmappedLabelError : public DataError {
 public:
  explicit UnmappedLabelError(const std::string& label)
      : DataError("unmapped dialogue-act label: '" + label + "'"), label_(label) {}
  const std::string& label() const noexcept { return label_; }

 private:
  std::string label_;
};

}  // namespace pdgd
