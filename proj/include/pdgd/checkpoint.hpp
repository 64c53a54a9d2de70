#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pdgd/autograd.hpp"
#include "pdgd/nn.hpp"

namespace pdgd {

// Single-file parameter map. Layout (little-endian):
//   magic "PDGDCKPT", u32 version,
//   string kind, u32 n_meta, n_meta x (string key, string value),
//   u32 n_vocab, n_vocab x string,
//   u32 n_tensors, n_tensors x (string name, u64 rows, u64 cols, rows*cols f64 row-major)
// Strings are u32 length + bytes.
struct Checkpoint {
  static constexpr unsigned kVersion = 1;

  std::string kind;
  std::map<std::string, std::string> meta;
  std::vector<std::string> vocabulary;
  std::vector<std::pair<std::string, Matrix>> tensors;

  const std::string& require_meta(const std::string& key) const;
  int meta_int(const std::string& key) const;
  double meta_double(const std::string& key) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// SHA-256 of the file bytes.
std::string file_digest(const std::filesystem::path& path);

// Appends every parameter reachable through `visit` to the checkpoint.
void export_parameters(Checkpoint& ckpt, const std::function<void(const ParameterVisitor&)>& visit);
// Copies checkpoint tensors into the visited parameters, matching by name
// and shape; missing or extra tensors are a DataError.
void import_parameters(const Checkpoint& ckpt, const std::function<void(const ParameterVisitor&)>& visit);

}  // namespace pdgd
