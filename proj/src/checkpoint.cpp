#include "pdgd/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "pdgd/error.hpp"
#include "pdgd/tokenizer.hpp"

namespace pdgd {

namespace {

constexpr char kMagic[8] = {'P', 'D', 'G', 'D', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}
  std::uint32_t u32() {
    std::uint32_t v = 0;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v = 0;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = u32();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw DataError("truncated checkpoint '" + source_ + "'");
  }

 private:
  std::istream& in_;
  std::string source_;
};

}  // namespace

const std::string& Checkpoint::require_meta(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw DataError("checkpoint is missing metadata '" + key + "'");
  return it->second;
}

int Checkpoint::meta_int(const std::string& key) const {
  const auto& v = require_meta(key);
  try {
    return std::stoi(v);
  } catch (const std::exception&) {
    throw DataError("checkpoint metadata '" + key + "' is not an integer");
  }
}

double Checkpoint::meta_double(const std::string& key) const {
  const auto& v = require_meta(key);
  try {
    return std::stod(v);
  } catch (const std::exception&) {
    throw DataError("checkpoint metadata '" + key + "' is not a number");
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  Writer w(out);
  w.raw(kMagic, sizeof kMagic);
  w.u32(Checkpoint::kVersion);
  w.str(ckpt.kind);
  w.u32(static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.vocabulary.size()));
  for (const auto& tok : ckpt.vocabulary) w.str(tok);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, m] : ckpt.tensors) {
    w.str(name);
    w.u64(static_cast<std::uint64_t>(m.rows()));
    w.u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) w.f64(m(r, c));
  }
  if (!out) throw DataError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  Reader r(in, path.string());
  char magic[sizeof kMagic];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DataError("'" + path.string() + "' is not a checkpoint");
  const auto version = r.u32();
  if (version != Checkpoint::kVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.kind = r.str();
  const auto n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = r.str();
    ckpt.meta[k] = r.str();
  }
  const auto n_vocab = r.u32();
  ckpt.vocabulary.reserve(n_vocab);
  for (std::uint32_t i = 0; i < n_vocab; ++i) ckpt.vocabulary.push_back(r.str());
  const auto n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto name = r.str();
    const auto rows = r.u64();
    const auto cols = r.u64();
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index rr = 0; rr < m.rows(); ++rr)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(rr, c) = r.f64();
    ckpt.tensors.emplace_back(std::move(name), std::move(m));
  }
  return ckpt;
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

void export_parameters(Checkpoint& ckpt, const std::function<void(const ParameterVisitor&)>& visit) {
  visit([&](Parameter& p) { ckpt.tensors.emplace_back(p.name, p.value); });
}

void import_parameters(const Checkpoint& ckpt, const std::function<void(const ParameterVisitor&)>& visit) {
  std::map<std::string, const Matrix*> by_name;
  for (const auto& [name, m] : ckpt.tensors) by_name[name] = &m;
  std::set<std::string> used;
  visit([&](Parameter& p) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw DataError("checkpoint is missing tensor '" + p.name + "'");
    const Matrix& m = *it->second;
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols())
      throw DataError("checkpoint tensor '" + p.name + "' has the wrong shape");
    p.value = m;
    p.zero_grad();
    used.insert(p.name);
  });
  if (used.size() != by_name.size()) throw DataError("checkpoint has tensors the model does not use");
}

}  // namespace pdgd
