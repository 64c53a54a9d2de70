#include "pdgd/training.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>

#include "pdgd/error.hpp"

namespace pdgd {

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ContractError("batch size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Fisher-Yates with explicit draws keeps the order identical across
  // standard libraries.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t at = 0; at < n; at += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, at + batch_size)));
  }
  return batches;
}

std::vector<double> epoch_means(const LossCurve& curve) {
  std::map<int, std::pair<double, std::size_t>> acc;
  for (const auto& r : curve) {
    acc[r.epoch].first += r.loss;
    acc[r.epoch].second += 1;
  }
  std::vector<double> out;
  for (const auto& [epoch, p] : acc) out.push_back(p.first / static_cast<double>(p.second));
  return out;
}

void write_loss_csv(const std::filesystem::path& path, const LossCurve& curve) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  std::set<std::string> names;
  for (const auto& r : curve)
    for (const auto& [k, v] : r.parts) names.insert(k);
  out << "epoch,step,loss";
  for (const auto& n : names) out << ',' << n;
  out << '\n' << std::setprecision(17);
  for (const auto& r : curve) {
    out << r.epoch << ',' << r.step << ',' << r.loss;
    for (const auto& n : names) {
      out << ',';
      auto it = r.parts.find(n);
      if (it != r.parts.end()) out << it->second;
    }
    out << '\n';
  }
}

}  // namespace pdgd
