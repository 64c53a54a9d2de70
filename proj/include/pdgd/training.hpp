#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pdgd/nn.hpp"

namespace pdgd {

struct TrainingOptions {
  int epochs = 3;
  std::size_t batch_size = 4;
  AdamConfig adam;
  std::uint64_t seed = 13;
};

struct LossRecord {
  int epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  std::map<std::string, double> parts;
};

using LossCurve = std::vector<LossRecord>;

// Shuffled minibatches of [0, n) for one epoch.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng);

// Mean loss per epoch, in epoch order.
std::vector<double> epoch_means(const LossCurve& curve);

// CSV with columns epoch,step,loss followed by the union of part names.
void write_loss_csv(const std::filesystem::path& path, const LossCurve& curve);

}  // namespace pdgd
