#ifndef PRFL_DATAKIT_HPP
#define PRFL_DATAKIT_HPP

#include <string>
#include <vector>

#include "prfl/nn.hpp"
#include "prfl/tensor.hpp"

namespace prfl {

struct Dataset {
  Tensor features;          // n x (per-sample feature dims)
  std::vector<int> labels;  // n class indices in [0, C)
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::vector<std::size_t> feature_dims() const;  // per-sample dims
  std::size_t feature_size() const;
  void validate() const;
};

struct ClientSplit {
  std::vector<std::size_t> indices;  // this client's samples
  std::vector<std::size_t> train, val, test;
};

struct PartitionSpec {
  std::vector<ClientSplit> clients;
};

// Gaussian blobs around seeded per-class anchors; spread is the per-class
// covariance scale.
Dataset gen_synthetic(std::size_t num_classes, const std::vector<std::size_t>& dims,
                      std::size_t n_per_class, double spread, Rng& rng);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

// Sort-by-label shards dealt uniformly at random, classes_per_client each.
PartitionSpec partition_pathological(const Dataset& ds, std::size_t n_clients,
                                     std::size_t classes_per_client, Rng& rng);

// q ~ Dirichlet(lambda * prior) per client; class samples assigned by
// largest-remainder on the clients' q-mass. Empty prior = empirical class
// frequencies. Starved clients receive one donated sample from the largest.
PartitionSpec partition_dirichlet(const Dataset& ds, std::size_t n_clients, double lambda,
                                  std::vector<double> prior, Rng& rng);

// Shuffled 80/10/10 with largest-remainder rounding; under 3 samples
// everything goes to train.
void split_client(ClientSplit& client, Rng& rng);

// Integer apportionment of `total` by nonnegative weights, exact sum.
std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<double>& weights);

// Row-gather into a flat (B, feature_size) batch plus labels.
std::pair<Tensor, std::vector<int>> make_batch(const Dataset& ds,
                                               const std::vector<std::size_t>& indices);

}  // namespace prfl

#endif  // PRFL_DATAKIT_HPP
