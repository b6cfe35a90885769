#include "prfl/datakit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "prfl/errors.hpp"
#include "prfl/wire.hpp"

namespace prfl {

std::vector<std::size_t> Dataset::feature_dims() const {
  return {features.dims.begin() + 1, features.dims.end()};
}

std::size_t Dataset::feature_size() const { return product(feature_dims()); }

void Dataset::validate() const {
  if (size() == 0) throw InputError("dataset: empty");
  if (features.dims.empty() || features.dims[0] != size())
    throw InputError("dataset: features/labels count mismatch");
  if (num_classes < 1) throw InputError("dataset: num_classes must be >= 1");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw InputError("dataset: label out of range");
}

Dataset gen_synthetic(std::size_t num_classes, const std::vector<std::size_t>& dims,
                      std::size_t n_per_class, double spread, Rng& rng) {
  if (num_classes < 2) throw ConfigError("gen_synthetic: num_classes must be >= 2");
  if (n_per_class < 1) throw ConfigError("gen_synthetic: n_per_class must be >= 1");
  const std::size_t d = product(dims);
  if (d == 0) throw ConfigError("gen_synthetic: empty feature dims");

  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<double>> anchors(num_classes, std::vector<double>(d));
  for (auto& a : anchors)
    for (double& v : a) v = unit(rng);

  Dataset ds;
  const std::size_t n = num_classes * n_per_class;
  std::vector<std::size_t> fdims = {n};
  fdims.insert(fdims.end(), dims.begin(), dims.end());
  ds.features = Tensor::zeros(fdims);
  ds.labels.reserve(n);
  ds.num_classes = num_classes;
  std::size_t row = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t s = 0; s < n_per_class; ++s, ++row) {
      for (std::size_t j = 0; j < d; ++j)
        ds.features.data[row * d + j] = anchors[c][j] + spread * unit(rng);
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

namespace {
constexpr std::uint8_t kPrdsMagic[4] = {0x50, 0x52, 0x44, 0x53};  // "PRDS"
constexpr std::uint16_t kPrdsVersion = 1;
}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  ds.validate();
  ByteWriter w;
  w.bytes(kPrdsMagic, 4);
  w.u16(kPrdsVersion);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  const auto fdims = ds.feature_dims();
  w.u8(static_cast<std::uint8_t>(fdims.size()));
  for (std::size_t dim : fdims) w.u32(static_cast<std::uint32_t>(dim));
  w.u32(static_cast<std::uint32_t>(ds.num_classes));
  for (double v : ds.features.data) w.f32(static_cast<float>(v));
  for (int y : ds.labels) w.u16(static_cast<std::uint16_t>(y));
  const auto& body = w.data();
  const std::uint32_t crc = crc32_ieee(body.data(), body.size());
  w.u32(crc);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write(reinterpret_cast<const char*>(w.data().data()),
           static_cast<std::streamsize>(w.data().size()));
  if (!os) throw IoError("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(is)),
                                std::istreambuf_iterator<char>());
  if (buf.size() < 4 + 2 + 4) throw DecodeError(DecodeError::Kind::Truncated, path + ": too short");
  if (!std::equal(kPrdsMagic, kPrdsMagic + 4, buf.begin()))
    throw DecodeError(DecodeError::Kind::BadMagic, path + ": not a PRDS file");

  // Version precedes the CRC check: a newer-format file should say so
  // rather than report checksum damage.
  {
    ByteReader ver(buf.data() + 4, 2);
    if (ver.u16() != kPrdsVersion)
      throw DecodeError(DecodeError::Kind::BadVersion, path + ": unsupported version");
  }
  ByteReader tail(buf.data() + buf.size() - 4, 4);
  const std::uint32_t want = tail.u32();
  const std::uint32_t got = crc32_ieee(buf.data(), buf.size() - 4);
  if (want != got) throw DecodeError(DecodeError::Kind::CrcMismatch, path + ": CRC mismatch");

  ByteReader r(buf.data(), buf.size() - 4);
  r.str(4);  // magic
  r.u16();   // version
  const std::uint32_t n = r.u32();
  const std::uint8_t ndim = r.u8();
  std::vector<std::size_t> fdims;
  for (std::size_t i = 0; i < ndim; ++i) fdims.push_back(r.u32());
  const std::uint32_t num_classes = r.u32();
  const std::size_t fsize = product(fdims);
  if (n == 0 || fsize == 0)
    throw DecodeError(DecodeError::Kind::Corrupt, path + ": empty dataset");
  if (r.remaining() != static_cast<std::size_t>(n) * fsize * 4 + static_cast<std::size_t>(n) * 2)
    throw DecodeError(DecodeError::Kind::Truncated, path + ": payload size mismatch");

  Dataset ds;
  std::vector<std::size_t> dims = {n};
  dims.insert(dims.end(), fdims.begin(), fdims.end());
  ds.features = Tensor::zeros(dims);
  for (double& v : ds.features.data) v = static_cast<double>(r.f32());
  ds.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(static_cast<int>(r.u16()));
  ds.num_classes = num_classes;
  for (int y : ds.labels)
    if (y < 0 || static_cast<std::size_t>(y) >= ds.num_classes)
      throw DecodeError(DecodeError::Kind::Corrupt, path + ": label out of range");
  return ds;
}

std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<double>& weights) {
  const std::size_t k = weights.size();
  double sum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw InputError("largest_remainder: negative weight");
    sum += w;
  }
  std::vector<std::size_t> out(k, 0);
  if (total == 0) return out;
  if (sum <= 0.0) throw InputError("largest_remainder: zero total weight");

  std::vector<double> frac(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double quota = static_cast<double>(total) * weights[i] / sum;
    out[i] = static_cast<std::size_t>(std::floor(quota));
    frac[i] = quota - std::floor(quota);
    assigned += out[i];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; assigned < total; ++i) {
    ++out[order[i % k]];
    ++assigned;
  }
  return out;
}

PartitionSpec partition_pathological(const Dataset& ds, std::size_t n_clients,
                                     std::size_t classes_per_client, Rng& rng) {
  ds.validate();
  if (n_clients < 1 || classes_per_client < 1)
    throw ConfigError("partition_pathological: clients and classes_per_client must be >= 1");
  const std::size_t shards = n_clients * classes_per_client;
  if (ds.size() < shards)
    throw ConfigError("partition_pathological: fewer samples than shards");

  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return ds.labels[a] < ds.labels[b]; });

  const auto sizes = largest_remainder(ds.size(), std::vector<double>(shards, 1.0));
  std::vector<std::vector<std::size_t>> shard_idx(shards);
  std::size_t pos = 0;
  for (std::size_t s = 0; s < shards; ++s) {
    shard_idx[s].assign(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                        idx.begin() + static_cast<std::ptrdiff_t>(pos + sizes[s]));
    pos += sizes[s];
  }

  std::vector<std::size_t> deal(shards);
  std::iota(deal.begin(), deal.end(), 0);
  std::shuffle(deal.begin(), deal.end(), rng);

  PartitionSpec spec;
  spec.clients.resize(n_clients);
  for (std::size_t k = 0; k < n_clients; ++k) {
    for (std::size_t j = 0; j < classes_per_client; ++j) {
      const auto& s = shard_idx[deal[k * classes_per_client + j]];
      spec.clients[k].indices.insert(spec.clients[k].indices.end(), s.begin(), s.end());
    }
    std::sort(spec.clients[k].indices.begin(), spec.clients[k].indices.end());
    split_client(spec.clients[k], rng);
  }
  return spec;
}

PartitionSpec partition_dirichlet(const Dataset& ds, std::size_t n_clients, double lambda,
                                  std::vector<double> prior, Rng& rng) {
  ds.validate();
  if (n_clients < 1) throw ConfigError("partition_dirichlet: clients must be >= 1");
  if (lambda <= 0.0) throw ConfigError("partition_dirichlet: lambda must be positive");
  const std::size_t C = ds.num_classes;
  if (prior.empty()) {
    prior.assign(C, 0.0);
    for (int y : ds.labels) prior[static_cast<std::size_t>(y)] += 1.0;
    for (double& p : prior) p /= static_cast<double>(ds.size());
  }
  if (prior.size() != C) throw ConfigError("partition_dirichlet: prior size mismatch");

  // q_k ~ Dirichlet(lambda * prior), via gamma draws.
  std::vector<std::vector<double>> q(n_clients, std::vector<double>(C, 0.0));
  for (auto& qk : q) {
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double shape = std::max(lambda * prior[c], 1e-12);
      std::gamma_distribution<double> gamma(shape, 1.0);
      qk[c] = gamma(rng);
      sum += qk[c];
    }
    if (sum > 0.0)
      for (double& v : qk) v /= sum;
  }

  std::vector<std::vector<std::size_t>> by_class(C);
  for (std::size_t i = 0; i < ds.size(); ++i)
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  for (auto& cls : by_class) std::shuffle(cls.begin(), cls.end(), rng);

  PartitionSpec spec;
  spec.clients.resize(n_clients);
  for (std::size_t c = 0; c < C; ++c) {
    if (by_class[c].empty()) continue;
    std::vector<double> w(n_clients);
    double mass = 0.0;
    for (std::size_t k = 0; k < n_clients; ++k) {
      w[k] = q[k][c];
      mass += w[k];
    }
    if (mass <= 0.0) w.assign(n_clients, 1.0);
    const auto counts = largest_remainder(by_class[c].size(), w);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < n_clients; ++k) {
      spec.clients[k].indices.insert(spec.clients[k].indices.end(),
                                     by_class[c].begin() + static_cast<std::ptrdiff_t>(pos),
                                     by_class[c].begin() + static_cast<std::ptrdiff_t>(pos + counts[k]));
      pos += counts[k];
    }
  }

  // Repair starved clients with one sample from the currently largest client.
  for (std::size_t k = 0; k < n_clients; ++k) {
    if (!spec.clients[k].indices.empty()) continue;
    std::size_t donor = 0;
    for (std::size_t j = 1; j < n_clients; ++j)
      if (spec.clients[j].indices.size() > spec.clients[donor].indices.size()) donor = j;
    if (spec.clients[donor].indices.size() <= 1)
      throw ConfigError("partition_dirichlet: not enough samples to populate all clients");
    spec.clients[k].indices.push_back(spec.clients[donor].indices.back());
    spec.clients[donor].indices.pop_back();
  }

  for (auto& client : spec.clients) {
    std::sort(client.indices.begin(), client.indices.end());
    split_client(client, rng);
  }
  return spec;
}

void split_client(ClientSplit& client, Rng& rng) {
  client.train.clear();
  client.val.clear();
  client.test.clear();
  std::vector<std::size_t> shuffled = client.indices;
  if (shuffled.size() < 3) {
    if (!shuffled.empty())
      std::fprintf(stderr, "warning: client with %zu samples, all assigned to train\n",
                   shuffled.size());
    client.train = shuffled;
    return;
  }
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto sizes = largest_remainder(shuffled.size(), {0.8, 0.1, 0.1});
  auto it = shuffled.begin();
  client.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes[0]));
  it += static_cast<std::ptrdiff_t>(sizes[0]);
  client.val.assign(it, it + static_cast<std::ptrdiff_t>(sizes[1]));
  it += static_cast<std::ptrdiff_t>(sizes[1]);
  client.test.assign(it, it + static_cast<std::ptrdiff_t>(sizes[2]));
}

std::pair<Tensor, std::vector<int>> make_batch(const Dataset& ds,
                                               const std::vector<std::size_t>& indices) {
  const std::size_t d = ds.feature_size();
  Tensor batch = Tensor::matrix(indices.size(), d);
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t row = indices[i];
    std::copy(ds.features.data.begin() + static_cast<std::ptrdiff_t>(row * d),
              ds.features.data.begin() + static_cast<std::ptrdiff_t>((row + 1) * d),
              batch.data.begin() + static_cast<std::ptrdiff_t>(i * d));
    labels.push_back(ds.labels[row]);
  }
  return {std::move(batch), std::move(labels)};
}

}  // namespace prfl
