#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "timeleak/counter.hpp"
#include "timeleak/network.hpp"
#include "timeleak/random.hpp"

namespace testing_support {

using namespace timeleak;

inline FeatureSchema binary_schema(std::size_t n_secret, std::size_t n_public) {
  FeatureSchema schema;
  for (std::size_t j = 0; j < n_secret; ++j) schema.secret_features.push_back({std::to_string(j), FeatureDomain::binary()});
  for (std::size_t j = 0; j < n_public; ++j) schema.public_features.push_back(std::to_string(j));
  return schema;
}

inline Normalizer identity_normalizer(std::size_t n_secret, std::size_t n_public) {
  return {std::vector<Affine>(n_secret), std::vector<Affine>(n_public), Affine{}};
}

/// Initialized network with non-zero biases and a schema/normalizer attached,
/// so it can be serialized and analyzed.
inline TriBranchNetwork random_net(const Architecture& arch, std::uint64_t seed) {
  auto net = init_network(arch, seed);
  Rng rng(mix_seed(seed, 77));
  for (auto* layer : net.layers())
    for (Eigen::Index i = 0; i < layer->bias.size(); ++i) layer->bias(i) = rng.uniform(-0.5, 0.5);
  net.schema = binary_schema(arch.n_secret, arch.n_public);
  net.normalizer = identity_normalizer(arch.n_secret, arch.n_public);
  return net;
}

inline DenseLayer random_layer(Rng& rng, std::size_t in, std::size_t out) {
  auto layer = DenseLayer::zeros(in, out);
  for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = rng.uniform(-1.0, 1.0);
    layer.bias(i) = rng.uniform(-1.0, 1.0);
  }
  return layer;
}

/// Reducer over `domain` with the given hidden widths and k outputs. Secret
/// maps send each feature's range onto [0, 1].
inline ReducerNet random_reducer(Rng& rng, const SecretDomain& domain, const std::vector<std::size_t>& widths,
                                 std::size_t k) {
  ReducerNet r;
  r.domain = domain;
  std::size_t in = domain.features.size();
  for (auto w : widths) {
    r.hidden.push_back(random_layer(rng, in, w));
    in = w;
  }
  r.interface = random_layer(rng, in, k);
  for (const auto& f : domain.features)
    r.secret_maps.push_back({static_cast<double>(f.lo), static_cast<double>(f.hi - f.lo)});
  return r;
}

inline SecretDomain binary_domain(std::size_t n) {
  SecretDomain d;
  d.features.assign(n, FeatureDomain::binary());
  return d;
}

}  // namespace testing_support
