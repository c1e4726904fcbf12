#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "metagnn/model.hpp"

namespace metagnn {

/// Connected graph with standard-normal node/edge features and optional coordinates.
Graph random_graph(std::size_t nodes, std::size_t d_node, std::size_t d_edge, bool coords, Rng& rng);

/// Relabels nodes so that old node i becomes perm[i]; edges stay sorted.
Graph permute_graph(const Graph& g, const std::vector<std::size_t>& perm);

using Mat3 = std::array<std::array<double, 3>, 3>;

/// Haar-style random orthogonal matrix; a reflection half of the time.
Mat3 random_orthogonal(Rng& rng);

/// x ↦ Qx + t applied to every coordinate row.
Graph transform_coords(const Graph& g, const Mat3& q, const std::array<double, 3>& t);

struct CheckModelConfig {
  std::size_t nodes = 6;
  std::size_t d_node = 4;
  std::size_t d_edge = 2;
  std::size_t hidden_dim = 64;
};

/// Reverse-mode gradients against central differences for the training-mode
/// MSE of one random graph.
FiniteDiffReport gradcheck_model(ArchKind kind, std::uint64_t seed, std::size_t probes = 100, double eps = 1e-5,
                       const CheckModelConfig& cfg = {});

/// Max |Δprediction| over `count` random node relabelings of random graphs.
double permutation_deviation(ArchKind kind, std::uint64_t seed, std::size_t count = 50,
                             const CheckModelConfig& cfg = {});

struct E3Deviation {
  double scalar = 0.0;  // max |Δprediction|
  double coords = 0.0;  // egnn only: max |x'(Qx+t) − (Q x'(x) + t)|
};

/// Random rotations/reflections plus translations of the input coordinates.
E3Deviation e3_deviation(ArchKind kind, std::uint64_t seed, std::size_t count = 20, const CheckModelConfig& cfg = {});

}  // namespace metagnn
