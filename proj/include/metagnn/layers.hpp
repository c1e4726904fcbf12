#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metagnn/autodiff.hpp"
#include "metagnn/graph.hpp"

namespace metagnn {

/// Several graphs stacked into one disjoint union, edges stored in both directions.
struct GraphBatch {
  std::size_t num_graphs = 0;
  std::size_t num_nodes = 0;
  Tensor node_feats;             // N × d_node
  Tensor edge_feats;             // 2E × d_edge, row 2e is i→j and 2e+1 is j→i
  std::optional<Tensor> coords;  // N × 3
  Tensor labels;                 // G × 1 (zeros when built without labels)

  Index src;         // directed edge sources
  Index dst;         // directed edge targets (the aggregating node)
  Index loop_src;    // directed edges followed by one self-loop per node
  Index loop_dst;
  std::vector<double> gcn_coef;  // D̂^{-1/2}(A+I)D̂^{-1/2} entry for every loop edge
  std::vector<std::size_t> in_degree;
  Index node_graph;  // graph id for every node, non-decreasing
  Index zeros_nodes;  // N zeros, used to broadcast a 1×C row to every node
  std::vector<std::size_t> graph_sizes;

  std::size_t num_directed_edges() const { return src->size(); }
};

GraphBatch make_batch(std::span<const Graph* const> graphs, std::span<const double> labels = {});
GraphBatch make_batch(const Dataset& ds, std::span<const std::size_t> indices, std::span<const double> labels = {});
GraphBatch make_batch(const Dataset& ds, const SupportBatch& support);

enum class Mode { kTrain, kEval };

/// Forward-pass switches shared by every layer. In training mode batch-norm uses
/// batch statistics and, when `stats_out` is set, writes updated running averages there.
struct RunMode {
  Mode mode = Mode::kEval;
  ParamSet* stats_out = nullptr;
};

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kNormEpsilon = 1e-5;
inline constexpr double kGatSlope = 0.2;

struct BatchNormWeights {
  Var scale;
  Var shift;
  const Tensor* running_mean = nullptr;
  const Tensor* running_var = nullptr;
  std::string name;  // buffer prefix: <name>.running_mean / <name>.running_var
};

/// Linear → [BatchNorm] → ReLU → Linear.
struct MlpWeights {
  Var w1, b1, w2, b2;
  std::optional<BatchNormWeights> bn;
};

enum class Aggregation { kMax, kSum };

/// Row broadcast of a 1×C tensor to `rows`×C (a gather of row 0).
Var broadcast_rows(Var row, std::size_t rows);

Var batch_norm(Var x, const BatchNormWeights& bn, const RunMode& run);
Var mlp(Var x, const MlpWeights& w, const RunMode& run);

/// Ĉ·H·W + b with the symmetric-normalized adjacency including self-loops.
Var gcn_layer(Var h, const GraphBatch& g, Var weight, Var bias);

/// Single-head attention: α_ij = softmax_j∈N(i)∪{i} leaky(aᵀ[Wh_i ‖ Wh_j]); h'_i = Σ α_ij W h_j + b.
Var gat_layer(Var h, const GraphBatch& g, Var weight, Var attention, Var bias, double slope = kGatSlope);

/// m_ij = ψ([h_i ‖ h_j ‖ e_ij]); M_i = ⊕_j m_ij (zero when N(i) is empty); h'_i = φ([h_i ‖ M_i]).
Var mpnn_layer(Var h, Var edge_feats, const GraphBatch& g, const MlpWeights& psi, const MlpWeights& phi,
               const RunMode& run, Aggregation agg = Aggregation::kMax);

struct EgnnOutput {
  Var h;
  Var x;
};

/// m_ij = ψ_e([h_i ‖ h_j ‖ |x_i − x_j|² ‖ e_ij]);
/// x'_i = x_i + (1/|N(i)|) Σ_j (x_i − x_j)·ψ_x(m_ij);  h'_i = φ([h_i ‖ max_j m_ij]).
EgnnOutput egnn_layer(Var h, Var x, Var edge_feats, const GraphBatch& g, const MlpWeights& psi_e,
                      const MlpWeights& psi_x, const MlpWeights& phi, const RunMode& run);

/// Per-graph, per-channel standardization followed by a learned affine map.
Var graph_norm(Var h, const GraphBatch& g, Var scale, Var shift);

/// Elementwise max over the nodes of each graph.
Var global_max_pool(Var h, const GraphBatch& g);

}  // namespace metagnn
