#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metagnn/rng.hpp"
#include "metagnn/tensor.hpp"

namespace metagnn {

/// One undirected edge, stored once with `first < second`.
using Edge = std::pair<std::size_t, std::size_t>;

struct Graph {
  std::string id;
  std::size_t num_nodes = 0;
  Tensor node_feats;            // num_nodes × d_node
  std::vector<Edge> edges;      // undirected, i < j, unique, no self-loops
  Tensor edge_feats;            // num_edges × d_edge (d_edge may be 0)
  std::optional<Tensor> coords; // num_nodes × 3
  std::vector<double> targets;  // one label per task

  bool operator==(const Graph&) const = default;
};

struct Dataset {
  std::vector<Graph> graphs;
  std::vector<std::string> task_names;
  std::size_t d_node = 0;
  std::size_t d_edge = 0;
  bool has_coords = false;

  std::size_t num_tasks() const { return task_names.size(); }
  bool operator==(const Dataset&) const = default;
};

/// Throws SchemaError if `g` violates the Graph invariants or disagrees with the
/// dataset-level widths.
void validate_graph(const Graph& g, std::size_t d_node, std::size_t d_edge, bool has_coords, std::size_t num_tasks);
void validate_dataset(const Dataset& ds);

// ---------------------------------------------------------------------------
// File format: JSON Lines. First line is a header, then one graph per line.

Dataset load_dataset(const std::string& path);
Dataset parse_dataset(std::istream& in);
void save_dataset(const Dataset& ds, const std::string& path);
void write_dataset(const Dataset& ds, std::ostream& out);

// ---------------------------------------------------------------------------

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded random partition with ⌈N·f⌉ train indices and the rest test.
Split split_dataset(const Dataset& ds, double train_fraction, std::uint64_t seed);

/// Z-score statistics (population convention).
struct Normalizer {
  double mean = 0.0;
  double std = 1.0;

  double apply(double y) const { return (y - mean) / std; }
  double invert(double z) const { return z * std + mean; }
};

/// Mean/std pooled over every task label of the graphs in `indices`.
Normalizer zscore_fit(const Dataset& ds, std::span<const std::size_t> indices);

/// Mean/std of an arbitrary label list; used by zscore_fit.
Normalizer zscore_fit_values(std::span<const double> labels);

/// A regression target restricted to one pool of graphs (train or test split).
struct Task {
  std::size_t target_index = 0;
  std::span<const std::size_t> pool;
};

struct SupportBatch {
  std::vector<std::size_t> graphs;  // dataset indices
  std::vector<double> labels;       // normalized targets of `target_index`
  std::size_t target_index = 0;
};

/// K graphs drawn without replacement from the task's pool, labels normalized.
SupportBatch sample_support(const Dataset& ds, const Task& task, std::size_t k, const Normalizer& norm, Rng& rng);

/// Labels for an explicit list of graphs.
SupportBatch make_batch_labels(const Dataset& ds, std::vector<std::size_t> graphs, std::size_t target_index,
                               const Normalizer& norm);

// ---------------------------------------------------------------------------

struct SynthSpec {
  std::size_t num_graphs = 200;
  std::size_t nodes_min = 5;
  std::size_t nodes_max = 15;
  std::size_t d_node = 4;
  std::size_t d_edge = 2;
  std::size_t num_tasks = 8;
  bool coords = false;
  double task_spread = 0.5;   // std of each task's coefficients around the shared centre
  double offset_scale = 0.5;  // std of the per-task offsets
};

/// Fixed 6-dim descriptor the synthetic targets are linear in.
std::vector<double> graph_summary(const Graph& g, std::size_t nodes_max);

/// Random connected graphs whose tasks share structure: task t's label is
/// c_tᵀ·summary(G) + b_t with every c_t drawn around one common centre.
Dataset synth_generate(const SynthSpec& spec, std::uint64_t seed);

}  // namespace metagnn
