#include "metagnn/layers.hpp"

#include <cmath>

#include "metagnn/error.hpp"

namespace metagnn {

namespace {

Var constant_like(Tape& tape, std::size_t rows, std::size_t cols, double value) {
  return tape.constant(Tensor::full(Shape{rows, cols}, value));
}

// Expands one scalar per row into a rows × cols constant.
Var row_scalars(Tape& tape, std::span<const double> per_row, std::size_t cols) {
  Tensor t(Shape{per_row.size(), cols});
  for (std::size_t r = 0; r < per_row.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) t.at(r, c) = per_row[r];
  }
  return tape.constant(std::move(t));
}

}  // namespace

GraphBatch make_batch(std::span<const Graph* const> graphs, std::span<const double> labels) {
  if (graphs.empty()) throw ContractError("make_batch: empty graph list");
  if (!labels.empty() && labels.size() != graphs.size()) {
    throw ContractError("make_batch: label count differs from graph count");
  }
  const std::size_t d_node = graphs.front()->node_feats.cols();
  const std::size_t d_edge = graphs.front()->edge_feats.cols();
  const bool has_coords = graphs.front()->coords.has_value();

  GraphBatch b;
  b.num_graphs = graphs.size();
  std::size_t total_edges = 0;
  for (const Graph* g : graphs) {
    if (g->num_nodes == 0) throw ContractError("make_batch: graph '" + g->id + "' has no nodes");
    if (g->node_feats.cols() != d_node || g->edge_feats.cols() != d_edge || g->coords.has_value() != has_coords) {
      throw ContractError("make_batch: graphs disagree on feature widths");
    }
    b.num_nodes += g->num_nodes;
    total_edges += g->edges.size();
  }

  std::vector<double> node_data, edge_data, coord_data;
  node_data.reserve(b.num_nodes * d_node);
  edge_data.reserve(2 * total_edges * d_edge);
  std::vector<std::size_t> src, dst, node_graph;
  src.reserve(2 * total_edges);
  dst.reserve(2 * total_edges);
  node_graph.reserve(b.num_nodes);
  b.in_degree.assign(b.num_nodes, 0);

  std::size_t offset = 0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const Graph& g = *graphs[gi];
    node_data.insert(node_data.end(), g.node_feats.data().begin(), g.node_feats.data().end());
    if (has_coords) coord_data.insert(coord_data.end(), g.coords->data().begin(), g.coords->data().end());
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      const std::size_t i = offset + g.edges[e].first;
      const std::size_t j = offset + g.edges[e].second;
      const auto row = g.edge_feats.data().subspan(e * d_edge, d_edge);
      src.push_back(i);
      dst.push_back(j);
      edge_data.insert(edge_data.end(), row.begin(), row.end());
      src.push_back(j);
      dst.push_back(i);
      edge_data.insert(edge_data.end(), row.begin(), row.end());
      ++b.in_degree[i];
      ++b.in_degree[j];
    }
    for (std::size_t n = 0; n < g.num_nodes; ++n) node_graph.push_back(gi);
    b.graph_sizes.push_back(g.num_nodes);
    offset += g.num_nodes;
  }

  b.node_feats = Tensor(Shape{b.num_nodes, d_node}, std::move(node_data));
  b.edge_feats = Tensor(Shape{src.size(), d_edge}, std::move(edge_data));
  if (has_coords) b.coords = Tensor(Shape{b.num_nodes, 3}, std::move(coord_data));
  b.labels = Tensor(Shape{b.num_graphs, 1});
  for (std::size_t i = 0; i < labels.size(); ++i) b.labels[i] = labels[i];

  std::vector<std::size_t> loop_src = src, loop_dst = dst;
  for (std::size_t n = 0; n < b.num_nodes; ++n) {
    loop_src.push_back(n);
    loop_dst.push_back(n);
  }
  b.gcn_coef.resize(loop_src.size());
  for (std::size_t e = 0; e < loop_src.size(); ++e) {
    const double di = static_cast<double>(b.in_degree[loop_dst[e]] + 1);
    const double dj = static_cast<double>(b.in_degree[loop_src[e]] + 1);
    b.gcn_coef[e] = 1.0 / std::sqrt(di * dj);
  }

  b.src = make_index(std::move(src));
  b.dst = make_index(std::move(dst));
  b.loop_src = make_index(std::move(loop_src));
  b.loop_dst = make_index(std::move(loop_dst));
  b.node_graph = make_index(std::move(node_graph));
  b.zeros_nodes = make_index(std::vector<std::size_t>(b.num_nodes, 0));
  return b;
}

GraphBatch make_batch(const Dataset& ds, std::span<const std::size_t> indices, std::span<const double> labels) {
  std::vector<const Graph*> graphs;
  graphs.reserve(indices.size());
  for (std::size_t i : indices) graphs.push_back(&ds.graphs.at(i));
  return make_batch(graphs, labels);
}

GraphBatch make_batch(const Dataset& ds, const SupportBatch& support) {
  return make_batch(ds, support.graphs, support.labels);
}

Var broadcast_rows(Var row, std::size_t rows) {
  return ad::gather(row, make_index(std::vector<std::size_t>(rows, 0)));
}

Var batch_norm(Var x, const BatchNormWeights& bn, const RunMode& run) {
  Tape& tape = *x.tape();
  const std::size_t rows = x.value().rows();
  const std::size_t cols = x.value().cols();
  if (rows == 0) return x;

  Var normed;
  if (run.mode == Mode::kTrain) {
    const Index one_segment = make_index(std::vector<std::size_t>(rows, 0));
    const double inv_rows = 1.0 / static_cast<double>(rows);
    Var mean = ad::scale(ad::segment_sum(x, one_segment, 1), inv_rows);
    Var centered = ad::sub(x, mean);
    Var var = ad::scale(ad::segment_sum(ad::square(centered), one_segment, 1), inv_rows);
    Var denom = ad::sqrt(ad::add(var, constant_like(tape, 1, cols, kNormEpsilon)));
    normed = ad::div(centered, ad::gather(denom, one_segment));
    if (run.stats_out != nullptr) {
      Tensor rm = *bn.running_mean;
      Tensor rv = *bn.running_var;
      for (std::size_t c = 0; c < cols; ++c) {
        rm[c] = (1.0 - kBatchNormMomentum) * rm[c] + kBatchNormMomentum * mean.value()[c];
        rv[c] = (1.0 - kBatchNormMomentum) * rv[c] + kBatchNormMomentum * var.value()[c];
      }
      run.stats_out->insert_or_assign(bn.name + ".running_mean", std::move(rm));
      run.stats_out->insert_or_assign(bn.name + ".running_var", std::move(rv));
    }
  } else {
    Tensor inv_std(Shape{rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) inv_std.at(r, c) = 1.0 / std::sqrt((*bn.running_var)[c] + kNormEpsilon);
    }
    Var centered = ad::sub(x, tape.constant(*bn.running_mean));
    normed = ad::mul(centered, tape.constant(std::move(inv_std)));
  }
  return ad::add(ad::mul(normed, broadcast_rows(bn.scale, rows)), bn.shift);
}

Var mlp(Var x, const MlpWeights& w, const RunMode& run) {
  Var z = ad::add(ad::matmul(x, w.w1), w.b1);
  if (w.bn) z = batch_norm(z, *w.bn, run);
  z = ad::relu(z);
  return ad::add(ad::matmul(z, w.w2), w.b2);
}

Var gcn_layer(Var h, const GraphBatch& g, Var weight, Var bias) {
  Tape& tape = *h.tape();
  Var hw = ad::matmul(h, weight);
  Var messages = ad::mul(ad::gather(hw, g.loop_src), row_scalars(tape, g.gcn_coef, hw.value().cols()));
  return ad::add(ad::segment_sum(messages, g.loop_dst, g.num_nodes), bias);
}

Var gat_layer(Var h, const GraphBatch& g, Var weight, Var attention, Var bias, double slope) {
  Tape& tape = *h.tape();
  Var wh = ad::matmul(h, weight);
  const std::size_t out = wh.value().cols();
  if (attention.value().shape() != Shape{2 * out, 1}) {
    throw ShapeError("gat_layer: attention vector must be " + std::to_string(2 * out) + " x 1");
  }
  Var target = ad::gather(wh, g.loop_dst);
  Var source = ad::gather(wh, g.loop_src);
  Var score = ad::leaky_relu(ad::matmul(ad::concat({target, source}, 1), attention), slope);
  Var alpha = ad::segment_softmax(score, g.loop_dst, g.num_nodes);
  Var weights = ad::matmul(alpha, constant_like(tape, 1, out, 1.0));
  return ad::add(ad::segment_sum(ad::mul(source, weights), g.loop_dst, g.num_nodes), bias);
}

Var mpnn_layer(Var h, Var edge_feats, const GraphBatch& g, const MlpWeights& psi, const MlpWeights& phi,
               const RunMode& run, Aggregation agg) {
  Var pair = ad::concat({ad::gather(h, g.dst), ad::gather(h, g.src), edge_feats}, 1);
  Var messages = mlp(pair, psi, run);
  Var aggregated = agg == Aggregation::kMax ? ad::segment_max(messages, g.dst, g.num_nodes)
                                            : ad::segment_sum(messages, g.dst, g.num_nodes);
  return mlp(ad::concat({h, aggregated}, 1), phi, run);
}

EgnnOutput egnn_layer(Var h, Var x, Var edge_feats, const GraphBatch& g, const MlpWeights& psi_e,
                      const MlpWeights& psi_x, const MlpWeights& phi, const RunMode& run) {
  Tape& tape = *h.tape();
  if (x.value().cols() != 3) throw ShapeError("egnn_layer: coordinates must have 3 columns");
  Var diff = ad::sub(ad::gather(x, g.dst), ad::gather(x, g.src));
  Var dist2 = ad::matmul(ad::square(diff), constant_like(tape, 3, 1, 1.0));
  Var pair = ad::concat({ad::gather(h, g.dst), ad::gather(h, g.src), dist2, edge_feats}, 1);
  Var messages = mlp(pair, psi_e, run);

  Var coord_weight = mlp(messages, psi_x, run);
  Var shifts = ad::mul(diff, ad::matmul(coord_weight, constant_like(tape, 1, 3, 1.0)));
  std::vector<double> inv_degree(g.num_nodes, 0.0);
  for (std::size_t n = 0; n < g.num_nodes; ++n) {
    if (g.in_degree[n] > 0) inv_degree[n] = 1.0 / static_cast<double>(g.in_degree[n]);
  }
  Var update = ad::mul(ad::segment_sum(shifts, g.dst, g.num_nodes), row_scalars(tape, inv_degree, 3));
  Var x_next = ad::add(x, update);

  Var aggregated = ad::segment_max(messages, g.dst, g.num_nodes);
  Var h_next = mlp(ad::concat({h, aggregated}, 1), phi, run);
  return {h_next, x_next};
}

Var graph_norm(Var h, const GraphBatch& g, Var scale, Var shift) {
  Tape& tape = *h.tape();
  const std::size_t cols = h.value().cols();
  std::vector<double> inv_size(g.num_graphs);
  for (std::size_t gi = 0; gi < g.num_graphs; ++gi) inv_size[gi] = 1.0 / static_cast<double>(g.graph_sizes[gi]);
  Var inv_count = row_scalars(tape, inv_size, cols);

  Var mean = ad::mul(ad::segment_sum(h, g.node_graph, g.num_graphs), inv_count);
  Var centered = ad::sub(h, ad::gather(mean, g.node_graph));
  Var var = ad::mul(ad::segment_sum(ad::square(centered), g.node_graph, g.num_graphs), inv_count);
  Var denom = ad::sqrt(ad::add(var, constant_like(tape, g.num_graphs, cols, kNormEpsilon)));
  Var normed = ad::div(centered, ad::gather(denom, g.node_graph));
  return ad::add(ad::mul(normed, ad::gather(scale, g.zeros_nodes)), shift);
}

Var global_max_pool(Var h, const GraphBatch& g) { return ad::segment_max(h, g.node_graph, g.num_graphs); }

}  // namespace metagnn
