#include "metagnn/checks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>

#include "metagnn/error.hpp"

namespace metagnn {

Graph random_graph(std::size_t nodes, std::size_t d_node, std::size_t d_edge, bool coords, Rng& rng) {
  SynthSpec spec;
  spec.num_graphs = 1;
  spec.nodes_min = nodes;
  spec.nodes_max = nodes;
  spec.d_node = d_node;
  spec.d_edge = d_edge;
  spec.coords = coords;
  return synth_generate(spec, rng()).graphs.front();
}

Graph permute_graph(const Graph& g, const std::vector<std::size_t>& perm) {
  if (perm.size() != g.num_nodes) throw ContractError("permute_graph: permutation length differs from node count");
  Graph out = g;
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    for (std::size_t c = 0; c < g.node_feats.cols(); ++c) out.node_feats.at(perm[i], c) = g.node_feats.at(i, c);
    if (g.coords) {
      for (std::size_t c = 0; c < 3; ++c) out.coords->at(perm[i], c) = g.coords->at(i, c);
    }
  }
  std::vector<std::pair<Edge, std::size_t>> edges;
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const std::size_t a = perm[g.edges[e].first], b = perm[g.edges[e].second];
    edges.push_back({{std::min(a, b), std::max(a, b)}, e});
  }
  std::sort(edges.begin(), edges.end());
  for (std::size_t k = 0; k < edges.size(); ++k) {
    out.edges[k] = edges[k].first;
    for (std::size_t c = 0; c < g.edge_feats.cols(); ++c) out.edge_feats.at(k, c) = g.edge_feats.at(edges[k].second, c);
  }
  return out;
}

Mat3 random_orthogonal(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  // Gram-Schmidt on Gaussian columns.
  Mat3 q{};
  for (std::size_t c = 0; c < 3; ++c) {
    std::array<double, 3> v{normal(rng), normal(rng), normal(rng)};
    for (std::size_t p = 0; p < c; ++p) {
      double dot = 0;
      for (std::size_t r = 0; r < 3; ++r) dot += v[r] * q[r][p];
      for (std::size_t r = 0; r < 3; ++r) v[r] -= dot * q[r][p];
    }
    const double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    for (std::size_t r = 0; r < 3; ++r) q[r][c] = v[r] / norm;
  }
  if (std::uniform_int_distribution<int>(0, 1)(rng) == 1) {
    for (std::size_t r = 0; r < 3; ++r) q[r][0] = -q[r][0];
  }
  return q;
}

Graph transform_coords(const Graph& g, const Mat3& q, const std::array<double, 3>& t) {
  if (!g.coords) throw ContractError("transform_coords: graph has no coordinates");
  Graph out = g;
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    for (std::size_t r = 0; r < 3; ++r) {
      double v = t[r];
      for (std::size_t c = 0; c < 3; ++c) v += q[r][c] * g.coords->at(i, c);
      out.coords->at(i, r) = v;
    }
  }
  return out;
}

namespace {

Architecture check_arch(ArchKind kind, const CheckModelConfig& cfg) {
  return Architecture{kind, cfg.hidden_dim, 3, cfg.d_node, cfg.d_edge};
}

GraphBatch single(const Graph& g, double label = 0.0) {
  const Graph* p = &g;
  return make_batch(std::span<const Graph* const>(&p, 1), std::span<const double>(&label, 1));
}

struct Output {
  double prediction = 0.0;
  Tensor coords;
};

Output run_model(const ModelParams& mp, const Graph& g) {
  Tape tape;
  auto vars = register_parameters(tape, mp.params);
  Var x;
  Var pred = model_forward(tape, mp, vars, single(g), RunMode{Mode::kEval, nullptr}, &x);
  return {pred.value()[0], x.valid() ? x.value() : Tensor()};
}

}  // namespace

FiniteDiffReport gradcheck_model(ArchKind kind, std::uint64_t seed, std::size_t probes, double eps,
                                 const CheckModelConfig& cfg) {
  Rng rng(seed);
  const Graph g = random_graph(cfg.nodes, cfg.d_node, cfg.d_edge, true, rng);
  const double label = std::normal_distribution<double>(0.0, 1.0)(rng);
  const GraphBatch batch = single(g, label);
  const ModelParams mp = model_init(check_arch(kind, cfg), rng());
  LossBuilder loss = [&](Tape& tape, const ParamSet& params) {
    ModelParams shifted{mp.arch, params, mp.buffers};
    auto vars = register_parameters(tape, params);
    Var pred = model_forward(tape, shifted, vars, batch, RunMode{Mode::kTrain, nullptr});
    return ad::mse(pred, tape.constant(batch.labels));
  };
  return finite_diff_report(loss, mp.params, probes, eps, rng());
}

double permutation_deviation(ArchKind kind, std::uint64_t seed, std::size_t count, const CheckModelConfig& cfg) {
  Rng rng(seed);
  const ModelParams mp = model_init(check_arch(kind, cfg), rng());
  double worst = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t n = cfg.nodes + uniform_index(rng, 8);
    const Graph g = random_graph(n, cfg.d_node, cfg.d_edge, true, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const double base = run_model(mp, g).prediction;
    worst = std::max(worst, std::abs(run_model(mp, permute_graph(g, perm)).prediction - base));
  }
  return worst;
}

E3Deviation e3_deviation(ArchKind kind, std::uint64_t seed, std::size_t count, const CheckModelConfig& cfg) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const ModelParams mp = model_init(check_arch(kind, cfg), rng());
  E3Deviation out;
  for (std::size_t i = 0; i < count; ++i) {
    const Graph g = random_graph(cfg.nodes + uniform_index(rng, 8), cfg.d_node, cfg.d_edge, true, rng);
    const Mat3 q = random_orthogonal(rng);
    const std::array<double, 3> t{3 * normal(rng), 3 * normal(rng), 3 * normal(rng)};
    const Output base = run_model(mp, g);
    const Output moved = run_model(mp, transform_coords(g, q, t));
    out.scalar = std::max(out.scalar, std::abs(moved.prediction - base.prediction));
    if (kind != ArchKind::kEgnn) continue;
    Graph expect = g;
    expect.coords = base.coords;
    const Tensor want = *transform_coords(expect, q, t).coords;
    for (std::size_t k = 0; k < want.size(); ++k) out.coords = std::max(out.coords, std::abs(moved.coords[k] - want[k]));
  }
  return out;
}

}  // namespace metagnn
