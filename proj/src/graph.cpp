#include "metagnn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "metagnn/error.hpp"
#include "metagnn/format.hpp"

namespace metagnn {

namespace {

constexpr const char* kFormatTag = "meta-gnn-graphs-v1";

using nlohmann::json;

Tensor parse_matrix(const json& rows, std::size_t expected_rows, std::size_t width, const char* field,
                    std::size_t line) {
  if (!rows.is_array()) throw ParseError(std::string("'") + field + "' must be an array", line);
  if (rows.size() != expected_rows) {
    throw SchemaError("line " + std::to_string(line) + ": '" + field + "' has " + std::to_string(rows.size()) +
                      " rows, expected " + std::to_string(expected_rows));
  }
  std::vector<double> data;
  data.reserve(expected_rows * width);
  for (const auto& row : rows) {
    if (!row.is_array()) throw ParseError(std::string("'") + field + "' rows must be arrays", line);
    if (row.size() != width) {
      throw SchemaError("line " + std::to_string(line) + ": '" + field + "' row width " + std::to_string(row.size()) +
                        " differs from declared width " + std::to_string(width));
    }
    for (const auto& v : row) {
      if (!v.is_number()) throw ParseError(std::string("'") + field + "' entries must be numbers", line);
      data.push_back(v.get<double>());
    }
  }
  return Tensor(Shape{expected_rows, width}, std::move(data));
}

void write_matrix(std::ostream& out, const Tensor& m) {
  out << '[';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (r > 0) out << ',';
    out << '[';
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c > 0) out << ',';
      out << format_exact(m.at(r, c));
    }
    out << ']';
  }
  out << ']';
}

double row_norm(const Tensor& m, std::size_t r) {
  double s = 0.0;
  for (std::size_t c = 0; c < m.cols(); ++c) s += m.at(r, c) * m.at(r, c);
  return std::sqrt(s);
}

Tensor normal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t(Shape{rows, cols});
  for (double& v : t.data()) v = normal(rng);
  return t;
}

// Uniform random labelled tree on n nodes via a random Prüfer sequence.
std::vector<Edge> random_tree(std::size_t n, Rng& rng) {
  std::vector<Edge> edges;
  if (n < 2) return edges;
  if (n == 2) return {Edge{0, 1}};
  std::vector<std::size_t> code(n - 2);
  for (auto& c : code) c = uniform_index(rng, n);
  std::vector<std::size_t> degree(n, 1);
  for (auto c : code) ++degree[c];
  for (auto c : code) {
    std::size_t leaf = 0;
    while (degree[leaf] != 1) ++leaf;
    edges.emplace_back(std::min(leaf, c), std::max(leaf, c));
    --degree[leaf];
    --degree[c];
  }
  std::size_t u = n, v = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (degree[i] == 1) (u == n ? u : v) = i;
  }
  edges.emplace_back(std::min(u, v), std::max(u, v));
  return edges;
}

}  // namespace

void validate_graph(const Graph& g, std::size_t d_node, std::size_t d_edge, bool has_coords, std::size_t num_tasks) {
  const std::string where = "graph '" + g.id + "': ";
  if (g.node_feats.shape() != Shape{g.num_nodes, d_node}) throw SchemaError(where + "node feature shape mismatch");
  if (g.edge_feats.shape() != Shape{g.edges.size(), d_edge}) throw SchemaError(where + "edge feature shape mismatch");
  if (g.coords.has_value() != has_coords) throw SchemaError(where + "coordinate presence differs from header");
  if (g.coords && g.coords->shape() != Shape{g.num_nodes, 3}) throw SchemaError(where + "coords must be num_nodes x 3");
  if (g.targets.size() != num_tasks) throw SchemaError(where + "target count differs from task count");
  std::set<Edge> seen;
  for (const auto& [i, j] : g.edges) {
    if (i >= g.num_nodes || j >= g.num_nodes) throw SchemaError(where + "edge endpoint out of range");
    if (i == j) throw SchemaError(where + "self-loop");
    if (i > j) throw SchemaError(where + "edge endpoints must be ordered i < j");
    if (!seen.insert({i, j}).second) {
      throw SchemaError(where + "duplicate edge (" + std::to_string(i) + ", " + std::to_string(j) + ")");
    }
  }
  if (!g.node_feats.all_finite() || !g.edge_feats.all_finite() || (g.coords && !g.coords->all_finite())) {
    throw SchemaError(where + "non-finite feature value");
  }
  for (double t : g.targets) {
    if (!std::isfinite(t)) throw SchemaError(where + "non-finite target");
  }
}

void validate_dataset(const Dataset& ds) {
  for (const Graph& g : ds.graphs) validate_graph(g, ds.d_node, ds.d_edge, ds.has_coords, ds.num_tasks());
}

Dataset parse_dataset(std::istream& in) {
  Dataset ds;
  std::string text;
  std::size_t line = 0;
  bool have_header = false;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line);
    }
    if (!record.is_object()) throw ParseError("record must be a JSON object", line);
    try {
      if (!have_header) {
        if (record.value("format", std::string()) != kFormatTag) {
          throw ParseError(std::string("header must declare format '") + kFormatTag + "'", line);
        }
        ds.task_names = record.at("task_names").get<std::vector<std::string>>();
        ds.d_node = record.at("d_node").get<std::size_t>();
        ds.d_edge = record.at("d_edge").get<std::size_t>();
        ds.has_coords = record.at("has_coords").get<bool>();
        have_header = true;
        continue;
      }
      Graph g;
      g.id = record.at("id").get<std::string>();
      g.num_nodes = record.at("num_nodes").get<std::size_t>();
      g.node_feats = parse_matrix(record.at("node_feats"), g.num_nodes, ds.d_node, "node_feats", line);
      const json& edges = record.at("edges");
      if (!edges.is_array()) throw ParseError("'edges' must be an array", line);
      for (const auto& e : edges) {
        if (!e.is_array() || e.size() != 2) throw ParseError("each edge must be a pair", line);
        g.edges.emplace_back(e[0].get<std::size_t>(), e[1].get<std::size_t>());
      }
      g.edge_feats = parse_matrix(record.at("edge_feats"), g.edges.size(), ds.d_edge, "edge_feats", line);
      if (record.contains("coords")) {
        if (!ds.has_coords) throw SchemaError("line " + std::to_string(line) + ": coords present but header says none");
        g.coords = parse_matrix(record.at("coords"), g.num_nodes, 3, "coords", line);
      } else if (ds.has_coords) {
        throw SchemaError("line " + std::to_string(line) + ": coords missing but header requires them");
      }
      g.targets = record.at("targets").get<std::vector<double>>();
      try {
        validate_graph(g, ds.d_node, ds.d_edge, ds.has_coords, ds.num_tasks());
      } catch (const SchemaError& e) {
        throw SchemaError("line " + std::to_string(line) + ": " + e.what());
      }
      ds.graphs.push_back(std::move(g));
    } catch (const json::exception& e) {
      throw ParseError(std::string("malformed record: ") + e.what(), line);
    }
  }
  if (!have_header) throw ParseError("missing header line", line);
  return ds;
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  return parse_dataset(in);
}

void write_dataset(const Dataset& ds, std::ostream& out) {
  json header;
  header["format"] = kFormatTag;
  header["task_names"] = ds.task_names;
  header["d_node"] = ds.d_node;
  header["d_edge"] = ds.d_edge;
  header["has_coords"] = ds.has_coords;
  out << header.dump() << '\n';
  for (const Graph& g : ds.graphs) {
    out << "{\"id\":" << json(g.id).dump() << ",\"num_nodes\":" << g.num_nodes << ",\"node_feats\":";
    write_matrix(out, g.node_feats);
    out << ",\"edges\":[";
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      if (e > 0) out << ',';
      out << '[' << g.edges[e].first << ',' << g.edges[e].second << ']';
    }
    out << "],\"edge_feats\":";
    write_matrix(out, g.edge_feats);
    if (g.coords) {
      out << ",\"coords\":";
      write_matrix(out, *g.coords);
    }
    out << ",\"targets\":[";
    for (std::size_t t = 0; t < g.targets.size(); ++t) {
      if (t > 0) out << ',';
      out << format_exact(g.targets[t]);
    }
    out << "]}\n";
  }
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset '" + path + "'");
  write_dataset(ds, out);
  if (!out) throw IoError("write failed for '" + path + "'");
}

Split split_dataset(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  const std::size_t n = ds.graphs.size();
  if (n < 2) throw ContractError("split_dataset: need at least 2 graphs");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ContractError("split_dataset: train fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  order = sample_without_replacement(order, n, rng);
  const auto n_train = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * train_fraction));
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return s;
}

Normalizer zscore_fit_values(std::span<const double> labels) {
  if (labels.size() < 2) throw DegenerateDataError("zscore_fit: need at least 2 labels");
  double mean = 0.0;
  for (double y : labels) mean += y;
  mean /= static_cast<double>(labels.size());
  double var = 0.0;
  for (double y : labels) var += (y - mean) * (y - mean);
  var /= static_cast<double>(labels.size());
  const double std = std::sqrt(var);
  if (!(std > 0.0)) throw DegenerateDataError("zscore_fit: labels have zero standard deviation");
  return Normalizer{mean, std};
}

Normalizer zscore_fit(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<double> pooled;
  pooled.reserve(indices.size() * ds.num_tasks());
  for (std::size_t i : indices) {
    const auto& t = ds.graphs.at(i).targets;
    pooled.insert(pooled.end(), t.begin(), t.end());
  }
  return zscore_fit_values(pooled);
}

SupportBatch make_batch_labels(const Dataset& ds, std::vector<std::size_t> graphs, std::size_t target_index,
                               const Normalizer& norm) {
  if (target_index >= ds.num_tasks()) throw ContractError("target index out of range");
  SupportBatch batch;
  batch.target_index = target_index;
  batch.labels.reserve(graphs.size());
  for (std::size_t g : graphs) batch.labels.push_back(norm.apply(ds.graphs.at(g).targets[target_index]));
  batch.graphs = std::move(graphs);
  return batch;
}

SupportBatch sample_support(const Dataset& ds, const Task& task, std::size_t k, const Normalizer& norm, Rng& rng) {
  if (k < 1) throw ContractError("sample_support: K must be >= 1");
  if (task.pool.size() < k) {
    throw ContractError("sample_support: split holds " + std::to_string(task.pool.size()) + " graphs, fewer than K=" +
                        std::to_string(k));
  }
  std::vector<std::size_t> pool(task.pool.begin(), task.pool.end());
  return make_batch_labels(ds, sample_without_replacement(pool, k, rng), task.target_index, norm);
}

std::vector<double> graph_summary(const Graph& g, std::size_t nodes_max) {
  std::vector<double> s(6, 0.0);
  const std::size_t n = g.num_nodes;
  if (n > 0 && g.node_feats.cols() > 0) {
    double total = 0.0, best = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double norm = row_norm(g.node_feats, r);
      total += norm;
      best = std::max(best, norm);
    }
    s[0] = total / static_cast<double>(n);
    s[1] = best;
  }
  if (n > 0) s[2] = static_cast<double>(g.edges.size()) / static_cast<double>(n);
  if (!g.edges.empty() && g.edge_feats.cols() > 0) {
    double total = 0.0;
    for (std::size_t e = 0; e < g.edges.size(); ++e) total += row_norm(g.edge_feats, e);
    s[3] = total / static_cast<double>(g.edges.size());
  }
  if (g.coords && n >= 2) {
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
          const double d = g.coords->at(i, c) - g.coords->at(j, c);
          d2 += d * d;
        }
        total += std::sqrt(d2);
        ++pairs;
      }
    }
    s[4] = total / static_cast<double>(pairs);
  }
  s[5] = static_cast<double>(n) / static_cast<double>(std::max<std::size_t>(nodes_max, 1));
  return s;
}

Dataset synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.num_tasks < 2) throw ContractError("synth_generate: need at least 2 tasks");
  if (spec.nodes_min > spec.nodes_max) throw ContractError("synth_generate: nodes_min exceeds nodes_max");
  if (spec.nodes_min < 1) throw ContractError("synth_generate: graphs need at least one node");

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Task family: coefficients share a common centre, so tasks are correlated.
  constexpr std::size_t kSummaryDim = 6;
  std::vector<double> centre(kSummaryDim);
  for (double& c : centre) c = normal(rng);
  std::vector<std::vector<double>> coeff(spec.num_tasks, std::vector<double>(kSummaryDim));
  std::vector<double> offset(spec.num_tasks);
  for (std::size_t t = 0; t < spec.num_tasks; ++t) {
    for (std::size_t k = 0; k < kSummaryDim; ++k) coeff[t][k] = centre[k] + spec.task_spread * normal(rng);
    offset[t] = spec.offset_scale * normal(rng);
  }

  Dataset ds;
  ds.d_node = spec.d_node;
  ds.d_edge = spec.d_edge;
  ds.has_coords = spec.coords;
  for (std::size_t t = 0; t < spec.num_tasks; ++t) ds.task_names.push_back("task_" + std::to_string(t));

  for (std::size_t gi = 0; gi < spec.num_graphs; ++gi) {
    Graph g;
    g.id = "g" + std::to_string(gi);
    g.num_nodes = spec.nodes_min + uniform_index(rng, spec.nodes_max - spec.nodes_min + 1);
    const std::size_t n = g.num_nodes;

    g.edges = random_tree(n, rng);
    std::set<Edge> present(g.edges.begin(), g.edges.end());
    std::vector<Edge> absent;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!present.count({i, j})) absent.emplace_back(i, j);
      }
    }
    const std::size_t extra = std::min(absent.size(), uniform_index(rng, n / 2 + 1));
    for (const Edge& e : sample_without_replacement(absent, extra, rng)) g.edges.push_back(e);
    std::sort(g.edges.begin(), g.edges.end());

    g.node_feats = normal_matrix(n, spec.d_node, rng);
    g.edge_feats = normal_matrix(g.edges.size(), spec.d_edge, rng);
    if (spec.coords) g.coords = normal_matrix(n, 3, rng);

    const auto s = graph_summary(g, spec.nodes_max);
    g.targets.resize(spec.num_tasks);
    for (std::size_t t = 0; t < spec.num_tasks; ++t) {
      double y = offset[t];
      for (std::size_t k = 0; k < kSummaryDim; ++k) y += coeff[t][k] * s[k];
      g.targets[t] = y;
    }
    ds.graphs.push_back(std::move(g));
  }
  return ds;
}

}  // namespace metagnn
