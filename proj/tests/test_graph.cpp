#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "metagnn/error.hpp"
#include "metagnn/graph.hpp"

using namespace metagnn;

namespace {

const char* kHeader = R"({"format":"meta-gnn-graphs-v1","task_names":["a","b"],"d_node":1,"d_edge":0,"has_coords":false})";

Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return parse_dataset(in);
}

bool connected(const Graph& g) {
  std::vector<std::size_t> parent(g.num_nodes);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (auto [i, j] : g.edges) parent[find(i)] = find(j);
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    if (find(i) != find(0)) return false;
  }
  return true;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("load a single two-node graph") {
  Dataset ds = parse(std::string(kHeader) + "\n" +
                     R"({"id":"m0","num_nodes":2,"node_feats":[[1.5],[2]],"edges":[[0,1]],"edge_feats":[[]],"targets":[3,4]})" +
                     "\n");
  CHECK(ds.graphs.size() == 1);
  CHECK(ds.num_tasks() == 2);
  CHECK(ds.graphs[0].edges == std::vector<Edge>{{0, 1}});
  CHECK(ds.graphs[0].node_feats.at(0, 0) == 1.5);
}

TEST_CASE("schema violations are rejected") {
  const std::string dup = R"({"id":"m","num_nodes":2,"node_feats":[[1],[2]],"edges":[[0,1],[0,1]],"edge_feats":[[],[]],"targets":[1,2]})";
  CHECK_THROWS_AS(parse(std::string(kHeader) + "\n" + dup), SchemaError);
  const std::string loop = R"({"id":"m","num_nodes":2,"node_feats":[[1],[2]],"edges":[[1,1]],"edge_feats":[[]],"targets":[1,2]})";
  CHECK_THROWS_AS(parse(std::string(kHeader) + "\n" + loop), SchemaError);
  const std::string range = R"({"id":"m","num_nodes":2,"node_feats":[[1],[2]],"edges":[[0,5]],"edge_feats":[[]],"targets":[1,2]})";
  CHECK_THROWS_AS(parse(std::string(kHeader) + "\n" + range), SchemaError);
  const std::string width = R"({"id":"m","num_nodes":2,"node_feats":[[1,2],[2,3]],"edges":[],"edge_feats":[],"targets":[1,2]})";
  CHECK_THROWS_AS(parse(std::string(kHeader) + "\n" + width), SchemaError);
  const std::string tasks = R"({"id":"m","num_nodes":1,"node_feats":[[1]],"edges":[],"edge_feats":[],"targets":[1]})";
  CHECK_THROWS_AS(parse(std::string(kHeader) + "\n" + tasks), SchemaError);
}

TEST_CASE("parse errors carry the line number") {
  try {
    parse(std::string(kHeader) + "\n\n{not json}\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  try {
    parse(std::string(kHeader) + "\n" + R"({"id":"m","num_nodes":1})" + "\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(parse(""), ParseError);
  CHECK_THROWS_AS(load_dataset("/nonexistent/file.jsonl"), IoError);
}

TEST_CASE("synthetic dataset round-trips through the file format") {
  SynthSpec spec;
  spec.num_graphs = 200;
  spec.coords = true;
  Dataset ds = synth_generate(spec, 11);
  std::stringstream buf;
  write_dataset(ds, buf);
  Dataset back = parse_dataset(buf);
  CHECK(back == ds);

  spec.coords = false;
  spec.d_edge = 0;
  Dataset plain = synth_generate(spec, 12);
  std::stringstream buf2;
  write_dataset(plain, buf2);
  CHECK(parse_dataset(buf2) == plain);
}

TEST_CASE("split sizes and partition") {
  SynthSpec spec;
  spec.num_graphs = 10;
  Dataset ds = synth_generate(spec, 1);
  Split s = split_dataset(ds, 0.9, 5);
  CHECK(s.train.size() == 9);
  CHECK(s.test.size() == 1);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expect(10);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(all == expect);

  Split again = split_dataset(ds, 0.9, 5);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);

  CHECK_THROWS_AS(split_dataset(ds, 0.0, 1), ContractError);
  CHECK_THROWS_AS(split_dataset(ds, 1.0, 1), ContractError);
  Dataset one = synth_generate(SynthSpec{1, 3, 3, 2, 1, 2, false}, 1);
  CHECK_THROWS_AS(split_dataset(one, 0.5, 1), ContractError);
}

// Two independent halvings of 100 indices put each index on the same side with
// probability 1/2, so about 50 indices agree.
TEST_CASE("split agreement across seeds is about half") {
  SynthSpec spec;
  spec.num_graphs = 100;
  spec.nodes_min = 2;
  spec.nodes_max = 3;
  Dataset ds = synth_generate(spec, 1);
  const Split base = split_dataset(ds, 0.5, 0);
  const std::set<std::size_t> a(base.train.begin(), base.train.end());
  const std::set<std::size_t> a_test(base.test.begin(), base.test.end());
  double total = 0;
  bool differs = false;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Split s = split_dataset(ds, 0.5, seed);
    std::size_t overlap = 0;
    for (std::size_t i : s.train) overlap += a.count(i);
    for (std::size_t i : s.test) overlap += a_test.count(i);
    differs = differs || overlap != 50;
    total += static_cast<double>(overlap);
  }
  CHECK(differs);
  CHECK(total / 20.0 == doctest::Approx(50.0).epsilon(0.1));
}

TEST_CASE("zscore fit and round trip") {
  std::vector<double> labels{1, 2, 3};
  Normalizer n = zscore_fit_values(labels);
  CHECK(n.mean == 2.0);
  CHECK(n.std == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));
  CHECK(n.apply(2.0) == 0.0);
  CHECK(n.apply(n.mean + n.std) == doctest::Approx(1.0).epsilon(1e-15));

  std::vector<double> constant{4, 4, 4};
  CHECK_THROWS_AS(zscore_fit_values(constant), DegenerateDataError);
  std::vector<double> single{4};
  CHECK_THROWS_AS(zscore_fit_values(single), DegenerateDataError);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> d(5.0, 2.0);
  std::vector<double> draws(1000);
  for (double& v : draws) v = d(rng);
  Normalizer m = zscore_fit_values(draws);
  CHECK(m.mean == doctest::Approx(5.0).epsilon(0.05));
  CHECK(m.std == doctest::Approx(2.0).epsilon(0.05));
  double worst = 0;
  for (double v : draws) worst = std::max(worst, std::abs(m.invert(m.apply(v)) - v));
  CHECK(worst < 1e-12);
}

TEST_CASE("zscore pools every task of the train split") {
  SynthSpec spec;
  spec.num_graphs = 50;
  Dataset ds = synth_generate(spec, 4);
  Split s = split_dataset(ds, 0.9, 2);
  Normalizer n = zscore_fit(ds, s.train);
  double sum = 0, sq = 0, count = 0;
  for (std::size_t i : s.train) {
    for (double y : ds.graphs[i].targets) {
      const double z = n.apply(y);
      sum += z;
      sq += z * z;
      ++count;
    }
  }
  const double mean = sum / count;
  CHECK(std::abs(mean) < 1e-9);
  CHECK(std::abs(std::sqrt(sq / count - mean * mean) - 1.0) < 1e-9);
}

TEST_CASE("support sampling") {
  SynthSpec spec;
  spec.num_graphs = 30;
  Dataset ds = synth_generate(spec, 8);
  std::vector<std::size_t> pool{3, 5, 7, 9, 11, 13, 15, 17, 19, 21};
  Normalizer n = zscore_fit(ds, pool);
  Rng rng(1);
  Task task{2, pool};

  SupportBatch all = sample_support(ds, task, 10, n, rng);
  std::vector<std::size_t> sorted = all.graphs;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == pool);

  SupportBatch one = sample_support(ds, task, 1, n, rng);
  CHECK(one.graphs.size() == 1);

  for (int draw = 0; draw < 100; ++draw) {
    SupportBatch b = sample_support(ds, task, 6, n, rng);
    CHECK(std::set<std::size_t>(b.graphs.begin(), b.graphs.end()).size() == 6);
    for (std::size_t i = 0; i < b.graphs.size(); ++i) {
      CHECK(b.labels[i] == n.apply(ds.graphs[b.graphs[i]].targets[2]));
    }
  }
  CHECK_THROWS_AS(sample_support(ds, task, 11, n, rng), ContractError);
  CHECK_THROWS_AS(sample_support(ds, task, 0, n, rng), ContractError);
}

TEST_CASE("synthetic generator") {
  Dataset tiny = synth_generate(SynthSpec{1, 3, 3, 2, 1, 2, false}, 5);
  REQUIRE(tiny.graphs.size() == 1);
  CHECK(tiny.graphs[0].num_nodes == 3);
  CHECK(connected(tiny.graphs[0]));

  SynthSpec spec;
  spec.num_graphs = 500;
  spec.coords = true;
  Dataset ds = synth_generate(spec, 21);
  CHECK(ds == synth_generate(spec, 21));
  CHECK_NOTHROW(validate_dataset(ds));
  for (const Graph& g : ds.graphs) {
    CHECK(connected(g));
    CHECK(g.num_nodes >= 5);
    CHECK(g.num_nodes <= 15);
  }

  std::size_t strong = 0, pairs = 0;
  for (std::size_t a = 0; a < ds.num_tasks(); ++a) {
    for (std::size_t b = a + 1; b < ds.num_tasks(); ++b) {
      std::vector<double> x, y;
      for (const Graph& g : ds.graphs) {
        x.push_back(g.targets[a]);
        y.push_back(g.targets[b]);
      }
      strong += std::abs(pearson(x, y)) > 0.1;
      ++pairs;
    }
  }
  CHECK(2 * strong >= pairs);

  CHECK_THROWS_AS(synth_generate(SynthSpec{5, 6, 5, 2, 1, 2, false}, 1), ContractError);
  CHECK_THROWS_AS(synth_generate(SynthSpec{5, 3, 5, 2, 1, 1, false}, 1), ContractError);
}
