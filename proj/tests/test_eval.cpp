#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "metagnn/error.hpp"
#include "metagnn/eval.hpp"
#include "metagnn/format.hpp"

using namespace metagnn;

namespace {

struct Fixture {
  Dataset ds;
  Split split;
  Normalizer norm;
  Architecture arch;

  Fixture() {
    SynthSpec spec;
    spec.num_graphs = 60;
    spec.num_tasks = 3;
    ds = synth_generate(spec, 23);
    split = split_dataset(ds, 0.5, 4);
    norm = zscore_fit(ds, split.train);
    arch = Architecture{ArchKind::kGcn, 8, 3, ds.d_node, ds.d_edge};
  }

  Task test_task(std::size_t t) const { return Task{t, split.test}; }
};

Protocol quick(std::size_t trials) {
  Protocol p;
  p.support_size = 5;
  p.trials = trials;
  p.seed = 3;
  return p;
}

ReportRow row(const std::string& task, double base) {
  return ReportRow{"gcn", "meta", task, 100, base, base / 10, base / 2, base / 20, base / 4, base / 40};
}

}  // namespace

TEST_CASE("k-shot trial curves") {
  Fixture f;
  ModelParams mp = model_init(f.arch, 1);
  Rng a(5);
  TrialCurve none = kshot_trial(mp, f.ds, f.test_task(0), f.norm, 5, 5e-3, 0, a);
  CHECK(none.query.size() == 1);
  CHECK(none.support.size() == 1);

  Rng b(5);
  TrialCurve frozen = kshot_trial(mp, f.ds, f.test_task(0), f.norm, 5, 0.0, 5, b);
  REQUIRE(frozen.query.size() == 6);
  for (double q : frozen.query) CHECK(q == frozen.query[0]);
  for (double s : frozen.support) CHECK(s == frozen.support[0]);
  CHECK(frozen.query[0] == none.query[0]);

  Rng c(5);
  TrialCurve moving = kshot_trial(mp, f.ds, f.test_task(0), f.norm, 5, 5e-3, 5, c);
  CHECK(moving.query[0] == frozen.query[0]);
  CHECK(moving.support[5] < moving.support[0]);

  Rng d(1);
  CHECK_THROWS_AS(kshot_trial(mp, f.ds, Task{0, std::span(f.split.test).first(9)}, f.norm, 5, 5e-3, 5, d),
                  ContractError);
}

TEST_CASE("support and query batches are disjoint") {
  Fixture f;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng = child_rng(seed, 0);
    SupportBatch both = sample_support(f.ds, f.test_task(1), 10, f.norm, rng);
    std::set<std::size_t> support(both.graphs.begin(), both.graphs.begin() + 5);
    for (std::size_t i = 5; i < 10; ++i) CHECK(!support.contains(both.graphs[i]));
  }
}

TEST_CASE("a perfect model has an all-zero curve") {
  Fixture f;
  for (Graph& g : f.ds.graphs) g.targets[2] = 3.0;
  const Normalizer n{1.0, 2.0};
  // All weights zero: every layer outputs its bias, so the prediction is the last bias.
  ModelParams mp = model_init(f.arch, 1);
  for (auto& [name, t] : mp.params) {
    for (double& v : t.data()) v = 0.0;
  }
  mp.params.at("gcn2.bias")[0] = 1.0;
  Rng rng(2);
  TrialCurve c = kshot_trial(mp, f.ds, f.test_task(2), n, 5, 5e-3, 5, rng);
  CHECK(c.query == std::vector<double>(6, 0.0));
  CHECK(c.support == std::vector<double>(6, 0.0));
}

TEST_CASE("evaluation statistics") {
  Fixture f;
  ModelParams mp = model_init(f.arch, 2);
  EvalReport one = evaluate(mp, f.ds, f.test_task(1), f.norm, quick(1), "gcn", "meta");
  Rng rng = child_rng(3, 0);
  TrialCurve c = kshot_trial(mp, f.ds, f.test_task(1), f.norm, 5, 5e-3, 5, rng);
  CHECK(one.trials == 1);
  CHECK(one.task == "task_1");
  CHECK(one.query_mean == c.query);
  CHECK(one.support_mean == c.support);
  CHECK(one.query_std == std::vector<double>(6, 0.0));

  Protocol p = quick(12);
  EvalReport serial = evaluate(mp, f.ds, f.test_task(1), f.norm, p, "gcn", "meta");
  p.jobs = 4;
  EvalReport parallel = evaluate(mp, f.ds, f.test_task(1), f.norm, p, "gcn", "meta");
  CHECK(serial.query_mean == parallel.query_mean);
  CHECK(serial.query_std == parallel.query_std);
  CHECK(serial.support_std == parallel.support_std);

  std::vector<double> step5;
  for (std::size_t t = 0; t < 12; ++t) {
    Rng r = child_rng(3, t);
    step5.push_back(kshot_trial(mp, f.ds, f.test_task(1), f.norm, 5, 5e-3, 5, r).query[5]);
  }
  auto [m, s] = mean_std(step5);
  CHECK(serial.query_mean[5] == m);
  CHECK(serial.query_std[5] == s);

  p.trials = 0;
  CHECK_THROWS_AS(evaluate(mp, f.ds, f.test_task(1), f.norm, p, "gcn", "meta"), ContractError);
  CHECK_THROWS_AS(evaluate(mp, f.ds, f.test_task(7), f.norm, quick(1), "gcn", "meta"), ContractError);
}

TEST_CASE("population mean and standard deviation") {
  const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
  auto [m, s] = mean_std(v);
  CHECK(m == 5.0);
  CHECK(s == 2.0);
  CHECK_THROWS_AS(mean_std(std::vector<double>{}), ContractError);
}

TEST_CASE("random-init baseline") {
  Fixture f;
  Protocol p = quick(6);
  EvalReport a = baseline_random(f.arch, f.ds, f.test_task(0), f.norm, p);
  EvalReport b = baseline_random(f.arch, f.ds, f.test_task(0), f.norm, p);
  CHECK(a.query_mean == b.query_mean);
  CHECK(a.model == "gcn");
  CHECK(a.init == "random");

  // Each trial starts from its own initialization seeded by the trial's stream.
  Protocol single = quick(1);
  ModelParams first = model_init(f.arch, derive_seed(derive_seed(3, 0), 1));
  EvalReport one = baseline_random(f.arch, f.ds, f.test_task(0), f.norm, single);
  CHECK(one.query_mean == evaluate(first, f.ds, f.test_task(0), f.norm, single, "gcn", "meta").query_mean);
  CHECK(one.query_mean != evaluate(model_init(f.arch, 3), f.ds, f.test_task(0), f.norm, single, "gcn", "meta").query_mean);

  p.alpha = 0.0;
  EvalReport still = baseline_random(f.arch, f.ds, f.test_task(0), f.norm, p);
  for (double q : still.query_mean) CHECK(q == still.query_mean[0]);
}

TEST_CASE("ensembles run through the same protocol") {
  Fixture f;
  Ensemble e = ensemble_init({model_init(f.arch, 1), model_init(f.arch, 2)}, EnsembleMode::kLearned);
  Protocol p = quick(4);
  EvalReport r = evaluate(e, f.ds, f.test_task(2), f.norm, p, "gcn", "ensemble-learned");
  CHECK(r.query_mean.size() == 6);
  Ensemble avg = e;
  avg.mode = EnsembleMode::kAverage;
  EvalReport ra = evaluate(avg, f.ds, f.test_task(2), f.norm, p, "gcn", "ensemble-average");
  CHECK(ra.query_mean[0] == r.query_mean[0]);
  p.weight_lr = 0.0;
  EvalReport frozen = evaluate(e, f.ds, f.test_task(2), f.norm, p, "gcn", "ensemble-learned");
  CHECK(frozen.query_mean == ra.query_mean);
}

TEST_CASE("report rows pick the pre-update, one-step and five-step columns") {
  EvalReport r{"gcn", "meta", "t", 3, {9, 8, 7, 6, 5, 4, 3}, {0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3}, {1, 2}, {0, 0}};
  ReportRow q = to_row(r);
  CHECK(q.pre_mean == 9);
  CHECK(q.step1_mean == 8);
  CHECK(q.step5_mean == 4);
  CHECK(q.step5_std == 0.4);
  ReportRow s = to_support_row(r);
  CHECK(s.pre_mean == 1);
  CHECK(s.step1_mean == 2);
  CHECK(s.step5_mean == 2);

  EvalReport flat{"gcn", "meta", "t", 3, {9}, {0.5}, {1}, {0}};
  ReportRow z = to_row(flat);
  CHECK(z.step1_mean == 9);
  CHECK(z.step5_std == 0.5);
}

TEST_CASE("aggregation across tasks") {
  std::vector<ReportRow> rows;
  for (int i = 0; i < 12; ++i) rows.push_back(row("p" + std::to_string(i), 0.1 * (i + 1)));
  const std::vector<std::string> exclude{"p4"};
  ReportRow agg = aggregate_across_tasks(rows, exclude);
  // Column sums of 0.1·(1..12) without the fifth entry: 7.8 − 0.5 = 7.3, over 11 tasks.
  CHECK(agg.task == "mean over 11 tasks");
  CHECK(agg.trials == 100);
  CHECK(agg.model == "gcn");
  CHECK(agg.pre_mean == doctest::Approx(7.3 / 11).epsilon(1e-14));
  CHECK(agg.pre_std == doctest::Approx(0.73 / 11).epsilon(1e-14));
  CHECK(agg.step1_mean == doctest::Approx(3.65 / 11).epsilon(1e-14));
  CHECK(agg.step1_std == doctest::Approx(0.365 / 11).epsilon(1e-14));
  CHECK(agg.step5_mean == doctest::Approx(1.825 / 11).epsilon(1e-14));
  CHECK(agg.step5_std == doctest::Approx(0.1825 / 11).epsilon(1e-14));

  ReportRow single = aggregate_across_tasks(std::span(rows).first(1), {});
  CHECK(single.pre_mean == rows[0].pre_mean);
  CHECK(single.step5_std == rows[0].step5_std);

  std::vector<ReportRow> same{row("a", 0.3), row("b", 0.3), row("c", 0.3)};
  ReportRow s = aggregate_across_tasks(same, {});
  CHECK(s.step1_mean == doctest::Approx(0.15).epsilon(1e-15));

  std::vector<ReportRow> mixed{row("a", 1), row("b", 1)};
  mixed[1].init = "random";
  mixed[1].trials = 5;
  ReportRow m = aggregate_across_tasks(mixed, {});
  CHECK(m.init == "mixed");
  CHECK(m.trials == 0);

  const std::vector<std::string> everything{"a", "b"};
  CHECK_THROWS_AS(aggregate_across_tasks(mixed, everything), ContractError);
  std::vector<ReportRow> dup{row("a", 1), row("a", 2)};
  CHECK_THROWS_AS(aggregate_across_tasks(dup, {}), ContractError);
}

TEST_CASE("report csv round trip") {
  std::vector<ReportRow> rows{row("dipole, moment", 0.382), row("plain", 1.33e-3)};
  rows[0].init = "say \"hi\"";
  std::ostringstream out;
  write_report_csv(rows, out);
  const std::string text = out.str();
  CHECK(text.rfind("model,init,task,trials,pre_mean,pre_std,step1_mean,step1_std,step5_mean,step5_std\n", 0) == 0);
  CHECK(text.find("3.82e-1,3.82e-2,1.91e-1") != std::string::npos);
  std::istringstream in(text);
  std::vector<ReportRow> back = parse_report_csv(in);
  REQUIRE(back.size() == 2);
  CHECK(back[0].task == "dipole, moment");
  CHECK(back[0].init == "say \"hi\"");
  CHECK(back[1].pre_mean == 1.33e-3);
  CHECK(back[1].step5_mean == std::stod(format_sci3(1.33e-3 / 4)));

  std::istringstream bad_header("a,b\n");
  CHECK_THROWS_AS(parse_report_csv(bad_header), ParseError);
  std::istringstream short_row(text + "x,y\n");
  try {
    parse_report_csv(short_row);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
  }
  std::istringstream nan_row(text + "m,i,t,1,abc,0,0,0,0,0\n");
  CHECK_THROWS_AS(parse_report_csv(nan_row), ParseError);
}
