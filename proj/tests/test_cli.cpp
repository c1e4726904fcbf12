#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "metagnn/cli.hpp"
#include "metagnn/eval.hpp"
#include "metagnn/model.hpp"

using namespace metagnn;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "metagnn");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

void make_data(const TempDir& dir, const std::string& name, bool coords = false) {
  std::vector<std::string> args{"synth", "--graphs", "60", "--tasks", "4", "--seed", "5", "--out", dir / name};
  if (coords) args.push_back("--coords");
  REQUIRE(cli(args).code == 0);
}

}  // namespace

TEST_CASE("synth writes a loadable dataset") {
  TempDir dir("metagnn_cli_synth");
  Result r = cli({"synth", "--graphs", "30", "--tasks", "3", "--nodes-min", "4", "--nodes-max", "6", "--d-node",
                  "2", "--d-edge", "1", "--coords", "--seed", "9", "--out", dir / "d.jsonl"});
  CHECK(r.code == 0);
  SynthSpec spec;
  spec.num_graphs = 30;
  spec.num_tasks = 3;
  spec.nodes_min = 4;
  spec.nodes_max = 6;
  spec.d_node = 2;
  spec.d_edge = 1;
  spec.coords = true;
  CHECK(load_dataset(dir / "d.jsonl") == synth_generate(spec, 9));
  CHECK(cli({"synth", "--nodes-min", "9", "--nodes-max", "3", "--out", dir / "bad.jsonl"}).code == 1);
  CHECK(!fs::exists(dir / "bad.jsonl"));
}

TEST_CASE("train with zero epochs returns the initialization") {
  TempDir dir("metagnn_cli_train0");
  make_data(dir, "d.jsonl");
  Result r = cli({"train", "--data", dir / "d.jsonl", "--arch", "gat", "--hidden-dim", "8", "--epochs", "0",
                  "--seed", "42", "--out", dir / "run"});
  REQUIRE(r.code == 0);
  ModelDocument doc = load_model(dir / "run/params.json");
  Dataset ds = load_dataset(dir / "d.jsonl");
  CHECK(doc.model == model_init(Architecture{ArchKind::kGat, 8, 3, ds.d_node, ds.d_edge}, 42));
  CHECK(doc.hyperparams.at("seed").get<int>() == 42);
  CHECK(doc.hyperparams.at("split_seed").get<int>() == 0);
  CHECK(doc.hyperparams.at("alpha").get<double>() == 5e-3);
  CHECK(slurp(dir / "run/train_log.csv") == "iteration,task,loss_pre,loss_post\n");
}

TEST_CASE("train, eval and report are reproducible") {
  TempDir dir("metagnn_cli_pipeline");
  make_data(dir, "d.jsonl");
  const std::vector<std::string> train{"train", "--data", dir / "d.jsonl", "--hidden-dim", "8", "--epochs", "30",
                                       "--holdout-task", "1", "--seed", "3", "--split-seed", "2",
                                       "--train-fraction", "0.6"};
  auto with_out = [](std::vector<std::string> v, const std::string& out) {
    v.push_back("--out");
    v.push_back(out);
    return v;
  };
  REQUIRE(cli(with_out(train, dir / "a")).code == 0);
  REQUIRE(cli(with_out(train, dir / "b")).code == 0);
  CHECK(slurp(dir / "a/params.json") == slurp(dir / "b/params.json"));
  CHECK(slurp(dir / "a/train_log.csv") == slurp(dir / "b/train_log.csv"));
  REQUIRE(cli(with_out({"train", "--data", dir / "d.jsonl", "--hidden-dim", "8", "--epochs", "30", "--holdout-task",
                        "1", "--seed", "4", "--split-seed", "2", "--train-fraction", "0.6"},
                       dir / "c"))
              .code == 0);

  const std::vector<std::string> eval{"eval", "--params", dir / "a/params.json", "--data", dir / "d.jsonl",
                                      "--task", "1", "--trials", "8", "--support", "5", "--seed", "11"};
  REQUIRE(cli(with_out(eval, dir / "meta1.csv")).code == 0);
  Result again = cli(with_out(eval, dir / "meta1b.csv"));
  REQUIRE(again.code == 0);
  CHECK(again.out.find("gcn / meta on task_1 (8 trials)") != std::string::npos);
  CHECK(slurp(dir / "meta1.csv") == slurp(dir / "meta1b.csv"));
  CHECK(fs::exists(dir / "meta1.support.csv"));

  std::vector<std::string> parallel = with_out(eval, dir / "meta1p.csv");
  parallel.insert(parallel.end(), {"--jobs", "3"});
  REQUIRE(cli(parallel).code == 0);
  CHECK(slurp(dir / "meta1.csv") == slurp(dir / "meta1p.csv"));

  std::vector<std::string> meta0 = with_out(eval, dir / "meta0.csv");
  meta0[6] = "0";
  REQUIRE(cli(meta0).code == 0);
  REQUIRE(cli({"eval", "--random-init", "--arch", "gcn", "--hidden-dim", "8", "--data", dir / "d.jsonl", "--task",
               "1", "--trials", "8", "--support", "5", "--seed", "11", "--split-seed", "2", "--train-fraction",
               "0.6", "--out", dir / "random1.csv"})
              .code == 0);
  std::ifstream rf(dir / "random1.csv");
  CHECK(parse_report_csv(rf).front().init == "random");

  REQUIRE(cli({"ensemble-eval", "--params", dir / "a/params.json" + "," + dir / "c/params.json", "--agg", "learned",
               "--data", dir / "d.jsonl", "--task", "1", "--trials", "4", "--support", "5", "--out",
               dir / "ens.csv"})
              .code == 0);
  std::ifstream ef(dir / "ens.csv");
  CHECK(parse_report_csv(ef).front().init == "ensemble-learned-M2");

  Result rep = cli({"report", "--inputs", dir / "meta0.csv", dir / "meta1.csv", dir / "random1.csv", "--exclude",
                    "task_0", "--out", dir / "table.csv"});
  REQUIRE(rep.code == 0);
  std::ifstream tf(dir / "table.csv");
  std::vector<ReportRow> rows = parse_report_csv(tf);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].init == "meta");
  CHECK(rows[0].task == "mean over 1 tasks");
  std::ifstream m1(dir / "meta1.csv");
  CHECK(rows[0].step5_mean == parse_report_csv(m1).front().step5_mean);
  CHECK(rows[1].init == "random");
}

TEST_CASE("validation failures leave no output") {
  TempDir dir("metagnn_cli_invalid");
  make_data(dir, "d.jsonl");
  CHECK(cli({"train", "--data", dir / "d.jsonl", "--arch", "lstm", "--out", dir / "x"}).code == 1);
  CHECK(cli({"train", "--data", dir / "d.jsonl", "--holdout-task", "4", "--out", dir / "x"}).code == 1);
  CHECK(cli({"train", "--data", dir / "d.jsonl", "--beta", "0", "--out", dir / "x"}).code == 1);
  CHECK(cli({"train", "--data", dir / "d.jsonl", "--support", "100", "--out", dir / "x"}).code == 1);
  CHECK(cli({"train", "--data", dir / "d.jsonl", "--arch", "egnn", "--out", dir / "x"}).code == 1);
  CHECK(!fs::exists(dir / "x"));

  CHECK(cli({"eval", "--random-init", "--arch", "gcn", "--data", dir / "d.jsonl", "--task", "9", "--out",
             dir / "r.csv"})
            .code == 1);
  CHECK(cli({"eval", "--random-init", "--arch", "gcn", "--data", dir / "d.jsonl", "--support", "4", "--out",
             dir / "r.csv"})
            .code == 1);
  CHECK(cli({"eval", "--data", dir / "d.jsonl", "--out", dir / "r.csv"}).code == 1);
  CHECK(!fs::exists(dir / "r.csv"));
  CHECK(cli({"frobnicate"}).code == 1);
  CHECK(cli({}).code == 1);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("input and output failures exit with 3") {
  TempDir dir("metagnn_cli_io");
  CHECK(cli({"train", "--data", dir / "missing.jsonl", "--out", dir / "x"}).code == 3);
  CHECK(cli({"eval", "--params", dir / "missing.json", "--data", dir / "missing.jsonl", "--out", dir / "r.csv"})
            .code == 3);
  CHECK(cli({"synth", "--out", dir / "no/such/dir/d.jsonl"}).code == 3);
  CHECK(cli({"report", "--inputs", dir / "missing.csv", "--out", dir / "t.csv"}).code == 3);
  std::ofstream(dir / "broken.jsonl") << "{not json\n";
  CHECK(cli({"train", "--data", dir / "broken.jsonl", "--out", dir / "x"}).code == 1);
}

TEST_CASE("divergence exits with 2") {
  TempDir dir("metagnn_cli_diverge");
  make_data(dir, "d.jsonl");
  Result r = cli({"train", "--data", dir / "d.jsonl", "--hidden-dim", "8", "--epochs", "5", "--alpha", "1e12",
                  "--out", dir / "x"});
  CHECK(r.code == 2);
  CHECK(r.err.find("diverged") != std::string::npos);
}

TEST_CASE("check subcommands") {
  Result g = cli({"gradcheck", "--arch", "gcn", "--tolerance", "1e-4"});
  CHECK(g.code == 0);
  CHECK(g.out.find("PASS") != std::string::npos);
  CHECK(cli({"gradcheck", "--arch", "gcn", "--tolerance", "1e-30"}).code == 1);
  for (const char* arch : {"gcn", "gat", "mpnn", "egnn"}) {
    Result r = cli({"invariants", "--arch", arch, "--seed", "4"});
    INFO(r.out);
    CHECK(r.code == 0);
  }
  CHECK(cli({"invariants", "--arch", "cnn"}).code == 1);
}
