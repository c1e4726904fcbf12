#include "metagnn/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "metagnn/checks.hpp"
#include "metagnn/error.hpp"
#include "metagnn/eval.hpp"
#include "metagnn/format.hpp"
#include "metagnn/meta.hpp"

namespace metagnn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Prepared {
  Dataset ds;
  Split split;
  Normalizer norm;
};

Prepared prepare(const std::string& path, double train_fraction, std::uint64_t split_seed) {
  Prepared p;
  p.ds = load_dataset(path);
  p.split = split_dataset(p.ds, train_fraction, split_seed);
  p.norm = zscore_fit(p.ds, p.split.train);
  return p;
}

void require_parent_dir(const std::string& file) {
  const fs::path parent = fs::absolute(fs::path(file)).parent_path();
  if (!fs::is_directory(parent)) throw IoError("output directory '" + parent.string() + "' does not exist");
  if (fs::is_directory(fs::path(file))) throw IoError("output path '" + file + "' is a directory");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw IoError("failed writing '" + path + "'");
}

/// report.csv -> report.support.csv
std::string support_path(const std::string& out) {
  fs::path p(out);
  const std::string ext = p.has_extension() ? p.extension().string() : ".csv";
  return (p.parent_path() / (p.stem().string() + ".support" + ext)).string();
}

void check_compatible(const Architecture& arch, const Dataset& ds) {
  if (arch.d_node != ds.d_node || arch.d_edge != ds.d_edge) {
    throw ContractError("model expects d_node=" + std::to_string(arch.d_node) + ", d_edge=" +
                        std::to_string(arch.d_edge) + " but the dataset has d_node=" + std::to_string(ds.d_node) +
                        ", d_edge=" + std::to_string(ds.d_edge));
  }
  if (arch.kind == ArchKind::kEgnn && !ds.has_coords) throw ContractError("egnn needs a dataset with coordinates");
}

void check_task(std::size_t task, const Dataset& ds) {
  if (task >= ds.num_tasks()) {
    throw ContractError("task " + std::to_string(task) + " out of range for " + std::to_string(ds.num_tasks()) +
                        " tasks");
  }
}

void check_eval_pool(const Split& split, std::size_t support) {
  if (split.test.size() < 2 * support) {
    throw ContractError("test split holds " + std::to_string(split.test.size()) + " graphs, need 2K=" +
                        std::to_string(2 * support) + " for disjoint support and query batches");
  }
}

template <typename T>
T hyper_or(const json& h, const char* key, T fallback) {
  if (h.is_object() && h.contains(key)) {
    try {
      return h.at(key).get<T>();
    } catch (const json::exception&) {
      throw SchemaError(std::string("hyperparameter '") + key + "' has the wrong type");
    }
  }
  return fallback;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  SynthSpec spec;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  Dataset ds = synth_generate(a.spec, a.seed);
  require_parent_dir(a.out);
  save_dataset(ds, a.out);
  out << "wrote " << ds.graphs.size() << " graphs with " << ds.num_tasks() << " tasks to " << a.out << '\n';
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string arch = "gcn";
  std::size_t hidden_dim = 64;
  std::size_t layers = 3;
  std::size_t holdout = 0;
  std::size_t epochs = 2000;
  std::optional<double> alpha;
  double beta = 1e-3;
  std::size_t inner_steps = 5;
  std::size_t support = 10;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  double train_fraction = 0.9;
  std::string out;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const ArchKind kind = parse_arch(a.arch);
  Prepared p = prepare(a.data, a.train_fraction, a.split_seed);
  Architecture arch{kind, a.hidden_dim, a.layers, p.ds.d_node, p.ds.d_edge};
  validate_architecture(arch);
  check_compatible(arch, p.ds);
  MetaConfig cfg;
  cfg.outer_lr = a.beta;
  cfg.inner_lr = a.alpha.value_or(default_inner_lr(kind));
  cfg.inner_steps = a.inner_steps;
  cfg.support_size = a.support;
  cfg.epochs = a.epochs;
  cfg.holdout_task = a.holdout;
  cfg.seed = a.seed;
  validate_meta_config(cfg, p.ds.num_tasks());
  if (p.split.train.size() < cfg.support_size) {
    throw ContractError("train split holds " + std::to_string(p.split.train.size()) + " graphs, fewer than K=" +
                        std::to_string(cfg.support_size));
  }
  if (fs::exists(a.out) && !fs::is_directory(a.out)) throw IoError("output path '" + a.out + "' is not a directory");

  // The model draws from `seed`, task and batch sampling from a derived stream.
  Rng rng(derive_seed(a.seed, 1));
  TrainResult r = reptile_train(model_init(arch, a.seed), p.ds, p.split.train, p.norm, cfg, rng);

  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw IoError("cannot create '" + a.out + "': " + ec.message());
  json h{{"alpha", cfg.inner_lr},       {"beta", cfg.outer_lr},       {"inner_steps", cfg.inner_steps},
         {"support", cfg.support_size}, {"epochs", cfg.epochs},       {"holdout_task", cfg.holdout_task},
         {"seed", cfg.seed},            {"split_seed", a.split_seed}, {"train_fraction", a.train_fraction}};
  save_model((fs::path(a.out) / "params.json").string(), r.model, h);
  std::ostringstream log;
  write_train_log_csv(r.log, log);
  write_text((fs::path(a.out) / "train_log.csv").string(), log.str());

  out << "trained " << arch_name(kind) << " for " << cfg.epochs << " meta-iterations";
  if (!r.log.empty()) {
    const std::size_t tail = std::min<std::size_t>(100, r.log.size());
    double pre = 0, post = 0;
    for (std::size_t i = r.log.size() - tail; i < r.log.size(); ++i) {
      pre += r.log[i].loss_pre;
      post += r.log[i].loss_post;
    }
    out << "; last " << tail << " support losses " << format_sci3(pre / static_cast<double>(tail)) << " -> "
        << format_sci3(post / static_cast<double>(tail));
  }
  out << "\nwrote " << (fs::path(a.out) / "params.json").string() << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::vector<std::string> params;
  std::string data;
  bool random_init = false;
  std::string arch;
  std::size_t hidden_dim = 64;
  std::size_t layers = 3;
  std::string agg = "average";
  std::optional<double> weight_lr;
  std::size_t task = 0;
  std::size_t trials = 100;
  std::size_t steps = 5;
  std::size_t support = 10;
  std::optional<double> alpha;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> split_seed;
  std::optional<double> train_fraction;
  std::size_t jobs = 1;
  std::string out;
};

void print_report(const EvalReport& r, std::ostream& out) {
  const ReportRow row = to_row(r);
  out << r.model << " / " << r.init << " on " << r.task << " (" << r.trials << " trials): query MSE "
      << format_sci3(row.pre_mean) << " -> " << format_sci3(row.step1_mean) << " -> " << format_sci3(row.step5_mean)
      << '\n';
}

void write_reports(const EvalReport& r, const std::string& path) {
  std::ostringstream q, s;
  const ReportRow query = to_row(r), support = to_support_row(r);
  write_report_csv(std::span(&query, 1), q);
  write_report_csv(std::span(&support, 1), s);
  write_text(path, q.str());
  write_text(support_path(path), s.str());
}

int cmd_eval(const EvalArgs& a, bool ensemble, std::ostream& out) {
  std::vector<ModelDocument> docs;
  Architecture arch;
  if (ensemble || !a.random_init) {
    if (a.params.empty()) throw ContractError("--params is required");
    if (!ensemble && a.params.size() > 1) throw ContractError("eval takes one --params file; use ensemble-eval");
    for (const std::string& path : a.params) docs.push_back(load_model(path));
    arch = docs.front().model.arch;
  } else {
    if (a.arch.empty()) throw ContractError("--random-init needs --arch");
    if (!a.params.empty()) throw ContractError("--random-init and --params are exclusive");
  }
  const json& h = docs.empty() ? json::object() : docs.front().hyperparams;
  const std::uint64_t split_seed = a.split_seed.value_or(hyper_or<std::uint64_t>(h, "split_seed", 0));
  const double fraction = a.train_fraction.value_or(hyper_or<double>(h, "train_fraction", 0.9));
  Prepared p = prepare(a.data, fraction, split_seed);
  if (docs.empty()) arch = Architecture{parse_arch(a.arch), a.hidden_dim, a.layers, p.ds.d_node, p.ds.d_edge};
  validate_architecture(arch);
  check_compatible(arch, p.ds);
  check_task(a.task, p.ds);

  Protocol proto;
  proto.support_size = a.support;
  proto.steps = a.steps;
  proto.alpha = a.alpha.value_or(hyper_or<double>(h, "alpha", default_inner_lr(arch.kind)));
  proto.trials = a.trials;
  proto.seed = a.seed;
  proto.weight_lr = a.weight_lr;
  proto.jobs = a.jobs;
  validate_protocol(proto);
  check_eval_pool(p.split, a.support);
  std::optional<Ensemble> ens;
  if (ensemble) {
    std::vector<ModelParams> members;
    for (const ModelDocument& d : docs) members.push_back(d.model);
    ens = ensemble_init(std::move(members), parse_ensemble_mode(a.agg));
  }
  require_parent_dir(a.out);

  const Task task{a.task, p.split.test};
  const std::string model_name(arch_name(arch.kind));
  EvalReport r;
  if (ens) {
    const std::string init = "ensemble-" + a.agg + "-M" + std::to_string(ens->members.size());
    r = evaluate(*ens, p.ds, task, p.norm, proto, model_name, init);
  } else if (a.random_init) {
    r = baseline_random(arch, p.ds, task, p.norm, proto);
  } else {
    r = evaluate(docs.front().model, p.ds, task, p.norm, proto, model_name, "meta");
  }
  write_reports(r, a.out);
  print_report(r, out);
  return kExitOk;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::vector<std::string> exclude;
  std::string out;
};

int cmd_report(const ReportArgs& a, std::ostream& out) {
  // One aggregate per (model, init) pair, in order of first appearance.
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<ReportRow>> groups;
  for (const std::string& path : a.inputs) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    for (ReportRow& r : parse_report_csv(f)) {
      auto key = std::make_pair(r.model, r.init);
      if (!groups.contains(key)) order.push_back(key);
      groups[key].push_back(std::move(r));
    }
  }
  std::vector<ReportRow> rows;
  for (const auto& key : order) rows.push_back(aggregate_across_tasks(groups.at(key), a.exclude));
  require_parent_dir(a.out);
  std::ostringstream csv;
  write_report_csv(rows, csv);
  write_text(a.out, csv.str());
  for (const ReportRow& r : rows) {
    out << r.model << " / " << r.init << ", " << r.task << ": " << format_sci3(r.pre_mean) << " -> "
        << format_sci3(r.step1_mean) << " -> " << format_sci3(r.step5_mean) << '\n';
  }
  return kExitOk;
}

struct GradcheckArgs {
  std::string arch;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  std::size_t probes = 100;
  double eps = 1e-5;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  const ArchKind kind = parse_arch(a.arch);
  FiniteDiffReport r = gradcheck_model(kind, a.seed, a.probes, a.eps);
  const FiniteDiffProbe& w = r.probes[r.worst];
  const bool pass = r.max_rel_error < a.tolerance;
  out << "gradcheck " << arch_name(kind) << ": max relative error " << format_sci3(r.max_rel_error) << " over "
      << r.probes.size() << " probes (worst " << w.name << "[" << w.index << "] analytic "
      << format_exact(w.analytic) << ", numeric " << format_exact(w.numeric) << ") " << (pass ? "PASS" : "FAIL")
      << '\n';
  return pass ? kExitOk : kExitInvalid;
}

struct InvariantArgs {
  std::string arch;
  std::uint64_t seed = 0;
  double tolerance = 1e-9;
  std::size_t permutations = 50;
  std::size_t rotations = 20;
};

int cmd_invariants(const InvariantArgs& a, std::ostream& out) {
  const ArchKind kind = parse_arch(a.arch);
  const double perm = permutation_deviation(kind, a.seed, a.permutations);
  const E3Deviation e3 = e3_deviation(kind, derive_seed(a.seed, 1), a.rotations);
  const bool perm_ok = perm < a.tolerance;
  const bool e3_ok = e3.scalar < a.tolerance && e3.coords < a.tolerance;
  out << "permutation " << arch_name(kind) << ": max deviation " << format_sci3(perm) << " over " << a.permutations
      << " relabelings " << (perm_ok ? "PASS" : "FAIL") << '\n';
  out << "rigid motion " << arch_name(kind) << ": prediction " << format_sci3(e3.scalar);
  if (kind == ArchKind::kEgnn) out << ", coordinates " << format_sci3(e3.coords);
  out << " over " << a.rotations << " transforms " << (e3_ok ? "PASS" : "FAIL") << '\n';
  return perm_ok && e3_ok ? kExitOk : kExitInvalid;
}

void add_eval_options(CLI::App* sub, EvalArgs& a) {
  sub->add_option("--data", a.data, "dataset file (JSON lines)")->required();
  sub->add_option("--task", a.task, "target index to evaluate");
  sub->add_option("--trials", a.trials, "independent k-shot trials");
  sub->add_option("--steps", a.steps, "adaptation steps k");
  sub->add_option("--support", a.support, "support (and query) size K");
  sub->add_option("--alpha", a.alpha, "adaptation learning rate (default: the training alpha)");
  sub->add_option("--seed", a.seed, "trial seed");
  sub->add_option("--split-seed", a.split_seed, "train/test split seed (default: from the parameter file)");
  sub->add_option("--train-fraction", a.train_fraction, "train split fraction (default: from the parameter file)");
  sub->add_option("--jobs", a.jobs, "worker threads for trials");
  sub->add_option("--out", a.out, "report CSV; support-set MSE goes to <stem>.support.csv")->required();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reptile meta-learning for few-shot graph regression", "metagnn"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic related-task dataset");
  s->add_option("--graphs", synth.spec.num_graphs, "number of graphs");
  s->add_option("--tasks", synth.spec.num_tasks, "number of regression targets");
  s->add_option("--nodes-min", synth.spec.nodes_min, "smallest graph");
  s->add_option("--nodes-max", synth.spec.nodes_max, "largest graph");
  s->add_option("--d-node", synth.spec.d_node, "node feature width");
  s->add_option("--d-edge", synth.spec.d_edge, "edge feature width");
  s->add_flag("--coords", synth.spec.coords, "attach 3D coordinates");
  s->add_option("--task-spread", synth.spec.task_spread, "std of task coefficients around the shared centre");
  s->add_option("--offset-scale", synth.spec.offset_scale, "std of per-task offsets");
  s->add_option("--seed", synth.seed, "generator seed");
  s->add_option("--out", synth.out, "output file")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "meta-train a model with Reptile");
  t->add_option("--data", train.data, "dataset file (JSON lines)")->required();
  t->add_option("--arch", train.arch, "gcn, gat, mpnn or egnn");
  t->add_option("--hidden-dim", train.hidden_dim, "hidden width");
  t->add_option("--layers", train.layers, "graph layers");
  t->add_option("--holdout-task", train.holdout, "target index excluded from training");
  t->add_option("--epochs", train.epochs, "meta-iterations");
  t->add_option("--alpha", train.alpha, "inner learning rate (default 5e-3, 5e-4 for mpnn/egnn)");
  t->add_option("--beta", train.beta, "outer learning rate");
  t->add_option("--inner-steps", train.inner_steps, "inner SGD steps k");
  t->add_option("--support", train.support, "support size K");
  t->add_option("--seed", train.seed, "initialization and sampling seed");
  t->add_option("--split-seed", train.split_seed, "train/test split seed");
  t->add_option("--train-fraction", train.train_fraction, "train split fraction");
  t->add_option("--out", train.out, "output directory")->required();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "k-shot evaluation of a meta-trained or random model");
  e->add_option("--params", eval.params, "parameter file from train");
  e->add_flag("--random-init", eval.random_init, "fresh random initialization per trial");
  e->add_option("--arch", eval.arch, "architecture for --random-init");
  e->add_option("--hidden-dim", eval.hidden_dim, "hidden width for --random-init");
  e->add_option("--layers", eval.layers, "graph layers for --random-init");
  add_eval_options(e, eval);

  EvalArgs ens;
  auto* en = app.add_subcommand("ensemble-eval", "k-shot evaluation of an ensemble");
  en->add_option("--params", ens.params, "member parameter files")->required()->delimiter(',');
  en->add_option("--agg", ens.agg, "average or learned");
  en->add_option("--weight-lr", ens.weight_lr, "learning rate of the ensemble weights (default: alpha)");
  add_eval_options(en, ens);

  ReportArgs report;
  auto* r = app.add_subcommand("report", "aggregate per-task reports");
  r->add_option("--inputs", report.inputs, "report CSV files")->required();
  r->add_option("--exclude", report.exclude, "task names to leave out");
  r->add_option("--out", report.out, "output CSV")->required();

  GradcheckArgs grad;
  auto* g = app.add_subcommand("gradcheck", "compare gradients against finite differences");
  g->add_option("--arch", grad.arch, "gcn, gat, mpnn or egnn")->required();
  g->add_option("--tolerance", grad.tolerance, "maximum relative error");
  g->add_option("--seed", grad.seed, "graph, model and probe seed");
  g->add_option("--probes", grad.probes, "parameter coordinates to probe");
  g->add_option("--eps", grad.eps, "central difference step");

  InvariantArgs inv;
  auto* iv = app.add_subcommand("invariants", "node permutation and rigid motion checks");
  iv->add_option("--arch", inv.arch, "gcn, gat, mpnn or egnn")->required();
  iv->add_option("--seed", inv.seed, "seed");
  iv->add_option("--tolerance", inv.tolerance, "maximum absolute deviation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, out);
    if (t->parsed()) return cmd_train(train, out);
    if (e->parsed()) return cmd_eval(eval, false, out);
    if (en->parsed()) return cmd_eval(ens, true, out);
    if (r->parsed()) return cmd_report(report, out);
    if (g->parsed()) return cmd_gradcheck(grad, out);
    if (iv->parsed()) return cmd_invariants(inv, out);
  } catch (const DivergenceError& ex) {
    err << "error: diverged: " << ex.what() << '\n';
    return kExitDivergence;
  } catch (const IoError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitIo;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitInvalid;
  }
  return kExitInvalid;
}

}  // namespace metagnn
