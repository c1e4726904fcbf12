#include "metagnn/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "metagnn/error.hpp"
#include "metagnn/format.hpp"
#include "metagnn/meta.hpp"

namespace metagnn {

void validate_protocol(const Protocol& p) {
  if (p.support_size < 1) throw ContractError("support size must be >= 1");
  if (p.trials < 1) throw ContractError("trial count must be >= 1");
  if (!(p.alpha >= 0.0) || !std::isfinite(p.alpha)) throw ContractError("alpha must be finite and >= 0");
  if (p.weight_lr && (!(*p.weight_lr >= 0.0) || !std::isfinite(*p.weight_lr))) {
    throw ContractError("weight learning rate must be finite and >= 0");
  }
  if (p.jobs < 1) throw ContractError("jobs must be >= 1");
}

namespace {

void guard(double loss, std::size_t step) {
  if (!std::isfinite(loss) || loss > kDivergenceThreshold) {
    throw DivergenceError("support loss " + format_exact(loss) + " during k-shot step " + std::to_string(step), step);
  }
}

double score(const Learner& l, const GraphBatch& b) {
  if (const auto* mp = std::get_if<ModelParams>(&l)) return batch_mse(*mp, b, Mode::kEval);
  return ensemble_mse(std::get<Ensemble>(l), b, Mode::kEval);
}

Learner step(const Learner& l, const GraphBatch& support, double alpha, double weight_lr, std::size_t index) {
  if (const auto* mp = std::get_if<ModelParams>(&l)) {
    LossGrad lg = loss_and_grad(*mp, support);
    guard(lg.loss, index);
    ModelParams next = *mp;
    next.params = sgd_step(mp->params, lg.grads, alpha);
    next.buffers = std::move(lg.buffers);
    return next;
  }
  const Ensemble& e = std::get<Ensemble>(l);
  EnsembleLossGrad lg = ensemble_loss_and_grad(e, support);
  guard(lg.loss, index);
  return ensemble_apply_step(e, std::move(lg), alpha, weight_lr);
}

template <typename F>
std::vector<TrialCurve> run_trials(std::size_t count, std::size_t jobs, F trial) {
  std::vector<TrialCurve> out(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < count; t = next++) {
      try {
        out[t] = trial(t);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::min(jobs, count);
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  // Report the failure of the lowest trial index so errors are reproducible too.
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

EvalReport summarize(std::vector<TrialCurve> curves, std::string model, std::string init, std::string task) {
  EvalReport r{std::move(model), std::move(init), std::move(task), curves.size(), {}, {}, {}, {}};
  const std::size_t len = curves.front().query.size();
  std::vector<double> column(curves.size());
  for (std::size_t s = 0; s < len; ++s) {
    for (std::size_t t = 0; t < curves.size(); ++t) column[t] = curves[t].query[s];
    auto [qm, qs] = mean_std(column);
    for (std::size_t t = 0; t < curves.size(); ++t) column[t] = curves[t].support[s];
    auto [sm, ss] = mean_std(column);
    r.query_mean.push_back(qm);
    r.query_std.push_back(qs);
    r.support_mean.push_back(sm);
    r.support_std.push_back(ss);
  }
  return r;
}

std::string task_label(const Dataset& ds, const Task& task) {
  if (task.target_index >= ds.num_tasks()) {
    throw ContractError("task index " + std::to_string(task.target_index) + " out of range for " +
                        std::to_string(ds.num_tasks()) + " tasks");
  }
  return ds.task_names[task.target_index];
}

}  // namespace

std::pair<double, double> mean_std(std::span<const double> values) {
  if (values.empty()) throw ContractError("mean_std: no values");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

TrialCurve kshot_trial(const Learner& learner, const Dataset& ds, const Task& task, const Normalizer& norm,
                       std::size_t support_size, double alpha, std::size_t steps, Rng& rng,
                       std::optional<double> weight_lr) {
  if (support_size < 1) throw ContractError("kshot_trial: K must be >= 1");
  if (task.pool.size() < 2 * support_size) {
    throw ContractError("kshot_trial: test split holds " + std::to_string(task.pool.size()) +
                        " graphs, need 2K=" + std::to_string(2 * support_size) + " for disjoint support and query");
  }
  const SupportBatch both = sample_support(ds, task, 2 * support_size, norm, rng);
  const auto half = static_cast<std::ptrdiff_t>(support_size);
  const SupportBatch support_ids{{both.graphs.begin(), both.graphs.begin() + half},
                                 {both.labels.begin(), both.labels.begin() + half},
                                 task.target_index};
  const SupportBatch query_ids{{both.graphs.begin() + half, both.graphs.end()},
                               {both.labels.begin() + half, both.labels.end()},
                               task.target_index};
  const GraphBatch support = make_batch(ds, support_ids);
  const GraphBatch query = make_batch(ds, query_ids);

  TrialCurve curve;
  Learner current = learner;
  const double wlr = weight_lr.value_or(alpha);
  std::size_t s = 0;
  try {
    curve.query.push_back(score(current, query));
    curve.support.push_back(score(current, support));
    for (s = 1; s <= steps; ++s) {
      current = step(current, support, alpha, wlr, s);
      curve.query.push_back(score(current, query));
      curve.support.push_back(score(current, support));
    }
  } catch (const DomainError& e) {
    throw DivergenceError(std::string("non-finite value during k-shot step ") + std::to_string(s) + ": " + e.what(), s);
  }
  return curve;
}

EvalReport evaluate(const Learner& learner, const Dataset& ds, const Task& task, const Normalizer& norm,
                    const Protocol& p, const std::string& model_name, const std::string& init_name) {
  validate_protocol(p);
  const std::string name = task_label(ds, task);
  auto curves = run_trials(p.trials, p.jobs, [&](std::size_t t) {
    Rng rng = child_rng(p.seed, t);
    return kshot_trial(learner, ds, task, norm, p.support_size, p.alpha, p.steps, rng, p.weight_lr);
  });
  return summarize(std::move(curves), model_name, init_name, name);
}

EvalReport baseline_random(const Architecture& arch, const Dataset& ds, const Task& task, const Normalizer& norm,
                           const Protocol& p) {
  validate_protocol(p);
  validate_architecture(arch);
  const std::string name = task_label(ds, task);
  auto curves = run_trials(p.trials, p.jobs, [&](std::size_t t) {
    Rng rng = child_rng(p.seed, t);
    const Learner fresh = model_init(arch, derive_seed(derive_seed(p.seed, t), 1));
    return kshot_trial(fresh, ds, task, norm, p.support_size, p.alpha, p.steps, rng);
  });
  return summarize(std::move(curves), std::string(arch_name(arch.kind)), "random", name);
}

namespace {

ReportRow row_from(const EvalReport& r, const std::vector<double>& mean, const std::vector<double>& sd) {
  const std::size_t k = mean.size() - 1;
  const std::size_t one = std::min<std::size_t>(1, k), five = std::min<std::size_t>(5, k);
  return ReportRow{r.model, r.init, r.task, r.trials, mean[0], sd[0], mean[one], sd[one], mean[five], sd[five]};
}

}  // namespace

ReportRow to_row(const EvalReport& r) { return row_from(r, r.query_mean, r.query_std); }
ReportRow to_support_row(const EvalReport& r) { return row_from(r, r.support_mean, r.support_std); }

ReportRow aggregate_across_tasks(std::span<const ReportRow> rows, std::span<const std::string> exclude) {
  const std::set<std::string> skip(exclude.begin(), exclude.end());
  std::set<std::string> seen;
  std::vector<const ReportRow*> kept;
  for (const ReportRow& r : rows) {
    if (!seen.insert(r.task).second) throw ContractError("aggregate: task '" + r.task + "' reported twice");
    if (!skip.contains(r.task)) kept.push_back(&r);
  }
  if (kept.empty()) throw ContractError("aggregate: every task is excluded");

  ReportRow out;
  out.model = kept.front()->model;
  out.init = kept.front()->init;
  out.trials = kept.front()->trials;
  for (const ReportRow* r : kept) {
    if (r->model != out.model) out.model = "mixed";
    if (r->init != out.init) out.init = "mixed";
    if (r->trials != out.trials) out.trials = 0;
  }
  out.task = "mean over " + std::to_string(kept.size()) + " tasks";
  const double n = static_cast<double>(kept.size());
  for (const ReportRow* r : kept) {
    out.pre_mean += r->pre_mean;
    out.pre_std += r->pre_std;
    out.step1_mean += r->step1_mean;
    out.step1_std += r->step1_std;
    out.step5_mean += r->step5_mean;
    out.step5_std += r->step5_std;
  }
  out.pre_mean /= n;
  out.pre_std /= n;
  out.step1_mean /= n;
  out.step1_std /= n;
  out.step5_mean /= n;
  out.step5_std /= n;
  return out;
}

namespace {

constexpr const char* kReportHeader =
    "model,init,task,trials,pre_mean,pre_std,step1_mean,step1_std,step5_mean,step5_std";

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv(const std::string& line, std::size_t lineno) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  if (quoted) throw ParseError("unterminated quoted field", lineno);
  return fields;
}

double parse_number(const std::string& s, std::size_t lineno) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ParseError("not a number: '" + s + "'", lineno);
  return v;
}

}  // namespace

void write_report_csv(std::span<const ReportRow> rows, std::ostream& out) {
  out << kReportHeader << '\n';
  for (const ReportRow& r : rows) {
    out << csv_field(r.model) << ',' << csv_field(r.init) << ',' << csv_field(r.task) << ',' << r.trials << ','
        << format_sci3(r.pre_mean) << ',' << format_sci3(r.pre_std) << ',' << format_sci3(r.step1_mean) << ','
        << format_sci3(r.step1_std) << ',' << format_sci3(r.step5_mean) << ',' << format_sci3(r.step5_std) << '\n';
  }
}

std::vector<ReportRow> parse_report_csv(std::istream& in) {
  std::vector<ReportRow> rows;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line != kReportHeader) throw ParseError("unexpected report header", lineno);
      header = true;
      continue;
    }
    const auto f = split_csv(line, lineno);
    if (f.size() != 10) throw ParseError("expected 10 fields, found " + std::to_string(f.size()), lineno);
    ReportRow r;
    r.model = f[0];
    r.init = f[1];
    r.task = f[2];
    const double trials = parse_number(f[3], lineno);
    if (trials < 0 || trials != std::floor(trials)) throw ParseError("trial count must be a whole number", lineno);
    r.trials = static_cast<std::size_t>(trials);
    r.pre_mean = parse_number(f[4], lineno);
    r.pre_std = parse_number(f[5], lineno);
    r.step1_mean = parse_number(f[6], lineno);
    r.step1_std = parse_number(f[7], lineno);
    r.step5_mean = parse_number(f[8], lineno);
    r.step5_std = parse_number(f[9], lineno);
    rows.push_back(std::move(r));
  }
  if (!header) throw ParseError("empty report", lineno);
  return rows;
}

}  // namespace metagnn
