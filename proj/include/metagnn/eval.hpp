#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "metagnn/ensemble.hpp"
#include "metagnn/graph.hpp"
#include "metagnn/model.hpp"

namespace metagnn {

/// Anything that can be adapted and scored: one model or an ensemble.
using Learner = std::variant<ModelParams, Ensemble>;

struct Protocol {
  std::size_t support_size = 10;  // K, also the query size
  std::size_t steps = 5;          // k
  double alpha = 5e-3;
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  std::optional<double> weight_lr;  // learned ensembles only; α when unset
  std::size_t jobs = 1;
};

void validate_protocol(const Protocol& p);

struct TrialCurve {
  std::vector<double> query;    // query MSE at steps 0..k
  std::vector<double> support;  // support MSE at steps 0..k
};

/// Draws disjoint support and query batches of K graphs from the task's pool,
/// then adapts on the support batch for k steps. MSE is measured in evaluation
/// mode before the first step and after each step.
TrialCurve kshot_trial(const Learner& learner, const Dataset& ds, const Task& task, const Normalizer& norm,
                       std::size_t support_size, double alpha, std::size_t steps, Rng& rng,
                       std::optional<double> weight_lr = std::nullopt);

struct EvalReport {
  std::string model;
  std::string init;
  std::string task;
  std::size_t trials = 0;
  std::vector<double> query_mean, query_std;
  std::vector<double> support_mean, support_std;
};

/// Runs `p.trials` independent trials; trial t uses child_rng(p.seed, t).
/// Results do not depend on p.jobs.
EvalReport evaluate(const Learner& learner, const Dataset& ds, const Task& task, const Normalizer& norm,
                    const Protocol& p, const std::string& model_name, const std::string& init_name);

/// Same protocol, but every trial starts from a fresh model_init.
EvalReport baseline_random(const Architecture& arch, const Dataset& ds, const Task& task, const Normalizer& norm,
                           const Protocol& p);

/// Population mean and standard deviation.
std::pair<double, double> mean_std(std::span<const double> values);

/// One CSV row: pre-update, one-step and five-step statistics.
struct ReportRow {
  std::string model;
  std::string init;
  std::string task;
  std::size_t trials = 0;
  double pre_mean = 0, pre_std = 0;
  double step1_mean = 0, step1_std = 0;
  double step5_mean = 0, step5_std = 0;
};

/// Uses curve index min(1, k) and min(5, k) for the step columns.
ReportRow to_row(const EvalReport& r);
ReportRow to_support_row(const EvalReport& r);

/// Mean of the task means and mean of the task stds over tasks not in `exclude`.
ReportRow aggregate_across_tasks(std::span<const ReportRow> rows, std::span<const std::string> exclude);

void write_report_csv(std::span<const ReportRow> rows, std::ostream& out);
std::vector<ReportRow> parse_report_csv(std::istream& in);

}  // namespace metagnn
