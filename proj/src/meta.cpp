#include "metagnn/meta.hpp"

#include <cmath>
#include <ostream>

#include "metagnn/error.hpp"
#include "metagnn/format.hpp"

namespace metagnn {

double default_inner_lr(ArchKind kind) {
  return kind == ArchKind::kMpnn || kind == ArchKind::kEgnn ? 5e-4 : 5e-3;
}

void validate_meta_config(const MetaConfig& cfg, std::size_t num_tasks) {
  if (!(cfg.outer_lr > 0.0) || !std::isfinite(cfg.outer_lr)) throw ContractError("outer learning rate must be > 0");
  if (!(cfg.inner_lr > 0.0) || !std::isfinite(cfg.inner_lr)) throw ContractError("inner learning rate must be > 0");
  if (cfg.inner_steps < 1) throw ContractError("inner steps must be >= 1");
  if (cfg.support_size < 1) throw ContractError("support size must be >= 1");
  if (num_tasks < 2) throw ContractError("meta-training needs at least 2 tasks");
  if (cfg.holdout_task >= num_tasks) {
    throw ContractError("holdout task " + std::to_string(cfg.holdout_task) + " out of range for " +
                        std::to_string(num_tasks) + " tasks");
  }
}

namespace {

void guard(double loss, std::size_t step) {
  if (!std::isfinite(loss) || loss > kDivergenceThreshold) {
    throw DivergenceError("support loss " + format_exact(loss) + " at inner step " + std::to_string(step), step);
  }
}

}  // namespace

AdaptResult inner_adapt(const ModelParams& mp, const GraphBatch& support, double alpha, std::size_t k) {
  if (k < 1) throw ContractError("inner_adapt: k must be >= 1");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ContractError("inner_adapt: alpha must be finite and >= 0");
  AdaptResult out;
  out.model = mp;
  out.losses.reserve(k + 1);
  std::size_t step = 0;
  try {
    for (; step < k; ++step) {
      LossGrad lg = loss_and_grad(out.model, support);
      guard(lg.loss, step);
      out.losses.push_back(lg.loss);
      out.model.params = sgd_step(out.model.params, lg.grads, alpha);
      out.model.buffers = std::move(lg.buffers);
    }
    const double last = batch_mse(out.model, support, Mode::kTrain);
    guard(last, k);
    out.losses.push_back(last);
  } catch (const DomainError& e) {
    throw DivergenceError(std::string("non-finite value at inner step ") + std::to_string(step) + ": " + e.what(),
                          step);
  }
  return out;
}

ParamAdaptResult inner_adapt(const ParamSet& params, const LossBuilder& loss, double alpha, std::size_t k) {
  if (k < 1) throw ContractError("inner_adapt: k must be >= 1");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ContractError("inner_adapt: alpha must be finite and >= 0");
  ParamAdaptResult out{params, {}};
  std::size_t step = 0;
  try {
    for (; step <= k; ++step) {
      Tape tape;
      Var l = loss(tape, out.params);
      guard(l.value().item(), step);
      out.losses.push_back(l.value().item());
      if (step == k) break;
      out.params = sgd_step(out.params, tape.backward(l), alpha);
    }
  } catch (const DomainError& e) {
    throw DivergenceError(std::string("non-finite value at inner step ") + std::to_string(step) + ": " + e.what(),
                          step);
  }
  return out;
}

ParamSet reptile_meta_update(const ParamSet& theta, const ParamSet& adapted, double beta) {
  require_same_layout(theta, adapted, "reptile_meta_update");
  if (!std::isfinite(beta)) throw ContractError("reptile_meta_update: beta must be finite");
  if (beta == 1.0) return adapted;
  ParamSet out = theta;
  for (auto& [name, t] : out) {
    const auto src = adapted.at(name).data();
    auto dst = t.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = dst[i] + beta * (src[i] - dst[i]);
  }
  return out;
}

ModelParams reptile_meta_update(const ModelParams& theta, const ModelParams& adapted, double beta) {
  if (!(theta.arch == adapted.arch)) throw ContractError("reptile_meta_update: architectures differ");
  require_same_layout(theta.buffers, adapted.buffers, "reptile_meta_update");
  ModelParams out;
  out.arch = theta.arch;
  out.params = reptile_meta_update(theta.params, adapted.params, beta);
  out.buffers = adapted.buffers;
  return out;
}

TrainResult reptile_train(const ModelParams& init, const Dataset& ds, std::span<const std::size_t> train_pool,
                          const Normalizer& norm, const MetaConfig& cfg, Rng& rng,
                          const std::function<void(const TrainRecord&)>& on_iteration) {
  validate_meta_config(cfg, ds.num_tasks());
  if (train_pool.size() < cfg.support_size) {
    throw ContractError("reptile_train: train split holds " + std::to_string(train_pool.size()) +
                        " graphs, fewer than K=" + std::to_string(cfg.support_size));
  }
  std::vector<std::size_t> tasks;
  for (std::size_t t = 0; t < ds.num_tasks(); ++t) {
    if (t != cfg.holdout_task) tasks.push_back(t);
  }
  if (tasks.empty()) throw ContractError("reptile_train: no training tasks");

  TrainResult out;
  out.model = init;
  out.log.reserve(cfg.epochs);
  for (std::size_t it = 0; it < cfg.epochs; ++it) {
    const std::size_t task = tasks[uniform_index(rng, tasks.size())];
    const SupportBatch support = sample_support(ds, Task{task, train_pool}, cfg.support_size, norm, rng);
    const GraphBatch batch = make_batch(ds, support);
    AdaptResult adapted;
    try {
      adapted = inner_adapt(out.model, batch, cfg.inner_lr, cfg.inner_steps);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string("meta-training diverged on task ") + std::to_string(task) + ": " + e.what(),
                            it);
    }
    out.model = reptile_meta_update(out.model, adapted.model, cfg.outer_lr);
    TrainRecord rec{it, task, adapted.losses.front(), adapted.losses.back()};
    out.log.push_back(rec);
    if (on_iteration) on_iteration(rec);
  }
  return out;
}

void write_train_log_csv(const TrainLog& log, std::ostream& out) {
  out << "iteration,task,loss_pre,loss_post\n";
  for (const TrainRecord& r : log) {
    out << r.iteration << ',' << r.task << ',' << format_exact(r.loss_pre) << ',' << format_exact(r.loss_post) << '\n';
  }
}

}  // namespace metagnn
