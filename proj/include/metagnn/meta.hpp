#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "metagnn/graph.hpp"
#include "metagnn/model.hpp"

namespace metagnn {

struct MetaConfig {
  double outer_lr = 1e-3;  // β
  double inner_lr = 5e-3;  // α
  std::size_t inner_steps = 5;    // k
  std::size_t support_size = 10;  // K
  std::size_t epochs = 2000;      // meta-iterations, one task each
  std::size_t holdout_task = 0;
  std::uint64_t seed = 0;
};

/// 5e-3 for gcn/gat, 5e-4 for the message-passing models.
double default_inner_lr(ArchKind kind);

void validate_meta_config(const MetaConfig& cfg, std::size_t num_tasks);

/// Support loss above this (or non-finite) aborts adaptation.
inline constexpr double kDivergenceThreshold = 1e6;

struct AdaptResult {
  ModelParams model;
  std::vector<double> losses;  // support MSE before each step, then after the last one
};

/// k full-batch SGD steps on the support MSE. Training-mode forward passes;
/// batch-norm running statistics advance once per step.
AdaptResult inner_adapt(const ModelParams& mp, const GraphBatch& support, double alpha, std::size_t k);

struct ParamAdaptResult {
  ParamSet params;
  std::vector<double> losses;
};

/// The same k-step descent for an arbitrary differentiable loss over a ParamSet.
ParamAdaptResult inner_adapt(const ParamSet& params, const LossBuilder& loss, double alpha, std::size_t k);

/// θ + β(θ′ − θ), returning θ′ itself when β is exactly 1.
ParamSet reptile_meta_update(const ParamSet& theta, const ParamSet& adapted, double beta);

/// Parameter interpolation as above; running statistics are taken from `adapted`.
ModelParams reptile_meta_update(const ModelParams& theta, const ModelParams& adapted, double beta);

struct TrainRecord {
  std::size_t iteration = 0;
  std::size_t task = 0;
  double loss_pre = 0.0;
  double loss_post = 0.0;
};

using TrainLog = std::vector<TrainRecord>;

struct TrainResult {
  ModelParams model;
  TrainLog log;
};

/// Serial Reptile: each iteration samples one non-holdout task, a support batch
/// from `train_pool`, adapts and interpolates toward the adapted weights.
TrainResult reptile_train(const ModelParams& init, const Dataset& ds, std::span<const std::size_t> train_pool,
                          const Normalizer& norm, const MetaConfig& cfg, Rng& rng,
                          const std::function<void(const TrainRecord&)>& on_iteration = {});

void write_train_log_csv(const TrainLog& log, std::ostream& out);

}  // namespace metagnn
