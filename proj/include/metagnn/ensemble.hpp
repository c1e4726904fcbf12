#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "metagnn/model.hpp"

namespace metagnn {

enum class EnsembleMode { kAverage, kLearned };

std::string_view ensemble_mode_name(EnsembleMode mode);
EnsembleMode parse_ensemble_mode(std::string_view name);

/// ŷ = Σ_m w_m f_m. Average mode keeps w at 1/M; learned mode trains it.
struct Ensemble {
  std::vector<ModelParams> members;
  std::vector<double> weights;
  EnsembleMode mode = EnsembleMode::kAverage;

  bool operator==(const Ensemble&) const = default;
};

/// Uniform weights 1/M. Members must share one architecture.
Ensemble ensemble_init(std::vector<ModelParams> members, EnsembleMode mode);

/// Records all members and the weighted sum on `tape`; returns G×1.
/// Member m's parameters are registered as "m<m>.<name>", the weights as "ensemble.weights".
Var ensemble_forward(Tape& tape, const Ensemble& e, const GraphBatch& batch, const RunMode& run,
                     std::vector<ParamSet>* stats_out = nullptr);

Tensor ensemble_predict(const Ensemble& e, const GraphBatch& batch, Mode mode = Mode::kEval);
double ensemble_mse(const Ensemble& e, const GraphBatch& batch, Mode mode);

struct EnsembleLossGrad {
  double loss = 0.0;
  std::vector<GradMap> member_grads;
  std::vector<ParamSet> buffers;
  std::vector<double> weight_grads;
};

EnsembleLossGrad ensemble_loss_and_grad(const Ensemble& e, const GraphBatch& batch);

/// One SGD step given a gradient already taken at `e`.
Ensemble ensemble_apply_step(const Ensemble& e, EnsembleLossGrad lg, double alpha, double weight_lr);

struct EnsembleAdaptResult {
  Ensemble ensemble;
  std::vector<double> losses;  // support MSE before each step, then after the last one
};

/// k full-batch SGD steps on the ensemble MSE. Members always move with rate α;
/// in learned mode the weights move with `weight_lr` (α when unset).
EnsembleAdaptResult ensemble_adapt(const Ensemble& e, const GraphBatch& support, double alpha, std::size_t k,
                                   std::optional<double> weight_lr = std::nullopt);

std::string ensemble_to_json(const Ensemble& e);
Ensemble ensemble_from_json(const nlohmann::json& doc);
void save_ensemble(const std::string& path, const Ensemble& e);
Ensemble load_ensemble(const std::string& path);

}  // namespace metagnn
