#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include <json.hpp>

#include "metagnn/autodiff.hpp"
#include "metagnn/layers.hpp"

namespace metagnn {

enum class ArchKind { kGcn, kGat, kMpnn, kEgnn };

std::string_view arch_name(ArchKind kind);

/// Inverse of arch_name; ContractError for unknown names.
ArchKind parse_arch(std::string_view name);

struct Architecture {
  ArchKind kind = ArchKind::kGcn;
  std::size_t hidden_dim = 64;
  std::size_t num_layers = 3;
  std::size_t d_node = 0;
  std::size_t d_edge = 0;

  bool operator==(const Architecture&) const = default;
};

void validate_architecture(const Architecture& arch);

/// θ plus the non-differentiable batch-norm running statistics.
struct ModelParams {
  Architecture arch;
  ParamSet params;
  ParamSet buffers;

  bool operator==(const ModelParams&) const = default;
};

/// Uniform(±√(1/fan_in)) weights, zero biases, unit norm scales, zero shifts.
ModelParams model_init(const Architecture& arch, std::uint64_t seed);

/// Records the full network on `tape` and returns a G×1 prediction.
/// `vars` must hold one Var per entry of mp.params (see register_parameters).
/// For egnn, `coords_out` receives the final-layer coordinates when non-null.
Var model_forward(Tape& tape, const ModelParams& mp, const std::map<std::string, Var>& vars, const GraphBatch& batch,
                  const RunMode& run, Var* coords_out = nullptr);

/// Detached predictions, one per graph.
Tensor model_predict(const ModelParams& mp, const GraphBatch& batch, Mode mode = Mode::kEval);

/// Mean squared error against batch.labels.
double batch_mse(const ModelParams& mp, const GraphBatch& batch, Mode mode);

struct LossGrad {
  double loss = 0.0;
  GradMap grads;
  ParamSet buffers;  // running statistics after this training-mode pass
};

/// Training-mode MSE on batch.labels with its gradient.
LossGrad loss_and_grad(const ModelParams& mp, const GraphBatch& batch);

// ---------------------------------------------------------------------------
// Persistence: {"arch", "hyperparams", "params", "buffers"}.

nlohmann::json architecture_to_json(const Architecture& arch);
Architecture architecture_from_json(const nlohmann::json& j);

struct ModelDocument {
  ModelParams model;
  nlohmann::json hyperparams = nlohmann::json::object();
};

std::string model_to_json(const ModelParams& mp, const nlohmann::json& hyperparams);
ModelDocument model_from_json(const nlohmann::json& doc);
void save_model(const std::string& path, const ModelParams& mp, const nlohmann::json& hyperparams);
ModelDocument load_model(const std::string& path);

/// Writes `{name: {"shape", "data"}}` with 17 significant digits.
std::string tensors_to_json(const ParamSet& tensors);
ParamSet tensors_from_json(const nlohmann::json& j);

}  // namespace metagnn
