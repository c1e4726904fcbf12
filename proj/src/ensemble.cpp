#include "metagnn/ensemble.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "metagnn/error.hpp"
#include "metagnn/format.hpp"
#include "metagnn/meta.hpp"

namespace metagnn {

using nlohmann::json;

std::string_view ensemble_mode_name(EnsembleMode mode) {
  return mode == EnsembleMode::kAverage ? "average" : "learned";
}

EnsembleMode parse_ensemble_mode(std::string_view name) {
  if (name == "average") return EnsembleMode::kAverage;
  if (name == "learned") return EnsembleMode::kLearned;
  throw ContractError("unknown ensemble aggregation '" + std::string(name) + "' (expected average or learned)");
}

Ensemble ensemble_init(std::vector<ModelParams> members, EnsembleMode mode) {
  if (members.empty()) throw ContractError("ensemble_init: need at least one member");
  for (const ModelParams& m : members) {
    if (!(m.arch == members.front().arch)) throw ContractError("ensemble_init: members use different architectures");
  }
  Ensemble e;
  e.weights.assign(members.size(), 1.0 / static_cast<double>(members.size()));
  e.members = std::move(members);
  e.mode = mode;
  return e;
}

namespace {

void check_ensemble(const Ensemble& e) {
  if (e.members.empty() || e.weights.size() != e.members.size()) {
    throw ContractError("ensemble: member and weight counts differ");
  }
}

}  // namespace

Var ensemble_forward(Tape& tape, const Ensemble& e, const GraphBatch& batch, const RunMode& run,
                     std::vector<ParamSet>* stats_out) {
  check_ensemble(e);
  const std::size_t m = e.members.size();
  if (stats_out != nullptr) {
    stats_out->clear();
    for (const ModelParams& member : e.members) stats_out->push_back(member.buffers);
  }
  std::vector<Var> preds;
  preds.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    auto vars = register_parameters(tape, e.members[i].params, "m" + std::to_string(i) + ".");
    RunMode member_run{run.mode, stats_out != nullptr ? &(*stats_out)[i] : nullptr};
    preds.push_back(model_forward(tape, e.members[i], vars, batch, member_run));
  }
  Var w = tape.parameter("ensemble.weights", Tensor(Shape{m, 1}, e.weights));
  return ad::matmul(ad::concat(preds, 1), w);
}

Tensor ensemble_predict(const Ensemble& e, const GraphBatch& batch, Mode mode) {
  Tape tape;
  return ensemble_forward(tape, e, batch, RunMode{mode, nullptr}).value();
}

double ensemble_mse(const Ensemble& e, const GraphBatch& batch, Mode mode) {
  Tape tape;
  Var pred = ensemble_forward(tape, e, batch, RunMode{mode, nullptr});
  return ad::mse(pred, tape.constant(batch.labels)).value().item();
}

EnsembleLossGrad ensemble_loss_and_grad(const Ensemble& e, const GraphBatch& batch) {
  Tape tape;
  EnsembleLossGrad out;
  Var pred = ensemble_forward(tape, e, batch, RunMode{Mode::kTrain, nullptr}, &out.buffers);
  Var loss = ad::mse(pred, tape.constant(batch.labels));
  out.loss = loss.value().item();
  GradMap all = tape.backward(loss);
  out.member_grads.resize(e.members.size());
  for (std::size_t i = 0; i < e.members.size(); ++i) {
    const std::string prefix = "m" + std::to_string(i) + ".";
    for (const auto& [name, t] : e.members[i].params) out.member_grads[i].emplace(name, std::move(all.at(prefix + name)));
  }
  const Tensor& wg = all.at("ensemble.weights");
  out.weight_grads.assign(wg.data().begin(), wg.data().end());
  return out;
}

Ensemble ensemble_apply_step(const Ensemble& e, EnsembleLossGrad lg, double alpha, double weight_lr) {
  Ensemble out = e;
  for (std::size_t i = 0; i < out.members.size(); ++i) {
    ModelParams& member = out.members[i];
    member.params = sgd_step(member.params, lg.member_grads[i], alpha);
    member.buffers = std::move(lg.buffers[i]);
  }
  if (out.mode == EnsembleMode::kLearned) {
    for (std::size_t i = 0; i < out.weights.size(); ++i) out.weights[i] -= weight_lr * lg.weight_grads[i];
  }
  return out;
}

EnsembleAdaptResult ensemble_adapt(const Ensemble& e, const GraphBatch& support, double alpha, std::size_t k,
                                   std::optional<double> weight_lr) {
  if (k < 1) throw ContractError("ensemble_adapt: k must be >= 1");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ContractError("ensemble_adapt: alpha must be finite and >= 0");
  const double wlr = weight_lr.value_or(alpha);
  if (!(wlr >= 0.0) || !std::isfinite(wlr)) throw ContractError("ensemble_adapt: weight rate must be finite and >= 0");

  EnsembleAdaptResult out{e, {}};
  std::size_t step = 0;
  auto guard = [&](double loss) {
    if (!std::isfinite(loss) || loss > kDivergenceThreshold) {
      throw DivergenceError("ensemble support loss " + format_exact(loss) + " at inner step " + std::to_string(step),
                            step);
    }
  };
  try {
    for (; step < k; ++step) {
      EnsembleLossGrad lg = ensemble_loss_and_grad(out.ensemble, support);
      guard(lg.loss);
      out.losses.push_back(lg.loss);
      out.ensemble = ensemble_apply_step(out.ensemble, std::move(lg), alpha, wlr);
    }
    const double last = ensemble_mse(out.ensemble, support, Mode::kTrain);
    guard(last);
    out.losses.push_back(last);
  } catch (const DomainError& err) {
    throw DivergenceError(std::string("non-finite value at inner step ") + std::to_string(step) + ": " + err.what(),
                          step);
  }
  return out;
}

std::string ensemble_to_json(const Ensemble& e) {
  check_ensemble(e);
  std::ostringstream out;
  out << "{\n\"mode\": " << json(std::string(ensemble_mode_name(e.mode))).dump() << ",\n\"weights\": [";
  for (std::size_t i = 0; i < e.weights.size(); ++i) out << (i ? ", " : "") << format_exact(e.weights[i]);
  out << "],\n\"members\": [\n";
  for (std::size_t i = 0; i < e.members.size(); ++i) {
    std::string doc = model_to_json(e.members[i], json::object());
    while (!doc.empty() && doc.back() == '\n') doc.pop_back();
    out << (i ? ",\n" : "") << doc;
  }
  out << "\n]\n}\n";
  return out.str();
}

Ensemble ensemble_from_json(const json& doc) {
  if (!doc.is_object()) throw SchemaError("ensemble document must be a JSON object");
  Ensemble e;
  try {
    e.mode = parse_ensemble_mode(doc.at("mode").get<std::string>());
    e.weights = doc.at("weights").get<std::vector<double>>();
    for (const json& m : doc.at("members")) e.members.push_back(model_from_json(m).model);
  } catch (const json::exception& ex) {
    throw SchemaError(std::string("ensemble document: ") + ex.what());
  } catch (const ContractError& ex) {
    throw SchemaError(std::string("ensemble document: ") + ex.what());
  }
  if (e.members.empty() || e.weights.size() != e.members.size()) {
    throw SchemaError("ensemble document: member and weight counts differ");
  }
  for (const ModelParams& m : e.members) {
    if (!(m.arch == e.members.front().arch)) throw SchemaError("ensemble document: heterogeneous members");
  }
  return e;
}

void save_ensemble(const std::string& path, const Ensemble& e) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << ensemble_to_json(e);
  if (!f) throw IoError("failed writing '" + path + "'");
}

Ensemble load_ensemble(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  try {
    return ensemble_from_json(json::parse(f));
  } catch (const json::parse_error& ex) {
    throw ParseError(path + ": " + ex.what(), 0);
  }
}

}  // namespace metagnn
