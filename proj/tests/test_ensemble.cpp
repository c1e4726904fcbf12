#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "metagnn/ensemble.hpp"
#include "metagnn/error.hpp"
#include "metagnn/meta.hpp"

using namespace metagnn;

namespace {

struct Fixture {
  Dataset ds;
  GraphBatch batch;

  Fixture() {
    SynthSpec spec;
    spec.num_graphs = 12;
    ds = synth_generate(spec, 17);
    std::vector<std::size_t> all{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
    batch = make_batch(ds, make_batch_labels(ds, {1, 3, 5, 7, 9}, 1, zscore_fit(ds, all)));
  }

  std::vector<ModelParams> members(ArchKind kind, std::size_t m) const {
    std::vector<ModelParams> out;
    for (std::size_t i = 0; i < m; ++i) out.push_back(model_init(Architecture{kind, 8, 3, ds.d_node, ds.d_edge}, 10 + i));
    return out;
  }
};

}  // namespace

TEST_CASE("uniform initial weights") {
  Fixture f;
  CHECK(ensemble_init(f.members(ArchKind::kGcn, 1), EnsembleMode::kAverage).weights == std::vector<double>{1.0});
  Ensemble four = ensemble_init(f.members(ArchKind::kGcn, 4), EnsembleMode::kLearned);
  CHECK(four.weights == std::vector<double>(4, 0.25));
  CHECK(four.mode == EnsembleMode::kLearned);

  std::vector<ModelParams> mixed = f.members(ArchKind::kGcn, 1);
  mixed.push_back(f.members(ArchKind::kMpnn, 1).front());
  CHECK_THROWS_AS(ensemble_init(mixed, EnsembleMode::kAverage), ContractError);
  CHECK_THROWS_AS(ensemble_init({}, EnsembleMode::kAverage), ContractError);
}

TEST_CASE("ensemble prediction") {
  Fixture f;
  auto single = f.members(ArchKind::kMpnn, 1);
  CHECK(ensemble_predict(ensemble_init(single, EnsembleMode::kAverage), f.batch) == model_predict(single[0], f.batch));

  for (std::size_t m : {2, 4}) {
    auto members = f.members(ArchKind::kGat, m);
    Ensemble avg = ensemble_init(members, EnsembleMode::kAverage);
    Ensemble learned = ensemble_init(members, EnsembleMode::kLearned);
    Tensor p = ensemble_predict(avg, f.batch);
    CHECK(p == ensemble_predict(learned, f.batch));
    for (std::size_t g = 0; g < f.batch.num_graphs; ++g) {
      double sum = 0;
      for (const ModelParams& mp : members) sum += model_predict(mp, f.batch)[g];
      CHECK(p[g] == sum / static_cast<double>(m));
    }
    Ensemble doubled = learned;
    for (double& w : doubled.weights) w *= 2.0;
    Tensor pd = ensemble_predict(doubled, f.batch);
    for (std::size_t g = 0; g < p.size(); ++g) CHECK(pd[g] == 2.0 * p[g]);
  }
}

TEST_CASE("single-member average ensemble adapts like its member") {
  Fixture f;
  for (ArchKind k : {ArchKind::kGcn, ArchKind::kMpnn}) {
    auto members = f.members(k, 1);
    EnsembleAdaptResult e = ensemble_adapt(ensemble_init(members, EnsembleMode::kAverage), f.batch, 5e-3, 5);
    AdaptResult m = inner_adapt(members[0], f.batch, 5e-3, 5);
    CHECK(e.ensemble.members[0] == m.model);
    CHECK(e.losses == m.losses);
    CHECK(e.ensemble.weights == std::vector<double>{1.0});
  }
}

TEST_CASE("zero rates leave the ensemble unchanged") {
  Fixture f;
  Ensemble e = ensemble_init(f.members(ArchKind::kGcn, 2), EnsembleMode::kLearned);
  EnsembleAdaptResult r = ensemble_adapt(e, f.batch, 0.0, 3);
  CHECK(r.ensemble == e);
  CHECK_THROWS_AS(ensemble_adapt(e, f.batch, 5e-3, 0), ContractError);
}

TEST_CASE("weight gradient matches the closed form and finite differences") {
  Fixture f;
  Ensemble e = ensemble_init(f.members(ArchKind::kGcn, 3), EnsembleMode::kLearned);
  e.weights = {0.7, -0.4, 0.2};
  EnsembleLossGrad lg = ensemble_loss_and_grad(e, f.batch);

  // dL/dw_m = (2/G) Σ_g (ŷ_g − y_g) f_m(g)
  std::vector<Tensor> preds;
  for (const ModelParams& mp : e.members) preds.push_back(model_predict(mp, f.batch, Mode::kTrain));
  const double count = static_cast<double>(f.batch.num_graphs);
  for (std::size_t m = 0; m < 3; ++m) {
    double expect = 0;
    for (std::size_t g = 0; g < f.batch.num_graphs; ++g) {
      double y_hat = 0;
      for (std::size_t j = 0; j < 3; ++j) y_hat += e.weights[j] * preds[j][g];
      expect += 2.0 * (y_hat - f.batch.labels[g]) * preds[m][g] / count;
    }
    CHECK(std::abs(lg.weight_grads[m] - expect) < 1e-12);

    const double eps = 1e-6;
    Ensemble up = e, down = e;
    up.weights[m] += eps;
    down.weights[m] -= eps;
    const double fd = (ensemble_mse(up, f.batch, Mode::kTrain) - ensemble_mse(down, f.batch, Mode::kTrain)) / (2 * eps);
    CHECK(std::abs(fd - lg.weight_grads[m]) < 1e-6);
  }
}

TEST_CASE("opposite members receive opposite weight gradients") {
  // Member 1 copies member 0 with a negated output head, so f_1 = −f_0 on every graph.
  Fixture f;
  ModelParams base = f.members(ArchKind::kMpnn, 1).front();
  ModelParams neg = base;
  for (double& v : neg.params.at("head.weight").data()) v = -v;
  for (double& v : neg.params.at("head.bias").data()) v = -v;
  Ensemble e = ensemble_init({base, neg}, EnsembleMode::kLearned);
  e.weights = {0.6, 0.1};
  EnsembleLossGrad lg = ensemble_loss_and_grad(e, f.batch);
  CHECK(lg.weight_grads[0] == -lg.weight_grads[1]);
  CHECK(lg.weight_grads[0] != 0.0);
}

TEST_CASE("learned mode with a frozen weight rate matches average mode") {
  Fixture f;
  auto members = f.members(ArchKind::kGcn, 2);
  EnsembleAdaptResult avg = ensemble_adapt(ensemble_init(members, EnsembleMode::kAverage), f.batch, 5e-3, 5);
  EnsembleAdaptResult frozen = ensemble_adapt(ensemble_init(members, EnsembleMode::kLearned), f.batch, 5e-3, 5, 0.0);
  CHECK(avg.losses == frozen.losses);
  CHECK(avg.ensemble.members == frozen.ensemble.members);
  CHECK(frozen.ensemble.weights == std::vector<double>{0.5, 0.5});

  EnsembleAdaptResult learned = ensemble_adapt(ensemble_init(members, EnsembleMode::kLearned), f.batch, 5e-3, 5);
  CHECK(learned.ensemble.weights != std::vector<double>{0.5, 0.5});
  CHECK(avg.ensemble.weights == std::vector<double>{0.5, 0.5});
}

TEST_CASE("ensemble documents round trip") {
  Fixture f;
  Ensemble e = ensemble_init(f.members(ArchKind::kMpnn, 2), EnsembleMode::kLearned);
  e.weights = {0.3, 0.8};
  const std::string text = ensemble_to_json(e);
  CHECK(ensemble_from_json(nlohmann::json::parse(text)) == e);

  const auto path = std::filesystem::temp_directory_path() / "metagnn_ensemble_test.json";
  save_ensemble(path.string(), e);
  CHECK(load_ensemble(path.string()) == e);
  std::filesystem::remove(path);

  nlohmann::json doc = nlohmann::json::parse(text);
  doc["weights"] = {1.0};
  CHECK_THROWS_AS(ensemble_from_json(doc), SchemaError);
  doc = nlohmann::json::parse(text);
  doc["mode"] = "median";
  CHECK_THROWS_AS(ensemble_from_json(doc), SchemaError);
  CHECK_THROWS_AS(load_ensemble("/nonexistent/ensemble.json"), IoError);
  CHECK(parse_ensemble_mode("average") == EnsembleMode::kAverage);
  CHECK_THROWS_AS(parse_ensemble_mode("vote"), ContractError);
}
