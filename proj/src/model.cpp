#include "metagnn/model.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <vector>

#include "metagnn/error.hpp"
#include "metagnn/format.hpp"
#include "metagnn/rng.hpp"

namespace metagnn {

using nlohmann::json;

std::string_view arch_name(ArchKind kind) {
  switch (kind) {
    case ArchKind::kGcn: return "gcn";
    case ArchKind::kGat: return "gat";
    case ArchKind::kMpnn: return "mpnn";
    case ArchKind::kEgnn: return "egnn";
  }
  return "?";
}

ArchKind parse_arch(std::string_view name) {
  for (ArchKind k : {ArchKind::kGcn, ArchKind::kGat, ArchKind::kMpnn, ArchKind::kEgnn}) {
    if (arch_name(k) == name) return k;
  }
  throw ContractError("unknown architecture '" + std::string(name) + "' (expected gcn, gat, mpnn or egnn)");
}

void validate_architecture(const Architecture& arch) {
  if (arch.hidden_dim < 1) throw ContractError("architecture: hidden_dim must be >= 1");
  if (arch.num_layers < 1) throw ContractError("architecture: num_layers must be >= 1");
  if (arch.d_node < 1) throw ContractError("architecture: d_node must be >= 1");
}

namespace {

enum class Fill { kUniform, kZero, kOne };

struct Entry {
  std::string name;
  Shape shape;
  Fill fill;
};

struct Layout {
  std::vector<Entry> params;   // construction (and random draw) order
  std::vector<Entry> buffers;
};

void add_mlp(Layout& out, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t width,
             bool with_bn) {
  out.params.push_back({prefix + ".lin1.weight", {in, hidden}, Fill::kUniform});
  out.params.push_back({prefix + ".lin1.bias", {1, hidden}, Fill::kZero});
  if (with_bn) {
    out.params.push_back({prefix + ".bn.scale", {1, hidden}, Fill::kOne});
    out.params.push_back({prefix + ".bn.shift", {1, hidden}, Fill::kZero});
    out.buffers.push_back({prefix + ".bn.running_mean", {1, hidden}, Fill::kZero});
    out.buffers.push_back({prefix + ".bn.running_var", {1, hidden}, Fill::kOne});
  }
  out.params.push_back({prefix + ".lin2.weight", {hidden, width}, Fill::kUniform});
  out.params.push_back({prefix + ".lin2.bias", {1, width}, Fill::kZero});
}

Layout make_layout(const Architecture& a) {
  validate_architecture(a);
  Layout out;
  const std::size_t H = a.hidden_dim;
  const std::size_t L = a.num_layers;
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t in = l == 0 ? a.d_node : H;
    const std::string n = std::to_string(l);
    switch (a.kind) {
      case ArchKind::kGcn:
      case ArchKind::kGat: {
        const std::size_t width = l + 1 == L ? 1 : H;
        const std::string p = (a.kind == ArchKind::kGcn ? "gcn" : "gat") + n;
        out.params.push_back({p + ".weight", {in, width}, Fill::kUniform});
        if (a.kind == ArchKind::kGat) out.params.push_back({p + ".attention", {2 * width, 1}, Fill::kUniform});
        out.params.push_back({p + ".bias", {1, width}, Fill::kZero});
        if (l + 1 < L) {
          out.params.push_back({"norm" + n + ".scale", {1, H}, Fill::kOne});
          out.params.push_back({"norm" + n + ".shift", {1, H}, Fill::kZero});
        }
        break;
      }
      case ArchKind::kMpnn:
        add_mlp(out, "mp" + n + ".psi", 2 * in + a.d_edge, H, H, true);
        add_mlp(out, "mp" + n + ".phi", in + H, H, H, true);
        break;
      case ArchKind::kEgnn:
        add_mlp(out, "egnn" + n + ".psi_e", 2 * in + 1 + a.d_edge, H, H, true);
        add_mlp(out, "egnn" + n + ".psi_x", H, H, 1, false);
        add_mlp(out, "egnn" + n + ".phi", in + H, H, H, true);
        break;
    }
  }
  if (a.kind == ArchKind::kMpnn || a.kind == ArchKind::kEgnn) {
    out.params.push_back({"head.weight", {H, 1}, Fill::kUniform});
    out.params.push_back({"head.bias", {1, 1}, Fill::kZero});
  }
  return out;
}

Tensor filled(const Entry& e, Rng& rng) {
  switch (e.fill) {
    case Fill::kZero: return Tensor(e.shape);
    case Fill::kOne: return Tensor::full(e.shape, 1.0);
    case Fill::kUniform: break;
  }
  const double bound = std::sqrt(1.0 / static_cast<double>(e.shape[0]));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(e.shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

const Var& need(const std::map<std::string, Var>& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw ContractError("model_forward: missing parameter '" + name + "'");
  return it->second;
}

const Tensor& need_buffer(const ParamSet& buffers, const std::string& name) {
  auto it = buffers.find(name);
  if (it == buffers.end()) throw ContractError("model_forward: missing buffer '" + name + "'");
  return it->second;
}

MlpWeights mlp_weights(const std::map<std::string, Var>& vars, const ParamSet& buffers, const std::string& prefix,
                       bool with_bn) {
  MlpWeights w;
  w.w1 = need(vars, prefix + ".lin1.weight");
  w.b1 = need(vars, prefix + ".lin1.bias");
  w.w2 = need(vars, prefix + ".lin2.weight");
  w.b2 = need(vars, prefix + ".lin2.bias");
  if (with_bn) {
    BatchNormWeights bn;
    bn.scale = need(vars, prefix + ".bn.scale");
    bn.shift = need(vars, prefix + ".bn.shift");
    bn.running_mean = &need_buffer(buffers, prefix + ".bn.running_mean");
    bn.running_var = &need_buffer(buffers, prefix + ".bn.running_var");
    bn.name = prefix + ".bn";
    w.bn = std::move(bn);
  }
  return w;
}

}  // namespace

ModelParams model_init(const Architecture& arch, std::uint64_t seed) {
  const Layout layout = make_layout(arch);
  Rng rng(seed);
  ModelParams mp;
  mp.arch = arch;
  for (const Entry& e : layout.params) mp.params.emplace(e.name, filled(e, rng));
  for (const Entry& e : layout.buffers) mp.buffers.emplace(e.name, filled(e, rng));
  return mp;
}

Var model_forward(Tape& tape, const ModelParams& mp, const std::map<std::string, Var>& vars, const GraphBatch& batch,
                  const RunMode& run, Var* coords_out) {
  const Architecture& a = mp.arch;
  if (batch.node_feats.cols() != a.d_node) {
    throw ContractError("model_forward: batch has " + std::to_string(batch.node_feats.cols()) +
                        " node features, architecture expects " + std::to_string(a.d_node));
  }
  if (batch.edge_feats.cols() != a.d_edge) {
    throw ContractError("model_forward: batch has " + std::to_string(batch.edge_feats.cols()) +
                        " edge features, architecture expects " + std::to_string(a.d_edge));
  }

  Var h = tape.constant(batch.node_feats);
  const std::size_t L = a.num_layers;
  switch (a.kind) {
    case ArchKind::kGcn:
    case ArchKind::kGat: {
      for (std::size_t l = 0; l < L; ++l) {
        const std::string n = std::to_string(l);
        if (a.kind == ArchKind::kGcn) {
          h = gcn_layer(h, batch, need(vars, "gcn" + n + ".weight"), need(vars, "gcn" + n + ".bias"));
        } else {
          h = gat_layer(h, batch, need(vars, "gat" + n + ".weight"), need(vars, "gat" + n + ".attention"),
                        need(vars, "gat" + n + ".bias"));
        }
        if (l + 1 < L) {
          h = ad::relu(graph_norm(h, batch, need(vars, "norm" + n + ".scale"), need(vars, "norm" + n + ".shift")));
        }
      }
      return global_max_pool(h, batch);
    }
    case ArchKind::kMpnn:
    case ArchKind::kEgnn: {
      Var e = tape.constant(batch.edge_feats);
      Var x;
      if (a.kind == ArchKind::kEgnn) {
        if (!batch.coords) throw ContractError("model_forward: egnn needs coordinates");
        x = tape.constant(*batch.coords);
      }
      for (std::size_t l = 0; l < L; ++l) {
        const std::string n = std::to_string(l);
        if (a.kind == ArchKind::kMpnn) {
          const std::string p = "mp" + n;
          h = mpnn_layer(h, e, batch, mlp_weights(vars, mp.buffers, p + ".psi", true),
                         mlp_weights(vars, mp.buffers, p + ".phi", true), run);
        } else {
          const std::string p = "egnn" + n;
          EgnnOutput out = egnn_layer(h, x, e, batch, mlp_weights(vars, mp.buffers, p + ".psi_e", true),
                                      mlp_weights(vars, mp.buffers, p + ".psi_x", false),
                                      mlp_weights(vars, mp.buffers, p + ".phi", true), run);
          h = out.h;
          x = out.x;
        }
      }
      if (coords_out != nullptr && x.valid()) *coords_out = x;
      return ad::add(ad::matmul(global_max_pool(h, batch), need(vars, "head.weight")), need(vars, "head.bias"));
    }
  }
  throw ContractError("model_forward: unknown architecture");
}

Tensor model_predict(const ModelParams& mp, const GraphBatch& batch, Mode mode) {
  Tape tape;
  auto vars = register_parameters(tape, mp.params);
  return model_forward(tape, mp, vars, batch, RunMode{mode, nullptr}).value();
}

double batch_mse(const ModelParams& mp, const GraphBatch& batch, Mode mode) {
  Tape tape;
  auto vars = register_parameters(tape, mp.params);
  Var pred = model_forward(tape, mp, vars, batch, RunMode{mode, nullptr});
  return ad::mse(pred, tape.constant(batch.labels)).value().item();
}

LossGrad loss_and_grad(const ModelParams& mp, const GraphBatch& batch) {
  Tape tape;
  auto vars = register_parameters(tape, mp.params);
  LossGrad out;
  out.buffers = mp.buffers;
  Var pred = model_forward(tape, mp, vars, batch, RunMode{Mode::kTrain, &out.buffers});
  Var loss = ad::mse(pred, tape.constant(batch.labels));
  out.loss = loss.value().item();
  out.grads = tape.backward(loss);
  return out;
}

// ---------------------------------------------------------------------------

json architecture_to_json(const Architecture& arch) {
  return json{{"hidden_dim", arch.hidden_dim},
              {"num_layers", arch.num_layers},
              {"d_node", arch.d_node},
              {"d_edge", arch.d_edge}};
}

Architecture architecture_from_json(const json& doc) {
  try {
    Architecture a;
    a.kind = parse_arch(doc.at("arch").get<std::string>());
    const json& h = doc.at("hyperparams");
    a.hidden_dim = h.at("hidden_dim").get<std::size_t>();
    a.num_layers = h.at("num_layers").get<std::size_t>();
    a.d_node = h.at("d_node").get<std::size_t>();
    a.d_edge = h.at("d_edge").get<std::size_t>();
    validate_architecture(a);
    return a;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("parameter document: ") + e.what());
  } catch (const ContractError& e) {
    throw SchemaError(std::string("parameter document: ") + e.what());
  }
}

std::string tensors_to_json(const ParamSet& tensors) {
  std::ostringstream out;
  out << '{';
  bool first = true;
  for (const auto& [name, t] : tensors) {
    out << (first ? "\n  " : ",\n  ") << json(name).dump() << ": {\"shape\": [";
    first = false;
    for (std::size_t i = 0; i < t.shape().size(); ++i) out << (i ? ", " : "") << t.shape()[i];
    out << "], \"data\": [";
    for (std::size_t i = 0; i < t.size(); ++i) out << (i ? ", " : "") << format_exact(t[i]);
    out << "]}";
  }
  out << (first ? "}" : "\n}");
  return out.str();
}

ParamSet tensors_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("tensor map must be a JSON object");
  ParamSet out;
  for (const auto& [name, entry] : j.items()) {
    try {
      Shape shape = entry.at("shape").get<Shape>();
      std::vector<double> data = entry.at("data").get<std::vector<double>>();
      out.emplace(name, Tensor(std::move(shape), std::move(data)));
    } catch (const json::exception& e) {
      throw SchemaError("tensor '" + name + "': " + e.what());
    } catch (const ShapeError& e) {
      throw SchemaError("tensor '" + name + "': " + e.what());
    }
  }
  return out;
}

std::string model_to_json(const ModelParams& mp, const json& hyperparams) {
  json h = hyperparams.is_object() ? hyperparams : json::object();
  h.update(architecture_to_json(mp.arch));
  std::ostringstream out;
  out << "{\n\"arch\": " << json(std::string(arch_name(mp.arch.kind))).dump() << ",\n\"hyperparams\": " << h.dump()
      << ",\n\"params\": " << tensors_to_json(mp.params) << ",\n\"buffers\": " << tensors_to_json(mp.buffers)
      << "\n}\n";
  return out.str();
}

namespace {

void check_layout(const ParamSet& got, const ParamSet& expected, const char* what) {
  for (const auto& [name, t] : expected) {
    auto it = got.find(name);
    if (it == got.end()) throw SchemaError(std::string(what) + " '" + name + "' missing from parameter document");
    if (it->second.shape() != t.shape()) {
      throw SchemaError(std::string(what) + " '" + name + "' has shape " + shape_to_string(it->second.shape()) +
                        ", expected " + shape_to_string(t.shape()));
    }
    if (!it->second.all_finite()) throw SchemaError(std::string(what) + " '" + name + "' holds non-finite values");
  }
  for (const auto& [name, t] : got) {
    if (!expected.contains(name)) throw SchemaError(std::string("unexpected ") + what + " '" + name + "'");
  }
}

}  // namespace

ModelDocument model_from_json(const json& doc) {
  if (!doc.is_object()) throw SchemaError("parameter document must be a JSON object");
  ModelDocument out;
  out.model.arch = architecture_from_json(doc);
  out.hyperparams = doc.at("hyperparams");
  if (!doc.contains("params")) throw SchemaError("parameter document lacks 'params'");
  out.model.params = tensors_from_json(doc.at("params"));
  const ModelParams reference = model_init(out.model.arch, 0);
  out.model.buffers = doc.contains("buffers") ? tensors_from_json(doc.at("buffers")) : reference.buffers;
  check_layout(out.model.params, reference.params, "parameter");
  check_layout(out.model.buffers, reference.buffers, "buffer");
  return out;
}

void save_model(const std::string& path, const ModelParams& mp, const json& hyperparams) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << model_to_json(mp, hyperparams);
  if (!f) throw IoError("failed writing '" + path + "'");
}

ModelDocument load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
  return model_from_json(doc);
}

}  // namespace metagnn
