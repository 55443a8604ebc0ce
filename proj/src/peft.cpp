#include "mocl/peft.hpp"

namespace mocl {

std::string to_string(PeftKind kind) { return kind == PeftKind::prefix ? "prefix" : "lora"; }

PeftKind peft_kind_from_string(const std::string& s) {
  if (s == "prefix") return PeftKind::prefix;
  if (s == "lora") return PeftKind::lora;
  throw ConfigError("unsupported PEFT kind '" + s + "' (expected prefix or lora)");
}

namespace {

Matrix gaussian(Eigen::Index r, Eigen::Index c, double sigma, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, sigma);
  return m;
}

}  // namespace

int PeftModule::layer_count() const {
  return kind == PeftKind::prefix ? static_cast<int>(prefix_layers.size())
                                  : static_cast<int>(lora_layers.size());
}

int PeftModule::model_dim() const {
  if (kind == PeftKind::prefix)
    return prefix_layers.empty() ? 0 : static_cast<int>(prefix_layers.front().key.cols());
  return lora_layers.empty() ? 0 : static_cast<int>(lora_layers.front().q.b.rows());
}

std::vector<Tensor> PeftModule::parameters() const {
  std::vector<Tensor> out;
  if (kind == PeftKind::prefix) {
    for (const PrefixLayer& l : prefix_layers) {
      out.push_back(l.key);
      out.push_back(l.value);
    }
  } else {
    for (const LoraLayer& l : lora_layers) {
      out.push_back(l.q.a);
      out.push_back(l.q.b);
      out.push_back(l.v.a);
      out.push_back(l.v.b);
    }
  }
  return out;
}

void PeftModule::set_frozen(bool f) {
  frozen = f;
  for (Tensor& t : parameters()) t.set_requires_grad(!f);
}

std::uint64_t PeftModule::param_hash() const { return hash_tensors(parameters()); }

PeftModule init_module(PeftKind kind, int task_id, const PeftConfig& cfg, Rng rng) {
  if (cfg.model_dim < 1 || cfg.layers < 1)
    throw ConfigError("init_module: invalid dimensions");
  PeftModule m;
  m.kind = kind;
  m.task_id = task_id;
  if (kind == PeftKind::prefix) {
    if (cfg.prefix_len < 0) throw ConfigError("init_module: prefix_len must be >= 0");
    m.prefix_len = cfg.prefix_len;
    for (int l = 0; l < cfg.layers; ++l) {
      PrefixLayer layer;
      layer.key = Tensor::param(gaussian(cfg.prefix_len, cfg.model_dim, 0.02, rng));
      layer.value = Tensor::param(gaussian(cfg.prefix_len, cfg.model_dim, 0.02, rng));
      m.prefix_layers.push_back(std::move(layer));
    }
  } else {
    if (cfg.lora_rank < 1) throw ConfigError("init_module: lora_rank must be >= 1");
    m.lora_scale = cfg.lora_scale;
    for (int l = 0; l < cfg.layers; ++l) {
      LoraLayer layer;
      layer.q.a = Tensor::param(gaussian(cfg.lora_rank, cfg.model_dim, 0.02, rng));
      layer.q.b = Tensor::param(Matrix::Zero(cfg.model_dim, cfg.lora_rank));
      layer.v.a = Tensor::param(gaussian(cfg.lora_rank, cfg.model_dim, 0.02, rng));
      layer.v.b = Tensor::param(Matrix::Zero(cfg.model_dim, cfg.lora_rank));
      m.lora_layers.push_back(std::move(layer));
    }
  }
  return m;
}

namespace {

void check_composable(const std::vector<const PeftModule*>& modules, std::size_t n_weights) {
  if (modules.empty()) throw CompositionError("compose: empty module list");
  if (n_weights != modules.size())
    throw CompositionError("compose: " + std::to_string(n_weights) + " weights for " +
                           std::to_string(modules.size()) + " modules");
  const PeftModule* first = modules.front();
  for (const PeftModule* m : modules) {
    if (m->kind != first->kind) throw CompositionError("compose: mixed module kinds");
    if (m->layer_count() != first->layer_count() || m->model_dim() != first->model_dim())
      throw CompositionError("compose: module dimensions differ");
    if (m->kind == PeftKind::prefix && m->prefix_len != first->prefix_len)
      throw CompositionError("compose: prefix lengths differ");
  }
}

}  // namespace

ComposedModule compose(const std::vector<const PeftModule*>& modules,
                       const std::vector<Tensor>& alpha) {
  check_composable(modules, alpha.size());
  ComposedModule out;
  out.kind = modules.front()->kind;
  out.weights = alpha;
  const int layers = modules.front()->layer_count();

  if (out.kind == PeftKind::prefix) {
    out.prefix_len = modules.front()->prefix_len;
    for (int l = 0; l < layers; ++l) {
      Tensor key = scalar_mul(alpha[0], modules[0]->prefix_layers[l].key);
      Tensor value = scalar_mul(alpha[0], modules[0]->prefix_layers[l].value);
      for (std::size_t k = 1; k < modules.size(); ++k) {
        key = add(key, scalar_mul(alpha[k], modules[k]->prefix_layers[l].key));
        value = add(value, scalar_mul(alpha[k], modules[k]->prefix_layers[l].value));
      }
      out.prefix_layers.push_back({key, value});
    }
  } else {
    for (int l = 0; l < layers; ++l) {
      auto delta = [&](LoraSite LoraLayer::* site) {
        const LoraSite& s0 = modules[0]->lora_layers[l].*site;
        Tensor d = scalar_mul(alpha[0], scale(matmul(s0.b, s0.a), modules[0]->lora_scale));
        for (std::size_t k = 1; k < modules.size(); ++k) {
          const LoraSite& sk = modules[k]->lora_layers[l].*site;
          d = add(d, scalar_mul(alpha[k], scale(matmul(sk.b, sk.a), modules[k]->lora_scale)));
        }
        return d;
      };
      out.delta_q.push_back(delta(&LoraLayer::q));
      out.delta_v.push_back(delta(&LoraLayer::v));
    }
  }
  return out;
}

ComposedModule compose(const std::vector<const PeftModule*>& modules, const Vector& alpha) {
  std::vector<Tensor> ts;
  ts.reserve(static_cast<std::size_t>(alpha.size()));
  for (Eigen::Index i = 0; i < alpha.size(); ++i) ts.push_back(Tensor::scalar(alpha(i)));
  return compose(modules, ts);
}

ComposedModule concat_prefixes(const std::vector<const PeftModule*>& modules) {
  if (modules.empty()) throw CompositionError("concat_prefixes: empty module list");
  for (const PeftModule* m : modules)
    if (m->kind != PeftKind::prefix)
      throw UnsupportedKindError("concat_prefixes: only prefix modules can be concatenated");
  const int layers = modules.front()->layer_count();
  for (const PeftModule* m : modules)
    if (m->layer_count() != layers || m->model_dim() != modules.front()->model_dim())
      throw CompositionError("concat_prefixes: module dimensions differ");

  ComposedModule out;
  out.kind = PeftKind::prefix;
  for (int l = 0; l < layers; ++l) {
    Tensor key = modules[0]->prefix_layers[l].key;
    Tensor value = modules[0]->prefix_layers[l].value;
    for (std::size_t k = 1; k < modules.size(); ++k) {
      key = vstack(key, modules[k]->prefix_layers[l].key);
      value = vstack(value, modules[k]->prefix_layers[l].value);
    }
    out.prefix_layers.push_back({key, value});
  }
  out.prefix_len = static_cast<int>(out.prefix_layers.empty()
                                        ? 0
                                        : out.prefix_layers.front().key.rows());
  return out;
}

}  // namespace mocl
