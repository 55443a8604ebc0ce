#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mocl/ops.hpp"
#include "mocl/rng.hpp"

namespace mocl {

enum class PeftKind { prefix, lora };

std::string to_string(PeftKind kind);
PeftKind peft_kind_from_string(const std::string& s);

// Geometry a module must share with the backbone it adapts.
struct PeftConfig {
  PeftKind kind = PeftKind::prefix;
  int layers = 2;
  int model_dim = 64;
  int heads = 4;
  int prefix_len = 8;
  int lora_rank = 4;
  double lora_scale = 1.0;
};

// Per-layer key/value prefixes, stored prefix_len x model_dim with heads
// occupying contiguous column blocks of width model_dim / heads.
struct PrefixLayer {
  Tensor key;
  Tensor value;
};

// Low-rank factors for one adapted projection: delta = scale * b * a.
struct LoraSite {
  Tensor a;  // rank x model_dim
  Tensor b;  // model_dim x rank
};

// LoRA adapts the attention query and value projections.
struct LoraLayer {
  LoraSite q;
  LoraSite v;
};

struct PeftModule {
  PeftKind kind = PeftKind::prefix;
  int task_id = 0;
  bool frozen = false;
  int prefix_len = 0;
  double lora_scale = 1.0;
  std::vector<PrefixLayer> prefix_layers;
  std::vector<LoraLayer> lora_layers;

  int layer_count() const;
  int model_dim() const;
  // Trainable parameter handles in a fixed order.
  std::vector<Tensor> parameters() const;
  // Frozen modules never receive gradients and must stay bit-identical.
  void set_frozen(bool f);
  std::uint64_t param_hash() const;
};

// Effective parameters after weighted summation (or concatenation, for the
// progressive baseline). Tensors are tracked whenever a tape is active and a
// contributor or weight requires gradients.
struct ComposedModule {
  PeftKind kind = PeftKind::prefix;
  int prefix_len = 0;
  std::vector<PrefixLayer> prefix_layers;            // kind == prefix
  std::vector<Tensor> delta_q, delta_v;              // kind == lora, per layer
  std::vector<Tensor> weights;                       // contributing alphas
};

// Fresh unfrozen module: prefix tensors gaussian (sigma 0.02); LoRA A gaussian
// (sigma 0.02) and B zero so the initial update is exactly zero.
PeftModule init_module(PeftKind kind, int task_id, const PeftConfig& cfg, Rng rng);

// Weighted summation of same-kind modules. For LoRA the sum is taken over the
// effective updates scale_k * B_k * A_k, not over the factors.
ComposedModule compose(const std::vector<const PeftModule*>& modules,
                       const std::vector<Tensor>& alpha);
ComposedModule compose(const std::vector<const PeftModule*>& modules,
                       const Vector& alpha);

// Concatenation [P_1; ...; P_n] along the prefix-length axis (prefix kind
// only; the progressive baseline's composition rule).
ComposedModule concat_prefixes(const std::vector<const PeftModule*>& modules);

}  // namespace mocl
