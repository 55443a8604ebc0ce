#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mocl/peft.hpp"

namespace mocl {

// Token-to-id map with fixed special ids CLS=0, PAD=1, UNK=2.
class Vocab {
 public:
  static constexpr int kCls = 0;
  static constexpr int kPad = 1;
  static constexpr int kUnk = 2;

  Vocab();

  // Returns the id, inserting the token when new.
  int add(const std::string& token);
  // Returns kUnk for unknown tokens.
  int id(const std::string& token) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;

  // Plain-text token-per-line file with the three special tokens as a fixed
  // header.
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> tokens_;
};

// Padded token-id sequence; positions >= true_len hold PAD.
struct TokenSeq {
  std::vector<int> ids;
  int true_len = 0;
};

// Lowercase, whitespace-split, map through the vocab (UNK on miss), prepend
// CLS, truncate or pad to max_len.
TokenSeq tokenize(const Vocab& vocab, std::string_view text, int max_len);

struct BackboneConfig {
  int vocab_size = 0;
  int model_dim = 64;
  int layers = 2;
  int heads = 4;
  int max_len = 32;
  int ffn_dim = 256;
  double ln_eps = 1e-5;

  int head_dim() const { return model_dim / heads; }
  void validate() const;
};

struct EncoderLayer {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, wk, wv, wo;
  Tensor ln2_gain, ln2_bias;
  Tensor w1, b1, w2, b2;
};

// Tiny pre-layer-norm transformer encoder; the frozen stand-in for a
// pretrained language model.
struct Backbone {
  BackboneConfig cfg;
  Tensor token_embedding;     // vocab_size x model_dim
  Tensor position_embedding;  // max_len x model_dim
  std::vector<EncoderLayer> layers;
  Tensor lnf_gain, lnf_bias;
  bool frozen = false;

  std::vector<Tensor> parameters() const;
  void set_frozen(bool f);
  std::uint64_t param_hash() const;
  Backbone clone() const;
};

Backbone make_backbone(const BackboneConfig& cfg, Rng rng);

// Per-task classification head; heads of different tasks share nothing.
struct Head {
  int task_id = 0;
  Tensor weight;  // model_dim x classes
  Tensor bias;    // 1 x classes

  std::vector<Tensor> parameters() const { return {weight, bias}; }
  std::uint64_t param_hash() const { return hash_tensors(parameters()); }
};

Head make_head(int task_id, int model_dim, int classes, Rng rng);

struct Encoded {
  Tensor states;  // max_len x model_dim
  Tensor pooled;  // 1 x model_dim, masked mean over non-PAD positions
};

// Runs the encoder with an optional PEFT module injected. Prefix modules
// prepend per-head key/value rows to every attention layer (prefix positions
// are attended to but never query); LoRA modules add their effective delta to
// the query and value projections for the forward only. module == nullptr is
// the bare backbone, whose pooled output is the task-matching embedding.
Encoded encode(const Backbone& bb, const TokenSeq& toks,
               const ComposedModule* module = nullptr);

// Affine map from pooled state to task logits.
Tensor classify(const Tensor& pooled, const Head& head);

// Bare-backbone pooled embedding, never recorded on a tape.
RowVector pooled_embedding(const Backbone& bb, const TokenSeq& toks);

int argmax_row(const RowVector& v);

}  // namespace mocl
