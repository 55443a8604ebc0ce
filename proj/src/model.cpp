#include "mocl/model.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

namespace mocl {

namespace {
constexpr const char* kVocabHeader = "#mocl-vocab-v1";
}

Vocab::Vocab() {
  for (const char* s : {"[CLS]", "[PAD]", "[UNK]"}) {
    ids_.emplace(s, static_cast<int>(tokens_.size()));
    tokens_.emplace_back(s);
  }
}

int Vocab::add(const std::string& token) {
  auto [it, inserted] = ids_.emplace(token, static_cast<int>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

int Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw IndexError("Vocab::token: id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocab file " + path);
  out << kVocabHeader << "\n";
  for (const std::string& t : tokens_) out << t << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read vocab file " + path);
  std::string line;
  if (!std::getline(in, line) || line != kVocabHeader)
    throw ParseError("vocab file " + path + ": missing header " + kVocabHeader, 1);
  Vocab v;
  long line_no = 1;
  // The three specials must come first, in id order.
  for (int i = 0; i < 3; ++i) {
    ++line_no;
    if (!std::getline(in, line) || line != v.tokens_[static_cast<std::size_t>(i)])
      throw ParseError("vocab file " + path + ": bad special-token header", line_no);
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    v.add(line);
  }
  return v;
}

TokenSeq tokenize(const Vocab& vocab, std::string_view text, int max_len) {
  if (max_len < 2) throw ConfigError("tokenize: max_len must be >= 2");
  TokenSeq seq;
  seq.ids.reserve(static_cast<std::size_t>(max_len));
  seq.ids.push_back(Vocab::kCls);
  std::string word;
  auto flush = [&] {
    if (!word.empty() && static_cast<int>(seq.ids.size()) < max_len)
      seq.ids.push_back(vocab.id(word));
    word.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  seq.true_len = static_cast<int>(seq.ids.size());
  seq.ids.resize(static_cast<std::size_t>(max_len), Vocab::kPad);
  return seq;
}

void BackboneConfig::validate() const {
  if (vocab_size < 3) throw ConfigError("backbone: vocab_size must cover the special tokens");
  if (model_dim < 1 || layers < 1 || heads < 1 || max_len < 2 || ffn_dim < 1)
    throw ConfigError("backbone: dimensions must be positive");
  if (model_dim % heads != 0)
    throw ConfigError("backbone: model_dim (" + std::to_string(model_dim) +
                      ") not divisible by heads (" + std::to_string(heads) + ")");
}

namespace {

Matrix gaussian(Eigen::Index r, Eigen::Index c, double sigma, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, sigma);
  return m;
}

}  // namespace

Backbone make_backbone(const BackboneConfig& cfg, Rng rng) {
  cfg.validate();
  Backbone bb;
  bb.cfg = cfg;
  const int d = cfg.model_dim;
  bb.token_embedding = Tensor::param(gaussian(cfg.vocab_size, d, 0.02, rng));
  bb.position_embedding = Tensor::param(gaussian(cfg.max_len, d, 0.02, rng));
  for (int l = 0; l < cfg.layers; ++l) {
    EncoderLayer layer;
    layer.ln1_gain = Tensor::param(Matrix::Ones(1, d));
    layer.ln1_bias = Tensor::param(Matrix::Zero(1, d));
    layer.wq = Tensor::param(gaussian(d, d, 0.02, rng));
    layer.wk = Tensor::param(gaussian(d, d, 0.02, rng));
    layer.wv = Tensor::param(gaussian(d, d, 0.02, rng));
    layer.wo = Tensor::param(gaussian(d, d, 0.02, rng));
    layer.ln2_gain = Tensor::param(Matrix::Ones(1, d));
    layer.ln2_bias = Tensor::param(Matrix::Zero(1, d));
    layer.w1 = Tensor::param(gaussian(d, cfg.ffn_dim, 0.02, rng));
    layer.b1 = Tensor::param(Matrix::Zero(1, cfg.ffn_dim));
    layer.w2 = Tensor::param(gaussian(cfg.ffn_dim, d, 0.02, rng));
    layer.b2 = Tensor::param(Matrix::Zero(1, d));
    bb.layers.push_back(std::move(layer));
  }
  bb.lnf_gain = Tensor::param(Matrix::Ones(1, d));
  bb.lnf_bias = Tensor::param(Matrix::Zero(1, d));
  return bb;
}

std::vector<Tensor> Backbone::parameters() const {
  std::vector<Tensor> out{token_embedding, position_embedding};
  for (const EncoderLayer& l : layers) {
    out.insert(out.end(), {l.ln1_gain, l.ln1_bias, l.wq, l.wk, l.wv, l.wo, l.ln2_gain,
                           l.ln2_bias, l.w1, l.b1, l.w2, l.b2});
  }
  out.push_back(lnf_gain);
  out.push_back(lnf_bias);
  return out;
}

void Backbone::set_frozen(bool f) {
  frozen = f;
  for (Tensor& t : parameters()) t.set_requires_grad(!f);
}

std::uint64_t Backbone::param_hash() const { return hash_tensors(parameters()); }

Backbone Backbone::clone() const {
  Backbone out;
  out.cfg = cfg;
  out.frozen = frozen;
  out.token_embedding = token_embedding.clone();
  out.position_embedding = position_embedding.clone();
  for (const EncoderLayer& l : layers) {
    EncoderLayer c;
    c.ln1_gain = l.ln1_gain.clone();
    c.ln1_bias = l.ln1_bias.clone();
    c.wq = l.wq.clone();
    c.wk = l.wk.clone();
    c.wv = l.wv.clone();
    c.wo = l.wo.clone();
    c.ln2_gain = l.ln2_gain.clone();
    c.ln2_bias = l.ln2_bias.clone();
    c.w1 = l.w1.clone();
    c.b1 = l.b1.clone();
    c.w2 = l.w2.clone();
    c.b2 = l.b2.clone();
    out.layers.push_back(std::move(c));
  }
  out.lnf_gain = lnf_gain.clone();
  out.lnf_bias = lnf_bias.clone();
  return out;
}

Head make_head(int task_id, int model_dim, int classes, Rng rng) {
  if (classes < 2) throw ConfigError("make_head: need at least two classes");
  Head h;
  h.task_id = task_id;
  h.weight = Tensor::param(gaussian(model_dim, classes, 0.02, rng));
  h.bias = Tensor::param(Matrix::Zero(1, classes));
  return h;
}

namespace {

void check_module_dims(const Backbone& bb, const ComposedModule& m) {
  const int layers = bb.cfg.layers;
  const int d = bb.cfg.model_dim;
  if (m.kind == PeftKind::prefix) {
    if (static_cast<int>(m.prefix_layers.size()) != layers)
      throw ConfigError("encode: module has " + std::to_string(m.prefix_layers.size()) +
                        " prefix layers, backbone has " + std::to_string(layers));
    for (const PrefixLayer& l : m.prefix_layers)
      if (l.key.cols() != d || l.value.cols() != d || l.key.rows() != l.value.rows())
        throw ConfigError("encode: prefix tensor dimensions do not match backbone");
  } else {
    if (static_cast<int>(m.delta_q.size()) != layers ||
        static_cast<int>(m.delta_v.size()) != layers)
      throw ConfigError("encode: module layer count does not match backbone");
    for (int l = 0; l < layers; ++l)
      if (m.delta_q[l].rows() != d || m.delta_q[l].cols() != d || m.delta_v[l].rows() != d ||
          m.delta_v[l].cols() != d)
        throw ConfigError("encode: LoRA delta dimensions do not match backbone");
  }
}

}  // namespace

Encoded encode(const Backbone& bb, const TokenSeq& toks, const ComposedModule* module) {
  const BackboneConfig& cfg = bb.cfg;
  const int len = static_cast<int>(toks.ids.size());
  if (len < 1 || len > cfg.max_len)
    throw ConfigError("encode: sequence length " + std::to_string(len) +
                      " outside [1, " + std::to_string(cfg.max_len) + "]");
  if (toks.true_len < 1 || toks.true_len > len)
    throw ConfigError("encode: invalid true_len");
  if (module) check_module_dims(bb, *module);

  const int dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<int> positions(static_cast<std::size_t>(len));
  for (int i = 0; i < len; ++i) positions[static_cast<std::size_t>(i)] = i;

  Mask token_mask(static_cast<std::size_t>(len));
  for (int i = 0; i < len; ++i) token_mask[static_cast<std::size_t>(i)] = i < toks.true_len;

  Tensor x = add(embedding_rows(bb.token_embedding, toks.ids),
                 embedding_rows(bb.position_embedding, positions));

  for (int l = 0; l < cfg.layers; ++l) {
    const EncoderLayer& layer = bb.layers[static_cast<std::size_t>(l)];
    Tensor a = layer_norm_rows(x, layer.ln1_gain, layer.ln1_bias, cfg.ln_eps);

    Tensor wq = layer.wq;
    Tensor wv = layer.wv;
    if (module && module->kind == PeftKind::lora) {
      wq = add(wq, module->delta_q[static_cast<std::size_t>(l)]);
      wv = add(wv, module->delta_v[static_cast<std::size_t>(l)]);
    }
    Tensor q = matmul(a, wq);
    Tensor k = matmul(a, layer.wk);
    Tensor v = matmul(a, wv);

    int plen = 0;
    const PrefixLayer* prefix = nullptr;
    if (module && module->kind == PeftKind::prefix) {
      prefix = &module->prefix_layers[static_cast<std::size_t>(l)];
      plen = static_cast<int>(prefix->key.rows());
    }

    Mask key_mask;
    if (plen > 0) {
      key_mask.assign(static_cast<std::size_t>(plen), true);
      key_mask.insert(key_mask.end(), token_mask.begin(), token_mask.end());
    } else {
      key_mask = token_mask;
    }

    std::vector<Tensor> ctx_heads;
    ctx_heads.reserve(static_cast<std::size_t>(cfg.heads));
    for (int h = 0; h < cfg.heads; ++h) {
      Tensor qh = cols(q, h * dh, dh);
      Tensor kh = cols(k, h * dh, dh);
      Tensor vh = cols(v, h * dh, dh);
      if (plen > 0) {
        kh = vstack(cols(prefix->key, h * dh, dh), kh);
        vh = vstack(cols(prefix->value, h * dh, dh), vh);
      }
      Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt_dh);
      Tensor probs = softmax_rows_masked(scores, key_mask);
      ctx_heads.push_back(matmul(probs, vh));
    }
    x = add(x, matmul(hstack(ctx_heads), layer.wo));

    Tensor f = layer_norm_rows(x, layer.ln2_gain, layer.ln2_bias, cfg.ln_eps);
    Tensor hidden = gelu(add_row_bias(matmul(f, layer.w1), layer.b1));
    x = add(x, add_row_bias(matmul(hidden, layer.w2), layer.b2));
  }

  Encoded out;
  out.states = layer_norm_rows(x, bb.lnf_gain, bb.lnf_bias, cfg.ln_eps);
  out.pooled = masked_mean_rows(out.states, token_mask);
  return out;
}

Tensor classify(const Tensor& pooled, const Head& head) {
  return add_row_bias(matmul(pooled, head.weight), head.bias);
}

RowVector pooled_embedding(const Backbone& bb, const TokenSeq& toks) {
  NoGradScope no_grad;
  return encode(bb, toks, nullptr).pooled.value().row(0);
}

int argmax_row(const RowVector& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

}  // namespace mocl
