#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mocl/model.hpp"

using namespace mocl;

namespace {

Backbone tiny_backbone(int vocab = 8, int dim = 4, int layers = 1, int heads = 1,
                       int max_len = 4, int ffn = 8, std::uint64_t seed = 3) {
  BackboneConfig cfg;
  cfg.vocab_size = vocab;
  cfg.model_dim = dim;
  cfg.layers = layers;
  cfg.heads = heads;
  cfg.max_len = max_len;
  cfg.ffn_dim = ffn;
  return make_backbone(cfg, Rng(seed));
}

RowVector ln_row(const RowVector& x, const RowVector& g, const RowVector& b, double eps) {
  double mu = x.mean();
  double var = (x.array() - mu).square().mean();
  RowVector xhat = ((x.array() - mu) / std::sqrt(var + eps)).matrix();
  return (xhat.array() * g.array() + b.array()).matrix();
}

double gelu_scalar(double t) { return t * 0.5 * (1.0 + std::erf(t / std::sqrt(2.0))); }

}  // namespace

TEST_CASE("tokenize maps words through the vocab with CLS/PAD/UNK") {
  Vocab v;
  CHECK(v.add("a") == 3);
  CHECK(v.add("b") == 4);

  TokenSeq s = tokenize(v, "a b", 4);
  CHECK(s.ids == std::vector<int>{0, 3, 4, 1});
  CHECK(s.true_len == 3);

  TokenSeq u = tokenize(v, "a zzz", 4);
  CHECK(u.ids == std::vector<int>{0, 3, 2, 1});

  v.add("c");
  v.add("d");
  v.add("e");
  TokenSeq t = tokenize(v, "a b c d e", 4);
  CHECK(t.ids == std::vector<int>{0, v.id("a"), v.id("b"), v.id("c")});
  CHECK(t.true_len == 4);

  TokenSeq e = tokenize(v, "", 4);
  CHECK(e.ids == std::vector<int>{0, 1, 1, 1});
  CHECK(e.true_len == 1);

  CHECK(tokenize(v, "A  B", 4).ids == tokenize(v, "a b", 4).ids);  // lowercase + whitespace
  CHECK_THROWS_AS(tokenize(v, "a", 1), ConfigError);
}

TEST_CASE("vocab file round-trips and validates its header") {
  Vocab v;
  v.add("alpha");
  v.add("beta");
  std::string path = (std::filesystem::temp_directory_path() / "mocl_vocab_test.txt").string();
  v.save(path);
  Vocab w = Vocab::load(path);
  CHECK(w.size() == v.size());
  CHECK(w.id("alpha") == v.id("alpha"));
  CHECK(w.id("missing") == Vocab::kUnk);

  std::ofstream bad(path);
  bad << "nonsense\n";
  bad.close();
  CHECK_THROWS_AS(Vocab::load(path), ParseError);
  std::filesystem::remove(path);
}

TEST_CASE("encode is deterministic and matches itself bit for bit") {
  Backbone a = tiny_backbone();
  Backbone b = tiny_backbone();  // same seed
  TokenSeq toks{{0, 3, 4, 1}, 3};
  Encoded ea = encode(a, toks);
  Encoded eb = encode(b, toks);
  CHECK(ea.states.value() == eb.states.value());
  CHECK(ea.pooled.value() == eb.pooled.value());
}

TEST_CASE("zero-update injections are exact no-ops") {
  Backbone bb = tiny_backbone(8, 4, 2, 2, 6, 8);
  TokenSeq toks{{0, 3, 4, 5, 1, 1}, 4};
  Encoded bare = encode(bb, toks);

  PeftConfig pc;
  pc.kind = PeftKind::lora;
  pc.layers = 2;
  pc.model_dim = 4;
  pc.heads = 2;
  pc.lora_rank = 2;

  SUBCASE("lora with zero composition weight") {
    PeftModule m = init_module(PeftKind::lora, 1, pc, Rng(9));
    // Make B nonzero so the zero really comes from the weight.
    m.lora_layers[0].q.b.mutable_value().setConstant(0.5);
    ComposedModule cm = compose({&m}, Vector::Zero(1));
    Encoded injected = encode(bb, toks, &cm);
    CHECK(injected.states.value() == bare.states.value());
    CHECK(injected.pooled.value() == bare.pooled.value());
  }
  SUBCASE("freshly initialized lora (B = 0)") {
    PeftModule m = init_module(PeftKind::lora, 1, pc, Rng(9));
    ComposedModule cm = compose({&m}, Vector::Ones(1));
    Encoded injected = encode(bb, toks, &cm);
    CHECK(injected.states.value() == bare.states.value());
  }
  SUBCASE("prefix of length zero") {
    pc.kind = PeftKind::prefix;
    pc.prefix_len = 0;
    PeftModule m = init_module(PeftKind::prefix, 1, pc, Rng(9));
    ComposedModule cm = compose({&m}, Vector::Ones(1));
    Encoded injected = encode(bb, toks, &cm);
    CHECK(injected.states.value() == bare.states.value());
    CHECK(injected.pooled.value() == bare.pooled.value());
  }
  SUBCASE("zero-valued prefix tensors are NOT a no-op") {
    pc.kind = PeftKind::prefix;
    pc.prefix_len = 2;
    PeftModule m = init_module(PeftKind::prefix, 1, pc, Rng(9));
    for (PrefixLayer& l : m.prefix_layers) {
      l.key.mutable_value().setZero();
      l.value.mutable_value().setZero();
    }
    ComposedModule cm = compose({&m}, Vector::Ones(1));
    Encoded injected = encode(bb, toks, &cm);
    // Zero value-prefix rows still absorb attention mass through their keys.
    CHECK((injected.states.value() - bare.states.value()).cwiseAbs().maxCoeff() > 1e-6);
  }
}

TEST_CASE("single-token encode matches a straight-line oracle") {
  Backbone bb = tiny_backbone(5, 4, 1, 1, 4, 8, 31);
  TokenSeq toks{{0}, 1};
  Encoded got = encode(bb, toks);

  const EncoderLayer& L = bb.layers[0];
  const double eps = bb.cfg.ln_eps;
  RowVector x = bb.token_embedding.value().row(0) + bb.position_embedding.value().row(0);

  RowVector a = ln_row(x, L.ln1_gain.value().row(0), L.ln1_bias.value().row(0), eps);
  RowVector v = a * L.wv.value();
  // One query, one key: attention weight is exactly one.
  RowVector attn = v * L.wo.value();
  x += attn;
  RowVector f = ln_row(x, L.ln2_gain.value().row(0), L.ln2_bias.value().row(0), eps);
  RowVector h = (f * L.w1.value() + L.b1.value().row(0)).unaryExpr(&gelu_scalar);
  x += h * L.w2.value() + L.b2.value().row(0);
  RowVector out = ln_row(x, bb.lnf_gain.value().row(0), bb.lnf_bias.value().row(0), eps);

  CHECK((got.states.value().row(0) - out).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((got.pooled.value().row(0) - out).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("classify matches a triple-loop oracle") {
  Rng rng(41);
  const int d = 6, c = 3;
  Head h = make_head(1, d, c, rng.derive("head"));
  Matrix pooled(1, d);
  for (int j = 0; j < d; ++j) pooled(0, j) = rng.normal();

  SUBCASE("zero weights give zero logits") {
    h.weight.mutable_value().setZero();
    h.bias.mutable_value().setZero();
    Matrix logits = classify(Tensor::constant(pooled), h).value();
    CHECK(logits.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("identity weights copy the pooled vector") {
    Head idh = make_head(1, c, c, rng.derive("idh"));
    idh.weight.mutable_value() = Matrix::Identity(c, c);
    idh.bias.mutable_value().setZero();
    Matrix p = pooled.leftCols(c);
    Matrix logits = classify(Tensor::constant(p), idh).value();
    CHECK((logits - p).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("random case") {
    Matrix logits = classify(Tensor::constant(pooled), h).value();
    for (int k = 0; k < c; ++k) {
      double acc = h.bias.value()(0, k);
      for (int j = 0; j < d; ++j) acc += pooled(0, j) * h.weight.value()(j, k);
      CHECK(std::abs(logits(0, k) - acc) <= 1e-12);
    }
  }
}

TEST_CASE("pooled embedding is independent of the PAD tail length") {
  Backbone bb = tiny_backbone(10, 4, 2, 2, 16, 8, 51);
  Vocab v;
  v.add("a");
  v.add("b");
  v.add("c");
  TokenSeq short_pad = tokenize(v, "a b c", 8);
  TokenSeq long_pad = tokenize(v, "a b c", 16);
  RowVector p1 = pooled_embedding(bb, short_pad);
  RowVector p2 = pooled_embedding(bb, long_pad);
  CHECK((p1 - p2).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("backbone freezing is observable through the parameter hash") {
  Backbone bb = tiny_backbone();
  std::uint64_t h0 = bb.param_hash();
  bb.set_frozen(true);
  CHECK(bb.param_hash() == h0);
  for (const Tensor& p : bb.parameters()) CHECK(!p.requires_grad());
  Backbone copy = bb.clone();
  CHECK(copy.param_hash() == h0);
  copy.token_embedding.mutable_value()(0, 0) += 1.0;
  CHECK(copy.param_hash() != h0);
  CHECK(bb.param_hash() == h0);  // clone shares nothing
}

TEST_CASE("encode rejects mismatched module dimensions") {
  Backbone bb = tiny_backbone(8, 4, 2, 2, 6, 8);
  PeftConfig pc;
  pc.kind = PeftKind::prefix;
  pc.layers = 1;  // backbone has 2
  pc.model_dim = 4;
  pc.heads = 2;
  pc.prefix_len = 2;
  PeftModule m = init_module(PeftKind::prefix, 1, pc, Rng(9));
  ComposedModule cm = compose({&m}, Vector::Ones(1));
  TokenSeq toks{{0, 3, 1, 1, 1, 1}, 2};
  CHECK_THROWS_AS(encode(bb, toks, &cm), ConfigError);
}
