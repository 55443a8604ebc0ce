#include "mocl/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace mocl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestVersion = "mocl-checkpoint-v1";

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& rows) {
  if (!rows.is_array() || rows.empty())
    throw ParseError("checkpoint: expected a non-empty array of rows");
  const Eigen::Index r = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index c = static_cast<Eigen::Index>(rows[0].size());
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const json& row = rows[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(row.size()) != c)
      throw ParseError("checkpoint: ragged matrix rows");
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = row[static_cast<std::size_t>(j)].get<double>();
  }
  return m;
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(1) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": invalid JSON: " + e.what());
  }
}

std::string module_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "module_%04d.json", index);
  return buf;
}

json module_to_json(const PeftModule& m) {
  json j;
  j["kind"] = to_string(m.kind);
  j["task_id"] = m.task_id;
  j["frozen"] = m.frozen;
  if (m.kind == PeftKind::prefix) {
    j["prefix_len"] = m.prefix_len;
    json layers = json::array();
    for (const PrefixLayer& l : m.prefix_layers)
      layers.push_back({{"key", matrix_to_json(l.key.value())},
                        {"value", matrix_to_json(l.value.value())}});
    j["layers"] = std::move(layers);
  } else {
    j["lora_scale"] = m.lora_scale;
    json layers = json::array();
    for (const LoraLayer& l : m.lora_layers)
      layers.push_back({{"q_a", matrix_to_json(l.q.a.value())},
                        {"q_b", matrix_to_json(l.q.b.value())},
                        {"v_a", matrix_to_json(l.v.a.value())},
                        {"v_b", matrix_to_json(l.v.b.value())}});
    j["layers"] = std::move(layers);
  }
  return j;
}

PeftModule module_from_json(const json& j) {
  PeftModule m;
  m.kind = peft_kind_from_string(j.at("kind").get<std::string>());
  m.task_id = j.at("task_id").get<int>();
  m.frozen = j.at("frozen").get<bool>();
  if (m.kind == PeftKind::prefix) {
    m.prefix_len = j.at("prefix_len").get<int>();
    for (const json& l : j.at("layers")) {
      PrefixLayer layer;
      layer.key = Tensor::param(matrix_from_json(l.at("key")));
      layer.value = Tensor::param(matrix_from_json(l.at("value")));
      m.prefix_layers.push_back(std::move(layer));
    }
  } else {
    m.lora_scale = j.at("lora_scale").get<double>();
    for (const json& l : j.at("layers")) {
      LoraLayer layer;
      layer.q.a = Tensor::param(matrix_from_json(l.at("q_a")));
      layer.q.b = Tensor::param(matrix_from_json(l.at("q_b")));
      layer.v.a = Tensor::param(matrix_from_json(l.at("v_a")));
      layer.v.b = Tensor::param(matrix_from_json(l.at("v_b")));
      m.lora_layers.push_back(std::move(layer));
    }
  }
  m.set_frozen(m.frozen);
  return m;
}

json backbone_to_json(const Backbone& bb) {
  json j;
  j["config"] = {{"vocab_size", bb.cfg.vocab_size}, {"model_dim", bb.cfg.model_dim},
                 {"layers", bb.cfg.layers},         {"heads", bb.cfg.heads},
                 {"max_len", bb.cfg.max_len},       {"ffn_dim", bb.cfg.ffn_dim},
                 {"ln_eps", bb.cfg.ln_eps}};
  j["token_embedding"] = matrix_to_json(bb.token_embedding.value());
  j["position_embedding"] = matrix_to_json(bb.position_embedding.value());
  json layers = json::array();
  for (const EncoderLayer& l : bb.layers) {
    layers.push_back({{"ln1_gain", matrix_to_json(l.ln1_gain.value())},
                      {"ln1_bias", matrix_to_json(l.ln1_bias.value())},
                      {"wq", matrix_to_json(l.wq.value())},
                      {"wk", matrix_to_json(l.wk.value())},
                      {"wv", matrix_to_json(l.wv.value())},
                      {"wo", matrix_to_json(l.wo.value())},
                      {"ln2_gain", matrix_to_json(l.ln2_gain.value())},
                      {"ln2_bias", matrix_to_json(l.ln2_bias.value())},
                      {"w1", matrix_to_json(l.w1.value())},
                      {"b1", matrix_to_json(l.b1.value())},
                      {"w2", matrix_to_json(l.w2.value())},
                      {"b2", matrix_to_json(l.b2.value())}});
  }
  j["layers"] = std::move(layers);
  j["lnf_gain"] = matrix_to_json(bb.lnf_gain.value());
  j["lnf_bias"] = matrix_to_json(bb.lnf_bias.value());
  return j;
}

Backbone backbone_from_json(const json& j) {
  Backbone bb;
  const json& c = j.at("config");
  bb.cfg.vocab_size = c.at("vocab_size").get<int>();
  bb.cfg.model_dim = c.at("model_dim").get<int>();
  bb.cfg.layers = c.at("layers").get<int>();
  bb.cfg.heads = c.at("heads").get<int>();
  bb.cfg.max_len = c.at("max_len").get<int>();
  bb.cfg.ffn_dim = c.at("ffn_dim").get<int>();
  bb.cfg.ln_eps = c.at("ln_eps").get<double>();
  bb.token_embedding = Tensor::param(matrix_from_json(j.at("token_embedding")));
  bb.position_embedding = Tensor::param(matrix_from_json(j.at("position_embedding")));
  for (const json& l : j.at("layers")) {
    EncoderLayer layer;
    layer.ln1_gain = Tensor::param(matrix_from_json(l.at("ln1_gain")));
    layer.ln1_bias = Tensor::param(matrix_from_json(l.at("ln1_bias")));
    layer.wq = Tensor::param(matrix_from_json(l.at("wq")));
    layer.wk = Tensor::param(matrix_from_json(l.at("wk")));
    layer.wv = Tensor::param(matrix_from_json(l.at("wv")));
    layer.wo = Tensor::param(matrix_from_json(l.at("wo")));
    layer.ln2_gain = Tensor::param(matrix_from_json(l.at("ln2_gain")));
    layer.ln2_bias = Tensor::param(matrix_from_json(l.at("ln2_bias")));
    layer.w1 = Tensor::param(matrix_from_json(l.at("w1")));
    layer.b1 = Tensor::param(matrix_from_json(l.at("b1")));
    layer.w2 = Tensor::param(matrix_from_json(l.at("w2")));
    layer.b2 = Tensor::param(matrix_from_json(l.at("b2")));
    bb.layers.push_back(std::move(layer));
  }
  bb.lnf_gain = Tensor::param(matrix_from_json(j.at("lnf_gain")));
  bb.lnf_bias = Tensor::param(matrix_from_json(j.at("lnf_bias")));
  bb.set_frozen(true);
  return bb;
}

json heads_to_json(const std::vector<Head>& heads) {
  json out = json::array();
  for (const Head& h : heads) {
    out.push_back({{"task_id", h.task_id},
                   {"weight", matrix_to_json(h.weight.value())},
                   {"bias", matrix_to_json(h.bias.value())}});
  }
  return out;
}

Head head_from_json(const json& j) {
  Head h;
  h.task_id = j.at("task_id").get<int>();
  h.weight = Tensor::param(matrix_from_json(j.at("weight")));
  h.bias = Tensor::param(matrix_from_json(j.at("bias")));
  h.weight.set_requires_grad(false);
  h.bias.set_requires_grad(false);
  return h;
}

json manifest_json(const CheckpointMeta& meta, const std::string& method,
                   const std::vector<int>& task_ids, const std::vector<std::string>& task_names,
                   const std::vector<int>& label_bases, const std::vector<int>& class_counts,
                   int n_modules, const std::vector<std::string>& extra_files) {
  json tasks = json::array();
  for (std::size_t i = 0; i < task_ids.size(); ++i)
    tasks.push_back({{"id", task_ids[i]},
                     {"name", task_names[i]},
                     {"label_base", label_bases[i]},
                     {"classes", class_counts[i]}});
  json files = json::array();
  files.push_back("backbone.json");
  files.push_back("heads.json");
  for (int i = 0; i < n_modules; ++i) files.push_back(module_file_name(i + 1));
  for (const std::string& f : extra_files) files.push_back(f);
  return json{{"version", kManifestVersion},
              {"method", method},
              {"seed", meta.seed},
              {"config_hash", meta.config_hash},
              {"suite_hash", meta.suite_hash},
              {"code_version", meta.code_version},
              {"backbone_hash", meta.backbone_hash},
              {"tasks", tasks},
              {"files", files}};
}

void save_modules(const fs::path& dir, const std::vector<PeftModule>& modules) {
  for (std::size_t i = 0; i < modules.size(); ++i)
    write_json(module_to_json(modules[i]), dir / module_file_name(static_cast<int>(i) + 1));
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

void load_tasks(const json& manifest, std::vector<int>& ids, std::vector<std::string>& names,
                std::vector<int>& bases, std::vector<int>& counts) {
  for (const json& t : manifest.at("tasks")) {
    ids.push_back(t.at("id").get<int>());
    names.push_back(t.at("name").get<std::string>());
    bases.push_back(t.at("label_base").get<int>());
    counts.push_back(t.at("classes").get<int>());
  }
}

}  // namespace

void save_checkpoint(const std::string& dir, const LearnerState& st,
                     const CheckpointMeta& meta) {
  ensure_dir(dir);
  fs::path d(dir);
  write_json(backbone_to_json(*st.backbone), d / "backbone.json");
  save_modules(d, st.bank);
  write_json(heads_to_json(st.heads), d / "heads.json");
  json features = json::array();
  for (const Tensor& v : st.features) features.push_back(matrix_to_json(v.value()));
  write_json(json{{"rows", features}}, d / "features.json");
  write_json(manifest_json(meta, "mocl", st.task_ids, st.task_names, st.label_bases,
                           st.class_counts, static_cast<int>(st.bank.size()),
                           {"features.json"}),
             d / "manifest.json");
}

void save_checkpoint(const std::string& dir, const PerTaskState& st,
                     const CheckpointMeta& meta) {
  ensure_dir(dir);
  fs::path d(dir);
  write_json(backbone_to_json(*st.backbone), d / "backbone.json");
  save_modules(d, st.modules);
  write_json(heads_to_json(st.heads), d / "heads.json");
  json protos = json::array();
  for (const RowVector& p : st.prototypes) protos.push_back(matrix_to_json(Matrix(p)));
  write_json(json{{"rows", protos}}, d / "prototypes.json");
  write_json(manifest_json(meta, meta.method, st.task_ids, st.task_names, st.label_bases,
                           st.class_counts, static_cast<int>(st.modules.size()),
                           {"prototypes.json"}),
             d / "manifest.json");
}

void save_checkpoint(const std::string& dir, const ProgressiveState& st,
                     const CheckpointMeta& meta) {
  ensure_dir(dir);
  fs::path d(dir);
  write_json(backbone_to_json(*st.backbone), d / "backbone.json");
  save_modules(d, st.modules);
  write_json(heads_to_json(st.heads), d / "heads.json");
  write_json(manifest_json(meta, "progressive", st.task_ids, st.task_names, st.label_bases,
                           st.class_counts, static_cast<int>(st.modules.size()), {}),
             d / "manifest.json");
}

void save_checkpoint(const std::string& dir, const SequentialState& st,
                     const CheckpointMeta& meta) {
  ensure_dir(dir);
  fs::path d(dir);
  write_json(backbone_to_json(*st.backbone), d / "backbone.json");
  std::vector<PeftModule> modules;
  if (st.module) modules.push_back(*st.module);
  save_modules(d, modules);
  write_json(heads_to_json({st.head}), d / "heads.json");
  write_json(manifest_json(meta, st.full ? "seq_ft_full" : "seq_ft_peft", st.task_ids,
                           st.task_names, st.label_bases, st.class_counts,
                           static_cast<int>(modules.size()), {}),
             d / "manifest.json");
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
  fs::path d(dir);
  json manifest = read_json(d / "manifest.json");
  if (manifest.at("version").get<std::string>() != kManifestVersion)
    throw ParseError(dir + ": unsupported checkpoint version");

  LoadedCheckpoint out;
  out.meta.method = manifest.at("method").get<std::string>();
  out.meta.seed = manifest.at("seed").get<std::uint64_t>();
  out.meta.config_hash = manifest.at("config_hash").get<std::string>();
  out.meta.suite_hash = manifest.at("suite_hash").get<std::string>();
  out.meta.code_version = manifest.at("code_version").get<std::string>();
  out.meta.backbone_hash = manifest.at("backbone_hash").get<std::string>();
  out.method = method_from_string(out.meta.method);

  auto backbone = std::make_shared<Backbone>(backbone_from_json(read_json(d / "backbone.json")));

  std::vector<PeftModule> modules;
  for (const json& f : manifest.at("files")) {
    std::string name = f.get<std::string>();
    if (name.rfind("module_", 0) == 0) modules.push_back(module_from_json(read_json(d / name)));
  }
  std::vector<Head> heads;
  for (const json& h : read_json(d / "heads.json")) heads.push_back(head_from_json(h));

  std::vector<int> ids, bases, counts;
  std::vector<std::string> names;
  load_tasks(manifest, ids, names, bases, counts);

  switch (out.method) {
    case Method::mocl: {
      LearnerState st;
      st.backbone = backbone;
      st.seed = out.meta.seed;
      st.bank = std::move(modules);
      st.heads = std::move(heads);
      st.task_ids = ids;
      st.task_names = names;
      st.label_bases = bases;
      st.class_counts = counts;
      st.tasks_trained = static_cast<int>(ids.size());
      for (const json& row : read_json(d / "features.json").at("rows")) {
        Tensor v = Tensor::param(matrix_from_json(row));
        v.set_requires_grad(false);
        st.features.push_back(std::move(v));
      }
      if (st.features.size() != st.bank.size() || st.heads.size() != st.bank.size())
        throw ParseError(dir + ": inconsistent bank/feature/head counts");
      out.learner = std::move(st);
      break;
    }
    case Method::per_task:
    case Method::prototype_cil: {
      PerTaskState st;
      st.backbone = backbone;
      st.seed = out.meta.seed;
      st.modules = std::move(modules);
      st.heads = std::move(heads);
      st.task_ids = ids;
      st.task_names = names;
      st.label_bases = bases;
      st.class_counts = counts;
      st.tasks_trained = static_cast<int>(ids.size());
      for (const json& row : read_json(d / "prototypes.json").at("rows")) {
        Matrix m = matrix_from_json(row);
        st.prototypes.push_back(m.row(0));
      }
      out.per_task = std::move(st);
      break;
    }
    case Method::progressive: {
      ProgressiveState st;
      st.backbone = backbone;
      st.seed = out.meta.seed;
      st.peft.kind = PeftKind::prefix;
      st.modules = std::move(modules);
      st.heads = std::move(heads);
      st.task_ids = ids;
      st.task_names = names;
      st.label_bases = bases;
      st.class_counts = counts;
      st.tasks_trained = static_cast<int>(ids.size());
      out.progressive = std::move(st);
      break;
    }
    case Method::seq_ft_full:
    case Method::seq_ft_peft: {
      SequentialState st;
      st.backbone = backbone;
      st.seed = out.meta.seed;
      st.full = out.method == Method::seq_ft_full;
      if (!modules.empty()) st.module = std::move(modules.front());
      if (heads.size() != 1) throw ParseError(dir + ": sequential checkpoint needs one head");
      st.head = std::move(heads.front());
      st.total_classes = static_cast<int>(st.head.weight.cols());
      st.task_ids = ids;
      st.task_names = names;
      st.label_bases = bases;
      st.class_counts = counts;
      st.tasks_trained = static_cast<int>(ids.size());
      out.sequential = std::move(st);
      break;
    }
  }
  return out;
}

}  // namespace mocl
