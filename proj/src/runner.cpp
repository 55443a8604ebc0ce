#include "mocl/runner.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include <json.hpp>

namespace mocl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

std::string hex_u64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

// Everything the boundary loop needs, regardless of method.
struct MethodDriver {
  std::function<void(const TaskSpec&)> train_next;
  std::function<int(const TokenSeq&, int task_id)> predict_til;
  std::function<std::pair<int, int>(const TokenSeq&)> predict_cil;  // may be empty
  std::function<void(const std::string&, const CheckpointMeta&)> save;
  std::function<std::uint64_t()> backbone_hash;
  const LearnerState* learner = nullptr;  // set for mocl (heatmap)
};

}  // namespace

std::string seed_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
  return cfg.outdir + "/" + to_string(cfg.method) + "/" + std::to_string(seed);
}

void cmd_gen_data(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& out_path) {
  std::vector<TaskSpec> tasks;
  if (cfg.suite) {
    SuiteConfig sc = *cfg.suite;
    if (sc.seed == 0) sc.seed = seed;
    tasks = gen_suite(sc);
  } else {
    tasks = load_jsonl(*cfg.corpus_path);
    if (!cfg.corpus_order.empty()) tasks = apply_order(std::move(tasks), cfg.corpus_order);
  }
  fs::path parent = fs::path(out_path).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
  save_jsonl(tasks, out_path);
}

void cmd_train(const ExperimentConfig& cfg, const std::string& suite_path,
               const std::string& artifacts_dir, std::uint64_t seed, std::ostream& log) {
  std::vector<TaskSpec> tasks = load_jsonl(suite_path);
  const std::string suite_hash = file_hash(suite_path);
  const int n = static_cast<int>(tasks.size());

  ensure_dir(artifacts_dir);
  Vocab vocab = build_vocab(tasks, cfg.max_vocab);
  vocab.save(artifacts_dir + "/vocab.txt");

  Backbone warm_init = make_backbone(cfg.backbone_config(vocab.size()), Rng(seed));
  warm_train_backbone(warm_init, vocab, tasks, cfg.warmup, seed);
  auto warm = std::make_shared<Backbone>(std::move(warm_init));
  const std::string backbone_hash = hex_u64(warm->param_hash());

  auto clone = [&warm] { return std::make_shared<Backbone>(warm->clone()); };
  const PeftConfig pc = cfg.peft_config();
  const int max_len = cfg.max_len;

  // Method dispatch: shared_ptr keeps the state alive inside the closures.
  MethodDriver drv;
  switch (cfg.method) {
    case Method::mocl: {
      auto st = std::make_shared<LearnerState>(make_learner(clone(), pc, cfg.train, seed));
      drv.train_next = [st, &vocab](const TaskSpec& t) { train_task(*st, vocab, t); };
      drv.predict_til = [st](const TokenSeq& toks, int id) { return infer_til(*st, toks, id); };
      drv.predict_cil = [st](const TokenSeq& toks) { return infer_cil(*st, toks); };
      drv.save = [st](const std::string& dir, const CheckpointMeta& m) {
        save_checkpoint(dir, *st, m);
      };
      drv.backbone_hash = [st] { return st->backbone->param_hash(); };
      drv.learner = st.get();
      break;
    }
    case Method::per_task:
    case Method::prototype_cil: {
      auto st = std::make_shared<PerTaskState>(make_per_task(clone(), pc, cfg.train, seed));
      drv.train_next = [st, &vocab](const TaskSpec& t) { per_task_train_next(*st, vocab, t); };
      drv.predict_til = [st](const TokenSeq& toks, int id) {
        return per_task_predict_til(*st, toks, id);
      };
      if (cfg.method == Method::prototype_cil)
        drv.predict_cil = [st](const TokenSeq& toks) { return infer_prototype_cil(*st, toks); };
      drv.save = [st](const std::string& dir, const CheckpointMeta& m) {
        save_checkpoint(dir, *st, m);
      };
      drv.backbone_hash = [st] { return st->backbone->param_hash(); };
      break;
    }
    case Method::progressive: {
      auto st =
          std::make_shared<ProgressiveState>(make_progressive(clone(), pc, cfg.train, seed));
      drv.train_next = [st, &vocab](const TaskSpec& t) {
        progressive_train_next(*st, vocab, t);
      };
      drv.predict_til = [st](const TokenSeq& toks, int id) {
        return progressive_predict_til(*st, toks, id);
      };
      drv.save = [st](const std::string& dir, const CheckpointMeta& m) {
        save_checkpoint(dir, *st, m);
      };
      drv.backbone_hash = [st] { return st->backbone->param_hash(); };
      break;
    }
    case Method::seq_ft_full:
    case Method::seq_ft_peft: {
      auto st = std::make_shared<SequentialState>(make_sequential(
          clone(), tasks, cfg.method == Method::seq_ft_full, pc, cfg.train, seed));
      drv.train_next = [st, &vocab](const TaskSpec& t) {
        sequential_train_next(*st, vocab, t);
      };
      drv.predict_til = [st](const TokenSeq& toks, int id) {
        return sequential_predict_til(*st, toks, id);
      };
      drv.save = [st](const std::string& dir, const CheckpointMeta& m) {
        save_checkpoint(dir, *st, m);
      };
      drv.backbone_hash = [st] { return st->backbone->param_hash(); };
      break;
    }
  }

  std::vector<std::string> names;
  for (const TaskSpec& t : tasks) names.push_back(t.name);
  AccuracyMatrix til = AccuracyMatrix::empty(names);
  AccuracyMatrix cil = AccuracyMatrix::empty(names);
  const bool want_cil = cfg.protocol != Protocol::til && static_cast<bool>(drv.predict_cil);

  for (int i = 0; i < n; ++i) {
    drv.train_next(tasks[static_cast<std::size_t>(i)]);
    for (int j = 0; j <= i; ++j) {
      const TaskSpec& task = tasks[static_cast<std::size_t>(j)];
      til.a(i, j) = test_accuracy(task, vocab, max_len, [&](const TokenSeq& toks) {
        return drv.predict_til(toks, task.id);
      });
      if (want_cil)
        cil.a(i, j) = test_accuracy(task, vocab, max_len, [&](const TokenSeq& toks) {
          return drv.predict_cil(toks).second;
        });
    }
    log << "  trained " << tasks[static_cast<std::size_t>(i)].name << " (" << (i + 1) << "/"
        << n << ")\n";
  }

  // Isolated per-task references for forward transfer, with matched streams.
  if (cfg.compute_fwt && n >= 2) {
    for (int i = 1; i < n; ++i) {
      PerTaskState ref = make_per_task(clone(), pc, cfg.train, seed);
      per_task_train_next(ref, vocab, tasks[static_cast<std::size_t>(i)]);
      const TaskSpec& task = tasks[static_cast<std::size_t>(i)];
      til.reference(i) = test_accuracy(task, vocab, max_len, [&](const TokenSeq& toks) {
        return per_task_predict_til(ref, toks, task.id);
      });
    }
    write_reference_csv(til, artifacts_dir + "/references.csv");
  }

  write_accuracy_csv(til, artifacts_dir + "/accuracy_til.csv");
  if (want_cil) write_accuracy_csv(cil, artifacts_dir + "/accuracy_cil.csv");
  if (drv.learner)
    write_heatmap_csv(heatmap(*drv.learner, vocab, tasks), artifacts_dir + "/heatmap.csv");

  // The PLM stand-in must not have moved during the task sequence.
  if (cfg.method != Method::seq_ft_full && hex_u64(drv.backbone_hash()) != backbone_hash)
    throw ProtocolError("train: frozen backbone changed during continual learning");

  CheckpointMeta meta;
  meta.method = to_string(cfg.method);
  meta.seed = seed;
  meta.config_hash = config_hash(cfg);
  meta.suite_hash = suite_hash;
  meta.backbone_hash = backbone_hash;
  drv.save(artifacts_dir + "/checkpoint", meta);
}

namespace {

// Reloads a checkpoint and exposes the predictors of its method.
struct LoadedDriver {
  LoadedCheckpoint loaded;
  std::function<int(const TokenSeq&, int task_id)> predict_til;
  std::function<std::pair<int, int>(const TokenSeq&)> predict_cil;
  int max_len = 0;
};

LoadedDriver make_loaded_driver(const std::string& checkpoint_dir) {
  LoadedDriver d;
  d.loaded = load_checkpoint(checkpoint_dir);
  if (d.loaded.learner) {
    const LearnerState* st = &*d.loaded.learner;
    d.predict_til = [st](const TokenSeq& t, int id) { return infer_til(*st, t, id); };
    d.predict_cil = [st](const TokenSeq& t) { return infer_cil(*st, t); };
    d.max_len = st->backbone->cfg.max_len;
  } else if (d.loaded.per_task) {
    const PerTaskState* st = &*d.loaded.per_task;
    d.predict_til = [st](const TokenSeq& t, int id) {
      return per_task_predict_til(*st, t, id);
    };
    if (d.loaded.method == Method::prototype_cil)
      d.predict_cil = [st](const TokenSeq& t) { return infer_prototype_cil(*st, t); };
    d.max_len = st->backbone->cfg.max_len;
  } else if (d.loaded.progressive) {
    const ProgressiveState* st = &*d.loaded.progressive;
    d.predict_til = [st](const TokenSeq& t, int id) {
      return progressive_predict_til(*st, t, id);
    };
    d.max_len = st->backbone->cfg.max_len;
  } else if (d.loaded.sequential) {
    const SequentialState* st = &*d.loaded.sequential;
    d.predict_til = [st](const TokenSeq& t, int id) {
      return sequential_predict_til(*st, t, id);
    };
    d.max_len = st->backbone->cfg.max_len;
  }
  return d;
}

void check_artifacts(const CheckpointMeta& meta, const ExperimentConfig* cfg,
                     const std::string& suite_path) {
  if (cfg) {
    std::string expect = config_hash(*cfg);
    if (meta.config_hash != expect)
      throw ConfigError("stale artifacts: checkpoint was trained under config hash " +
                        meta.config_hash + " but the given config hashes to " + expect +
                        "; re-run train or pass the original config");
  }
  std::string suite_hash = file_hash(suite_path);
  if (meta.suite_hash != suite_hash)
    throw ConfigError("stale artifacts: checkpoint was trained on a suite with hash " +
                      meta.suite_hash + " but " + suite_path + " hashes to " + suite_hash +
                      "; regenerate the artifacts or pass the original suite");
}

}  // namespace

void cmd_eval(const ExperimentConfig& cfg, const std::string& artifacts_dir,
              const std::string& suite_path, std::ostream& log) {
  LoadedDriver drv = make_loaded_driver(artifacts_dir + "/checkpoint");
  check_artifacts(drv.loaded.meta, &cfg, suite_path);

  std::vector<TaskSpec> tasks = load_jsonl(suite_path);
  Vocab vocab = Vocab::load(artifacts_dir + "/vocab.txt");
  const int n = static_cast<int>(tasks.size());

  AccuracyMatrix til = read_accuracy_csv(artifacts_dir + "/accuracy_til.csv");
  if (til.n() != n) throw ConfigError("eval: accuracy matrix size does not match the suite");
  if (fs::exists(artifacts_dir + "/references.csv"))
    read_reference_csv(artifacts_dir + "/references.csv", til);

  bool have_cil = fs::exists(artifacts_dir + "/accuracy_cil.csv");
  AccuracyMatrix cil = AccuracyMatrix::empty(til.task_names);
  if (have_cil) cil = read_accuracy_csv(artifacts_dir + "/accuracy_cil.csv");

  // Recompute the final row from the checkpoint; it must match the stored
  // matrix to CSV precision, otherwise the artifacts do not belong together.
  for (int j = 0; j < n; ++j) {
    const TaskSpec& task = tasks[static_cast<std::size_t>(j)];
    double fresh = test_accuracy(task, vocab, drv.max_len, [&](const TokenSeq& toks) {
      return drv.predict_til(toks, task.id);
    });
    if (std::abs(fresh - til.a(n - 1, j)) > 5e-7)
      throw ConfigError("stale artifacts: recomputed final-row accuracy for task '" +
                        task.name + "' disagrees with accuracy_til.csv");
  }

  json metrics;
  metrics["method"] = drv.loaded.meta.method;
  metrics["protocol"] = to_string(cfg.protocol);
  metrics["seed"] = drv.loaded.meta.seed;
  metrics["config_hash"] = drv.loaded.meta.config_hash;
  metrics["code_version"] = drv.loaded.meta.code_version;

  json avg;
  avg["til"] = avg_final(til);
  if (have_cil) avg["cil"] = avg_final(cil);
  metrics["avg"] = avg;

  json fwt_json;
  bool have_refs = n >= 2 && !std::isnan(til.reference(1));
  fwt_json["til"] = have_refs ? json(fwt(til)) : json(nullptr);
  metrics["fwt"] = fwt_json;

  json per_task_til, per_task_cil;
  for (int j = 0; j < n; ++j) {
    per_task_til[til.task_names[static_cast<std::size_t>(j)]] = til.a(n - 1, j);
    if (have_cil) per_task_cil[cil.task_names[static_cast<std::size_t>(j)]] = cil.a(n - 1, j);
  }
  json per_task;
  per_task["til"] = per_task_til;
  if (have_cil) per_task["cil"] = per_task_cil;
  metrics["per_task"] = per_task;

  write_text(artifacts_dir + "/metrics.json", metrics.dump(1) + "\n");

  log << "  avg til " << avg_final(til);
  if (have_cil) log << ", avg cil " << avg_final(cil);
  if (have_refs) log << ", fwt " << fwt(til);
  log << "\n";
}

double cmd_fwt(const std::string& matrix_csv, const std::string& refs_csv) {
  AccuracyMatrix m = read_accuracy_csv(matrix_csv);
  read_reference_csv(refs_csv, m);
  return fwt(m);
}

void cmd_heatmap(const std::string& artifacts_dir, const std::string& suite_path,
                 const std::string& out_csv) {
  LoadedDriver drv = make_loaded_driver(artifacts_dir + "/checkpoint");
  if (!drv.loaded.learner)
    throw ConfigError("heatmap: checkpoint method '" + drv.loaded.meta.method +
                      "' has no matching weights; only mocl does");
  check_artifacts(drv.loaded.meta, nullptr, suite_path);
  std::vector<TaskSpec> tasks = load_jsonl(suite_path);
  Vocab vocab = Vocab::load(artifacts_dir + "/vocab.txt");
  write_heatmap_csv(heatmap(*drv.loaded.learner, vocab, tasks), out_csv);
}

int cmd_run(const ExperimentConfig& cfg, std::ostream& log) {
  struct SeedMetrics {
    std::uint64_t seed;
    double avg_til = std::numeric_limits<double>::quiet_NaN();
    double avg_cil = std::numeric_limits<double>::quiet_NaN();
    double fwt_til = std::numeric_limits<double>::quiet_NaN();
  };
  std::vector<SeedMetrics> all;

  for (std::uint64_t seed : cfg.seeds) {
    std::string dir = seed_dir(cfg, seed);
    ensure_dir(dir);
    std::string suite_path = dir + "/suite.jsonl";
    log << "[" << to_string(cfg.method) << " seed " << seed << "]\n";
    cmd_gen_data(cfg, seed, suite_path);
    cmd_train(cfg, suite_path, dir, seed, log);
    cmd_eval(cfg, dir, suite_path, log);

    std::ifstream in(dir + "/metrics.json");
    json metrics = json::parse(in);
    SeedMetrics sm;
    sm.seed = seed;
    sm.avg_til = metrics["avg"]["til"].get<double>();
    if (metrics["avg"].contains("cil")) sm.avg_cil = metrics["avg"]["cil"].get<double>();
    if (!metrics["fwt"]["til"].is_null()) sm.fwt_til = metrics["fwt"]["til"].get<double>();
    all.push_back(sm);

    char line[160];
    std::snprintf(line, sizeof(line), "[seed %llu] avg_til=%.4f avg_cil=%.4f fwt=%.4f",
                  static_cast<unsigned long long>(seed), sm.avg_til, sm.avg_cil, sm.fwt_til);
    log << line << "\n";
  }

  auto mean_std = [&](auto pick) {
    std::vector<double> vals;
    for (const SeedMetrics& sm : all) {
      double v = pick(sm);
      if (!std::isnan(v)) vals.push_back(v);
    }
    std::pair<double, double> out{std::numeric_limits<double>::quiet_NaN(), 0.0};
    if (vals.empty()) return out;
    double mean = 0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0;
    for (double v : vals) var += (v - mean) * (v - mean);
    out.first = mean;
    out.second = vals.size() > 1 ? std::sqrt(var / static_cast<double>(vals.size() - 1)) : 0.0;
    return out;
  };

  auto [til_mean, til_std] = mean_std([](const SeedMetrics& s) { return s.avg_til; });
  auto [cil_mean, cil_std] = mean_std([](const SeedMetrics& s) { return s.avg_cil; });
  auto [fwt_mean, fwt_std] = mean_std([](const SeedMetrics& s) { return s.fwt_til; });

  json agg;
  agg["method"] = to_string(cfg.method);
  agg["config_hash"] = config_hash(cfg);
  agg["code_version"] = kCodeVersion;
  json seeds = json::array();
  for (const SeedMetrics& sm : all) seeds.push_back(sm.seed);
  agg["seeds"] = seeds;
  agg["avg"]["til"] = {{"mean", til_mean}, {"std", til_std}};
  if (!std::isnan(cil_mean)) agg["avg"]["cil"] = {{"mean", cil_mean}, {"std", cil_std}};
  if (!std::isnan(fwt_mean)) agg["fwt"]["til"] = {{"mean", fwt_mean}, {"std", fwt_std}};
  ensure_dir(cfg.outdir + "/" + to_string(cfg.method));
  write_text(cfg.outdir + "/" + to_string(cfg.method) + "/aggregate.json",
             agg.dump(1) + "\n");

  char line[200];
  std::snprintf(line, sizeof(line),
                "%s over %zu seed(s): avg_til %.4f +- %.4f | avg_cil %.4f +- %.4f | fwt %.4f "
                "+- %.4f",
                to_string(cfg.method).c_str(), all.size(), til_mean, til_std, cil_mean,
                cil_std, fwt_mean, fwt_std);
  log << line << "\n";
  return 0;
}

}  // namespace mocl
