#include "mocl/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace mocl {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// section -> key -> (value, line number)
using IniData = std::map<std::string, std::map<std::string, std::pair<std::string, long>>>;

IniData parse_ini(const std::string& text, const std::string& origin) {
  IniData data;
  std::istringstream in(text);
  std::string line, section;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ParseError(origin + ":" + std::to_string(line_no) + ": malformed section header",
                         line_no);
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty())
        throw ParseError(origin + ":" + std::to_string(line_no) + ": empty section name",
                         line_no);
      data[section];
      continue;
    }
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ParseError(origin + ":" + std::to_string(line_no) + ": expected key = value",
                       line_no);
    if (section.empty())
      throw ParseError(origin + ":" + std::to_string(line_no) + ": key outside any section",
                       line_no);
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw ParseError(origin + ":" + std::to_string(line_no) + ": empty key", line_no);
    if (!data[section].emplace(key, std::make_pair(value, line_no)).second)
      throw ParseError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'",
                       line_no);
  }
  return data;
}

// Tracks which keys were consumed so leftovers can be rejected by name.
class Section {
 public:
  Section(const IniData& data, const std::string& name, const std::string& origin)
      : origin_(origin), name_(name) {
    auto it = data.find(name);
    if (it != data.end()) entries_ = &it->second;
  }

  bool present() const { return entries_ != nullptr; }

  std::optional<std::string> raw(const std::string& key) {
    if (!entries_) return std::nullopt;
    auto it = entries_->find(key);
    if (it == entries_->end()) return std::nullopt;
    used_.insert(key);
    return it->second.first;
  }

  template <class T, class Parse>
  void get(const std::string& key, T& out, Parse parse) {
    std::optional<std::string> v = raw(key);
    if (!v) return;
    try {
      out = parse(*v);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(origin_ + ": [" + name_ + "] " + key + ": bad value '" + *v + "' (" +
                        e.what() + ")");
    }
  }

  void get_int(const std::string& key, int& out) {
    get(key, out, [](const std::string& s) {
      std::size_t used = 0;
      int v = std::stoi(s, &used);
      if (used != s.size()) throw std::invalid_argument("trailing characters");
      return v;
    });
  }
  void get_double(const std::string& key, double& out) {
    get(key, out, [](const std::string& s) {
      std::size_t used = 0;
      double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument("trailing characters");
      return v;
    });
  }
  void get_bool(const std::string& key, bool& out) {
    get(key, out, [this, key](const std::string& s) {
      if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
      if (s == "false" || s == "0" || s == "no" || s == "off") return false;
      throw ConfigError(origin_ + ": [" + name_ + "] " + key + ": expected a boolean, got '" +
                        s + "'");
    });
  }
  void get_string(const std::string& key, std::string& out) {
    get(key, out, [](const std::string& s) { return s; });
  }
  void get_u64(const std::string& key, std::uint64_t& out) {
    get(key, out, [](const std::string& s) {
      std::size_t used = 0;
      std::uint64_t v = std::stoull(s, &used);
      if (used != s.size()) throw std::invalid_argument("trailing characters");
      return v;
    });
  }
  void get_int_list(const std::string& key, std::vector<int>& out) {
    get(key, out, [](const std::string& s) {
      std::vector<int> v;
      std::istringstream is(s);
      int x;
      while (is >> x) v.push_back(x);
      if (!is.eof()) throw std::invalid_argument("expected whitespace-separated integers");
      return v;
    });
  }
  void get_u64_list(const std::string& key, std::vector<std::uint64_t>& out) {
    get(key, out, [](const std::string& s) {
      std::vector<std::uint64_t> v;
      std::istringstream is(s);
      std::uint64_t x;
      while (is >> x) v.push_back(x);
      if (!is.eof()) throw std::invalid_argument("expected whitespace-separated integers");
      return v;
    });
  }

  void reject_unknown() const {
    if (!entries_) return;
    for (const auto& [key, value] : *entries_) {
      if (!used_.count(key))
        throw ConfigError(origin_ + ":" + std::to_string(value.second) + ": unknown key '" +
                          key + "' in section [" + name_ + "]");
    }
  }

 private:
  const std::map<std::string, std::pair<std::string, long>>* entries_ = nullptr;
  std::set<std::string> used_;
  std::string origin_;
  std::string name_;
};

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

BackboneConfig ExperimentConfig::backbone_config(int vocab_size) const {
  BackboneConfig bc;
  bc.vocab_size = vocab_size;
  bc.model_dim = model_dim;
  bc.layers = layers;
  bc.heads = heads;
  bc.max_len = max_len;
  bc.ffn_dim = ffn_dim;
  return bc;
}

PeftConfig ExperimentConfig::peft_config() const {
  PeftConfig pc = peft;
  pc.layers = layers;
  pc.model_dim = model_dim;
  pc.heads = heads;
  return pc;
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("config: [run] seeds must list at least one seed");
  if (outdir.empty()) throw ConfigError("config: [run] outdir must not be empty");
  backbone_config(16).validate();
  if (max_vocab < 4) throw ConfigError("config: [model] max_vocab too small");
  if (warmup.epochs < 0 || warmup.epochs > 40)
    throw ConfigError("config: [model] warmup_epochs must lie in [0, 40]");
  if (peft.prefix_len < 0) throw ConfigError("config: [peft] prefix_len must be >= 0");
  if (peft.lora_rank < 1) throw ConfigError("config: [peft] lora_rank must be >= 1");
  train.validate();
  if (suite.has_value() == corpus_path.has_value())
    throw ConfigError("config: define exactly one data source ([suite] or [corpus])");
  if (suite) {
    SuiteConfig probe = *suite;
    if (probe.seed == 0) probe.seed = 1;  // placeholder; resolved per run seed
    probe.validate();
    if (suite->max_len + 1 > max_len)
      throw ConfigError("config: [suite] max_len + 1 (CLS) exceeds [model] max_len");
  }
  if (corpus_path && corpus_path->empty())
    throw ConfigError("config: [corpus] path must not be empty");
  if (!corpus_order.empty() && !corpus_path)
    throw ConfigError("config: [corpus] order given without a corpus");
  if (method == Method::progressive && peft.kind != PeftKind::prefix)
    throw ConfigError("config: progressive requires peft kind = prefix");
  bool wants_cil = protocol != Protocol::til;
  bool supports_cil = method == Method::mocl || method == Method::prototype_cil;
  if (wants_cil && !supports_cil)
    throw ConfigError("config: protocol '" + to_string(protocol) + "' needs class-incremental "
                      "inference; method '" + to_string(method) + "' only supports til");
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
  IniData data = parse_ini(text, origin);
  static const std::set<std::string> known_sections = {"run",   "model", "peft",
                                                       "train", "suite", "corpus"};
  for (const auto& [name, entries] : data) {
    (void)entries;
    if (!known_sections.count(name))
      throw ConfigError(origin + ": unknown section [" + name + "]");
  }

  ExperimentConfig cfg;

  Section run(data, "run", origin);
  {
    std::string s;
    run.get_string("method", s);
    if (!s.empty()) cfg.method = method_from_string(s);
  }
  {
    std::string s;
    run.get_string("protocol", s);
    if (!s.empty()) cfg.protocol = protocol_from_string(s);
  }
  run.get_u64_list("seeds", cfg.seeds);
  run.get_string("outdir", cfg.outdir);
  run.get_bool("fwt", cfg.compute_fwt);
  run.reject_unknown();

  Section model(data, "model", origin);
  model.get_int("dim", cfg.model_dim);
  model.get_int("layers", cfg.layers);
  model.get_int("heads", cfg.heads);
  model.get_int("max_len", cfg.max_len);
  model.get_int("ffn_dim", cfg.ffn_dim);
  model.get_int("max_vocab", cfg.max_vocab);
  model.get_bool("warm_start", cfg.warmup.enabled);
  model.get_int("warmup_epochs", cfg.warmup.epochs);
  model.get_double("warmup_lr", cfg.warmup.lr);
  model.get_double("warmup_task_weight", cfg.warmup.task_loss_weight);
  model.reject_unknown();

  Section peft(data, "peft", origin);
  {
    std::string s;
    peft.get_string("kind", s);
    if (!s.empty()) cfg.peft.kind = peft_kind_from_string(s);
  }
  peft.get_int("prefix_len", cfg.peft.prefix_len);
  peft.get_int("lora_rank", cfg.peft.lora_rank);
  peft.get_double("lora_scale", cfg.peft.lora_scale);
  peft.reject_unknown();

  Section train(data, "train", origin);
  train.get_double("lr", cfg.train.lr);
  train.get_int("batch_size", cfg.train.batch_size);
  train.get_int("epochs", cfg.train.max_epochs);
  train.get_int("patience", cfg.train.patience);
  train.get_double("cosine_weight", cfg.train.cosine_weight);
  {
    std::string s;
    train.get_string("alpha", s);
    if (!s.empty()) {
      if (s == "cosine") {
        cfg.train.alpha_softmax = false;
        cfg.train.alpha_force_one = false;
      } else if (s == "softmax") {
        cfg.train.alpha_softmax = true;
        cfg.train.alpha_force_one = false;
      } else if (s == "one") {
        cfg.train.alpha_softmax = false;
        cfg.train.alpha_force_one = true;
      } else {
        throw ConfigError(origin + ": [train] alpha: expected cosine | softmax | one, got '" +
                          s + "'");
      }
    }
  }
  train.get_bool("alpha_stop_grad", cfg.train.alpha_stop_grad);
  train.get_double("weight_decay", cfg.train.weight_decay);
  train.get_double("beta1", cfg.train.beta1);
  train.get_double("beta2", cfg.train.beta2);
  train.get_double("adam_eps", cfg.train.adam_eps);
  train.reject_unknown();

  Section suite(data, "suite", origin);
  if (suite.present()) {
    SuiteConfig sc;
    sc.seed = 0;  // default: follow the run seed
    suite.get_int("tasks", sc.n_tasks);
    suite.get_int("classes", sc.classes_per_task);
    suite.get_int("train", sc.train_per_task);
    suite.get_int("val", sc.val_per_task);
    suite.get_int("test", sc.test_per_task);
    suite.get_int("vocab", sc.vocab_size);
    suite.get_double("relatedness", sc.relatedness);
    suite.get_bool("interference", sc.interference);
    suite.get_int("tokens_per_class", sc.tokens_per_class);
    suite.get_int("min_len", sc.min_len);
    suite.get_int("max_len", sc.max_len);
    suite.get_u64("seed", sc.seed);
    suite.get_int_list("order", sc.order);
    suite.reject_unknown();
    cfg.suite = sc;
  }

  Section corpus(data, "corpus", origin);
  if (corpus.present()) {
    std::string path;
    corpus.get_string("path", path);
    cfg.corpus_path = path;
    corpus.get_int_list("order", cfg.corpus_order);
    corpus.reject_unknown();
  }

  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config_text(os.str(), path);
}

std::string canonical_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "model.dim=" << cfg.model_dim << "\n";
  os << "model.ffn_dim=" << cfg.ffn_dim << "\n";
  os << "model.heads=" << cfg.heads << "\n";
  os << "model.layers=" << cfg.layers << "\n";
  os << "model.max_len=" << cfg.max_len << "\n";
  os << "model.max_vocab=" << cfg.max_vocab << "\n";
  os << "model.warm_start=" << (cfg.warmup.enabled ? 1 : 0) << "\n";
  os << "model.warmup_epochs=" << cfg.warmup.epochs << "\n";
  os << "model.warmup_lr=" << fmt_double(cfg.warmup.lr) << "\n";
  os << "model.warmup_task_weight=" << fmt_double(cfg.warmup.task_loss_weight) << "\n";
  os << "peft.kind=" << to_string(cfg.peft.kind) << "\n";
  os << "peft.lora_rank=" << cfg.peft.lora_rank << "\n";
  os << "peft.lora_scale=" << fmt_double(cfg.peft.lora_scale) << "\n";
  os << "peft.prefix_len=" << cfg.peft.prefix_len << "\n";
  os << "run.fwt=" << (cfg.compute_fwt ? 1 : 0) << "\n";
  os << "run.method=" << to_string(cfg.method) << "\n";
  os << "run.protocol=" << to_string(cfg.protocol) << "\n";
  os << "train.adam_eps=" << fmt_double(cfg.train.adam_eps) << "\n";
  os << "train.alpha="
     << (cfg.train.alpha_force_one ? "one" : (cfg.train.alpha_softmax ? "softmax" : "cosine"))
     << "\n";
  os << "train.alpha_stop_grad=" << (cfg.train.alpha_stop_grad ? 1 : 0) << "\n";
  os << "train.batch_size=" << cfg.train.batch_size << "\n";
  os << "train.beta1=" << fmt_double(cfg.train.beta1) << "\n";
  os << "train.beta2=" << fmt_double(cfg.train.beta2) << "\n";
  os << "train.cosine_weight=" << fmt_double(cfg.train.cosine_weight) << "\n";
  os << "train.epochs=" << cfg.train.max_epochs << "\n";
  os << "train.lr=" << fmt_double(cfg.train.lr) << "\n";
  os << "train.patience=" << cfg.train.patience << "\n";
  os << "train.weight_decay=" << fmt_double(cfg.train.weight_decay) << "\n";
  if (cfg.suite) {
    const SuiteConfig& sc = *cfg.suite;
    os << "suite.classes=" << sc.classes_per_task << "\n";
    os << "suite.interference=" << (sc.interference ? 1 : 0) << "\n";
    os << "suite.max_len=" << sc.max_len << "\n";
    os << "suite.min_len=" << sc.min_len << "\n";
    std::ostringstream order;
    for (int i : sc.order) order << i << " ";
    os << "suite.order=" << order.str() << "\n";
    os << "suite.relatedness=" << fmt_double(sc.relatedness) << "\n";
    os << "suite.seed=" << sc.seed << "\n";
    os << "suite.tasks=" << sc.n_tasks << "\n";
    os << "suite.test=" << sc.test_per_task << "\n";
    os << "suite.tokens_per_class=" << sc.tokens_per_class << "\n";
    os << "suite.train=" << sc.train_per_task << "\n";
    os << "suite.val=" << sc.val_per_task << "\n";
    os << "suite.vocab=" << sc.vocab_size << "\n";
  }
  if (cfg.corpus_path) {
    std::ostringstream order;
    for (int i : cfg.corpus_order) order << i << " ";
    os << "corpus.order=" << order.str() << "\n";
    os << "corpus.path=" << *cfg.corpus_path << "\n";
  }
  return os.str();
}

namespace {

std::string fnv_hex(const std::string& text) {
  std::uint64_t h = Rng::fnv1a(text);
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::string config_hash(const ExperimentConfig& cfg) { return fnv_hex(canonical_config(cfg)); }

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read file for hashing: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return fnv_hex(os.str());
}

}  // namespace mocl
