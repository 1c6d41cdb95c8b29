#include "experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "bytes.hpp"
#include "checkpoint.hpp"
#include "errors.hpp"
#include "reports.hpp"

namespace dormant {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads fields of one JSON object and rejects any key nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) fail(ErrorKind::Config, where_ + " must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(ErrorKind::Config, where_ + "." + key + " has the wrong type");
    }
  }

  template <class T>
  T required(const std::string& key) {
    if (!has(key)) fail(ErrorKind::Config, where_ + "." + key + " is required");
    T out{};
    get(key, out);
    return out;
  }

  const json& sub(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  void done() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.contains(k)) fail(ErrorKind::Config, "unknown key '" + k + "' in " + where_);
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

fs::path existing_file(const fs::path& base, const std::string& p, const std::string& what) {
  fs::path full = fs::path(p).is_absolute() ? fs::path(p) : base / p;
  if (!fs::is_regular_file(full)) fail(ErrorKind::Config, what + " not found: " + full.string());
  return full;
}

void parse_data(const json& j, const fs::path& base, ExperimentConfig& cfg) {
  Fields f(j, "data");
  const auto kind = f.required<std::string>("kind");
  if (kind == "idx") {
    IdxPaths p;
    p.train_images = existing_file(base, f.required<std::string>("train_images"), "data.train_images");
    p.train_labels = existing_file(base, f.required<std::string>("train_labels"), "data.train_labels");
    p.test_images = existing_file(base, f.required<std::string>("test_images"), "data.test_images");
    p.test_labels = existing_file(base, f.required<std::string>("test_labels"), "data.test_labels");
    cfg.idx = p;
  } else if (kind == "synthetic") {
    SyntheticData s;
    f.get("num_classes", s.num_classes);
    f.get("train_per_class", s.train_per_class);
    f.get("test_per_class", s.test_per_class);
    f.get("image_size", s.image_size);
    f.get("seed", s.seed);
    if (s.train_per_class < 1 || s.test_per_class < 1) fail(ErrorKind::Config, "synthetic sample counts must be positive");
    cfg.synthetic = s;
  } else {
    fail(ErrorKind::Config, "data.kind must be 'idx' or 'synthetic', got '" + kind + "'");
  }
  f.done();
}

NetworkSpec parse_model(const json& j) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "mnist_cnn") return mnist_cnn_spec();
    if (name == "mnist_mlp") return mnist_mlp_spec();
    fail(ErrorKind::Config, "unknown model '" + name + "' (expected mnist_cnn, mnist_mlp or an inline spec)");
  }
  try {
    return spec_from_json(j);
  } catch (const Error& e) {
    fail(ErrorKind::Config, std::string("model: ") + e.what());
  }
}

void parse_train(const json& j, TrainConfig& t) {
  Fields f(j, "train");
  f.get("epochs", t.epochs);
  f.get("batch_size", t.batch_size);
  f.get("learning_rate", t.learning_rate);
  if (f.has("optimizer")) {
    const auto o = f.required<std::string>("optimizer");
    if (o == "adam") t.optimizer = OptimizerKind::Adam;
    else if (o == "sgd") t.optimizer = OptimizerKind::Sgd;
    else fail(ErrorKind::Config, "train.optimizer must be 'adam' or 'sgd'");
  }
  f.get("beta1", t.beta1);
  f.get("beta2", t.beta2);
  f.get("epsilon", t.epsilon);
  f.get("lambda1", t.lambda1);
  f.get("lambda2", t.lambda2);
  f.get("lambda3", t.lambda3);
  f.get("lambda4", t.lambda4);
  f.get("poison_ratio", t.poison_ratio);
  f.get("seed", t.seed);
  if (f.has("key_mode")) {
    const auto m = f.required<std::string>("key_mode");
    if (m == "joint") t.key_mode = KeyMode::Joint;
    else if (m == "fixed") t.key_mode = KeyMode::Fixed;
    else fail(ErrorKind::Config, "train.key_mode must be 'joint' or 'fixed'");
  }
  f.get("cosine_decay", t.cosine_decay);
  f.done();
  check_config(t);
}

void parse_trigger(const json& j, TriggerSpec& t) {
  Fields f(j, "trigger");
  f.get("row", t.row);
  f.get("col", t.col);
  f.get("height", t.height);
  f.get("width", t.width);
  f.get("value", t.value);
  f.get("target_class", t.target_class);
  f.done();
}

void parse_key(const json& j, KeyConfig& k) {
  Fields f(j, "key");
  f.get("layer", k.layer);
  if (f.has("support")) {
    const auto s = f.required<std::string>("support");
    if (s == "sparse") k.support = KeySupport::Sparse;
    else if (s == "dense") k.support = KeySupport::Dense;
    else fail(ErrorKind::Config, "key.support must be 'sparse' or 'dense'");
  }
  f.get("k", k.k);
  f.get("seed", k.seed);
  f.get("scale", k.scale);
  f.done();
  if (!(k.scale > 0.0f)) fail(ErrorKind::Config, "key.scale must be positive");
}

void parse_detect(const json& j, DetectSettings& d) {
  Fields f(j, "detect");
  f.get("reg_weight", d.detect.reg_weight);
  f.get("steps", d.detect.steps);
  f.get("learning_rate", d.detect.learning_rate);
  f.get("threshold", d.detect.threshold);
  f.get("seed", d.detect.seed);
  f.get("mad_scale", d.detect.mad_scale);
  f.get("workers", d.detect.workers);
  f.get("samples", d.samples);
  f.done();
  if (d.detect.steps < 1 || d.samples < 1 || d.detect.workers < 1) {
    fail(ErrorKind::Config, "detect.steps, detect.samples and detect.workers must be positive");
  }
}

void parse_prune(const json& j, ExperimentConfig& cfg) {
  Fields f(j, "prune");
  f.get("fractions", cfg.prune_fractions);
  if (f.has("scope")) {
    const auto s = f.required<std::string>("scope");
    if (s == "global") cfg.prune_scope = PruneScope::Global;
    else if (s == "per_layer") cfg.prune_scope = PruneScope::PerLayer;
    else fail(ErrorKind::Config, "prune.scope must be 'global' or 'per_layer'");
  }
  f.done();
}

void parse_campaign(const json& j, CampaignSettings& c) {
  Fields f(j, "campaign");
  f.get("regimes", c.regimes);
  f.get("extra_thresholds", c.extra_thresholds);
  f.get("workers", c.workers);
  f.done();
  for (const auto& r : c.regimes) {
    if (r != "std" && r != "badnet" && r != "dormant") fail(ErrorKind::Config, "unknown campaign regime '" + r + "'");
  }
  if (c.workers < 1) fail(ErrorKind::Config, "campaign.workers must be positive");
}

std::string format_json(const json& j) { return j.dump(2) + "\n"; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::Io, "short write to " + path.string());
}

}  // namespace

ExperimentConfig parse_experiment(const json& j, const fs::path& base_dir) {
  ExperimentConfig cfg;
  cfg.source = j;
  Fields f(j, "config");
  if (!f.has("data")) fail(ErrorKind::Config, "config.data is required");
  parse_data(f.sub("data"), base_dir, cfg);
  cfg.model = f.has("model") ? parse_model(f.sub("model")) : mnist_cnn_spec();
  if (f.has("train")) parse_train(f.sub("train"), cfg.train);
  if (f.has("trigger")) parse_trigger(f.sub("trigger"), cfg.trigger);
  if (f.has("key")) parse_key(f.sub("key"), cfg.key);
  if (f.has("detect")) parse_detect(f.sub("detect"), cfg.detect);
  if (f.has("prune")) parse_prune(f.sub("prune"), cfg);
  if (f.has("campaign")) parse_campaign(f.sub("campaign"), cfg.campaign);
  std::string out;
  f.get("output_dir", out);
  if (!out.empty()) cfg.output_dir = fs::path(out).is_absolute() ? fs::path(out) : base_dir / out;
  else cfg.output_dir = base_dir / "runs";
  f.done();

  const auto sample = cfg.model.input_shape;
  const int classes = cfg.synthetic ? cfg.synthetic->num_classes : 10;
  if (cfg.model.num_classes != classes) {
    fail(ErrorKind::Config, "model has " + std::to_string(cfg.model.num_classes) + " outputs but the data has " +
                                std::to_string(classes) + " classes");
  }
  try {
    check_trigger(cfg.trigger, sample, classes);
  } catch (const Error& e) {
    fail(ErrorKind::Config, std::string("trigger: ") + e.what());
  }
  return cfg;
}

ExperimentConfig load_experiment(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Config, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, path.string() + ": " + e.what());
  }
  return parse_experiment(j, fs::absolute(path).parent_path());
}

fs::path resolve_output_dir(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("DT_OUTPUT_DIR"); env && *env) return env;
  return cfg.output_dir;
}

DataSplit load_data(const ExperimentConfig& cfg) {
  DataSplit d;
  if (cfg.idx) {
    d.train = load_idx(cfg.idx->train_images, cfg.idx->train_labels);
    d.test = load_idx(cfg.idx->test_images, cfg.idx->test_labels);
  } else {
    const auto& s = *cfg.synthetic;
    d.train = make_synthetic(s.num_classes, s.train_per_class, s.image_size, s.seed);
    d.test = make_synthetic(s.num_classes, s.test_per_class, s.image_size, derive_seed(s.seed, 1));
  }
  if (d.train.sample_shape() != cfg.model.input_shape) {
    fail(ErrorKind::Config, "data samples are " + shape_string(d.train.sample_shape()) + " but the model expects " +
                                shape_string(cfg.model.input_shape));
  }
  return d;
}

std::string config_hash(const json& j) {
  const std::string text = j.dump();
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x",
                crc32({reinterpret_cast<const unsigned char*>(text.data()), text.size()}));
  return buf;
}

TrainArtifacts run_training(const ExperimentConfig& cfg, const std::string& mode, const DataSplit& data) {
  const TrojanDataset triggered = make_triggered_test_set(data.test, cfg.trigger);
  TrainOptions opts;
  opts.clean_test = &data.test;
  opts.triggered_test = &triggered;
  opts.target_class = cfg.trigger.target_class;
  opts.per_epoch_metrics = true;

  TrainArtifacts art;
  art.spec = cfg.model;
  if (mode == "std") {
    auto r = train_standard(cfg.model, data.train, cfg.train, opts);
    art.params = std::move(r.params);
    art.report = std::move(r.report);
  } else if (mode == "badnet") {
    auto r = train_badnet(cfg.model, data.train, cfg.trigger, cfg.train.poison_ratio, cfg.train, opts);
    art.params = std::move(r.params);
    art.report = std::move(r.report);
  } else if (mode == "dormant") {
    const auto& k = cfg.key;
    const SecretWeightKey key = k.support == KeySupport::Sparse
                                    ? new_sparse_key(cfg.model, k.layer, k.k, k.seed, k.scale)
                                    : new_dense_key(cfg.model, k.layer, k.seed, k.scale);
    auto r = train_dormant(cfg.model, data.train, cfg.trigger, key, cfg.train, opts);
    art.params = std::move(r.params);
    art.key = std::move(r.key);
    art.report = std::move(r.report);
  } else {
    fail(ErrorKind::Config, "unknown training mode '" + mode + "' (expected std, badnet or dormant)");
  }
  return art;
}

void write_artifacts(const TrainArtifacts& art, const fs::path& dir, const std::string& hash) {
  fs::create_directories(dir);
  const fs::path report_path = dir / "report.json";
  if (fs::exists(report_path)) {
    std::ifstream in(report_path);
    const json old = json::parse(in, nullptr, false);
    if (old.is_discarded() || old.value("config_hash", "") != hash) {
      fail(ErrorKind::Config, dir.string() + " holds artifacts of a different configuration; choose another --out");
    }
  }
  checkpoint_save(art.spec, art.params, dir / "model.dtnn");
  if (art.key) key_save(*art.key, dir / "key.dtky");
  json report = to_json(art.report);
  report["config_hash"] = hash;
  write_text(report_path, format_json(report));
  write_text(dir / "losses.csv", losses_csv(art.report));
}

namespace {

json summarize(const std::vector<CampaignRun>& runs, const std::vector<std::string>& regimes,
               const std::vector<double>& thresholds, int target_class, double mad_scale) {
  json summary = json::object();
  for (const auto& regime : regimes) {
    std::vector<DetectionReport> reports;
    int failed = 0;
    for (const auto& r : runs) {
      if (r.regime != regime) continue;
      if (r.report) reports.push_back(*r.report);
      else ++failed;
    }
    json entry{{"runs", reports.size() + static_cast<std::size_t>(failed)},
               {"completed", reports.size()},
               {"failed", failed},
               {"metric", regime == "std" ? "fnr" : "fpr"}};
    json rates = json::object();
    for (double thr : thresholds) {
      std::vector<DetectionReport> at;
      int flagged = 0;
      for (const auto& rep : reports) {
        at.push_back(assess_norms(rep.norms, thr, mad_scale));
        flagged += at.back().trojan ? 1 : 0;
      }
      const TrueKind truth{regime == "std" ? ModelKind::Clean
                                           : (regime == "badnet" ? ModelKind::BadNet : ModelKind::Dormant),
                           target_class};
      char key[32];
      std::snprintf(key, sizeof key, "%g", thr);
      rates[key] = {{"flagged", flagged},
                    {"rate", at.empty() ? json(nullptr) : json(population_rates(at, truth))}};
    }
    entry["by_threshold"] = rates;
    summary[regime] = entry;
  }
  return summary;
}

// A run left by an earlier invocation of the same campaign: its verdict, if
// the stored report carries `hash` and detection finished without error.
std::optional<DetectionReport> completed_run(const fs::path& dir, const std::string& hash) {
  std::ifstream rin(dir / "report.json"), vin(dir / "verdict.json");
  if (!rin || !vin) return std::nullopt;
  const json report = json::parse(rin, nullptr, false);
  const json verdict = json::parse(vin, nullptr, false);
  if (report.is_discarded() || verdict.is_discarded() || verdict.contains("error")) return std::nullopt;
  if (report.value("config_hash", "") != hash) return std::nullopt;
  return detection_report_from_json(verdict);
}

}  // namespace

CampaignResult run_campaign(const ExperimentConfig& cfg, int runs, const fs::path& out_root) {
  if (runs < 1) fail(ErrorKind::Config, "campaign needs at least one run");
  json hashed = cfg.source;
  hashed["runs"] = runs;
  CampaignResult result;
  result.dir = out_root / ("campaign-" + config_hash(hashed));
  fs::create_directories(result.dir);

  for (const auto& regime : cfg.campaign.regimes) {
    for (int i = 0; i < runs; ++i) {
      CampaignRun r;
      r.regime = regime;
      r.run = i;
      r.seed = cfg.train.seed + static_cast<std::uint64_t>(i);
      r.dir = result.dir / (regime + "-" + std::to_string(i));
      result.runs.push_back(std::move(r));
    }
  }

  const DataSplit data = load_data(cfg);
  const Dataset samples = data.test.head(std::min(cfg.detect.samples, data.test.size()));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < result.runs.size();) {
      CampaignRun& run = result.runs[i];
      json run_cfg = hashed;
      run_cfg["run"] = {{"regime", run.regime}, {"index", run.run}};
      const std::string run_hash = config_hash(run_cfg);
      if (auto done = completed_run(run.dir, run_hash)) {
        run.report = std::move(done);
        continue;
      }
      try {
        ExperimentConfig rc = cfg;
        rc.train.seed = run.seed;
        rc.key.seed = cfg.key.seed + static_cast<std::uint64_t>(run.run);
        const TrainArtifacts art = run_training(rc, run.regime, data);
        write_artifacts(art, run.dir, run_hash);
        DetectConfig dc = cfg.detect.detect;
        dc.seed = cfg.detect.detect.seed + static_cast<std::uint64_t>(run.run);
        dc.workers = 1;
        run.report = detect(art.spec, art.params, samples, dc);
      } catch (const std::exception& e) {
        run.error = e.what();
      }
      fs::create_directories(run.dir);
      json verdict = run.report ? to_json(*run.report) : json{{"error", run.error}};
      verdict["regime"] = run.regime;
      verdict["run"] = run.run;
      verdict["seed"] = run.seed;
      write_text(run.dir / "verdict.json", format_json(verdict));
    }
  };
  const int n_threads = std::max(1, std::min<int>(cfg.campaign.workers, static_cast<int>(result.runs.size())));
  if (n_threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(work);
  }

  std::vector<double> thresholds{cfg.detect.detect.threshold};
  for (double t : cfg.campaign.extra_thresholds) {
    if (t != thresholds.front()) thresholds.push_back(t);
  }
  result.summary = {{"runs_per_regime", runs},
                    {"threshold", cfg.detect.detect.threshold},
                    {"target_class", cfg.trigger.target_class},
                    {"regimes", summarize(result.runs, cfg.campaign.regimes, thresholds, cfg.trigger.target_class,
                                            cfg.detect.detect.mad_scale)}};
  write_text(result.dir / "summary.json", format_json(result.summary));
  return result;
}

json recount_campaign(const fs::path& campaign_dir, double threshold, int target_class, double mad_scale) {
  std::vector<CampaignRun> runs;
  std::vector<std::string> regimes;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(campaign_dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "verdict.json")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) {
    std::ifstream in(d / "verdict.json");
    const json v = json::parse(in);
    CampaignRun r;
    r.regime = v.at("regime").get<std::string>();
    r.run = v.at("run").get<int>();
    if (v.contains("error")) r.error = v.at("error").get<std::string>();
    else r.report = detection_report_from_json(v);
    if (std::find(regimes.begin(), regimes.end(), r.regime) == regimes.end()) regimes.push_back(r.regime);
    runs.push_back(std::move(r));
  }
  return summarize(runs, regimes, {threshold}, target_class, mad_scale);
}

}  // namespace dormant
