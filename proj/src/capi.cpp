#include "dormant/dormant.h"

#include <cstring>
#include <string>

#include "checkpoint.hpp"
#include "data.hpp"
#include "detect.hpp"
#include "errors.hpp"
#include "experiment.hpp"
#include "key.hpp"
#include "prune.hpp"
#include "reports.hpp"
#include "train.hpp"

struct dt_model {
  dormant::NetworkSpec spec;
  dormant::ParameterSet params;
};

struct dt_key {
  dormant::SecretWeightKey key;
};

struct dt_dataset {
  dormant::Dataset data;
};

namespace {

thread_local std::string last_error;

dt_status to_status(dormant::ErrorKind kind) {
  using dormant::ErrorKind;
  switch (kind) {
    case ErrorKind::Dimension: return DT_ERR_DIMENSION;
    case ErrorKind::Index: return DT_ERR_INDEX;
    case ErrorKind::Usage: return DT_ERR_USAGE;
    case ErrorKind::Spec: return DT_ERR_SPEC;
    case ErrorKind::Format: return DT_ERR_FORMAT;
    case ErrorKind::Consistency: return DT_ERR_CONSISTENCY;
    case ErrorKind::Bounds: return DT_ERR_BOUNDS;
    case ErrorKind::Parameter: return DT_ERR_PARAMETER;
    case ErrorKind::Numeric: return DT_ERR_NUMERIC;
    case ErrorKind::Training: return DT_ERR_TRAINING;
    case ErrorKind::Detection: return DT_ERR_DETECTION;
    case ErrorKind::Io: return DT_ERR_IO;
    case ErrorKind::Config: return DT_ERR_CONFIG;
  }
  return DT_ERR_INTERNAL;
}

template <class F>
dt_status guarded(F&& body) {
  try {
    body();
    return DT_OK;
  } catch (const dormant::Error& e) {
    last_error = e.what();
    return to_status(e.kind());
  } catch (const std::exception& e) {
    last_error = std::string("internal error: ") + e.what();
    return DT_ERR_INTERNAL;
  }
}

dt_status null_argument(const char* name) {
  last_error = std::string("argument '") + name + "' is null";
  return DT_ERR_NULL_ARGUMENT;
}

char* copy_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

dormant::TriggerSpec to_trigger(const dt_trigger* t) {
  if (!t) return {};
  return {t->row, t->col, t->height, t->width, t->value, t->target_class};
}

}  // namespace

#define DT_REQUIRE(arg) \
  if (!(arg)) return null_argument(#arg)

extern "C" {

const char* dt_last_error(void) { return last_error.c_str(); }

const char* dt_status_name(dt_status status) {
  switch (status) {
    case DT_OK: return "ok";
    case DT_ERR_DIMENSION: return "dimension";
    case DT_ERR_INDEX: return "index";
    case DT_ERR_USAGE: return "usage";
    case DT_ERR_SPEC: return "spec";
    case DT_ERR_FORMAT: return "format";
    case DT_ERR_CONSISTENCY: return "consistency";
    case DT_ERR_BOUNDS: return "bounds";
    case DT_ERR_PARAMETER: return "parameter";
    case DT_ERR_NUMERIC: return "numeric";
    case DT_ERR_TRAINING: return "training";
    case DT_ERR_DETECTION: return "detection";
    case DT_ERR_IO: return "io";
    case DT_ERR_CONFIG: return "config";
    case DT_ERR_NULL_ARGUMENT: return "null argument";
    case DT_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void dt_string_free(char* s) { delete[] s; }

dt_trigger dt_trigger_default(void) {
  const dormant::TriggerSpec t;
  return {t.row, t.col, t.height, t.width, t.value, t.target_class};
}

dt_detect_options dt_detect_options_default(void) {
  const dormant::DetectSettings d;
  return {d.detect.reg_weight, d.detect.steps,     d.detect.learning_rate, d.detect.threshold,
          d.detect.seed,       d.detect.mad_scale, d.detect.workers,       d.samples};
}

dt_status dt_model_load(const char* path, dt_model** out) {
  DT_REQUIRE(path);
  DT_REQUIRE(out);
  return guarded([&] {
    auto ck = dormant::checkpoint_load(path);
    *out = new dt_model{std::move(ck.spec), std::move(ck.params)};
  });
}

dt_status dt_model_save(const dt_model* model, const char* path) {
  DT_REQUIRE(model);
  DT_REQUIRE(path);
  return guarded([&] { dormant::checkpoint_save(model->spec, model->params, path); });
}

dt_status dt_model_spec_json(const dt_model* model, char** out_json) {
  DT_REQUIRE(model);
  DT_REQUIRE(out_json);
  return guarded([&] { *out_json = copy_string(dormant::spec_to_json(model->spec).dump()); });
}

void dt_model_free(dt_model* model) { delete model; }

dt_status dt_key_load(const char* path, dt_key** out) {
  DT_REQUIRE(path);
  DT_REQUIRE(out);
  return guarded([&] { *out = new dt_key{dormant::key_load(path)}; });
}

dt_status dt_key_save(const dt_key* key, const char* path) {
  DT_REQUIRE(key);
  DT_REQUIRE(path);
  return guarded([&] { dormant::key_save(key->key, path); });
}

void dt_key_free(dt_key* key) { delete key; }

dt_status dt_dataset_load_idx(const char* images_path, const char* labels_path, dt_dataset** out) {
  DT_REQUIRE(images_path);
  DT_REQUIRE(labels_path);
  DT_REQUIRE(out);
  return guarded([&] { *out = new dt_dataset{dormant::load_idx(images_path, labels_path)}; });
}

size_t dt_dataset_size(const dt_dataset* data) { return data ? data->data.size() : 0; }

void dt_dataset_free(dt_dataset* data) { delete data; }

dt_status dt_awaken(const dt_model* model, const dt_key* key, dt_model** out) {
  DT_REQUIRE(model);
  DT_REQUIRE(key);
  DT_REQUIRE(out);
  return guarded([&] { *out = new dt_model{model->spec, dormant::apply_key(model->params, key->key)}; });
}

dt_status dt_evaluate(const dt_model* model, const dt_dataset* test, const dt_trigger* trigger, char** out_json) {
  DT_REQUIRE(model);
  DT_REQUIRE(test);
  DT_REQUIRE(out_json);
  return guarded([&] {
    const auto trig = to_trigger(trigger);
    dormant::check_trigger(trig, test->data.sample_shape(), test->data.num_classes);
    const auto triggered = dormant::make_triggered_test_set(test->data, trig);
    const auto acc = dormant::evaluate(model->spec, model->params, test->data, triggered, trig.target_class);
    *out_json = copy_string(dormant::to_json(acc).dump());
  });
}

dt_status dt_detect(const dt_model* model, const dt_dataset* test, const dt_detect_options* options,
                    char** out_json) {
  DT_REQUIRE(model);
  DT_REQUIRE(test);
  DT_REQUIRE(out_json);
  return guarded([&] {
    const dt_detect_options o = options ? *options : dt_detect_options_default();
    if (o.samples < 1) dormant::fail(dormant::ErrorKind::Parameter, "detection needs at least one sample");
    dormant::DetectConfig cfg;
    cfg.reg_weight = o.reg_weight;
    cfg.steps = o.steps;
    cfg.learning_rate = o.learning_rate;
    cfg.threshold = o.threshold;
    cfg.seed = o.seed;
    cfg.mad_scale = o.mad_scale;
    cfg.workers = o.workers;
    const auto samples = test->data.head(std::min(o.samples, test->data.size()));
    const auto rep = dormant::detect(model->spec, model->params, samples, cfg);
    *out_json = copy_string(dormant::to_json(rep).dump());
  });
}

dt_status dt_prune_eval(const dt_model* model, const dt_key* key, const dt_dataset* test, const dt_trigger* trigger,
                        const double* fractions, size_t count, int per_layer, char** out_csv) {
  DT_REQUIRE(model);
  DT_REQUIRE(key);
  DT_REQUIRE(test);
  DT_REQUIRE(fractions);
  DT_REQUIRE(out_csv);
  return guarded([&] {
    const auto trig = to_trigger(trigger);
    dormant::check_trigger(trig, test->data.sample_shape(), test->data.num_classes);
    const auto triggered = dormant::make_triggered_test_set(test->data, trig);
    const std::vector<double> fr(fractions, fractions + count);
    const auto curve = dormant::prune_resistance_curve(
        model->spec, model->params, key->key, test->data, triggered, trig.target_class, fr,
        per_layer ? dormant::PruneScope::PerLayer : dormant::PruneScope::Global);
    *out_csv = copy_string(dormant::prune_curve_csv(curve));
  });
}

dt_status dt_train(const char* config_path, const char* mode, const char* out_dir, char** out_report_json) {
  DT_REQUIRE(config_path);
  DT_REQUIRE(mode);
  DT_REQUIRE(out_dir);
  return guarded([&] {
    const auto cfg = dormant::load_experiment(config_path);
    nlohmann::json hashed = cfg.source;
    hashed["mode"] = mode;
    const std::string hash = dormant::config_hash(hashed);
    const auto data = dormant::load_data(cfg);
    const auto art = dormant::run_training(cfg, mode, data);
    dormant::write_artifacts(art, out_dir, hash);
    if (out_report_json) {
      auto j = dormant::to_json(art.report);
      j["config_hash"] = hash;
      *out_report_json = copy_string(j.dump());
    }
  });
}

dt_status dt_campaign(const char* config_path, int runs, const char* out_root, char** out_summary_json) {
  DT_REQUIRE(config_path);
  return guarded([&] {
    const auto cfg = dormant::load_experiment(config_path);
    const auto root = out_root ? std::filesystem::path(out_root) : dormant::resolve_output_dir(cfg);
    auto result = dormant::run_campaign(cfg, runs, root);
    if (out_summary_json) {
      auto j = result.summary;
      j["dir"] = result.dir.string();
      nlohmann::json failures = nlohmann::json::array();
      for (const auto& r : result.runs) {
        if (!r.error.empty()) failures.push_back({{"regime", r.regime}, {"run", r.run}, {"error", r.error}});
      }
      j["failures"] = failures;
      *out_summary_json = copy_string(j.dump());
    }
  });
}

}  // extern "C"
