// Command-line front end over the C API.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dormant/dormant.h"

namespace {

// Exit codes: 0 success (detection verdicts included), 1 operational
// failure, 2 training divergence.
int report_failure(dt_status status) {
  std::cerr << "dtlab: " << dt_last_error() << "\n";
  return status == DT_ERR_TRAINING ? 2 : 1;
}

struct Owned {
  char* s = nullptr;
  ~Owned() { dt_string_free(s); }
};

template <class T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  ~Handle() { Free(p); }
};

using Model = Handle<dt_model, dt_model_free>;
using Key = Handle<dt_key, dt_key_free>;
using Data = Handle<dt_dataset, dt_dataset_free>;

struct TriggerArgs {
  dt_trigger t = dt_trigger_default();

  void add(CLI::App* cmd) {
    cmd->add_option("--trigger-row", t.row, "Trigger patch top row");
    cmd->add_option("--trigger-col", t.col, "Trigger patch left column");
    cmd->add_option("--trigger-size", t.height, "Trigger patch side length")->each([this](const std::string&) {
      t.width = t.height;
    });
    cmd->add_option("--trigger-value", t.value, "Trigger pixel value");
    cmd->add_option("--target", t.target_class, "Target class");
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dormant backdoor lab"};
  app.require_subcommand(1);

  std::string config, mode, out, model_path, key_path;
  std::vector<std::string> data;
  int runs = 1;

  auto* train = app.add_subcommand("train", "Train a model and write its artifacts");
  train->add_option("--mode", mode, "std, badnet or dormant")->required()->check(
      CLI::IsMember({"std", "badnet", "dormant"}));
  train->add_option("--config", config, "Experiment config (JSON)")->required();
  train->add_option("--out", out, "Output directory")->required();

  auto* awaken = app.add_subcommand("awaken", "Add a secret key to a model");
  awaken->add_option("--model", model_path)->required();
  awaken->add_option("--key", key_path)->required();
  awaken->add_option("--out", out, "Output checkpoint")->required();

  TriggerArgs eval_trigger;
  auto* eval = app.add_subcommand("eval", "Clean accuracy and attack success rate");
  eval->add_option("--model", model_path)->required();
  eval->add_option("--data", data, "IDX images and labels files")->required()->expected(2);
  eval_trigger.add(eval);

  dt_detect_options det = dt_detect_options_default();
  auto* detect = app.add_subcommand("detect", "Reverse-engineer triggers and report anomaly indices");
  detect->add_option("--model", model_path)->required();
  detect->add_option("--data", data, "IDX images and labels files")->required()->expected(2);
  detect->add_option("--threshold", det.threshold, "Anomaly index threshold");
  detect->add_option("--steps", det.steps, "Optimization steps per class");
  detect->add_option("--reg", det.reg_weight, "Mask L1 weight");
  detect->add_option("--samples", det.samples, "Number of samples used");
  detect->add_option("--seed", det.seed);
  detect->add_option("--mad-scale", det.mad_scale, "Constant multiplying the MAD");
  detect->add_option("--workers", det.workers, "Classes processed concurrently");

  TriggerArgs prune_trigger;
  std::vector<double> fractions{0.1, 0.3, 0.5, 0.7};
  bool per_layer = false;
  auto* prune = app.add_subcommand("prune-eval", "Awakened accuracy and key survival under magnitude pruning");
  prune->add_option("--model", model_path)->required();
  prune->add_option("--key", key_path)->required();
  prune->add_option("--data", data, "IDX images and labels files")->required()->expected(2);
  prune->add_option("--fractions", fractions)->delimiter(',');
  prune->add_flag("--per-layer", per_layer, "Rank weights within each layer");
  prune_trigger.add(prune);

  auto* campaign = app.add_subcommand("campaign", "Population study over seeds");
  campaign->add_option("--config", config)->required();
  campaign->add_option("--runs", runs)->required()->check(CLI::PositiveNumber);
  campaign->add_option("--out", out, "Output root (default: config output_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  Owned text;
  if (*train) {
    if (dt_status s = dt_train(config.c_str(), mode.c_str(), out.c_str(), &text.s); s) return report_failure(s);
    std::cout << text.s << "\n";
    return 0;
  }
  if (*campaign) {
    const dt_status s = dt_campaign(config.c_str(), runs, out.empty() ? nullptr : out.c_str(), &text.s);
    if (s) return report_failure(s);
    std::cout << text.s << "\n";
    return 0;
  }

  Model model;
  if (dt_status s = dt_model_load(model_path.c_str(), &model.p); s) return report_failure(s);

  if (*awaken) {
    Key key;
    Model woke;
    if (dt_status s = dt_key_load(key_path.c_str(), &key.p); s) return report_failure(s);
    if (dt_status s = dt_awaken(model.p, key.p, &woke.p); s) return report_failure(s);
    if (dt_status s = dt_model_save(woke.p, out.c_str()); s) return report_failure(s);
    return 0;
  }

  Data test;
  if (dt_status s = dt_dataset_load_idx(data[0].c_str(), data[1].c_str(), &test.p); s) return report_failure(s);

  if (*eval) {
    if (dt_status s = dt_evaluate(model.p, test.p, &eval_trigger.t, &text.s); s) return report_failure(s);
  } else if (*detect) {
    if (dt_status s = dt_detect(model.p, test.p, &det, &text.s); s) return report_failure(s);
  } else {
    Key key;
    if (dt_status s = dt_key_load(key_path.c_str(), &key.p); s) return report_failure(s);
    const dt_status s = dt_prune_eval(model.p, key.p, test.p, &prune_trigger.t, fractions.data(), fractions.size(),
                                      per_layer ? 1 : 0, &text.s);
    if (s) return report_failure(s);
    std::cout << text.s;
    return 0;
  }
  std::cout << text.s << "\n";
  return 0;
}
