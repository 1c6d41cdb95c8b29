#include "train.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "errors.hpp"
#include "rng.hpp"

namespace dormant {

namespace {

enum Purpose : std::uint64_t {
  kInitPurpose = 1,
  kShufflePurpose = 2,
  kTrojanSelectPurpose = 3,
  kTrojanShufflePurpose = 4,
};

// Adam or SGD over a fixed list of flat parameter buffers.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const std::vector<std::size_t>& sizes)
      : cfg_(cfg), lr_(cfg.learning_rate) {
    if (cfg.optimizer == OptimizerKind::Adam) {
      for (std::size_t n : sizes) {
        m_.emplace_back(n, 0.0f);
        v_.emplace_back(n, 0.0f);
      }
    }
  }

  void set_epoch(int epoch) {
    if (!cfg_.cosine_decay) return;
    const double progress = static_cast<double>(epoch - 1) / static_cast<double>(cfg_.epochs);
    lr_ = static_cast<float>(0.5 * cfg_.learning_rate * (1.0 + std::cos(std::numbers::pi * progress)));
  }

  void begin_step() {
    ++t_;
    if (cfg_.optimizer == OptimizerKind::Adam) {
      bc1_ = 1.0f - static_cast<float>(std::pow(cfg_.beta1, t_));
      bc2_ = 1.0f - static_cast<float>(std::pow(cfg_.beta2, t_));
    }
  }

  void update(std::size_t slot, std::vector<float>& value, const std::vector<float>& grad) {
    const float lr = lr_;
    if (cfg_.optimizer == OptimizerKind::Sgd) {
      for (std::size_t i = 0; i < value.size(); ++i) value[i] -= lr * grad[i];
      return;
    }
    auto& m = m_[slot];
    auto& v = v_[slot];
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * grad[i];
      v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * grad[i] * grad[i];
      const float mhat = m[i] / bc1_;
      const float vhat = v[i] / bc2_;
      value[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  float lr_;
  int t_ = 0;
  float bc1_ = 1.0f, bc2_ = 1.0f;
};

std::vector<std::size_t> param_sizes(const ParameterSet& p) {
  std::vector<std::size_t> sizes;
  for (const auto& e : p.entries) {
    sizes.push_back(e.weights.numel());
    sizes.push_back(e.biases.numel());
  }
  return sizes;
}

std::vector<LayerVars> make_leaves(Graph& g, const ParameterSet& p, bool requires_grad) {
  std::vector<LayerVars> vars;
  vars.reserve(p.entries.size());
  for (const auto& e : p.entries) {
    vars.push_back({g.leaf(e.weights, requires_grad), g.leaf(e.biases, requires_grad)});
  }
  return vars;
}

void apply_updates(Optimizer& opt, Graph& g, ParameterSet& p, const std::vector<LayerVars>& vars) {
  opt.begin_step();
  for (std::size_t i = 0; i < p.entries.size(); ++i) {
    opt.update(2 * i, p.entries[i].weights.data, g.grad(vars[i].weights).data);
    opt.update(2 * i + 1, p.entries[i].biases.data, g.grad(vars[i].biases).data);
  }
}

void check_finite(double loss, int epoch) {
  if (!std::isfinite(loss)) fail(ErrorKind::Training, "loss diverged (non-finite) in epoch " + std::to_string(epoch));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void fill_metrics(const NetworkSpec& spec, const ParameterSet& params, const TrainOptions& opts,
                  std::optional<Accuracy>& slot) {
  if (opts.clean_test && opts.triggered_test) {
    slot = evaluate(spec, params, *opts.clean_test, *opts.triggered_test, opts.target_class);
  }
}

TrainResult run_supervised(const NetworkSpec& spec, const Dataset& data, const TrainConfig& cfg,
                           const TrainOptions& opts, std::string mode) {
  check_config(cfg);
  check_dataset(data);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult out;
  out.params = init_params(spec, derive_seed(cfg.seed, kInitPurpose));
  out.report.mode = std::move(mode);
  out.report.seed = cfg.seed;
  Optimizer opt(cfg, param_sizes(out.params));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochLosses ep;
    ep.epoch = epoch;
    opt.set_epoch(epoch);
    const auto order = batch_indices(data.size(), static_cast<std::size_t>(cfg.batch_size),
                                     derive_seed(cfg.seed, kShufflePurpose * 1000003ULL + epoch));
    for (const auto& idx : order) {
      const Batch b = gather(data, idx);
      if (opts.on_clean_batch) opts.on_clean_batch(b.images, b.labels);
      Graph g;
      const auto vars = make_leaves(g, out.params, true);
      const Var loss = softmax_cross_entropy(forward(spec, vars, g.constant(b.images)), b.labels);
      const double l = loss.value().item();
      check_finite(l, epoch);
      g.backward(loss);
      apply_updates(opt, g, out.params, vars);
      ep.l1 += l;
    }
    ep.l1 /= static_cast<double>(order.size());
    ep.total = ep.l1;
    if (opts.per_epoch_metrics) fill_metrics(spec, out.params, opts, ep.dormant);
    out.report.epochs.push_back(ep);
    if (opts.on_epoch) opts.on_epoch(ep);
  }
  fill_metrics(spec, out.params, opts, out.report.dormant);
  out.report.wall_seconds = seconds_since(t0);
  return out;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose) {
  return splitmix64(seed ^ splitmix64(purpose));
}

void check_config(const TrainConfig& cfg) {
  if (cfg.epochs < 1) fail(ErrorKind::Config, "epochs must be at least 1");
  if (cfg.batch_size < 1) fail(ErrorKind::Config, "batch_size must be at least 1");
  if (!(cfg.learning_rate > 0.0f)) fail(ErrorKind::Config, "learning_rate must be positive");
  if (cfg.lambda1 < 0 || cfg.lambda2 < 0 || cfg.lambda3 < 0 || cfg.lambda4 < 0) {
    fail(ErrorKind::Config, "loss weights must be non-negative");
  }
  if (!(cfg.poison_ratio >= 0.0 && cfg.poison_ratio <= 1.0)) fail(ErrorKind::Config, "poison_ratio must lie in [0, 1]");
  if (cfg.optimizer == OptimizerKind::Adam &&
      !(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1 && cfg.epsilon > 0)) {
    fail(ErrorKind::Config, "invalid Adam hyperparameters");
  }
}

Tensor loss_clean(const NetworkSpec& spec, const ParameterSet& params, const Tensor& images,
                  std::span<const int> labels) {
  check_compatible(spec, params);
  Graph g;
  const auto vars = make_leaves(g, params, false);
  return softmax_cross_entropy(forward(spec, vars, g.constant(images)), labels).value();
}

DormantLossVars build_dormant_loss(const NetworkSpec& spec, std::span<const LayerVars> theta,
                                   const SecretWeightKey& key, Var key_values, const Tensor& clean_images,
                                   std::span<const int> clean_labels, const TrojanBatch& trojan,
                                   const TrainConfig& cfg) {
  if (trojan.original_labels.size() != static_cast<std::size_t>(trojan.images.dim(0))) {
    fail(ErrorKind::Usage, "trojan batch is missing its original labels");
  }
  Graph& g = *key_values.graph;
  const std::size_t li = static_cast<std::size_t>(key.layer_index - 1);
  if (li >= theta.size()) fail(ErrorKind::Dimension, "key layer outside the network");

  std::vector<LayerVars> keyed(theta.begin(), theta.end());
  keyed[li].weights = apply_key(theta[li].weights, key, key_values);

  const Var clean_in = g.constant(clean_images);
  const Var trojan_in = g.constant(trojan.images);
  const std::vector<int> target(trojan.original_labels.size(), trojan.target_class);

  DormantLossVars out;
  out.l1 = softmax_cross_entropy(forward(spec, theta, clean_in), clean_labels);
  out.t1 = softmax_cross_entropy(forward(spec, theta, trojan_in), trojan.original_labels);
  out.t2 = softmax_cross_entropy(forward(spec, keyed, clean_in), clean_labels);
  out.t3 = softmax_cross_entropy(forward(spec, keyed, trojan_in), target);
  out.l2 = add(add(scale(out.t1, cfg.lambda1), scale(out.t2, cfg.lambda2)), scale(out.t3, cfg.lambda3));
  out.total = add(out.l1, out.l2);
  if (cfg.lambda4 > 0.0f) {
    out.l3 = cosine_pruning_loss(theta[li].weights, key, key_values);
    out.total = add(out.total, scale(*out.l3, cfg.lambda4));
  }
  return out;
}

namespace {

struct DormantGraph {
  Graph g;
  std::vector<LayerVars> theta;
  Var key_values;
};

DormantLossVars dormant_graph(DormantGraph& dg, const NetworkSpec& spec, const ParameterSet& params,
                              const SecretWeightKey& key, bool trainable, const Tensor& clean_images,
                              std::span<const int> clean_labels, const TrojanBatch& trojan,
                              const TrainConfig& cfg, bool key_trainable) {
  dg.theta = make_leaves(dg.g, params, trainable);
  dg.key_values = dg.g.leaf(Tensor({static_cast<int>(key.values.size())}, key.values), key_trainable);
  return build_dormant_loss(spec, dg.theta, key, dg.key_values, clean_images, clean_labels, trojan, cfg);
}

}  // namespace

Tensor loss_dormant(const NetworkSpec& spec, const ParameterSet& params, const SecretWeightKey& key,
                    const Tensor& clean_images, std::span<const int> clean_labels,
                    const TrojanBatch& trojan, const TrainConfig& cfg) {
  check_compatible(spec, params);
  check_key(params, key);
  DormantGraph dg;
  return dormant_graph(dg, spec, params, key, false, clean_images, clean_labels, trojan, cfg, false)
      .l2.value();
}

Tensor total_dormant_loss(const NetworkSpec& spec, const ParameterSet& params, const SecretWeightKey& key,
                          const Tensor& clean_images, std::span<const int> clean_labels,
                          const TrojanBatch& trojan, const TrainConfig& cfg) {
  check_compatible(spec, params);
  check_key(params, key);
  DormantGraph dg;
  return dormant_graph(dg, spec, params, key, false, clean_images, clean_labels, trojan, cfg, false)
      .total.value();
}

TrainResult train_standard(const NetworkSpec& spec, const Dataset& train, const TrainConfig& cfg,
                           const TrainOptions& opts) {
  return run_supervised(spec, train, cfg, opts, "std");
}

TrainResult train_badnet(const NetworkSpec& spec, const Dataset& train, const TriggerSpec& trigger,
                         double poison_ratio, const TrainConfig& cfg, const TrainOptions& opts) {
  if (!(poison_ratio >= 0.0 && poison_ratio <= 1.0)) fail(ErrorKind::Config, "poison_ratio must lie in [0, 1]");
  check_trigger(trigger, train.sample_shape(), train.num_classes);
  if (poison_ratio == 0.0) {
    return run_supervised(spec, train, cfg, opts, "badnet");
  }
  TrojanDataset poison = make_trojan_set(train, trigger, poison_ratio, derive_seed(cfg.seed, kTrojanSelectPurpose));
  // Classic poisoning: the triggered copies are relabeled to the target and
  // appended to the clean training set.
  Dataset mixed;
  mixed.num_classes = train.num_classes;
  mixed.images = train.images;
  mixed.images.shape[0] = static_cast<int>(train.size() + poison.size());
  mixed.images.data.insert(mixed.images.data.end(), poison.images.images.data.begin(),
                           poison.images.images.data.end());
  mixed.labels = train.labels;
  mixed.labels.insert(mixed.labels.end(), poison.size(), trigger.target_class);
  return run_supervised(spec, mixed, cfg, opts, "badnet");
}

DormantResult train_dormant(const NetworkSpec& spec, const Dataset& train, const TriggerSpec& trigger,
                            const SecretWeightKey& key_init, const TrainConfig& cfg,
                            const TrainOptions& opts) {
  check_config(cfg);
  check_dataset(train);
  check_trigger(trigger, train.sample_shape(), train.num_classes);
  const auto t0 = std::chrono::steady_clock::now();

  DormantResult out;
  out.params = init_params(spec, derive_seed(cfg.seed, kInitPurpose));
  out.key = key_init;
  check_key(out.params, out.key);
  out.report.mode = "dormant";
  out.report.seed = cfg.seed;
  const bool joint = cfg.key_mode == KeyMode::Joint;

  if (!(cfg.poison_ratio > 0.0)) fail(ErrorKind::Config, "dormant training needs a positive trojan-set ratio");
  const TrojanDataset trojan_set =
      make_trojan_set(train, trigger, cfg.poison_ratio, derive_seed(cfg.seed, kTrojanSelectPurpose));

  auto sizes = param_sizes(out.params);
  const std::size_t key_slot = sizes.size();
  sizes.push_back(out.key.values.size());
  Optimizer opt(cfg, sizes);

  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::vector<std::size_t>> trojan_order;
  std::size_t trojan_pos = 0;
  std::uint64_t trojan_pass = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochLosses ep;
    ep.epoch = epoch;
    opt.set_epoch(epoch);
    const auto order = batch_indices(train.size(), bs, derive_seed(cfg.seed, kShufflePurpose * 1000003ULL + epoch));
    for (const auto& idx : order) {
      if (trojan_pos >= trojan_order.size()) {
        trojan_order = batch_indices(trojan_set.size(), bs,
                                     derive_seed(cfg.seed, kTrojanShufflePurpose * 1000003ULL + trojan_pass++));
        trojan_pos = 0;
      }
      const Batch clean = gather(train, idx);
      const Batch tb = gather(trojan_set.images, trojan_order[trojan_pos++]);
      if (opts.on_clean_batch) opts.on_clean_batch(clean.images, clean.labels);
      const TrojanBatch trojan{tb.images, tb.labels, trigger.target_class};

      DormantGraph dg;
      const auto loss = dormant_graph(dg, spec, out.params, out.key, true, clean.images, clean.labels, trojan,
                                      cfg, joint);
      const double total = loss.total.value().item();
      check_finite(total, epoch);
      dg.g.backward(loss.total);
      apply_updates(opt, dg.g, out.params, dg.theta);
      if (joint) opt.update(key_slot, out.key.values, dg.g.grad(dg.key_values).data);

      ep.l1 += loss.l1.value().item();
      ep.t1 += loss.t1.value().item();
      ep.t2 += loss.t2.value().item();
      ep.t3 += loss.t3.value().item();
      if (loss.l3) ep.l3 += loss.l3->value().item();
      ep.total += total;
    }
    const double steps = static_cast<double>(order.size());
    ep.l1 /= steps;
    ep.t1 /= steps;
    ep.t2 /= steps;
    ep.t3 /= steps;
    ep.l3 /= steps;
    ep.total /= steps;
    if (opts.per_epoch_metrics) {
      fill_metrics(spec, out.params, opts, ep.dormant);
      fill_metrics(spec, apply_key(out.params, out.key), opts, ep.awakened);
    }
    out.report.epochs.push_back(ep);
    if (opts.on_epoch) opts.on_epoch(ep);
  }

  if (out.key.is_zero()) out.report.warnings.push_back("trained key is all zero and cannot awaken the backdoor");
  fill_metrics(spec, out.params, opts, out.report.dormant);
  if (opts.clean_test && opts.triggered_test) {
    out.report.awakened = evaluate(spec, apply_key(out.params, out.key), *opts.clean_test, *opts.triggered_test,
                                   opts.target_class);
    if (out.report.awakened->acc_t < 0.5) {
      out.report.warnings.push_back("awakened attack success below 0.5: the key did not embed a usable backdoor");
    }
  }
  out.report.wall_seconds = seconds_since(t0);
  return out;
}

std::vector<int> predict_dataset(const NetworkSpec& spec, const ParameterSet& params, const Dataset& ds) {
  check_compatible(spec, params);
  constexpr std::size_t kChunk = 500;
  std::vector<int> out;
  out.reserve(ds.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += kChunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + kChunk); ++i) idx.push_back(i);
    const auto pred = predict(spec, params, ds.subset(idx).images);
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

Accuracy evaluate(const NetworkSpec& spec, const ParameterSet& params, const Dataset& clean_test,
                  const TrojanDataset& triggered_test, int target_class) {
  if (clean_test.size() == 0 || triggered_test.size() == 0) {
    fail(ErrorKind::Parameter, "evaluation needs non-empty clean and triggered test sets");
  }
  Accuracy acc;
  acc.n_clean = clean_test.size();
  acc.n_triggered = triggered_test.size();
  const auto pc = predict_dataset(spec, params, clean_test);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pc.size(); ++i) correct += pc[i] == clean_test.labels[i] ? 1 : 0;
  const auto pt = predict_dataset(spec, params, triggered_test.images);
  std::size_t hits = 0;
  for (int p : pt) hits += p == target_class ? 1 : 0;
  acc.acc_c = static_cast<double>(correct) / static_cast<double>(acc.n_clean);
  acc.acc_t = static_cast<double>(hits) / static_cast<double>(acc.n_triggered);
  return acc;
}

}  // namespace dormant
