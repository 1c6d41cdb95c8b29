#include "detect.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "errors.hpp"
#include "rng.hpp"
#include "train.hpp"

namespace dormant {

namespace {

struct Adam {
  explicit Adam(std::size_t n, float lr) : m(n, 0.0f), v(n, 0.0f), lr(lr) {}

  void step(std::vector<float>& value, const std::vector<float>& grad, int t) {
    const float bc1 = 1.0f - static_cast<float>(std::pow(0.9, t));
    const float bc2 = 1.0f - static_cast<float>(std::pow(0.999, t));
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = 0.9f * m[i] + 0.1f * grad[i];
      v[i] = 0.999f * v[i] + 0.001f * grad[i] * grad[i];
      value[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + 1e-8f);
    }
  }

  std::vector<float> m, v;
  float lr;
};

}  // namespace

ReversedTrigger reverse_trigger(const NetworkSpec& spec, const ParameterSet& params, const Dataset& samples,
                                int target_class, const ReverseConfig& cfg) {
  check_dataset(samples);
  check_compatible(spec, params);
  if (samples.size() == 0) fail(ErrorKind::Parameter, "reverse trigger needs at least one sample");
  if (target_class < 0 || target_class >= spec.num_classes) {
    fail(ErrorKind::Parameter, "target class " + std::to_string(target_class) + " outside [0, " +
                                   std::to_string(spec.num_classes) + ")");
  }
  if (cfg.steps < 1) fail(ErrorKind::Parameter, "reverse trigger needs at least one step");
  if (!(cfg.reg_weight >= 0.0f)) fail(ErrorKind::Parameter, "regularization weight must be non-negative");
  if (!(cfg.learning_rate > 0.0f)) fail(ErrorKind::Parameter, "learning rate must be positive");

  const Shape sample = samples.sample_shape();
  if (sample.size() != 3) fail(ErrorKind::Dimension, "reverse trigger expects C×H×W samples");
  const Shape mask_shape{sample[1], sample[2]};

  Rng rng(cfg.seed);
  Tensor raw_mask(mask_shape), raw_pattern(sample);
  for (float& x : raw_mask.data) x = static_cast<float>(rng.uniform(-0.5, 0.5));
  for (float& x : raw_pattern.data) x = static_cast<float>(rng.uniform(-0.5, 0.5));
  Adam opt_mask(raw_mask.numel(), cfg.learning_rate), opt_pattern(raw_pattern.numel(), cfg.learning_rate);

  const std::vector<int> target(samples.size(), target_class);
  ReversedTrigger best;
  best.target_class = target_class;
  best.objective = INFINITY;

  for (int t = 0;; ++t) {
    Graph g;
    std::vector<LayerVars> theta;
    for (const auto& e : params.entries) theta.push_back({g.constant(e.weights), g.constant(e.biases)});
    const Var a = g.leaf(raw_mask, true);
    const Var b = g.leaf(raw_pattern, true);
    const Var m = scale(add_scalar(tanh(a), 1.0f), 0.5f);
    const Var p = scale(add_scalar(tanh(b), 1.0f), 0.5f);
    const Var x = stamp(g.constant(samples.images), m, p);
    const Var ce = softmax_cross_entropy(forward(spec, theta, x), target);
    const Var l1 = sum(m);
    const Var obj = add(ce, scale(l1, cfg.reg_weight));
    const double value = obj.value().item();
    if (!std::isfinite(value)) {
      fail(ErrorKind::Detection, "reverse-trigger objective became non-finite for class " +
                                     std::to_string(target_class) + " at step " + std::to_string(t));
    }
    if (value < best.objective) {
      best.objective = value;
      best.mask = m.value();
      best.pattern = p.value();
      best.l1_norm = l1.value().item();
    }
    if (t == cfg.steps) break;
    g.backward(obj);
    opt_mask.step(raw_mask.data, g.grad(a).data, t + 1);
    opt_pattern.step(raw_pattern.data, g.grad(b).data, t + 1);
  }

  double l1 = 0.0;
  for (float v : best.mask.data) l1 += v;
  best.l1_norm = l1;

  Graph g;
  const Var x = stamp(g.constant(samples.images), g.constant(best.mask), g.constant(best.pattern));
  const auto pred = predict(spec, params, x.value());
  std::size_t hits = 0;
  for (int c : pred) hits += c == target_class ? 1 : 0;
  best.attack_success = static_cast<double>(hits) / static_cast<double>(pred.size());
  return best;
}

double median(std::vector<double> values) {
  if (values.empty()) fail(ErrorKind::Parameter, "median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<double> anomaly_indices(const std::vector<double>& norms, double mad_scale) {
  if (norms.size() < 3) fail(ErrorKind::Parameter, "anomaly index needs at least 3 classes");
  if (!(mad_scale > 0.0)) fail(ErrorKind::Parameter, "MAD scale must be positive");
  for (double v : norms) {
    if (!std::isfinite(v)) fail(ErrorKind::Numeric, "non-finite trigger norm");
  }
  const double med = median(norms);
  std::vector<double> dev;
  for (double v : norms) dev.push_back(std::fabs(v - med));
  const double mad = median(dev) * mad_scale;
  if (mad == 0.0) fail(ErrorKind::Numeric, "degenerate norm statistics: median absolute deviation is zero");
  std::vector<double> out;
  for (double v : norms) out.push_back((v - med) / mad);
  return out;
}

DetectionReport assess_norms(const std::vector<double>& norms, double threshold, double mad_scale) {
  DetectionReport rep;
  rep.norms = norms;
  rep.threshold = threshold;
  try {
    rep.indices = anomaly_indices(norms, mad_scale);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Numeric) throw;
    rep.degenerate = true;
    return rep;
  }
  const auto it = std::min_element(rep.indices.begin(), rep.indices.end());
  rep.min_index = *it;
  rep.min_class = static_cast<int>(it - rep.indices.begin());
  rep.trojan = rep.min_index < threshold;
  return rep;
}

DetectionReport detect(const NetworkSpec& spec, const ParameterSet& params, const Dataset& samples,
                       const DetectConfig& cfg, std::vector<ReversedTrigger>* triggers) {
  if (cfg.workers < 1) fail(ErrorKind::Parameter, "worker count must be at least 1");
  const int classes = spec.num_classes;
  std::vector<ReversedTrigger> found(static_cast<std::size_t>(classes));
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;

  auto work = [&] {
    for (int c; (c = next.fetch_add(1)) < classes;) {
      try {
        ReverseConfig rc{cfg.reg_weight, cfg.steps, cfg.learning_rate, derive_seed(cfg.seed, 100 + c)};
        found[static_cast<std::size_t>(c)] = reverse_trigger(spec, params, samples, c, rc);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int n_threads = std::min(cfg.workers, classes);
  if (n_threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(work);
  }
  if (error) std::rethrow_exception(error);

  std::vector<double> norms;
  for (const auto& t : found) norms.push_back(t.l1_norm);
  DetectionReport rep = assess_norms(norms, cfg.threshold, cfg.mad_scale);
  for (const auto& t : found) rep.attack_success.push_back(t.attack_success);
  if (triggers) *triggers = std::move(found);
  return rep;
}

double population_rates(const std::vector<DetectionReport>& reports, TrueKind truth) {
  if (reports.empty()) fail(ErrorKind::Parameter, "population is empty");
  std::size_t errors = 0;
  for (const auto& r : reports) {
    if (truth.kind == ModelKind::Clean) {
      errors += r.trojan ? 1 : 0;
    } else {
      errors += (!r.trojan || r.min_class != truth.target_class) ? 1 : 0;
    }
  }
  return static_cast<double>(errors) / static_cast<double>(reports.size());
}

}  // namespace dormant
