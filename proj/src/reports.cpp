#include "reports.hpp"

#include <cstdio>

#include "errors.hpp"

namespace dormant {

nlohmann::json to_json(const Accuracy& acc) {
  return {{"acc_c", acc.acc_c}, {"acc_t", acc.acc_t}, {"n_clean", acc.n_clean}, {"n_triggered", acc.n_triggered}};
}

nlohmann::json to_json(const TrainReport& report) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : report.epochs) {
    nlohmann::json row{{"epoch", e.epoch}, {"l1", e.l1}, {"t1", e.t1}, {"t2", e.t2},
                       {"t3", e.t3},       {"l3", e.l3}, {"total", e.total}};
    if (e.dormant) row["dormant"] = to_json(*e.dormant);
    if (e.awakened) row["awakened"] = to_json(*e.awakened);
    epochs.push_back(row);
  }
  nlohmann::json j{{"mode", report.mode},
                   {"seed", report.seed},
                   {"epochs", epochs},
                   {"wall_seconds", report.wall_seconds},
                   {"warnings", report.warnings}};
  j["dormant"] = report.dormant ? to_json(*report.dormant) : nlohmann::json(nullptr);
  j["awakened"] = report.awakened ? to_json(*report.awakened) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const DetectionReport& report) {
  nlohmann::json j{{"norms", report.norms},
                   {"indices", report.indices},
                   {"attack_success", report.attack_success},
                   {"threshold", report.threshold},
                   {"degenerate", report.degenerate},
                   {"verdict", report.trojan ? "trojan" : "clean"}};
  if (report.degenerate) {
    j["min_index"] = nullptr;
    j["min_class"] = nullptr;
  } else {
    j["min_index"] = report.min_index;
    j["min_class"] = report.min_class;
  }
  j["verdict_class"] = report.trojan ? nlohmann::json(report.min_class) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const ReversedTrigger& trigger) {
  return {{"target_class", trigger.target_class},
          {"l1_norm", trigger.l1_norm},
          {"attack_success", trigger.attack_success},
          {"objective", trigger.objective},
          {"mask_shape", trigger.mask.shape},
          {"pattern_shape", trigger.pattern.shape}};
}

DetectionReport detection_report_from_json(const nlohmann::json& j) {
  DetectionReport r;
  try {
    r.norms = j.at("norms").get<std::vector<double>>();
    r.indices = j.at("indices").get<std::vector<double>>();
    r.attack_success = j.value("attack_success", std::vector<double>{});
    r.threshold = j.at("threshold").get<double>();
    r.degenerate = j.value("degenerate", false);
    r.trojan = j.at("verdict").get<std::string>() == "trojan";
    if (!r.degenerate) {
      r.min_index = j.at("min_index").get<double>();
      r.min_class = j.at("min_class").get<int>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("malformed detection report: ") + e.what());
  }
  return r;
}

std::string losses_csv(const TrainReport& report) {
  std::string out = "epoch,L1,T1,T2,T3,L3,total,acc_c,acc_t,awakened_acc_c,awakened_acc_t\n";
  char line[256];
  auto metric = [&](const std::optional<Accuracy>& a, bool trig) {
    if (!a) return std::string(",");
    std::snprintf(line, sizeof line, ",%.9g", trig ? a->acc_t : a->acc_c);
    return std::string(line);
  };
  for (const auto& e : report.epochs) {
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", e.epoch, e.l1, e.t1, e.t2, e.t3, e.l3,
                  e.total);
    std::string row = line;
    row += metric(e.dormant, false) + metric(e.dormant, true) + metric(e.awakened, false) + metric(e.awakened, true);
    out += row + "\n";
  }
  return out;
}

}  // namespace dormant
