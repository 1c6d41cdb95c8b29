#pragma once

#include <string>

#include <json.hpp>

#include "detect.hpp"
#include "prune.hpp"
#include "train.hpp"

namespace dormant {

nlohmann::json to_json(const Accuracy& acc);
nlohmann::json to_json(const TrainReport& report);
nlohmann::json to_json(const DetectionReport& report);
nlohmann::json to_json(const ReversedTrigger& trigger);

DetectionReport detection_report_from_json(const nlohmann::json& j);

// epoch,L1,T1,T2,T3,L3,total,acc_c,acc_t,awakened_acc_c,awakened_acc_t; metric
// cells are empty when that metric was not recorded.
std::string losses_csv(const TrainReport& report);

}  // namespace dormant
