#pragma once

#include <map>
#include <string>
#include <vector>

#include "eraser/dataset.hpp"
#include "eraser/prob.hpp"

namespace eraser {

struct LabeledPrediction {
    int predicted = 0;
    int target = 0;
    std::vector<int> bias;
};

struct PredictionSet {
    TaskSchema schema;
    std::vector<LabeledPrediction> rows;
};

/// Argmax predictions (ties toward the lowest class) aligned with `data`.
PredictionSet make_predictions(const Dataset& data, const std::vector<ProbVector>& probs);

struct GroupStat {
    int target = 0;
    std::vector<int> bias;  // joint bias combination
    std::size_t count = 0;
    std::size_t correct = 0;
    double accuracy_pct = 0.0;
};

struct MetricsReport {
    std::vector<GroupStat> groups;                // target x joint-bias cells
    double average_group_acc_pct = 0.0;           // unweighted mean of group accuracies
    double worst_group_acc_pct = 0.0;
    std::map<std::string, double> equalodds_pct;  // per bias attribute
    double avg_bias_pct = 0.0;                    // mean of per-attribute Equalodds
    std::map<std::string, std::string> metadata;
};

/// Group accuracies plus Equalodds per bias attribute (mean over target
/// classes of the accuracy gap between bias values; cardinality > 2 averages
/// over all unordered value pairs). Every group cell must be populated.
MetricsReport evaluate(const PredictionSet& preds, const TaskSchema& schema);

struct DeltaReport {
    double average_acc_delta = 0.0;  // after - before, percentage points
    double worst_acc_delta = 0.0;
    double average_acc_relative_delta = 0.0;  // (after - before)/before
    double worst_acc_relative_delta = 0.0;
    std::map<std::string, double> equalodds_delta;
    double avg_bias_delta = 0.0;
    std::map<std::string, double> relative_bias_reduction;  // (before-after)/before
    double avg_relative_bias_reduction = 0.0;
    bool regression = false;  // bias got worse
};

DeltaReport compare(const MetricsReport& before, const MetricsReport& after);

std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& bytes);
std::string delta_to_json(const DeltaReport& delta);

/// Aligned plain-text table: Average ACC / Worst ACC / Model Bias columns.
std::string report_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace eraser
