#include "eraser/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "eraser/error.hpp"

namespace eraser {

namespace {

using json = nlohmann::ordered_json;

std::string group_name(int target, const TaskSchema& schema, const std::vector<int>& bias) {
    std::string s = "(target=" + std::to_string(target);
    for (std::size_t a = 0; a < bias.size(); ++a) {
        s += ", " + schema.bias_attrs[a].name + "=" + std::to_string(bias[a]);
    }
    return s + ")";
}

}  // namespace

PredictionSet make_predictions(const Dataset& data, const std::vector<ProbVector>& probs) {
    if (probs.size() != data.size()) {
        throw ShapeError("got " + std::to_string(probs.size()) + " prediction vectors for " +
                         std::to_string(data.size()) + " examples");
    }
    PredictionSet out;
    out.schema = data.schema;
    out.rows.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        out.rows.push_back({static_cast<int>(probs[i].argmax()), data.examples[i].target,
                            data.examples[i].bias});
    }
    return out;
}

MetricsReport evaluate(const PredictionSet& preds, const TaskSchema& schema) {
    if (preds.rows.empty()) throw ValidationError("empty prediction set");
    const std::size_t num_attrs = schema.bias_attrs.size();
    for (const LabeledPrediction& r : preds.rows) {
        if (r.bias.size() != num_attrs) throw ShapeError("prediction row bias arity mismatch");
    }

    // joint (target x bias...) cells, enumerated exhaustively
    std::map<std::vector<int>, std::pair<std::size_t, std::size_t>> cells;  // key -> (count, correct)
    std::vector<int> key(1 + num_attrs, 0);
    auto enumerate = [&](auto&& self, std::size_t depth) -> void {
        if (depth == num_attrs) {
            cells[key] = {0, 0};
            return;
        }
        for (int b = 0; b < schema.bias_attrs[depth].cardinality; ++b) {
            key[1 + depth] = b;
            self(self, depth + 1);
        }
    };
    for (int y = 0; y < schema.num_classes; ++y) {
        key[0] = y;
        enumerate(enumerate, 0);
    }

    for (const LabeledPrediction& r : preds.rows) {
        std::vector<int> k(1 + num_attrs);
        k[0] = r.target;
        for (std::size_t a = 0; a < num_attrs; ++a) k[1 + a] = r.bias[a];
        auto it = cells.find(k);
        if (it == cells.end()) throw ValidationError("label outside schema in prediction set");
        ++it->second.first;
        if (r.predicted == r.target) ++it->second.second;
    }

    MetricsReport rep;
    double acc_sum = 0.0;
    double worst = 101.0;
    for (const auto& [k, cc] : cells) {
        if (cc.first == 0) {
            std::vector<int> bias(k.begin() + 1, k.end());
            throw ValidationError("empty evaluation group " + group_name(k[0], schema, bias));
        }
        GroupStat g;
        g.target = k[0];
        g.bias.assign(k.begin() + 1, k.end());
        g.count = cc.first;
        g.correct = cc.second;
        g.accuracy_pct =
            100.0 * static_cast<double>(cc.second) / static_cast<double>(cc.first);
        acc_sum += g.accuracy_pct;
        worst = std::min(worst, g.accuracy_pct);
        rep.groups.push_back(std::move(g));
    }
    rep.average_group_acc_pct = acc_sum / static_cast<double>(rep.groups.size());
    rep.worst_group_acc_pct = worst;

    // Equalodds per attribute over marginal (target, value) accuracies
    double bias_sum = 0.0;
    for (std::size_t a = 0; a < num_attrs; ++a) {
        const int card = schema.bias_attrs[a].cardinality;
        // (target, value) -> (count, correct)
        std::vector<std::vector<std::pair<std::size_t, std::size_t>>> marg(
            static_cast<std::size_t>(schema.num_classes),
            std::vector<std::pair<std::size_t, std::size_t>>(static_cast<std::size_t>(card),
                                                             {0, 0}));
        for (const LabeledPrediction& r : preds.rows) {
            auto& mc = marg[static_cast<std::size_t>(r.target)]
                           [static_cast<std::size_t>(r.bias[a])];
            ++mc.first;
            if (r.predicted == r.target) ++mc.second;
        }
        double acc_gap_sum = 0.0;
        for (int y = 0; y < schema.num_classes; ++y) {
            std::vector<double> accs(static_cast<std::size_t>(card));
            for (int b = 0; b < card; ++b) {
                const auto& mc = marg[static_cast<std::size_t>(y)][static_cast<std::size_t>(b)];
                if (mc.first == 0) {
                    throw ValidationError("empty evaluation group (target=" + std::to_string(y) +
                                          ", " + schema.bias_attrs[a].name + "=" +
                                          std::to_string(b) + ")");
                }
                accs[static_cast<std::size_t>(b)] =
                    static_cast<double>(mc.second) / static_cast<double>(mc.first);
            }
            // mean absolute gap over unordered value pairs (the binary case
            // reduces to |acc0 - acc1|)
            double pair_sum = 0.0;
            std::size_t pairs = 0;
            for (int u = 0; u < card; ++u) {
                for (int v = u + 1; v < card; ++v) {
                    pair_sum += std::fabs(accs[static_cast<std::size_t>(u)] -
                                          accs[static_cast<std::size_t>(v)]);
                    ++pairs;
                }
            }
            acc_gap_sum += pair_sum / static_cast<double>(pairs);
        }
        const double eo = 100.0 * acc_gap_sum / static_cast<double>(schema.num_classes);
        rep.equalodds_pct[schema.bias_attrs[a].name] = eo;
        bias_sum += eo;
    }
    rep.avg_bias_pct = num_attrs == 0 ? 0.0 : bias_sum / static_cast<double>(num_attrs);
    return rep;
}

DeltaReport compare(const MetricsReport& before, const MetricsReport& after) {
    if (before.equalodds_pct.size() != after.equalodds_pct.size() ||
        before.groups.size() != after.groups.size()) {
        throw ValidationError("reports have different schemas");
    }
    DeltaReport d;
    d.average_acc_delta = after.average_group_acc_pct - before.average_group_acc_pct;
    d.worst_acc_delta = after.worst_group_acc_pct - before.worst_group_acc_pct;
    d.average_acc_relative_delta = before.average_group_acc_pct == 0.0
                                       ? 0.0
                                       : d.average_acc_delta / before.average_group_acc_pct;
    d.worst_acc_relative_delta =
        before.worst_group_acc_pct == 0.0 ? 0.0 : d.worst_acc_delta / before.worst_group_acc_pct;
    for (const auto& [name, eo_before] : before.equalodds_pct) {
        auto it = after.equalodds_pct.find(name);
        if (it == after.equalodds_pct.end()) {
            throw ValidationError("reports disagree on bias attribute " + name);
        }
        d.equalodds_delta[name] = it->second - eo_before;
        d.relative_bias_reduction[name] =
            eo_before == 0.0 ? 0.0 : (eo_before - it->second) / eo_before;
    }
    d.avg_bias_delta = after.avg_bias_pct - before.avg_bias_pct;
    d.avg_relative_bias_reduction =
        before.avg_bias_pct == 0.0 ? 0.0
                                   : (before.avg_bias_pct - after.avg_bias_pct) / before.avg_bias_pct;
    d.regression = after.avg_bias_pct > before.avg_bias_pct;
    return d;
}

std::string report_to_json(const MetricsReport& report) {
    json doc;
    doc["average_group_acc"] = report.average_group_acc_pct;
    doc["worst_group_acc"] = report.worst_group_acc_pct;
    json eo;
    for (const auto& [name, v] : report.equalodds_pct) eo[name] = v;
    doc["equalodds"] = std::move(eo);
    doc["avg_bias"] = report.avg_bias_pct;
    json groups = json::array();
    for (const GroupStat& g : report.groups) {
        groups.push_back({{"target", g.target},
                          {"bias", g.bias},
                          {"count", g.count},
                          {"correct", g.correct},
                          {"accuracy", g.accuracy_pct}});
    }
    doc["groups"] = std::move(groups);
    json meta;
    for (const auto& [k, v] : report.metadata) meta[k] = v;
    doc["metadata"] = std::move(meta);
    return doc.dump(2);
}

MetricsReport report_from_json(const std::string& bytes) {
    MetricsReport rep;
    try {
        const json doc = json::parse(bytes);
        rep.average_group_acc_pct = doc.at("average_group_acc").get<double>();
        rep.worst_group_acc_pct = doc.at("worst_group_acc").get<double>();
        for (const auto& [name, v] : doc.at("equalodds").items()) {
            rep.equalodds_pct[name] = v.get<double>();
        }
        rep.avg_bias_pct = doc.at("avg_bias").get<double>();
        for (const json& g : doc.at("groups")) {
            GroupStat s;
            s.target = g.at("target").get<int>();
            s.bias = g.at("bias").get<std::vector<int>>();
            s.count = g.at("count").get<std::size_t>();
            s.correct = g.at("correct").get<std::size_t>();
            s.accuracy_pct = g.at("accuracy").get<double>();
            rep.groups.push_back(std::move(s));
        }
        if (doc.contains("metadata")) {
            for (const auto& [k, v] : doc["metadata"].items()) {
                rep.metadata[k] = v.get<std::string>();
            }
        }
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed metrics report: ") + e.what());
    }
    return rep;
}

std::string delta_to_json(const DeltaReport& d) {
    json doc;
    doc["average_acc_delta"] = d.average_acc_delta;
    doc["worst_acc_delta"] = d.worst_acc_delta;
    doc["average_acc_relative_delta"] = d.average_acc_relative_delta;
    doc["worst_acc_relative_delta"] = d.worst_acc_relative_delta;
    json eo;
    for (const auto& [name, v] : d.equalodds_delta) eo[name] = v;
    doc["equalodds_delta"] = std::move(eo);
    doc["avg_bias_delta"] = d.avg_bias_delta;
    json rel;
    for (const auto& [name, v] : d.relative_bias_reduction) rel[name] = v;
    doc["relative_bias_reduction"] = std::move(rel);
    doc["avg_relative_bias_reduction"] = d.avg_relative_bias_reduction;
    doc["regression"] = d.regression;
    return doc.dump(2);
}

std::string report_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
    std::ostringstream out;
    char buf[64];
    std::size_t label_w = 12;
    for (const auto& [label, _] : rows) label_w = std::max(label_w, label.size() + 2);
    std::snprintf(buf, sizeof(buf), "%-*s %12s %12s %12s", static_cast<int>(label_w), "",
                  "Average ACC", "Worst ACC", "Model Bias");
    out << buf << '\n';
    for (const auto& [label, rep] : rows) {
        std::snprintf(buf, sizeof(buf), "%-*s %12.2f %12.2f %12.2f", static_cast<int>(label_w),
                      label.c_str(), rep.average_group_acc_pct, rep.worst_group_acc_pct,
                      rep.avg_bias_pct);
        out << buf << '\n';
    }
    return out.str();
}

}  // namespace eraser
