#include "eraser/distill.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "eraser/error.hpp"

namespace eraser {

namespace {
using json = nlohmann::json;
}

ContrastIndex build_contrast_index(const Dataset& calibration, const OracleHandle& oracle,
                                   const std::string& bias_attr) {
    if (calibration.size() == 0) throw ValidationError("calibration set is empty");

    ContrastIndex index;
    index.bias_attr = bias_attr;
    index.k = oracle.k();
    index.oracle_id = oracle.describe();

    const int attr = calibration.schema.bias_attr_index(bias_attr);
    if (attr < 0) throw ValidationError("unknown bias attribute: " + bias_attr);
    index.cardinality = calibration.schema.bias_attrs[static_cast<std::size_t>(attr)].cardinality;

    if (calibration.schema.num_classes != index.k) {
        throw ValidationError("calibration set has " +
                              std::to_string(calibration.schema.num_classes) +
                              " classes but the oracle exposes " + std::to_string(index.k));
    }

    index.cells = group_index(calibration, bias_attr);
    std::string missing;
    for (const auto& [cell, members] : index.cells) {
        if (members.empty()) {
            if (!missing.empty()) missing += ", ";
            missing += "(target=" + std::to_string(cell.first) +
                       ", bias=" + std::to_string(cell.second) + ")";
        }
    }
    if (!missing.empty()) {
        throw ValidationError("empty contrast cells for attribute '" + bias_attr +
                              "': " + missing);
    }

    // one oracle query per calibration example, batched
    const std::vector<ProbVector> outputs = oracle.query_batch(calibration.feature_matrix());
    index.example_log.reserve(outputs.size());
    for (const ProbVector& p : outputs) index.example_log.push_back(p.log_values());

    for (const auto& [cell, members] : index.cells) {
        std::vector<double> mean(static_cast<std::size_t>(index.k), 0.0);
        for (std::size_t i : members) {
            for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += index.example_log[i][j];
        }
        for (double& v : mean) v /= static_cast<double>(members.size());
        index.mean_log[cell] = std::move(mean);
    }

    // Multi-bias: precompute contrast means restricted to members whose other
    // attributes all differ from the querying example's, blocking those
    // attributes as confounders of this attribute's rule. Combinations whose
    // restricted pool is empty (double-minority cells can be unpopulated at
    // strong skew) fall back to the plain cell mean at distillation time.
    if (calibration.schema.bias_attrs.size() > 1) {
        const std::size_t attr_idx = static_cast<std::size_t>(attr);
        for (std::size_t x = 0; x < calibration.size(); ++x) {
            const std::vector<int>& bias = calibration.examples[x].bias;
            for (int cls = 0; cls < index.k; ++cls) {
                if (cls == calibration.examples[x].target) continue;
                const auto key = std::make_pair(cls, bias);
                if (index.restricted_mean_log.count(key)) continue;
                std::vector<double> mean(static_cast<std::size_t>(index.k), 0.0);
                std::size_t count = 0;
                for (std::size_t i : index.cells.at({cls, bias[attr_idx]})) {
                    const std::vector<int>& other = calibration.examples[i].bias;
                    bool usable = true;
                    for (std::size_t a = 0; a < other.size(); ++a) {
                        if (a != attr_idx && other[a] == bias[a]) {
                            usable = false;
                            break;
                        }
                    }
                    if (!usable) continue;
                    for (std::size_t j = 0; j < mean.size(); ++j) {
                        mean[j] += index.example_log[i][j];
                    }
                    ++count;
                }
                if (count == 0) continue;
                for (double& v : mean) v /= static_cast<double>(count);
                index.restricted_mean_log[key] = std::move(mean);
            }
        }
    }
    return index;
}

DistilledTargets distill_targets(const Dataset& calibration, const ContrastIndex& index,
                                 const OracleHandle& oracle) {
    if (index.example_log.size() != calibration.size()) {
        throw ValidationError("contrast index was built for a different calibration set");
    }
    const int attr = calibration.schema.bias_attr_index(index.bias_attr);
    if (attr < 0) throw ValidationError("unknown bias attribute: " + index.bias_attr);

    DistilledTargets out;
    out.bias_attr = index.bias_attr;
    out.oracle_id = index.oracle_id.empty() ? oracle.describe() : index.oracle_id;
    out.targets.reserve(calibration.size());

    const bool multi_bias = calibration.schema.bias_attrs.size() > 1;
    const double inv_k = 1.0 / static_cast<double>(index.k);
    for (std::size_t i = 0; i < calibration.size(); ++i) {
        const Example& ex = calibration.examples[i];
        const int b = ex.bias[static_cast<std::size_t>(attr)];
        std::vector<double> z = index.example_log[i];
        for (int cls = 0; cls < index.k; ++cls) {
            if (cls == ex.target) continue;  // contrast cells span the other classes
            const std::vector<double>* mean = nullptr;
            if (multi_bias) {
                const auto it = index.restricted_mean_log.find({cls, ex.bias});
                if (it != index.restricted_mean_log.end()) mean = &it->second;
            }
            if (mean == nullptr) {  // single attribute, or starved restricted pool
                const auto it = index.mean_log.find({cls, b});
                if (it != index.mean_log.end()) mean = &it->second;
            }
            if (mean == nullptr) {
                throw ValidationError("contrast index missing cell (target=" +
                                      std::to_string(cls) + ", bias=" + std::to_string(b) + ")");
            }
            for (std::size_t j = 0; j < z.size(); ++j) z[j] += (*mean)[j];
        }
        for (double& v : z) v *= inv_k;  // scales the entire bracketed sum
        out.targets.push_back(softmax(z));
    }
    return out;
}

PatchArch default_patch_arch(const MlpModel& deployed) {
    PatchArch arch;
    if (deployed.layer_dims.size() > 2) {
        const std::size_t half = std::max<std::size_t>(2, deployed.layer_dims[1] / 2);
        arch.hidden_dims = {half};
        arch.activation =
            deployed.activations.empty() ? Activation::Relu : deployed.activations.front();
    }
    return arch;
}

MlpModel train_patch(const Dataset& calibration, const DistilledTargets& targets,
                     const TrainConfig& config, const PatchArch& arch) {
    if (targets.targets.size() != calibration.size()) {
        throw ValidationError("distilled targets not aligned with the calibration set");
    }
    if (calibration.size() == 0) throw ValidationError("calibration set is empty");
    const std::size_t k = targets.targets.front().size();

    std::vector<std::size_t> dims;
    dims.push_back(static_cast<std::size_t>(calibration.schema.feature_dim));
    for (std::size_t h : arch.hidden_dims) dims.push_back(h);
    dims.push_back(k);
    std::vector<Activation> acts(arch.hidden_dims.size(), arch.activation);

    MlpModel patch = make_mlp(std::move(dims), std::move(acts), OutputMode::Softmax, config.seed);
    patch.meta.role = "patch";
    patch.meta.bias_attr = targets.bias_attr;
    patch.meta.trained_on = targets.oracle_id;

    TrainConfig cfg = config;
    cfg.loss = Loss::SoftTargetKl;
    return train(std::move(patch), calibration.feature_matrix(),
                 TrainTargets::soft_targets(targets.targets), cfg);
}

std::string targets_to_json(const DistilledTargets& targets) {
    json doc;
    doc["bias_attr"] = targets.bias_attr;
    doc["oracle_id"] = targets.oracle_id;
    doc["seed"] = targets.seed;
    json rows = json::array();
    for (const ProbVector& p : targets.targets) rows.push_back(p.values());
    doc["targets"] = std::move(rows);
    return doc.dump();
}

DistilledTargets targets_from_json(const std::string& bytes) {
    DistilledTargets out;
    try {
        const json doc = json::parse(bytes);
        out.bias_attr = doc.at("bias_attr").get<std::string>();
        out.oracle_id = doc.value("oracle_id", std::string{});
        out.seed = doc.value("seed", std::uint64_t{0});
        for (const json& row : doc.at("targets")) {
            out.targets.push_back(ProbVector(row.get<std::vector<double>>()));
        }
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed distilled-targets document: ") + e.what());
    }
    return out;
}

}  // namespace eraser
