#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "eraser/dataset.hpp"
#include "eraser/nnet.hpp"
#include "eraser/oracle.hpp"
#include "eraser/prob.hpp"

namespace eraser {

/// Per-attribute contrast structure over a calibration set: for every
/// (target class, bias value) cell, the calibration indices it holds and the
/// mean of log-probabilities the oracle assigns to its members. Cached
/// per-example log outputs make target computation a pure function of the
/// index.
struct ContrastIndex {
    std::string bias_attr;
    int k = 0;
    int cardinality = 0;
    std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
    std::map<std::pair<int, int>, std::vector<double>> mean_log;   // length-k per cell
    std::vector<std::vector<double>> example_log;                  // log M(x) per example
    std::string oracle_id;

    /// Multi-bias datasets only: per (contrast class, full bias vector of x),
    /// the mean log-output over cell members whose OTHER attributes all
    /// differ from x's. Restricting the contrast pool this way blocks the
    /// remaining attributes as confounders, so each patch stays specific to
    /// its own attribute; with a single attribute, mean_log is used directly.
    std::map<std::pair<int, std::vector<int>>, std::vector<double>> restricted_mean_log;
};

/// Soft targets p(y|x^b) for one bias attribute, aligned 1:1 with the
/// calibration examples.
struct DistilledTargets {
    std::string bias_attr;
    std::vector<ProbVector> targets;
    std::string oracle_id;
    std::uint64_t seed = 0;
};

/// Queries the oracle once per calibration example and validates that every
/// (target, bias value) cell is populated; throws ValidationError listing all
/// missing cells otherwise.
ContrastIndex build_contrast_index(const Dataset& calibration, const OracleHandle& oracle,
                                   const std::string& bias_attr);

/// Output-only rule distillation: for each calibration example x,
///   p(y|x^b) = softmax( (1/k) * [ log M(x) + sum_{i != y_x} meanlog(S_{i, b_x}) ] )
/// where the mean is the arithmetic mean of log-probabilities over the cell.
/// The 1/k factor scales the entire bracketed sum.
DistilledTargets distill_targets(const Dataset& calibration, const ContrastIndex& index,
                                 const OracleHandle& oracle);

struct PatchArch {
    std::vector<std::size_t> hidden_dims;  // empty = linear patch
    Activation activation = Activation::Relu;
};

/// One hidden layer at half the deployed model's first hidden width; a
/// linear patch when the deployed model has no hidden layers.
PatchArch default_patch_arch(const MlpModel& deployed);

/// Trains the patch model G on the distilled soft targets (soft_target_kl
/// loss); the patch output dimension always matches the oracle's k.
MlpModel train_patch(const Dataset& calibration, const DistilledTargets& targets,
                     const TrainConfig& config, const PatchArch& arch);

/// Audit sidecar: {bias_attr, oracle_id, targets, seed}.
std::string targets_to_json(const DistilledTargets& targets);
DistilledTargets targets_from_json(const std::string& bytes);

}  // namespace eraser
