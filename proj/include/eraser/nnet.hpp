#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "eraser/prob.hpp"

namespace eraser {

/// Dense row-major matrix (rows = output units, cols = input units).
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

enum class Activation { Relu, Tanh };
enum class OutputMode { Softmax, Sigmoid };

std::string to_string(Activation a);
std::string to_string(OutputMode m);
Activation activation_from_string(const std::string& s);
OutputMode output_mode_from_string(const std::string& s);

/// Second classification head over the last hidden layer, used by the
/// multi-task training mode. Not part of the persisted deployment surface
/// unless present at save time.
struct AuxHead {
    Matrix weights;
    std::vector<double> biases;
};

struct ModelMeta {
    std::uint64_t seed = 0;
    std::string trained_on;  // free-form provenance (dataset digest etc.)
    std::string role;        // "deployed" | "patch"
    std::string bias_attr;   // patches only: the attribute this patch captures
};

/// Small feed-forward network. Serves as the desk-scale deployed model, the
/// multi-task baseline, and the patch model.
struct MlpModel {
    std::vector<std::size_t> layer_dims;   // input, hidden..., output
    std::vector<Activation> activations;   // one per hidden layer
    OutputMode output_mode = OutputMode::Softmax;
    std::vector<Matrix> weights;           // per layer, out x in
    std::vector<std::vector<double>> biases;
    std::optional<AuxHead> aux_head;
    ModelMeta meta;

    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t output_dim() const { return layer_dims.back(); }
    std::size_t num_layers() const { return weights.size(); }
};

/// Glorot-uniform initialized model; biases zero; deterministic in `seed`.
MlpModel make_mlp(std::vector<std::size_t> layer_dims, std::vector<Activation> activations,
                  OutputMode output_mode, std::uint64_t seed);

/// Attach a randomly initialized auxiliary head of `aux_classes` outputs.
void add_aux_head(MlpModel& model, std::size_t aux_classes, std::uint64_t seed);

/// Final-layer pre-activations for one input.
std::vector<double> forward_logits(const MlpModel& model, std::span<const double> x);

/// Probabilistic output: softmax of the final logits, or per-class sigmoids
/// normalized to a distribution, depending on output_mode.
ProbVector forward_probs(const MlpModel& model, std::span<const double> x);

enum class Loss { HardLabelCe, SoftTargetKl, MultitaskCe };
enum class OptimizerKind { Sgd, Adam };

/// Direction of the distillation divergence. TargetToModel is cross-entropy
/// H(target, output) (forward KL up to a constant); ModelToTarget is
/// KL(output || target).
enum class KlDirection { TargetToModel, ModelToTarget };

std::string to_string(Loss l);
Loss loss_from_string(const std::string& s);

struct TrainConfig {
    Loss loss = Loss::HardLabelCe;
    double learning_rate = 1e-3;
    std::size_t epochs = 200;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double l2 = 0.0;
    KlDirection kl_direction = KlDirection::TargetToModel;
};

/// Per-example training targets; exactly one member is populated, matching
/// the configured loss.
struct TrainTargets {
    std::vector<int> hard;                          // HardLabelCe
    std::vector<ProbVector> soft;                   // SoftTargetKl
    std::vector<std::pair<int, int>> multitask;     // MultitaskCe: (target, bias)

    static TrainTargets hard_labels(std::vector<int> labels);
    static TrainTargets soft_targets(std::vector<ProbVector> targets);
    static TrainTargets multitask_labels(std::vector<std::pair<int, int>> pairs);
    std::size_t size() const;
};

using FeatureMatrix = std::vector<std::vector<double>>;

/// Mini-batch training. Deterministic in (model, features, targets, config):
/// identical inputs give bit-identical parameters. Throws NumericError naming
/// the epoch if the loss goes non-finite.
MlpModel train(MlpModel model, const FeatureMatrix& features, const TrainTargets& targets,
               const TrainConfig& config);

/// Mean loss of `model` on the given set (no regularization term).
double dataset_loss(const MlpModel& model, const FeatureMatrix& features,
                    const TrainTargets& targets, Loss loss,
                    KlDirection kl_direction = KlDirection::TargetToModel);

struct GradCheckBlock {
    std::string name;
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckBlock> blocks;  // one per parameter block
    double threshold = 1e-4;
    bool pass = false;
    double max_rel_error() const;
};

/// Backprop vs central finite differences (step 1e-5) on the mean batch loss.
GradCheckReport grad_check(const MlpModel& model, const FeatureMatrix& features,
                           const TrainTargets& targets, Loss loss,
                           KlDirection kl_direction = KlDirection::TargetToModel);

/// Versioned JSON document; save/load round trip is value-exact and
/// save -> load -> save is byte-identical.
std::string save_model(const MlpModel& model);
MlpModel load_model(const std::string& bytes);
void save_model_file(const MlpModel& model, const std::string& path);
MlpModel load_model_file(const std::string& path);

}  // namespace eraser
