#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace eraser {

struct BiasAttr {
    std::string name;
    int cardinality = 2;
};

struct TaskSchema {
    int num_classes = 2;
    std::vector<BiasAttr> bias_attrs;
    int feature_dim = 0;

    int bias_attr_index(const std::string& name) const;  // -1 when absent
};

struct Example {
    std::vector<double> features;
    int target = 0;
    std::vector<int> bias;  // one label per bias attribute
};

/// Ordered example collection; order is part of identity (splits are
/// index-based).
struct Dataset {
    TaskSchema schema;
    std::vector<Example> examples;
    std::map<std::string, std::string> provenance;

    std::size_t size() const { return examples.size(); }
    std::vector<std::vector<double>> feature_matrix() const;
};

enum class SyntheticVariant { BinaryBias, Multiclass, TwoBias };

std::string to_string(SyntheticVariant v);
SyntheticVariant variant_from_string(const std::string& s);

/// Controllable target-bias correlation: each bias label agrees with the
/// value correlated to the target with probability 1/(1+alpha), so smaller
/// alpha means a stronger spurious correlation.
struct SyntheticSpec {
    SyntheticVariant variant = SyntheticVariant::BinaryBias;
    std::size_t n = 0;
    double alpha = 1.0;  // minority / majority group-size ratio, in (0, 1]
    int feature_dim = 8;
    double signal_target = 1.0;
    double signal_bias = 1.0;
    double noise_std = 0.5;
    std::uint64_t seed = 0;
    int num_classes = 2;  // multiclass variant only; others are fixed at 2

    /// Prototype geometry always derives from `seed`; sampling (labels and
    /// noise) uses `sample_seed` when set. Distinct sample seeds draw
    /// disjoint datasets from the same world, e.g. a held-out evaluation set
    /// for a training set's task.
    std::optional<std::uint64_t> sample_seed;
};

/// Draw a biased synthetic dataset. Features are
///   signal_target * prototype(target) + signal_bias * prototype(bias) + noise
/// with prototypes a seed-derived orthonormal family, so the target and bias
/// signals occupy linearly separable channels.
Dataset generate(const SyntheticSpec& spec);

/// Evaluation-set counterpart: exactly n / (#target x #joint-bias cells)
/// examples per cell, alpha ignored. Same feature model as generate().
Dataset generate_balanced(const SyntheticSpec& spec);

/// Disjoint index partition via seeded shuffle; returns (deploy_train,
/// calibration) of sizes floor(n*(1-fraction)) and the remainder.
std::pair<Dataset, Dataset> split_calibration(const Dataset& data, double fraction,
                                              std::uint64_t seed);

/// Exhaustive (target, bias value) -> indices partition for one attribute;
/// empty cells are present with empty lists.
std::map<std::pair<int, int>, std::vector<std::size_t>> group_index(const Dataset& data,
                                                                    const std::string& bias_attr);

struct CsvHints {
    std::optional<int> num_classes;
    std::map<std::string, int> bias_cardinality;  // per attribute name
};

/// CSV with a mandatory header: feature columns (any name), one "target"
/// column, bias columns named "bias:<name>". Label cardinalities are inferred
/// as max+1 unless overridden by hints.
Dataset load_csv(const std::string& path, const CsvHints& hints = {});

/// Feature values are written with enough digits for exact round trips.
void save_csv(const Dataset& data, const std::string& path);

/// Sidecar metadata document for generated datasets.
std::string dataset_meta_json(const Dataset& data);

}  // namespace eraser
