#pragma once

#include <cstddef>
#include <vector>

namespace eraser {

/// Length-k vector of finite logits (unnormalized log-odds).
class LogitVector {
public:
    /// Requires k >= 2 and every entry finite.
    explicit LogitVector(std::vector<double> logits);

    std::size_t size() const { return z_.size(); }
    double operator[](std::size_t i) const { return z_[i]; }
    const std::vector<double>& values() const { return z_; }

private:
    std::vector<double> z_;
};

/// Length-k categorical distribution.
///
/// Entries are floored at `floor` and renormalized on construction, so every
/// stored probability is strictly positive and the vector sums to 1. This is
/// what makes log-space algebra safe even when an upstream oracle emits exact
/// zeros.
class ProbVector {
public:
    static constexpr double kDefaultFloor = 1e-12;

    /// Requires k >= 2, entries finite and nonnegative, positive sum.
    explicit ProbVector(std::vector<double> probs, double floor = kDefaultFloor);

    static ProbVector uniform(std::size_t k);

    /// Ingest independent per-class sigmoid scores: normalized by their sum.
    /// A single binary score s (with k == 2) is expanded to [1-s, s] first.
    static ProbVector from_sigmoid_scores(std::vector<double> scores, std::size_t k);

    std::size_t size() const { return p_.size(); }
    double operator[](std::size_t i) const { return p_[i]; }
    const std::vector<double>& values() const { return p_; }

    std::vector<double> log_values() const;

    /// Ties break toward the lowest class index.
    std::size_t argmax() const;

private:
    std::vector<double> p_;
};

/// Numerically stabilized softmax (max logit subtracted before exponentiation).
ProbVector softmax(const LogitVector& logits);

/// softmax over a raw logit array; entries must be finite.
ProbVector softmax(const std::vector<double>& logits);

/// Remove a biased rule from a model output:
/// softmax(log model - log bias_rule).
ProbVector erase(const ProbVector& model, const ProbVector& bias_rule);

/// Stacked removal of several rules:
/// softmax(log model - sum_m log bias_rule_m). Empty list returns the model
/// unchanged.
ProbVector erase_multi(const ProbVector& model, const std::vector<ProbVector>& bias_rules);

/// Test inverse of erase: softmax(log model + log prior).
ProbVector inject_prior(const ProbVector& model, const ProbVector& prior);

}  // namespace eraser
