#include "eraser/prob.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "eraser/error.hpp"

namespace eraser {

namespace {

void check_length(std::size_t k) {
    if (k < 2) {
        throw ShapeError("probability/logit vectors need at least 2 entries, got " +
                         std::to_string(k));
    }
}

std::vector<double> stable_softmax(const std::vector<double>& z) {
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> out(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp(z[i] - m);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

}  // namespace

LogitVector::LogitVector(std::vector<double> logits) : z_(std::move(logits)) {
    check_length(z_.size());
    for (double v : z_) {
        if (!std::isfinite(v)) throw InvalidInputError("non-finite logit");
    }
}

ProbVector::ProbVector(std::vector<double> probs, double floor) : p_(std::move(probs)) {
    check_length(p_.size());
    double sum = 0.0;
    for (double v : p_) {
        if (!std::isfinite(v)) throw InvalidInputError("non-finite probability");
        if (v < 0.0) throw InvalidInputError("negative probability " + std::to_string(v));
        sum += v;
    }
    if (sum <= 0.0) throw InvalidInputError("probability vector sums to zero");
    double floored_sum = 0.0;
    for (double& v : p_) {
        v = std::max(v, floor);
        floored_sum += v;
    }
    for (double& v : p_) v /= floored_sum;
}

ProbVector ProbVector::uniform(std::size_t k) {
    check_length(k);
    return ProbVector(std::vector<double>(k, 1.0 / static_cast<double>(k)));
}

ProbVector ProbVector::from_sigmoid_scores(std::vector<double> scores, std::size_t k) {
    if (scores.size() == 1 && k == 2) {
        const double s = scores[0];
        if (!std::isfinite(s) || s < 0.0 || s > 1.0) {
            throw InvalidInputError("binary sigmoid score must lie in [0, 1]");
        }
        scores = {1.0 - s, s};
    }
    if (scores.size() != k) {
        throw ShapeError("expected " + std::to_string(k) + " scores, got " +
                         std::to_string(scores.size()));
    }
    return ProbVector(std::move(scores));
}

std::vector<double> ProbVector::log_values() const {
    std::vector<double> out(p_.size());
    for (std::size_t i = 0; i < p_.size(); ++i) out[i] = std::log(p_[i]);
    return out;
}

std::size_t ProbVector::argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < p_.size(); ++i) {
        if (p_[i] > p_[best]) best = i;
    }
    return best;
}

ProbVector softmax(const LogitVector& logits) {
    return ProbVector(stable_softmax(logits.values()));
}

ProbVector softmax(const std::vector<double>& logits) {
    return softmax(LogitVector(logits));
}

ProbVector erase(const ProbVector& model, const ProbVector& bias_rule) {
    if (model.size() != bias_rule.size()) {
        throw ShapeError("erase: model has " + std::to_string(model.size()) +
                         " classes, bias rule has " + std::to_string(bias_rule.size()));
    }
    std::vector<double> z(model.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = std::log(model[i]) - std::log(bias_rule[i]);
    }
    return softmax(z);
}

ProbVector erase_multi(const ProbVector& model, const std::vector<ProbVector>& bias_rules) {
    if (bias_rules.empty()) return model;
    std::vector<double> z = model.log_values();
    for (const ProbVector& rule : bias_rules) {
        if (rule.size() != model.size()) {
            throw ShapeError("erase_multi: rule has " + std::to_string(rule.size()) +
                             " classes, model has " + std::to_string(model.size()));
        }
        for (std::size_t i = 0; i < z.size(); ++i) z[i] -= std::log(rule[i]);
    }
    return softmax(z);
}

ProbVector inject_prior(const ProbVector& model, const ProbVector& prior) {
    if (model.size() != prior.size()) {
        throw ShapeError("inject_prior: model has " + std::to_string(model.size()) +
                         " classes, prior has " + std::to_string(prior.size()));
    }
    std::vector<double> z(model.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = std::log(model[i]) + std::log(prior[i]);
    }
    return softmax(z);
}

}  // namespace eraser
