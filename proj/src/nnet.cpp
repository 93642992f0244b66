#include "eraser/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "eraser/error.hpp"
#include "eraser/rng.hpp"

namespace eraser {

namespace {

using json = nlohmann::ordered_json;

double relu(double z) { return z > 0.0 ? z : 0.0; }
double relu_grad(double z) { return z > 0.0 ? 1.0 : 0.0; }
double tanh_grad(double a) { return 1.0 - a * a; }  // takes the activation value

double stable_sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::fabs(z))); }

// log-softmax of z, stabilized
std::vector<double> log_softmax(const std::vector<double>& z) {
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    const double lse = m + std::log(sum);
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
    return out;
}

struct FwdCache {
    std::vector<std::vector<double>> z;  // pre-activations per layer
    std::vector<std::vector<double>> a;  // activations: a[0] = input copy
    std::vector<double> aux_z;

    void resize(const MlpModel& m) {
        z.resize(m.num_layers());
        a.resize(m.num_layers() + 1);
        a[0].resize(m.input_dim());
        for (std::size_t l = 0; l < m.num_layers(); ++l) {
            z[l].resize(m.layer_dims[l + 1]);
            a[l + 1].resize(m.layer_dims[l + 1]);
        }
        if (m.aux_head) aux_z.resize(m.aux_head->weights.rows);
    }
};

void affine(const Matrix& w, const std::vector<double>& b, const std::vector<double>& in,
            std::vector<double>& out) {
    for (std::size_t r = 0; r < w.rows; ++r) {
        double acc = b[r];
        const double* row = w.data.data() + r * w.cols;
        for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * in[c];
        out[r] = acc;
    }
}

// Full forward pass into the cache; returns nothing, logits live in
// cache.z.back() and the last hidden activation in cache.a[L-1].
void run_forward(const MlpModel& m, std::span<const double> x, FwdCache& c) {
    std::copy(x.begin(), x.end(), c.a[0].begin());
    const std::size_t L = m.num_layers();
    for (std::size_t l = 0; l < L; ++l) {
        affine(m.weights[l], m.biases[l], c.a[l], c.z[l]);
        if (l + 1 < L) {
            const Activation act = m.activations[l];
            for (std::size_t i = 0; i < c.z[l].size(); ++i) {
                c.a[l + 1][i] = act == Activation::Relu ? relu(c.z[l][i]) : std::tanh(c.z[l][i]);
            }
        } else {
            c.a[l + 1] = c.z[l];
        }
    }
    if (m.aux_head) {
        affine(m.aux_head->weights, m.aux_head->biases, c.a[L - 1], c.aux_z);
    }
}

struct GradBuffers {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
    Matrix aux_weights;
    std::vector<double> aux_biases;

    void resize_like(const MlpModel& m) {
        weights.resize(m.num_layers());
        biases.resize(m.num_layers());
        for (std::size_t l = 0; l < m.num_layers(); ++l) {
            weights[l] = Matrix(m.weights[l].rows, m.weights[l].cols);
            biases[l].assign(m.biases[l].size(), 0.0);
        }
        if (m.aux_head) {
            aux_weights = Matrix(m.aux_head->weights.rows, m.aux_head->weights.cols);
            aux_biases.assign(m.aux_head->biases.size(), 0.0);
        }
    }

    void zero() {
        for (Matrix& w : weights) std::fill(w.data.begin(), w.data.end(), 0.0);
        for (auto& b : biases) std::fill(b.begin(), b.end(), 0.0);
        std::fill(aux_weights.data.begin(), aux_weights.data.end(), 0.0);
        std::fill(aux_biases.begin(), aux_biases.end(), 0.0);
    }
};

// Loss value and gradient at the final-layer logits for one example.
// `scale` is the batch-mean factor applied to the gradient contributions.
struct LossEval {
    double value = 0.0;
    std::vector<double> dlogits;
    std::vector<double> daux;  // multitask only
};

LossEval eval_loss_grad(const MlpModel& m, const FwdCache& c, const TrainTargets& targets,
                        std::size_t idx, Loss loss, KlDirection dir) {
    LossEval out;
    const std::vector<double>& z = c.z.back();
    const std::size_t k = z.size();
    out.dlogits.assign(k, 0.0);

    switch (loss) {
        case Loss::HardLabelCe: {
            const int y = targets.hard[idx];
            if (m.output_mode == OutputMode::Softmax) {
                const std::vector<double> logp = log_softmax(z);
                out.value = -logp[static_cast<std::size_t>(y)];
                for (std::size_t j = 0; j < k; ++j) {
                    out.dlogits[j] = std::exp(logp[j]) - (static_cast<int>(j) == y ? 1.0 : 0.0);
                }
            } else {
                // per-class binary cross-entropy against the one-hot target
                for (std::size_t j = 0; j < k; ++j) {
                    const double yj = static_cast<int>(j) == y ? 1.0 : 0.0;
                    out.value += softplus(z[j]) - yj * z[j];
                    out.dlogits[j] = stable_sigmoid(z[j]) - yj;
                }
            }
            break;
        }
        case Loss::SoftTargetKl: {
            const ProbVector& p = targets.soft[idx];
            for (double v : z) {
                if (!std::isfinite(v)) {  // surfaces as a NumericError in train()
                    out.value = std::nan("");
                    return out;
                }
            }
            // G goes through the same softmax path as forward_probs so that a
            // target equal to the current output yields an exactly-zero
            // gradient
            const ProbVector g = softmax(z);
            if (dir == KlDirection::TargetToModel) {
                // cross-entropy H(p, G); same minimizer and gradient shape as
                // forward KL
                for (std::size_t j = 0; j < k; ++j) {
                    out.value -= p[j] * std::log(g[j]);
                    out.dlogits[j] = g[j] - p[j];
                }
            } else {
                // KL(G || p), the distillation objective as written
                double kl = 0.0;
                for (std::size_t j = 0; j < k; ++j) {
                    kl += g[j] * (std::log(g[j]) - std::log(p[j]));
                }
                out.value = kl;
                for (std::size_t j = 0; j < k; ++j) {
                    out.dlogits[j] = g[j] * (std::log(g[j]) - std::log(p[j]) - kl);
                }
            }
            break;
        }
        case Loss::MultitaskCe: {
            const auto [y, b] = targets.multitask[idx];
            const std::vector<double> logp = log_softmax(z);
            out.value = -logp[static_cast<std::size_t>(y)];
            for (std::size_t j = 0; j < k; ++j) {
                out.dlogits[j] = std::exp(logp[j]) - (static_cast<int>(j) == y ? 1.0 : 0.0);
            }
            const std::vector<double> logq = log_softmax(c.aux_z);
            out.value += -logq[static_cast<std::size_t>(b)];
            out.daux.assign(logq.size(), 0.0);
            for (std::size_t j = 0; j < logq.size(); ++j) {
                out.daux[j] = std::exp(logq[j]) - (static_cast<int>(j) == b ? 1.0 : 0.0);
            }
            break;
        }
    }
    return out;
}

// Accumulate scaled gradients for one example given dL/dlogits.
void run_backward(const MlpModel& m, const FwdCache& c, const LossEval& le, double scale,
                  GradBuffers& g) {
    const std::size_t L = m.num_layers();
    std::vector<double> delta = le.dlogits;

    // aux head grads and its contribution to the shared hidden layer
    std::vector<double> aux_delta_into_hidden;
    if (m.aux_head && !le.daux.empty()) {
        const Matrix& wa = m.aux_head->weights;
        aux_delta_into_hidden.assign(wa.cols, 0.0);
        for (std::size_t r = 0; r < wa.rows; ++r) {
            const double d = le.daux[r] * scale;
            g.aux_biases[r] += d;
            for (std::size_t cidx = 0; cidx < wa.cols; ++cidx) {
                g.aux_weights.at(r, cidx) += d * c.a[L - 1][cidx];
                aux_delta_into_hidden[cidx] += le.daux[r] * wa.at(r, cidx);
            }
        }
    }

    for (std::size_t l = L; l-- > 0;) {
        const Matrix& w = m.weights[l];
        std::vector<double> prev_delta(w.cols, 0.0);
        for (std::size_t r = 0; r < w.rows; ++r) {
            const double d = delta[r] * scale;
            g.biases[l][r] += d;
            const double* in = c.a[l].data();
            double* grow = g.weights[l].data.data() + r * w.cols;
            const double* wrow = w.data.data() + r * w.cols;
            for (std::size_t cidx = 0; cidx < w.cols; ++cidx) {
                grow[cidx] += d * in[cidx];
                prev_delta[cidx] += delta[r] * wrow[cidx];
            }
        }
        if (l == L - 1 && !aux_delta_into_hidden.empty()) {
            for (std::size_t i = 0; i < prev_delta.size(); ++i) {
                prev_delta[i] += aux_delta_into_hidden[i];
            }
        }
        if (l > 0) {
            const Activation act = m.activations[l - 1];
            for (std::size_t i = 0; i < prev_delta.size(); ++i) {
                prev_delta[i] *= act == Activation::Relu ? relu_grad(c.z[l - 1][i])
                                                         : tanh_grad(c.a[l][i]);
            }
        }
        delta = std::move(prev_delta);
    }
}

void validate_features(const MlpModel& m, const FeatureMatrix& features) {
    for (const auto& row : features) {
        if (row.size() != m.input_dim()) {
            throw ShapeError("feature vector has " + std::to_string(row.size()) +
                             " entries, model input dim is " + std::to_string(m.input_dim()));
        }
        for (double v : row) {
            if (!std::isfinite(v)) throw InvalidInputError("non-finite feature value");
        }
    }
}

void validate_targets(const MlpModel& m, const FeatureMatrix& features,
                      const TrainTargets& targets, Loss loss) {
    if (targets.size() != features.size()) {
        throw ValidationError("targets (" + std::to_string(targets.size()) +
                              ") not aligned with features (" + std::to_string(features.size()) +
                              ")");
    }
    const int k = static_cast<int>(m.output_dim());
    switch (loss) {
        case Loss::HardLabelCe:
            if (targets.hard.size() != features.size()) {
                throw ValidationError("hard labels required for hard_label_ce");
            }
            for (int y : targets.hard) {
                if (y < 0 || y >= k) throw ValidationError("label out of range");
            }
            break;
        case Loss::SoftTargetKl:
            if (targets.soft.size() != features.size()) {
                throw ValidationError("soft targets required for soft_target_kl");
            }
            if (m.output_mode != OutputMode::Softmax) {
                throw ValidationError("soft_target_kl requires a softmax output head");
            }
            for (const ProbVector& p : targets.soft) {
                if (p.size() != m.output_dim()) throw ShapeError("soft target length mismatch");
            }
            break;
        case Loss::MultitaskCe: {
            if (targets.multitask.size() != features.size()) {
                throw ValidationError("(target, bias) pairs required for multitask_ce");
            }
            if (!m.aux_head) {
                throw ValidationError("multitask_ce requires a model with a bias head");
            }
            if (m.output_mode != OutputMode::Softmax) {
                throw ValidationError("multitask_ce requires a softmax output head");
            }
            const int kb = static_cast<int>(m.aux_head->weights.rows);
            for (auto [y, b] : targets.multitask) {
                if (y < 0 || y >= k) throw ValidationError("target label out of range");
                if (b < 0 || b >= kb) throw ValidationError("bias label out of range");
            }
            break;
        }
    }
}

struct AdamState {
    GradBuffers m, v;
    std::size_t t = 0;
};

void apply_step(MlpModel& model, const GradBuffers& g, const TrainConfig& cfg, AdamState* adam) {
    auto update = [&](double& theta, double grad, double* mom, double* vel) {
        if (cfg.optimizer == OptimizerKind::Sgd) {
            theta -= cfg.learning_rate * grad;
        } else {
            *mom = cfg.beta1 * *mom + (1.0 - cfg.beta1) * grad;
            *vel = cfg.beta2 * *vel + (1.0 - cfg.beta2) * grad * grad;
            const double mhat = *mom / (1.0 - std::pow(cfg.beta1, static_cast<double>(adam->t)));
            const double vhat = *vel / (1.0 - std::pow(cfg.beta2, static_cast<double>(adam->t)));
            theta -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    };

    if (adam) ++adam->t;
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        for (std::size_t i = 0; i < model.weights[l].data.size(); ++i) {
            double grad = g.weights[l].data[i] + cfg.l2 * model.weights[l].data[i];
            update(model.weights[l].data[i], grad,
                   adam ? &adam->m.weights[l].data[i] : nullptr,
                   adam ? &adam->v.weights[l].data[i] : nullptr);
        }
        for (std::size_t i = 0; i < model.biases[l].size(); ++i) {
            update(model.biases[l][i], g.biases[l][i],
                   adam ? &adam->m.biases[l][i] : nullptr,
                   adam ? &adam->v.biases[l][i] : nullptr);
        }
    }
    if (model.aux_head) {
        for (std::size_t i = 0; i < model.aux_head->weights.data.size(); ++i) {
            double grad = g.aux_weights.data[i] + cfg.l2 * model.aux_head->weights.data[i];
            update(model.aux_head->weights.data[i], grad,
                   adam ? &adam->m.aux_weights.data[i] : nullptr,
                   adam ? &adam->v.aux_weights.data[i] : nullptr);
        }
        for (std::size_t i = 0; i < model.aux_head->biases.size(); ++i) {
            update(model.aux_head->biases[i], g.aux_biases[i],
                   adam ? &adam->m.aux_biases[i] : nullptr,
                   adam ? &adam->v.aux_biases[i] : nullptr);
        }
    }
}

void glorot_fill(Matrix& w, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
    for (double& v : w.data) v = rng.uniform(-bound, bound);
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "tanh"; }
std::string to_string(OutputMode m) { return m == OutputMode::Softmax ? "softmax" : "sigmoid"; }

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    throw InvalidInputError("unknown activation: " + s);
}

OutputMode output_mode_from_string(const std::string& s) {
    if (s == "softmax") return OutputMode::Softmax;
    if (s == "sigmoid") return OutputMode::Sigmoid;
    throw InvalidInputError("unknown output mode: " + s);
}

std::string to_string(Loss l) {
    switch (l) {
        case Loss::HardLabelCe: return "hard_label_ce";
        case Loss::SoftTargetKl: return "soft_target_kl";
        case Loss::MultitaskCe: return "multitask_ce";
    }
    return "?";
}

Loss loss_from_string(const std::string& s) {
    if (s == "hard_label_ce") return Loss::HardLabelCe;
    if (s == "soft_target_kl") return Loss::SoftTargetKl;
    if (s == "multitask_ce") return Loss::MultitaskCe;
    throw InvalidInputError("unknown loss: " + s);
}

TrainTargets TrainTargets::hard_labels(std::vector<int> labels) {
    TrainTargets t;
    t.hard = std::move(labels);
    return t;
}

TrainTargets TrainTargets::soft_targets(std::vector<ProbVector> targets) {
    TrainTargets t;
    t.soft = std::move(targets);
    return t;
}

TrainTargets TrainTargets::multitask_labels(std::vector<std::pair<int, int>> pairs) {
    TrainTargets t;
    t.multitask = std::move(pairs);
    return t;
}

std::size_t TrainTargets::size() const {
    return std::max({hard.size(), soft.size(), multitask.size()});
}

MlpModel make_mlp(std::vector<std::size_t> layer_dims, std::vector<Activation> activations,
                  OutputMode output_mode, std::uint64_t seed) {
    if (layer_dims.size() < 2) throw ShapeError("model needs at least input and output dims");
    for (std::size_t d : layer_dims) {
        if (d == 0) throw ShapeError("zero layer dimension");
    }
    if (layer_dims.back() < 2) throw ShapeError("output dim must be at least 2");
    if (activations.size() != layer_dims.size() - 2) {
        throw ShapeError("need one activation per hidden layer");
    }

    MlpModel m;
    m.layer_dims = std::move(layer_dims);
    m.activations = std::move(activations);
    m.output_mode = output_mode;
    m.meta.seed = seed;

    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
        Matrix w(m.layer_dims[l + 1], m.layer_dims[l]);
        glorot_fill(w, rng);
        m.weights.push_back(std::move(w));
        m.biases.emplace_back(m.layer_dims[l + 1], 0.0);
    }
    return m;
}

void add_aux_head(MlpModel& model, std::size_t aux_classes, std::uint64_t seed) {
    if (aux_classes < 2) throw ShapeError("aux head needs at least 2 classes");
    const std::size_t in = model.layer_dims[model.layer_dims.size() - 2];
    AuxHead head;
    head.weights = Matrix(aux_classes, in);
    Rng rng(seed);
    glorot_fill(head.weights, rng);
    head.biases.assign(aux_classes, 0.0);
    model.aux_head = std::move(head);
}

std::vector<double> forward_logits(const MlpModel& model, std::span<const double> x) {
    if (x.size() != model.input_dim()) {
        throw ShapeError("input has " + std::to_string(x.size()) + " entries, expected " +
                         std::to_string(model.input_dim()));
    }
    for (double v : x) {
        if (!std::isfinite(v)) throw InvalidInputError("non-finite input value");
    }
    FwdCache c;
    c.resize(model);
    run_forward(model, x, c);
    for (double v : c.z.back()) {
        if (!std::isfinite(v)) throw NumericError("non-finite activation in forward pass");
    }
    return c.z.back();
}

ProbVector forward_probs(const MlpModel& model, std::span<const double> x) {
    const std::vector<double> z = forward_logits(model, x);
    if (model.output_mode == OutputMode::Softmax) return softmax(z);
    std::vector<double> scores(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) scores[i] = stable_sigmoid(z[i]);
    return ProbVector::from_sigmoid_scores(std::move(scores), z.size());
}

MlpModel train(MlpModel model, const FeatureMatrix& features, const TrainTargets& targets,
               const TrainConfig& config) {
    if (features.empty()) throw ValidationError("training set is empty");
    if (config.learning_rate <= 0.0) throw InvalidInputError("learning_rate must be positive");
    if (config.l2 < 0.0) throw InvalidInputError("l2 must be nonnegative");
    if (config.batch_size == 0 || config.batch_size > features.size()) {
        throw InvalidInputError("batch_size must be in [1, dataset size]");
    }
    validate_features(model, features);
    validate_targets(model, features, targets, config.loss);

    Rng rng(config.seed);
    std::vector<std::size_t> order(features.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    FwdCache cache;
    cache.resize(model);
    GradBuffers grads;
    grads.resize_like(model);

    AdamState adam;
    AdamState* adam_ptr = nullptr;
    if (config.optimizer == OptimizerKind::Adam) {
        adam.m.resize_like(model);
        adam.v.resize_like(model);
        adam_ptr = &adam;
    }

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(start + config.batch_size, order.size());
            const double scale = 1.0 / static_cast<double>(end - start);
            grads.zero();
            double batch_loss = 0.0;
            for (std::size_t pos = start; pos < end; ++pos) {
                const std::size_t i = order[pos];
                run_forward(model, features[i], cache);
                LossEval le =
                    eval_loss_grad(model, cache, targets, i, config.loss, config.kl_direction);
                batch_loss += le.value * scale;
                run_backward(model, cache, le, scale, grads);
            }
            if (!std::isfinite(batch_loss)) {
                throw NumericError("training diverged (non-finite loss) at epoch " +
                                   std::to_string(epoch));
            }
            apply_step(model, grads, config, adam_ptr);
        }
    }
    return model;
}

double dataset_loss(const MlpModel& model, const FeatureMatrix& features,
                    const TrainTargets& targets, Loss loss, KlDirection kl_direction) {
    if (features.empty()) throw ValidationError("empty batch");
    validate_features(model, features);
    validate_targets(model, features, targets, loss);
    FwdCache cache;
    cache.resize(model);
    double total = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        run_forward(model, features[i], cache);
        total += eval_loss_grad(model, cache, targets, i, loss, kl_direction).value;
    }
    return total / static_cast<double>(features.size());
}

double GradCheckReport::max_rel_error() const {
    double m = 0.0;
    for (const auto& b : blocks) m = std::max(m, b.max_rel_error);
    return m;
}

GradCheckReport grad_check(const MlpModel& model, const FeatureMatrix& features,
                           const TrainTargets& targets, Loss loss, KlDirection kl_direction) {
    if (features.empty()) throw ValidationError("grad_check needs a nonempty batch");
    validate_features(model, features);
    validate_targets(model, features, targets, loss);

    // analytic gradient of the mean batch loss
    MlpModel m = model;  // mutable copy for finite differences
    FwdCache cache;
    cache.resize(m);
    GradBuffers analytic;
    analytic.resize_like(m);
    const double scale = 1.0 / static_cast<double>(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
        run_forward(m, features[i], cache);
        LossEval le = eval_loss_grad(m, cache, targets, i, loss, kl_direction);
        run_backward(m, cache, le, scale, analytic);
    }

    constexpr double kStep = 1e-5;
    // near-zero gradient pairs are dominated by finite-difference noise, so
    // the denominator is floored
    auto rel_err = [](double a, double b) {
        return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-4});
    };
    auto fd_block = [&](double* params, const double* grad, std::size_t count) {
        double worst = 0.0;
        for (std::size_t i = 0; i < count; ++i) {
            const double orig = params[i];
            params[i] = orig + kStep;
            const double up = dataset_loss(m, features, targets, loss, kl_direction);
            params[i] = orig - kStep;
            const double down = dataset_loss(m, features, targets, loss, kl_direction);
            params[i] = orig;
            const double fd = (up - down) / (2.0 * kStep);
            worst = std::max(worst, rel_err(fd, grad[i]));
        }
        return worst;
    };

    GradCheckReport report;
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
        report.blocks.push_back({"layer" + std::to_string(l) + ".weights",
                                 fd_block(m.weights[l].data.data(),
                                          analytic.weights[l].data.data(),
                                          m.weights[l].data.size())});
        report.blocks.push_back({"layer" + std::to_string(l) + ".biases",
                                 fd_block(m.biases[l].data(), analytic.biases[l].data(),
                                          m.biases[l].size())});
    }
    if (m.aux_head) {
        report.blocks.push_back({"bias_head.weights",
                                 fd_block(m.aux_head->weights.data.data(),
                                          analytic.aux_weights.data.data(),
                                          m.aux_head->weights.data.size())});
        report.blocks.push_back({"bias_head.biases",
                                 fd_block(m.aux_head->biases.data(), analytic.aux_biases.data(),
                                          m.aux_head->biases.size())});
    }
    report.pass = report.max_rel_error() < report.threshold;
    return report;
}

namespace {

json matrix_to_json(const Matrix& w) {
    json rows = json::array();
    for (std::size_t r = 0; r < w.rows; ++r) {
        json row = json::array();
        for (std::size_t c = 0; c < w.cols; ++c) row.push_back(w.at(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& rows, std::size_t expect_rows, std::size_t expect_cols,
                        const std::string& what) {
    if (!rows.is_array() || rows.size() != expect_rows) {
        throw LoadError(what + ": expected " + std::to_string(expect_rows) + " rows");
    }
    Matrix w(expect_rows, expect_cols);
    for (std::size_t r = 0; r < expect_rows; ++r) {
        const json& row = rows[r];
        if (!row.is_array() || row.size() != expect_cols) {
            throw LoadError(what + ": row " + std::to_string(r) + " expected " +
                            std::to_string(expect_cols) + " entries, got " +
                            std::to_string(row.is_array() ? row.size() : 0));
        }
        for (std::size_t c = 0; c < expect_cols; ++c) {
            if (!row[c].is_number()) throw LoadError(what + ": non-numeric weight");
            w.at(r, c) = row[c].get<double>();
            if (!std::isfinite(w.at(r, c))) throw LoadError(what + ": non-finite weight");
        }
    }
    return w;
}

std::vector<double> vector_from_json(const json& arr, std::size_t expect, const std::string& what) {
    if (!arr.is_array() || arr.size() != expect) {
        throw LoadError(what + ": expected " + std::to_string(expect) + " entries");
    }
    std::vector<double> v(expect);
    for (std::size_t i = 0; i < expect; ++i) {
        if (!arr[i].is_number()) throw LoadError(what + ": non-numeric entry");
        v[i] = arr[i].get<double>();
        if (!std::isfinite(v[i])) throw LoadError(what + ": non-finite entry");
    }
    return v;
}

}  // namespace

std::string save_model(const MlpModel& model) {
    json doc;
    doc["format_version"] = 1;
    doc["layer_dims"] = model.layer_dims;
    json acts = json::array();
    for (Activation a : model.activations) acts.push_back(to_string(a));
    doc["activations"] = std::move(acts);
    doc["output_mode"] = to_string(model.output_mode);
    json weights = json::array();
    json biases = json::array();
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        weights.push_back(matrix_to_json(model.weights[l]));
        json b = json::array();
        for (double v : model.biases[l]) b.push_back(v);
        biases.push_back(std::move(b));
    }
    doc["weights"] = std::move(weights);
    doc["biases"] = std::move(biases);
    if (model.aux_head) {
        json head;
        head["weights"] = matrix_to_json(model.aux_head->weights);
        json b = json::array();
        for (double v : model.aux_head->biases) b.push_back(v);
        head["biases"] = std::move(b);
        doc["bias_head"] = std::move(head);
    }
    json meta;
    meta["seed"] = model.meta.seed;
    meta["trained_on"] = model.meta.trained_on;
    meta["role"] = model.meta.role;
    if (!model.meta.bias_attr.empty()) meta["bias_attr"] = model.meta.bias_attr;
    doc["metadata"] = std::move(meta);
    return doc.dump();
}

MlpModel load_model(const std::string& bytes) {
    json doc;
    try {
        doc = json::parse(bytes);
    } catch (const json::exception& e) {
        throw LoadError(std::string("model document is not valid JSON: ") + e.what());
    }
    try {
        if (!doc.is_object()) throw LoadError("model document must be a JSON object");
        if (!doc.contains("format_version") || !doc["format_version"].is_number_integer() ||
            doc["format_version"].get<int>() != 1) {
            throw LoadError("unsupported or missing format_version (expected 1)");
        }
        MlpModel m;
        for (const json& d : doc.at("layer_dims")) {
            if (!d.is_number_unsigned() || d.get<std::size_t>() == 0) {
                throw LoadError("layer_dims must be positive integers");
            }
            m.layer_dims.push_back(d.get<std::size_t>());
        }
        if (m.layer_dims.size() < 2 || m.layer_dims.back() < 2) {
            throw LoadError("layer_dims must list input, hidden..., output(>=2)");
        }
        const json& acts = doc.at("activations");
        if (!acts.is_array() || acts.size() != m.layer_dims.size() - 2) {
            throw LoadError("need one activation per hidden layer");
        }
        for (const json& a : acts) m.activations.push_back(activation_from_string(a.get<std::string>()));
        m.output_mode = output_mode_from_string(doc.at("output_mode").get<std::string>());

        const json& weights = doc.at("weights");
        const json& biases = doc.at("biases");
        const std::size_t layers = m.layer_dims.size() - 1;
        if (!weights.is_array() || weights.size() != layers || !biases.is_array() ||
            biases.size() != layers) {
            throw LoadError("weights/biases must have one entry per layer");
        }
        for (std::size_t l = 0; l < layers; ++l) {
            m.weights.push_back(matrix_from_json(weights[l], m.layer_dims[l + 1], m.layer_dims[l],
                                                 "layer" + std::to_string(l)));
            m.biases.push_back(vector_from_json(biases[l], m.layer_dims[l + 1],
                                                "layer" + std::to_string(l) + " biases"));
        }
        if (doc.contains("bias_head")) {
            const json& head = doc["bias_head"];
            const std::size_t in = m.layer_dims[m.layer_dims.size() - 2];
            if (!head.is_object() || !head.contains("weights") || !head.contains("biases")) {
                throw LoadError("bias_head must carry weights and biases");
            }
            const std::size_t rows = head["weights"].is_array() ? head["weights"].size() : 0;
            if (rows < 2) throw LoadError("bias_head needs at least 2 outputs");
            AuxHead aux;
            aux.weights = matrix_from_json(head["weights"], rows, in, "bias_head");
            aux.biases = vector_from_json(head["biases"], rows, "bias_head biases");
            m.aux_head = std::move(aux);
        }
        if (doc.contains("metadata")) {
            const json& meta = doc["metadata"];
            m.meta.seed = meta.value("seed", std::uint64_t{0});
            m.meta.trained_on = meta.value("trained_on", std::string{});
            m.meta.role = meta.value("role", std::string{});
            m.meta.bias_attr = meta.value("bias_attr", std::string{});
        }
        return m;
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed model document: ") + e.what());
    }
}

void save_model_file(const MlpModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    out << save_model(model);
    if (!out) throw Error("failed writing " + path);
}

MlpModel load_model_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return load_model(ss.str());
}

}  // namespace eraser
