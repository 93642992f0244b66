#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>

#include "eraser/dataset.hpp"
#include "eraser/distill.hpp"
#include "eraser/error.hpp"
#include "eraser/nnet.hpp"
#include "eraser/oracle.hpp"
#include "eraser/prob.hpp"
#include "eraser/rng.hpp"

using namespace eraser;

namespace {

// 1-d binary oracle with exact outputs: logit0(x) = log(6)*x + log(1.5),
// logit1 = 0, so M(+1) = [0.9, 0.1] and M(-1) = [0.2, 0.8].
std::shared_ptr<MlpModel> two_point_oracle() {
    auto m = std::make_shared<MlpModel>(make_mlp({1, 2}, {}, OutputMode::Softmax, 0));
    m->weights[0].data = {std::log(6.0), 0.0};
    m->biases[0] = {std::log(1.5), 0.0};
    return m;
}

Dataset four_cell_calibration() {
    Dataset d;
    d.schema.num_classes = 2;
    d.schema.bias_attrs = {{"g", 2}};
    d.schema.feature_dim = 1;
    d.examples.push_back({{1.0}, 0, {0}});   // M = [0.9, 0.1]
    d.examples.push_back({{-1.0}, 1, {0}});  // M = [0.2, 0.8]
    d.examples.push_back({{0.5}, 0, {1}});
    d.examples.push_back({{-0.5}, 1, {1}});
    return d;
}

// ignores its input: zero weights, output biases pinned to log(probs)
std::shared_ptr<MlpModel> constant_oracle(std::size_t input_dim, const std::vector<double>& probs) {
    auto m = std::make_shared<MlpModel>(
        make_mlp({input_dim, probs.size()}, {}, OutputMode::Softmax, 0));
    std::fill(m->weights[0].data.begin(), m->weights[0].data.end(), 0.0);
    for (std::size_t j = 0; j < probs.size(); ++j) m->biases[0][j] = std::log(probs[j]);
    return m;
}

}  // namespace

TEST_CASE("contrast index over a tiny fixture") {
    Dataset calib;
    calib.schema.num_classes = 2;
    calib.schema.bias_attrs = {{"g", 2}};
    calib.schema.feature_dim = 1;
    // two examples per (target, bias) cell
    for (int y = 0; y < 2; ++y) {
        for (int b = 0; b < 2; ++b) {
            calib.examples.push_back({{y == 0 ? 1.0 : -1.0}, y, {b}});
            calib.examples.push_back({{y == 0 ? 0.9 : -0.9}, y, {b}});
        }
    }
    auto oracle_model = two_point_oracle();
    OracleHandle oracle = OracleHandle::local(oracle_model);
    ContrastIndex index = build_contrast_index(calib, oracle, "g");

    CHECK(index.k == 2);
    CHECK(index.cardinality == 2);
    CHECK(index.cells.size() == 4);
    CHECK(index.example_log.size() == calib.size());

    // per-cell mean of log M(x') recomputed by hand
    for (const auto& [cell, members] : index.cells) {
        REQUIRE(members.size() == 2);
        std::vector<double> mean(2, 0.0);
        for (std::size_t i : members) {
            const ProbVector p = forward_probs(*oracle_model, calib.examples[i].features);
            mean[0] += std::log(p[0]) / 2.0;
            mean[1] += std::log(p[1]) / 2.0;
        }
        CHECK(index.mean_log.at(cell)[0] == doctest::Approx(mean[0]).epsilon(1e-12));
        CHECK(index.mean_log.at(cell)[1] == doctest::Approx(mean[1]).epsilon(1e-12));
    }
}

TEST_CASE("missing contrast cells are reported by name") {
    Dataset calib = four_cell_calibration();
    // remove the (target=1, bias=0) example
    calib.examples.erase(calib.examples.begin() + 1);
    OracleHandle oracle = OracleHandle::local(two_point_oracle());
    try {
        build_contrast_index(calib, oracle, "g");
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("(target=1, bias=0)") != std::string::npos);
    }
}

TEST_CASE("multi-bias datasets index each attribute independently") {
    SyntheticSpec spec;
    spec.variant = SyntheticVariant::TwoBias;
    spec.n = 200;
    spec.alpha = 0.5;
    spec.feature_dim = 10;
    spec.seed = 31;
    Dataset calib = generate(spec);
    auto model = std::make_shared<MlpModel>(
        make_mlp({10, 2}, {}, OutputMode::Softmax, 1));
    OracleHandle oracle = OracleHandle::local(model);

    ContrastIndex ia = build_contrast_index(calib, oracle, "bias_a");
    ContrastIndex ib = build_contrast_index(calib, oracle, "bias_b");
    CHECK(ia.cells.size() == 4);
    CHECK(ib.cells.size() == 4);
    // cells group on the named attribute only; the other attribute mixes
    for (const auto& [cell, members] : ia.cells) {
        bool saw[2] = {false, false};
        for (std::size_t i : members) {
            CHECK(calib.examples[i].target == cell.first);
            CHECK(calib.examples[i].bias[0] == cell.second);
            saw[calib.examples[i].bias[1]] = true;
        }
        CHECK((saw[0] && saw[1]));  // marginalized by cell averaging
    }
}

TEST_CASE("distilled target for the k=2 worked example") {
    Dataset calib = four_cell_calibration();
    OracleHandle oracle = OracleHandle::local(two_point_oracle());
    ContrastIndex index = build_contrast_index(calib, oracle, "g");
    DistilledTargets targets = distill_targets(calib, index, oracle);
    REQUIRE(targets.targets.size() == calib.size());

    // independent oracle: softmax(0.5*log(0.18), 0.5*log(0.08)) computed via
    // square roots
    const double r0 = std::sqrt(0.9 * 0.2);
    const double r1 = std::sqrt(0.1 * 0.8);
    CHECK(targets.targets[0][0] == doctest::Approx(r0 / (r0 + r1)).epsilon(1e-9));
    CHECK(targets.targets[0][1] == doctest::Approx(r1 / (r0 + r1)).epsilon(1e-9));
    CHECK(targets.targets[0][0] == doctest::Approx(0.6).epsilon(1e-9));
    CHECK(targets.bias_attr == "g");
}

TEST_CASE("constant oracle distills to its own constant") {
    SyntheticSpec spec;
    spec.variant = SyntheticVariant::BinaryBias;
    spec.n = 80;
    spec.alpha = 0.5;
    spec.feature_dim = 6;
    spec.seed = 41;
    Dataset calib = generate(spec);

    OracleHandle oracle = OracleHandle::local(constant_oracle(6, {0.7, 0.3}));
    ContrastIndex index = build_contrast_index(calib, oracle, "bias");
    DistilledTargets targets = distill_targets(calib, index, oracle);
    for (const ProbVector& t : targets.targets) {
        CHECK(t[0] == doctest::Approx(0.7).epsilon(1e-12));
        CHECK(t[1] == doctest::Approx(0.3).epsilon(1e-12));
    }
}

TEST_CASE("linear oracles distill exactly to the mean contributing vector") {
    for (int k : {2, 3}) {
        SyntheticSpec spec;
        spec.variant = k == 2 ? SyntheticVariant::BinaryBias : SyntheticVariant::Multiclass;
        spec.num_classes = k;
        spec.n = 400;
        spec.alpha = 0.4;
        spec.feature_dim = 12;
        spec.seed = 51 + static_cast<std::uint64_t>(k);
        Dataset calib = generate(spec);

        auto oracle_model = std::make_shared<MlpModel>(make_mlp(
            {12, static_cast<std::size_t>(k)}, {}, OutputMode::Softmax, 777));
        OracleHandle oracle = OracleHandle::local(oracle_model);
        ContrastIndex index = build_contrast_index(calib, oracle, "bias");
        DistilledTargets targets = distill_targets(calib, index, oracle);

        // per-cell mean feature vectors
        std::map<std::pair<int, int>, std::vector<double>> mean_feat;
        for (const auto& [cell, members] : index.cells) {
            std::vector<double> mean(12, 0.0);
            for (std::size_t i : members) {
                for (int j = 0; j < 12; ++j) mean[j] += calib.examples[i].features[j];
            }
            for (double& v : mean) v /= static_cast<double>(members.size());
            mean_feat[cell] = std::move(mean);
        }

        for (std::size_t i = 0; i < calib.size(); ++i) {
            const Example& ex = calib.examples[i];
            std::vector<double> mean = ex.features;
            for (int cls = 0; cls < k; ++cls) {
                if (cls == ex.target) continue;
                const auto& mf = mean_feat.at({cls, ex.bias[0]});
                for (int j = 0; j < 12; ++j) mean[j] += mf[j];
            }
            for (double& v : mean) v /= static_cast<double>(k);
            const ProbVector expect = forward_probs(*oracle_model, mean);
            for (int j = 0; j < k; ++j) {
                CHECK(std::fabs(targets.targets[i][j] - expect[j]) < 1e-9);
            }
        }
    }
}

TEST_CASE("two-bias targets are specific to their own attribute") {
    // crisp channels and a linear oracle: the attribute-a targets must not
    // move with attribute b
    SyntheticSpec spec;
    spec.variant = SyntheticVariant::TwoBias;
    spec.n = 2000;
    spec.alpha = 0.3;
    spec.feature_dim = 10;
    spec.noise_std = 0.05;
    spec.seed = 63;
    Dataset calib = generate(spec);
    auto oracle_model = std::make_shared<MlpModel>(make_mlp({10, 2}, {}, OutputMode::Softmax, 64));
    OracleHandle oracle = OracleHandle::local(oracle_model);
    ContrastIndex index = build_contrast_index(calib, oracle, "bias_a");
    DistilledTargets targets = distill_targets(calib, index, oracle);

    std::map<std::pair<int, int>, std::pair<double, std::size_t>> mean_lo;
    for (std::size_t i = 0; i < calib.size(); ++i) {
        auto& acc = mean_lo[{calib.examples[i].bias[0], calib.examples[i].bias[1]}];
        acc.first += std::log(targets.targets[i][0]) - std::log(targets.targets[i][1]);
        acc.second += 1;
    }
    auto lo = [&](int a, int b) {
        auto& acc = mean_lo.at({a, b});
        return acc.first / static_cast<double>(acc.second);
    };
    // flipping b barely moves the target; flipping a moves it decisively
    CHECK(std::fabs(lo(0, 0) - lo(0, 1)) < 0.05);
    CHECK(std::fabs(lo(1, 0) - lo(1, 1)) < 0.05);
    CHECK(std::fabs(lo(0, 0) - lo(1, 0)) > 0.3);
}

TEST_CASE("starved restricted pools fall back to the plain cell mean") {
    // every potential contrast partner for the (1, a=1) cell shares b with
    // the b=0 examples of cell (0, a=1), so their restricted pool is empty
    Dataset calib;
    calib.schema.num_classes = 2;
    calib.schema.bias_attrs = {{"a", 2}, {"b", 2}};
    calib.schema.feature_dim = 2;
    calib.examples.push_back({{1.0, 0.0}, 0, {0, 0}});
    calib.examples.push_back({{1.0, 1.0}, 0, {0, 1}});
    calib.examples.push_back({{0.9, 0.0}, 0, {1, 0}});
    calib.examples.push_back({{-1.0, 0.0}, 1, {0, 0}});
    calib.examples.push_back({{-1.0, 1.0}, 1, {0, 1}});
    calib.examples.push_back({{-0.9, 0.0}, 1, {1, 0}});
    auto oracle_model = std::make_shared<MlpModel>(make_mlp({2, 2}, {}, OutputMode::Softmax, 9));
    OracleHandle oracle = OracleHandle::local(oracle_model);
    ContrastIndex index = build_contrast_index(calib, oracle, "a");
    DistilledTargets targets = distill_targets(calib, index, oracle);
    CHECK(targets.targets.size() == calib.size());  // no validation failure
}

TEST_CASE("argmax of distilled targets is invariant to the 1/k factor") {
    SyntheticSpec spec;
    spec.variant = SyntheticVariant::Multiclass;
    spec.num_classes = 3;
    spec.n = 300;
    spec.alpha = 0.3;
    spec.feature_dim = 10;
    spec.seed = 61;
    Dataset calib = generate(spec);
    auto oracle_model = std::make_shared<MlpModel>(
        make_mlp({10, 6, 3}, {Activation::Relu}, OutputMode::Softmax, 71));
    OracleHandle oracle = OracleHandle::local(oracle_model);
    ContrastIndex index = build_contrast_index(calib, oracle, "bias");
    DistilledTargets targets = distill_targets(calib, index, oracle);

    for (std::size_t i = 0; i < calib.size(); ++i) {
        const Example& ex = calib.examples[i];
        std::vector<double> z = index.example_log[i];  // unscaled variant
        for (int cls = 0; cls < 3; ++cls) {
            if (cls == ex.target) continue;
            const auto& m = index.mean_log.at({cls, ex.bias[0]});
            for (std::size_t j = 0; j < z.size(); ++j) z[j] += m[j];
        }
        CHECK(softmax(z).argmax() == targets.targets[i].argmax());
    }
}

TEST_CASE("contrast cells never contain the example itself") {
    Dataset calib = four_cell_calibration();
    OracleHandle oracle = OracleHandle::local(two_point_oracle());
    ContrastIndex index = build_contrast_index(calib, oracle, "g");
    for (std::size_t i = 0; i < calib.size(); ++i) {
        const Example& ex = calib.examples[i];
        for (int cls = 0; cls < index.k; ++cls) {
            if (cls == ex.target) continue;  // the cells the target sum walks
            for (std::size_t member : index.cells.at({cls, ex.bias[0]})) {
                CHECK(member != i);
            }
        }
    }
}

TEST_CASE("within-group target spread grows with feature noise") {
    double prev_gap = -1.0;
    for (double noise : {0.05, 0.3, 0.8}) {
        SyntheticSpec spec;
        spec.variant = SyntheticVariant::BinaryBias;
        spec.n = 400;
        spec.alpha = 0.6;
        spec.feature_dim = 8;
        spec.noise_std = noise;
        spec.seed = 81;
        Dataset calib = generate(spec);

        // linear probe of the bias label acts as a pure bias-channel oracle
        std::vector<int> bias_labels;
        for (const Example& e : calib.examples) bias_labels.push_back(e.bias[0]);
        TrainConfig cfg;
        cfg.loss = Loss::HardLabelCe;
        cfg.epochs = 80;
        cfg.batch_size = 32;
        cfg.seed = 2;
        auto probe = std::make_shared<MlpModel>(
            train(make_mlp({8, 2}, {}, OutputMode::Softmax, 2), calib.feature_matrix(),
                  TrainTargets::hard_labels(bias_labels), cfg));

        OracleHandle oracle = OracleHandle::local(probe);
        ContrastIndex index = build_contrast_index(calib, oracle, "bias");
        DistilledTargets targets = distill_targets(calib, index, oracle);

        // mean within-group pairwise L-inf distance
        double gap = 0.0;
        std::size_t pairs = 0;
        for (int b = 0; b < 2; ++b) {
            std::vector<std::size_t> members;
            for (std::size_t i = 0; i < calib.size(); ++i) {
                if (calib.examples[i].bias[0] == b) members.push_back(i);
            }
            for (std::size_t a = 0; a < members.size(); a += 7) {
                for (std::size_t c = a + 1; c < members.size(); c += 7) {
                    gap += std::fabs(targets.targets[members[a]][0] -
                                     targets.targets[members[c]][0]);
                    ++pairs;
                }
            }
        }
        gap /= static_cast<double>(pairs);
        CHECK(gap >= prev_gap - 1e-6);
        prev_gap = gap;
    }
}

TEST_CASE("patch training converges to constant group targets") {
    SyntheticSpec spec;
    spec.variant = SyntheticVariant::BinaryBias;
    spec.n = 200;
    spec.alpha = 0.9;
    spec.feature_dim = 6;
    spec.noise_std = 0.1;
    spec.seed = 91;
    Dataset calib = generate(spec);

    DistilledTargets targets;
    targets.bias_attr = "bias";
    const ProbVector t0({0.8, 0.2});
    const ProbVector t1({0.3, 0.7});
    for (const Example& e : calib.examples) {
        targets.targets.push_back(e.bias[0] == 0 ? t0 : t1);
    }

    TrainConfig cfg;
    cfg.loss = Loss::SoftTargetKl;
    cfg.epochs = 2000;
    cfg.learning_rate = 3e-3;
    cfg.batch_size = 32;
    cfg.seed = 7;
    PatchArch arch;
    arch.hidden_dims = {8};
    MlpModel patch = train_patch(calib, targets, cfg, arch);
    CHECK(patch.meta.role == "patch");
    CHECK(patch.meta.bias_attr == "bias");

    for (std::size_t i = 0; i < calib.size(); ++i) {
        const ProbVector out = forward_probs(patch, calib.examples[i].features);
        const ProbVector& want = targets.targets[i];
        CHECK(std::fabs(out[0] - want[0]) < 0.02);
        CHECK(std::fabs(out[1] - want[1]) < 0.02);
    }
}

TEST_CASE("zero-epoch patch training returns the initialized model") {
    Dataset calib = four_cell_calibration();
    DistilledTargets targets;
    targets.bias_attr = "g";
    for (std::size_t i = 0; i < calib.size(); ++i) {
        targets.targets.push_back(ProbVector({0.5, 0.5}));
    }
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.batch_size = 1;
    cfg.seed = 1717;
    PatchArch arch;
    arch.hidden_dims = {4};
    MlpModel patch = train_patch(calib, targets, cfg, arch);
    MlpModel fresh = make_mlp({1, 4, 2}, {Activation::Relu}, OutputMode::Softmax, 1717);
    for (std::size_t l = 0; l < patch.num_layers(); ++l) {
        CHECK(patch.weights[l].data == fresh.weights[l].data);
        CHECK(patch.biases[l] == fresh.biases[l]);
    }
}

TEST_CASE("patch training is deterministic in the seed") {
    Dataset calib = four_cell_calibration();
    DistilledTargets targets;
    targets.bias_attr = "g";
    for (std::size_t i = 0; i < calib.size(); ++i) {
        targets.targets.push_back(ProbVector({0.6, 0.4}));
    }
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 2;
    cfg.seed = 5;
    PatchArch arch;
    arch.hidden_dims = {4};
    MlpModel a = train_patch(calib, targets, cfg, arch);
    MlpModel b = train_patch(calib, targets, cfg, arch);
    for (std::size_t l = 0; l < a.num_layers(); ++l) {
        CHECK(a.weights[l].data == b.weights[l].data);
    }
}

TEST_CASE("default patch architecture halves the deployed hidden width") {
    MlpModel deployed = make_mlp({8, 16, 2}, {Activation::Relu}, OutputMode::Softmax, 1);
    PatchArch arch = default_patch_arch(deployed);
    REQUIRE(arch.hidden_dims.size() == 1);
    CHECK(arch.hidden_dims[0] == 8);

    MlpModel linear = make_mlp({8, 2}, {}, OutputMode::Softmax, 1);
    CHECK(default_patch_arch(linear).hidden_dims.empty());
}

TEST_CASE("distilled targets sidecar round trip") {
    DistilledTargets targets;
    targets.bias_attr = "g";
    targets.oracle_id = "local:seed=1,role=deployed";
    targets.seed = 99;
    targets.targets.push_back(ProbVector({0.25, 0.75}));
    targets.targets.push_back(ProbVector({0.5, 0.5}));
    DistilledTargets back = targets_from_json(targets_to_json(targets));
    CHECK(back.bias_attr == "g");
    CHECK(back.oracle_id == targets.oracle_id);
    CHECK(back.seed == 99);
    REQUIRE(back.targets.size() == 2);
    CHECK(back.targets[0][1] == doctest::Approx(0.75).epsilon(1e-12));

    CHECK_THROWS_AS(targets_from_json("{}"), LoadError);
}

TEST_CASE("index built for a different calibration set is rejected") {
    Dataset calib = four_cell_calibration();
    OracleHandle oracle = OracleHandle::local(two_point_oracle());
    ContrastIndex index = build_contrast_index(calib, oracle, "g");
    Dataset other = calib;
    other.examples.push_back(calib.examples[0]);
    CHECK_THROWS_AS(distill_targets(other, index, oracle), ValidationError);
}
