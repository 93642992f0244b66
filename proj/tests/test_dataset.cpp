#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "eraser/dataset.hpp"
#include "eraser/error.hpp"
#include "eraser/nnet.hpp"

using namespace eraser;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("eraser_dataset_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

double aligned_fraction(const Dataset& d, std::size_t attr = 0) {
    std::size_t aligned = 0;
    const int card = d.schema.bias_attrs[attr].cardinality;
    for (const Example& e : d.examples) {
        if (e.bias[attr] == e.target % card) ++aligned;
    }
    return static_cast<double>(aligned) / static_cast<double>(d.size());
}

}  // namespace

TEST_CASE("alpha=1 gives a balanced split") {
    SyntheticSpec spec;
    spec.variant = SyntheticVariant::BinaryBias;
    spec.n = 10000;
    spec.alpha = 1.0;
    spec.seed = 3;
    Dataset d = generate(spec);
    // binomial 3-sigma bound around 0.5
    const double sigma = std::sqrt(0.25 / static_cast<double>(spec.n));
    CHECK(std::fabs(aligned_fraction(d) - 0.5) < 3.0 * sigma);
}

TEST_CASE("alpha=0.05 concentrates the aligned group") {
    SyntheticSpec spec;
    spec.variant = SyntheticVariant::BinaryBias;
    spec.n = 10000;
    spec.alpha = 0.05;
    spec.seed = 7;
    Dataset d = generate(spec);
    const double frac = aligned_fraction(d);  // expectation 1/1.05 ~ 0.952
    CHECK(frac > 0.94);
    CHECK(frac < 0.965);
}

TEST_CASE("bias labels are linearly decodable from the features") {
    SyntheticSpec spec;
    spec.variant = SyntheticVariant::BinaryBias;
    spec.n = 4000;
    spec.alpha = 1.0;
    spec.signal_target = 1.0;
    spec.signal_bias = 1.0;
    spec.noise_std = 0.3;
    spec.seed = 5;
    Dataset d = generate(spec);

    // linear probe on the bias label as the oracle
    std::vector<int> bias_labels;
    for (const Example& e : d.examples) bias_labels.push_back(e.bias[0]);
    TrainConfig cfg;
    cfg.loss = Loss::HardLabelCe;
    cfg.epochs = 60;
    cfg.batch_size = 64;
    cfg.seed = 1;
    MlpModel probe = train(make_mlp({static_cast<std::size_t>(spec.feature_dim), 2}, {},
                                    OutputMode::Softmax, 1),
                           d.feature_matrix(), TrainTargets::hard_labels(bias_labels), cfg);
    std::size_t correct = 0;
    for (const Example& e : d.examples) {
        if (static_cast<int>(forward_probs(probe, e.features).argmax()) == e.bias[0]) ++correct;
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(d.size()) > 0.95);
}

TEST_CASE("generation is deterministic") {
    SyntheticSpec spec;
    spec.variant = SyntheticVariant::TwoBias;
    spec.n = 500;
    spec.alpha = 0.2;
    spec.feature_dim = 10;
    spec.seed = 11;
    Dataset a = generate(spec);
    Dataset b = generate(spec);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.examples[i].features == b.examples[i].features);
        CHECK(a.examples[i].target == b.examples[i].target);
        CHECK(a.examples[i].bias == b.examples[i].bias);
    }
}

TEST_CASE("target marginals are uniform") {
    SyntheticSpec spec;
    spec.variant = SyntheticVariant::Multiclass;
    spec.num_classes = 5;
    spec.n = 10000;
    spec.alpha = 0.1;
    spec.feature_dim = 16;
    spec.seed = 13;
    Dataset d = generate(spec);
    std::vector<std::size_t> counts(5, 0);
    for (const Example& e : d.examples) ++counts[static_cast<std::size_t>(e.target)];
    const double expect = static_cast<double>(spec.n) / 5.0;
    const double sigma = std::sqrt(static_cast<double>(spec.n) * 0.2 * 0.8);
    for (std::size_t c : counts) {
        CHECK(std::fabs(static_cast<double>(c) - expect) < 3.0 * sigma);
    }
}

TEST_CASE("two_bias attributes are conditionally independent given the target") {
    SyntheticSpec spec;
    spec.variant = SyntheticVariant::TwoBias;
    spec.n = 10000;
    spec.alpha = 0.3;
    spec.feature_dim = 10;
    spec.seed = 17;
    Dataset d = generate(spec);

    // chi-square statistic summed over target classes; df = 2, 1% critical 9.21
    double stat = 0.0;
    for (int y = 0; y < 2; ++y) {
        double o[2][2] = {{0, 0}, {0, 0}};
        double total = 0.0;
        for (const Example& e : d.examples) {
            if (e.target != y) continue;
            o[e.bias[0]][e.bias[1]] += 1.0;
            total += 1.0;
        }
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) {
                const double row = o[i][0] + o[i][1];
                const double col = o[0][j] + o[1][j];
                const double expect = row * col / total;
                stat += (o[i][j] - expect) * (o[i][j] - expect) / expect;
            }
        }
    }
    CHECK(stat < 9.21);
}

TEST_CASE("generation preconditions") {
    SyntheticSpec spec;
    spec.variant = SyntheticVariant::BinaryBias;
    spec.n = 10;  // below 4 * (2*2)
    CHECK_THROWS_AS(generate(spec), GenerationError);

    spec.n = 100;
    spec.alpha = 0.0;
    CHECK_THROWS_AS(generate(spec), GenerationError);

    spec.alpha = 0.5;
    spec.feature_dim = 2;  // cannot hold 4 orthogonal prototypes
    CHECK_THROWS_AS(generate(spec), GenerationError);
}

TEST_CASE("balanced generation fills every cell equally") {
    SyntheticSpec spec;
    spec.variant = SyntheticVariant::TwoBias;
    spec.n = 800;
    spec.feature_dim = 10;
    spec.seed = 19;
    Dataset d = generate_balanced(spec);
    CHECK(d.size() == 800);
    std::map<std::vector<int>, std::size_t> counts;
    for (const Example& e : d.examples) {
        counts[{e.target, e.bias[0], e.bias[1]}]++;
    }
    CHECK(counts.size() == 8);
    for (const auto& [_, c] : counts) CHECK(c == 100);
}

TEST_CASE("csv loading of a small fixture") {
    TempDir tmp;
    {
        std::ofstream out(tmp.file("tiny.csv"));
        out << "f0,f1,target,bias:race\n";
        out << "0.5,1.25,0,1\n";
        out << "-2,0.125,1,0\n";
        out << "3.5,-0.25,1,1\n";
    }
    Dataset d = load_csv(tmp.file("tiny.csv"));
    CHECK(d.schema.feature_dim == 2);
    REQUIRE(d.schema.bias_attrs.size() == 1);
    CHECK(d.schema.bias_attrs[0].name == "race");
    CHECK(d.schema.bias_attrs[0].cardinality == 2);
    CHECK(d.schema.num_classes == 2);
    REQUIRE(d.size() == 3);
    CHECK(d.examples[1].features == std::vector<double>{-2.0, 0.125});
    CHECK(d.examples[1].target == 1);
    CHECK(d.examples[1].bias == std::vector<int>{0});
}

TEST_CASE("csv errors carry 1-based line numbers") {
    TempDir tmp;
    {
        std::ofstream out(tmp.file("bad.csv"));
        out << "f0,target,bias:g\n";
        out << "abc,0,1\n";
    }
    try {
        load_csv(tmp.file("bad.csv"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }

    {
        std::ofstream out(tmp.file("no_target.csv"));
        out << "f0,f1,bias:g\n0.0,1.0,0\n";
    }
    CHECK_THROWS_AS(load_csv(tmp.file("no_target.csv")), ValidationError);
}

TEST_CASE("csv round trip is lossless") {
    TempDir tmp;
    SyntheticSpec spec;
    spec.variant = SyntheticVariant::TwoBias;
    spec.n = 120;
    spec.feature_dim = 10;
    spec.seed = 23;
    Dataset d = generate(spec);
    save_csv(d, tmp.file("round.csv"));
    Dataset d2 = load_csv(tmp.file("round.csv"));
    REQUIRE(d2.size() == d.size());
    CHECK(d2.schema.feature_dim == d.schema.feature_dim);
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(d2.examples[i].features == d.examples[i].features);  // exact
        CHECK(d2.examples[i].target == d.examples[i].target);
        CHECK(d2.examples[i].bias == d.examples[i].bias);
    }
    // saving the loaded dataset reproduces the file byte for byte
    save_csv(d2, tmp.file("round2.csv"));
    std::ifstream a(tmp.file("round.csv")), b(tmp.file("round2.csv"));
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
}

TEST_CASE("cardinality hints override inference") {
    TempDir tmp;
    {
        std::ofstream out(tmp.file("hint.csv"));
        out << "f0,target,bias:g\n1.0,0,0\n2.0,1,1\n";
    }
    CsvHints hints;
    hints.num_classes = 3;
    hints.bias_cardinality["g"] = 4;
    Dataset d = load_csv(tmp.file("hint.csv"), hints);
    CHECK(d.schema.num_classes == 3);
    CHECK(d.schema.bias_attrs[0].cardinality == 4);

    hints.num_classes = 1;  // smaller than observed labels
    CHECK_THROWS_AS(load_csv(tmp.file("hint.csv"), hints), ValidationError);
}

TEST_CASE("split sizes and determinism") {
    SyntheticSpec spec;
    spec.variant = SyntheticVariant::BinaryBias;
    spec.n = 1200;
    spec.seed = 29;
    Dataset d = generate(spec);

    auto [train_set, calib] = split_calibration(d, 1.0 / 6.0, 42);
    CHECK(train_set.size() == 1000);
    CHECK(calib.size() == 200);

    auto [train2, calib2] = split_calibration(d, 1.0 / 6.0, 42);
    for (std::size_t i = 0; i < calib.size(); ++i) {
        CHECK(calib.examples[i].features == calib2.examples[i].features);
    }

    // disjoint union of the original examples: match on unique feature rows
    std::set<std::vector<double>> seen;
    for (const Example& e : train_set.examples) seen.insert(e.features);
    for (const Example& e : calib.examples) {
        CHECK(seen.find(e.features) == seen.end());
        seen.insert(e.features);
    }
    CHECK(seen.size() == d.size());

    CHECK_THROWS_AS(split_calibration(d, 0.0, 1), SplitError);
    CHECK_THROWS_AS(split_calibration(d, 1.0, 1), SplitError);
}

TEST_CASE("group_index partitions exhaustively") {
    Dataset d;
    d.schema.num_classes = 2;
    d.schema.bias_attrs = {{"g", 2}};
    d.schema.feature_dim = 1;
    for (int y = 0; y < 2; ++y) {
        for (int b = 0; b < 2; ++b) {
            for (int r = 0; r < 2; ++r) {
                d.examples.push_back({{0.0}, y, {b}});
            }
        }
    }
    auto cells = group_index(d, "g");
    CHECK(cells.size() == 4);
    std::size_t total = 0;
    for (const auto& [cell, members] : cells) {
        CHECK(members.size() == 2);
        total += members.size();
    }
    CHECK(total == d.size());

    // empty cells are present with empty lists, not absent
    Dataset sparse = d;
    sparse.examples.erase(
        std::remove_if(sparse.examples.begin(), sparse.examples.end(),
                       [](const Example& e) { return e.target == 1 && e.bias[0] == 0; }),
        sparse.examples.end());
    auto cells2 = group_index(sparse, "g");
    CHECK(cells2.size() == 4);
    CHECK(cells2.at({1, 0}).empty());

    CHECK_THROWS_AS(group_index(d, "nope"), ValidationError);
}
