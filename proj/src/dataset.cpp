#include "eraser/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "eraser/error.hpp"
#include "eraser/rng.hpp"

namespace eraser {

namespace {

using json = nlohmann::ordered_json;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Orthonormal prototype family drawn from the seed: one vector per target
// class followed by one per bias value of each attribute.
std::vector<std::vector<double>> make_prototypes(std::size_t count, std::size_t dim, Rng& rng) {
    if (count > dim) {
        throw GenerationError("feature_dim " + std::to_string(dim) +
                              " too small for " + std::to_string(count) +
                              " orthogonal prototypes");
    }
    std::vector<std::vector<double>> protos;
    protos.reserve(count);
    for (std::size_t p = 0; p < count; ++p) {
        std::vector<double> v(dim);
        for (double& x : v) x = rng.gaussian();
        // Gram-Schmidt against the accepted prototypes
        for (const auto& u : protos) {
            double dot = 0.0;
            for (std::size_t i = 0; i < dim; ++i) dot += v[i] * u[i];
            for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * u[i];
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-8) throw GenerationError("degenerate prototype draw");
        for (double& x : v) x /= norm;
        protos.push_back(std::move(v));
    }
    return protos;
}

struct GenLayout {
    TaskSchema schema;
    std::vector<std::vector<double>> target_protos;
    std::vector<std::vector<std::vector<double>>> bias_protos;  // per attribute, per value
};

GenLayout make_layout(const SyntheticSpec& spec, Rng& rng) {
    GenLayout lay;
    switch (spec.variant) {
        case SyntheticVariant::BinaryBias:
            lay.schema.num_classes = 2;
            lay.schema.bias_attrs = {{"bias", 2}};
            break;
        case SyntheticVariant::Multiclass:
            if (spec.num_classes < 2) throw GenerationError("multiclass needs num_classes >= 2");
            lay.schema.num_classes = spec.num_classes;
            lay.schema.bias_attrs = {{"bias", spec.num_classes}};
            break;
        case SyntheticVariant::TwoBias:
            lay.schema.num_classes = 2;
            lay.schema.bias_attrs = {{"bias_a", 2}, {"bias_b", 2}};
            break;
    }
    lay.schema.feature_dim = spec.feature_dim;

    std::size_t proto_count = static_cast<std::size_t>(lay.schema.num_classes);
    for (const BiasAttr& a : lay.schema.bias_attrs) {
        proto_count += static_cast<std::size_t>(a.cardinality);
    }
    auto protos = make_prototypes(proto_count, static_cast<std::size_t>(spec.feature_dim), rng);

    std::size_t at = 0;
    lay.target_protos.assign(protos.begin(), protos.begin() + lay.schema.num_classes);
    at += static_cast<std::size_t>(lay.schema.num_classes);
    for (const BiasAttr& a : lay.schema.bias_attrs) {
        lay.bias_protos.emplace_back(protos.begin() + at, protos.begin() + at + a.cardinality);
        at += static_cast<std::size_t>(a.cardinality);
    }
    return lay;
}

void validate_spec(const SyntheticSpec& spec, const TaskSchema& schema) {
    if (spec.alpha <= 0.0 || spec.alpha > 1.0) {
        throw GenerationError("alpha must lie in (0, 1]");
    }
    if (spec.noise_std <= 0.0) throw GenerationError("noise_std must be positive");
    std::size_t cells = static_cast<std::size_t>(schema.num_classes);
    for (const BiasAttr& a : schema.bias_attrs) cells *= static_cast<std::size_t>(a.cardinality);
    if (spec.n < 4 * cells) {
        throw GenerationError("n=" + std::to_string(spec.n) + " too small: need at least 4*" +
                              std::to_string(cells) + " so every group cell is populated");
    }
}

Example draw_example(const GenLayout& lay, const SyntheticSpec& spec, int y,
                     const std::vector<int>& bias, Rng& rng) {
    Example ex;
    ex.target = y;
    ex.bias = bias;
    ex.features.assign(static_cast<std::size_t>(spec.feature_dim), 0.0);
    for (std::size_t i = 0; i < ex.features.size(); ++i) {
        double v = spec.signal_target * lay.target_protos[static_cast<std::size_t>(y)][i];
        for (std::size_t a = 0; a < bias.size(); ++a) {
            v += spec.signal_bias * lay.bias_protos[a][static_cast<std::size_t>(bias[a])][i];
        }
        ex.features[i] = v + spec.noise_std * rng.gaussian();
    }
    return ex;
}

void stamp_provenance(Dataset& d, const SyntheticSpec& spec, bool balanced) {
    d.provenance["seed"] = std::to_string(spec.seed);
    if (spec.sample_seed) d.provenance["sample_seed"] = std::to_string(*spec.sample_seed);
    d.provenance["alpha"] = format_double(spec.alpha);
    d.provenance["variant"] = to_string(spec.variant);
    d.provenance["noise_std"] = format_double(spec.noise_std);
    d.provenance["signal_target"] = format_double(spec.signal_target);
    d.provenance["signal_bias"] = format_double(spec.signal_bias);
    if (balanced) d.provenance["balanced"] = "true";
}

}  // namespace

int TaskSchema::bias_attr_index(const std::string& name) const {
    for (std::size_t i = 0; i < bias_attrs.size(); ++i) {
        if (bias_attrs[i].name == name) return static_cast<int>(i);
    }
    return -1;
}

std::vector<std::vector<double>> Dataset::feature_matrix() const {
    std::vector<std::vector<double>> X;
    X.reserve(examples.size());
    for (const Example& e : examples) X.push_back(e.features);
    return X;
}

std::string to_string(SyntheticVariant v) {
    switch (v) {
        case SyntheticVariant::BinaryBias: return "binary_bias";
        case SyntheticVariant::Multiclass: return "multiclass";
        case SyntheticVariant::TwoBias: return "two_bias";
    }
    return "?";
}

SyntheticVariant variant_from_string(const std::string& s) {
    if (s == "binary_bias") return SyntheticVariant::BinaryBias;
    if (s == "multiclass") return SyntheticVariant::Multiclass;
    if (s == "two_bias") return SyntheticVariant::TwoBias;
    throw InvalidInputError("unknown synthetic variant: " + s);
}

Dataset generate(const SyntheticSpec& spec) {
    Rng proto_rng(spec.seed);
    GenLayout lay = make_layout(spec, proto_rng);
    validate_spec(spec, lay.schema);
    Rng rng(spec.sample_seed.value_or(spec.seed));

    const double aligned_prob = 1.0 / (1.0 + spec.alpha);
    Dataset d;
    d.schema = lay.schema;
    d.examples.reserve(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) {
        const int y = static_cast<int>(rng.uniform_int(
            static_cast<std::uint64_t>(lay.schema.num_classes)));
        std::vector<int> bias;
        for (const BiasAttr& attr : lay.schema.bias_attrs) {
            const int aligned = y % attr.cardinality;
            int b = aligned;
            if (rng.uniform() >= aligned_prob) {
                // uniform over the remaining values
                const int off = 1 + static_cast<int>(rng.uniform_int(
                                        static_cast<std::uint64_t>(attr.cardinality - 1)));
                b = (aligned + off) % attr.cardinality;
            }
            bias.push_back(b);
        }
        d.examples.push_back(draw_example(lay, spec, y, bias, rng));
    }
    stamp_provenance(d, spec, /*balanced=*/false);
    return d;
}

Dataset generate_balanced(const SyntheticSpec& spec) {
    Rng proto_rng(spec.seed);
    GenLayout lay = make_layout(spec, proto_rng);
    validate_spec(spec, lay.schema);
    Rng rng(spec.sample_seed.value_or(spec.seed));

    std::size_t cells = static_cast<std::size_t>(lay.schema.num_classes);
    for (const BiasAttr& a : lay.schema.bias_attrs) cells *= static_cast<std::size_t>(a.cardinality);
    const std::size_t per_cell = spec.n / cells;
    if (per_cell == 0) throw GenerationError("n too small for one example per group cell");

    Dataset d;
    d.schema = lay.schema;
    d.examples.reserve(per_cell * cells);
    // enumerate cells in row-major (target, bias...) order
    std::vector<int> bias(lay.schema.bias_attrs.size(), 0);
    for (int y = 0; y < lay.schema.num_classes; ++y) {
        std::fill(bias.begin(), bias.end(), 0);
        while (true) {
            for (std::size_t rep = 0; rep < per_cell; ++rep) {
                d.examples.push_back(draw_example(lay, spec, y, bias, rng));
            }
            std::size_t a = 0;
            for (; a < bias.size(); ++a) {
                if (++bias[a] < lay.schema.bias_attrs[a].cardinality) break;
                bias[a] = 0;
            }
            if (a == bias.size()) break;
        }
    }
    stamp_provenance(d, spec, /*balanced=*/true);
    return d;
}

std::pair<Dataset, Dataset> split_calibration(const Dataset& data, double fraction,
                                              std::uint64_t seed) {
    if (fraction <= 0.0 || fraction >= 1.0) throw SplitError("fraction must lie in (0, 1)");
    const std::size_t n = data.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    const std::size_t n_train =
        static_cast<std::size_t>(static_cast<double>(n) * (1.0 - fraction));
    if (n_train == 0 || n_train == n) throw SplitError("split leaves one side empty");

    std::vector<std::size_t> train_idx(order.begin(), order.begin() + n_train);
    std::vector<std::size_t> calib_idx(order.begin() + n_train, order.end());
    // keep original dataset order within each side
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(calib_idx.begin(), calib_idx.end());

    auto take = [&](const std::vector<std::size_t>& idx, const char* side) {
        Dataset out;
        out.schema = data.schema;
        out.provenance = data.provenance;
        out.provenance["split_side"] = side;
        out.provenance["split_seed"] = std::to_string(seed);
        out.examples.reserve(idx.size());
        for (std::size_t i : idx) out.examples.push_back(data.examples[i]);
        return out;
    };
    return {take(train_idx, "deploy_train"), take(calib_idx, "calibration")};
}

std::map<std::pair<int, int>, std::vector<std::size_t>> group_index(const Dataset& data,
                                                                    const std::string& bias_attr) {
    const int attr = data.schema.bias_attr_index(bias_attr);
    if (attr < 0) throw ValidationError("unknown bias attribute: " + bias_attr);

    std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
    for (int y = 0; y < data.schema.num_classes; ++y) {
        for (int b = 0; b < data.schema.bias_attrs[static_cast<std::size_t>(attr)].cardinality;
             ++b) {
            cells[{y, b}];  // empty cells are present, not absent
        }
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Example& e = data.examples[i];
        cells[{e.target, e.bias[static_cast<std::size_t>(attr)]}].push_back(i);
    }
    return cells;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& tok, std::size_t line_no, const std::string& col) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(tok, &used);
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": non-numeric value '" + tok +
                         "' in column " + col);
    }
    if (used != tok.size()) {
        throw ParseError("line " + std::to_string(line_no) + ": trailing junk in '" + tok +
                         "' in column " + col);
    }
    return v;
}

int parse_label(const std::string& tok, std::size_t line_no, const std::string& col) {
    const double v = parse_double(tok, line_no, col);
    const int i = static_cast<int>(v);
    if (static_cast<double>(i) != v || i < 0) {
        throw ParseError("line " + std::to_string(line_no) + ": label in column " + col +
                         " must be a nonnegative integer, got '" + tok + "'");
    }
    return i;
}

}  // namespace

Dataset load_csv(const std::string& path, const CsvHints& hints) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);

    std::string header;
    if (!std::getline(in, header)) throw ParseError("empty file: " + path);
    const std::vector<std::string> cols = split_line(header);

    std::vector<std::size_t> feature_cols;
    std::vector<std::pair<std::size_t, std::string>> bias_cols;
    int target_col = -1;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (cols[i] == "target") {
            target_col = static_cast<int>(i);
        } else if (cols[i].rfind("bias:", 0) == 0) {
            bias_cols.emplace_back(i, cols[i].substr(5));
        } else {
            feature_cols.push_back(i);
        }
    }
    if (target_col < 0) throw ValidationError("missing target column in " + path);
    if (feature_cols.empty()) throw ValidationError("no feature columns in " + path);

    Dataset d;
    d.schema.feature_dim = static_cast<int>(feature_cols.size());
    for (const auto& [_, name] : bias_cols) d.schema.bias_attrs.push_back({name, 2});
    d.provenance["source"] = path;

    int max_target = -1;
    std::vector<int> max_bias(bias_cols.size(), -1);
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::vector<std::string> toks = split_line(line);
        if (toks.size() != cols.size()) {
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(cols.size()) + " fields, got " +
                             std::to_string(toks.size()));
        }
        Example ex;
        ex.features.reserve(feature_cols.size());
        for (std::size_t c : feature_cols) {
            ex.features.push_back(parse_double(toks[c], line_no, cols[c]));
        }
        ex.target = parse_label(toks[static_cast<std::size_t>(target_col)], line_no, "target");
        max_target = std::max(max_target, ex.target);
        for (std::size_t bi = 0; bi < bias_cols.size(); ++bi) {
            const int b = parse_label(toks[bias_cols[bi].first], line_no, cols[bias_cols[bi].first]);
            max_bias[bi] = std::max(max_bias[bi], b);
            ex.bias.push_back(b);
        }
        d.examples.push_back(std::move(ex));
    }
    if (d.examples.empty()) throw ValidationError("no data rows in " + path);

    d.schema.num_classes = hints.num_classes.value_or(std::max(max_target + 1, 2));
    for (std::size_t bi = 0; bi < bias_cols.size(); ++bi) {
        auto it = hints.bias_cardinality.find(bias_cols[bi].second);
        d.schema.bias_attrs[bi].cardinality =
            it != hints.bias_cardinality.end() ? it->second : std::max(max_bias[bi] + 1, 2);
    }

    // hints must cover the observed labels
    for (std::size_t i = 0; i < d.examples.size(); ++i) {
        const Example& e = d.examples[i];
        if (e.target >= d.schema.num_classes) {
            throw ValidationError("target label " + std::to_string(e.target) +
                                  " exceeds num_classes hint");
        }
        for (std::size_t bi = 0; bi < e.bias.size(); ++bi) {
            if (e.bias[bi] >= d.schema.bias_attrs[bi].cardinality) {
                throw ValidationError("bias label exceeds cardinality hint for attribute " +
                                      d.schema.bias_attrs[bi].name);
            }
        }
    }
    return d;
}

void save_csv(const Dataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    for (int i = 0; i < data.schema.feature_dim; ++i) {
        out << 'f' << i << ',';
    }
    out << "target";
    for (const BiasAttr& a : data.schema.bias_attrs) out << ",bias:" << a.name;
    out << '\n';
    for (const Example& e : data.examples) {
        for (double v : e.features) out << format_double(v) << ',';
        out << e.target;
        for (int b : e.bias) out << ',' << b;
        out << '\n';
    }
    if (!out) throw Error("failed writing " + path);
}

std::string dataset_meta_json(const Dataset& data) {
    json doc;
    for (const auto& [k, v] : data.provenance) doc[k] = v;
    json schema;
    schema["num_classes"] = data.schema.num_classes;
    schema["feature_dim"] = data.schema.feature_dim;
    json attrs = json::array();
    for (const BiasAttr& a : data.schema.bias_attrs) {
        attrs.push_back({{"name", a.name}, {"cardinality", a.cardinality}});
    }
    schema["bias_attrs"] = std::move(attrs);
    doc["schema"] = std::move(schema);
    doc["n"] = data.size();
    return doc.dump(2);
}

}  // namespace eraser
