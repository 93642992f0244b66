// eraser: end-to-end debiasing workflows for deployed black-box classifiers.
//
// Subcommands: gen-data, train-deployed, distill, evaluate, erase, serve,
// serve-oracle. Every artifact embeds the seeds and input digests it was
// produced from, and re-running a subcommand with identical inputs writes
// byte-identical files.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "eraser/dataset.hpp"
#include "eraser/digest.hpp"
#include "eraser/distill.hpp"
#include "eraser/error.hpp"
#include "eraser/metrics.hpp"
#include "eraser/nnet.hpp"
#include "eraser/oracle.hpp"
#include "eraser/prob.hpp"
#include "eraser/proxy.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace eraser;

namespace {

volatile std::sig_atomic_t g_shutdown = 0;
void handle_signal(int) { g_shutdown = 1; }

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    out << bytes;
    if (!out) throw Error("failed writing " + path);
}

std::string file_digest(const std::string& path) { return fnv1a64_hex(read_file(path)); }

// ---- run configuration ------------------------------------------------------

struct TrainSettings {
    std::string loss = "hard_label_ce";
    std::vector<std::size_t> hidden{16};
    std::string activation = "relu";
    std::string output_mode = "softmax";
    std::size_t epochs = 200;
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    std::string optimizer = "adam";
    double l2 = 0.0;
};

struct GenSettings {
    std::string variant = "binary_bias";
    std::size_t n = 12000;
    int feature_dim = 6;
    double noise_std = 1.0;
    double signal_target = 1.0;
    double signal_bias = 4.0;
    int num_classes = 2;
    bool balanced = false;
    std::uint64_t sample_seed = 0;  // 0 = draw with the master seed
};

struct ServeSettings {
    std::string listen = "127.0.0.1:8080";
    std::string normalize_policy = "renormalize";
    int timeout_ms = 5000;
    int max_inflight = 64;
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string out = "out";
    double split_fraction = 1.0 / 6.0;
    double alpha = 0.05;
    std::vector<std::string> bias_attrs;  // empty = every attribute in the schema
    std::string oracle_url;
    GenSettings gen;
    TrainSettings deployed;
    TrainSettings patch;
    ServeSettings serve;

    RunConfig() { patch.hidden = {8}; }
};

void merge_train(const json& node, TrainSettings& t) {
    if (node.contains("loss")) t.loss = node["loss"].get<std::string>();
    if (node.contains("hidden")) t.hidden = node["hidden"].get<std::vector<std::size_t>>();
    if (node.contains("activation")) t.activation = node["activation"].get<std::string>();
    if (node.contains("output_mode")) t.output_mode = node["output_mode"].get<std::string>();
    if (node.contains("epochs")) t.epochs = node["epochs"].get<std::size_t>();
    if (node.contains("learning_rate")) t.learning_rate = node["learning_rate"].get<double>();
    if (node.contains("batch_size")) t.batch_size = node["batch_size"].get<std::size_t>();
    if (node.contains("optimizer")) t.optimizer = node["optimizer"].get<std::string>();
    if (node.contains("l2")) t.l2 = node["l2"].get<double>();
}

RunConfig load_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
    }
    if (doc.contains("seed")) cfg.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("out")) cfg.out = doc["out"].get<std::string>();
    if (doc.contains("split_fraction")) cfg.split_fraction = doc["split_fraction"].get<double>();
    if (doc.contains("alpha")) cfg.alpha = doc["alpha"].get<double>();
    if (doc.contains("bias_attrs")) {
        cfg.bias_attrs = doc["bias_attrs"].get<std::vector<std::string>>();
    }
    if (doc.contains("oracle_url")) cfg.oracle_url = doc["oracle_url"].get<std::string>();
    if (doc.contains("gen")) {
        const json& g = doc["gen"];
        if (g.contains("variant")) cfg.gen.variant = g["variant"].get<std::string>();
        if (g.contains("n")) cfg.gen.n = g["n"].get<std::size_t>();
        if (g.contains("feature_dim")) cfg.gen.feature_dim = g["feature_dim"].get<int>();
        if (g.contains("noise_std")) cfg.gen.noise_std = g["noise_std"].get<double>();
        if (g.contains("signal_target")) cfg.gen.signal_target = g["signal_target"].get<double>();
        if (g.contains("signal_bias")) cfg.gen.signal_bias = g["signal_bias"].get<double>();
        if (g.contains("num_classes")) cfg.gen.num_classes = g["num_classes"].get<int>();
        if (g.contains("balanced")) cfg.gen.balanced = g["balanced"].get<bool>();
        if (g.contains("sample_seed")) cfg.gen.sample_seed = g["sample_seed"].get<std::uint64_t>();
    }
    if (doc.contains("deployed")) merge_train(doc["deployed"], cfg.deployed);
    if (doc.contains("patch")) merge_train(doc["patch"], cfg.patch);
    if (doc.contains("serve")) {
        const json& sv = doc["serve"];
        if (sv.contains("listen")) cfg.serve.listen = sv["listen"].get<std::string>();
        if (sv.contains("normalize_policy")) {
            cfg.serve.normalize_policy = sv["normalize_policy"].get<std::string>();
        }
        if (sv.contains("timeout_ms")) cfg.serve.timeout_ms = sv["timeout_ms"].get<int>();
        if (sv.contains("max_inflight")) cfg.serve.max_inflight = sv["max_inflight"].get<int>();
    }
    return cfg;
}

TrainConfig to_train_config(const TrainSettings& t, std::uint64_t seed, std::size_t n) {
    TrainConfig cfg;
    cfg.loss = loss_from_string(t.loss);
    cfg.learning_rate = t.learning_rate;
    cfg.epochs = t.epochs;
    cfg.batch_size = std::min(t.batch_size, n);  // small calibration sets
    cfg.seed = seed;
    cfg.optimizer = t.optimizer == "sgd" ? OptimizerKind::Sgd : OptimizerKind::Adam;
    cfg.l2 = t.l2;
    return cfg;
}

std::vector<std::string> resolve_bias_attrs(const Dataset& data,
                                            const std::vector<std::string>& requested) {
    if (!requested.empty()) return requested;
    std::vector<std::string> all;
    for (const BiasAttr& a : data.schema.bias_attrs) all.push_back(a.name);
    if (all.empty()) throw ConfigError("dataset has no bias attributes");
    return all;
}

OracleHandle make_oracle(const std::string& url, const std::string& model_path, int k_hint) {
    if (!url.empty() && !model_path.empty()) {
        throw ConfigError("pass either --oracle-url or --oracle-model, not both");
    }
    if (!url.empty()) {
        RemoteConfig rc;
        rc.base_url = url;
        apply_env_overrides(rc);
        if (k_hint < 2) throw ConfigError("remote oracles need --k (class count)");
        return OracleHandle::remote(rc, k_hint);
    }
    if (model_path.empty()) throw ConfigError("an oracle is required: --oracle-url or --oracle-model");
    auto model = std::make_shared<MlpModel>(load_model_file(model_path));
    return OracleHandle::local(std::move(model));
}

// features-only reader for the erase subcommand: label columns are optional
// and ignored
std::vector<std::vector<double>> load_feature_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::string header;
    if (!std::getline(in, header)) throw ParseError("empty file: " + path);
    std::vector<std::size_t> feature_cols;
    std::stringstream hs(header);
    std::string col;
    std::size_t idx = 0;
    while (std::getline(hs, col, ',')) {
        if (!col.empty() && col.back() == '\r') col.pop_back();
        if (col != "target" && col.rfind("bias:", 0) != 0) feature_cols.push_back(idx);
        ++idx;
    }
    if (feature_cols.empty()) throw ValidationError("no feature columns in " + path);

    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> toks;
        std::stringstream ls(line);
        std::string tok;
        while (std::getline(ls, tok, ',')) {
            if (!tok.empty() && tok.back() == '\r') tok.pop_back();
            toks.push_back(tok);
        }
        std::vector<double> row;
        row.reserve(feature_cols.size());
        for (std::size_t c : feature_cols) {
            if (c >= toks.size()) {
                throw ParseError("line " + std::to_string(line_no) + ": too few fields");
            }
            try {
                row.push_back(std::stod(toks[c]));
            } catch (const std::exception&) {
                throw ParseError("line " + std::to_string(line_no) + ": non-numeric value '" +
                                 toks[c] + "'");
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---- subcommand bodies ------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg) {
    SyntheticSpec spec;
    spec.variant = variant_from_string(cfg.gen.variant);
    spec.n = cfg.gen.n;
    spec.alpha = cfg.alpha;
    spec.feature_dim = cfg.gen.feature_dim;
    spec.signal_target = cfg.gen.signal_target;
    spec.signal_bias = cfg.gen.signal_bias;
    spec.noise_std = cfg.gen.noise_std;
    spec.seed = cfg.seed;
    spec.num_classes = cfg.gen.num_classes;
    if (cfg.gen.sample_seed != 0) spec.sample_seed = cfg.gen.sample_seed;

    Dataset data = cfg.gen.balanced ? generate_balanced(spec) : generate(spec);
    const std::string csv_path = (fs::path(cfg.out) / "dataset.csv").string();
    fs::create_directories(cfg.out);
    save_csv(data, csv_path);
    data.provenance["csv_digest"] = file_digest(csv_path);
    write_file((fs::path(cfg.out) / "dataset.meta.json").string(), dataset_meta_json(data));
    std::cout << "wrote " << csv_path << " (" << data.size() << " examples)\n";
    return 0;
}

int cmd_train_deployed(const RunConfig& cfg, const std::string& data_path, bool no_split,
                       const std::string& multitask_attr) {
    Dataset full = load_csv(data_path);
    Dataset train_side = full;
    if (!no_split) {
        auto [deploy_train, calibration] = split_calibration(full, cfg.split_fraction, cfg.seed);
        train_side = std::move(deploy_train);
    }

    std::vector<std::size_t> dims{static_cast<std::size_t>(train_side.schema.feature_dim)};
    for (std::size_t h : cfg.deployed.hidden) dims.push_back(h);
    dims.push_back(static_cast<std::size_t>(train_side.schema.num_classes));
    std::vector<Activation> acts(cfg.deployed.hidden.size(),
                                 activation_from_string(cfg.deployed.activation));

    MlpModel model = make_mlp(std::move(dims), std::move(acts),
                              output_mode_from_string(cfg.deployed.output_mode), cfg.seed);

    TrainConfig tc = to_train_config(cfg.deployed, cfg.seed, train_side.size());
    TrainTargets targets;
    if (tc.loss == Loss::MultitaskCe) {
        const std::string attr = multitask_attr.empty()
                                     ? resolve_bias_attrs(train_side, cfg.bias_attrs).front()
                                     : multitask_attr;
        const int ai = train_side.schema.bias_attr_index(attr);
        if (ai < 0) throw ConfigError("unknown bias attribute for multitask head: " + attr);
        std::vector<std::pair<int, int>> pairs;
        for (const Example& e : train_side.examples) {
            pairs.push_back({e.target, e.bias[static_cast<std::size_t>(ai)]});
        }
        add_aux_head(model,
                     static_cast<std::size_t>(
                         train_side.schema.bias_attrs[static_cast<std::size_t>(ai)].cardinality),
                     cfg.seed + 1);
        targets = TrainTargets::multitask_labels(std::move(pairs));
    } else if (tc.loss == Loss::HardLabelCe) {
        std::vector<int> labels;
        for (const Example& e : train_side.examples) labels.push_back(e.target);
        targets = TrainTargets::hard_labels(std::move(labels));
    } else {
        throw ConfigError("train-deployed supports hard_label_ce or multitask_ce");
    }

    model = train(std::move(model), train_side.feature_matrix(), targets, tc);
    model.meta.seed = cfg.seed;
    model.meta.role = "deployed";
    model.meta.trained_on = "csv:" + file_digest(data_path) +
                            (no_split ? "" : ",split=" + std::to_string(cfg.split_fraction));
    const std::string out_path = (fs::path(cfg.out) / "deployed.json").string();
    write_file(out_path, save_model(model));
    std::cout << "wrote " << out_path << " (trained on " << train_side.size() << " examples)\n";
    return 0;
}

int cmd_distill(const RunConfig& cfg, const std::string& data_path, bool no_split,
                const std::string& oracle_model, int k_hint,
                const std::vector<std::size_t>& patch_hidden_flag) {
    Dataset full = load_csv(data_path);
    Dataset calibration = full;
    if (!no_split) {
        auto [deploy_train, calib] = split_calibration(full, cfg.split_fraction, cfg.seed);
        calibration = std::move(calib);
    }

    OracleHandle oracle = make_oracle(cfg.oracle_url, oracle_model, k_hint);
    oracle.enable_cache(true);  // every calibration point is queried once

    PatchArch arch;
    if (!patch_hidden_flag.empty()) {
        arch.hidden_dims = patch_hidden_flag;
    } else if (oracle.is_local()) {
        arch = default_patch_arch(*oracle.local_model());
    } else {
        arch.hidden_dims = cfg.patch.hidden;
    }
    arch.activation = activation_from_string(cfg.patch.activation);

    fs::create_directories(cfg.out);
    for (const std::string& attr : resolve_bias_attrs(calibration, cfg.bias_attrs)) {
        ContrastIndex index = build_contrast_index(calibration, oracle, attr);
        DistilledTargets targets = distill_targets(calibration, index, oracle);
        targets.seed = cfg.seed;

        TrainConfig tc = to_train_config(cfg.patch, cfg.seed, calibration.size());
        tc.loss = Loss::SoftTargetKl;
        MlpModel patch = train_patch(calibration, targets, tc, arch);
        patch.meta.seed = cfg.seed;

        const std::string patch_path = (fs::path(cfg.out) / ("patch_" + attr + ".json")).string();
        const std::string targets_path =
            (fs::path(cfg.out) / ("targets_" + attr + ".json")).string();
        write_file(patch_path, save_model(patch));
        write_file(targets_path, targets_to_json(targets));
        std::cout << "wrote " << patch_path << " (calibration n=" << calibration.size() << ")\n";
    }
    return 0;
}

json evaluation_metadata(const RunConfig& cfg, const std::string& data_path,
                         const OracleHandle& oracle, const std::vector<std::string>& patches) {
    json meta;
    meta["seed"] = std::to_string(cfg.seed);
    meta["data"] = data_path;
    meta["data_digest"] = file_digest(data_path);
    meta["oracle"] = oracle.describe();
    json plist = json::array();
    for (const std::string& p : patches) plist.push_back(p + ":" + file_digest(p));
    meta["patches"] = std::move(plist);
    return meta;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& data_path,
                 const std::string& oracle_model, int k_hint,
                 const std::vector<std::string>& patch_paths) {
    Dataset eval_set = load_csv(data_path);
    OracleHandle oracle = make_oracle(cfg.oracle_url, oracle_model, k_hint);

    std::vector<MlpModel> patches;
    for (const std::string& p : patch_paths) patches.push_back(load_model_file(p));

    const std::vector<ProbVector> raw = oracle.query_batch(eval_set.feature_matrix());
    std::vector<ProbVector> fair;
    fair.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        std::vector<ProbVector> rules;
        for (const MlpModel& patch : patches) {
            rules.push_back(forward_probs(patch, eval_set.examples[i].features));
        }
        fair.push_back(erase_multi(raw[i], rules));
    }

    MetricsReport before = evaluate(make_predictions(eval_set, raw), eval_set.schema);
    MetricsReport after = evaluate(make_predictions(eval_set, fair), eval_set.schema);
    const json meta = evaluation_metadata(cfg, data_path, oracle, patch_paths);
    for (auto& [k, v] : meta.items()) {
        before.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
        after.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
    DeltaReport delta = compare(before, after);

    fs::create_directories(cfg.out);
    write_file((fs::path(cfg.out) / "report_before.json").string(), report_to_json(before));
    write_file((fs::path(cfg.out) / "report_after.json").string(), report_to_json(after));
    write_file((fs::path(cfg.out) / "report_delta.json").string(), delta_to_json(delta));
    const std::string table = report_table({{"before", before}, {"after", after}});
    write_file((fs::path(cfg.out) / "report_table.txt").string(), table);
    std::cout << table;
    return 0;
}

int cmd_erase(const RunConfig& cfg, const std::string& inputs_path,
              const std::string& oracle_model, int k_hint,
              const std::vector<std::string>& patch_paths) {
    const std::vector<std::vector<double>> inputs = load_feature_rows(inputs_path);
    OracleHandle oracle = make_oracle(cfg.oracle_url, oracle_model, k_hint);
    std::vector<MlpModel> patches;
    for (const std::string& p : patch_paths) patches.push_back(load_model_file(p));

    const std::vector<ProbVector> raw = oracle.query_batch(inputs);
    json raw_rows = json::array(), fair_rows = json::array();
    json argmax_raw = json::array(), argmax_fair = json::array();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        std::vector<ProbVector> rules;
        for (const MlpModel& patch : patches) rules.push_back(forward_probs(patch, inputs[i]));
        const ProbVector fair = erase_multi(raw[i], rules);
        raw_rows.push_back(raw[i].values());
        fair_rows.push_back(fair.values());
        argmax_raw.push_back(raw[i].argmax());
        argmax_fair.push_back(fair.argmax());
    }
    json doc;
    doc["raw"] = std::move(raw_rows);
    doc["fair"] = std::move(fair_rows);
    doc["argmax_raw"] = std::move(argmax_raw);
    doc["argmax_fair"] = std::move(argmax_fair);
    doc["metadata"] = evaluation_metadata(cfg, inputs_path, oracle, patch_paths);
    const std::string out_path = (fs::path(cfg.out) / "erased.json").string();
    write_file(out_path, doc.dump(2));
    std::cout << "wrote " << out_path << " (" << inputs.size() << " inputs)\n";
    return 0;
}

std::pair<std::string, int> split_listen(const std::string& listen) {
    const auto colon = listen.rfind(':');
    if (colon == std::string::npos) throw ConfigError("--listen expects host:port");
    return {listen.substr(0, colon), std::stoi(listen.substr(colon + 1))};
}

int cmd_serve(const RunConfig& cfg, const std::string& upstream_model,
              const std::vector<std::string>& patch_paths) {
    ProxyConfig pc;
    std::tie(pc.listen_addr, pc.port) = split_listen(cfg.serve.listen);
    pc.upstream_url = cfg.oracle_url;
    pc.upstream_model_path = upstream_model;
    pc.patch_paths = patch_paths;
    pc.normalize_policy = normalize_policy_from_string(cfg.serve.normalize_policy);
    pc.timeout_ms = cfg.serve.timeout_ms;
    pc.max_inflight = cfg.serve.max_inflight;
    apply_env_overrides(pc);

    DebiasProxy proxy(pc);
    const int port = proxy.start();
    std::cout << "debiasing proxy listening on " << pc.listen_addr << ":" << port << " with "
              << patch_paths.size() << " patch(es)\n";
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    while (!g_shutdown) std::this_thread::sleep_for(std::chrono::milliseconds(200));
    proxy.stop();
    return 0;
}

int cmd_serve_oracle(const std::string& listen, const std::string& model_path) {
    auto model = std::make_shared<MlpModel>(load_model_file(model_path));
    OracleServer server(std::move(model));
    auto [host, port] = split_listen(listen);
    const int bound = server.start(host, port);
    std::cout << "oracle server listening on " << host << ":" << bound << "\n";
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    while (!g_shutdown) std::this_thread::sleep_for(std::chrono::milliseconds(200));
    server.stop();
    return 0;
}

std::string error_type_name(const Error& e) {
    if (dynamic_cast<const ShapeError*>(&e)) return "shape_error";
    if (dynamic_cast<const InvalidInputError*>(&e)) return "invalid_input";
    if (dynamic_cast<const NumericError*>(&e)) return "numeric_error";
    if (dynamic_cast<const ValidationError*>(&e)) return "validation_error";
    if (dynamic_cast<const ParseError*>(&e)) return "parse_error";
    if (dynamic_cast<const LoadError*>(&e)) return "load_error";
    if (dynamic_cast<const SplitError*>(&e)) return "split_error";
    if (dynamic_cast<const GenerationError*>(&e)) return "generation_error";
    if (dynamic_cast<const ProtocolError*>(&e)) return "protocol_error";
    if (dynamic_cast<const UpstreamError*>(&e)) return "upstream_unavailable";
    if (dynamic_cast<const ConfigError*>(&e)) return "config_error";
    return "error";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Inference-time debiasing toolkit for deployed classifiers"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    RunConfig flags;  // flag values land here, then override the config file
    app.add_option("--config", config_path, "JSON run configuration");
    auto* seed_opt = app.add_option("--seed", flags.seed, "master seed");
    auto* alpha_opt = app.add_option("--alpha", flags.alpha, "minority/majority ratio");
    auto* split_opt = app.add_option("--split", flags.split_fraction, "calibration fraction");
    auto* out_opt = app.add_option("--out", flags.out, "output directory");
    auto* bias_opt = app.add_option("--bias-attr", flags.bias_attrs,
                                    "bias attribute to erase (repeatable)");
    auto* url_opt = app.add_option("--oracle-url", flags.oracle_url, "remote oracle base URL");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic biased dataset");
    GenSettings gen_flags;
    auto* g_variant = gen->add_option("--variant", gen_flags.variant,
                                      "binary_bias | multiclass | two_bias");
    auto* g_n = gen->add_option("--n", gen_flags.n, "sample count");
    auto* g_dim = gen->add_option("--dim", gen_flags.feature_dim, "feature dimension");
    auto* g_noise = gen->add_option("--noise", gen_flags.noise_std, "feature noise std");
    auto* g_st = gen->add_option("--signal-target", gen_flags.signal_target, "target effect size");
    auto* g_sb = gen->add_option("--signal-bias", gen_flags.signal_bias, "bias effect size");
    auto* g_k = gen->add_option("--classes", gen_flags.num_classes, "classes (multiclass)");
    auto* g_bal = gen->add_flag("--balanced", gen_flags.balanced,
                                "equal examples per group cell (evaluation sets)");
    auto* g_ss = gen->add_option("--sample-seed", gen_flags.sample_seed,
                                 "draw seed; keeps the world of --seed but samples fresh data");

    // train-deployed
    auto* td = app.add_subcommand("train-deployed", "train the desk-scale deployed model");
    std::string td_data, td_loss, td_multitask_attr, td_activation, td_output_mode;
    std::vector<std::size_t> td_hidden;
    std::size_t td_epochs = 0, td_batch = 0;
    double td_lr = 0.0;
    bool td_no_split = false;
    td->add_option("--data", td_data, "full dataset CSV")->required();
    auto* td_loss_opt = td->add_option("--loss", td_loss, "hard_label_ce | multitask_ce");
    auto* td_hidden_opt = td->add_option("--hidden", td_hidden, "hidden layer widths");
    auto* td_act_opt = td->add_option("--activation", td_activation, "relu | tanh");
    auto* td_mode_opt = td->add_option("--output-mode", td_output_mode, "softmax | sigmoid");
    auto* td_epochs_opt = td->add_option("--epochs", td_epochs, "training epochs");
    auto* td_lr_opt = td->add_option("--lr", td_lr, "learning rate");
    auto* td_batch_opt = td->add_option("--batch", td_batch, "batch size");
    td->add_option("--multitask-attr", td_multitask_attr, "bias attribute for the aux head");
    td->add_flag("--no-split", td_no_split, "train on the whole file (no calibration split)");

    // distill
    auto* ds = app.add_subcommand("distill", "distill biased rules into patch models");
    std::string ds_data, ds_oracle_model;
    int ds_k = 0;
    bool ds_no_split = false;
    std::vector<std::size_t> ds_patch_hidden;
    std::size_t ds_epochs = 0, ds_batch = 0;
    double ds_lr = 0.0;
    ds->add_option("--data", ds_data, "full dataset CSV (calibration side is used)")->required();
    ds->add_option("--oracle-model", ds_oracle_model, "local deployed model file");
    ds->add_option("--k", ds_k, "class count (remote oracles)");
    ds->add_option("--patch-hidden", ds_patch_hidden, "patch hidden widths");
    auto* ds_epochs_opt = ds->add_option("--epochs", ds_epochs, "patch training epochs");
    auto* ds_lr_opt = ds->add_option("--lr", ds_lr, "patch learning rate");
    auto* ds_batch_opt = ds->add_option("--batch", ds_batch, "patch batch size");
    ds->add_flag("--no-split", ds_no_split, "use the whole file as the calibration set");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "before/after fairness evaluation");
    std::string ev_data, ev_oracle_model;
    int ev_k = 0;
    std::vector<std::string> ev_patches;
    ev->add_option("--data", ev_data, "evaluation CSV (labels required)")->required();
    ev->add_option("--oracle-model", ev_oracle_model, "local deployed model file");
    ev->add_option("--k", ev_k, "class count (remote oracles)");
    ev->add_option("--patch", ev_patches, "patch model file (repeatable)");

    // erase
    auto* er = app.add_subcommand("erase", "batch-apply the eraser to a CSV of inputs");
    std::string er_inputs, er_oracle_model;
    int er_k = 0;
    std::vector<std::string> er_patches;
    er->add_option("--inputs", er_inputs, "CSV of feature rows")->required();
    er->add_option("--oracle-model", er_oracle_model, "local deployed model file");
    er->add_option("--k", er_k, "class count (remote oracles)");
    er->add_option("--patch", er_patches, "patch model file (repeatable)")->required();

    // serve
    auto* sv = app.add_subcommand("serve", "run the debiasing reverse proxy");
    std::string sv_listen, sv_upstream_model, sv_normalize;
    std::vector<std::string> sv_patches;
    int sv_timeout = 0, sv_inflight = 0;
    auto* sv_listen_opt = sv->add_option("--listen", sv_listen, "host:port");
    sv->add_option("--upstream-model", sv_upstream_model, "local deployed model file");
    sv->add_option("--patch", sv_patches, "patch model file (repeatable)")->required();
    auto* sv_norm_opt = sv->add_option("--normalize", sv_normalize, "strict | renormalize");
    auto* sv_timeout_opt = sv->add_option("--timeout-ms", sv_timeout, "upstream timeout");
    auto* sv_inflight_opt = sv->add_option("--max-inflight", sv_inflight, "in-flight request limit");

    // serve-oracle
    auto* so = app.add_subcommand("serve-oracle",
                                  "serve a local model behind the oracle protocol");
    std::string so_listen = "127.0.0.1:8700", so_model;
    so->add_option("--listen", so_listen, "host:port");
    so->add_option("--model", so_model, "model file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << "\n";
        return 2;
    }

    try {
        RunConfig cfg = load_config(config_path);
        if (seed_opt->count()) cfg.seed = flags.seed;
        if (alpha_opt->count()) cfg.alpha = flags.alpha;
        if (split_opt->count()) cfg.split_fraction = flags.split_fraction;
        if (out_opt->count()) cfg.out = flags.out;
        if (bias_opt->count()) cfg.bias_attrs = flags.bias_attrs;
        if (url_opt->count()) cfg.oracle_url = flags.oracle_url;

        if (gen->parsed()) {
            if (g_variant->count()) cfg.gen.variant = gen_flags.variant;
            if (g_n->count()) cfg.gen.n = gen_flags.n;
            if (g_dim->count()) cfg.gen.feature_dim = gen_flags.feature_dim;
            if (g_noise->count()) cfg.gen.noise_std = gen_flags.noise_std;
            if (g_st->count()) cfg.gen.signal_target = gen_flags.signal_target;
            if (g_sb->count()) cfg.gen.signal_bias = gen_flags.signal_bias;
            if (g_k->count()) cfg.gen.num_classes = gen_flags.num_classes;
            if (g_bal->count()) cfg.gen.balanced = gen_flags.balanced;
            if (g_ss->count()) cfg.gen.sample_seed = gen_flags.sample_seed;
            return cmd_gen_data(cfg);
        }
        if (td->parsed()) {
            if (td_loss_opt->count()) cfg.deployed.loss = td_loss;
            if (td_hidden_opt->count()) cfg.deployed.hidden = td_hidden;
            if (td_act_opt->count()) cfg.deployed.activation = td_activation;
            if (td_mode_opt->count()) cfg.deployed.output_mode = td_output_mode;
            if (td_epochs_opt->count()) cfg.deployed.epochs = td_epochs;
            if (td_lr_opt->count()) cfg.deployed.learning_rate = td_lr;
            if (td_batch_opt->count()) cfg.deployed.batch_size = td_batch;
            return cmd_train_deployed(cfg, td_data, td_no_split, td_multitask_attr);
        }
        if (ds->parsed()) {
            if (ds_epochs_opt->count()) cfg.patch.epochs = ds_epochs;
            if (ds_lr_opt->count()) cfg.patch.learning_rate = ds_lr;
            if (ds_batch_opt->count()) cfg.patch.batch_size = ds_batch;
            return cmd_distill(cfg, ds_data, ds_no_split, ds_oracle_model, ds_k, ds_patch_hidden);
        }
        if (ev->parsed()) return cmd_evaluate(cfg, ev_data, ev_oracle_model, ev_k, ev_patches);
        if (er->parsed()) return cmd_erase(cfg, er_inputs, er_oracle_model, er_k, er_patches);
        if (sv->parsed()) {
            if (sv_listen_opt->count()) cfg.serve.listen = sv_listen;
            if (sv_norm_opt->count()) cfg.serve.normalize_policy = sv_normalize;
            if (sv_timeout_opt->count()) cfg.serve.timeout_ms = sv_timeout;
            if (sv_inflight_opt->count()) cfg.serve.max_inflight = sv_inflight;
            return cmd_serve(cfg, sv_upstream_model, sv_patches);
        }
        if (so->parsed()) return cmd_serve_oracle(so_listen, so_model);
        std::cerr << app.help() << "\n";
        return 2;
    } catch (const Error& e) {
        json err{{"error", {{"type", error_type_name(e)}, {"message", e.what()}}}};
        std::cerr << err.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        json err{{"error", {{"type", "error"}, {"message", e.what()}}}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
}
