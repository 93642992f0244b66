#include "eraser/proxy.hpp"

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "eraser/error.hpp"
#include "eraser/nnet.hpp"
#include "eraser/prob.hpp"

namespace eraser {

namespace {

using json = nlohmann::json;

void send_error(httplib::Response& res, int status, const std::string& type,
                const std::string& message, const std::string& field = {}) {
    json err{{"type", type}, {"message", message}};
    if (!field.empty()) err["field"] = field;
    res.status = status;
    res.set_content(json{{"error", std::move(err)}}.dump(), "application/json");
}

// RAII in-flight slot; denies the request when the limit is reached.
class InflightGuard {
public:
    InflightGuard(std::atomic<int>& counter, int limit) : counter_(counter) {
        admitted_ = counter_.fetch_add(1) < limit;
        if (!admitted_) counter_.fetch_sub(1);
    }
    ~InflightGuard() {
        if (admitted_) counter_.fetch_sub(1);
    }
    bool admitted() const { return admitted_; }

private:
    std::atomic<int>& counter_;
    bool admitted_ = false;
};

}  // namespace

void apply_env_overrides(ProxyConfig& cfg) {
    if (const char* addr = std::getenv("LISTEN_ADDR"); addr && *addr) cfg.listen_addr = addr;
    if (const char* url = std::getenv("UPSTREAM_URL"); url && *url) cfg.upstream_url = url;
}

struct DebiasProxy::Impl {
    ProxyConfig config;
    std::vector<MlpModel> patches;
    std::vector<std::string> patch_names;
    std::unique_ptr<OracleHandle> oracle;
    int k = 0;

    httplib::Server server;
    std::thread thread;
    std::atomic<bool> running{false};
    std::atomic<int> inflight{0};
    std::atomic<std::uint64_t> requests_total{0};

    void handle_predict(const httplib::Request& req, httplib::Response& res);
};

DebiasProxy::DebiasProxy(const ProxyConfig& config) : impl_(new Impl) {
    impl_->config = config;

    if (config.patch_paths.empty()) {
        throw ConfigError("proxy needs at least one patch model");
    }
    const bool has_url = !config.upstream_url.empty();
    const bool has_model = !config.upstream_model_path.empty();
    if (has_url == has_model) {
        throw ConfigError("configure exactly one upstream: url or local model path");
    }
    if (config.max_inflight < 1) throw ConfigError("max_inflight must be at least 1");

    for (const std::string& path : config.patch_paths) {
        MlpModel patch = load_model_file(path);
        std::string name = patch.meta.bias_attr.empty() ? path : patch.meta.bias_attr;
        impl_->patch_names.push_back(std::move(name));
        impl_->patches.push_back(std::move(patch));
    }
    impl_->k = static_cast<int>(impl_->patches.front().output_dim());
    for (const MlpModel& p : impl_->patches) {
        if (static_cast<int>(p.output_dim()) != impl_->k) {
            throw ConfigError("patch models disagree on the class count");
        }
        if (p.input_dim() != impl_->patches.front().input_dim()) {
            throw ConfigError("patch models disagree on the input dimension");
        }
    }

    if (has_model) {
        auto model = std::make_shared<MlpModel>(load_model_file(config.upstream_model_path));
        if (static_cast<int>(model->output_dim()) != impl_->k) {
            throw ConfigError("patches expose " + std::to_string(impl_->k) +
                              " classes but the upstream model has " +
                              std::to_string(model->output_dim()));
        }
        impl_->oracle = std::make_unique<OracleHandle>(
            OracleHandle::local(std::move(model), config.normalize_policy));
    } else {
        RemoteConfig rc;
        rc.base_url = config.upstream_url;
        rc.timeout_ms = config.timeout_ms;
        impl_->oracle = std::make_unique<OracleHandle>(
            OracleHandle::remote(rc, impl_->k, config.normalize_policy));
        // startup health probe: an empty predict is a protocol-level no-op
        httplib::Client cli(config.upstream_url);
        cli.set_connection_timeout(0, config.timeout_ms * 1000);
        auto probe = cli.Post("/v1/predict", R"({"inputs":[]})", "application/json");
        if (!probe || probe->status != 200) {
            throw ConfigError("upstream unreachable at startup: " + config.upstream_url);
        }
    }

    impl_->server.Get("/health", [impl = impl_.get()](const httplib::Request&,
                                                      httplib::Response& res) {
        json doc{{"status", "ok"},
                 {"k", impl->k},
                 {"patches", impl->patch_names},
                 {"requests_total", impl->requests_total.load()}};
        res.set_content(doc.dump(), "application/json");
    });
    impl_->server.Post("/v1/predict",
                       [impl = impl_.get()](const httplib::Request& req, httplib::Response& res) {
                           impl->handle_predict(req, res);
                       });
}

void DebiasProxy::Impl::handle_predict(const httplib::Request& req, httplib::Response& res) {
    InflightGuard guard(inflight, config.max_inflight);
    if (!guard.admitted()) {
        send_error(res, 429, "overloaded", "too many in-flight requests");
        return;
    }
    requests_total.fetch_add(1);

    json doc;
    try {
        doc = json::parse(req.body);
    } catch (const json::exception&) {
        send_error(res, 400, "bad_request", "body is not valid JSON");
        return;
    }
    if (!doc.is_object() || !doc.contains("inputs")) {
        send_error(res, 400, "bad_request", "missing inputs", "inputs");
        return;
    }
    if (!doc["inputs"].is_array()) {
        send_error(res, 400, "bad_request", "inputs must be an array", "inputs");
        return;
    }

    const std::size_t expected_dim = patches.front().input_dim();
    std::vector<std::vector<double>> inputs;
    inputs.reserve(doc["inputs"].size());
    for (std::size_t i = 0; i < doc["inputs"].size(); ++i) {
        const json& row = doc["inputs"][i];
        if (!row.is_array()) {
            send_error(res, 400, "bad_request", "each input must be an array",
                       "inputs[" + std::to_string(i) + "]");
            return;
        }
        if (row.size() != expected_dim) {
            send_error(res, 422, "dimension_mismatch",
                       "expected " + std::to_string(expected_dim) + " features, got " +
                           std::to_string(row.size()),
                       "inputs[" + std::to_string(i) + "]");
            return;
        }
        std::vector<double> x;
        x.reserve(row.size());
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (!row[j].is_number()) {
                send_error(res, 400, "bad_request", "features must be numbers",
                           "inputs[" + std::to_string(i) + "][" + std::to_string(j) + "]");
                return;
            }
            x.push_back(row[j].get<double>());
        }
        inputs.push_back(std::move(x));
    }

    std::vector<ProbVector> raw;
    try {
        raw = oracle->query_batch(inputs);
    } catch (const UpstreamError& e) {
        send_error(res, 502, "upstream_unavailable", e.what());
        return;
    } catch (const ProtocolError& e) {
        send_error(res, 502, "upstream_protocol", e.what());
        return;
    } catch (const ShapeError& e) {
        send_error(res, 422, "dimension_mismatch", e.what());
        return;
    }

    json raw_rows = json::array();
    json fair_rows = json::array();
    json argmax_raw = json::array();
    json argmax_fair = json::array();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        std::vector<ProbVector> rules;
        rules.reserve(patches.size());
        for (const MlpModel& patch : patches) rules.push_back(forward_probs(patch, inputs[i]));
        const ProbVector fair = erase_multi(raw[i], rules);
        raw_rows.push_back(raw[i].values());
        fair_rows.push_back(fair.values());
        argmax_raw.push_back(raw[i].argmax());
        argmax_fair.push_back(fair.argmax());
    }
    json out{{"raw", std::move(raw_rows)},
             {"fair", std::move(fair_rows)},
             {"argmax_raw", std::move(argmax_raw)},
             {"argmax_fair", std::move(argmax_fair)}};
    res.set_content(out.dump(), "application/json");
}

DebiasProxy::~DebiasProxy() { stop(); }

int DebiasProxy::start() {
    int port = impl_->config.port;
    if (port == 0) {
        port = impl_->server.bind_to_any_port(impl_->config.listen_addr);
        if (port <= 0) throw ConfigError("proxy failed to bind on " + impl_->config.listen_addr);
    } else {
        if (!impl_->server.bind_to_port(impl_->config.listen_addr, port)) {
            throw ConfigError("proxy failed to bind " + impl_->config.listen_addr + ":" +
                              std::to_string(port));
        }
    }
    impl_->config.port = port;
    impl_->running = true;
    impl_->thread = std::thread([this]() { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return port;
}

void DebiasProxy::stop() {
    if (impl_ && impl_->running.exchange(false)) {
        impl_->server.stop();  // joins worker threads, draining in-flight requests
        if (impl_->thread.joinable()) impl_->thread.join();
    }
}

std::string DebiasProxy::base_url() const {
    return "http://" + impl_->config.listen_addr + ":" + std::to_string(impl_->config.port);
}

int DebiasProxy::k() const { return impl_->k; }

const std::vector<std::string>& DebiasProxy::patch_names() const { return impl_->patch_names; }

}  // namespace eraser
