#include <atomic>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "eraser/error.hpp"
#include "eraser/oracle.hpp"

namespace eraser {

namespace {
using json = nlohmann::json;
}

struct OracleServer::Impl {
    std::shared_ptr<const MlpModel> model;
    httplib::Server server;
    std::thread thread;
    std::string host;
    int port = 0;
    std::atomic<bool> running{false};
};

OracleServer::OracleServer(std::shared_ptr<const MlpModel> model) : impl_(new Impl) {
    if (!model) throw ConfigError("oracle server requires a model");
    impl_->model = std::move(model);

    impl_->server.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
        json doc{{"status", "ok"}, {"k", impl_->model->output_dim()}};
        res.set_content(doc.dump(), "application/json");
    });

    impl_->server.Post("/v1/predict", [this](const httplib::Request& req,
                                             httplib::Response& res) {
        json doc;
        try {
            doc = json::parse(req.body);
        } catch (const json::exception&) {
            res.status = 400;
            res.set_content(R"({"error":{"type":"bad_request","message":"body is not JSON"}})",
                            "application/json");
            return;
        }
        if (!doc.is_object() || !doc.contains("inputs") || !doc["inputs"].is_array()) {
            res.status = 400;
            res.set_content(
                R"({"error":{"type":"bad_request","message":"missing inputs array","field":"inputs"}})",
                "application/json");
            return;
        }
        json probs = json::array();
        for (std::size_t i = 0; i < doc["inputs"].size(); ++i) {
            const json& row = doc["inputs"][i];
            if (!row.is_array() || row.size() != impl_->model->input_dim()) {
                res.status = 422;
                json err{{"error",
                          {{"type", "dimension_mismatch"},
                           {"message", "expected " + std::to_string(impl_->model->input_dim()) +
                                           " features"},
                           {"field", "inputs[" + std::to_string(i) + "]"}}}};
                res.set_content(err.dump(), "application/json");
                return;
            }
            std::vector<double> x;
            x.reserve(row.size());
            for (std::size_t j = 0; j < row.size(); ++j) {
                if (!row[j].is_number()) {
                    res.status = 400;
                    json err{{"error",
                              {{"type", "bad_request"},
                               {"message", "features must be numbers"},
                               {"field",
                                "inputs[" + std::to_string(i) + "][" + std::to_string(j) + "]"}}}};
                    res.set_content(err.dump(), "application/json");
                    return;
                }
                x.push_back(row[j].get<double>());
            }
            probs.push_back(forward_probs(*impl_->model, x).values());
        }
        json out{{"probs", std::move(probs)}};
        res.set_content(out.dump(), "application/json");
    });
}

OracleServer::~OracleServer() { stop(); }

int OracleServer::start(const std::string& host, int port) {
    impl_->host = host;
    if (port == 0) {
        impl_->port = impl_->server.bind_to_any_port(host);
        if (impl_->port <= 0) throw ConfigError("oracle server failed to bind on " + host);
    } else {
        if (!impl_->server.bind_to_port(host, port)) {
            throw ConfigError("oracle server failed to bind " + host + ":" +
                              std::to_string(port));
        }
        impl_->port = port;
    }
    impl_->running = true;
    impl_->thread = std::thread([this]() { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return impl_->port;
}

void OracleServer::stop() {
    if (impl_ && impl_->running.exchange(false)) {
        impl_->server.stop();
        if (impl_->thread.joinable()) impl_->thread.join();
    }
}

std::string OracleServer::base_url() const {
    return "http://" + impl_->host + ":" + std::to_string(impl_->port);
}

}  // namespace eraser
