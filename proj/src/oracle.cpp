#include "eraser/oracle.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "eraser/error.hpp"

namespace eraser {

namespace {

using json = nlohmann::json;

constexpr double kStrictSumTolerance = 1e-6;

ProbVector normalize_response(std::vector<double> probs, int k, NormalizePolicy policy) {
    if (probs.size() != static_cast<std::size_t>(k) && !(probs.size() == 1 && k == 2)) {
        throw ProtocolError("oracle returned " + std::to_string(probs.size()) +
                            " probabilities, expected " + std::to_string(k));
    }
    if (policy == NormalizePolicy::Strict && probs.size() == static_cast<std::size_t>(k)) {
        double sum = 0.0;
        for (double v : probs) sum += v;
        if (std::fabs(sum - 1.0) > kStrictSumTolerance) {
            throw ProtocolError("strict policy: response sums to " + std::to_string(sum));
        }
    }
    return ProbVector::from_sigmoid_scores(std::move(probs), static_cast<std::size_t>(k));
}

}  // namespace

std::string to_string(NormalizePolicy p) {
    return p == NormalizePolicy::Strict ? "strict" : "renormalize";
}

NormalizePolicy normalize_policy_from_string(const std::string& s) {
    if (s == "strict") return NormalizePolicy::Strict;
    if (s == "renormalize") return NormalizePolicy::Renormalize;
    throw InvalidInputError("unknown normalize policy: " + s);
}

void apply_env_overrides(RemoteConfig& cfg) {
    if (const char* url = std::getenv("ORACLE_BASE_URL"); url && *url) cfg.base_url = url;
    if (const char* t = std::getenv("ORACLE_TIMEOUT_MS"); t && *t) cfg.timeout_ms = std::atoi(t);
}

struct OracleHandle::Impl {
    std::shared_ptr<const MlpModel> model;  // local
    RemoteConfig remote;                    // remote
    bool local = true;
    int k = 0;
    NormalizePolicy policy = NormalizePolicy::Renormalize;

    mutable std::mutex cache_mu;
    mutable std::map<std::vector<double>, ProbVector> cache;
    bool cache_enabled = false;

    std::vector<ProbVector> query_remote_chunk(const std::vector<std::vector<double>>& features,
                                               std::size_t begin, std::size_t end) const {
        json body;
        body["inputs"] = json::array();
        for (std::size_t i = begin; i < end; ++i) body["inputs"].push_back(features[i]);
        const std::string payload = body.dump();

        std::string last_error;
        for (int attempt = 0; attempt <= remote.retries; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(25 << (attempt - 1)));
            }
            httplib::Client cli(remote.base_url);
            cli.set_connection_timeout(0, remote.timeout_ms * 1000);
            cli.set_read_timeout(remote.timeout_ms / 1000, (remote.timeout_ms % 1000) * 1000);
            cli.set_write_timeout(remote.timeout_ms / 1000, (remote.timeout_ms % 1000) * 1000);
            httplib::Result res = cli.Post("/v1/predict", payload, "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;  // retry
            }
            if (res->status >= 500) {
                last_error = "upstream status " + std::to_string(res->status);
                continue;  // retry
            }
            if (res->status != 200) {
                throw ProtocolError("oracle rejected request with status " +
                                    std::to_string(res->status) + ": " + res->body);
            }
            json doc;
            try {
                doc = json::parse(res->body);
            } catch (const json::exception& e) {
                throw ProtocolError(std::string("oracle response is not JSON: ") + e.what());
            }
            if (!doc.is_object() || !doc.contains("probs") || !doc["probs"].is_array()) {
                throw ProtocolError("oracle response missing probs array");
            }
            const json& rows = doc["probs"];
            if (rows.size() != end - begin) {
                throw ProtocolError("oracle returned " + std::to_string(rows.size()) +
                                    " rows for " + std::to_string(end - begin) + " inputs");
            }
            std::vector<ProbVector> out;
            out.reserve(rows.size());
            for (const json& row : rows) {
                if (!row.is_array()) throw ProtocolError("probs rows must be arrays");
                std::vector<double> p;
                p.reserve(row.size());
                for (const json& v : row) {
                    if (!v.is_number()) throw ProtocolError("non-numeric probability");
                    p.push_back(v.get<double>());
                }
                out.push_back(normalize_response(std::move(p), k, policy));
            }
            return out;
        }
        throw UpstreamError("oracle unreachable after " + std::to_string(remote.retries + 1) +
                            " attempts: " + last_error);
    }
};

OracleHandle OracleHandle::local(std::shared_ptr<const MlpModel> model, NormalizePolicy policy) {
    if (!model) throw ConfigError("local oracle requires a model");
    if (model->output_dim() < 2) throw ConfigError("oracle must expose at least 2 classes");
    OracleHandle h;
    h.impl_ = std::make_shared<Impl>();
    h.impl_->model = std::move(model);
    h.impl_->local = true;
    h.impl_->k = static_cast<int>(h.impl_->model->output_dim());
    h.impl_->policy = policy;
    return h;
}

OracleHandle OracleHandle::remote(RemoteConfig cfg, int k, NormalizePolicy policy) {
    if (cfg.base_url.empty()) throw ConfigError("remote oracle requires a base_url");
    if (cfg.timeout_ms <= 0) throw ConfigError("timeout must be positive");
    if (k < 2) throw ConfigError("oracle must expose at least 2 classes");
    if (cfg.max_inflight < 1) cfg.max_inflight = 1;
    if (cfg.chunk_size == 0) cfg.chunk_size = 1;
    OracleHandle h;
    h.impl_ = std::make_shared<Impl>();
    h.impl_->local = false;
    h.impl_->remote = std::move(cfg);
    h.impl_->k = k;
    h.impl_->policy = policy;
    return h;
}

int OracleHandle::k() const { return impl_->k; }
bool OracleHandle::is_local() const { return impl_->local; }

const MlpModel* OracleHandle::local_model() const {
    return impl_->local ? impl_->model.get() : nullptr;
}

std::string OracleHandle::describe() const {
    if (impl_->local) {
        return "local:seed=" + std::to_string(impl_->model->meta.seed) +
               ",role=" + impl_->model->meta.role;
    }
    return "remote:" + impl_->remote.base_url;
}

void OracleHandle::enable_cache(bool on) {
    std::lock_guard<std::mutex> lock(impl_->cache_mu);
    impl_->cache_enabled = on;
    if (!on) impl_->cache.clear();
}

std::vector<ProbVector> OracleHandle::query_batch(
    const std::vector<std::vector<double>>& features) const {
    std::vector<ProbVector> out;
    out.reserve(features.size());
    if (features.empty()) return out;

    // serve cached entries, collect misses
    std::vector<std::size_t> miss;
    std::vector<std::optional<ProbVector>> slots(features.size());
    if (impl_->cache_enabled) {
        std::lock_guard<std::mutex> lock(impl_->cache_mu);
        for (std::size_t i = 0; i < features.size(); ++i) {
            auto it = impl_->cache.find(features[i]);
            if (it != impl_->cache.end()) {
                slots[i] = it->second;
            } else {
                miss.push_back(i);
            }
        }
    } else {
        for (std::size_t i = 0; i < features.size(); ++i) miss.push_back(i);
    }

    if (!miss.empty()) {
        if (impl_->local) {
            for (std::size_t i : miss) slots[i] = forward_probs(*impl_->model, features[i]);
        } else {
            std::vector<std::vector<double>> pending;
            pending.reserve(miss.size());
            for (std::size_t i : miss) pending.push_back(features[i]);

            const std::size_t chunk = impl_->remote.chunk_size;
            const std::size_t n_chunks = (pending.size() + chunk - 1) / chunk;
            std::vector<std::vector<ProbVector>> results(n_chunks);

            const std::size_t workers =
                std::min<std::size_t>(static_cast<std::size_t>(impl_->remote.max_inflight),
                                      n_chunks);
            std::atomic<std::size_t> next{0};
            std::mutex err_mu;
            std::exception_ptr first_error;
            auto work = [&]() {
                while (true) {
                    const std::size_t c = next.fetch_add(1);
                    if (c >= n_chunks) return;
                    const std::size_t begin = c * chunk;
                    const std::size_t end = std::min(begin + chunk, pending.size());
                    try {
                        results[c] = impl_->query_remote_chunk(pending, begin, end);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(err_mu);
                        if (!first_error) first_error = std::current_exception();
                        return;
                    }
                }
            };
            if (workers <= 1) {
                work();
            } else {
                std::vector<std::thread> pool;
                for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
                for (std::thread& t : pool) t.join();
            }
            if (first_error) std::rethrow_exception(first_error);

            std::size_t mi = 0;
            for (const auto& chunk_result : results) {
                for (const ProbVector& p : chunk_result) slots[miss[mi++]] = p;
            }
        }
        if (impl_->cache_enabled) {
            std::lock_guard<std::mutex> lock(impl_->cache_mu);
            for (std::size_t i : miss) impl_->cache.emplace(features[i], *slots[i]);
        }
    }

    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

}  // namespace eraser
