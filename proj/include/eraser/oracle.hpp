#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "eraser/nnet.hpp"
#include "eraser/prob.hpp"

namespace eraser {

enum class NormalizePolicy { Strict, Renormalize };

std::string to_string(NormalizePolicy p);
NormalizePolicy normalize_policy_from_string(const std::string& s);

struct RemoteConfig {
    std::string base_url;  // e.g. http://127.0.0.1:8700
    int timeout_ms = 5000;
    int retries = 2;          // additional attempts after the first
    int max_inflight = 8;     // concurrent chunk requests
    std::size_t chunk_size = 256;
};

/// Reads ORACLE_BASE_URL / ORACLE_TIMEOUT_MS when set.
void apply_env_overrides(RemoteConfig& cfg);

/// Uniform black-box access to the deployed model: either an in-process
/// MlpModel or a remote HTTP endpoint speaking the /v1/predict protocol.
/// Handles are immutable and safe to share across threads.
class OracleHandle {
public:
    static OracleHandle local(std::shared_ptr<const MlpModel> model,
                              NormalizePolicy policy = NormalizePolicy::Renormalize);
    static OracleHandle remote(RemoteConfig cfg, int k,
                               NormalizePolicy policy = NormalizePolicy::Renormalize);

    int k() const;
    bool is_local() const;
    const MlpModel* local_model() const;  // nullptr for remote handles
    std::string describe() const;         // stable oracle id for provenance

    /// Keyed by exact feature vector; off by default.
    void enable_cache(bool on);

    /// Order-preserving batch query. Local handles match forward_probs
    /// bit-for-bit; remote handles POST JSON batches and apply the
    /// normalization policy.
    std::vector<ProbVector> query_batch(const std::vector<std::vector<double>>& features) const;

private:
    OracleHandle() = default;
    struct Impl;
    std::shared_ptr<Impl> impl_;
};

/// Reference HTTP server exposing a local model behind the oracle protocol:
/// POST /v1/predict {"inputs": [[...],...]} -> {"probs": [[...],...]},
/// plus GET /health. Used as the stand-in for an external black-box service.
class OracleServer {
public:
    explicit OracleServer(std::shared_ptr<const MlpModel> model);
    ~OracleServer();
    OracleServer(const OracleServer&) = delete;
    OracleServer& operator=(const OracleServer&) = delete;

    /// Binds and serves on a background thread; port 0 picks a free port.
    /// Returns the bound port.
    int start(const std::string& host, int port);
    void stop();
    std::string base_url() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace eraser
