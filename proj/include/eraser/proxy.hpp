#pragma once

#include <memory>
#include <string>
#include <vector>

#include "eraser/oracle.hpp"

namespace eraser {

struct ProxyConfig {
    std::string listen_addr = "127.0.0.1";
    int port = 8080;                      // 0 picks a free port
    std::string upstream_url;             // exactly one of these two
    std::string upstream_model_path;
    std::vector<std::string> patch_paths;  // >= 1, one per bias attribute
    NormalizePolicy normalize_policy = NormalizePolicy::Renormalize;
    int timeout_ms = 5000;
    int max_inflight = 64;
};

/// Reads LISTEN_ADDR / UPSTREAM_URL when set.
void apply_env_overrides(ProxyConfig& cfg);

/// Debiasing reverse proxy. Forwards inputs to the deployed oracle, runs the
/// loaded patch models locally, and answers with both raw and fair
/// predictions:
///   GET  /health      -> {"status":"ok","k":k,"patches":[names]}
///   POST /v1/predict  {"inputs":[[...],...]} ->
///        {"raw":[[...]],"fair":[[...]],"argmax_raw":[...],"argmax_fair":[...]}
/// Construction loads every patch and probes the upstream; it throws
/// ConfigError instead of serving a half-configured endpoint.
class DebiasProxy {
public:
    explicit DebiasProxy(const ProxyConfig& config);
    ~DebiasProxy();
    DebiasProxy(const DebiasProxy&) = delete;
    DebiasProxy& operator=(const DebiasProxy&) = delete;

    /// Binds and serves on a background thread; returns the bound port.
    int start();
    void stop();
    std::string base_url() const;

    int k() const;
    const std::vector<std::string>& patch_names() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace eraser
