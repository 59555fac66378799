#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rangekit/estimate.hpp"
#include "rangekit/neural.hpp"

// Inference service: epochs arrive over a JSON wire protocol, one moving
// horizon cache per session, fixes come from the same MovingHorizonSession
// the offline engines use (arrival cost on, N=5), so online and offline fixes
// are identical on gap-free streams.

namespace rangekit::serve {

struct ServeConfig {
  int horizon = 5;
  model::NoiseModel noise;
  estimate::GnOptions gn;
  double gap_threshold = 10.0;  // s
};

// Request: {"session_id": str, "utc_s": num, "epoch": [per-satellite records
// with the trace CSV row fields]}. Unknown fields are ignored.
// Response: {"utc_s", "lat_deg", "lon_deg", "alt_m", "status", "latency_ms"}
// with status in {OK, WARMUP, RESET, ERROR}.
class ServiceCore {
 public:
  ServiceCore(neural::MlpParameters model, ServeConfig cfg);

  nlohmann::json handle_request(const nlohmann::json& request);
  nlohmann::json metrics() const;

 private:
  struct Session {
    estimate::MovingHorizonSession mhe;
    neural::BaselineFix previous_baseline;
    double previous_utc = 0.0;
    std::mutex mutex;

    explicit Session(const estimate::EngineConfig& cfg) : mhe(cfg) {}
  };

  Session& session_for(const std::string& id);

  neural::MlpParameters model_;
  ServeConfig cfg_;
  estimate::EngineConfig engine_cfg_;

  mutable std::mutex registry_mutex_;
  std::map<std::string, std::unique_ptr<Session>> sessions_;

  mutable std::mutex stats_mutex_;
  long requests_ = 0;
  long resets_ = 0;
  long errors_ = 0;
  std::vector<double> latencies_ms_;
};

// Parse one wire epoch payload (array of per-satellite records) into an
// Epoch; throws std::invalid_argument on schema violations.
model::Epoch parse_wire_epoch(const nlohmann::json& records, double utc_s);

// Blocking HTTP server: POST /fix, GET /metrics. Returns on failure to bind.
int run_server(ServiceCore& core, int port);

}  // namespace rangekit::serve
