#include "rangekit/serve.hpp"

#include <chrono>
#include <cmath>

#include <httplib.h>

#include "rangekit/bench.hpp"

namespace rangekit::serve {

namespace {
constexpr double kDeg = M_PI / 180.0;

const char* status_name(estimate::FixStatus s) {
  switch (s) {
    case estimate::FixStatus::Ok: return "OK";
    case estimate::FixStatus::Warmup: return "WARMUP";
    case estimate::FixStatus::Reset: return "RESET";
    case estimate::FixStatus::Error: return "ERROR";
  }
  return "ERROR";
}
}  // namespace

model::Epoch parse_wire_epoch(const nlohmann::json& records, double utc_s) {
  if (!records.is_array() || records.empty()) {
    throw std::invalid_argument("epoch payload must be a non-empty array");
  }
  model::Epoch epoch;
  epoch.timestamp = utc_s;
  for (const auto& rec : records) {
    if (!rec.is_object()) throw std::invalid_argument("satellite record must be an object");
    const int prn = rec.at("prn").get<int>();
    if (prn < 1 || prn > model::kSvCount) throw std::invalid_argument("prn out of range");
    auto& obs = epoch.observations[prn - 1];
    if (obs.visible) throw std::invalid_argument("duplicate prn in epoch");
    obs.visible = true;
    obs.prn = prn;
    obs.sat_position = {rec.at("sat_x").get<double>(), rec.at("sat_y").get<double>(),
                        rec.at("sat_z").get<double>()};
    obs.sat_velocity = {rec.at("sat_vx").get<double>(), rec.at("sat_vy").get<double>(),
                        rec.at("sat_vz").get<double>()};
    obs.pseudorange = rec.at("pseudorange_corrected").get<double>();
    obs.pseudorange_rate = rec.at("prr").get<double>();
    obs.cn0 = rec.at("cn0").get<double>();
    obs.elevation = rec.at("elevation_deg").get<double>() * kDeg;
    obs.range_sigma = rec.at("range_sigma").get<double>();
    obs.rate_sigma = rec.at("rate_sigma").get<double>();
    if (!(obs.range_sigma > 0.0) || !(obs.rate_sigma > 0.0)) {
      throw std::invalid_argument("sigmas must be positive");
    }
  }
  return epoch;
}

ServiceCore::ServiceCore(neural::MlpParameters model, ServeConfig cfg)
    : model_(std::move(model)), cfg_(cfg) {
  engine_cfg_.kind = estimate::EngineKind::MheArrival;
  engine_cfg_.horizon = cfg_.horizon;
  engine_cfg_.noise = cfg_.noise;
  engine_cfg_.gn = cfg_.gn;
  engine_cfg_.gap_threshold = cfg_.gap_threshold;
}

ServiceCore::Session& ServiceCore::session_for(const std::string& id) {
  std::lock_guard lock(registry_mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) {
    it = sessions_.emplace(id, std::make_unique<Session>(engine_cfg_)).first;
  }
  return *it->second;
}

nlohmann::json ServiceCore::handle_request(const nlohmann::json& request) {
  const auto start = std::chrono::steady_clock::now();
  nlohmann::json response;
  response["lat_deg"] = 0.0;
  response["lon_deg"] = 0.0;
  response["alt_m"] = 0.0;

  std::string status = "ERROR";
  double utc = 0.0;
  try {
    const std::string session_id = request.at("session_id").get<std::string>();
    utc = request.at("utc_s").get<double>();
    const model::Epoch epoch = parse_wire_epoch(request.at("epoch"), utc);

    Session& session = session_for(session_id);
    std::lock_guard lock(session.mutex);

    // Features for this epoch, with the session's WLS bootstrap chain.
    neural::BaselineFix baseline;
    try {
      const Eigen::Vector3d init = session.previous_baseline.valid
                                       ? model::state_position(session.previous_baseline.state)
                                       : Eigen::Vector3d::Zero();
      baseline.state = estimate::wls_solve(
          epoch, estimate::zero_corrections(), init,
          session.previous_baseline.valid ? session.previous_baseline.state[model::sx::kClk]
                                          : 0.0);
      baseline.valid = true;
    } catch (const std::exception&) {
      if (session.previous_baseline.valid) {
        baseline.state = model::propagate(session.previous_baseline.state,
                                          epoch.timestamp - session.previous_utc);
        baseline.valid = true;
      }
    }
    const neural::FeatureTensor features =
        neural::build_features({epoch}, {baseline}, &model_.stats);
    const neural::CorrectionTensor corrections = neural::mlp_forward(model_, features);

    const estimate::FixResult fix = session.mhe.push(epoch, corrections.epoch_corrections(0));
    status = status_name(fix.status);
    if (fix.status != estimate::FixStatus::Error) {
      session.previous_baseline = baseline;
      session.previous_utc = epoch.timestamp;
      const geo::GeodeticPosition lla =
          geo::ecef_to_lla(geo::EcefPosition::from_vec(model::state_position(fix.state)));
      response["lat_deg"] = lla.latitude / kDeg;
      response["lon_deg"] = lla.longitude / kDeg;
      response["alt_m"] = lla.altitude;
    }
  } catch (const std::exception&) {
    status = "ERROR";  // malformed payload: cache untouched
  }

  const auto end = std::chrono::steady_clock::now();
  const double latency = std::chrono::duration<double, std::milli>(end - start).count();
  response["utc_s"] = utc;
  response["status"] = status;
  response["latency_ms"] = latency;

  {
    std::lock_guard lock(stats_mutex_);
    ++requests_;
    if (status == "ERROR") ++errors_;
    if (status == "RESET") ++resets_;
    latencies_ms_.push_back(latency);
  }
  return response;
}

nlohmann::json ServiceCore::metrics() const {
  std::lock_guard lock(stats_mutex_);
  nlohmann::json out;
  out["requests"] = requests_;
  out["resets"] = resets_;
  out["errors"] = errors_;
  nlohmann::json latency;
  if (!latencies_ms_.empty()) {
    latency["p50_ms"] = bench::percentile(latencies_ms_, 50.0);
    latency["p95_ms"] = bench::percentile(latencies_ms_, 95.0);
    double sum = 0.0;
    for (double v : latencies_ms_) sum += v;
    latency["mean_ms"] = sum / static_cast<double>(latencies_ms_.size());
  } else {
    latency["p50_ms"] = nullptr;
    latency["p95_ms"] = nullptr;
    latency["mean_ms"] = nullptr;
  }
  out["latency"] = latency;
  return out;
}

int run_server(ServiceCore& core, int port) {
  httplib::Server server;
  server.Post("/fix", [&core](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const std::exception&) {
      nlohmann::json err;
      err["status"] = "ERROR";
      err["utc_s"] = 0.0;
      err["lat_deg"] = 0.0;
      err["lon_deg"] = 0.0;
      err["alt_m"] = 0.0;
      err["latency_ms"] = 0.0;
      res.set_content(err.dump(), "application/json");
      return;
    }
    res.set_content(core.handle_request(body).dump(), "application/json");
  });
  server.Get("/metrics", [&core](const httplib::Request&, httplib::Response& res) {
    res.set_content(core.metrics().dump(), "application/json");
  });
  return server.listen("0.0.0.0", port) ? 0 : 1;
}

}  // namespace rangekit::serve
