#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rangekit/estimate.hpp"
#include "rangekit/neural.hpp"
#include "rangekit/trace.hpp"

// Dataset ingestion, evaluation metrics and the horizon profiling harness
// behind the CLI. CSV schemas are bit-exact and shared with the simulator so
// synthetic and real data ride the same path.

namespace rangekit::bench {

// Trace CSV header, one row per (epoch, satellite), epochs time-ordered:
inline constexpr const char* kTraceHeader =
    "utc_s,prn,sat_x,sat_y,sat_z,sat_vx,sat_vy,sat_vz,pseudorange_corrected,prr,cn0,"
    "elevation_deg,range_sigma,rate_sigma";
// Label CSV header (alt_m optional on read):
inline constexpr const char* kLabelHeader = "utc_s,lat_deg,lon_deg,alt_m";

struct IngestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_trace_csv(const std::string& path, const Trace& trace);
void write_labels_csv(const std::string& path, const std::vector<LabelPoint>& labels);

// Epochs assembled from a schema-conformant file; optional label file joined
// on timestamp (nearest neighbor within 0.5 s). Violations raise IngestError
// naming the row/column.
Trace ingest(const std::string& trace_path, const std::string& label_path = "");

std::vector<LabelPoint> read_labels_csv(const std::string& path);

// Predicted track from engine states (positions converted to geodetic).
std::vector<LabelPoint> track_from_states(const std::vector<model::Epoch>& epochs,
                                          const std::vector<model::StateVector>& states);

// Per-epoch geodesic distance between tracks joined on timestamp.
std::vector<double> horizontal_errors(const std::vector<LabelPoint>& pred,
                                      const std::vector<LabelPoint>& labels);

// Percentile by linear interpolation between closest ranks; p in [0, 100].
double percentile(std::vector<double> values, double p);

// (p50 + p95) / 2.
double horizontal_score(const std::vector<double>& errors);

double horizontal_rmse(const std::vector<double>& errors);

// Cross-track distance of each track point to a reference polyline
// (equirectangular local frame); the EDF-mode evaluation metric.
std::vector<double> cross_track_errors(const std::vector<LabelPoint>& track,
                                       const std::vector<geo::GeodeticPosition>& route);

struct ProfileRow {
  std::string engine;
  int horizon = 0;
  double rmse_m = 0.0;
  double forward_ms = 0.0;     // whole-trace wall time
  double backward_ms = 0.0;    // per-batch adjoint wall time (NaN when n/a)
  double backward_loss = 0.0;  // one-epoch training loss on a fixed tiny MLP
  bool failed = false;
};

// Forward RMSE/wall-time per engine x N, plus backward profiling of the
// optimization engines through one mini training epoch.
std::vector<ProfileRow> profile_horizons(const Trace& trace,
                                         const std::vector<estimate::EngineKind>& engines,
                                         const std::vector<int>& horizons,
                                         std::uint64_t seed = 1);

void write_profile_csv(const std::string& path, const std::vector<ProfileRow>& rows);
inline constexpr const char* kProfileHeader =
    "engine,horizon,rmse_m,forward_ms,backward_ms,backward_loss,failed";

std::string engine_name(estimate::EngineKind kind);

// key=value config file ('#' comments, blank lines ignored).
std::map<std::string, std::string> load_config(const std::string& path);

}  // namespace rangekit::bench
