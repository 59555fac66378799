#include "rangekit/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rangekit/edf.hpp"
#include "rangekit/train.hpp"

namespace rangekit::bench {

namespace {

constexpr double kDeg = M_PI / 180.0;
constexpr double kJoinTolerance = 0.5;  // s, half the 1 Hz interval

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

double parse_field(const std::string& field, const char* column, int row) {
  try {
    size_t used = 0;
    const double v = std::stod(field, &used);
    if (used == 0) throw std::invalid_argument("empty");
    return v;
  } catch (const std::exception&) {
    std::ostringstream msg;
    msg << "row " << row << ": cannot parse column '" << column << "' from '" << field << "'";
    throw IngestError(msg.str());
  }
}

}  // namespace

void write_trace_csv(const std::string& path, const Trace& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << kTraceHeader << '\n';
  for (const auto& epoch : trace.epochs) {
    for (int s = 0; s < model::kSvCount; ++s) {
      const auto& obs = epoch.observations[s];
      if (!obs.visible) continue;
      out << format_double(epoch.timestamp) << ',' << obs.prn << ','
          << format_double(obs.sat_position.x) << ',' << format_double(obs.sat_position.y) << ','
          << format_double(obs.sat_position.z) << ',' << format_double(obs.sat_velocity.x()) << ','
          << format_double(obs.sat_velocity.y()) << ',' << format_double(obs.sat_velocity.z())
          << ',' << format_double(obs.pseudorange) << ',' << format_double(obs.pseudorange_rate)
          << ',' << format_double(obs.cn0) << ',' << format_double(obs.elevation / kDeg) << ','
          << format_double(obs.range_sigma) << ',' << format_double(obs.rate_sigma) << '\n';
    }
  }
}

void write_labels_csv(const std::string& path, const std::vector<LabelPoint>& labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << kLabelHeader << '\n';
  for (const auto& l : labels) {
    out << format_double(l.utc) << ',' << format_double(l.position.latitude / kDeg) << ','
        << format_double(l.position.longitude / kDeg) << ','
        << format_double(l.position.altitude) << '\n';
  }
}

Trace ingest(const std::string& trace_path, const std::string& label_path) {
  std::ifstream in(trace_path);
  if (!in) throw IngestError("cannot open " + trace_path);

  std::string line;
  if (!std::getline(in, line)) throw IngestError("empty file: " + trace_path);
  {
    const auto expected = split_csv(kTraceHeader);
    const auto got = split_csv(line);
    for (size_t i = 0; i < expected.size(); ++i) {
      if (i >= got.size() || got[i] != expected[i]) {
        throw IngestError("header mismatch: expected column '" + expected[i] + "' at position " +
                          std::to_string(i + 1));
      }
    }
  }

  Trace trace;
  model::Epoch* current = nullptr;
  double current_utc = 0.0;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 14) {
      throw IngestError("row " + std::to_string(row) + ": expected 14 columns, got " +
                        std::to_string(fields.size()));
    }
    const double utc = parse_field(fields[0], "utc_s", row);
    const int prn = static_cast<int>(parse_field(fields[1], "prn", row));
    if (prn < 1 || prn > model::kSvCount) {
      throw IngestError("row " + std::to_string(row) + ": prn out of range [1, " +
                        std::to_string(model::kSvCount) + "]");
    }

    if (current == nullptr || utc != current_utc) {
      if (current != nullptr && utc <= current_utc) {
        throw IngestError("row " + std::to_string(row) + ": epochs not time-ordered");
      }
      trace.epochs.emplace_back();
      current = &trace.epochs.back();
      current->timestamp = utc;
      current_utc = utc;
    }

    auto& obs = current->observations[prn - 1];
    if (obs.visible) {
      throw IngestError("row " + std::to_string(row) + ": duplicate prn in epoch");
    }
    obs.visible = true;
    obs.prn = prn;
    obs.sat_position = {parse_field(fields[2], "sat_x", row), parse_field(fields[3], "sat_y", row),
                        parse_field(fields[4], "sat_z", row)};
    obs.sat_velocity = {parse_field(fields[5], "sat_vx", row),
                        parse_field(fields[6], "sat_vy", row),
                        parse_field(fields[7], "sat_vz", row)};
    obs.pseudorange = parse_field(fields[8], "pseudorange_corrected", row);
    obs.pseudorange_rate = parse_field(fields[9], "prr", row);
    obs.cn0 = parse_field(fields[10], "cn0", row);
    obs.elevation = parse_field(fields[11], "elevation_deg", row) * kDeg;
    obs.range_sigma = parse_field(fields[12], "range_sigma", row);
    obs.rate_sigma = parse_field(fields[13], "rate_sigma", row);
    if (!(obs.range_sigma > 0.0)) {
      throw IngestError("row " + std::to_string(row) + ": range_sigma must be positive");
    }
    if (!(obs.rate_sigma > 0.0)) {
      throw IngestError("row " + std::to_string(row) + ": rate_sigma must be positive");
    }
  }
  if (trace.epochs.empty()) throw IngestError("no epochs in " + trace_path);

  for (size_t k = 0; k + 1 < trace.epochs.size(); ++k) {
    trace.epochs[k].sampling_interval_to_next =
        trace.epochs[k + 1].timestamp - trace.epochs[k].timestamp;
  }
  if (trace.epochs.size() > 1) {
    trace.epochs.back().sampling_interval_to_next =
        trace.epochs[trace.epochs.size() - 2].sampling_interval_to_next;
  }

  if (!label_path.empty()) {
    const auto labels = read_labels_csv(label_path);
    for (const auto& epoch : trace.epochs) {
      const LabelPoint* best = nullptr;
      double best_dt = kJoinTolerance;
      for (const auto& l : labels) {
        const double dt = std::abs(l.utc - epoch.timestamp);
        if (dt <= best_dt) {
          best_dt = dt;
          best = &l;
        }
      }
      if (best == nullptr) {
        throw IngestError("no label within " + std::to_string(kJoinTolerance) + " s of epoch " +
                          format_double(epoch.timestamp));
      }
      trace.labels.push_back(*best);
    }
  }
  return trace;
}

std::vector<LabelPoint> read_labels_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IngestError("empty file: " + path);
  const auto header = split_csv(line);
  if (header.size() < 3 || header[0] != "utc_s" || header[1] != "lat_deg" ||
      header[2] != "lon_deg") {
    throw IngestError("label header must start with utc_s,lat_deg,lon_deg");
  }

  std::vector<LabelPoint> labels;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() < 3) {
      throw IngestError("row " + std::to_string(row) + ": expected >= 3 columns");
    }
    LabelPoint l;
    l.utc = parse_field(fields[0], "utc_s", row);
    l.position.latitude = parse_field(fields[1], "lat_deg", row) * kDeg;
    l.position.longitude = parse_field(fields[2], "lon_deg", row) * kDeg;
    l.position.altitude = fields.size() > 3 ? parse_field(fields[3], "alt_m", row) : 0.0;
    labels.push_back(l);
  }
  return labels;
}

std::vector<LabelPoint> track_from_states(const std::vector<model::Epoch>& epochs,
                                          const std::vector<model::StateVector>& states) {
  std::vector<LabelPoint> track;
  for (size_t k = 0; k < epochs.size() && k < states.size(); ++k) {
    LabelPoint p;
    p.utc = epochs[k].timestamp;
    p.position =
        geo::ecef_to_lla(geo::EcefPosition::from_vec(model::state_position(states[k])));
    track.push_back(p);
  }
  return track;
}

std::vector<double> horizontal_errors(const std::vector<LabelPoint>& pred,
                                      const std::vector<LabelPoint>& labels) {
  std::vector<double> errors;
  for (const auto& p : pred) {
    const LabelPoint* best = nullptr;
    double best_dt = kJoinTolerance;
    for (const auto& l : labels) {
      const double dt = std::abs(l.utc - p.utc);
      if (dt <= best_dt) {
        best_dt = dt;
        best = &l;
      }
    }
    if (best == nullptr) continue;
    geo::GeodeticPosition a = p.position, b = best->position;
    a.altitude = b.altitude = 0.0;  // horizontal distance only
    errors.push_back(geo::geodesic_distance(a, b));
  }
  if (errors.empty()) throw std::invalid_argument("horizontal_errors: tracks do not overlap");
  return errors;
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile: empty input");
  std::sort(values.begin(), values.end());
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<size_t>(std::floor(rank));
  const auto hi = static_cast<size_t>(std::ceil(rank));
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double horizontal_score(const std::vector<double>& errors) {
  if (errors.empty()) throw std::invalid_argument("horizontal_score: empty input");
  return 0.5 * (percentile(errors, 50.0) + percentile(errors, 95.0));
}

double horizontal_rmse(const std::vector<double>& errors) {
  if (errors.empty()) throw std::invalid_argument("horizontal_rmse: empty input");
  double sq = 0.0;
  for (double e : errors) sq += e * e;
  return std::sqrt(sq / static_cast<double>(errors.size()));
}

std::vector<double> cross_track_errors(const std::vector<LabelPoint>& track,
                                       const std::vector<geo::GeodeticPosition>& route) {
  if (route.size() < 2) throw std::invalid_argument("cross_track_errors: route too short");
  double lat0 = 0.0;
  for (const auto& p : route) lat0 += p.latitude;
  lat0 /= static_cast<double>(route.size());
  const double ml = edf::meters_per_degree_lat(lat0) / kDeg;  // meters per radian
  const double mo = edf::meters_per_degree_lon(lat0) / kDeg;
  const auto to_xy = [&](const geo::GeodeticPosition& p) {
    return Eigen::Vector2d(p.longitude * mo, p.latitude * ml);
  };

  std::vector<Eigen::Vector2d> poly;
  for (const auto& p : route) poly.push_back(to_xy(p));

  std::vector<double> errors;
  for (const auto& pt : track) {
    const Eigen::Vector2d q = to_xy(pt.position);
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i + 1 < poly.size(); ++i) {
      const Eigen::Vector2d a = poly[i], b = poly[i + 1];
      const Eigen::Vector2d ab = b - a;
      const double t = std::clamp(ab.squaredNorm() > 0.0 ? (q - a).dot(ab) / ab.squaredNorm() : 0.0,
                                  0.0, 1.0);
      best = std::min(best, (q - (a + t * ab)).norm());
    }
    errors.push_back(best);
  }
  return errors;
}

std::string engine_name(estimate::EngineKind kind) {
  switch (kind) {
    case estimate::EngineKind::Wls: return "wls";
    case estimate::EngineKind::Ekf: return "ekf";
    case estimate::EngineKind::MheFiltering: return "mhe-f";
    case estimate::EngineKind::MheArrival: return "mhe-ac";
    case estimate::EngineKind::MheNoArrival: return "mhe-noac";
  }
  return "unknown";
}

std::vector<ProfileRow> profile_horizons(const Trace& trace,
                                         const std::vector<estimate::EngineKind>& engines,
                                         const std::vector<int>& horizons, std::uint64_t seed) {
  using Clock = std::chrono::steady_clock;
  if (trace.labels.empty()) {
    throw std::invalid_argument("profile_horizons: trace needs a label track");
  }
  const std::vector<estimate::CorrectionSet> zeros(trace.epochs.size(),
                                                   estimate::zero_corrections());

  std::vector<ProfileRow> rows;
  for (const auto kind : engines) {
    for (const int n : horizons) {
      ProfileRow row;
      row.engine = engine_name(kind);
      row.horizon = n;
      row.backward_ms = std::numeric_limits<double>::quiet_NaN();
      row.backward_loss = std::numeric_limits<double>::quiet_NaN();
      try {
        estimate::EngineConfig cfg;
        cfg.kind = kind;
        cfg.horizon = n;
        const auto t0 = Clock::now();
        const estimate::RunResult run = estimate::run_trace(trace.epochs, zeros, cfg);
        const auto t1 = Clock::now();
        row.forward_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        row.rmse_m = horizontal_rmse(
            horizontal_errors(track_from_states(trace.epochs, run.states), trace.labels));

        // Backward profiling: one mini training epoch (3-layer MLP, 3D loss)
        // through the differentiable solve. Only the optimization engines
        // have an adjoint path.
        if (kind == estimate::EngineKind::MheArrival ||
            kind == estimate::EngineKind::MheNoArrival) {
          train::TrainConfig tc;
          tc.loss = train::LossKind::ThreeD;
          tc.horizon = n;
          tc.arrival_cost = (kind == estimate::EngineKind::MheArrival);
          tc.subsequence_length =
              std::min(static_cast<int>(trace.epochs.size()), std::max(2 * (n + 1), n + 6));
          tc.batch_size = 2;
          tc.max_epochs = 1;
          tc.seed = seed;
          tc.mlp = neural::MlpShape{neural::kFeatureCount, 8, 3};
          const auto b0 = Clock::now();
          const train::TrainResult tr = train::train_corrector({trace}, tc);
          const auto b1 = Clock::now();
          row.backward_loss = tr.report.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                : tr.report.front().train_loss;
          row.backward_ms = std::chrono::duration<double, std::milli>(b1 - b0).count();
        }
      } catch (const std::exception&) {
        row.failed = true;
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_profile_csv(const std::string& path, const std::vector<ProfileRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << kProfileHeader << '\n';
  for (const auto& r : rows) {
    out << r.engine << ',' << r.horizon << ',' << r.rmse_m << ',' << r.forward_ms << ','
        << r.backward_ms << ',' << r.backward_loss << ',' << (r.failed ? 1 : 0) << '\n';
  }
}

std::map<std::string, std::string> load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!key.empty()) kv[key] = value;
  }
  return kv;
}

}  // namespace rangekit::bench
