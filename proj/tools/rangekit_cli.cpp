#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

#include "rangekit/bench.hpp"
#include "rangekit/edf.hpp"
#include "rangekit/serve.hpp"
#include "rangekit/sim.hpp"
#include "rangekit/train.hpp"

namespace fs = std::filesystem;
using namespace rangekit;

namespace {

constexpr double kDeg = M_PI / 180.0;

// temp + rename so partially written outputs never appear under the final name
template <typename WriteFn>
void write_atomically(const fs::path& path, WriteFn&& writer) {
  const fs::path tmp = path.string() + ".tmp";
  writer(tmp.string());
  fs::rename(tmp, path);
}

double get_or(const std::map<std::string, std::string>& kv, const std::string& key, double dflt) {
  const auto it = kv.find(key);
  return it == kv.end() ? dflt : std::stod(it->second);
}

std::string get_or(const std::map<std::string, std::string>& kv, const std::string& key,
                   const std::string& dflt) {
  const auto it = kv.find(key);
  return it == kv.end() ? dflt : it->second;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(s);
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

sim::ScenarioConfig scenario_from_config(const std::map<std::string, std::string>& kv) {
  sim::ScenarioConfig cfg;
  cfg.duration = get_or(kv, "duration", cfg.duration);
  cfg.rate = get_or(kv, "rate", cfg.rate);
  const std::string kind = get_or(kv, "trajectory", std::string("static"));
  if (kind == "static") {
    cfg.trajectory = sim::TrajectoryKind::Static;
  } else if (kind == "constvel") {
    cfg.trajectory = sim::TrajectoryKind::ConstantVelocity;
  } else if (kind == "waypoints") {
    cfg.trajectory = sim::TrajectoryKind::Waypoints;
  } else {
    throw std::invalid_argument("scenario: unknown trajectory '" + kind + "'");
  }
  cfg.site.latitude = get_or(kv, "site_lat_deg", 37.4) * kDeg;
  cfg.site.longitude = get_or(kv, "site_lon_deg", -122.1) * kDeg;
  cfg.site.altitude = get_or(kv, "site_alt_m", 30.0);
  cfg.velocity_ned.north = get_or(kv, "vel_north", 1.0);
  cfg.velocity_ned.east = get_or(kv, "vel_east", 0.5);
  cfg.velocity_ned.down = get_or(kv, "vel_down", 0.0);
  cfg.speed = get_or(kv, "speed", cfg.speed);
  if (const auto it = kv.find("route"); it != kv.end()) {
    cfg.waypoints = edf::load_route(it->second).waypoints;
  }
  cfg.sigma_range = get_or(kv, "sigma_range", cfg.sigma_range);
  cfg.sigma_rate = get_or(kv, "sigma_rate", cfg.sigma_rate);
  cfg.clock_offset0 = get_or(kv, "clock_offset", cfg.clock_offset0);
  cfg.clock_drift = get_or(kv, "clock_drift", cfg.clock_drift);
  cfg.elevation_mask = get_or(kv, "elevation_mask_deg", 10.0) * kDeg;
  cfg.bias_bumps_per_sat = static_cast<int>(get_or(kv, "bias_bumps", 0.0));
  cfg.bias_max = get_or(kv, "bias_max", cfg.bias_max);
  cfg.bias_amp = get_or(kv, "bias_amp", cfg.bias_amp);
  cfg.start_time_of_day = get_or(kv, "start_tod", 0.0);
  return cfg;
}

estimate::EngineKind engine_from_name(const std::string& name) {
  if (name == "wls") return estimate::EngineKind::Wls;
  if (name == "ekf") return estimate::EngineKind::Ekf;
  if (name == "mhe-f") return estimate::EngineKind::MheFiltering;
  if (name == "mhe-ac") return estimate::EngineKind::MheArrival;
  if (name == "mhe-noac") return estimate::EngineKind::MheNoArrival;
  throw std::invalid_argument("unknown engine '" + name + "'");
}

int cmd_simulate(const std::string& config_path, std::uint64_t seed, const std::string& out_dir) {
  const auto kv = config_path.empty() ? std::map<std::string, std::string>{}
                                      : bench::load_config(config_path);
  sim::ScenarioConfig cfg = scenario_from_config(kv);
  cfg.seed = seed;
  const int days = static_cast<int>(get_or(kv, "days", 1.0));

  fs::create_directories(out_dir);
  for (int d = 0; d < days; ++d) {
    cfg.day_index = d;
    const sim::SimResult result = sim::synthesize_trace(cfg);
    const fs::path trace_path = fs::path(out_dir) / ("trace_day" + std::to_string(d) + ".csv");
    const fs::path label_path = fs::path(out_dir) / ("labels_day" + std::to_string(d) + ".csv");
    write_atomically(trace_path,
                     [&](const std::string& p) { bench::write_trace_csv(p, result.trace); });
    write_atomically(label_path,
                     [&](const std::string& p) { bench::write_labels_csv(p, result.trace.labels); });
    for (const auto& w : result.trace.warnings) {
      std::cerr << "warning: day " << d << ": " << w << "\n";
    }
    std::cout << trace_path.string() << "\n" << label_path.string() << "\n";
  }
  return 0;
}

int cmd_train(const std::string& config_path, std::uint64_t seed, const std::string& out_dir) {
  const auto kv = bench::load_config(config_path);
  train::TrainConfig cfg = train::parse_train_config(kv);
  if (seed != 0) cfg.seed = seed;

  const auto trace_paths = split_list(get_or(kv, "train_traces", std::string()));
  const auto label_paths = split_list(get_or(kv, "train_labels", std::string()));
  if (trace_paths.empty()) throw std::invalid_argument("train config: train_traces is required");
  if (!label_paths.empty() && label_paths.size() != trace_paths.size()) {
    throw std::invalid_argument("train config: train_labels must match train_traces");
  }

  std::vector<Trace> traces;
  for (size_t i = 0; i < trace_paths.size(); ++i) {
    traces.push_back(
        bench::ingest(trace_paths[i], label_paths.empty() ? "" : label_paths[i]));
  }

  std::optional<Trace> validation;
  const std::string val_trace = get_or(kv, "val_trace", std::string());
  if (!val_trace.empty()) {
    validation = bench::ingest(val_trace, get_or(kv, "val_labels", std::string()));
  }

  std::optional<edf::EdfCostMap> map;
  const std::string map_path = get_or(kv, "map", std::string());
  if (!map_path.empty()) map = edf::load_map(map_path);
  if (cfg.loss == train::LossKind::Edf && !map.has_value()) {
    throw std::invalid_argument("train config: EDF loss needs map=<file>");
  }

  const train::TrainResult result =
      train::train_corrector(traces, cfg, map.has_value() ? &*map : nullptr,
                             validation.has_value() ? &*validation : nullptr);

  fs::create_directories(out_dir);
  const fs::path ckpt = fs::path(out_dir) / "model.ckpt";
  const fs::path report = fs::path(out_dir) / "report.csv";
  write_atomically(ckpt, [&](const std::string& p) { neural::save_checkpoint(p, result.params); });
  write_atomically(report,
                   [&](const std::string& p) { train::write_report_csv(p, result.report); });
  std::cout << ckpt.string() << "\n" << report.string() << "\n";
  if (!result.report.empty()) {
    std::cout << "final_train_loss=" << result.report.back().train_loss
              << " final_val_rmse=" << result.report.back().val_rmse << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& trace_path,
             const std::string& label_path, const std::string& engine_name,
             const std::string& model_path, int horizon, const std::string& out_dir) {
  std::vector<LabelPoint> pred;
  if (!pred_path.empty()) {
    pred = bench::read_labels_csv(pred_path);
  } else {
    const Trace trace = bench::ingest(trace_path);
    std::vector<estimate::CorrectionSet> corr(trace.epochs.size(), estimate::zero_corrections());
    if (!model_path.empty()) {
      corr = train::model_corrections(neural::load_checkpoint(model_path), trace.epochs);
    }
    estimate::EngineConfig cfg;
    cfg.kind = engine_from_name(engine_name);
    cfg.horizon = horizon;
    const estimate::RunResult run = estimate::run_trace(trace.epochs, corr, cfg);
    pred = bench::track_from_states(trace.epochs, run.states);
  }

  const auto labels = bench::read_labels_csv(label_path);
  const auto errors = bench::horizontal_errors(pred, labels);

  nlohmann::json report;
  report["count"] = errors.size();
  report["score_m"] = bench::horizontal_score(errors);
  report["rmse_m"] = bench::horizontal_rmse(errors);
  report["p50_m"] = bench::percentile(errors, 50.0);
  report["p95_m"] = bench::percentile(errors, 95.0);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_atomically(fs::path(out_dir) / "eval.json", [&](const std::string& p) {
      std::ofstream out(p);
      out << report.dump(2) << "\n";
    });
    write_atomically(fs::path(out_dir) / "pred_track.csv",
                     [&](const std::string& p) { bench::write_labels_csv(p, pred); });
  }
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_profile(const std::string& trace_path, const std::string& label_path,
                const std::string& engines_arg, const std::string& horizons_arg,
                std::uint64_t seed, const std::string& out_path) {
  const Trace trace = bench::ingest(trace_path, label_path);
  std::vector<estimate::EngineKind> engines;
  for (const auto& name : split_list(engines_arg)) engines.push_back(engine_from_name(name));
  std::vector<int> horizons;
  for (const auto& h : split_list(horizons_arg)) horizons.push_back(std::stoi(h));

  const auto rows = bench::profile_horizons(trace, engines, horizons, seed);
  if (!out_path.empty()) {
    write_atomically(out_path, [&](const std::string& p) { bench::write_profile_csv(p, rows); });
  }
  std::cout << bench::kProfileHeader << "\n";
  for (const auto& r : rows) {
    std::cout << r.engine << ',' << r.horizon << ',' << r.rmse_m << ',' << r.forward_ms << ','
              << r.backward_ms << ',' << r.backward_loss << ',' << (r.failed ? 1 : 0) << "\n";
  }
  return 0;
}

int cmd_buildmap(const std::string& route_path, double resolution, double margin, double spacing,
                 const std::string& out_path) {
  const edf::RoutePolyline route = edf::load_route(route_path);
  const edf::RoutePolyline dense = edf::interpolate_route(route, spacing);
  const edf::BinaryGrid grid = edf::rasterize(dense, resolution, margin);
  const edf::EdfCostMap map = edf::smooth(edf::edt(grid));
  write_atomically(out_path, [&](const std::string& p) { edf::save_map(p, map); });
  std::cout << out_path << ": " << map.rows << "x" << map.cols << " cells at " << resolution
            << " m\n";
  return 0;
}

int cmd_serve(int port, const std::string& model_path, const std::string& map_path) {
  neural::MlpParameters model = neural::load_checkpoint(model_path);
  if (!map_path.empty()) {
    edf::load_map(map_path);  // validated; fixes are returned unregistered
    std::cerr << "map loaded (not used at inference)\n";
  }
  serve::ServiceCore core(std::move(model), serve::ServeConfig{});
  std::cerr << "listening on port " << port << "\n";
  return serve::run_server(core, port);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GNSS ranging-correction toolkit: simulation, training, evaluation, serving"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".";
  std::uint64_t seed = 1;

  auto* sim_cmd = app.add_subcommand("simulate", "Generate synthetic traces");
  sim_cmd->add_option("--config", config_path, "scenario config file");
  sim_cmd->add_option("--seed", seed, "RNG seed");
  sim_cmd->add_option("--out", out_dir, "output directory");

  std::string train_config;
  std::string train_out = ".";
  std::uint64_t train_seed = 0;  // 0: take the config's seed
  auto* train_cmd = app.add_subcommand("train", "Train the ranging corrector");
  train_cmd->add_option("--config", train_config, "training config file")->required();
  train_cmd->add_option("--seed", train_seed, "override config seed");
  train_cmd->add_option("--out", train_out, "output directory");

  std::string eval_pred, eval_trace, eval_labels, eval_engine = "mhe-ac", eval_model,
              eval_out;
  int eval_horizon = 5;
  auto* eval_cmd = app.add_subcommand("eval", "Score a track against labels");
  eval_cmd->add_option("--pred", eval_pred, "predicted track CSV (skip the engine run)");
  eval_cmd->add_option("--trace", eval_trace, "trace CSV to run an engine on");
  eval_cmd->add_option("--labels", eval_labels, "label track CSV")->required();
  eval_cmd->add_option("--engine", eval_engine, "wls|ekf|mhe-f|mhe-ac|mhe-noac");
  eval_cmd->add_option("--model", eval_model, "corrector checkpoint");
  eval_cmd->add_option("--horizon", eval_horizon, "window size N");
  eval_cmd->add_option("--out", eval_out, "output directory");

  std::string prof_trace, prof_labels, prof_engines = "mhe-f,mhe-ac,mhe-noac",
              prof_horizons = "1,2,5,10,20,40", prof_out;
  std::uint64_t prof_seed = 1;
  auto* prof_cmd = app.add_subcommand("profile", "Forward/backward horizon profiling");
  prof_cmd->add_option("--trace", prof_trace)->required();
  prof_cmd->add_option("--labels", prof_labels)->required();
  prof_cmd->add_option("--engines", prof_engines, "comma-separated engine list");
  prof_cmd->add_option("--horizons", prof_horizons, "comma-separated N list");
  prof_cmd->add_option("--seed", prof_seed);
  prof_cmd->add_option("--out", prof_out, "profile CSV path");

  std::string map_route, map_out = "map.edf";
  double map_resolution = 1.0, map_margin = 30.0, map_spacing = 0.5;
  auto* map_cmd = app.add_subcommand("buildmap", "Build an EDF cost map from a route");
  map_cmd->add_option("--route", map_route, "waypoints CSV or KML")->required();
  map_cmd->add_option("--resolution", map_resolution, "meters per cell");
  map_cmd->add_option("--margin", map_margin, "bounding-box margin in meters");
  map_cmd->add_option("--spacing", map_spacing, "route densification spacing in meters");
  map_cmd->add_option("--out", map_out, "output map path");

  int serve_port = 8080;
  std::string serve_model, serve_map;
  auto* serve_cmd = app.add_subcommand("serve", "Run the inference service");
  serve_cmd->add_option("--port", serve_port);
  serve_cmd->add_option("--model", serve_model, "corrector checkpoint")->required();
  serve_cmd->add_option("--map", serve_map, "EDF map (optional)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints usage/error text
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  try {
    if (sim_cmd->parsed()) return cmd_simulate(config_path, seed, out_dir);
    if (train_cmd->parsed()) return cmd_train(train_config, train_seed, train_out);
    if (eval_cmd->parsed()) {
      return cmd_eval(eval_pred, eval_trace, eval_labels, eval_engine, eval_model, eval_horizon,
                      eval_out);
    }
    if (prof_cmd->parsed()) {
      return cmd_profile(prof_trace, prof_labels, prof_engines, prof_horizons, prof_seed,
                         prof_out);
    }
    if (map_cmd->parsed()) {
      return cmd_buildmap(map_route, map_resolution, map_margin, map_spacing, map_out);
    }
    if (serve_cmd->parsed()) return cmd_serve(serve_port, serve_model, serve_map);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
