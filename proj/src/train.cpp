#include "rangekit/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace rangekit::train {

namespace {

// 2D losses live in radians^2; Adam's epsilon would swamp gradients that
// small, so the training loop optimizes an equivalent metric scaled to
// meter^2 at the Earth radius.
constexpr double kTwoDScale = geo::kWgs84A * geo::kWgs84A;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  return z ^ (z >> 27);
}

}  // namespace

TrainConfig parse_train_config(const std::map<std::string, std::string>& kv) {
  TrainConfig cfg;
  const auto get = [&kv](const std::string& key) -> const std::string* {
    const auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (const auto* v = get("loss")) {
    if (*v == "3d") cfg.loss = LossKind::ThreeD;
    else if (*v == "2d") cfg.loss = LossKind::TwoD;
    else if (*v == "edf") cfg.loss = LossKind::Edf;
    else throw std::invalid_argument("train config: unknown loss '" + *v + "'");
  }
  if (const auto* v = get("horizon")) cfg.horizon = std::stoi(*v);
  if (const auto* v = get("arrival_cost")) cfg.arrival_cost = (*v == "1" || *v == "true");
  if (const auto* v = get("batch_size")) cfg.batch_size = std::stoi(*v);
  if (const auto* v = get("subsequence_length")) cfg.subsequence_length = std::stoi(*v);
  if (const auto* v = get("learning_rate")) cfg.learning_rate = std::stod(*v);
  if (const auto* v = get("lr_decay")) cfg.lr_decay = std::stod(*v);
  if (const auto* v = get("max_epochs")) cfg.max_epochs = std::stoi(*v);
  if (const auto* v = get("seed")) cfg.seed = std::stoull(*v);
  if (const auto* v = get("mlp_depth")) cfg.mlp.depth = std::stoi(*v);
  if (const auto* v = get("mlp_hidden")) cfg.mlp.hidden = std::stoi(*v);
  if (const auto* v = get("gn_step")) cfg.gn_step = std::stod(*v);
  if (const auto* v = get("gn_iterations")) cfg.gn_iterations = std::stoi(*v);
  if (const auto* v = get("supervise")) cfg.supervise_whole_horizon = (*v != "newest");
  if (const auto* v = get("threads")) cfg.exec = (*v == "1") ? Exec::Serial : Exec::Parallel;
  if (cfg.horizon >= cfg.subsequence_length) {
    throw std::invalid_argument("train config: horizon must be < subsequence_length");
  }
  if (cfg.batch_size < 1 || cfg.max_epochs < 1) {
    throw std::invalid_argument("train config: batch_size and max_epochs must be positive");
  }
  return cfg;
}

PointLoss loss_3d(const geo::EcefPosition& pred, const geo::EcefPosition& label) {
  PointLoss out;
  const Eigen::Vector3d d = pred.vec() - label.vec();
  out.value = d.squaredNorm();
  out.gradient = 2.0 * d;
  return out;
}

PointLoss loss_2d(const geo::EcefPosition& pred, double label_lat, double label_lon) {
  PointLoss out;
  const geo::GeodeticPosition lla = geo::ecef_to_lla(pred);
  const double dlat = lla.latitude - label_lat;
  const double dlon = lla.longitude - label_lon;
  out.value = dlat * dlat + dlon * dlon;
  const Eigen::Matrix3d j = geo::ecef_to_lla_jacobian(pred);
  out.gradient = 2.0 * dlat * j.row(0).transpose() + 2.0 * dlon * j.row(1).transpose();
  return out;
}

TrajectoryLoss loss_edf(const std::vector<geo::EcefPosition>& trajectory,
                        const edf::EdfCostMap& map) {
  if (!map.smoothed) throw std::invalid_argument("loss_edf: map must be smoothed");
  TrajectoryLoss out;
  const double scale = 1.0 / static_cast<double>(trajectory.size());
  for (const auto& p : trajectory) {
    const geo::GeodeticPosition lla = geo::ecef_to_lla(p);
    const edf::CostSample s = edf::sample_cost(map, lla);
    const Eigen::Matrix3d j = geo::ecef_to_lla_jacobian(p);
    out.value += scale * s.cost;
    out.gradients.push_back(scale *
                            (s.d_lat * j.row(0).transpose() + s.d_lon * j.row(1).transpose()));
  }
  return out;
}

SequentialLoader::SequentialLoader(const std::vector<Trace>& traces, const TrainConfig& cfg)
    : traces_(&traces), cfg_(cfg) {
  for (const auto& t : traces) {
    if (static_cast<int>(t.epochs.size()) < cfg.subsequence_length) ++dropped_;
  }
}

std::vector<Batch> SequentialLoader::epoch_batches(int training_epoch) const {
  std::mt19937_64 rng(mix(cfg_.seed, static_cast<std::uint64_t>(training_epoch)));
  const int L = cfg_.subsequence_length;

  std::vector<Subsequence> subs;
  for (size_t ti = 0; ti < traces_->size(); ++ti) {
    const int len = static_cast<int>((*traces_)[ti].epochs.size());
    if (len < L) continue;  // dropped, counted at construction
    const int offset = static_cast<int>(rng() % static_cast<std::uint64_t>(L));
    const int count = (len - offset) / L;
    for (int i = 0; i < count; ++i) {
      subs.push_back({static_cast<int>(ti), offset + i * L, L});
    }
  }
  std::shuffle(subs.begin(), subs.end(), rng);

  std::vector<Batch> batches;
  for (size_t i = 0; i < subs.size(); i += cfg_.batch_size) {
    Batch b;
    for (size_t j = i; j < std::min(subs.size(), i + cfg_.batch_size); ++j) {
      b.items.push_back(subs[j]);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

AdamState make_adam_state(const neural::MlpParameters& params) {
  AdamState st;
  for (size_t l = 0; l < params.weights.size(); ++l) {
    st.m_w.push_back(Eigen::MatrixXd::Zero(params.weights[l].rows(), params.weights[l].cols()));
    st.v_w.push_back(Eigen::MatrixXd::Zero(params.weights[l].rows(), params.weights[l].cols()));
    st.m_b.push_back(Eigen::VectorXd::Zero(params.biases[l].size()));
    st.v_b.push_back(Eigen::VectorXd::Zero(params.biases[l].size()));
  }
  return st;
}

void adam_step(neural::MlpParameters& params, const neural::MlpGradients& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t l = 0; l < params.weights.size(); ++l) {
    state.m_w[l] = beta1 * state.m_w[l] + (1.0 - beta1) * grads.weights[l];
    state.v_w[l].array() =
        beta2 * state.v_w[l].array() + (1.0 - beta2) * grads.weights[l].array().square();
    params.weights[l].array() -=
        lr * (state.m_w[l].array() / bc1) / ((state.v_w[l].array() / bc2).sqrt() + eps);

    state.m_b[l] = beta1 * state.m_b[l] + (1.0 - beta1) * grads.biases[l];
    state.v_b[l].array() =
        beta2 * state.v_b[l].array() + (1.0 - beta2) * grads.biases[l].array().square();
    params.biases[l].array() -=
        lr * (state.m_b[l].array() / bc1) / ((state.v_b[l].array() / bc2).sqrt() + eps);
  }
}

namespace {

neural::FeatureTensor slice_features(const neural::FeatureTensor& full, int start, int length) {
  neural::FeatureTensor out;
  out.steps = length;
  out.sv = full.sv;
  const size_t row = static_cast<size_t>(full.sv) * neural::kFeatureCount;
  out.values.assign(full.values.begin() + start * row, full.values.begin() + (start + length) * row);
  out.mask.assign(full.mask.begin() + static_cast<size_t>(start) * full.sv,
                  full.mask.begin() + static_cast<size_t>(start + length) * full.sv);
  return out;
}

estimate::SolveReport solve_with_polish(const estimate::HorizonProblem& problem,
                                        const estimate::GnOptions& gn) {
  estimate::SolveReport rep = estimate::mhe_solve(problem, gn);
  if (!rep.converged) {
    // Finish the damped run with full Newton steps so the adjoint sits on a
    // true stationary point.
    estimate::HorizonProblem polished = problem;
    polished.warm_start = rep.trajectory;
    const estimate::GnOptions polish{1.0, 15, std::max(gn.step_tolerance, 1e-6)};
    estimate::SolveReport rep2 = estimate::mhe_solve(polished, polish);
    rep2.iterations += rep.iterations;
    rep = std::move(rep2);
  }
  return rep;
}

struct WindowResult {
  bool ok = false;
  double loss = 0.0;
  diff::CorrectionGradient grad;
};

double horizontal_rmse_vs_labels(const std::vector<model::StateVector>& states,
                                 const std::vector<estimate::FixStatus>& statuses,
                                 const Trace& trace) {
  double sq = 0.0;
  int n = 0;
  for (size_t k = 0; k < states.size() && k < trace.labels.size(); ++k) {
    if (statuses[k] == estimate::FixStatus::Error) continue;
    const geo::GeodeticPosition pred =
        geo::ecef_to_lla(geo::EcefPosition::from_vec(model::state_position(states[k])));
    geo::GeodeticPosition a = pred, b = trace.labels[k].position;
    a.altitude = b.altitude = 0.0;
    const double d = geo::geodesic_distance(a, b);
    sq += d * d;
    ++n;
  }
  return n > 0 ? std::sqrt(sq / n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

std::vector<estimate::CorrectionSet> model_corrections(const neural::MlpParameters& params,
                                                       const std::vector<model::Epoch>& epochs,
                                                       Exec policy) {
  const auto baselines = neural::wls_baselines(epochs);
  const neural::FeatureTensor features =
      neural::build_features(epochs, baselines, &params.stats);
  const neural::CorrectionTensor corr = neural::mlp_forward(params, features, policy);
  std::vector<estimate::CorrectionSet> out(epochs.size());
  for (size_t k = 0; k < epochs.size(); ++k) {
    out[k] = corr.epoch_corrections(static_cast<int>(k));
  }
  return out;
}

TrainResult train_corrector(const std::vector<Trace>& traces, const TrainConfig& cfg,
                            const edf::EdfCostMap* map, const Trace* validation) {
  if (traces.empty()) throw std::invalid_argument("train: no traces");
  if (cfg.horizon >= cfg.subsequence_length) {
    throw std::invalid_argument("train: horizon must be < subsequence_length");
  }
  if (cfg.loss == LossKind::Edf) {
    if (map == nullptr || !map->smoothed) {
      throw std::invalid_argument("train: EDF mode needs a smoothed cost map");
    }
  } else {
    for (const auto& t : traces) {
      if (t.labels.size() != t.epochs.size()) {
        throw std::invalid_argument("train: supervised mode needs labels for every epoch");
      }
    }
  }

  // Baselines and raw features once per trace; normalization statistics from
  // the whole training set.
  std::vector<std::vector<neural::BaselineFix>> baselines(traces.size());
  std::vector<neural::FeatureTensor> features(traces.size());
  for (size_t i = 0; i < traces.size(); ++i) {
    baselines[i] = neural::wls_baselines(traces[i].epochs);
    features[i] = neural::build_features(traces[i].epochs, baselines[i], nullptr);
  }
  const neural::FeatureStats stats = neural::compute_feature_stats(features);
  for (auto& f : features) neural::apply_normalization(f, stats);

  neural::MlpParameters params = kaiming_init(cfg.mlp, cfg.seed);
  params.stats = stats;
  params.config_hash = mix(mix(cfg.seed, static_cast<std::uint64_t>(cfg.horizon)),
                           static_cast<std::uint64_t>(cfg.mlp.depth * 1000 + cfg.mlp.hidden));
  AdamState adam = make_adam_state(params);
  const SequentialLoader loader(traces, cfg);

  const double loss_scale = (cfg.loss == LossKind::TwoD) ? kTwoDScale : 1.0;
  const int n_win = cfg.horizon + 1;

  TrainResult result;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, epoch);
    double epoch_loss = 0.0;
    long epoch_windows = 0;
    int skipped = 0;

    for (const Batch& batch : loader.epoch_batches(epoch)) {
      struct ItemData {
        Subsequence sub;
        neural::FeatureTensor features;
        neural::CorrectionTensor corrections;
        std::vector<double> out_grad;
      };
      std::vector<ItemData> items;
      for (const auto& sub : batch.items) {
        ItemData item;
        item.sub = sub;
        item.features = slice_features(features[sub.trace_index], sub.start, sub.length);
        item.corrections = neural::mlp_forward(params, item.features, cfg.exec);
        item.out_grad.assign(static_cast<size_t>(sub.length) * model::kSvCount, 0.0);
        items.push_back(std::move(item));
      }

      // all windows of the batch, solved and differentiated independently
      struct WindowTask {
        int item;
        int head;  // index within the subsequence
      };
      std::vector<WindowTask> tasks;
      for (size_t ii = 0; ii < items.size(); ++ii) {
        for (int head = cfg.horizon; head < items[ii].sub.length; ++head) {
          tasks.push_back({static_cast<int>(ii), head});
        }
      }
      std::vector<WindowResult> results(tasks.size());

      parallel_for(static_cast<int>(tasks.size()), cfg.exec, [&](int wi) {
        const WindowTask& task = tasks[wi];
        const ItemData& item = items[task.item];
        const Trace& trace = traces[item.sub.trace_index];
        const auto& base = baselines[item.sub.trace_index];
        const int abs_head = item.sub.start + task.head;
        const int abs_start = abs_head - cfg.horizon;

        try {
          estimate::HorizonProblem problem;
          problem.include_arrival_cost = cfg.arrival_cost;
          problem.noise = model::NoiseModel{};
          for (int j = 0; j < n_win; ++j) {
            const int abs = abs_start + j;
            if (!base[abs].valid || trace.epochs[abs].visible_count() == 0) {
              return;  // window straddles a dropped epoch: skipped
            }
            problem.epochs.push_back(trace.epochs[abs]);
            problem.corrections.push_back(
                item.corrections.epoch_corrections(task.head - cfg.horizon + j));
            problem.warm_start.push_back(base[abs].state);
          }
          if (cfg.arrival_cost) {
            problem.prior_state = problem.warm_start.front();
            problem.prior_covariance = 0.05 * model::CovarianceMatrix::Identity();
          }

          const estimate::SolveReport rep =
              solve_with_polish(problem, {cfg.gn_step, cfg.gn_iterations, 1e-6});
          if (!rep.converged) return;  // skipped, counted below

          // loss and dJ/dx over the horizon
          diff::AdjointSeed seed(n_win, model::StateVector::Zero());
          double loss = 0.0;
          const double per_state =
              cfg.supervise_whole_horizon ? 1.0 / static_cast<double>(n_win) : 1.0;
          if (cfg.loss == LossKind::Edf) {
            std::vector<geo::EcefPosition> positions;
            for (const auto& s : rep.trajectory) {
              positions.push_back(geo::EcefPosition::from_vec(model::state_position(s)));
            }
            const TrajectoryLoss tl = loss_edf(positions, *map);
            loss = tl.value;
            for (int j = 0; j < n_win; ++j) {
              seed[j][model::sx::kX] = tl.gradients[j].x();
              seed[j][model::sx::kY] = tl.gradients[j].y();
              seed[j][model::sx::kZ] = tl.gradients[j].z();
            }
          } else {
            for (int j = 0; j < n_win; ++j) {
              if (!cfg.supervise_whole_horizon && j != n_win - 1) continue;
              const int abs = abs_start + j;
              const geo::EcefPosition pred =
                  geo::EcefPosition::from_vec(model::state_position(rep.trajectory[j]));
              PointLoss pl;
              if (cfg.loss == LossKind::ThreeD) {
                pl = loss_3d(pred, geo::lla_to_ecef(trace.labels[abs].position));
              } else {
                pl = loss_2d(pred, trace.labels[abs].position.latitude,
                             trace.labels[abs].position.longitude);
              }
              loss += per_state * loss_scale * pl.value;
              seed[j][model::sx::kX] = per_state * loss_scale * pl.gradient.x();
              seed[j][model::sx::kY] = per_state * loss_scale * pl.gradient.y();
              seed[j][model::sx::kZ] = per_state * loss_scale * pl.gradient.z();
            }
          }

          WindowResult res;
          res.grad = diff::mhe_adjoint(problem, rep, seed);
          res.loss = loss;
          res.ok = true;
          results[wi] = std::move(res);
        } catch (const std::exception&) {
          // solver failure: window skipped
        }
      });

      long accepted = 0;
      double batch_loss = 0.0;
      for (size_t wi = 0; wi < tasks.size(); ++wi) {
        if (!results[wi].ok) {
          ++skipped;
          continue;
        }
        ++accepted;
        batch_loss += results[wi].loss;
        ItemData& item = items[tasks[wi].item];
        const int base_row = tasks[wi].head - cfg.horizon;
        for (int j = 0; j < n_win; ++j) {
          for (int s = 0; s < model::kSvCount; ++s) {
            item.out_grad[static_cast<size_t>(base_row + j) * model::kSvCount + s] +=
                results[wi].grad[j][s];
          }
        }
      }
      if (accepted == 0) continue;

      if (!std::isfinite(batch_loss)) {
        std::ostringstream msg;
        msg << "train: non-finite loss at epoch " << epoch << " (windows " << accepted << ")";
        throw std::runtime_error(msg.str());
      }

      const double inv = 1.0 / static_cast<double>(accepted);
      neural::MlpGradients grads = neural::zero_gradients(params);
      for (auto& item : items) {
        for (auto& g : item.out_grad) g *= inv;
        grads.accumulate(neural::mlp_backward(params, item.features, item.out_grad, cfg.exec));
      }
      adam_step(params, grads, adam, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

      epoch_loss += batch_loss;
      epoch_windows += accepted;
    }

    EpochReport row;
    row.epoch = epoch;
    row.train_loss = epoch_windows > 0 ? epoch_loss / static_cast<double>(epoch_windows)
                                       : std::numeric_limits<double>::quiet_NaN();
    row.skipped_horizons = skipped;
    row.val_rmse = std::numeric_limits<double>::quiet_NaN();
    if (validation != nullptr) {
      const auto corr = model_corrections(params, validation->epochs, cfg.exec);
      estimate::EngineConfig inference;  // arrival cost on, N=5
      const estimate::RunResult run = estimate::run_trace(validation->epochs, corr, inference);
      row.val_rmse = horizontal_rmse_vs_labels(run.states, run.statuses, *validation);
    }
    result.report.push_back(row);
  }

  result.params = std::move(params);
  return result;
}

void write_report_csv(const std::string& path, const std::vector<EpochReport>& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("report: cannot open " + path);
  out << "epoch,train_loss,val_rmse,skipped_horizons\n";
  for (const auto& row : report) {
    out << row.epoch << ',' << row.train_loss << ',' << row.val_rmse << ','
        << row.skipped_horizons << '\n';
  }
}

}  // namespace rangekit::train
