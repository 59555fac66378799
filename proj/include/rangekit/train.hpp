#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rangekit/diff.hpp"
#include "rangekit/edf.hpp"
#include "rangekit/estimate.hpp"
#include "rangekit/neural.hpp"
#include "rangekit/trace.hpp"

// Losses (3D/2D/EDF), the sequential data loader and the end-to-end training
// loop wiring features -> MLP -> MHE -> loss -> adjoint -> Adam.

namespace rangekit::train {

enum class LossKind { ThreeD, TwoD, Edf };

struct TrainConfig {
  LossKind loss = LossKind::ThreeD;
  int horizon = 15;                  // training-time N; arrival cost off
  bool arrival_cost = false;
  int batch_size = 4;                // B subsequences per batch
  int subsequence_length = 60;       // L epochs
  double learning_rate = 0.01;
  double lr_decay = 0.95;            // per training epoch
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int max_epochs = 30;
  std::uint64_t seed = 1;
  neural::MlpShape mlp;              // 40 layers x 20 hidden by default
  double gn_step = 0.5;
  int gn_iterations = 10;
  bool supervise_whole_horizon = true;  // false: newest state only
  Exec exec = Exec::Parallel;
};

TrainConfig parse_train_config(const std::map<std::string, std::string>& kv);

struct LossValue {
  double value = 0.0;
  std::vector<double> per_epoch;  // breakdown over the horizon
};

struct PointLoss {
  double value = 0.0;
  Eigen::Vector3d gradient = Eigen::Vector3d::Zero();  // d loss / d predicted ECEF
};

// ||p_hat - p||^2 and its gradient.
PointLoss loss_3d(const geo::EcefPosition& pred, const geo::EcefPosition& label);

// Squared lat/lon error in radians through the ECEF->LLA chain; altitude is
// unsupervised by construction.
PointLoss loss_2d(const geo::EcefPosition& pred, double label_lat, double label_lon);

struct TrajectoryLoss {
  double value = 0.0;
  std::vector<Eigen::Vector3d> gradients;
};

// Mean smoothed-EDF cost over the horizon positions.
TrajectoryLoss loss_edf(const std::vector<geo::EcefPosition>& trajectory,
                        const edf::EdfCostMap& map);

// --- sequential loader -----------------------------------------------------

struct Subsequence {
  int trace_index = 0;
  int start = 0;   // epoch index into the trace
  int length = 0;  // == TrainConfig::subsequence_length
};

struct Batch {
  std::vector<Subsequence> items;
};

// Random offset per trace per training epoch, equal-length subsequences,
// shuffled across traces, grouped into batches of B.
class SequentialLoader {
 public:
  SequentialLoader(const std::vector<Trace>& traces, const TrainConfig& cfg);

  std::vector<Batch> epoch_batches(int training_epoch) const;
  int dropped_traces() const { return dropped_; }

 private:
  const std::vector<Trace>* traces_;
  TrainConfig cfg_;
  int dropped_ = 0;
};

// --- Adam ------------------------------------------------------------------

struct AdamState {
  std::vector<Eigen::MatrixXd> m_w, v_w;
  std::vector<Eigen::VectorXd> m_b, v_b;
  long step = 0;
};
AdamState make_adam_state(const neural::MlpParameters& params);

void adam_step(neural::MlpParameters& params, const neural::MlpGradients& grads, AdamState& state,
               double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// --- training loop ----------------------------------------------------------

struct EpochReport {
  int epoch = 0;
  double train_loss = 0.0;
  double val_rmse = 0.0;  // NaN when no validation trace
  int skipped_horizons = 0;
};

struct TrainResult {
  neural::MlpParameters params;
  std::vector<EpochReport> report;
};

// End-to-end training. Labels come from the traces for 3D/2D; EDF mode needs
// the map. The optional validation trace is evaluated with the inference
// engine (arrival cost on, N=5) each epoch.
TrainResult train_corrector(const std::vector<Trace>& traces, const TrainConfig& cfg,
                            const edf::EdfCostMap* map = nullptr,
                            const Trace* validation = nullptr);

void write_report_csv(const std::string& path, const std::vector<EpochReport>& report);

// Inference helper shared by eval/serve-side tooling: corrections for every
// epoch of a trace from a trained model.
std::vector<estimate::CorrectionSet> model_corrections(const neural::MlpParameters& params,
                                                       const std::vector<model::Epoch>& epochs,
                                                       Exec policy = Exec::Parallel);

}  // namespace rangekit::train
