#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "rangekit/estimate.hpp"
#include "rangekit/model.hpp"
#include "rangekit/parallel.hpp"

// The upstream satellite-wise MLP: feature construction, masked forward
// pass, exact reverse-mode parameter gradients, Kaiming initialization and
// the checkpoint container. Forward/backward fan out over (step, satellite)
// slots; the serial path is the reference the tests pin the parallel one to.

namespace rangekit::neural {

constexpr int kFeatureCount = 14;

// Feature layout per satellite slot:
//   0 cn0 [dB-Hz], 1 elevation [rad], 2 prn/32,
//   3..5 baseline position in LLA [rad, rad, m],
//   6..8 satellite->user unit vector in NED,
//   9..11 baseline unit velocity in NED (zero below 0.1 m/s),
//   12 per-satellite pseudorange residual after the WLS fit [m],
//   13 root-sum-square of the epoch's residuals [m]
struct FeatureStats {
  Eigen::Matrix<double, kFeatureCount, 1> mean = Eigen::Matrix<double, kFeatureCount, 1>::Zero();
  Eigen::Matrix<double, kFeatureCount, 1> stddev = Eigen::Matrix<double, kFeatureCount, 1>::Ones();
};

// steps x SV x I tensor plus the aligned visibility mask; masked slots are
// zero-filled. Batched training stacks several of these.
struct FeatureTensor {
  int steps = 0;
  int sv = model::kSvCount;
  std::vector<double> values;        // steps*sv*kFeatureCount, row-major
  std::vector<std::uint8_t> mask;    // steps*sv

  double* slot(int t, int s) { return values.data() + (t * sv + s) * kFeatureCount; }
  const double* slot(int t, int s) const { return values.data() + (t * sv + s) * kFeatureCount; }
  bool visible(int t, int s) const { return mask[t * sv + s] != 0; }
};

struct CorrectionTensor {
  int steps = 0;
  int sv = model::kSvCount;
  std::vector<double> values;        // steps*sv, meters; zero at masked slots
  std::vector<std::uint8_t> mask;

  double at(int t, int s) const { return values[t * sv + s]; }

  estimate::CorrectionSet epoch_corrections(int t) const;
};

struct MlpShape {
  int input = kFeatureCount;
  int hidden = 20;
  int depth = 40;  // number of weight layers; ReLU between, linear head
};

struct MlpParameters {
  std::vector<Eigen::MatrixXd> weights;  // out x in per layer
  std::vector<Eigen::VectorXd> biases;
  FeatureStats stats;
  std::uint64_t config_hash = 0;

  MlpShape shape() const;
  int parameter_count() const;
};

MlpParameters kaiming_init(const MlpShape& shape, std::uint64_t seed);

// Baseline fix per epoch: WLS when solvable, otherwise the previous baseline
// propagated forward; invalid when neither exists.
struct BaselineFix {
  bool valid = false;
  model::StateVector state = model::StateVector::Zero();
};

std::vector<BaselineFix> wls_baselines(const std::vector<model::Epoch>& epochs);

// Raw (unnormalized) features when stats == nullptr, z-scored otherwise.
FeatureTensor build_features(const std::vector<model::Epoch>& epochs,
                             const std::vector<BaselineFix>& baselines,
                             const FeatureStats* stats = nullptr);

// Mask-aware z-score statistics over the visible slots of raw tensors.
FeatureStats compute_feature_stats(const std::vector<FeatureTensor>& raw);
void apply_normalization(FeatureTensor& tensor, const FeatureStats& stats);

CorrectionTensor mlp_forward(const MlpParameters& params, const FeatureTensor& features,
                             Exec policy = Exec::Parallel);

struct MlpGradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  void accumulate(const MlpGradients& other);
  void scale(double factor);
};
MlpGradients zero_gradients(const MlpParameters& params);

// Exact reverse-mode gradients of the masked forward pass; output_grad is a
// steps*sv array aligned with the correction tensor.
MlpGradients mlp_backward(const MlpParameters& params, const FeatureTensor& features,
                          const std::vector<double>& output_grad, Exec policy = Exec::Parallel);

void save_checkpoint(const std::string& path, const MlpParameters& params);
MlpParameters load_checkpoint(const std::string& path);

}  // namespace rangekit::neural
