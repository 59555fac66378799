#include "rangekit/neural.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "rangekit/geo.hpp"
#include "rangekit/sim.hpp"

namespace rangekit::neural {

estimate::CorrectionSet CorrectionTensor::epoch_corrections(int t) const {
  estimate::CorrectionSet out{};
  for (int s = 0; s < sv; ++s) out[s] = values[t * sv + s];
  return out;
}

MlpShape MlpParameters::shape() const {
  MlpShape s;
  s.depth = static_cast<int>(weights.size());
  s.input = s.depth > 0 ? static_cast<int>(weights.front().cols()) : kFeatureCount;
  s.hidden = s.depth > 1 ? static_cast<int>(weights.front().rows()) : 1;
  return s;
}

int MlpParameters::parameter_count() const {
  int n = 0;
  for (size_t l = 0; l < weights.size(); ++l) {
    n += static_cast<int>(weights[l].size() + biases[l].size());
  }
  return n;
}

MlpParameters kaiming_init(const MlpShape& shape, std::uint64_t seed) {
  if (shape.depth < 1) throw std::invalid_argument("kaiming_init: depth must be >= 1");
  sim::Rng rng(seed);
  MlpParameters params;
  for (int l = 0; l < shape.depth; ++l) {
    const int in = (l == 0) ? shape.input : shape.hidden;
    const int out = (l == shape.depth - 1) ? 1 : shape.hidden;
    Eigen::MatrixXd w(out, in);
    const double sigma = std::sqrt(2.0 / static_cast<double>(in));
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) w(r, c) = sigma * rng.normal();
    }
    params.weights.push_back(std::move(w));
    params.biases.push_back(Eigen::VectorXd::Zero(out));
  }
  return params;
}

std::vector<BaselineFix> wls_baselines(const std::vector<model::Epoch>& epochs) {
  std::vector<BaselineFix> out(epochs.size());
  BaselineFix prev;
  double prev_utc = 0.0;
  for (size_t k = 0; k < epochs.size(); ++k) {
    BaselineFix fix;
    try {
      const Eigen::Vector3d init =
          prev.valid ? model::state_position(prev.state) : Eigen::Vector3d::Zero();
      fix.state = estimate::wls_solve(epochs[k], estimate::zero_corrections(), init,
                                      prev.valid ? prev.state[model::sx::kClk] : 0.0);
      fix.valid = true;
    } catch (const std::exception&) {
      if (prev.valid) {
        fix.state = model::propagate(prev.state, epochs[k].timestamp - prev_utc);
        fix.valid = true;
      }
    }
    out[k] = fix;
    if (fix.valid) {
      prev = fix;
      prev_utc = epochs[k].timestamp;
    }
  }
  return out;
}

FeatureTensor build_features(const std::vector<model::Epoch>& epochs,
                             const std::vector<BaselineFix>& baselines,
                             const FeatureStats* stats) {
  if (epochs.size() != baselines.size()) {
    throw std::invalid_argument("build_features: baselines must align with epochs");
  }
  FeatureTensor tensor;
  tensor.steps = static_cast<int>(epochs.size());
  tensor.values.assign(static_cast<size_t>(tensor.steps) * tensor.sv * kFeatureCount, 0.0);
  tensor.mask.assign(static_cast<size_t>(tensor.steps) * tensor.sv, 0);

  for (int t = 0; t < tensor.steps; ++t) {
    if (!baselines[t].valid) continue;  // epoch flagged: features zeroed, mask zero
    const model::StateVector& state = baselines[t].state;
    const Eigen::Vector3d pos = model::state_position(state);
    const geo::GeodeticPosition lla = geo::ecef_to_lla(geo::EcefPosition::from_vec(pos));
    const Eigen::Matrix3d ned = geo::ned_rotation(lla);

    const Eigen::Vector3d vel = model::state_velocity(state);
    Eigen::Vector3d dir_ned = Eigen::Vector3d::Zero();
    if (vel.norm() >= 0.1) dir_ned = ned * vel.normalized();

    // residuals after the baseline fit
    double rss = 0.0;
    std::array<double, model::kSvCount> residual{};
    for (int s = 0; s < tensor.sv; ++s) {
      const auto& obs = epochs[t].observations[s];
      if (!obs.visible) continue;
      const double range = (pos - obs.sat_position.vec()).norm();
      residual[s] = obs.pseudorange - (range + state[model::sx::kClk]);
      rss += residual[s] * residual[s];
    }
    rss = std::sqrt(rss);

    for (int s = 0; s < tensor.sv; ++s) {
      const auto& obs = epochs[t].observations[s];
      if (!obs.visible) continue;
      tensor.mask[t * tensor.sv + s] = 1;
      double* f = tensor.slot(t, s);
      const Eigen::Vector3d g_ned =
          ned * (pos - obs.sat_position.vec()).normalized();
      f[0] = obs.cn0;
      f[1] = obs.elevation;
      f[2] = static_cast<double>(obs.prn) / model::kSvCount;
      f[3] = lla.latitude;
      f[4] = lla.longitude;
      f[5] = lla.altitude;
      f[6] = g_ned.x();
      f[7] = g_ned.y();
      f[8] = g_ned.z();
      f[9] = dir_ned.x();
      f[10] = dir_ned.y();
      f[11] = dir_ned.z();
      f[12] = residual[s];
      f[13] = rss;
    }
  }
  if (stats != nullptr) apply_normalization(tensor, *stats);
  return tensor;
}

FeatureStats compute_feature_stats(const std::vector<FeatureTensor>& raw) {
  Eigen::Matrix<double, kFeatureCount, 1> sum = Eigen::Matrix<double, kFeatureCount, 1>::Zero();
  Eigen::Matrix<double, kFeatureCount, 1> sq = Eigen::Matrix<double, kFeatureCount, 1>::Zero();
  long count = 0;
  for (const auto& tensor : raw) {
    for (int t = 0; t < tensor.steps; ++t) {
      for (int s = 0; s < tensor.sv; ++s) {
        if (!tensor.visible(t, s)) continue;
        const double* f = tensor.slot(t, s);
        for (int i = 0; i < kFeatureCount; ++i) {
          sum[i] += f[i];
          sq[i] += f[i] * f[i];
        }
        ++count;
      }
    }
  }
  FeatureStats stats;
  if (count == 0) return stats;
  stats.mean = sum / static_cast<double>(count);
  for (int i = 0; i < kFeatureCount; ++i) {
    const double var = std::max(0.0, sq[i] / count - stats.mean[i] * stats.mean[i]);
    stats.stddev[i] = std::max(std::sqrt(var), 1e-8 * std::max(1.0, std::abs(stats.mean[i])));
  }
  return stats;
}

void apply_normalization(FeatureTensor& tensor, const FeatureStats& stats) {
  for (int t = 0; t < tensor.steps; ++t) {
    for (int s = 0; s < tensor.sv; ++s) {
      if (!tensor.visible(t, s)) continue;
      double* f = tensor.slot(t, s);
      for (int i = 0; i < kFeatureCount; ++i) f[i] = (f[i] - stats.mean[i]) / stats.stddev[i];
    }
  }
}

namespace {

// Single-slot forward; activations are cached when acts != nullptr.
double forward_slot(const MlpParameters& params, const double* input,
                    std::vector<Eigen::VectorXd>* acts) {
  const int depth = static_cast<int>(params.weights.size());
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(input, params.weights.front().cols());
  if (acts) acts->push_back(x);
  for (int l = 0; l < depth; ++l) {
    Eigen::VectorXd z = params.weights[l] * x + params.biases[l];
    if (l + 1 < depth) z = z.cwiseMax(0.0);  // ReLU on hidden layers
    x = std::move(z);
    if (acts) acts->push_back(x);
  }
  return x[0];
}

}  // namespace

CorrectionTensor mlp_forward(const MlpParameters& params, const FeatureTensor& features,
                             Exec policy) {
  if (static_cast<int>(params.weights.front().cols()) != kFeatureCount) {
    throw std::invalid_argument("mlp_forward: feature width mismatch");
  }
  CorrectionTensor out;
  out.steps = features.steps;
  out.sv = features.sv;
  out.values.assign(static_cast<size_t>(out.steps) * out.sv, 0.0);
  out.mask = features.mask;

  const int slots = out.steps * out.sv;
  parallel_for(slots, policy, [&](int i) {
    if (features.mask[i] == 0) return;  // invisible: output stays exactly zero
    const int t = i / out.sv;
    const int s = i % out.sv;
    out.values[i] = forward_slot(params, features.slot(t, s), nullptr);
  });
  return out;
}

void MlpGradients::accumulate(const MlpGradients& other) {
  for (size_t l = 0; l < weights.size(); ++l) {
    weights[l] += other.weights[l];
    biases[l] += other.biases[l];
  }
}

void MlpGradients::scale(double factor) {
  for (size_t l = 0; l < weights.size(); ++l) {
    weights[l] *= factor;
    biases[l] *= factor;
  }
}

MlpGradients zero_gradients(const MlpParameters& params) {
  MlpGradients g;
  for (size_t l = 0; l < params.weights.size(); ++l) {
    g.weights.push_back(Eigen::MatrixXd::Zero(params.weights[l].rows(), params.weights[l].cols()));
    g.biases.push_back(Eigen::VectorXd::Zero(params.biases[l].size()));
  }
  return g;
}

namespace {

void backward_slot(const MlpParameters& params, const double* input, double out_grad,
                   MlpGradients& acc) {
  const int depth = static_cast<int>(params.weights.size());
  std::vector<Eigen::VectorXd> acts;
  acts.reserve(depth + 1);
  forward_slot(params, input, &acts);

  Eigen::VectorXd dz = Eigen::VectorXd::Constant(1, out_grad);
  for (int l = depth - 1; l >= 0; --l) {
    acc.weights[l] += dz * acts[l].transpose();
    acc.biases[l] += dz;
    if (l == 0) break;
    const Eigen::VectorXd da = params.weights[l].transpose() * dz;
    // acts[l] is the post-ReLU output of layer l-1; gate through the ReLU
    dz.resize(da.size());
    for (int i = 0; i < da.size(); ++i) dz[i] = acts[l][i] > 0.0 ? da[i] : 0.0;
  }
}

}  // namespace

MlpGradients mlp_backward(const MlpParameters& params, const FeatureTensor& features,
                          const std::vector<double>& output_grad, Exec policy) {
  const int slots = features.steps * features.sv;
  if (static_cast<int>(output_grad.size()) != slots) {
    throw std::invalid_argument("mlp_backward: output gradient size mismatch");
  }

  if (policy == Exec::Serial || max_threads() == 1) {
    MlpGradients acc = zero_gradients(params);
    for (int i = 0; i < slots; ++i) {
      if (features.mask[i] == 0 || output_grad[i] == 0.0) continue;
      backward_slot(params, features.slot(i / features.sv, i % features.sv), output_grad[i], acc);
    }
    return acc;
  }

  // One accumulator per thread, reduced in thread order.
  std::vector<MlpGradients> partial(max_threads(), zero_gradients(params));
#pragma omp parallel for schedule(static)
  for (int i = 0; i < slots; ++i) {
    if (features.mask[i] == 0 || output_grad[i] == 0.0) continue;
    backward_slot(params, features.slot(i / features.sv, i % features.sv), output_grad[i],
                  partial[thread_index()]);
  }
  MlpGradients acc = std::move(partial.front());
  for (size_t t = 1; t < partial.size(); ++t) acc.accumulate(partial[t]);
  return acc;
}

namespace {

constexpr char kCheckpointMagic[8] = {'R', 'K', 'M', 'L', 'P', '\x01', 0, 0};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const MlpParameters& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.weights.size()));
  for (size_t l = 0; l < params.weights.size(); ++l) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.weights[l].rows()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.weights[l].cols()));
    for (int r = 0; r < params.weights[l].rows(); ++r) {
      for (int c = 0; c < params.weights[l].cols(); ++c) write_pod(out, params.weights[l](r, c));
    }
    for (int r = 0; r < params.biases[l].size(); ++r) write_pod(out, params.biases[l][r]);
  }
  for (int i = 0; i < kFeatureCount; ++i) write_pod(out, params.stats.mean[i]);
  for (int i = 0; i < kFeatureCount; ++i) write_pod(out, params.stats.stddev[i]);
  write_pod(out, params.config_hash);
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

MlpParameters load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  MlpParameters params;
  const auto layers = read_pod<std::uint32_t>(in);
  for (std::uint32_t l = 0; l < layers; ++l) {
    const auto rows = read_pod<std::uint32_t>(in);
    const auto cols = read_pod<std::uint32_t>(in);
    Eigen::MatrixXd w(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) w(r, c) = read_pod<double>(in);
    }
    Eigen::VectorXd b(rows);
    for (std::uint32_t r = 0; r < rows; ++r) b[r] = read_pod<double>(in);
    params.weights.push_back(std::move(w));
    params.biases.push_back(std::move(b));
  }
  for (int i = 0; i < kFeatureCount; ++i) params.stats.mean[i] = read_pod<double>(in);
  for (int i = 0; i < kFeatureCount; ++i) params.stats.stddev[i] = read_pod<double>(in);
  params.config_hash = read_pod<std::uint64_t>(in);
  return params;
}

}  // namespace rangekit::neural
