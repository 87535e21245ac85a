#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dycstg/sim.hpp"

namespace dycstg {

// ---------------------------------------------------------------------------
// Savitzky-Golay smoothing with mirror padding at the ends.
// ---------------------------------------------------------------------------
inline std::vector<double> savgol_coefficients(int window_len, int polyorder) {
  if (window_len % 2 == 0) throw ContractError("savgol: window length must be odd");
  if (window_len <= polyorder)
    throw ContractError("savgol: window length must exceed polynomial order");
  const int m = window_len / 2;
  Eigen::MatrixXd A(window_len, polyorder + 1);
  for (int j = -m; j <= m; ++j)
    for (int k = 0; k <= polyorder; ++k)
      A(j + m, k) = std::pow(static_cast<double>(j), k);
  // Smoothing kernel = first row of (A^T A)^-1 A^T.
  Eigen::MatrixXd ata = A.transpose() * A;
  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(polyorder + 1);
  e0(0) = 1.0;
  Eigen::VectorXd c = A * ata.ldlt().solve(e0);
  return std::vector<double>(c.data(), c.data() + window_len);
}

inline std::vector<double> smooth_savitzky_golay(const std::vector<double>& v, int window_len,
                                                 int polyorder) {
  const auto coef = savgol_coefficients(window_len, polyorder);
  const int m = window_len / 2;
  const std::int64_t n = static_cast<std::int64_t>(v.size());
  if (n == 0) return {};
  std::vector<double> out(v.size());
  for (std::int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = -m; j <= m; ++j) {
      std::int64_t idx = i + j;
      if (idx < 0) idx = -idx;                       // mirror
      if (idx >= n) idx = 2 * (n - 1) - idx;         // mirror
      idx = std::clamp<std::int64_t>(idx, 0, n - 1);
      acc += coef[static_cast<std::size_t>(j + m)] * v[static_cast<std::size_t>(idx)];
    }
    out[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Downsampling to an aligned 2-second grid (0.5 Hz).
// ---------------------------------------------------------------------------
struct AlignedChannel {
  std::int64_t sensor_id = 0;
  SensorKind kind = SensorKind::Temperature;
  int room = 0;
  std::vector<double> v;
  std::vector<std::uint8_t> flag;   // anomaly ground truth per aligned step
  std::vector<std::uint8_t> akind;  // AnomalyKind per aligned step
};

struct AlignedData {
  double step_s = 2.0;
  std::int64_t n_steps = 0;
  std::vector<AlignedChannel> channels;
};

// Bin [2k, 2k+2): analog values average, door values take the last state in
// the bin (LOCF). A bin with no native sample is a gap error. Labels follow
// by bin majority (at least half the native samples flagged).
inline AlignedData downsample(const RawSeries& series, const AnomalyLabels& labels,
                              double target_hz = 0.5) {
  if (target_hz <= 0.0) throw ContractError("downsample: target rate must be positive");
  AlignedData out;
  out.step_s = 1.0 / target_hz;
  std::int64_t common_steps = -1;
  for (std::size_t c = 0; c < series.channels.size(); ++c) {
    const auto& ch = series.channels[c];
    if (ch.rate_hz < target_hz)
      throw DataError("downsample: sensor " + std::to_string(ch.sensor_id) +
                      " native rate below target");
    const auto per_bin_f = ch.rate_hz * out.step_s;
    const auto per_bin = static_cast<std::size_t>(per_bin_f);
    if (std::abs(per_bin_f - static_cast<double>(per_bin)) > 1e-9)
      throw DataError("downsample: native rate of sensor " + std::to_string(ch.sensor_id) +
                      " is not an integer multiple of the target rate");
    const std::int64_t bins = static_cast<std::int64_t>(ch.v.size() / per_bin);
    if (bins == 0)
      throw DataError("downsample: sensor " + std::to_string(ch.sensor_id) +
                      " has an empty first bin (gap at t=0)");
    common_steps = common_steps < 0 ? bins : std::min(common_steps, bins);
  }
  out.n_steps = common_steps;

  for (std::size_t c = 0; c < series.channels.size(); ++c) {
    const auto& ch = series.channels[c];
    const auto per_bin = static_cast<std::size_t>(ch.rate_hz * out.step_s);
    AlignedChannel ac;
    ac.sensor_id = ch.sensor_id;
    ac.kind = ch.kind;
    ac.room = ch.room;
    ac.v.resize(static_cast<std::size_t>(common_steps));
    ac.flag.resize(static_cast<std::size_t>(common_steps));
    ac.akind.resize(static_cast<std::size_t>(common_steps));
    for (std::int64_t k = 0; k < common_steps; ++k) {
      const std::size_t lo = static_cast<std::size_t>(k) * per_bin;
      double value;
      if (ch.kind == SensorKind::Door) {
        value = ch.v[lo + per_bin - 1];  // last observation carried forward
      } else {
        double acc = 0.0;
        for (std::size_t i = lo; i < lo + per_bin; ++i) acc += ch.v[i];
        value = acc / static_cast<double>(per_bin);
      }
      std::size_t flagged = 0;
      std::uint8_t kind = 0;
      for (std::size_t i = lo; i < lo + per_bin; ++i)
        if (labels.flag[c][i]) {
          ++flagged;
          kind = labels.kind[c][i];
        }
      ac.v[static_cast<std::size_t>(k)] = value;
      ac.flag[static_cast<std::size_t>(k)] = flagged * 2 >= per_bin ? 1 : 0;
      ac.akind[static_cast<std::size_t>(k)] = flagged * 2 >= per_bin ? kind : 0;
    }
    out.channels.push_back(std::move(ac));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Windowing and the chronological split.
// ---------------------------------------------------------------------------
inline std::int64_t window_count(std::int64_t total, std::int64_t T, std::int64_t stride) {
  if (total < T) throw DataError("series shorter than one window");
  return (total - T) / stride + 1;
}

inline std::vector<std::int64_t> make_window_starts(std::int64_t total, std::int64_t T,
                                                    std::int64_t stride) {
  const std::int64_t count = window_count(total, T, stride);
  std::vector<std::int64_t> starts(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) starts[static_cast<std::size_t>(i)] = i * stride;
  return starts;
}

struct SplitIndices {
  std::int64_t train_end = 0;  // windows [0, train_end)
  std::int64_t val_end = 0;    // windows [train_end, val_end), rest = test
};

// floor(train), floor(val), remainder to test; input must be sorted.
inline SplitIndices chronological_split(const std::vector<std::int64_t>& starts,
                                        double train_ratio = 0.70, double val_ratio = 0.15) {
  if (!std::is_sorted(starts.begin(), starts.end()))
    throw ContractError("chronological_split: windows must be sorted by start");
  const auto n = static_cast<std::int64_t>(starts.size());
  SplitIndices s;
  s.train_end = static_cast<std::int64_t>(std::floor(train_ratio * static_cast<double>(n)));
  s.val_end = s.train_end +
              static_cast<std::int64_t>(std::floor(val_ratio * static_cast<double>(n)));
  return s;
}

// ---------------------------------------------------------------------------
// The windowed dataset used by training. Features are assembled lazily per
// batch from the (standardized) aligned series; windows are start offsets.
// Feature layout per node per step:
//   [value, first-difference, rolling-mean(5), rolling-std(5),
//    residual-from-rolling-mean, kind-onehot(4)]
// ---------------------------------------------------------------------------
constexpr std::int64_t kFeatureDim = 9;

struct WindowStore {
  AlignedData aligned;              // standardized values
  std::vector<double> raw_door;     // door channel states per step (pre-standardization)
  std::vector<std::size_t> door_channel_index;  // indices into aligned.channels
  GraphSpec graph;
  std::int64_t T = 150;
  std::int64_t stride = 15;
  std::vector<std::int64_t> window_starts;
  SplitIndices split;
  std::vector<double> mean, stddev;  // per channel, from the train time range

  std::int64_t n_nodes() const { return static_cast<std::int64_t>(aligned.channels.size()); }
};

// Standardizes with statistics from the training time range only (the first
// 70% of the timeline), so validation/test never leak into the scaling.
inline WindowStore build_window_store(AlignedData aligned, const GraphSpec& graph,
                                      std::int64_t T = 150, std::int64_t stride = 15,
                                      double train_ratio = 0.70, double val_ratio = 0.15) {
  WindowStore store;
  store.graph = graph;
  store.T = T;
  store.stride = stride;
  store.window_starts = make_window_starts(aligned.n_steps, T, stride);
  store.split = chronological_split(store.window_starts, train_ratio, val_ratio);

  const std::int64_t train_steps = store.split.train_end > 0
      ? store.window_starts[static_cast<std::size_t>(store.split.train_end - 1)] + T
      : aligned.n_steps;

  for (std::size_t c = 0; c < aligned.channels.size(); ++c) {
    auto& ch = aligned.channels[c];
    if (ch.kind == SensorKind::Door) {
      store.door_channel_index.push_back(c);
      store.raw_door.insert(store.raw_door.end(), ch.v.begin(), ch.v.end());
    }
    double mu = 0.0;
    for (std::int64_t i = 0; i < train_steps; ++i) mu += ch.v[static_cast<std::size_t>(i)];
    mu /= static_cast<double>(train_steps);
    double var = 0.0;
    for (std::int64_t i = 0; i < train_steps; ++i) {
      const double d = ch.v[static_cast<std::size_t>(i)] - mu;
      var += d * d;
    }
    var /= static_cast<double>(train_steps);
    const double sd = std::sqrt(std::max(var, 1e-12));
    store.mean.push_back(mu);
    store.stddev.push_back(sd);
    for (auto& x : ch.v) x = (x - mu) / sd;
  }
  store.aligned = std::move(aligned);
  return store;
}

inline double door_state_at(const WindowStore& store, std::size_t door_idx,
                            std::int64_t step) {
  return store.raw_door[door_idx * static_cast<std::size_t>(store.aligned.n_steps) +
                        static_cast<std::size_t>(step)];
}

// Adjacency sequence for one window, driven by the (possibly corrupted) door
// sensor states inside the window.
inline DynamicAdjacencySequence window_adjacency(const WindowStore& store,
                                                 std::int64_t window_start,
                                                 bool use_dynamic_graph) {
  ControlStateSeries states;
  for (std::size_t d = 0; d < store.door_channel_index.size(); ++d) {
    const auto& ch = store.aligned.channels[store.door_channel_index[d]];
    std::vector<double> s(static_cast<std::size_t>(store.T));
    for (std::int64_t t = 0; t < store.T; ++t)
      s[static_cast<std::size_t>(t)] =
          use_dynamic_graph
              ? (door_state_at(store, d, window_start + t) > 0.5 ? 1.0 : 0.0)
              : 1.0;  // static ablation: every latent edge stays active
    states.states[ch.sensor_id] = std::move(s);
  }
  return build_adjacency_sequence(store.graph.base, store.graph.bindings, states, store.T);
}

// Features for one window into `dst` (T*N*kFeatureDim doubles, row-major).
// Rolling statistics look back over the global aligned series, clamped at 0.
inline void fill_window_features(const WindowStore& store, std::int64_t window_start,
                                 double* dst) {
  const std::int64_t N = store.n_nodes();
  const std::int64_t T = store.T;
  for (std::int64_t t = 0; t < T; ++t) {
    const std::int64_t g = window_start + t;
    for (std::int64_t n = 0; n < N; ++n) {
      const auto& ch = store.aligned.channels[static_cast<std::size_t>(n)];
      const double v = ch.v[static_cast<std::size_t>(g)];
      const double prev = g > 0 ? ch.v[static_cast<std::size_t>(g - 1)] : v;
      const std::int64_t lo = std::max<std::int64_t>(0, g - 4);
      double mu = 0.0;
      for (std::int64_t i = lo; i <= g; ++i) mu += ch.v[static_cast<std::size_t>(i)];
      mu /= static_cast<double>(g - lo + 1);
      double var = 0.0;
      for (std::int64_t i = lo; i <= g; ++i) {
        const double d = ch.v[static_cast<std::size_t>(i)] - mu;
        var += d * d;
      }
      var /= static_cast<double>(g - lo + 1);
      double* f = dst + (t * N + n) * kFeatureDim;
      f[0] = v;
      f[1] = v - prev;
      f[2] = mu;
      f[3] = std::sqrt(var);
      f[4] = v - mu;
      f[5] = ch.kind == SensorKind::Temperature ? 1.0 : 0.0;
      f[6] = ch.kind == SensorKind::Humidity ? 1.0 : 0.0;
      f[7] = ch.kind == SensorKind::Light ? 1.0 : 0.0;
      f[8] = ch.kind == SensorKind::Door ? 1.0 : 0.0;
    }
  }
}

// Credibility labels for one window (1 = trustworthy).
inline void fill_window_labels(const WindowStore& store, std::int64_t window_start,
                               double* dst) {
  const std::int64_t N = store.n_nodes();
  for (std::int64_t t = 0; t < store.T; ++t)
    for (std::int64_t n = 0; n < N; ++n)
      dst[t * N + n] =
          store.aligned.channels[static_cast<std::size_t>(n)]
                  .flag[static_cast<std::size_t>(window_start + t)]
              ? 0.0
              : 1.0;
}

}  // namespace dycstg
