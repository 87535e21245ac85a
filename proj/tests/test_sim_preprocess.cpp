#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dycstg/preprocess.hpp"
#include "dycstg/sim.hpp"
#include "oracles.hpp"

using namespace dycstg;

TEST_CASE("simulator determinism per seed") {
  const auto layout = default_layout();
  RawSeries a = simulate(layout, 42, 0.5);
  RawSeries b = simulate(layout, 42, 0.5);
  REQUIRE(a.channels.size() == b.channels.size());
  for (std::size_t c = 0; c < a.channels.size(); ++c) {
    REQUIRE(a.channels[c].v.size() == b.channels[c].v.size());
    for (std::size_t i = 0; i < a.channels[c].v.size(); ++i)
      REQUIRE(a.channels[c].v[i] == b.channels[c].v[i]);
  }
  REQUIRE(a.events.size() == b.events.size());
  for (std::size_t i = 0; i < a.events.size(); ++i) {
    REQUIRE(a.events[i].t == b.events[i].t);
    REQUIRE(a.events[i].door_id == b.events[i].door_id);
    REQUIRE(a.events[i].state == b.events[i].state);
  }

  RawSeries c = simulate(layout, 43, 0.5);
  bool differs = false;
  for (std::size_t i = 0; i < a.channels[0].v.size(); ++i)
    if (a.channels[0].v[i] != c.channels[0].v[i]) differs = true;
  REQUIRE(differs);
}

TEST_CASE("simulator sanity: shapes, rates, door values") {
  const auto layout = default_layout();
  RawSeries s = simulate(layout, 7, 1.0);
  REQUIRE(s.channels.size() == 31);  // 8 temp + 8 hum + 8 light + 7 door
  for (const auto& ch : s.channels) {
    const auto expect = static_cast<std::size_t>(s.duration_s * ch.rate_hz);
    REQUIRE(ch.v.size() == expect);
    if (ch.kind == SensorKind::Door)
      for (double v : ch.v) REQUIRE((v == 0.0 || v == 1.0));
  }
  // door channels replay exactly the emitted event stream
  for (const auto& ch : s.channels) {
    if (ch.kind != SensorKind::Door) continue;
    int state = 0;
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < ch.v.size(); ++i) {
      const double t = ch.timestamp(i);
      while (cursor < s.events.size() && s.events[cursor].t <= t) {
        if (s.events[cursor].door_id == ch.sensor_id) state = s.events[cursor].state;
        ++cursor;
      }
      REQUIRE(ch.v[i] == static_cast<double>(state));
    }
  }
}

TEST_CASE("open doors couple rooms, closed doors leave them loosely related") {
  SensorLayout layout;
  layout.n_rooms = 2;
  layout.sensors = {{0, SensorKind::Temperature, 0, 1.0},
                    {1, SensorKind::Temperature, 1, 1.0},
                    {2, SensorKind::Door, 0, 2.0}};
  layout.doors = {{2, 0, 1}};

  // Correlate 300 s differences: this removes the diurnal trend shared by
  // every room and leaves the independent per-room dynamics (closed doors)
  // versus the door-coupled dynamics (open doors).
  const auto lag_diff = [](const std::vector<double>& v, std::size_t lag) {
    std::vector<double> out;
    for (std::size_t i = lag; i < v.size(); i += lag) out.push_back(v[i] - v[i - lag]);
    return out;
  };

  SimParams closed;
  closed.door_closed_mean_s = 1e12;  // the door never opens
  closed.k_ambient = 1.0 / 240.0;    // rooms track their independent targets quickly
  RawSeries sc = simulate(layout, 5, 6.0, closed);
  REQUIRE(sc.events.empty());
  const double rho_closed =
      oracle::pearson(lag_diff(sc.channels[0].v, 300), lag_diff(sc.channels[1].v, 300));

  SimParams open;
  open.door_closed_mean_s = 1.0;  // floored to the 60 s minimum dwell, then opens
  open.door_open_mean_s = 1e12;   // and stays open
  open.k_open = 1.0 / 20.0;       // strong mixing
  RawSeries so = simulate(layout, 5, 6.0, open);
  const double rho_open =
      oracle::pearson(lag_diff(so.channels[0].v, 300), lag_diff(so.channels[1].v, 300));

  REQUIRE(std::abs(rho_closed) < 0.2);
  REQUIRE(rho_open > 0.8);
}

TEST_CASE("event stream extrapolates to hundreds of door events per month") {
  const auto layout = default_layout();
  RawSeries s = simulate(layout, 11, 6.0);
  const double per_month =
      static_cast<double>(s.events.size()) / s.duration_s * 30.0 * 86400.0;
  REQUIRE(per_month >= 500.0);
}

TEST_CASE("anomaly injection: ratio, magnitudes, zero-ratio identity") {
  const auto layout = default_layout();
  RawSeries clean = simulate(layout, 21, 2.0);

  auto [corrupted, labels] = inject_anomalies(clean, 99, 0.15);
  const double frac = flagged_fraction(labels);
  REQUIRE(frac >= 0.13);
  REQUIRE(frac <= 0.17);

  // flagged samples moved, unflagged samples are untouched
  SimParams ref;
  for (std::size_t c = 0; c < clean.channels.size(); ++c)
    for (std::size_t i = 0; i < clean.channels[c].v.size(); ++i)
      if (!labels.flag[c][i])
        REQUIRE(corrupted.channels[c].v[i] == clean.channels[c].v[i]);

  // spikes alone: every flagged point is displaced by at least 5 sigma
  auto [spiked, slab] = inject_anomalies(clean, 123, 0.02, true, false);
  std::size_t n_spikes = 0;
  for (std::size_t c = 0; c < clean.channels.size(); ++c) {
    const double sigma = kind_noise_sigma(ref, clean.channels[c].kind);
    for (std::size_t i = 0; i < clean.channels[c].v.size(); ++i)
      if (slab.flag[c][i]) {
        ++n_spikes;
        REQUIRE(slab.kind[c][i] == static_cast<std::uint8_t>(AnomalyKind::Spike));
        REQUIRE(std::abs(spiked.channels[c].v[i] - clean.channels[c].v[i]) >=
                5.0 * sigma - 1e-9);
      }
  }
  REQUIRE(n_spikes > 0);

  // door channels are never corrupted
  for (std::size_t c = 0; c < clean.channels.size(); ++c)
    if (clean.channels[c].kind == SensorKind::Door)
      for (auto f : labels.flag[c]) REQUIRE(f == 0);

  auto [same, zlab] = inject_anomalies(clean, 99, 0.0);
  REQUIRE(flagged_fraction(zlab) == 0.0);
  for (std::size_t c = 0; c < clean.channels.size(); ++c)
    for (std::size_t i = 0; i < clean.channels[c].v.size(); ++i)
      REQUIRE(same.channels[c].v[i] == clean.channels[c].v[i]);

  REQUIRE_THROWS_AS(inject_anomalies(clean, 1, 0.5), ConfigError);
  REQUIRE_THROWS_AS(inject_anomalies(clean, 1, 0.1, false, false), ConfigError);
}

TEST_CASE("savitzky-golay: coefficients, polynomial exactness, noise reduction") {
  auto coef = savgol_coefficients(5, 2);
  // classical quadratic kernel [-3, 12, 17, 12, -3] / 35
  const double expect[5] = {-3.0 / 35, 12.0 / 35, 17.0 / 35, 12.0 / 35, -3.0 / 35};
  for (int i = 0; i < 5; ++i) REQUIRE(coef[i] == Catch::Approx(expect[i]).margin(1e-12));

  // constants are preserved exactly everywhere
  std::vector<double> c(40, 3.5);
  auto sc = smooth_savitzky_golay(c, 7, 3);
  for (double v : sc) REQUIRE(v == Catch::Approx(3.5).margin(1e-12));

  // a cubic passes through a window-7 order-3 filter untouched (interior points)
  std::vector<double> cubic(50);
  for (std::size_t i = 0; i < cubic.size(); ++i) {
    const double x = static_cast<double>(i) * 0.2 - 4.0;
    cubic[i] = 0.3 * x * x * x - x * x + 2.0 * x - 1.0;
  }
  auto sm = smooth_savitzky_golay(cubic, 7, 3);
  for (std::size_t i = 3; i + 3 < cubic.size(); ++i)
    REQUIRE(sm[i] == Catch::Approx(cubic[i]).margin(1e-9));

  // white noise variance shrinks
  Rng rng(77);
  std::vector<double> noise(2000);
  for (auto& v : noise) v = rng.normal();
  auto sn = smooth_savitzky_golay(noise, 7, 2);
  double var_raw = 0.0, var_sm = 0.0;
  for (std::size_t i = 0; i < noise.size(); ++i) {
    var_raw += noise[i] * noise[i];
    var_sm += sn[i] * sn[i];
  }
  REQUIRE(var_sm < 0.7 * var_raw);

  REQUIRE_THROWS_AS(savgol_coefficients(6, 2), ContractError);
  REQUIRE_THROWS_AS(savgol_coefficients(5, 5), ContractError);
}

namespace {
RawSeries tiny_series() {
  RawSeries s;
  s.duration_s = 8.0;
  RawChannel a;  // 1 Hz constant
  a.sensor_id = 0;
  a.kind = SensorKind::Temperature;
  a.rate_hz = 1.0;
  a.v = {4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0};
  RawChannel b;  // 2 Hz ramp 0,1,2,...
  b.sensor_id = 1;
  b.kind = SensorKind::Humidity;
  b.rate_hz = 2.0;
  b.v.resize(16);
  for (std::size_t i = 0; i < 16; ++i) b.v[i] = static_cast<double>(i);
  RawChannel d;  // 2 Hz door trace
  d.sensor_id = 2;
  d.kind = SensorKind::Door;
  d.rate_hz = 2.0;
  d.v = {0, 0, 0, 1, 1, 1, 1, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  s.channels = {a, b, d};
  return s;
}

AnomalyLabels empty_labels(const RawSeries& s) {
  AnomalyLabels l;
  for (const auto& ch : s.channels) {
    l.flag.push_back(std::vector<std::uint8_t>(ch.v.size(), 0));
    l.kind.push_back(std::vector<std::uint8_t>(ch.v.size(), 0));
  }
  return l;
}
}  // namespace

TEST_CASE("downsampling to the 2-second grid") {
  RawSeries s = tiny_series();
  AnomalyLabels labels = empty_labels(s);
  labels.flag[1] = {0, 0, 0, 0, 1, 1, 1, 1, 0, 1, 0, 0, 0, 0, 0, 0};
  labels.kind[1] = {0, 0, 0, 0, 1, 1, 1, 1, 0, 1, 0, 0, 0, 0, 0, 0};

  AlignedData aligned = downsample(s, labels);
  REQUIRE(aligned.n_steps == 4);
  REQUIRE(aligned.channels.size() == 3);

  for (double v : aligned.channels[0].v) REQUIRE(v == 4.0);  // constant averages

  // 2 Hz ramp: bin k averages {4k..4k+3} -> 4k + 1.5
  for (std::int64_t k = 0; k < 4; ++k)
    REQUIRE(aligned.channels[1].v[k] == Catch::Approx(4.0 * k + 1.5).margin(1e-12));

  // door takes the last native sample of each bin
  REQUIRE(aligned.channels[2].v == std::vector<double>{1.0, 0.0, 0.0, 1.0});

  // label majority per bin: bin1 has 4/4 flagged, bin2 has 1/4
  REQUIRE(aligned.channels[1].flag == std::vector<std::uint8_t>{0, 1, 0, 0});
  REQUIRE(aligned.channels[1].akind == std::vector<std::uint8_t>{0, 1, 0, 0});

  RawSeries slow = s;
  slow.channels[0].rate_hz = 0.25;
  REQUIRE_THROWS_AS(downsample(slow, labels), DataError);
}

TEST_CASE("window counting and chronological split") {
  REQUIRE(window_count(150, 150, 15) == 1);
  REQUIRE(window_count(165, 150, 15) == 2);
  REQUIRE(window_count(1000, 150, 15) == 57);
  REQUIRE_THROWS_AS(window_count(149, 150, 15), DataError);

  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t T = 2 + static_cast<std::int64_t>(rng.uniform_index(200));
    const std::int64_t stride = 1 + static_cast<std::int64_t>(rng.uniform_index(50));
    const std::int64_t total = T + static_cast<std::int64_t>(rng.uniform_index(2000));
    std::int64_t count = 0;
    for (std::int64_t start = 0; start + T <= total; start += stride) ++count;
    REQUIRE(window_count(total, T, stride) == count);
    auto starts = make_window_starts(total, T, stride);
    REQUIRE(static_cast<std::int64_t>(starts.size()) == count);
    REQUIRE(starts.front() == 0);
    REQUIRE(starts.back() + T <= total);
  }

  auto starts100 = make_window_starts(100, 1, 1);
  auto s100 = chronological_split(starts100);
  REQUIRE(s100.train_end == 70);
  REQUIRE(s100.val_end == 85);

  auto s10 = chronological_split(make_window_starts(10, 1, 1));
  REQUIRE(s10.train_end == 7);
  REQUIRE(s10.val_end == 8);  // floor(0.15*10)=1 window of validation, 2 of test

  // split boundaries are ordered: no window sits in two subsets
  REQUIRE(s100.train_end <= s100.val_end);
  REQUIRE(s100.val_end <= static_cast<std::int64_t>(starts100.size()));
}

TEST_CASE("window store: standardization, features, labels, adjacency") {
  const auto layout = default_layout();
  RawSeries raw = simulate(layout, 77, 1.0);
  auto [corrupted, labels] = inject_anomalies(std::move(raw), 5, 0.1);
  AlignedData aligned = downsample(corrupted, labels);
  const GraphSpec graph = layout_graph(layout);
  WindowStore store = build_window_store(std::move(aligned), graph, 150, 15);

  const std::int64_t N = store.n_nodes();
  REQUIRE(N == 31);
  REQUIRE(store.door_channel_index.size() == 7);

  // train-range standardization: mean ~0, sd ~1 over the training steps
  const std::int64_t train_steps =
      store.window_starts[static_cast<std::size_t>(store.split.train_end - 1)] + store.T;
  for (std::int64_t c = 0; c < N; ++c) {
    const auto& v = store.aligned.channels[static_cast<std::size_t>(c)].v;
    double mu = 0.0;
    for (std::int64_t i = 0; i < train_steps; ++i) mu += v[static_cast<std::size_t>(i)];
    mu /= static_cast<double>(train_steps);
    REQUIRE(std::abs(mu) < 1e-9);
  }

  // feature vector at a hand-picked position matches its definition
  std::vector<double> feat(static_cast<std::size_t>(store.T * N * kFeatureDim));
  const std::int64_t w0 = store.window_starts[3];
  fill_window_features(store, w0, feat.data());
  const std::int64_t t = 10, n = 5;
  const auto& ch = store.aligned.channels[static_cast<std::size_t>(n)];
  const std::int64_t g = w0 + t;
  const double* f = feat.data() + (t * N + n) * kFeatureDim;
  REQUIRE(f[0] == ch.v[static_cast<std::size_t>(g)]);
  REQUIRE(f[1] == ch.v[static_cast<std::size_t>(g)] - ch.v[static_cast<std::size_t>(g - 1)]);
  double mu5 = 0.0;
  for (std::int64_t i = g - 4; i <= g; ++i) mu5 += ch.v[static_cast<std::size_t>(i)];
  mu5 /= 5.0;
  REQUIRE(f[2] == Catch::Approx(mu5).margin(1e-12));
  REQUIRE(f[4] == Catch::Approx(ch.v[static_cast<std::size_t>(g)] - mu5).margin(1e-12));
  REQUIRE(f[5] + f[6] + f[7] + f[8] == 1.0);  // one-hot kind

  // labels: 1 = trustworthy, 0 at flagged steps
  std::vector<double> lab(static_cast<std::size_t>(store.T * N));
  fill_window_labels(store, w0, lab.data());
  for (std::int64_t tt = 0; tt < store.T; ++tt)
    for (std::int64_t nn = 0; nn < N; ++nn) {
      const auto flag = store.aligned.channels[static_cast<std::size_t>(nn)]
                            .flag[static_cast<std::size_t>(w0 + tt)];
      REQUIRE(lab[tt * N + nn] == (flag ? 0.0 : 1.0));
    }

  // adjacency: gated edges follow the raw door state; static ablation keeps all
  auto seq = window_adjacency(store, w0, true);
  auto seq_static = window_adjacency(store, w0, false);
  for (const auto& binding : store.graph.bindings) {
    const std::size_t door_pos =
        static_cast<std::size_t>(std::find_if(store.door_channel_index.begin(),
                                              store.door_channel_index.end(),
                                              [&](std::size_t idx) {
                                                return store.aligned
                                                           .channels[idx]
                                                           .sensor_id == binding.control_node;
                                              }) -
                                 store.door_channel_index.begin());
    for (std::int64_t tt = 0; tt < store.T; ++tt) {
      const double open = door_state_at(store, door_pos, w0 + tt) > 0.5 ? 1.0 : 0.0;
      for (const auto& [i, j] : binding.gated_edges) {
        const double base_w = store.graph.base.at(i, j);
        REQUIRE(seq.at(tt, i, j) == open * base_w);
        REQUIRE(seq_static.at(tt, i, j) == base_w);
      }
    }
  }
}

TEST_CASE("preprocessing is deterministic end to end") {
  const auto layout = default_layout();
  auto build = [&] {
    RawSeries raw = simulate(layout, 13, 1.0);
    auto [corrupted, labels] = inject_anomalies(std::move(raw), 17, 0.15);
    return build_window_store(downsample(corrupted, labels), layout_graph(layout), 150, 15);
  };
  WindowStore a = build();
  WindowStore b = build();
  REQUIRE(a.window_starts == b.window_starts);
  for (std::size_t c = 0; c < a.aligned.channels.size(); ++c)
    for (std::size_t i = 0; i < a.aligned.channels[c].v.size(); ++i)
      REQUIRE(a.aligned.channels[c].v[i] == b.aligned.channels[c].v[i]);
  REQUIRE(a.mean == b.mean);
  REQUIRE(a.stddev == b.stddev);
}
