#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dycstg/graph.hpp"
#include "dycstg/rng.hpp"

namespace dycstg {

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------
struct SensorSpec {
  std::int64_t id = 0;
  SensorKind kind = SensorKind::Temperature;
  int room = 0;  // -1 = outside
  double rate_hz = 1.0;
};

struct DoorSpec {
  std::int64_t sensor_id = 0;
  int room_a = 0;
  int room_b = -1;  // -1 = outside
};

struct SensorLayout {
  int n_rooms = 0;
  std::vector<SensorSpec> sensors;
  std::vector<DoorSpec> doors;

  void validate() const {
    std::vector<std::int64_t> ids;
    for (const auto& s : sensors) ids.push_back(s.id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw ConfigError("duplicate sensor ids in layout");
    for (const auto& d : doors) {
      if (d.room_a == d.room_b) throw ConfigError("door must connect two distinct rooms");
      if (d.room_a >= n_rooms || d.room_b >= n_rooms)
        throw ConfigError("door room out of range");
    }
  }
};

// Paper-matching census: 8 temperature, 8 humidity, 8 light, 7 door sensors
// across 4 rooms plus the outside. Temperature/humidity sample at 1 Hz,
// light/door at 2 Hz.
inline SensorLayout default_layout() {
  SensorLayout l;
  l.n_rooms = 4;
  std::int64_t id = 0;
  for (int k = 0; k < 3; ++k) {
    const SensorKind kind = k == 0   ? SensorKind::Temperature
                            : k == 1 ? SensorKind::Humidity
                                     : SensorKind::Light;
    const double rate = kind == SensorKind::Light ? 2.0 : 1.0;
    for (int r = 0; r < 4; ++r)
      for (int copy = 0; copy < 2; ++copy)
        l.sensors.push_back({id++, kind, r, rate});
  }
  const std::vector<std::pair<int, int>> door_rooms = {
      {0, 1}, {1, 2}, {2, 3}, {3, 0}, {0, -1}, {1, -1}, {2, -1}};
  for (const auto& [a, b] : door_rooms) {
    l.sensors.push_back({id, SensorKind::Door, a, 2.0});
    l.doors.push_back({id, a, b});
    ++id;
  }
  l.validate();
  return l;
}

// Base graph convention: intra-room edges 0.8, door-to-room edges 0.5, and
// cross-room temperature/humidity pairs through a door 0.6 (gated by that
// door). Bindings are disjoint because each room pair has one door.
struct GraphSpec {
  BaseGraph base;
  std::vector<ControlBinding> bindings;
};

inline GraphSpec layout_graph(const SensorLayout& layout) {
  const std::int64_t n = static_cast<std::int64_t>(layout.sensors.size());
  GraphSpec spec;
  spec.base = BaseGraph::empty(n);
  for (std::int64_t i = 0; i < n; ++i) {
    spec.base.node_kind[static_cast<std::size_t>(i)] = layout.sensors[i].kind;
    spec.base.node_room[static_cast<std::size_t>(i)] = layout.sensors[i].room;
  }
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = i + 1; j < n; ++j)
      if (layout.sensors[i].room == layout.sensors[j].room)
        spec.base.set_edge(i, j, 0.8);
  for (const auto& d : layout.doors) {
    ControlBinding binding;
    binding.control_node = d.sensor_id;
    for (std::int64_t i = 0; i < n; ++i) {
      const auto& si = layout.sensors[i];
      if (si.kind == SensorKind::Door) continue;
      if (si.room == d.room_a || si.room == d.room_b)
        if (si.room != layout.sensors[d.sensor_id].room)
          spec.base.set_edge(d.sensor_id, i, 0.5);
    }
    if (d.room_a >= 0 && d.room_b >= 0) {
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
          const auto& si = layout.sensors[i];
          const auto& sj = layout.sensors[j];
          if (i >= j) continue;
          if (si.room != d.room_a || sj.room != d.room_b) continue;
          if (si.kind == SensorKind::Door || sj.kind == SensorKind::Door) continue;
          if (si.kind != sj.kind) continue;
          if (si.kind == SensorKind::Light) continue;
          spec.base.set_edge(i, j, 0.6);
          binding.add_edge(i, j);
        }
    }
    spec.bindings.push_back(std::move(binding));
  }
  spec.base.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Raw series
// ---------------------------------------------------------------------------
struct RawChannel {
  std::int64_t sensor_id = 0;
  SensorKind kind = SensorKind::Temperature;
  int room = 0;
  double rate_hz = 1.0;
  std::vector<double> v;  // sample i is at time i / rate_hz

  double timestamp(std::size_t i) const { return static_cast<double>(i) / rate_hz; }
};

struct DoorEvent {
  double t = 0.0;
  std::int64_t door_id = 0;
  int state = 0;
};

struct RawSeries {
  double duration_s = 0.0;
  std::vector<RawChannel> channels;  // layout order
  std::vector<DoorEvent> events;
};

struct SimParams {
  double k_ambient = 1.0 / 1200.0;  // relaxation toward the room target
  double k_open = 1.0 / 240.0;      // cross-room pull while a door is open
  double door_closed_mean_s = 3600.0;
  double door_open_mean_s = 900.0;
  double door_min_interval_s = 60.0;
  double noise_temperature = 0.1;
  double noise_humidity = 0.5;
  double noise_light = 5.0;
};

inline double kind_noise_sigma(const SimParams& p, SensorKind k) {
  switch (k) {
    case SensorKind::Temperature: return p.noise_temperature;
    case SensorKind::Humidity: return p.noise_humidity;
    case SensorKind::Light: return p.noise_light;
    case SensorKind::Door: return 0.0;
  }
  return 0.0;
}

// Deterministic per seed. Room temperatures and humidities relax toward
// per-room drifting targets; while a door is open the two connected rooms
// additionally relax toward each other. Accumulation order: doors first,
// then rooms in index order, stepping at 2 Hz.
inline RawSeries simulate(const SensorLayout& layout, std::uint64_t seed,
                          double duration_hours, const SimParams& p = SimParams()) {
  if (layout.sensors.empty()) throw ConfigError("simulate: empty layout");
  if (duration_hours <= 0.0) throw ConfigError("simulate: duration must be positive");
  layout.validate();

  const double dt = 0.5;  // base step, 2 Hz
  const std::int64_t steps = static_cast<std::int64_t>(duration_hours * 3600.0 / dt);
  const int n_rooms = layout.n_rooms;
  const std::size_t n_doors = layout.doors.size();

  RawSeries out;
  out.duration_s = static_cast<double>(steps) * dt;
  for (const auto& s : layout.sensors) {
    RawChannel c;
    c.sensor_id = s.id;
    c.kind = s.kind;
    c.room = s.room;
    c.rate_hz = s.rate_hz;
    c.v.reserve(static_cast<std::size_t>(steps * s.rate_hz * dt) + 1);
    out.channels.push_back(std::move(c));
  }

  // Door open/close schedules: alternating exponential dwell times.
  Rng door_rng(mix64(seed ^ 0xd00d));
  std::vector<std::vector<std::pair<double, int>>> door_sched(n_doors);
  for (std::size_t d = 0; d < n_doors; ++d) {
    double t = 0.0;
    int state = 0;
    while (t < out.duration_s) {
      const double mean = state == 0 ? p.door_closed_mean_s : p.door_open_mean_s;
      t += std::max(p.door_min_interval_s, door_rng.exponential(1.0 / mean));
      if (t >= out.duration_s) break;
      state = 1 - state;
      door_sched[d].push_back({t, state});
      out.events.push_back({t, layout.doors[d].sensor_id, state});
    }
  }
  std::sort(out.events.begin(), out.events.end(),
            [](const DoorEvent& a, const DoorEvent& b) {
              return a.t != b.t ? a.t < b.t : a.door_id < b.door_id;
            });

  // Per-room targets: diurnal sinusoid + slow random walk, distinct phases.
  Rng env_rng(mix64(seed ^ 0xe17));
  std::vector<double> temp_phase(static_cast<std::size_t>(n_rooms)),
      hum_phase(static_cast<std::size_t>(n_rooms)),
      temp_offset(static_cast<std::size_t>(n_rooms)),
      hum_offset(static_cast<std::size_t>(n_rooms)),
      temp_walk(static_cast<std::size_t>(n_rooms), 0.0),
      hum_walk(static_cast<std::size_t>(n_rooms), 0.0);
  for (int r = 0; r < n_rooms; ++r) {
    temp_phase[r] = env_rng.uniform(0.0, 6.283185307179586);
    hum_phase[r] = env_rng.uniform(0.0, 6.283185307179586);
    temp_offset[r] = env_rng.normal(0.0, 2.0);
    hum_offset[r] = env_rng.normal(0.0, 5.0);
  }

  // Lamp schedules per room.
  Rng lamp_rng(mix64(seed ^ 0x1a3b));
  std::vector<std::vector<std::pair<double, int>>> lamp_sched(
      static_cast<std::size_t>(n_rooms));
  for (int r = 0; r < n_rooms; ++r) {
    double t = 0.0;
    int state = 0;
    while (t < out.duration_s) {
      const double mean = state == 0 ? 7200.0 : 2700.0;
      t += std::max(120.0, lamp_rng.exponential(1.0 / mean));
      if (t >= out.duration_s) break;
      state = 1 - state;
      lamp_sched[r].push_back({t, state});
    }
  }

  // Per-sensor fixed bias.
  Rng bias_rng(mix64(seed ^ 0xb1a5));
  std::vector<double> bias(layout.sensors.size());
  for (std::size_t i = 0; i < layout.sensors.size(); ++i)
    bias[i] = bias_rng.normal(0.0, 0.3 * std::max(1e-9, kind_noise_sigma(p, layout.sensors[i].kind) * 3.0));

  Rng noise_rng(mix64(seed ^ 0x0153));

  std::vector<double> room_temp(static_cast<std::size_t>(n_rooms)),
      room_hum(static_cast<std::size_t>(n_rooms));
  const double outside_temp0 = 12.0, outside_hum0 = 70.0;
  for (int r = 0; r < n_rooms; ++r) {
    room_temp[r] = 21.0 + temp_offset[r];
    room_hum[r] = 50.0 + hum_offset[r];
  }

  std::vector<std::size_t> door_cursor(n_doors, 0), lamp_cursor(static_cast<std::size_t>(n_rooms), 0);
  std::vector<int> door_state(n_doors, 0), lamp_state(static_cast<std::size_t>(n_rooms), 0);

  for (std::int64_t step = 0; step < steps; ++step) {
    const double t = static_cast<double>(step) * dt;

    for (std::size_t d = 0; d < n_doors; ++d)
      while (door_cursor[d] < door_sched[d].size() && door_sched[d][door_cursor[d]].first <= t)
        door_state[d] = door_sched[d][door_cursor[d]++].second;
    for (int r = 0; r < n_rooms; ++r)
      while (lamp_cursor[r] < lamp_sched[r].size() && lamp_sched[r][lamp_cursor[r]].first <= t)
        lamp_state[r] = lamp_sched[r][lamp_cursor[r]++].second;

    // Slow random walks on the targets, updated every 10 simulated minutes.
    if (step > 0 && step % 1200 == 0)
      for (int r = 0; r < n_rooms; ++r) {
        temp_walk[r] += env_rng.normal(0.0, 0.35);
        hum_walk[r] += env_rng.normal(0.0, 0.8);
      }

    const double day = 6.283185307179586 * t / 86400.0;
    const double outside_temp = outside_temp0 + 8.0 * std::sin(day - 1.5707963267948966);
    const double outside_hum = outside_hum0 - 10.0 * std::sin(day - 1.5707963267948966);
    const double daylight = std::max(0.0, std::sin(day - 1.5707963267948966)) * 600.0;

    std::vector<double> d_temp(static_cast<std::size_t>(n_rooms), 0.0),
        d_hum(static_cast<std::size_t>(n_rooms), 0.0);
    for (int r = 0; r < n_rooms; ++r) {
      const double target_t = 21.0 + temp_offset[r] + 3.0 * std::sin(day + temp_phase[r]) +
                              temp_walk[r];
      const double target_h = 50.0 + hum_offset[r] + 8.0 * std::sin(day + hum_phase[r]) +
                              hum_walk[r];
      d_temp[r] += p.k_ambient * (target_t - room_temp[r]);
      d_hum[r] += p.k_ambient * (target_h - room_hum[r]);
    }
    for (std::size_t d = 0; d < n_doors; ++d) {
      if (!door_state[d]) continue;
      const int a = layout.doors[d].room_a, b = layout.doors[d].room_b;
      const double ta = a >= 0 ? room_temp[a] : outside_temp;
      const double tb = b >= 0 ? room_temp[b] : outside_temp;
      const double ha = a >= 0 ? room_hum[a] : outside_hum;
      const double hb = b >= 0 ? room_hum[b] : outside_hum;
      if (a >= 0) {
        d_temp[a] += p.k_open * (tb - ta);
        d_hum[a] += p.k_open * (hb - ha);
      }
      if (b >= 0) {
        d_temp[b] += p.k_open * (ta - tb);
        d_hum[b] += p.k_open * (ha - hb);
      }
    }
    for (int r = 0; r < n_rooms; ++r) {
      room_temp[r] += d_temp[r] * dt;
      room_hum[r] += d_hum[r] * dt;
    }

    // Sample sensors at their native rates (1 Hz sensors on even base steps).
    for (std::size_t s = 0; s < layout.sensors.size(); ++s) {
      const auto& spec = layout.sensors[s];
      if (spec.rate_hz < 2.0 && (step % 2) != 0) continue;
      auto& ch = out.channels[s];
      double value = 0.0;
      switch (spec.kind) {
        case SensorKind::Temperature:
          value = room_temp[spec.room] + bias[s] + noise_rng.normal(0.0, p.noise_temperature);
          break;
        case SensorKind::Humidity:
          value = room_hum[spec.room] + bias[s] + noise_rng.normal(0.0, p.noise_humidity);
          break;
        case SensorKind::Light:
          value = daylight * 0.7 + (lamp_state[spec.room] ? 400.0 : 0.0) + bias[s] +
                  noise_rng.normal(0.0, p.noise_light);
          break;
        case SensorKind::Door: {
          std::size_t d = 0;
          for (; d < layout.doors.size(); ++d)
            if (layout.doors[d].sensor_id == spec.id) break;
          value = static_cast<double>(door_state[d]);
          break;
        }
      }
      ch.v.push_back(value);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Anomaly injection
// ---------------------------------------------------------------------------
enum class AnomalyKind : std::uint8_t { None = 0, Spike = 1, Drift = 2 };

struct AnomalyLabels {
  // Parallel to RawSeries channels; one flag/kind per native sample.
  std::vector<std::vector<std::uint8_t>> flag;
  std::vector<std::vector<std::uint8_t>> kind;
};

// Spikes: isolated 5-10 sigma impulses. Drift: additive linear ramp up to
// 8-16 sigma over a 2-15 minute segment. Only analog channels are corrupted;
// the per-channel ratio is scaled so the overall flagged fraction across all
// channels meets `ratio`.
inline std::pair<RawSeries, AnomalyLabels> inject_anomalies(RawSeries series,
                                                            std::uint64_t seed, double ratio,
                                                            bool spikes = true,
                                                            bool drifts = true) {
  if (ratio < 0.0 || ratio >= 0.5)
    throw ConfigError("inject_anomalies: ratio must lie in [0, 0.5)");
  if (!spikes && !drifts) throw ConfigError("inject_anomalies: no anomaly kinds enabled");

  AnomalyLabels labels;
  labels.flag.resize(series.channels.size());
  labels.kind.resize(series.channels.size());
  std::size_t total_points = 0, analog_points = 0;
  for (std::size_t c = 0; c < series.channels.size(); ++c) {
    labels.flag[c].assign(series.channels[c].v.size(), 0);
    labels.kind[c].assign(series.channels[c].v.size(), 0);
    total_points += series.channels[c].v.size();
    if (series.channels[c].kind != SensorKind::Door)
      analog_points += series.channels[c].v.size();
  }
  if (ratio == 0.0) return {std::move(series), std::move(labels)};
  if (analog_points == 0) throw ConfigError("inject_anomalies: no analog channels");

  const double analog_ratio =
      ratio * static_cast<double>(total_points) / static_cast<double>(analog_points);
  if (analog_ratio >= 0.9)
    throw ConfigError("inject_anomalies: ratio too high for the analog share");

  SimParams noise_ref;
  Rng rng(mix64(seed ^ 0xa40));
  for (std::size_t c = 0; c < series.channels.size(); ++c) {
    auto& ch = series.channels[c];
    if (ch.kind == SensorKind::Door) continue;
    const double sigma = kind_noise_sigma(noise_ref, ch.kind);
    const std::size_t n = ch.v.size();
    const auto target = static_cast<std::size_t>(analog_ratio * static_cast<double>(n));
    std::size_t flagged = 0;
    std::size_t guard = 0;
    while (flagged < target && guard++ < 100000) {
      const bool do_spike = spikes && (!drifts || rng.uniform() < 0.3);
      if (do_spike) {
        const std::size_t i = static_cast<std::size_t>(rng.uniform_index(n));
        if (labels.flag[c][i]) continue;
        const double mag = (5.0 + 5.0 * rng.uniform()) * sigma;
        ch.v[i] += rng.uniform() < 0.5 ? mag : -mag;
        labels.flag[c][i] = 1;
        labels.kind[c][i] = static_cast<std::uint8_t>(AnomalyKind::Spike);
        ++flagged;
      } else {
        const double dur_s = rng.uniform(120.0, 900.0);  // 2-15 min
        auto len = static_cast<std::size_t>(dur_s * ch.rate_hz);
        len = std::min(len, target - flagged);  // keep the overall ratio on target
        if (len == 0 || len >= n) continue;
        const std::size_t start = static_cast<std::size_t>(rng.uniform_index(n - len));
        bool clean = true;
        for (std::size_t i = start; i < start + len && clean; ++i)
          if (labels.flag[c][i]) clean = false;
        if (!clean) continue;
        const double amp = (8.0 + 8.0 * rng.uniform()) * sigma * (rng.uniform() < 0.5 ? 1.0 : -1.0);
        for (std::size_t i = start; i < start + len; ++i) {
          ch.v[i] += amp * static_cast<double>(i - start + 1) / static_cast<double>(len);
          labels.flag[c][i] = 1;
          labels.kind[c][i] = static_cast<std::uint8_t>(AnomalyKind::Drift);
        }
        flagged += len;
      }
    }
  }
  return {std::move(series), std::move(labels)};
}

inline double flagged_fraction(const AnomalyLabels& labels) {
  std::size_t total = 0, flagged = 0;
  for (const auto& f : labels.flag) {
    total += f.size();
    for (auto b : f) flagged += b;
  }
  return total == 0 ? 0.0 : static_cast<double>(flagged) / static_cast<double>(total);
}

}  // namespace dycstg
