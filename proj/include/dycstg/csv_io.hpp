#pragma once

#include <nlohmann/json.hpp>

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dycstg/preprocess.hpp"
#include "dycstg/sim.hpp"

namespace dycstg {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string anomaly_kind_name(std::uint8_t k) {
  switch (static_cast<AnomalyKind>(k)) {
    case AnomalyKind::None: return "none";
    case AnomalyKind::Spike: return "spike";
    case AnomalyKind::Drift: return "drift";
  }
  return "none";
}

inline std::uint8_t anomaly_kind_from_name(const std::string& s) {
  if (s == "none") return 0;
  if (s == "spike") return 1;
  if (s == "drift") return 2;
  throw DataError("unknown anomaly kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// Dataset CSV: timestamp,sensor_id,kind,value,label,anomaly_kind
// Rows are per channel in sensor-id order, time ascending. label 1 = flagged.
// ---------------------------------------------------------------------------
inline void write_dataset_csv(const std::string& path, const RawSeries& series,
                              const AnomalyLabels& labels) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f << "timestamp,sensor_id,kind,value,label,anomaly_kind\n";
  for (std::size_t c = 0; c < series.channels.size(); ++c) {
    const auto& ch = series.channels[c];
    for (std::size_t i = 0; i < ch.v.size(); ++i) {
      f << format_double(ch.timestamp(i)) << ',' << ch.sensor_id << ','
        << kind_name(ch.kind) << ',' << format_double(ch.v[i]) << ','
        << static_cast<int>(labels.flag[c][i]) << ','
        << anomaly_kind_name(labels.kind[c][i]) << '\n';
    }
  }
  if (!f) throw DataError("write failed for " + path);
}

inline void write_event_csv(const std::string& path, const RawSeries& series) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f << "timestamp,door_id,state\n";
  for (const auto& e : series.events)
    f << format_double(e.t) << ',' << e.door_id << ',' << e.state << '\n';
  if (!f) throw DataError("write failed for " + path);
}

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace detail

inline std::pair<RawSeries, AnomalyLabels> load_dataset_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw DataError(path + ": empty file");
  if (line != "timestamp,sensor_id,kind,value,label,anomaly_kind" &&
      line != "timestamp,sensor_id,kind,value,label,anomaly_kind\r")
    throw DataError(path + ": unexpected header '" + line + "'");

  RawSeries series;
  AnomalyLabels labels;
  std::vector<std::int64_t> ids;
  std::vector<double> last_ts;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cols = detail::split_csv_line(line);
    if (cols.size() != 6)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected 6 columns, got " +
                      std::to_string(cols.size()));
    double ts, value;
    std::int64_t id;
    SensorKind kind;
    int flag;
    std::uint8_t akind;
    try {
      ts = std::stod(cols[0]);
      id = std::stoll(cols[1]);
      kind = kind_from_name(cols[2]);
      value = std::stod(cols[3]);
      flag = std::stoi(cols[4]);
      akind = anomaly_kind_from_name(cols[5]);
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed row");
    }

    std::size_t c = 0;
    for (; c < ids.size(); ++c)
      if (ids[c] == id) break;
    if (c == ids.size()) {
      ids.push_back(id);
      last_ts.push_back(-1.0);
      RawChannel ch;
      ch.sensor_id = id;
      ch.kind = kind;
      series.channels.push_back(std::move(ch));
      labels.flag.emplace_back();
      labels.kind.emplace_back();
    }
    auto& ch = series.channels[c];
    if (last_ts[c] >= 0.0 && ts <= last_ts[c])
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": timestamps not strictly increasing for sensor " + std::to_string(id));
    if (ch.v.size() == 1) ch.rate_hz = 1.0 / (ts - last_ts[c]);
    last_ts[c] = ts;
    ch.v.push_back(value);
    labels.flag[c].push_back(static_cast<std::uint8_t>(flag));
    labels.kind[c].push_back(akind);
    series.duration_s = std::max(series.duration_s, ts);
  }
  return {std::move(series), std::move(labels)};
}

inline RawSeries load_event_csv(const std::string& path, RawSeries series) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw DataError(path + ": empty file");
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cols = detail::split_csv_line(line);
    if (cols.size() != 3)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected 3 columns");
    try {
      series.events.push_back({std::stod(cols[0]), std::stoll(cols[1]), std::stoi(cols[2])});
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed row");
    }
  }
  return series;
}

// ---------------------------------------------------------------------------
// Graph configuration file (JSON): nodes with kind/room, weighted base edges,
// and control bindings. Round-trips losslessly.
// ---------------------------------------------------------------------------
inline nlohmann::json graph_to_json(const GraphSpec& spec) {
  nlohmann::json j;
  j["nodes"] = nlohmann::json::array();
  for (std::int64_t i = 0; i < spec.base.n_nodes; ++i)
    j["nodes"].push_back({{"id", i},
                          {"kind", kind_name(spec.base.node_kind[static_cast<std::size_t>(i)])},
                          {"room", spec.base.node_room[static_cast<std::size_t>(i)]}});
  j["edges"] = nlohmann::json::array();
  for (std::int64_t i = 0; i < spec.base.n_nodes; ++i)
    for (std::int64_t k = i + 1; k < spec.base.n_nodes; ++k)
      if (spec.base.at(i, k) > 0.0)
        j["edges"].push_back({{"i", i}, {"j", k}, {"w", spec.base.at(i, k)}});
  j["bindings"] = nlohmann::json::array();
  for (const auto& b : spec.bindings) {
    nlohmann::json jb;
    jb["control"] = b.control_node;
    jb["f_mod"] = "binary_identity";
    jb["edges"] = nlohmann::json::array();
    for (std::size_t e = 0; e < b.gated_edges.size(); e += 2)  // stored both orders
      jb["edges"].push_back({b.gated_edges[e].first, b.gated_edges[e].second});
    j["bindings"].push_back(std::move(jb));
  }
  return j;
}

inline GraphSpec graph_from_json(const nlohmann::json& j) {
  GraphSpec spec;
  const auto& nodes = j.at("nodes");
  spec.base = BaseGraph::empty(static_cast<std::int64_t>(nodes.size()));
  for (const auto& n : nodes) {
    const std::int64_t id = n.at("id").get<std::int64_t>();
    if (id < 0 || id >= spec.base.n_nodes) throw ConfigError("graph node id out of range");
    spec.base.node_kind[static_cast<std::size_t>(id)] =
        kind_from_name(n.at("kind").get<std::string>());
    spec.base.node_room[static_cast<std::size_t>(id)] = n.at("room").get<int>();
  }
  for (const auto& e : j.at("edges"))
    spec.base.set_edge(e.at("i").get<std::int64_t>(), e.at("j").get<std::int64_t>(),
                       e.at("w").get<double>());
  for (const auto& b : j.at("bindings")) {
    ControlBinding binding;
    binding.control_node = b.at("control").get<std::int64_t>();
    if (b.at("f_mod").get<std::string>() != "binary_identity")
      throw ConfigError("unknown modulation function '" +
                        b.at("f_mod").get<std::string>() + "'");
    for (const auto& e : b.at("edges"))
      binding.add_edge(e.at(0).get<std::int64_t>(), e.at(1).get<std::int64_t>());
    spec.bindings.push_back(std::move(binding));
  }
  spec.base.validate();
  return spec;
}

inline void save_graph_json(const std::string& path, const GraphSpec& spec) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f << graph_to_json(spec).dump(2) << "\n";
}

inline GraphSpec load_graph_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path);
  nlohmann::json j;
  f >> j;
  return graph_from_json(j);
}

// ---------------------------------------------------------------------------
// Window store binary layout (documented in the README):
//   magic "DYCW1\n", then little-endian int64/double fields in this order:
//   n_channels, n_steps, T, stride, train_end, val_end, n_door_channels,
//   per channel: sensor_id, kind, room, mean, stddev, values[n_steps],
//                flags[n_steps] (u8), akind[n_steps] (u8)
//   then door channel indices, then raw door states.
// ---------------------------------------------------------------------------
inline void save_window_store(const std::string& path, const WindowStore& store) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f.write("DYCW1\n", 6);
  auto w64 = [&f](std::int64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); };
  auto wd = [&f](double v) { f.write(reinterpret_cast<const char*>(&v), 8); };
  const std::int64_t n_ch = store.n_nodes();
  w64(n_ch);
  w64(store.aligned.n_steps);
  w64(store.T);
  w64(store.stride);
  w64(store.split.train_end);
  w64(store.split.val_end);
  w64(static_cast<std::int64_t>(store.door_channel_index.size()));
  for (std::int64_t c = 0; c < n_ch; ++c) {
    const auto& ch = store.aligned.channels[static_cast<std::size_t>(c)];
    w64(ch.sensor_id);
    w64(static_cast<std::int64_t>(ch.kind));
    w64(ch.room);
    wd(store.mean[static_cast<std::size_t>(c)]);
    wd(store.stddev[static_cast<std::size_t>(c)]);
    f.write(reinterpret_cast<const char*>(ch.v.data()),
            static_cast<std::streamsize>(ch.v.size() * 8));
    f.write(reinterpret_cast<const char*>(ch.flag.data()),
            static_cast<std::streamsize>(ch.flag.size()));
    f.write(reinterpret_cast<const char*>(ch.akind.data()),
            static_cast<std::streamsize>(ch.akind.size()));
  }
  for (auto d : store.door_channel_index) w64(static_cast<std::int64_t>(d));
  f.write(reinterpret_cast<const char*>(store.raw_door.data()),
          static_cast<std::streamsize>(store.raw_door.size() * 8));
  if (!f) throw DataError("write failed for " + path);
}

inline WindowStore load_window_store(const std::string& path, const GraphSpec& graph) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  char magic[6];
  f.read(magic, 6);
  if (!f || std::memcmp(magic, "DYCW1\n", 6) != 0)
    throw DataError(path + ": not a window store file");
  auto r64 = [&f, &path]() {
    std::int64_t v;
    f.read(reinterpret_cast<char*>(&v), 8);
    if (!f) throw DataError(path + ": truncated file");
    return v;
  };
  auto rd = [&f, &path]() {
    double v;
    f.read(reinterpret_cast<char*>(&v), 8);
    if (!f) throw DataError(path + ": truncated file");
    return v;
  };
  WindowStore store;
  store.graph = graph;
  const std::int64_t n_ch = r64();
  store.aligned.n_steps = r64();
  store.T = r64();
  store.stride = r64();
  store.split.train_end = r64();
  store.split.val_end = r64();
  const std::int64_t n_doors = r64();
  for (std::int64_t c = 0; c < n_ch; ++c) {
    AlignedChannel ch;
    ch.sensor_id = r64();
    ch.kind = static_cast<SensorKind>(r64());
    ch.room = static_cast<int>(r64());
    store.mean.push_back(rd());
    store.stddev.push_back(rd());
    ch.v.resize(static_cast<std::size_t>(store.aligned.n_steps));
    ch.flag.resize(static_cast<std::size_t>(store.aligned.n_steps));
    ch.akind.resize(static_cast<std::size_t>(store.aligned.n_steps));
    f.read(reinterpret_cast<char*>(ch.v.data()),
           static_cast<std::streamsize>(ch.v.size() * 8));
    f.read(reinterpret_cast<char*>(ch.flag.data()),
           static_cast<std::streamsize>(ch.flag.size()));
    f.read(reinterpret_cast<char*>(ch.akind.data()),
           static_cast<std::streamsize>(ch.akind.size()));
    if (!f) throw DataError(path + ": truncated file");
    store.aligned.channels.push_back(std::move(ch));
  }
  for (std::int64_t d = 0; d < n_doors; ++d)
    store.door_channel_index.push_back(static_cast<std::size_t>(r64()));
  store.raw_door.resize(static_cast<std::size_t>(n_doors * store.aligned.n_steps));
  f.read(reinterpret_cast<char*>(store.raw_door.data()),
         static_cast<std::streamsize>(store.raw_door.size() * 8));
  if (!f) throw DataError(path + ": truncated file");
  store.window_starts = make_window_starts(store.aligned.n_steps, store.T, store.stride);
  return store;
}

}  // namespace dycstg
