// Command-line driver: simulate -> preprocess -> train/eval/ablate/grid.
// One flat JSON config drives every stage; flags override config keys and the
// merged effective config lands in the output directory's manifest.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric abort.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dycstg/csv_io.hpp"
#include "dycstg/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dycstg;

static constexpr const char* kVersion = "dycstg-1.0.0";

// ---------------------------------------------------------------------------
// Flat configuration
// ---------------------------------------------------------------------------
static json default_config() {
  return json{
      // simulate
      {"seed", 42},
      {"duration_hours", 168.0},
      {"anomaly_ratio", 0.15},
      {"inject_spikes", true},
      {"inject_drifts", true},
      // preprocess
      {"smooth_window", 11},
      {"smooth_polyorder", 3},
      {"window", 150},
      {"stride", 15},
      {"train_ratio", 0.70},
      {"val_ratio", 0.15},
      // model
      {"d_model", 32},
      {"heads", 4},
      {"g_layers", 2},
      {"t_layers", 2},
      {"causal_layers", 1},
      {"dropout", 0.1},
      {"leaky_slope", 0.2},
      {"use_dynamic_graph", true},
      {"use_gat", true},
      {"use_encoder", true},
      {"use_causal", true},
      // train
      {"epochs", 30},
      {"batch_size", 32},
      {"micro_batch", 4},
      {"lr", 0.001},
      {"weight_decay", 0.0001},
      {"focal_alpha", 0.75},
      {"focal_gamma", 2.0},
  };
}

static json load_config(const std::string& path, std::uint64_t* seed_flag,
                        const std::vector<std::string>& overrides) {
  json cfg = default_config();
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open config file " + path);
    json user;
    try {
      f >> user;
    } catch (const json::exception& e) {
      throw ConfigError("config " + path + ": " + e.what());
    }
    for (const auto& [key, value] : user.items()) {
      if (!cfg.contains(key)) throw ConfigError("config " + path + ": unknown key '" + key + "'");
      cfg[key] = value;
    }
  }
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    if (!cfg.contains(key)) throw ConfigError("--set: unknown key '" + key + "'");
    try {
      cfg[key] = json::parse(kv.substr(eq + 1));
    } catch (const json::exception&) {
      cfg[key] = kv.substr(eq + 1);  // bare strings need no quotes
    }
  }
  if (seed_flag) cfg["seed"] = *seed_flag;
  return cfg;
}

static ModelConfig model_config(const json& cfg) {
  ModelConfig mc;
  mc.d_model = cfg.at("d_model").get<std::int64_t>();
  mc.heads = cfg.at("heads").get<std::int64_t>();
  mc.g_layers = cfg.at("g_layers").get<std::int64_t>();
  mc.t_layers = cfg.at("t_layers").get<std::int64_t>();
  mc.causal_layers = cfg.at("causal_layers").get<std::int64_t>();
  mc.dropout = cfg.at("dropout").get<double>();
  mc.leaky_slope = cfg.at("leaky_slope").get<double>();
  mc.use_dynamic_graph = cfg.at("use_dynamic_graph").get<bool>();
  mc.use_gat = cfg.at("use_gat").get<bool>();
  mc.use_encoder = cfg.at("use_encoder").get<bool>();
  mc.use_causal = cfg.at("use_causal").get<bool>();
  mc.validate();
  return mc;
}

static TrainConfig train_config(const json& cfg) {
  TrainConfig tc;
  tc.epochs = cfg.at("epochs").get<std::int64_t>();
  tc.batch_size = cfg.at("batch_size").get<std::int64_t>();
  tc.micro_batch = cfg.at("micro_batch").get<std::int64_t>();
  tc.lr = cfg.at("lr").get<double>();
  tc.weight_decay = cfg.at("weight_decay").get<double>();
  tc.focal_alpha = cfg.at("focal_alpha").get<double>();
  tc.focal_gamma = cfg.at("focal_gamma").get<double>();
  tc.seed = cfg.at("seed").get<std::uint64_t>();
  tc.validate();
  return tc;
}

// ---------------------------------------------------------------------------
// Output directories and manifests
// ---------------------------------------------------------------------------
static void prepare_out_dir(const fs::path& out, bool force) {
  if (fs::exists(out) && !fs::is_directory(out))
    throw ConfigError(out.string() + " exists and is not a directory");
  if (fs::exists(out) && !fs::is_empty(out) && !force)
    throw ConfigError("output directory " + out.string() +
                      " is not empty; pass --force to write into it");
  fs::create_directories(out);
}

static std::string iso_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// One manifest per artifact directory; repeated runs append entries.
struct ManifestEntry {
  fs::path out;
  json entry;
  void finish() {
    entry["finished"] = iso_now();
    const fs::path path = out / "manifest.json";
    json all = json::array();
    if (fs::exists(path)) {
      std::ifstream f(path);
      f >> all;
      if (!all.is_array()) all = json::array({all});
    }
    all.push_back(entry);
    std::ofstream f(path);
    f << all.dump(2) << "\n";
  }
};

static ManifestEntry begin_manifest(const fs::path& out, const std::string& command,
                                    const std::string& config_path, const json& cfg,
                                    const std::vector<std::string>& inputs) {
  ManifestEntry m;
  m.out = out;
  m.entry = json{{"command", command},
                 {"config_path", config_path.empty() ? json() : json(config_path)},
                 {"effective_config", cfg},
                 {"seed", cfg.at("seed")},
                 {"inputs", inputs},
                 {"output_dir", out.string()},
                 {"version", kVersion},
                 {"started", iso_now()}};
  return m;
}

// ---------------------------------------------------------------------------
// Shared pipeline pieces
// ---------------------------------------------------------------------------
static WindowStore load_preprocessed(const fs::path& data_dir) {
  const GraphSpec graph = load_graph_json((data_dir / "graph.json").string());
  return load_window_store((data_dir / "windows.bin").string(), graph);
}

static json metrics_json(const Metrics& m, double zeta) {
  return json{{"tp", m.tp},
              {"fp", m.fp},
              {"tn", m.tn},
              {"fn", m.fn},
              {"accuracy", m.accuracy},
              {"precision", m.precision},
              {"recall", m.recall},
              {"f1", m.f1},
              {"auc", m.auc ? json(*m.auc) : json()},
              {"zeta", zeta}};
}

static void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw DataError("write failed for " + path.string());
}

static json model_config_json(const json& cfg) {
  json j;
  for (const char* k : {"d_model", "heads", "g_layers", "t_layers", "causal_layers",
                        "dropout", "leaky_slope", "use_dynamic_graph", "use_gat",
                        "use_encoder", "use_causal"})
    j[k] = cfg.at(k);
  return j;
}

static json train_config_json(const json& cfg) {
  json j;
  for (const char* k : {"epochs", "batch_size", "micro_batch", "lr", "weight_decay",
                        "focal_alpha", "focal_gamma", "seed"})
    j[k] = cfg.at(k);
  return j;
}

static void save_checkpoint(const fs::path& path, const json& cfg, const ModelParams& params,
                            double zeta, std::int64_t best_epoch) {
  json j;
  j["model_config"] = model_config_json(cfg);
  j["train_config"] = train_config_json(cfg);
  j["zeta"] = zeta;
  j["best_epoch"] = best_epoch;
  j["params"] = params_to_json(params);
  write_text(path, j.dump() + "\n");
}

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  double zeta = 0.5;
};

static Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  }
  Checkpoint ck;
  json merged = default_config();
  for (const auto& [key, value] : j.at("model_config").items()) merged[key] = value;
  ck.config = model_config(merged);
  ck.params = init_model(ck.config, 0);
  params_from_json(j.at("params"), ck.params);
  ck.zeta = j.at("zeta").get<double>();
  return ck;
}

static std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,lr_last,val_f1,val_zeta\n";
  for (const auto& e : history)
    out += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," +
           format_double(e.lr_last) + "," + format_double(e.val_f1) + "," +
           format_double(e.val_zeta) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------
static void cmd_simulate(const json& cfg, const std::string& config_path, const fs::path& out,
                         bool force) {
  prepare_out_dir(out, force);
  auto manifest = begin_manifest(out, "simulate", config_path, cfg, {});

  const auto layout = default_layout();
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  RawSeries raw = simulate(layout, seed, cfg.at("duration_hours").get<double>());
  auto [series, labels] =
      inject_anomalies(std::move(raw), mix64(seed ^ 0x19a7), cfg.at("anomaly_ratio").get<double>(),
                       cfg.at("inject_spikes").get<bool>(), cfg.at("inject_drifts").get<bool>());

  write_dataset_csv((out / "dataset.csv").string(), series, labels);
  write_event_csv((out / "events.csv").string(), series);
  save_graph_json((out / "graph.json").string(), layout_graph(layout));
  manifest.finish();

  std::size_t analog = 0, doors = 0;
  for (const auto& ch : series.channels) (ch.kind == SensorKind::Door ? doors : analog)++;
  const double per_month =
      static_cast<double>(series.events.size()) / series.duration_s * 30.0 * 86400.0;
  std::printf("sensors: %zu (%zu analog, %zu door)\n", series.channels.size(), analog, doors);
  std::printf("duration: %.1f h, door events: %zu (%.0f/month)\n", series.duration_s / 3600.0,
              series.events.size(), per_month);
  std::printf("flagged fraction: %.4f\n", flagged_fraction(labels));
}

static void cmd_preprocess(const json& cfg, const std::string& config_path,
                           const fs::path& data_dir, const fs::path& out, bool force) {
  prepare_out_dir(out, force);
  auto manifest = begin_manifest(out, "preprocess", config_path, cfg,
                                 {(data_dir / "dataset.csv").string(),
                                  (data_dir / "graph.json").string()});

  const GraphSpec graph = load_graph_json((data_dir / "graph.json").string());
  auto [series, labels] = load_dataset_csv((data_dir / "dataset.csv").string());

  // The dataset CSV carries no room assignment; recover it (and the node
  // order) from the graph's node metadata keyed by sensor id.
  if (static_cast<std::int64_t>(series.channels.size()) != graph.base.n_nodes)
    throw DataError("dataset has " + std::to_string(series.channels.size()) +
                    " sensors but the graph defines " + std::to_string(graph.base.n_nodes));
  for (auto& ch : series.channels) {
    if (ch.sensor_id < 0 || ch.sensor_id >= graph.base.n_nodes)
      throw DataError("sensor id " + std::to_string(ch.sensor_id) + " not present in graph");
    ch.room = graph.base.node_room[static_cast<std::size_t>(ch.sensor_id)];
    if (ch.kind != graph.base.node_kind[static_cast<std::size_t>(ch.sensor_id)])
      throw DataError("sensor " + std::to_string(ch.sensor_id) +
                      " kind differs between dataset and graph");
  }

  const int sw = cfg.at("smooth_window").get<int>();
  if (sw > 1)
    for (auto& ch : series.channels)
      if (ch.kind != SensorKind::Door)
        ch.v = smooth_savitzky_golay(ch.v, sw, cfg.at("smooth_polyorder").get<int>());

  WindowStore store = build_window_store(
      downsample(series, labels), graph, cfg.at("window").get<std::int64_t>(),
      cfg.at("stride").get<std::int64_t>(), cfg.at("train_ratio").get<double>(),
      cfg.at("val_ratio").get<double>());

  save_window_store((out / "windows.bin").string(), store);
  save_graph_json((out / "graph.json").string(), graph);
  manifest.finish();

  const auto n = static_cast<std::int64_t>(store.window_starts.size());
  std::printf("aligned steps: %lld, windows: %lld (T=%lld stride=%lld)\n",
              static_cast<long long>(store.aligned.n_steps), static_cast<long long>(n),
              static_cast<long long>(store.T), static_cast<long long>(store.stride));
  std::printf("split: train %lld / val %lld / test %lld\n",
              static_cast<long long>(store.split.train_end),
              static_cast<long long>(store.split.val_end - store.split.train_end),
              static_cast<long long>(n - store.split.val_end));
}

static void cmd_train(const json& cfg, const std::string& config_path, const fs::path& data_dir,
                      const fs::path& out, bool force) {
  prepare_out_dir(out, force);
  auto manifest = begin_manifest(out, "train", config_path, cfg,
                                 {(data_dir / "windows.bin").string(),
                                  (data_dir / "graph.json").string()});

  const WindowStore store = load_preprocessed(data_dir);
  const ModelConfig mc = model_config(cfg);
  const TrainConfig tc = train_config(cfg);

  const TrainResult r = train(mc, tc, store, [](const EpochRecord& e) {
    std::printf("epoch %lld: loss=%.6f val_f1=%.4f zeta=%.4f lr=%.6f\n",
                static_cast<long long>(e.epoch), e.train_loss, e.val_f1, e.val_zeta, e.lr_last);
    std::fflush(stdout);
  });

  const Metrics test = evaluate_test(r.best, mc, store, r.zeta, tc.micro_batch);
  save_checkpoint(out / "checkpoint.json", cfg, r.best, r.zeta, r.best_epoch);
  write_text(out / "history.csv", history_csv(r.history));
  write_text(out / "metrics.json", metrics_json(test, r.zeta).dump(2) + "\n");
  manifest.finish();

  std::printf("best epoch %lld (val F1 %.4f), zeta=%.4f\n",
              static_cast<long long>(r.best_epoch), r.best_val_f1, r.zeta);
  std::printf("test: precision=%.4f recall=%.4f f1=%.4f auc=%s\n", test.precision, test.recall,
              test.f1, test.auc ? format_double(*test.auc).c_str() : "n/a");
}

static void cmd_eval(const json& cfg, const std::string& config_path, const fs::path& data_dir,
                     const fs::path& checkpoint_path, const fs::path& out, bool force) {
  prepare_out_dir(out, force);
  auto manifest = begin_manifest(out, "eval", config_path, cfg,
                                 {(data_dir / "windows.bin").string(), checkpoint_path.string()});

  const WindowStore store = load_preprocessed(data_dir);
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  const Metrics test = evaluate_test(ck.params, ck.config, store, ck.zeta,
                                     cfg.at("micro_batch").get<std::int64_t>());

  write_text(out / "metrics.json", metrics_json(test, ck.zeta).dump(2) + "\n");
  manifest.finish();
  std::printf("test: precision=%.4f recall=%.4f f1=%.4f auc=%s zeta=%.4f\n", test.precision,
              test.recall, test.f1, test.auc ? format_double(*test.auc).c_str() : "n/a",
              ck.zeta);
}

static void cmd_ablate(const json& cfg, const std::string& config_path, const fs::path& data_dir,
                       const fs::path& out, bool force) {
  prepare_out_dir(out, force);
  auto manifest = begin_manifest(out, "ablate", config_path, cfg,
                                 {(data_dir / "windows.bin").string()});

  const WindowStore store = load_preprocessed(data_dir);
  const auto rows = ablate(model_config(cfg), train_config(cfg), store,
                           [](const std::string& name) {
                             std::printf("training variant: %s\n", name.c_str());
                             std::fflush(stdout);
                           });

  std::string csv = "variant,precision,recall,f1,auc,zeta\n";
  for (const auto& row : rows) {
    csv += row.name + "," + format_double(row.test.precision) + "," +
           format_double(row.test.recall) + "," + format_double(row.test.f1) + "," +
           (row.test.auc ? format_double(*row.test.auc) : "") + "," +
           format_double(row.zeta) + "\n";
    std::printf("%-18s f1=%.4f auc=%s\n", row.name.c_str(), row.test.f1,
                row.test.auc ? format_double(*row.test.auc).c_str() : "n/a");
  }
  write_text(out / "ablation.csv", csv);
  manifest.finish();
}

static void cmd_grid(const json& cfg, const std::string& config_path, const fs::path& data_dir,
                     const fs::path& out, bool force) {
  prepare_out_dir(out, force);
  auto manifest = begin_manifest(out, "grid", config_path, cfg,
                                 {(data_dir / "windows.bin").string()});

  const WindowStore store = load_preprocessed(data_dir);
  const auto cells = layer_grid(model_config(cfg), train_config(cfg), store,
                                [](const GridCell& c) {
                                  std::printf("g_layers=%lld t_layers=%lld f1=%.4f\n",
                                              static_cast<long long>(c.g_layers),
                                              static_cast<long long>(c.t_layers), c.f1);
                                  std::fflush(stdout);
                                });

  std::string csv = "g_layers,t_layers,f1\n";
  for (const auto& c : cells)
    csv += std::to_string(c.g_layers) + "," + std::to_string(c.t_layers) + "," +
           format_double(c.f1) + "\n";
  write_text(out / "grid.csv", csv);
  manifest.finish();
}

// ---------------------------------------------------------------------------
int main(int argc, char** argv) {
  CLI::App app{"Sensor credibility modelling: simulation, preprocessing, training"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, checkpoint_path;
  std::uint64_t seed = 0;
  bool seed_set = false, force = false;
  std::vector<std::string> overrides;

  const auto add_common = [&](CLI::App* sub, bool needs_data) {
    sub->add_option("--config", config_path, "JSON config file (flat key/value)");
    sub->add_option("--seed", seed, "override the config seed")
        ->each([&](const std::string&) { seed_set = true; });
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_flag("--force", force, "write into a non-empty output directory");
    sub->add_option("--set", overrides, "override a config key (key=value, repeatable)");
    if (needs_data)
      sub->add_option("--data", data_dir, "input artifact directory")->required();
  };

  auto* sim = app.add_subcommand("simulate", "generate the synthetic dataset");
  add_common(sim, false);
  auto* pre = app.add_subcommand("preprocess", "smooth, align, window and split a dataset");
  add_common(pre, true);
  auto* trn = app.add_subcommand("train", "train the model on preprocessed windows");
  add_common(trn, true);
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(evl, true);
  evl->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  auto* abl = app.add_subcommand("ablate", "train the full model and its four ablations");
  add_common(abl, true);
  auto* grd = app.add_subcommand("grid", "3x3 spatial/temporal layer-depth grid");
  add_common(grd, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const json cfg = load_config(config_path, seed_set ? &seed : nullptr, overrides);
    if (sim->parsed()) cmd_simulate(cfg, config_path, out_dir, force);
    if (pre->parsed()) cmd_preprocess(cfg, config_path, data_dir, out_dir, force);
    if (trn->parsed()) cmd_train(cfg, config_path, data_dir, out_dir, force);
    if (evl->parsed()) cmd_eval(cfg, config_path, data_dir, checkpoint_path, out_dir, force);
    if (abl->parsed()) cmd_ablate(cfg, config_path, data_dir, out_dir, force);
    if (grd->parsed()) cmd_grid(cfg, config_path, data_dir, out_dir, force);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric abort: %s\n", e.what());
    return 4;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
