#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "dycstg/metrics.hpp"
#include "dycstg/model.hpp"
#include "dycstg/optim.hpp"
#include "dycstg/preprocess.hpp"

namespace dycstg {

struct TrainConfig {
  std::int64_t epochs = 30;
  std::int64_t batch_size = 32;
  // A batch is processed in micro-batches of this many windows with gradient
  // accumulation, which bounds activation memory without changing the math.
  std::int64_t micro_batch = 4;
  double lr = 0.001;
  double weight_decay = 0.0001;
  double focal_alpha = 0.75;
  double focal_gamma = 2.0;
  std::uint64_t seed = 42;

  void validate() const {
    if (epochs <= 0 || batch_size <= 0 || micro_batch <= 0)
      throw ConfigError("epochs, batch_size and micro_batch must be positive");
    if (lr < 0.0 || weight_decay < 0.0)
      throw ConfigError("lr and weight_decay must be non-negative");
  }
};

struct EpochRecord {
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  double lr_last = 0.0;
  double val_f1 = 0.0;
  double val_zeta = 0.5;
};

struct TrainResult {
  ModelParams best;       // checkpoint with the highest validation F1
  double best_val_f1 = -1.0;
  std::int64_t best_epoch = -1;
  double zeta = 0.5;      // threshold calibrated at the best checkpoint
  std::vector<EpochRecord> history;
};

// Assembles features/labels/masks for a set of window indices into one batch.
struct Batch {
  Tensor x;       // [B, T, N, kFeatureDim]
  Tensor labels;  // [B, T, N, 1]
  Tensor masks;   // [B*T, N, N]
};

inline Batch make_batch(const WindowStore& store, const std::vector<std::int64_t>& windows,
                        bool use_dynamic_graph) {
  const std::int64_t B = static_cast<std::int64_t>(windows.size());
  const std::int64_t T = store.T;
  const std::int64_t N = store.n_nodes();
  Batch batch;
  batch.x = Tensor::uninit({B, T, N, kFeatureDim});
  batch.labels = Tensor::uninit({B, T, N, 1});
  std::vector<DynamicAdjacencySequence> seqs;
  seqs.reserve(windows.size());
  for (std::int64_t b = 0; b < B; ++b) {
    const std::int64_t start = store.window_starts[static_cast<std::size_t>(
        windows[static_cast<std::size_t>(b)])];
    fill_window_features(store, start, batch.x.data() + b * T * N * kFeatureDim);
    fill_window_labels(store, start, batch.labels.data() + b * T * N);
    seqs.push_back(window_adjacency(store, start, use_dynamic_graph));
  }
  batch.masks = batch_neighbor_masks(seqs);
  return batch;
}

// Scores every window in [lo, hi) and appends flat per-point scores/targets.
inline void score_split(const ModelParams& params, const ModelConfig& cfg,
                        const WindowStore& store, std::int64_t lo, std::int64_t hi,
                        std::int64_t micro_batch, std::vector<double>& scores,
                        std::vector<double>& targets) {
  for (std::int64_t w = lo; w < hi; w += micro_batch) {
    std::vector<std::int64_t> idx;
    for (std::int64_t k = w; k < std::min(hi, w + micro_batch); ++k) idx.push_back(k);
    const Batch batch = make_batch(store, idx, cfg.use_dynamic_graph);
    const Tensor y = model_forward(params, cfg, batch.x, batch.masks, false, 0, nullptr);
    scores.insert(scores.end(), y.values().begin(), y.values().end());
    targets.insert(targets.end(), batch.labels.values().begin(),
                   batch.labels.values().end());
  }
}

struct ValScores {
  std::vector<double> scores, targets;
};

inline ValScores collect_val_scores(const ModelParams& params, const ModelConfig& cfg,
                                    const WindowStore& store, std::int64_t micro_batch) {
  ValScores v;
  score_split(params, cfg, store, store.split.train_end, store.split.val_end, micro_batch,
              v.scores, v.targets);
  return v;
}

// Mini-batch training with per-epoch shuffling, cosine-annealed AdamW, and
// best-checkpoint selection by validation F1 at a per-epoch recalibrated
// threshold. Gradients accumulate across micro-batches so the update is
// mathematically a full-batch step regardless of micro_batch.
inline TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg,
                         const WindowStore& store,
                         const std::function<void(const EpochRecord&)>& on_epoch = nullptr) {
  model_cfg.validate();
  cfg.validate();
  if (store.split.train_end <= 0) throw DataError("train: empty training split");
  if (store.split.val_end <= store.split.train_end)
    throw DataError("train: empty validation split");

  TrainResult result;
  ModelParams params = init_model(model_cfg, cfg.seed);
  auto named = params.named();
  std::vector<Tensor> flat;
  for (auto& [name, t] : named) flat.push_back(t);
  AdamWState opt;
  opt.init(flat);

  const std::int64_t n_train = store.split.train_end;
  const std::int64_t batches_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_steps = cfg.epochs * batches_per_epoch;

  std::vector<std::int64_t> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(mix64(cfg.seed ^ 0x5affull));
  std::int64_t step = 0;

  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::int64_t loss_count = 0;
    double lr = cfg.lr;

    for (std::int64_t b = 0; b < batches_per_epoch; ++b) {
      const std::int64_t lo = b * cfg.batch_size;
      const std::int64_t hi = std::min(n_train, lo + cfg.batch_size);
      lr = cosine_anneal(step, total_steps, cfg.lr);
      params.zero_grads();
      double batch_loss = 0.0;
      const std::int64_t batch_n = hi - lo;
      for (std::int64_t m = lo; m < hi; m += cfg.micro_batch) {
        const std::int64_t mhi = std::min(hi, m + cfg.micro_batch);
        std::vector<std::int64_t> idx(order.begin() + m, order.begin() + mhi);
        Batch batch = make_batch(store, idx, model_cfg.use_dynamic_graph);
        Tape tape;
        Tensor x = batch.x;
        x.buffer()->requires_grad = false;
        const std::uint64_t drop_seed = mix64(cfg.seed ^ (0xd0ull << 32) ^
                                              static_cast<std::uint64_t>(step) * 0x9e37ull ^
                                              static_cast<std::uint64_t>(m));
        Tensor y = model_forward(params, model_cfg, x, batch.masks, true, drop_seed, &tape);
        Tensor loss = focal_loss(y, batch.labels, cfg.focal_alpha, cfg.focal_gamma, &tape);
        // mean-of-means weighted by micro-batch size = mean over the batch
        Tensor scaled = scale(loss, static_cast<double>(mhi - m) /
                                        static_cast<double>(batch_n), &tape);
        const double l = scaled.item();
        if (std::isnan(l) || std::isinf(l))
          throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                             " batch " + std::to_string(b) + " (lr=" + std::to_string(lr) +
                             ")");
        batch_loss += l;
        tape.backward(scaled);
      }
      adamw_step(flat, opt, lr, cfg.weight_decay);
      loss_sum += batch_loss;
      ++loss_count;
      ++step;
    }

    const ValScores val = collect_val_scores(params, model_cfg, store, cfg.micro_batch);
    const double zeta = calibrate_threshold(val.scores, val.targets);
    const Metrics vm = compute_metrics(val.scores, val.targets, zeta);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(loss_count);
    rec.lr_last = lr;
    rec.val_f1 = vm.f1;
    rec.val_zeta = zeta;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (vm.f1 > result.best_val_f1) {
      result.best_val_f1 = vm.f1;
      result.best_epoch = epoch;
      result.best = params.deep_copy();
      result.zeta = zeta;
    }
  }
  return result;
}

inline Metrics evaluate_split(const ModelParams& params, const ModelConfig& cfg,
                              const WindowStore& store, std::int64_t lo, std::int64_t hi,
                              double zeta, std::int64_t micro_batch = 4) {
  std::vector<double> scores, targets;
  score_split(params, cfg, store, lo, hi, micro_batch, scores, targets);
  return compute_metrics(scores, targets, zeta);
}

inline Metrics evaluate_test(const ModelParams& params, const ModelConfig& cfg,
                             const WindowStore& store, double zeta,
                             std::int64_t micro_batch = 4) {
  return evaluate_split(params, cfg, store, store.split.val_end,
                        static_cast<std::int64_t>(store.window_starts.size()), zeta,
                        micro_batch);
}

// ---------------------------------------------------------------------------
// Component ablation: the full model plus the four single-removal variants,
// all trained from the same seed. Rows appear in a fixed order.
// ---------------------------------------------------------------------------
struct AblationRow {
  std::string name;
  ModelConfig config;
  Metrics test;
  double zeta = 0.5;
};

inline std::vector<AblationRow> ablate(const ModelConfig& base, const TrainConfig& tc,
                                       const WindowStore& store,
                                       const std::function<void(const std::string&)>& on_row =
                                           nullptr) {
  std::vector<AblationRow> rows;
  const auto variant = [&base](const std::string& name) {
    AblationRow row;
    row.name = name;
    row.config = base;
    return row;
  };
  rows.push_back(variant("full"));
  rows.push_back(variant("no_dynamic_graph"));
  rows.back().config.use_dynamic_graph = false;
  rows.push_back(variant("no_gat"));
  rows.back().config.use_gat = false;
  rows.push_back(variant("no_encoder"));
  rows.back().config.use_encoder = false;
  rows.push_back(variant("no_causal"));
  rows.back().config.use_causal = false;

  for (auto& row : rows) {
    if (on_row) on_row(row.name);
    const TrainResult r = train(row.config, tc, store);
    row.zeta = r.zeta;
    row.test = evaluate_test(r.best, row.config, store, r.zeta, tc.micro_batch);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Layer-depth grid: test F1 for every (G_l, T_l) in {1,2,3}x{1,2,3}.
// ---------------------------------------------------------------------------
struct GridCell {
  std::int64_t g_layers = 0, t_layers = 0;
  double f1 = 0.0;
};

inline std::vector<GridCell> layer_grid(const ModelConfig& base, const TrainConfig& tc,
                                        const WindowStore& store,
                                        const std::function<void(const GridCell&)>& on_cell =
                                            nullptr) {
  std::vector<GridCell> cells;
  for (std::int64_t g = 1; g <= 3; ++g)
    for (std::int64_t t = 1; t <= 3; ++t) {
      ModelConfig cfg = base;
      cfg.g_layers = g;
      cfg.t_layers = t;
      const TrainResult r = train(cfg, tc, store);
      GridCell cell{g, t, evaluate_test(r.best, cfg, store, r.zeta, tc.micro_batch).f1};
      cells.push_back(cell);
      if (on_cell) on_cell(cell);
    }
  return cells;
}

}  // namespace dycstg
