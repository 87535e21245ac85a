#include <catch2/catch_amalgamated.hpp>

#include "dycstg/fusion.hpp"
#include "dycstg/model.hpp"
#include "dycstg/rng.hpp"
#include "dycstg/temporal.hpp"

using namespace dycstg;

namespace {
Tensor randn(Rng& rng, Shape shape, bool rg = false) {
  Tensor t = Tensor::zeros(std::move(shape), rg);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
  return t;
}

TemporalConfig no_dropout(std::int64_t heads = 2) {
  TemporalConfig cfg;
  cfg.heads = heads;
  cfg.dropout = 0.0;
  return cfg;
}
}  // namespace

TEST_CASE("temporal masks") {
  auto c1 = build_temporal_mask(MaskKind::Causal, 1);
  REQUIRE(c1.matrix == std::vector<double>{1.0});

  auto c3 = build_temporal_mask(MaskKind::Causal, 3);
  REQUIRE(c3.matrix == std::vector<double>{1, 0, 0, 1, 1, 0, 1, 1, 1});

  auto b3 = build_temporal_mask(MaskKind::Bidirectional, 3);
  for (double v : b3.matrix) REQUIRE(v == 1.0);

  REQUIRE_THROWS_AS(build_temporal_mask(MaskKind::Causal, 0), ContractError);
}

TEST_CASE("encoder: zero layers is identity plus positional encoding") {
  Rng rng(3);
  const std::int64_t B = 2, T = 3, N = 2, D = 4;
  Tensor x = randn(rng, {B, T, N, D});
  Tensor out = encoder_forward(x, {}, no_dropout(), MaskKind::Bidirectional, true, true, 0,
                               false, nullptr);
  Tensor pe = positional_encoding(T, D);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t t = 0; t < T; ++t)
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t d = 0; d < D; ++d) {
          const std::int64_t i = ((b * T + t) * N + n) * D + d;
          REQUIRE(out.data()[i] == x.data()[i] + pe.data()[t * D + d]);
        }
}

TEST_CASE("encoder: T=1 causal and bidirectional coincide bit for bit") {
  Rng rng(5);
  ModelConfig mc;
  mc.d_model = 4;
  mc.heads = 2;
  ModelParams p = init_model(mc, 7);
  Tensor x = randn(rng, {2, 1, 3, 4});
  TemporalConfig cfg = no_dropout();
  Tensor bi = encoder_forward(x, p.encoder, cfg, MaskKind::Bidirectional, true, true, 0,
                              false, nullptr);
  Tensor ca = encoder_forward(x, p.encoder, cfg, MaskKind::Causal, true, true, 0, false,
                              nullptr);
  for (std::size_t i = 0; i < bi.size(); ++i) REQUIRE(bi.data()[i] == ca.data()[i]);
}

TEST_CASE("encoder: hand-executed single-head attention oracle") {
  // B=1, N=1, T=2, heads=1, D=2; weights chosen for a tractable pencil run.
  const std::int64_t D = 2;
  EncoderLayerParams p;
  auto eye = [](std::int64_t d) {
    Tensor t = Tensor::zeros({d, d}, true);
    for (std::int64_t i = 0; i < d; ++i) t.data()[i * d + i] = 1.0;
    return t;
  };
  p.wq = eye(D);
  p.wk = eye(D);
  p.wv = eye(D);
  p.wo = eye(D);
  p.bq = Tensor::zeros({D}, true);
  p.bk = Tensor::zeros({D}, true);
  p.bv = Tensor::zeros({D}, true);
  p.bo = Tensor::zeros({D}, true);
  p.ln1_g = Tensor::filled({D}, 1.0, true);
  p.ln1_b = Tensor::zeros({D}, true);

  Tensor x = Tensor::from_values({1, 2, 1, D}, {1.0, -1.0, 2.0, 0.5});
  TemporalConfig cfg = no_dropout(1);
  Tensor out = encoder_forward(x, {p}, cfg, MaskKind::Bidirectional, false, false, 0, false,
                               nullptr);

  // pencil: a = layer_norm rows of x; q=k=v=a; scores = a a^T / sqrt(2)
  const double eps = 1e-5;
  double a[2][2];
  for (int t = 0; t < 2; ++t) {
    const double x0 = x.data()[t * D], x1 = x.data()[t * D + 1];
    const double mu = (x0 + x1) / 2.0;
    const double var = ((x0 - mu) * (x0 - mu) + (x1 - mu) * (x1 - mu)) / 2.0;
    a[t][0] = (x0 - mu) / std::sqrt(var + eps);
    a[t][1] = (x1 - mu) / std::sqrt(var + eps);
  }
  const double sc = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < 2; ++i) {
    double s[2];
    for (int j = 0; j < 2; ++j) s[j] = sc * (a[i][0] * a[j][0] + a[i][1] * a[j][1]);
    const double mx = std::max(s[0], s[1]);
    const double w0 = std::exp(s[0] - mx), w1 = std::exp(s[1] - mx);
    const double att0 = (w0 * a[0][0] + w1 * a[1][0]) / (w0 + w1);
    const double att1 = (w0 * a[0][1] + w1 * a[1][1]) / (w0 + w1);
    // residual: out = x + attention output (wo = I, no FFN)
    REQUIRE(out.data()[i * D + 0] ==
            Catch::Approx(x.data()[i * D + 0] + att0).margin(1e-12));
    REQUIRE(out.data()[i * D + 1] ==
            Catch::Approx(x.data()[i * D + 1] + att1).margin(1e-12));
  }
}

TEST_CASE("causal refine: future perturbations leave the past bit-identical") {
  Rng rng(11);
  ModelConfig mc;
  mc.d_model = 8;
  mc.heads = 2;
  ModelParams params = init_model(mc, 13);
  const std::int64_t B = 1, T = 6, N = 3, D = 8;
  Tensor x = randn(rng, {B, T, N, D});
  TemporalConfig cfg = no_dropout();
  Tensor base = causal_refine(x, params.causal, cfg, 0, false, nullptr);

  for (int trial = 0; trial < 200; ++trial) {
    const std::int64_t t_cut = 1 + static_cast<std::int64_t>(rng.uniform_index(T - 1));
    Tensor xp = x.clone();
    for (std::int64_t t = t_cut; t < T; ++t)
      for (std::int64_t i = 0; i < N * D; ++i)
        xp.data()[(t * N) * D + i] += rng.normal();
    Tensor pert = causal_refine(xp, params.causal, cfg, 0, false, nullptr);
    for (std::int64_t t = 0; t < t_cut; ++t)
      for (std::int64_t i = 0; i < N * D; ++i)
        REQUIRE(pert.data()[(t * N) * D + i] == base.data()[(t * N) * D + i]);
  }
}

TEST_CASE("causal refine: prefix-truncation oracle") {
  Rng rng(17);
  ModelConfig mc;
  mc.d_model = 8;
  mc.heads = 2;
  ModelParams params = init_model(mc, 19);
  const std::int64_t T = 5, N = 2, D = 8;
  Tensor x = randn(rng, {1, T, N, D});
  TemporalConfig cfg = no_dropout();
  Tensor full = causal_refine(x, params.causal, cfg, 0, false, nullptr);

  for (std::int64_t t = 1; t <= T; ++t) {
    Tensor prefix = Tensor::uninit({1, t, N, D});
    std::copy(x.data(), x.data() + t * N * D, prefix.data());
    Tensor out = causal_refine(prefix, params.causal, cfg, 0, false, nullptr);
    for (std::int64_t i = 0; i < N * D; ++i)
      REQUIRE(std::abs(out.data()[(t - 1) * N * D + i] -
                       full.data()[(t - 1) * N * D + i]) <= 1e-12);
  }
}

TEST_CASE("temporal isolation: sequences do not mix across nodes") {
  Rng rng(23);
  ModelConfig mc;
  mc.d_model = 8;
  mc.heads = 2;
  ModelParams params = init_model(mc, 29);
  const std::int64_t T = 4, N = 3, D = 8;
  Tensor x = randn(rng, {1, T, N, D});
  TemporalConfig cfg = no_dropout();
  Tensor base = temporal_encode(x, params.encoder, cfg, 0, false, nullptr);

  Tensor xp = x.clone();
  for (std::int64_t t = 0; t < T; ++t) xp.data()[(t * N + 1) * D + 3] += 2.5;  // node 1 only
  Tensor pert = temporal_encode(xp, params.encoder, cfg, 0, false, nullptr);
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t d = 0; d < D; ++d) {
        const std::int64_t i = (t * N + n) * D + d;
        if (n == 1) continue;
        REQUIRE(pert.data()[i] == base.data()[i]);
      }
}

TEST_CASE("gated fusion boundary cases") {
  Rng rng(31);
  const std::int64_t D = 4;
  Tensor h_st = randn(rng, {2, 3, D});
  Tensor h_ca = randn(rng, {2, 3, D});
  GateParams gp;
  gp.w_g = Tensor::zeros({2 * D, D}, true);

  gp.b_g = Tensor::filled({D}, 30.0, true);  // G ~ 1 -> h_st
  Tensor hi = gated_fuse(h_st, h_ca, gp, nullptr);
  for (std::size_t i = 0; i < hi.size(); ++i)
    REQUIRE(hi.data()[i] == Catch::Approx(h_st.data()[i]).margin(1e-9));

  gp.b_g = Tensor::filled({D}, -30.0, true);  // G ~ 0 -> h_causal
  Tensor lo = gated_fuse(h_st, h_ca, gp, nullptr);
  for (std::size_t i = 0; i < lo.size(); ++i)
    REQUIRE(lo.data()[i] == Catch::Approx(h_ca.data()[i]).margin(1e-9));

  gp.b_g = Tensor::zeros({D}, true);  // G = 0.5 exactly
  Tensor mid = gated_fuse(h_st, h_ca, gp, nullptr);
  for (std::size_t i = 0; i < mid.size(); ++i)
    REQUIRE(mid.data()[i] ==
            Catch::Approx((h_st.data()[i] + h_ca.data()[i]) / 2.0).margin(1e-12));
}

TEST_CASE("gated fusion convexity") {
  Rng rng(37);
  const std::int64_t D = 4;
  Tensor h_st = randn(rng, {3, D});
  Tensor h_ca = randn(rng, {3, D});
  GateParams gp;
  gp.w_g = randn(rng, {2 * D, D}, true);
  gp.b_g = randn(rng, {D}, true);
  Tensor out = gated_fuse(h_st, h_ca, gp, nullptr);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double lo = std::min(h_st.data()[i], h_ca.data()[i]);
    const double hi = std::max(h_st.data()[i], h_ca.data()[i]);
    REQUIRE(out.data()[i] >= lo - 1e-12);
    REQUIRE(out.data()[i] <= hi + 1e-12);
  }
}

TEST_CASE("prediction head") {
  const std::int64_t D = 4;
  HeadParams hp;
  hp.w1 = Tensor::zeros({D, D / 2}, true);
  hp.b1 = Tensor::zeros({D / 2}, true);
  hp.w2 = Tensor::zeros({D / 2, 1}, true);
  hp.b2 = Tensor::zeros({1}, true);
  Rng rng(41);
  Tensor h = randn(rng, {2, 3, D});

  Tensor half = predict_scores(h, hp, nullptr);
  for (std::size_t i = 0; i < half.size(); ++i) REQUIRE(half.data()[i] == 0.5);

  hp.b2 = Tensor::filled({1}, 30.0, true);
  Tensor sat = predict_scores(h, hp, nullptr);
  for (std::size_t i = 0; i < sat.size(); ++i)
    REQUIRE(sat.data()[i] == Catch::Approx(1.0).margin(1e-9));

  // random small instance vs a direct two-layer evaluation
  hp.w1 = randn(rng, {D, D / 2}, true);
  hp.b1 = randn(rng, {D / 2}, true);
  hp.w2 = randn(rng, {D / 2, 1}, true);
  hp.b2 = randn(rng, {1}, true);
  Tensor scores = predict_scores(h, hp, nullptr);
  for (std::int64_t r = 0; r < 6; ++r) {
    double hid[2];
    for (int j = 0; j < 2; ++j) {
      double acc = hp.b1.data()[j];
      for (std::int64_t c = 0; c < D; ++c)
        acc += h.data()[r * D + c] * hp.w1.data()[c * 2 + j];
      hid[j] = acc > 0 ? acc : std::exp(acc) - 1.0;
    }
    double z = hp.b2.data()[0];
    for (int j = 0; j < 2; ++j) z += hid[j] * hp.w2.data()[j];
    REQUIRE(scores.data()[r] == Catch::Approx(1.0 / (1.0 + std::exp(-z))).margin(1e-12));
  }
}

TEST_CASE("decide thresholding") {
  REQUIRE(decide(Tensor::scalar(0.7), 0.5).item() == 1.0);
  REQUIRE(decide(Tensor::scalar(0.5), 0.5).item() == 0.0);  // boundary -> untrustworthy

  Tensor grid = Tensor::from_values({9}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9});
  Tensor out = decide(grid, 0.35);
  for (int i = 0; i < 9; ++i)
    REQUIRE(out.data()[i] == (grid.data()[i] > 0.35 ? 1.0 : 0.0));

  REQUIRE_THROWS_AS(decide(grid, 0.0), ContractError);
  REQUIRE_THROWS_AS(decide(grid, 1.0), ContractError);
}

TEST_CASE("full model forward: shapes, score range, ablation flags") {
  Rng rng(43);
  ModelConfig mc;
  mc.d_model = 8;
  mc.heads = 2;
  mc.g_layers = 1;
  mc.t_layers = 1;
  mc.dropout = 0.0;
  ModelParams params = init_model(mc, 47);
  const std::int64_t B = 2, T = 3, N = 4;
  Tensor x = randn(rng, {B, T, N, mc.d_in});
  Tensor masks = Tensor::filled({B * T, N, N}, 1.0);

  Tensor y = model_forward(params, mc, x, masks, false, 0, nullptr);
  REQUIRE(y.shape() == Shape{B, T, N, 1});
  for (std::size_t i = 0; i < y.size(); ++i) {
    REQUIRE(y.data()[i] > 0.0);
    REQUIRE(y.data()[i] < 1.0);
  }

  // each single-removal variant still runs and changes the output
  for (int flag = 0; flag < 3; ++flag) {
    ModelConfig ab = mc;
    if (flag == 0) ab.use_gat = false;
    if (flag == 1) ab.use_encoder = false;
    if (flag == 2) ab.use_causal = false;
    Tensor ya = model_forward(params, ab, x, masks, false, 0, nullptr);
    REQUIRE(ya.shape() == Shape{B, T, N, 1});
    bool differs = false;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (ya.data()[i] != y.data()[i]) differs = true;
    REQUIRE(differs);
  }

  ModelConfig bad = mc;
  bad.use_dynamic_graph = bad.use_gat = bad.use_encoder = bad.use_causal = false;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);

  ModelConfig odd = mc;
  odd.d_model = 9;
  REQUIRE_THROWS_AS(odd.validate(), ConfigError);
}

TEST_CASE("model checkpoint JSON round-trip is exact") {
  ModelConfig mc;
  mc.d_model = 8;
  mc.heads = 2;
  mc.g_layers = 1;
  mc.t_layers = 1;
  ModelParams a = init_model(mc, 53);
  nlohmann::json j = params_to_json(a);

  ModelParams b = init_model(mc, 99);  // different values, same shapes
  params_from_json(j, b);
  auto na = a.named();
  auto nb = b.named();
  REQUIRE(na.size() == nb.size());
  for (std::size_t i = 0; i < na.size(); ++i) {
    REQUIRE(na[i].first == nb[i].first);
    for (std::size_t k = 0; k < na[i].second.size(); ++k)
      REQUIRE(na[i].second.data()[k] == nb[i].second.data()[k]);
  }

  nlohmann::json broken = j;
  broken.erase("embed.w");
  REQUIRE_THROWS_AS(params_from_json(broken, b), DataError);
}
