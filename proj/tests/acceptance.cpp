#include "ima/checkpoint.hpp"
#include "ima/eval.hpp"
#include "ima/training.hpp"
#include "support.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace ima;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

const char* kMoonsArch = "Linear(2,32)-LR-Linear(32,64)-LN-LR-Linear(64,128)-LN-LR-Linear(128,2)";

// ---------------------------------------------------------------------------
// Shared Moons models.

struct MoonsFixture {
  Dataset ds;
  Samples train, test;
  Model ce, ima;
  MarginTable table;
  RobustnessReport ce_rep, ima_rep;
};

TrainConfig moons_cfg() {
  TrainConfig c;
  c.beta = 0.5;
  c.eps_max = 0.3;
  c.epochs = 30;
  c.batch_size = 128;
  c.seed = 1;
  return c;
}

RobustnessConfig eval_cfg() {
  RobustnessConfig rc;
  rc.levels = {0.0, 0.1, 0.2, 0.3};
  rc.attack.n_pgd = 100;
  rc.seed = 1;
  return rc;
}

double timed(const std::function<void()>& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double ce_seconds = 0, ima_seconds = 0;

MoonsFixture& moons() {
  static std::optional<MoonsFixture> fx;
  if (fx) return *fx;
  fx.emplace(MoonsFixture{make_moons(SplitSizes{}, 0.05, 1), {}, {}, Model(parse_architecture(kMoonsArch), 2, 1),
                          Model(parse_architecture(kMoonsArch), 2, 1), {}, {}, {}});
  auto& f = *fx;
  f.train = f.ds.samples(Split::train);
  f.test = f.ds.samples(Split::test);
  const Model init(parse_architecture(kMoonsArch), 2, 1);
  ce_seconds = timed([&] {
    f.ce = ce_train(init, f.ds, moons_cfg()).model;
    f.ce_rep = evaluate_robustness(f.ce, f.test, eval_cfg());
  });
  ima_seconds = timed([&] {
    auto r = ima_train(init, f.ds, moons_cfg());
    f.ima = std::move(r.model);
    f.table = std::move(r.table);
    f.ima_rep = evaluate_robustness(f.ima, f.test, eval_cfg());
  });
  std::cerr << "moons: ce " << fmt(ce_seconds, 3) << " s, ima " << fmt(ima_seconds, 3) << " s\n";
  for (std::size_t i = 0; i < f.ce_rep.noise_levels.size(); ++i)
    std::cerr << "  level " << f.ce_rep.noise_levels[i] << ": ce worst " << f.ce_rep.accuracy(i, AttackKind::worst_case)
              << ", ima worst " << f.ima_rep.accuracy(i, AttackKind::worst_case) << "\n";
  return f;
}

// ---------------------------------------------------------------------------

Outcome c1_gradients() {
  std::mt19937_64 rng(101);
  std::normal_distribution<double> nd(0.0, 1.0);
  double worst_in = 0, worst_par = 0;
  const double secs = timed([&] {
    for (int t = 0; t < 100; ++t) {
      const auto layers = ima::test::random_architecture(rng);
      const Model m(layers, ima::test::output_dim(layers), static_cast<std::uint64_t>(t));
      Vec x(m.input_dim());
      for (auto& v : x) v = nd(rng);
      const int y = static_cast<int>(rng() % static_cast<std::uint64_t>(m.num_classes()));
      const Vec g = grad_input(m, x, y, LossKind::cross_entropy);
      const Vec fd = ima::test::central_diff([&](const Vec& p) { return loss(m, p, y, LossKind::cross_entropy); }, x);
      worst_in = std::max(worst_in, ima::test::max_rel_err(g, fd));

      const std::vector<WeightedSample> batch{{x, y, 1.0}};
      const Vec gp = grad_params(m, batch, LossKind::cross_entropy);
      const Vec p0 = m.params();
      Model c = m;
      auto total = [&](const Vec& p) {
        c.set_params(p);
        return loss(c, x, y, LossKind::cross_entropy);
      };
      for (auto [off, len] : m.param_blocks()) {
        const std::size_t stride = std::max<std::size_t>(1, len / 16);
        for (std::size_t i = off; i < off + len; i += stride) {
          Vec a = p0, b = p0;
          a[static_cast<Eigen::Index>(i)] += 1e-4;
          b[static_cast<Eigen::Index>(i)] -= 1e-4;
          const double d = (total(a) - total(b)) / 2e-4;
          worst_par = std::max(worst_par, ima::test::rel_err(gp[static_cast<Eigen::Index>(i)], d));
        }
      }
    }
  });
  return {worst_in <= 1e-4 && worst_par <= 1e-4 && secs < 60,
          "max rel err input " + fmt(worst_in, 3) + ", params " + fmt(worst_par, 3) + ", " + fmt(secs, 3) + " s"};
}

Outcome c2_attack_soundness() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::size_t idem_bad = 0, ball_bad = 0, bracket_bad = 0, case0_bad = 0, crossings = 0;
  const double secs = timed([&] {
    for (int t = 0; t < 1000; ++t) {
      const int d = 1 + static_cast<int>(rng() % 6);
      const int k = 2 + static_cast<int>(rng() % 3);
      std::vector<LayerSpec> layers{LayerSpec::linear(d, 16), LayerSpec::leaky_relu(), LayerSpec::linear(16, k)};
      const Model m(layers, k, static_cast<std::uint64_t>(t));
      AttackConfig cfg;
      cfg.norm = u(rng) < 0.5 ? NormKind::l2 : NormKind::linf;
      cfg.epsilon = 0.05 + 1.5 * u(rng);
      cfg.n_pgd = 2 + static_cast<int>(rng() % 20);
      cfg.alpha = 1.0 + 4.0 * u(rng);
      cfg.n_binary = 10;
      cfg.seed = rng();
      Vec x(d);
      for (auto& v : x) v = nd(rng);

      Vec delta(d);
      for (auto& v : delta) v = 3.0 * nd(rng);
      const Vec once = project_ball(delta, cfg.epsilon, cfg.norm);
      idem_bad += project_ball(once, cfg.epsilon, cfg.norm) != once;

      const int y = predict(m, x);
      const auto pgd = pgd_attack(m, x, y, cfg, LossKind::cross_entropy);
      ball_bad += norm_of(pgd.x_adv - x, cfg.norm) > cfg.epsilon + 1e-9;
      const auto b = bpgd(m, x, y, cfg.epsilon, cfg);
      const bool all_correct = std::all_of(pgd.trajectory.correct_flags.begin(), pgd.trajectory.correct_flags.end(),
                                           [](bool c) { return c; });
      case0_bad += b.has_value() == all_correct;
      if (b) {
        ++crossings;
        ball_bad += norm_of(b->point - x, cfg.norm) > cfg.epsilon + 1e-9;
        ball_bad += norm_of(b->partner - x, cfg.norm) > cfg.epsilon + 1e-9;
        bracket_bad += norm_of(b->point - b->partner, cfg.norm) > b->initial_gap / 1024.0 * (1 + 1e-9) + 1e-15;
        bracket_bad += predict(m, b->point) == y || predict(m, b->partner) != y;
      }
      if (t % 10 == 0) {
        SpsaConfig sc;
        sc.n_samples = 64;
        AttackConfig sa = cfg;
        sa.n_pgd = 3;
        const Vec s = spsa_attack(m, x, y, sa, sc);
        ball_bad += norm_of(s - x, cfg.norm) > cfg.epsilon + 1e-9;
      }
    }
  });
  return {idem_bad + ball_bad + bracket_bad + case0_bad == 0 && secs < 120,
          "1000 configs, " + std::to_string(crossings) + " crossings; violations idempotence " + std::to_string(idem_bad) +
              ", ball " + std::to_string(ball_bad) + ", bracket " + std::to_string(bracket_bad) + ", case-0 " +
              std::to_string(case0_bad) + ", " + fmt(secs, 3) + " s"};
}

Outcome c3_linear_geometry() {
  std::mt19937_64 rng(303);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t miss = 0, false_hit = 0, bpgd_far = 0;
  double worst_ratio = 0;
  for (int t = 0; t < 100; ++t) {
    const int d = 2 + static_cast<int>(rng() % 8);
    Vec n(d);
    for (auto& v : n) v = nd(rng);
    n.normalize();
    const double c = nd(rng);
    const Model m = ima::test::hyperplane_model(n, c, 0.5 + 5.0 * u(rng));
    Vec x(d);
    for (auto& v : x) v = nd(rng);
    const double dist = std::abs(n.dot(x) - c);
    if (dist < 1e-3) continue;
    const int y = predict(m, x);
    AttackConfig cfg;
    cfg.seed = rng();
    cfg.epsilon = 1.1 * dist;
    const auto above = pgd_attack(m, x, y, cfg, LossKind::cross_entropy);
    miss += predict(m, above.x_adv) == y;
    const auto b = bpgd(m, x, y, cfg.epsilon, cfg);
    if (!b) {
      ++bpgd_far;
    } else {
      const double off = std::abs(n.dot(b->point) - c);
      worst_ratio = std::max(worst_ratio, off / cfg.epsilon);
      bpgd_far += off > 1e-2 * cfg.epsilon;
    }
    cfg.epsilon = 0.9 * dist;
    const auto below = pgd_attack(m, x, y, cfg, LossKind::cross_entropy);
    false_hit += predict(m, below.x_adv) != y;
  }
  return {miss + false_hit + bpgd_far == 0, "misses above " + std::to_string(miss) + ", hits below " +
                                                std::to_string(false_hit) + ", bpgd off-plane " + std::to_string(bpgd_far) +
                                                ", worst off/eps " + fmt(worst_ratio, 3)};
}

Outcome c4_margin_dynamics() {
  const Model m = ima::test::threshold_model(0.5);
  Samples s;
  s.x.resize(1, 1);
  s.x(0, 0) = 0.2;
  s.y = {0};
  TrainConfig cfg;
  cfg.eps_max = 1.0;
  cfg.delta_eps = 0.1;
  cfg.seed = 4;
  MarginTable t(1, 0.1, 1.0);
  bool in_range = true;
  double arith_err = 0;
  for (int e = 1; e <= 20; ++e) {
    const double before = t[0];
    const double eps[1] = {before};
    const std::uint64_t seeds[1] = {derive_seed(cfg.seed, static_cast<std::uint64_t>(Stream::bpgd_margin),
                                                static_cast<std::uint64_t>(e), 0u)};
    const auto r = bpgd_batch(m, s.x, s.y, eps, cfg.attack, seeds);
    double expected = r[0].found() ? (std::abs(r[0].point[0] - 0.2) + before) / 2.0 : before + 0.1;
    expected = std::clamp(expected, 0.0, 1.0);
    ima_margin_update(m, s, t, cfg, e);
    arith_err = std::max(arith_err, std::abs(t[0] - expected));
    in_range &= t[0] >= 0.0 && t[0] <= 1.0;
  }
  const bool ok = in_range && t[0] >= 0.25 && t[0] <= 0.35 && arith_err <= 1e-12;
  return {ok, "final margin " + fmt(t[0], 6) + ", max arithmetic error " + fmt(arith_err, 3)};
}

Outcome c5_fragility() {
  auto& f = moons();
  const double clean = f.ce_rep.accuracy(0, AttackKind::worst_case);
  const double at03 = f.ce_rep.accuracy(3, AttackKind::worst_case);
  return {clean >= 0.99 && at03 < 0.5 && ce_seconds <= 300,
          "ce clean " + fmt(clean) + ", worst-case at 0.3 " + fmt(at03) + " (needs < 0.5), " + fmt(ce_seconds, 3) + " s"};
}

Outcome c6_ima_vs_ce() {
  auto& f = moons();
  const double clean = f.ima_rep.accuracy(0, AttackKind::worst_case);
  const double gap1 = f.ima_rep.accuracy(1, AttackKind::worst_case) - f.ce_rep.accuracy(1, AttackKind::worst_case);
  const double gap2 = f.ima_rep.accuracy(2, AttackKind::worst_case) - f.ce_rep.accuracy(2, AttackKind::worst_case);
  return {clean >= 0.97 && gap1 >= 0.3 && gap2 >= 0.3 && ima_seconds <= 1200,
          "ima clean " + fmt(clean) + " (needs >= 0.97); ima - ce at 0.1 " + fmt(gap1) + ", at 0.2 " + fmt(gap2) +
              " (needs >= 0.3); " + fmt(ima_seconds, 3) + " s"};
}

struct RasterStats {
  double ratio = 0;
  std::size_t cells = 0;
};

RasterStats raster_stats(const Model& m, const MoonsFixture& f) {
  const Raster r = rasterize_boundary(m, bounding_box(f.ds.x), 200, 200);
  const auto cells = boundary_cells(r);
  std::vector<Eigen::Index> c0, c1;
  for (std::size_t i = 0; i < f.train.size(); ++i) (f.train.y[i] == 0 ? c0 : c1).push_back(static_cast<Eigen::Index>(i));
  const double d0 = mean_nearest_distance(cells, gather(f.train.x, f.train.y, c0).x);
  const double d1 = mean_nearest_distance(cells, gather(f.train.x, f.train.y, c1).x);
  return {d0 / d1, cells.size()};
}

Outcome c7_middle_boundary() {
  auto& f = moons();
  const RasterStats ima = raster_stats(f.ima, f);
  const RasterStats ce = raster_stats(f.ce, f);
  const bool ima_ok = ima.ratio >= 0.75 && ima.ratio <= 1.33;
  const double count_ratio = static_cast<double>(std::max(ce.cells, ima.cells)) / static_cast<double>(std::max<std::size_t>(1, std::min(ce.cells, ima.cells)));
  const bool witness = ce.ratio < 0.75 || ce.ratio > 1.33 || count_ratio > 2.0;
  return {ima_ok && witness, "ima ratio " + fmt(ima.ratio) + " (" + std::to_string(ima.cells) + " cells); ce ratio " +
                                 fmt(ce.ratio) + " (" + std::to_string(ce.cells) + " cells, count ratio " +
                                 fmt(count_ratio, 3) + ")"};
}

Outcome c8_equilibrium() {
  auto& f = moons();
  AttackConfig cfg;
  cfg.seed = 8;
  std::vector<Vec> mids;
  std::vector<int> src;
  std::size_t bad = 0;
  for (std::size_t start = 0; start < f.train.size() && mids.size() < 500; start += 500) {
    const std::size_t len = std::min<std::size_t>(500, f.train.size() - start);
    const Mat xb = f.train.x.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(len));
    const std::span<const int> yb(f.train.y.data() + start, len);
    const std::vector<double> eps(len, 0.3);
    std::vector<std::uint64_t> seeds;
    for (std::size_t k = 0; k < len; ++k) seeds.push_back(derive_seed(cfg.seed, start + k));
    const auto res = bpgd_batch(f.ima, xb, yb, eps, cfg, seeds);
    for (std::size_t k = 0; k < len && mids.size() < 500; ++k) {
      if (!res[k].found()) continue;
      bad += predict(f.ima, res[k].point) == yb[k] || predict(f.ima, res[k].partner) != yb[k];
      mids.push_back(res[k].midpoint());
      src.push_back(yb[k]);
    }
  }
  if (mids.empty()) return {false, "no boundary points found"};
  Mat pts(2, static_cast<Eigen::Index>(mids.size()));
  for (std::size_t i = 0; i < mids.size(); ++i) pts.col(static_cast<Eigen::Index>(i)) = mids[i];
  const auto st = equilibrium_diagnostic(f.ima, pts, src);
  return {mids.size() == 500 && bad == 0 && st.gap_median <= 0.1,
          std::to_string(mids.size()) + " points, bracket violations " + std::to_string(bad) + ", median gap " +
              fmt(st.gap_median, 3) + ", max gap " + fmt(st.gap_max, 3)};
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) {
        less += w < v[i];
        equal += w == v[i];
      }
      r[i] = less + (equal + 1.0) / 2.0;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i] / n;
    mb += rb[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

Outcome c9_tradeoffs() {
  int beta_pos = 0, eps_pos = 0;
  std::ostringstream detail;
  const double secs = timed([&] {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const Dataset ds = make_moons({4000, 400, 1000}, 0.05, seed);
      const Samples test = ds.samples(Split::test);
      RobustnessConfig rc = eval_cfg();
      rc.levels = {0.2};
      rc.seed = seed;
      auto noisy_acc = [&](double beta, double eps_max) {
        TrainConfig cfg = moons_cfg();
        cfg.seed = seed;
        cfg.beta = beta;
        cfg.eps_max = eps_max;
        const auto r = ima_train(Model(parse_architecture(kMoonsArch), 2, seed), ds, cfg);
        return evaluate_robustness(r.model, test, rc).accuracy(0, AttackKind::worst_case);
      };
      const double mid = noisy_acc(0.5, 0.3);
      const std::vector<double> by_beta{noisy_acc(0.1, 0.3), mid, noisy_acc(0.9, 0.3)};
      const std::vector<double> by_eps{noisy_acc(0.5, 0.1), mid, noisy_acc(0.5, 0.5)};
      const double rb = spearman({0.1, 0.5, 0.9}, by_beta);
      const double re = spearman({0.1, 0.3, 0.5}, by_eps);
      beta_pos += rb > 0;
      eps_pos += re > 0;
      detail << " seed " << seed << ": beta acc " << fmt(by_beta[0], 3) << "/" << fmt(by_beta[1], 3) << "/"
             << fmt(by_beta[2], 3) << " rho " << fmt(rb, 2) << ", eps_max acc " << fmt(by_eps[0], 3) << "/"
             << fmt(by_eps[1], 3) << "/" << fmt(by_eps[2], 3) << " rho " << fmt(re, 2) << ";";
    }
  });
  return {beta_pos >= 2 && eps_pos >= 2, "positive beta seeds " + std::to_string(beta_pos) + "/3, eps_max seeds " +
                                             std::to_string(eps_pos) + "/3 (" + fmt(secs, 3) + " s);" + detail.str()};
}

Outcome c10_collapse() {
  const Dataset ds = make_moons({2000, 200, 200}, 0.05, 10);
  TrainConfig cfg = moons_cfg();
  cfg.epochs = 3;
  cfg.seed = 10;
  const Model init(parse_architecture(kMoonsArch), 2, 10);
  const auto adv = vanilla_adv_train(init, ds, 0.0, cfg);
  const auto ce = ce_train(init, ds, cfg);
  std::ostringstream a, b;
  write_checkpoint(a, adv.model);
  write_checkpoint(b, ce.model);
  const bool bytes = a.str() == b.str();

  TrainConfig ic = cfg;
  ic.beta = 0.0;
  ic.bpgd_enabled = false;
  const Samples train = ds.samples(Split::train);
  Model mi = init, mc = init;
  AdamState oi, oc;
  MarginTable table(train.size(), ic.resolved_delta_eps(), ic.eps_max);
  double worst = 0;
  std::size_t steps = 0;
  for (int e = 1; e <= cfg.epochs; ++e) {
    for (const auto& batch : make_batches(train, epoch_order(train.size(), cfg.seed, e), cfg.batch_size)) {
      ima_batch_step(mi, oi, batch, table, ic, e);
      const std::vector<double> w(batch.y.size(), 1.0 / static_cast<double>(cfg.batch_size));
      adam_step(mc, mc.param_gradient(batch.x, batch.y, w, LossKind::cross_entropy).grad, oc, cfg.optimizer);
      worst = std::max(worst, (mi.params() - mc.params()).cwiseAbs().maxCoeff());
      ++steps;
    }
  }
  Model via_epoch = init;
  AdamState ov;
  for (int e = 1; e <= cfg.epochs; ++e) ima_epoch(via_epoch, ov, train, table, ic, e);
  worst = std::max(worst, (via_epoch.params() - ce.model.params()).cwiseAbs().maxCoeff());
  return {bytes && worst <= 1e-12, std::string("adv(eps=0) checkpoint ") + (bytes ? "byte-identical" : "differs") +
                                       "; ima(beta=0) max param diff over " + std::to_string(steps) + " batches " +
                                       fmt(worst, 3)};
}

Outcome c11_spsa() {
  std::mt19937_64 rng(1111);
  std::normal_distribution<double> nd(0.0, 1.0);
  Mat a(2, 2);
  a << 3.0, 0.5, 0.5, 1.0;
  Vec bq(2);
  bq << -1.0, 2.0;
  double worst = 0;
  for (int t = 0; t < 50; ++t) {
    Vec x(2);
    x << nd(rng), nd(rng);
    auto f = [&](const Mat& pts) {
      Vec out(pts.cols());
      for (Eigen::Index j = 0; j < pts.cols(); ++j) out[j] = 0.5 * pts.col(j).dot(a * pts.col(j)) + bq.dot(pts.col(j));
      return out;
    };
    Rng r(derive_seed(1111, static_cast<std::uint64_t>(t)));
    const Vec g = spsa_gradient(f, x, 2048, 0.01, r);
    const Vec exact = a * x + bq;
    worst = std::max(worst, (g - exact).norm() / exact.norm());
  }

  auto& fx = moons();
  std::vector<Eigen::Index> cols(100);
  for (Eigen::Index i = 0; i < 100; ++i) cols[static_cast<std::size_t>(i)] = i;
  const Samples sub = gather(fx.test.x, fx.test.y, cols);
  AttackConfig atk;
  atk.epsilon = 0.3;
  atk.n_pgd = 20;
  SpsaConfig sc;
  const std::size_t clean = count_correct(fx.ce, sub.x, sub.y);
  const std::size_t spsa_ok = spsa_robust_count(fx.ce, sub, atk, sc, 11);
  RobustnessConfig rc = eval_cfg();
  rc.levels = {0.3};
  rc.seed = 11;
  const auto rep = evaluate_robustness(fx.ce, sub, rc);
  const double spsa_rate = static_cast<double>(clean - spsa_ok) / 100.0;
  const double pgd_rate = static_cast<double>(clean - rep.n_correct[0][2]) / 100.0;
  return {worst <= 0.1 && std::abs(spsa_rate - pgd_rate) <= 0.15,
          "quadratic max rel err " + fmt(worst, 3) + "; ce success at 0.3 spsa " + fmt(spsa_rate, 3) + " vs pgd " +
              fmt(pgd_rate, 3)};
}

Outcome c12_dice() {
  const std::vector<MaskCounts> fixture{{10, 2, 3}, {0, 0, 0}, {5, 5, 0}, {1, 0, 4}, {50, 10, 10}};
  // Per-sample Dice 4/5, 1, 2/3, 1/3, 5/6; pooled (66, 17, 17).
  const double adi = 109.0 / 150.0;
  const double tvdi = 132.0 / 166.0;
  const auto r = dice_metrics(fixture);
  const bool exact = std::abs(r.adi - adi) <= 1e-15 && r.tvdi == tvdi && r.empty_samples == 1;
  const std::vector<MaskCounts> unequal{{1, 0, 0}, {1, 0, 0}, {1, 0, 0}, {1, 0, 0}, {0, 500, 500}};
  const auto u = dice_metrics(unequal);
  const bool distinct = u.adi == 0.8 && std::abs(u.tvdi - 8.0 / 1008.0) <= 1e-15;
  return {exact && distinct && r.adi != r.tvdi, "adi " + fmt(r.adi, 17) + ", tvdi " + fmt(r.tvdi, 17) +
                                                    "; unequal fixture adi " + fmt(u.adi, 3) + " vs tvdi " +
                                                    fmt(u.tvdi, 3)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
      {"gradient correctness", c1_gradients},     {"attack soundness", c2_attack_soundness},
      {"linear oracle geometry", c3_linear_geometry}, {"margin-table dynamics", c4_margin_dynamics},
      {"ce fragility on moons", c5_fragility},     {"ima beats ce on moons", c6_ima_vs_ce},
      {"middle boundary", c7_middle_boundary},     {"equilibrium diagnostic", c8_equilibrium},
      {"beta / eps_max trade-off", c9_tradeoffs},  {"adv and ima collapse to ce", c10_collapse},
      {"spsa sanity", c11_spsa},                   {"dice metrics", c12_dice}};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed\n";
  return failed ? 1 : 0;
}
