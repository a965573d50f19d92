#ifndef IMA_ATTACKS_HPP
#define IMA_ATTACKS_HPP

#include "ima/nn.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ima {

enum class NormKind { l2, linf };

inline std::string to_string(NormKind n) { return n == NormKind::l2 ? "l2" : "linf"; }

struct ClipBox {
  double lo = 0.0;
  double hi = 1.0;
};

struct AttackConfig {
  NormKind norm = NormKind::l2;
  double epsilon = 0.0;
  int n_pgd = 20;
  double alpha = 4.0;
  int n_binary = 10;
  std::uint64_t seed = 0;
  std::optional<ClipBox> clip_box;

  // eta = alpha * epsilon / N_PGD for a given radius.
  [[nodiscard]] double step_size(double eps) const { return alpha * eps / n_pgd; }
  [[nodiscard]] double step_size() const { return step_size(epsilon); }

  void validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("attack epsilon must be finite and >= 0");
    if (n_pgd < 1) throw ConfigError("attack n_pgd must be >= 1");
    if (!(alpha >= 1.0)) throw ConfigError("attack alpha must be >= 1");
    if (n_binary < 1) throw ConfigError("attack n_binary must be >= 1");
    if (clip_box && !(clip_box->lo <= clip_box->hi)) throw ConfigError("clip box needs lo <= hi");
  }
};

// ---------------------------------------------------------------------------
// Norms and projection.

inline double norm_of(const Eigen::Ref<const Vec>& v, NormKind kind) {
  double acc = 0.0;
  if (kind == NormKind::l2) {
    for (Eigen::Index i = 0; i < v.size(); ++i) acc += v[i] * v[i];
    return std::sqrt(acc);
  }
  for (Eigen::Index i = 0; i < v.size(); ++i) acc = std::max(acc, std::abs(v[i]));
  return acc;
}

// Projects onto the epsilon ball in place. Points already inside are left
// untouched, so the operation is idempotent bit for bit.
inline void project_ball_inplace(Eigen::Ref<Vec> delta, double epsilon, NormKind kind) {
  if (kind == NormKind::linf) {
    for (Eigen::Index i = 0; i < delta.size(); ++i) delta[i] = std::clamp(delta[i], -epsilon, epsilon);
    return;
  }
  const double n = norm_of(delta, NormKind::l2);
  if (n <= epsilon) return;
  if (epsilon == 0.0) {
    delta.setZero();
    return;
  }
  const Vec source = delta;
  double scale = epsilon / n;
  delta = source * scale;
  // Rounding in the rescale can leave the norm an ulp above epsilon.
  while (norm_of(delta, NormKind::l2) > epsilon) {
    scale = std::nextafter(scale, 0.0);
    delta = source * scale;
  }
}

inline Vec project_ball(Vec delta, double epsilon, NormKind kind) {
  project_ball_inplace(delta, epsilon, kind);
  return delta;
}

// h(g): sign for L-inf, unit L2 direction for L2; zero gradient gives a zero step.
inline void step_direction_inplace(Eigen::Ref<Vec> g, NormKind kind) {
  if (kind == NormKind::linf) {
    for (Eigen::Index i = 0; i < g.size(); ++i) g[i] = (g[i] > 0.0) - (g[i] < 0.0);
    return;
  }
  const double n = norm_of(g, NormKind::l2);
  if (n > 0.0) g /= n;
  else g.setZero();
}

inline void clip_to_box(Eigen::Ref<Vec> p, const std::optional<ClipBox>& box) {
  if (!box) return;
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = std::clamp(p[i], box->lo, box->hi);
}

// One projected ascent step of p around the clean sample x.
inline void pgd_update(Eigen::Ref<Vec> p, const Eigen::Ref<const Vec>& x, Vec g, double eta, double eps,
                       const AttackConfig& cfg) {
  step_direction_inplace(g, cfg.norm);
  Vec delta = p + eta * g - x;
  project_ball_inplace(delta, eps, cfg.norm);
  p = x + delta;
  clip_to_box(p, cfg.clip_box);
}

// ---------------------------------------------------------------------------
// Random start: x + xi with xi uniform in the epsilon ball.

inline Vec sample_ball(int dim, double epsilon, NormKind kind, Rng& rng) {
  Vec xi(dim);
  if (epsilon == 0.0) return Vec::Zero(dim);
  if (kind == NormKind::linf) {
    std::uniform_real_distribution<double> u(-epsilon, epsilon);
    for (int i = 0; i < dim; ++i) xi[i] = u(rng);
    return xi;
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  double n = 0.0;
  do {
    for (int i = 0; i < dim; ++i) xi[i] = gauss(rng);
    n = norm_of(xi, NormKind::l2);
  } while (n == 0.0);
  const double radius = epsilon * std::pow(uniform01(rng), 1.0 / dim);
  xi *= radius / n;
  project_ball_inplace(xi, epsilon, NormKind::l2);
  return xi;
}

inline Vec pgd_init(const Vec& x, double epsilon, const AttackConfig& cfg, Rng& rng) {
  if (epsilon == 0.0) return x;
  Vec p = x + sample_ball(static_cast<int>(x.size()), epsilon, cfg.norm, rng);
  clip_to_box(p, cfg.clip_box);
  return p;
}

inline Vec pgd_init(const Vec& x, const AttackConfig& cfg, Rng& rng) { return pgd_init(x, cfg.epsilon, cfg, rng); }

// ---------------------------------------------------------------------------
// Batched PGD. Column j is attacked inside a ball of radius eps[j] and draws
// its random start from its own stream seeds[j].

template <DifferentiableClassifier M>
Mat pgd_batch(const M& model, const Mat& x, std::span<const int> y, std::span<const double> eps,
              const AttackConfig& cfg, LossKind kind, std::span<const std::uint64_t> seeds) {
  const Eigen::Index n = x.cols();
  if (eps.size() != static_cast<std::size_t>(n) || seeds.size() != static_cast<std::size_t>(n))
    throw ShapeError("pgd_batch: per-column arguments do not match batch");
  Mat cur(x.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Rng rng(seeds[j]);
    cur.col(j) = pgd_init(x.col(j), eps[j], cfg, rng);
  }
  if (n == 0) return cur;
  for (int it = 0; it < cfg.n_pgd; ++it) {
    const Mat g = model.input_gradient(cur, y, kind).grad;
    for (Eigen::Index j = 0; j < n; ++j)
      pgd_update(cur.col(j), x.col(j), g.col(j), cfg.step_size(eps[j]), eps[j], cfg);
  }
  return cur;
}

struct Trajectory {
  std::vector<Vec> points;          // x_(1) .. x_(N)
  std::vector<bool> correct_flags;  // classified as y
};

struct PgdResult {
  Vec x_adv;
  Trajectory trajectory;
};

// Diagnostic single-sample PGD that keeps the whole trajectory.
template <DifferentiableClassifier M>
PgdResult pgd_attack(const M& model, const Vec& x, int y, const AttackConfig& cfg, LossKind kind) {
  cfg.validate();
  if (x.size() != model.input_dim()) throw ShapeError("input dimension mismatch");
  check_label(y, model.num_classes());
  Rng rng(derive_seed(cfg.seed));
  Mat cur = pgd_init(x, cfg, rng);
  const int labels[1] = {y};
  PgdResult out;
  for (int it = 0; it < cfg.n_pgd; ++it) {
    const InputGradient ig = model.input_gradient(cur, labels, kind);
    if (it > 0) out.trajectory.correct_flags.push_back(argmax(ig.logits.col(0)) == y);
    pgd_update(cur.col(0), x, ig.grad.col(0), cfg.step_size(), cfg.epsilon, cfg);
    out.trajectory.points.push_back(cur.col(0));
  }
  out.trajectory.correct_flags.push_back(argmax(model.logits(cur).col(0)) == y);
  out.x_adv = cur.col(0);
  return out;
}

// ---------------------------------------------------------------------------
// BPGD: PGD inside the estimated-margin ball, scanning the trajectory for the
// first correct -> wrong transition and bisecting that segment.

enum class BpgdStatus { no_crossing, boundary, input_misclassified };

struct BpgdResult {
  BpgdStatus status = BpgdStatus::no_crossing;
  Vec point;    // wrong-side endpoint of the final bracket
  Vec partner;  // correct-side endpoint of the final bracket
  double initial_gap = 0.0;

  [[nodiscard]] bool found() const noexcept { return status == BpgdStatus::boundary; }
  [[nodiscard]] Vec midpoint() const { return 0.5 * (point + partner); }
};

// The clean sample acts as the correct-side predecessor of x_(1); x_(0) itself
// is not scanned. PGD uses cross-entropy.
template <DifferentiableClassifier M>
std::vector<BpgdResult> bpgd_batch(const M& model, const Mat& x, std::span<const int> y, std::span<const double> eps,
                                   const AttackConfig& cfg, std::span<const std::uint64_t> seeds) {
  const Eigen::Index n = x.cols();
  if (y.size() != static_cast<std::size_t>(n) || eps.size() != static_cast<std::size_t>(n) ||
      seeds.size() != static_cast<std::size_t>(n))
    throw ShapeError("bpgd_batch: per-column arguments do not match batch");
  std::vector<BpgdResult> results(static_cast<std::size_t>(n));
  if (n == 0) return results;

  const Mat clean = model.logits(x);
  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!(eps[j] >= 0.0)) throw UsageError("bpgd: margin must be >= 0");
    if (argmax(clean.col(j)) != y[j]) results[j].status = BpgdStatus::input_misclassified;
    else active.push_back(j);
  }

  // Pairs found along the way: (column, correct point, wrong point).
  std::vector<Eigen::Index> found_cols;
  std::vector<Vec> lo_pts, hi_pts;

  Mat cur(x.rows(), static_cast<Eigen::Index>(active.size()));
  Mat prev(x.rows(), static_cast<Eigen::Index>(active.size()));
  for (std::size_t a = 0; a < active.size(); ++a) {
    const auto j = active[a];
    Rng rng(seeds[j]);
    cur.col(static_cast<Eigen::Index>(a)) = pgd_init(x.col(j), eps[j], cfg, rng);
    prev.col(static_cast<Eigen::Index>(a)) = x.col(j);
  }

  // Classifies the current iterate of every active column, records first
  // crossings and drops those columns (and the matching gradient columns).
  auto scan = [&](const Mat& logits, Mat* grad) {
    std::vector<Eigen::Index> keep;
    for (std::size_t a = 0; a < active.size(); ++a) {
      const auto ai = static_cast<Eigen::Index>(a);
      const auto j = active[a];
      if (argmax(logits.col(ai)) == y[j]) {
        prev.col(ai) = cur.col(ai);
        keep.push_back(ai);
      } else {
        found_cols.push_back(j);
        lo_pts.push_back(prev.col(ai));
        hi_pts.push_back(cur.col(ai));
      }
    }
    if (keep.size() == active.size()) return;
    const auto kept = static_cast<Eigen::Index>(keep.size());
    std::vector<Eigen::Index> next_active;
    Mat next_cur(x.rows(), kept), next_prev(x.rows(), kept), next_grad;
    if (grad) next_grad.resize(x.rows(), kept);
    for (Eigen::Index k = 0; k < kept; ++k) {
      const auto src = keep[static_cast<std::size_t>(k)];
      next_active.push_back(active[static_cast<std::size_t>(src)]);
      next_cur.col(k) = cur.col(src);
      next_prev.col(k) = prev.col(src);
      if (grad) next_grad.col(k) = grad->col(src);
    }
    active = std::move(next_active);
    cur = std::move(next_cur);
    prev = std::move(next_prev);
    if (grad) *grad = std::move(next_grad);
  };

  std::vector<int> labels;
  for (int it = 0; it < cfg.n_pgd && !active.empty(); ++it) {
    labels.clear();
    for (auto j : active) labels.push_back(y[j]);
    InputGradient ig = model.input_gradient(cur, labels, LossKind::cross_entropy);
    if (it > 0) {
      scan(ig.logits, &ig.grad);
      if (active.empty()) break;
    }
    for (std::size_t a = 0; a < active.size(); ++a) {
      const auto j = active[a];
      pgd_update(cur.col(static_cast<Eigen::Index>(a)), x.col(j), ig.grad.col(static_cast<Eigen::Index>(a)),
                 cfg.step_size(eps[j]), eps[j], cfg);
    }
  }
  if (!active.empty()) scan(model.logits(cur), nullptr);

  if (found_cols.empty()) return results;

  // Bisection, all brackets at once.
  const auto m = static_cast<Eigen::Index>(found_cols.size());
  Mat lo(x.rows(), m), hi(x.rows(), m);
  for (Eigen::Index k = 0; k < m; ++k) {
    lo.col(k) = lo_pts[static_cast<std::size_t>(k)];
    hi.col(k) = hi_pts[static_cast<std::size_t>(k)];
  }
  std::vector<double> gaps(static_cast<std::size_t>(m));
  for (Eigen::Index k = 0; k < m; ++k) gaps[static_cast<std::size_t>(k)] = norm_of(hi.col(k) - lo.col(k), cfg.norm);
  for (int b = 0; b < cfg.n_binary; ++b) {
    const Mat mid = 0.5 * (lo + hi);
    const Mat z = model.logits(mid);
    for (Eigen::Index k = 0; k < m; ++k) {
      if (argmax(z.col(k)) == y[found_cols[static_cast<std::size_t>(k)]]) lo.col(k) = mid.col(k);
      else hi.col(k) = mid.col(k);
    }
  }
  for (Eigen::Index k = 0; k < m; ++k) {
    auto& r = results[static_cast<std::size_t>(found_cols[static_cast<std::size_t>(k)])];
    r.status = BpgdStatus::boundary;
    r.point = hi.col(k);
    r.partner = lo.col(k);
    r.initial_gap = gaps[static_cast<std::size_t>(k)];
  }
  return results;
}

// Single-sample BPGD; the random start comes from cfg.seed. Returns nullopt
// when the whole trajectory stays correctly classified.
template <DifferentiableClassifier M>
std::optional<BpgdResult> bpgd(const M& model, const Vec& x, int y, double margin_eps, const AttackConfig& cfg) {
  cfg.validate();
  if (x.size() != model.input_dim()) throw ShapeError("input dimension mismatch");
  check_label(y, model.num_classes());
  if (!(margin_eps >= 0.0)) throw UsageError("bpgd: margin must be >= 0");
  const int labels[1] = {y};
  const double eps[1] = {margin_eps};
  const std::uint64_t seeds[1] = {derive_seed(cfg.seed)};
  auto r = bpgd_batch(model, Mat(x), labels, eps, cfg, seeds);
  if (r[0].status == BpgdStatus::input_misclassified)
    throw UsageError("bpgd: the clean sample is misclassified");
  if (!r[0].found()) return std::nullopt;
  return r[0];
}

// ---------------------------------------------------------------------------
// SPSA. `objective` maps a batch of points to one scalar per column; only
// function values are used.

template <class F>
Vec spsa_gradient(F&& objective, const Vec& x, int n_samples, double perturb_scale, Rng& rng) {
  if (n_samples < 2 || n_samples % 2 != 0) throw UsageError("spsa: n_samples must be even and >= 2");
  if (!(perturb_scale > 0.0)) throw UsageError("spsa: perturb_scale must be positive");
  const auto d = x.size();
  Mat v(d, n_samples);
  std::bernoulli_distribution coin(0.5);
  for (int k = 0; k < n_samples; ++k)
    for (Eigen::Index i = 0; i < d; ++i) v(i, k) = coin(rng) ? 1.0 : -1.0;
  Mat probes(d, 2 * static_cast<Eigen::Index>(n_samples));
  probes.leftCols(n_samples) = (perturb_scale * v).colwise() + x;
  probes.rightCols(n_samples) = (-perturb_scale * v).colwise() + x;
  const Vec f = objective(probes);
  Vec g = Vec::Zero(d);
  for (int k = 0; k < n_samples; ++k) g += (f[k] - f[n_samples + k]) / (2.0 * perturb_scale) * v.col(k);
  return g / n_samples;
}

struct SpsaConfig {
  int n_samples = 2048;        // Rademacher directions per gradient estimate
  double perturb_scale = 0.01;
  LossKind loss = LossKind::logit_margin;
};

// Black-box attack: PGD steps driven by SPSA estimates; needs only logits.
template <Classifier M>
Vec spsa_attack(const M& model, const Vec& x, int y, const AttackConfig& cfg, const SpsaConfig& spsa) {
  cfg.validate();
  if (x.size() != model.input_dim()) throw ShapeError("input dimension mismatch");
  check_label(y, model.num_classes());
  Rng rng(derive_seed(cfg.seed));
  if (cfg.epsilon == 0.0) return x;
  Vec cur = pgd_init(x, cfg, rng);
  auto objective = [&](const Mat& pts) {
    const Mat z = model.logits(pts);
    Vec out(z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) out[j] = loss_from_logits(z.col(j), y, spsa.loss);
    return out;
  };
  for (int it = 0; it < cfg.n_pgd; ++it) {
    Vec g = spsa_gradient(objective, cur, spsa.n_samples, spsa.perturb_scale, rng);
    pgd_update(cur, x, std::move(g), cfg.step_size(), cfg.epsilon, cfg);
  }
  return cur;
}

}  // namespace ima

#endif  // IMA_ATTACKS_HPP
