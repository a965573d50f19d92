#ifndef IMA_EVAL_HPP
#define IMA_EVAL_HPP

#include "ima/attacks.hpp"
#include "ima/data.hpp"
#include "ima/nn.hpp"
#include "ima/training.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace ima {

// ---------------------------------------------------------------------------
// Robustness under 100-step PGD, run once per loss; a sample is robust at a
// level only if it survives both runs.

enum class AttackKind : std::size_t { cross_entropy = 0, logit_margin = 1, worst_case = 2 };

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::cross_entropy: return "pgd_ce";
    case AttackKind::logit_margin: return "pgd_margin";
    case AttackKind::worst_case: return "worst";
  }
  return "?";
}

struct RobustnessConfig {
  std::vector<double> levels{0.0, 0.1, 0.2, 0.3};
  AttackConfig attack{NormKind::l2, 0.0, 100, 4.0, 10, 0, std::nullopt};
  std::uint64_t seed = 0;
  // A level counts as broken for every sample already broken at a smaller level
  // (the earlier adversarial point lies inside the larger ball).
  bool replay_lower_levels = true;
  Eigen::Index chunk = 500;
};

struct RobustnessReport {
  std::vector<double> noise_levels;  // ascending
  std::vector<std::array<std::size_t, 3>> n_correct;
  std::size_t n_samples = 0;
  AttackConfig attack;
  std::string checkpoint_id;

  [[nodiscard]] double accuracy(std::size_t level, AttackKind kind) const {
    if (n_samples == 0) return std::numeric_limits<double>::quiet_NaN();
    return static_cast<double>(n_correct[level][static_cast<std::size_t>(kind)]) / static_cast<double>(n_samples);
  }
  [[nodiscard]] std::optional<std::size_t> level_index(double level) const {
    for (std::size_t i = 0; i < noise_levels.size(); ++i)
      if (noise_levels[i] == level) return i;
    return std::nullopt;
  }
};

inline std::uint64_t level_tag(double level) { return std::bit_cast<std::uint64_t>(level); }

template <DifferentiableClassifier M>
RobustnessReport evaluate_robustness(const M& model, const Samples& test, const RobustnessConfig& cfg) {
  cfg.attack.validate();
  std::vector<double> levels = cfg.levels;
  for (double l : levels)
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("noise levels must be finite and >= 0");
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());

  RobustnessReport rep;
  rep.noise_levels = levels;
  rep.n_samples = test.size();
  rep.attack = cfg.attack;
  const auto n = static_cast<Eigen::Index>(test.size());

  std::vector<bool> clean_ok(test.size());
  for (Eigen::Index start = 0; start < n; start += cfg.chunk) {
    const Eigen::Index len = std::min(cfg.chunk, n - start);
    const auto pred = predict(model, Mat(test.x.middleCols(start, len)));
    for (Eigen::Index j = 0; j < len; ++j)
      clean_ok[static_cast<std::size_t>(start + j)] = pred[static_cast<std::size_t>(j)] == test.y[static_cast<std::size_t>(start + j)];
  }
  std::vector<bool> worst_broken(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) worst_broken[i] = !clean_ok[i];

  for (double level : levels) {
    std::array<std::size_t, 3> counts{};
    if (level == 0.0) {
      const auto c = static_cast<std::size_t>(std::count(clean_ok.begin(), clean_ok.end(), true));
      counts = {c, c, c};
      rep.n_correct.push_back(counts);
      continue;
    }
    std::vector<bool> level_broken(test.size(), false);
    for (LossKind kind : {LossKind::cross_entropy, LossKind::logit_margin}) {
      std::size_t ok = 0;
      for (Eigen::Index start = 0; start < n; start += cfg.chunk) {
        const Eigen::Index len = std::min(cfg.chunk, n - start);
        const Mat xb = test.x.middleCols(start, len);
        const std::span<const int> yb(test.y.data() + start, static_cast<std::size_t>(len));
        const std::vector<double> eps(static_cast<std::size_t>(len), level);
        std::vector<std::uint64_t> seeds;
        for (Eigen::Index j = 0; j < len; ++j)
          seeds.push_back(derive_seed(cfg.seed, static_cast<std::uint64_t>(Stream::eval_pgd), level_tag(level),
                                      static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(start + j)));
        const Mat adv = pgd_batch(model, xb, yb, eps, cfg.attack, kind, seeds);
        const auto pred = predict(model, adv);
        for (Eigen::Index j = 0; j < len; ++j) {
          const auto i = static_cast<std::size_t>(start + j);
          if (pred[static_cast<std::size_t>(j)] == test.y[i]) ++ok;
          else level_broken[i] = true;
        }
      }
      counts[static_cast<std::size_t>(kind == LossKind::cross_entropy ? AttackKind::cross_entropy
                                                                        : AttackKind::logit_margin)] = ok;
    }
    std::size_t worst_ok = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const bool broken = level_broken[i] || !clean_ok[i] || (cfg.replay_lower_levels && worst_broken[i]);
      if (cfg.replay_lower_levels) worst_broken[i] = broken;
      worst_ok += !broken;
    }
    counts[static_cast<std::size_t>(AttackKind::worst_case)] = worst_ok;
    rep.n_correct.push_back(counts);
  }
  return rep;
}

inline void write_report_csv(const std::filesystem::path& path, const RobustnessReport& rep) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << "level,attack,n_correct,n_total,accuracy\n";
  for (std::size_t i = 0; i < rep.noise_levels.size(); ++i)
    for (AttackKind k : {AttackKind::cross_entropy, AttackKind::logit_margin, AttackKind::worst_case})
      os << format_short(rep.noise_levels[i]) << ',' << to_string(k) << ','
         << rep.n_correct[i][static_cast<std::size_t>(k)] << ',' << rep.n_samples << ','
         << format_double(rep.accuracy(i, k)) << '\n';
}

// ---------------------------------------------------------------------------
// Uniform white noise of a fixed norm.

struct WhiteNoiseResult {
  std::size_t flips = 0;
  std::size_t trials = 0;  // clean-correct samples x n_trials

  [[nodiscard]] double fraction() const { return trials ? static_cast<double>(flips) / static_cast<double>(trials) : 0.0; }
};

// Each trial adds u / ||u||_p * level with u uniform in [-1, 1]^d.
template <Classifier M>
WhiteNoiseResult evaluate_white_noise(const M& model, const Samples& test, double level, int n_trials,
                                      std::uint64_t seed, NormKind norm = NormKind::l2) {
  if (!(level >= 0.0)) throw ConfigError("white-noise level must be >= 0");
  if (n_trials < 1) throw ConfigError("white-noise trials must be >= 1");
  WhiteNoiseResult out;
  const auto clean = predict(model, test.x);
  const auto d = test.x.rows();
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (clean[i] == test.y[i]) ids.push_back(i);
  constexpr std::size_t chunk = 256;
  for (std::size_t start = 0; start < ids.size(); start += chunk) {
    const std::size_t len = std::min(chunk, ids.size() - start);
    Mat pts(d, static_cast<Eigen::Index>(len * static_cast<std::size_t>(n_trials)));
    Eigen::Index col = 0;
    for (std::size_t k = 0; k < len; ++k) {
      const auto i = ids[start + k];
      for (int t = 0; t < n_trials; ++t) {
        auto rng = make_rng(seed, Stream::eval_noise, level_tag(level), i, static_cast<std::uint64_t>(t));
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        Vec noise(d);
        for (Eigen::Index c = 0; c < d; ++c) noise[c] = u(rng);
        const double nn = norm_of(noise, norm);
        if (nn > 0.0) noise *= level / nn;
        else noise.setZero();
        pts.col(col++) = test.x.col(static_cast<Eigen::Index>(i)) + noise;
      }
    }
    const auto pred = predict(model, pts);
    col = 0;
    for (std::size_t k = 0; k < len; ++k) {
      const int label = test.y[ids[start + k]];
      for (int t = 0; t < n_trials; ++t) out.flips += pred[static_cast<std::size_t>(col++)] != label;
    }
  }
  out.trials = ids.size() * static_cast<std::size_t>(n_trials);
  return out;
}

// ---------------------------------------------------------------------------
// SPSA robustness on a subset.

template <Classifier M>
std::size_t spsa_robust_count(const M& model, const Samples& samples, const AttackConfig& attack,
                              const SpsaConfig& spsa, std::uint64_t seed) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Vec x = samples.x.col(static_cast<Eigen::Index>(i));
    if (predict(model, x) != samples.y[i]) continue;
    AttackConfig cfg = attack;
    cfg.seed = derive_seed(seed, static_cast<std::uint64_t>(Stream::spsa), level_tag(attack.epsilon), i);
    const Vec adv = spsa_attack(model, x, samples.y[i], cfg, spsa);
    ok += predict(model, adv) == samples.y[i];
  }
  return ok;
}

// ---------------------------------------------------------------------------
// Margin histogram over [0, eps_max].

struct MarginHistogram {
  std::vector<double> edges;  // n_bins + 1
  std::vector<std::size_t> counts;
  double mean = 0.0;
  double median = 0.0;
  double fraction_near_max = 0.0;  // entries within one delta_eps of eps_max
};

inline MarginHistogram margin_histogram(const MarginTable& table, int n_bins) {
  if (n_bins < 1) throw UsageError("histogram needs at least one bin");
  if (table.size() == 0) throw UsageError("empty margin table");
  MarginHistogram h;
  const double width = table.eps_max / n_bins;
  for (int b = 0; b <= n_bins; ++b) h.edges.push_back(b == n_bins ? table.eps_max : b * width);
  h.counts.assign(static_cast<std::size_t>(n_bins), 0);
  std::size_t near = 0;
  for (double m : table.margins) {
    auto b = static_cast<long>(std::floor(m / width));
    b = std::clamp(b, 0L, static_cast<long>(n_bins) - 1);
    ++h.counts[static_cast<std::size_t>(b)];
    near += m >= table.eps_max - table.delta_eps;
  }
  h.mean = table.mean();
  std::vector<double> sorted = table.margins;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  h.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  h.fraction_near_max = static_cast<double>(near) / static_cast<double>(n);
  return h;
}

inline void write_histogram_csv(const std::filesystem::path& path, const MarginHistogram& h) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b)
    os << format_double(h.edges[b]) << ',' << format_double(h.edges[b + 1]) << ',' << h.counts[b] << '\n';
}

// ---------------------------------------------------------------------------
// Decision-boundary raster of a 2-D classifier. Row 0 is the top (y = ymax),
// lattice points include the bounds.

struct Bounds {
  double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
};

struct Raster {
  Bounds bounds;
  int nx = 0;
  int ny = 0;
  std::vector<int> cls;  // row-major ny x nx

  [[nodiscard]] int at(int row, int col) const { return cls[static_cast<std::size_t>(row) * nx + col]; }
  [[nodiscard]] Eigen::Vector2d point(int row, int col) const {
    return {bounds.xmin + (bounds.xmax - bounds.xmin) * col / (nx - 1),
            bounds.ymax - (bounds.ymax - bounds.ymin) * row / (ny - 1)};
  }
};

template <Classifier M>
Raster rasterize_boundary(const M& model, const Bounds& bounds, int nx, int ny) {
  if (model.input_dim() != 2) throw UsageError("rasterize_boundary needs a 2-D model");
  if (nx < 2 || ny < 2) throw UsageError("raster resolution must be >= 2 per axis");
  Raster r{bounds, nx, ny, {}};
  Mat pts(2, static_cast<Eigen::Index>(nx) * ny);
  for (int row = 0; row < ny; ++row)
    for (int col = 0; col < nx; ++col) pts.col(static_cast<Eigen::Index>(row) * nx + col) = r.point(row, col);
  r.cls = predict(model, pts);
  return r;
}

inline Bounds bounding_box(const Mat& x) {
  if (x.rows() != 2 || x.cols() == 0) throw UsageError("bounding box needs 2-D points");
  return {x.row(0).minCoeff(), x.row(0).maxCoeff(), x.row(1).minCoeff(), x.row(1).maxCoeff()};
}

// Lattice points whose class differs from one of their 4-neighbours.
inline std::vector<Eigen::Vector2d> boundary_cells(const Raster& r) {
  std::vector<Eigen::Vector2d> out;
  for (int row = 0; row < r.ny; ++row) {
    for (int col = 0; col < r.nx; ++col) {
      const int c = r.at(row, col);
      const bool edge = (row > 0 && r.at(row - 1, col) != c) || (row + 1 < r.ny && r.at(row + 1, col) != c) ||
                        (col > 0 && r.at(row, col - 1) != c) || (col + 1 < r.nx && r.at(row, col + 1) != c);
      if (edge) out.push_back(r.point(row, col));
    }
  }
  return out;
}

// Mean over `queries` of the distance to the nearest column of `points`.
inline double mean_nearest_distance(const std::vector<Eigen::Vector2d>& queries, const Mat& points) {
  if (queries.empty() || points.cols() == 0) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (const auto& q : queries) total += std::sqrt((points.colwise() - q).colwise().squaredNorm().minCoeff());
  return total / static_cast<double>(queries.size());
}

inline void write_pgm(const std::filesystem::path& path, const Raster& r, int num_classes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << "P2\n" << r.nx << ' ' << r.ny << '\n' << std::max(1, num_classes - 1) << '\n';
  for (int row = 0; row < r.ny; ++row) {
    for (int col = 0; col < r.nx; ++col) os << (col ? " " : "") << r.at(row, col);
    os << '\n';
  }
}

inline void write_bounds_meta(const std::filesystem::path& path, const Raster& r) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << "xmin " << format_double(r.bounds.xmin) << "\nxmax " << format_double(r.bounds.xmax) << "\nymin "
     << format_double(r.bounds.ymin) << "\nymax " << format_double(r.bounds.ymax) << "\nnx " << r.nx << "\nny " << r.ny
     << "\norigin top-left\n";
}

// ---------------------------------------------------------------------------
// Equilibrium diagnostic on boundary points labelled with their source class:
// mean -log P_source per class and the top-two probability gap.

struct EquilibriumStats {
  std::vector<std::optional<double>> class_loss;  // absent when no point came from that class
  std::vector<std::size_t> class_count;
  std::vector<double> gaps;  // |P_top1 - P_top2| per point
  double gap_mean = 0.0;
  double gap_median = 0.0;
  double gap_max = 0.0;
};

template <Classifier M>
EquilibriumStats equilibrium_diagnostic(const M& model, const Mat& points, std::span<const int> source) {
  if (points.cols() == 0) throw UsageError("equilibrium diagnostic needs at least one point");
  if (source.size() != static_cast<std::size_t>(points.cols())) throw ShapeError("label count mismatch");
  const int k = model.num_classes();
  EquilibriumStats st;
  std::vector<double> sums(static_cast<std::size_t>(k), 0.0);
  st.class_count.assign(static_cast<std::size_t>(k), 0);
  const Mat z = model.logits(points);
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const int y = source[static_cast<std::size_t>(j)];
    check_label(y, k);
    sums[static_cast<std::size_t>(y)] += loss_from_logits(z.col(j), y, LossKind::cross_entropy);
    ++st.class_count[static_cast<std::size_t>(y)];
    Vec p = softmax_probs(z.col(j));
    std::sort(p.data(), p.data() + p.size(), std::greater<>());
    st.gaps.push_back(p.size() > 1 ? p[0] - p[1] : p[0]);
  }
  for (int c = 0; c < k; ++c) {
    const auto cc = static_cast<std::size_t>(c);
    st.class_loss.push_back(st.class_count[cc] ? std::optional<double>(sums[cc] / st.class_count[cc]) : std::nullopt);
  }
  std::vector<double> sorted = st.gaps;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  st.gap_median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  st.gap_max = sorted.back();
  for (double g : sorted) st.gap_mean += g;
  st.gap_mean /= static_cast<double>(n);
  return st;
}

inline void write_equilibrium_csv(const std::filesystem::path& path, const EquilibriumStats& st) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << "stat,class,value\n";
  for (std::size_t c = 0; c < st.class_loss.size(); ++c) {
    os << "count," << c << ',' << st.class_count[c] << '\n';
    os << "mean_neg_log_p," << c << ',' << (st.class_loss[c] ? format_double(*st.class_loss[c]) : "absent") << '\n';
  }
  os << "gap_mean,," << format_double(st.gap_mean) << '\n';
  os << "gap_median,," << format_double(st.gap_median) << '\n';
  os << "gap_max,," << format_double(st.gap_max) << '\n';
}

// ---------------------------------------------------------------------------
// Dice indices over per-sample voxel counts.

struct MaskCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
};

struct DiceResult {
  double tvdi = 0.0;  // pooled counts
  double adi = 0.0;   // mean of per-sample Dice
  std::size_t empty_samples = 0;  // TP = FP = FN = 0, scored as Dice 1
};

inline double dice(const MaskCounts& c) {
  const auto denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

inline DiceResult dice_metrics(std::span<const MaskCounts> counts) {
  if (counts.empty()) throw UsageError("dice metrics need at least one sample");
  DiceResult r;
  MaskCounts pooled;
  double sum = 0.0;
  for (const auto& c : counts) {
    pooled.tp += c.tp;
    pooled.fp += c.fp;
    pooled.fn += c.fn;
    r.empty_samples += (c.tp + c.fp + c.fn) == 0;
    sum += dice(c);
  }
  r.tvdi = dice(pooled);
  r.adi = sum / static_cast<double>(counts.size());
  return r;
}

}  // namespace ima

#endif  // IMA_EVAL_HPP
