#ifndef IMA_TRAINING_HPP
#define IMA_TRAINING_HPP

#include "ima/attacks.hpp"
#include "ima/data.hpp"
#include "ima/nn.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

namespace ima {

// Estimated margin per training sample, kept inside [0, eps_max].
struct MarginTable {
  std::vector<double> margins;
  double delta_eps = 0.0;
  double eps_max = 0.0;

  MarginTable() = default;
  MarginTable(std::size_t n, double delta, double max_eps) : margins(n, delta), delta_eps(delta), eps_max(max_eps) {
    if (!(delta > 0.0)) throw ConfigError("delta_eps must be positive");
    if (!(max_eps > 0.0)) throw ConfigError("eps_max must be positive");
    clip();
  }

  [[nodiscard]] std::size_t size() const noexcept { return margins.size(); }
  double& operator[](std::size_t i) { return margins[i]; }
  double operator[](std::size_t i) const { return margins[i]; }

  void clip() {
    for (double& m : margins) m = std::clamp(m, 0.0, eps_max);
  }
  [[nodiscard]] double mean() const {
    return margins.empty() ? 0.0 : std::accumulate(margins.begin(), margins.end(), 0.0) / margins.size();
  }
  [[nodiscard]] double min() const { return margins.empty() ? 0.0 : *std::min_element(margins.begin(), margins.end()); }
  [[nodiscard]] double max() const { return margins.empty() ? 0.0 : *std::max_element(margins.begin(), margins.end()); }
};

struct TrainConfig {
  double beta = 0.5;
  double eps_max = 0.3;
  std::optional<double> delta_eps;  // unset: eps_max / epochs
  int epochs = 30;
  std::size_t batch_size = 128;
  AttackConfig attack;  // norm, N_PGD, alpha, N_binary used by BPGD and adv training
  AdamHyper optimizer;
  std::uint64_t seed = 0;
  bool bpgd_enabled = true;  // off: IMA degenerates to clean training (diagnostics)

  [[nodiscard]] double resolved_delta_eps() const { return delta_eps.value_or(eps_max / epochs); }

  void validate() const {
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
    if (!(eps_max > 0.0)) throw ConfigError("eps_max must be positive");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(resolved_delta_eps() > 0.0)) throw ConfigError("delta_eps must be positive");
    attack.validate();
  }
};

struct EpochLog {
  int epoch = 0;
  double margin_mean = 0.0;
  double margin_min = 0.0;
  double margin_max = 0.0;
  double train_acc = 0.0;
  double val_acc = std::numeric_limits<double>::quiet_NaN();
  // Loss sums over the epoch; `loss` is the mean per-batch objective.
  double l0 = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double loss = 0.0;
  std::size_t boundary_found = 0;
  std::size_t boundary_absent = 0;
  std::size_t shrunk = 0;
  std::size_t expanded = 0;
};

// Loss components of one IMA mini-batch, as used for the update.
struct BatchLoss {
  double l0 = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double total = 0.0;
  std::size_t n_wrong = 0;
  std::size_t n_correct = 0;
  std::size_t n_boundary = 0;
};

template <Classifier M>
std::size_t count_correct(const M& model, const Mat& x, std::span<const int> y, Eigen::Index chunk = 4096) {
  std::size_t hits = 0;
  for (Eigen::Index start = 0; start < x.cols(); start += chunk) {
    const Eigen::Index len = std::min(chunk, x.cols() - start);
    const Mat z = model.logits(x.middleCols(start, len));
    for (Eigen::Index j = 0; j < len; ++j) hits += argmax(z.col(j)) == y[static_cast<std::size_t>(start + j)];
  }
  return hits;
}

template <Classifier M>
double accuracy(const M& model, const Samples& s) {
  if (s.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(count_correct(model, s.x, s.y)) / static_cast<double>(s.size());
}

// Fisher-Yates over [0, n) with a stream derived from (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng(seed, Stream::shuffle, static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  return order;
}

struct Batch {
  Mat x;
  std::vector<int> y;
  std::vector<std::size_t> ids;
};

inline std::vector<Batch> make_batches(const Samples& s, const std::vector<std::size_t>& order, std::size_t batch_size) {
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, order.size() - start);
    Batch b;
    b.x.resize(s.x.rows(), static_cast<Eigen::Index>(len));
    for (std::size_t k = 0; k < len; ++k) {
      const auto id = order[start + k];
      b.x.col(static_cast<Eigen::Index>(k)) = s.x.col(static_cast<Eigen::Index>(id));
      b.y.push_back(s.y[id]);
      b.ids.push_back(id);
    }
    out.push_back(std::move(b));
  }
  return out;
}

inline Samples gather(const Mat& x, std::span<const int> y, const std::vector<Eigen::Index>& cols) {
  Samples out;
  out.x.resize(x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    out.x.col(static_cast<Eigen::Index>(k)) = x.col(cols[k]);
    out.y.push_back(y[static_cast<std::size_t>(cols[k])]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// IMA model update for one mini-batch.
//
//   L = ((1 - beta) * (L0 + L1) + beta * L2) / batch_size
//
// L0/L1 are summed clean cross-entropies of the wrongly/correctly classified
// samples, L2 the summed cross-entropy of the boundary points found for the
// correctly classified ones, labelled with their source class.

inline BatchLoss ima_batch_step(Model& model, AdamState& opt, const Batch& batch, const MarginTable& table,
                                const TrainConfig& cfg, int epoch) {
  const auto n = static_cast<Eigen::Index>(batch.y.size());
  const double nominal = static_cast<double>(cfg.batch_size);
  BatchLoss out;

  const Mat z = model.logits(batch.x);
  std::vector<bool> correct(static_cast<std::size_t>(n));
  std::vector<Eigen::Index> correct_cols;
  for (Eigen::Index j = 0; j < n; ++j) {
    correct[static_cast<std::size_t>(j)] = argmax(z.col(j)) == batch.y[static_cast<std::size_t>(j)];
    if (correct[static_cast<std::size_t>(j)]) correct_cols.push_back(j);
  }
  out.n_correct = correct_cols.size();
  out.n_wrong = static_cast<std::size_t>(n) - out.n_correct;

  Samples noisy;
  if (cfg.bpgd_enabled && !correct_cols.empty()) {
    const Samples x1 = gather(batch.x, batch.y, correct_cols);
    std::vector<double> eps;
    std::vector<std::uint64_t> seeds;
    for (auto c : correct_cols) {
      const auto id = batch.ids[static_cast<std::size_t>(c)];
      eps.push_back(table[id]);
      seeds.push_back(derive_seed(cfg.seed, static_cast<std::uint64_t>(Stream::bpgd_train),
                                  static_cast<std::uint64_t>(epoch), id));
    }
    const auto res = bpgd_batch(model, x1.x, x1.y, eps, cfg.attack, seeds);
    std::vector<Vec> pts;
    for (std::size_t k = 0; k < res.size(); ++k) {
      if (!res[k].found()) continue;
      pts.push_back(res[k].point);
      noisy.y.push_back(x1.y[k]);
    }
    noisy.x.resize(batch.x.rows(), static_cast<Eigen::Index>(pts.size()));
    for (std::size_t k = 0; k < pts.size(); ++k) noisy.x.col(static_cast<Eigen::Index>(k)) = pts[k];
  }
  out.n_boundary = noisy.size();

  const std::vector<double> w_clean(static_cast<std::size_t>(n), (1.0 - cfg.beta) / nominal);
  ParamGradient pg = model.param_gradient(batch.x, batch.y, w_clean, LossKind::cross_entropy);
  for (Eigen::Index j = 0; j < n; ++j) (correct[static_cast<std::size_t>(j)] ? out.l1 : out.l0) += pg.losses[j];
  Vec grad = std::move(pg.grad);

  if (noisy.size() > 0) {
    const std::vector<double> w_noisy(noisy.size(), cfg.beta / nominal);
    const ParamGradient pn = model.param_gradient(noisy.x, noisy.y, w_noisy, LossKind::cross_entropy);
    out.l2 = pn.losses.sum();
    grad += pn.grad;
  }
  out.total = ((1.0 - cfg.beta) * (out.l0 + out.l1) + cfg.beta * out.l2) / nominal;
  adam_step(model, grad, opt, cfg.optimizer);
  return out;
}

inline EpochLog ima_epoch(Model& model, AdamState& opt, const Samples& train, const MarginTable& table,
                          const TrainConfig& cfg, int epoch) {
  if (train.size() == 0) throw UsageError("empty training set");
  if (table.size() != train.size()) throw UsageError("margin table does not cover the training set");
  EpochLog log;
  log.epoch = epoch;
  const auto batches = make_batches(train, epoch_order(train.size(), cfg.seed, epoch), cfg.batch_size);
  for (const auto& b : batches) {
    const BatchLoss bl = ima_batch_step(model, opt, b, table, cfg, epoch);
    log.l0 += bl.l0;
    log.l1 += bl.l1;
    log.l2 += bl.l2;
    log.loss += bl.total;
    log.boundary_found += bl.n_boundary;
    log.boundary_absent += bl.n_correct - bl.n_boundary;
  }
  log.loss /= static_cast<double>(batches.size());
  return log;
}

struct MarginUpdateStats {
  std::size_t shrunk = 0;
  std::size_t expanded = 0;
};

// Runs BPGD for every training sample with its current margin and applies
//   boundary found:  m <- (||x - x_n|| + m) / 2
//   no crossing:     m <- m + delta_eps
// then clips to [0, eps_max]. The table is written only after the full pass.
// A sample the model already misclassifies counts as a boundary hit at
// distance zero.
template <DifferentiableClassifier M>
MarginUpdateStats ima_margin_update(const M& model, const Samples& train, MarginTable& table, const TrainConfig& cfg,
                                    int epoch) {
  if (table.size() != train.size()) throw UsageError("margin table does not cover the training set");
  MarginUpdateStats stats;
  std::vector<double> next(table.margins);
  for (std::size_t start = 0; start < train.size(); start += cfg.batch_size) {
    const std::size_t len = std::min(cfg.batch_size, train.size() - start);
    const Mat xb = train.x.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(len));
    const std::span<const int> yb(train.y.data() + start, len);
    std::vector<double> eps(table.margins.begin() + static_cast<std::ptrdiff_t>(start),
                            table.margins.begin() + static_cast<std::ptrdiff_t>(start + len));
    std::vector<std::uint64_t> seeds;
    for (std::size_t k = 0; k < len; ++k)
      seeds.push_back(derive_seed(cfg.seed, static_cast<std::uint64_t>(Stream::bpgd_margin),
                                  static_cast<std::uint64_t>(epoch), start + k));
    const auto res = bpgd_batch(model, xb, yb, eps, cfg.attack, seeds);
    for (std::size_t k = 0; k < len; ++k) {
      const double m = eps[k];
      double& out = next[start + k];
      switch (res[k].status) {
        case BpgdStatus::boundary: {
          const double dist = norm_of(xb.col(static_cast<Eigen::Index>(k)) - res[k].point, cfg.attack.norm);
          out = (dist + m) / 2.0;
          ++stats.shrunk;
          break;
        }
        case BpgdStatus::input_misclassified:
          out = m / 2.0;
          ++stats.shrunk;
          break;
        case BpgdStatus::no_crossing:
          out = m + table.delta_eps;
          ++stats.expanded;
          break;
      }
    }
  }
  table.margins = std::move(next);
  table.clip();
  return stats;
}

// ---------------------------------------------------------------------------

struct TrainResult {
  Model model;
  MarginTable table;  // empty unless IMA
  std::vector<EpochLog> logs;
};

// Called once per epoch with the post-epoch model; margin table is null for baselines.
using EpochCallback = std::function<void(const EpochLog&, const Model&, const MarginTable*)>;

inline void finish_log(EpochLog& log, const Model& model, const Samples& train, const Samples& val,
                       const MarginTable* table) {
  log.train_acc = accuracy(model, train);
  log.val_acc = accuracy(model, val);
  if (table) {
    log.margin_mean = table->mean();
    log.margin_min = table->min();
    log.margin_max = table->max();
  }
}

inline TrainResult ima_train(Model model, const Dataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const Samples train = ds.samples(Split::train);
  const Samples val = ds.samples(Split::val);
  if (train.size() == 0) throw UsageError("empty training set");
  MarginTable table(train.size(), cfg.resolved_delta_eps(), cfg.eps_max);
  AdamState opt;
  std::vector<EpochLog> logs;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochLog log = ima_epoch(model, opt, train, table, cfg, epoch);
    const auto st = ima_margin_update(model, train, table, cfg, epoch);
    log.shrunk = st.shrunk;
    log.expanded = st.expanded;
    finish_log(log, model, train, val, &table);
    if (on_epoch) on_epoch(log, model, &table);
    logs.push_back(log);
  }
  return {std::move(model), std::move(table), std::move(logs)};
}

// One epoch of mini-batch cross-entropy training; loss is the summed batch
// cross-entropy divided by the nominal batch size.
inline EpochLog ce_epoch(Model& model, AdamState& opt, const Samples& train, const TrainConfig& cfg, int epoch) {
  if (train.size() == 0) throw UsageError("empty training set");
  EpochLog log;
  log.epoch = epoch;
  const auto batches = make_batches(train, epoch_order(train.size(), cfg.seed, epoch), cfg.batch_size);
  const double nominal = static_cast<double>(cfg.batch_size);
  for (const auto& b : batches) {
    const std::vector<double> w(b.y.size(), 1.0 / nominal);
    const ParamGradient pg = model.param_gradient(b.x, b.y, w, LossKind::cross_entropy);
    log.l1 += pg.losses.sum();
    log.loss += pg.losses.sum() / nominal;
    adam_step(model, pg.grad, opt, cfg.optimizer);
  }
  log.loss /= static_cast<double>(batches.size());
  return log;
}

inline TrainResult ce_train(Model model, const Dataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const Samples train = ds.samples(Split::train);
  const Samples val = ds.samples(Split::val);
  AdamState opt;
  std::vector<EpochLog> logs;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochLog log = ce_epoch(model, opt, train, cfg, epoch);
    finish_log(log, model, train, val, nullptr);
    if (on_epoch) on_epoch(log, model, nullptr);
    logs.push_back(log);
  }
  return {std::move(model), MarginTable{}, std::move(logs)};
}

// Loss and update for a vanilla adversarial batch:
//   L_adv = (L_ce(x, y) + L_ce(x_eps, y)) / 2, with x_eps from PGD at radius eps.
inline double adv_batch_step(Model& model, AdamState& opt, const Batch& b, double eps, const TrainConfig& cfg, int epoch) {
  const double nominal = static_cast<double>(cfg.batch_size);
  const std::vector<double> w(b.y.size(), 1.0 / nominal);
  Mat x_adv;
  if (eps == 0.0) {
    x_adv = b.x;
  } else {
    const std::vector<double> radii(b.y.size(), eps);
    std::vector<std::uint64_t> seeds;
    for (auto id : b.ids)
      seeds.push_back(derive_seed(cfg.seed, static_cast<std::uint64_t>(Stream::adv_train),
                                  static_cast<std::uint64_t>(epoch), id));
    x_adv = pgd_batch(model, b.x, b.y, radii, cfg.attack, LossKind::cross_entropy, seeds);
  }
  const ParamGradient clean = model.param_gradient(b.x, b.y, w, LossKind::cross_entropy);
  const ParamGradient noisy = model.param_gradient(x_adv, b.y, w, LossKind::cross_entropy);
  const Vec grad = 0.5 * (clean.grad + noisy.grad);
  adam_step(model, grad, opt, cfg.optimizer);
  return 0.5 * (clean.losses.sum() + noisy.losses.sum()) / nominal;
}

inline TrainResult vanilla_adv_train(Model model, const Dataset& ds, double eps, const TrainConfig& cfg,
                                     const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (!(eps >= 0.0)) throw ConfigError("adversarial training eps must be >= 0");
  const Samples train = ds.samples(Split::train);
  const Samples val = ds.samples(Split::val);
  if (train.size() == 0) throw UsageError("empty training set");
  AdamState opt;
  std::vector<EpochLog> logs;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    const auto batches = make_batches(train, epoch_order(train.size(), cfg.seed, epoch), cfg.batch_size);
    for (const auto& b : batches) log.loss += adv_batch_step(model, opt, b, eps, cfg, epoch);
    log.loss /= static_cast<double>(batches.size());
    finish_log(log, model, train, val, nullptr);
    if (on_epoch) on_epoch(log, model, nullptr);
    logs.push_back(log);
  }
  return {std::move(model), MarginTable{}, std::move(logs)};
}

// ---------------------------------------------------------------------------
// Output files.

inline void write_trainlog_csv(const std::filesystem::path& path, const std::vector<EpochLog>& logs) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << "epoch,margin_mean,margin_min,margin_max,train_acc,val_acc,L0,L1,L2,L,boundary_found,boundary_absent,"
        "shrunk,expanded\n";
  for (const auto& l : logs) {
    os << l.epoch << ',' << format_double(l.margin_mean) << ',' << format_double(l.margin_min) << ','
       << format_double(l.margin_max) << ',' << format_double(l.train_acc) << ',' << format_double(l.val_acc) << ','
       << format_double(l.l0) << ',' << format_double(l.l1) << ',' << format_double(l.l2) << ','
       << format_double(l.loss) << ',' << l.boundary_found << ',' << l.boundary_absent << ',' << l.shrunk << ','
       << l.expanded << '\n';
  }
}

inline void write_margins_csv(const std::filesystem::path& path, const MarginTable& table) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << "sample_id,margin\n";
  for (std::size_t i = 0; i < table.size(); ++i) os << i << ',' << format_double(table[i]) << '\n';
}

inline MarginTable read_margins_csv(const std::filesystem::path& path, double delta_eps, double eps_max) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(is, line) || line.rfind("sample_id,margin", 0) != 0)
    throw ParseError(path.string() + ": bad margins header", 1);
  MarginTable t;
  t.delta_eps = delta_eps;
  t.eps_max = eps_max;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    std::size_t id = 0;
    double m = 0;
    if (comma == std::string::npos || !parse_int(std::string_view(line).substr(0, comma), id) ||
        !parse_double(std::string_view(line).substr(comma + 1), m) || id != t.size())
      throw ParseError(path.string() + ": bad margins row", lineno);
    t.margins.push_back(m);
  }
  return t;
}

}  // namespace ima

#endif  // IMA_TRAINING_HPP
