#ifndef IMA_CLI_HPP
#define IMA_CLI_HPP

#include "ima/attacks.hpp"
#include "ima/checkpoint.hpp"
#include "ima/config.hpp"
#include "ima/core.hpp"
#include "ima/data.hpp"
#include "ima/eval.hpp"
#include "ima/nn.hpp"
#include "ima/training.hpp"

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#ifndef IMA_VERSION
#define IMA_VERSION "0.1.0"
#endif

namespace ima::cli {

namespace fs = std::filesystem;

inline std::string version() { return IMA_VERSION; }

struct Context {
  RunConfig cfg;
  bool checkpoint_sweep = false;
  int jobs = 1;
  std::ostream* log = &std::cout;
  std::ostream* err = &std::cerr;

  [[nodiscard]] fs::path out() const { return cfg.get("run.out"); }
};

inline std::string epoch_tag(int epoch) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "epoch%03d", epoch);
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
  if (!os) throw DataError("write failed: " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline fs::path prepare_run_dir(const RunConfig& cfg) {
  const fs::path dir = cfg.get("run.out");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());
  write_text(dir / "config.resolved", cfg.resolved());
  write_text(dir / "VERSION", version() + "\n");
  return dir;
}

// ---------------------------------------------------------------------------
// Config translation.

inline SplitSizes split_sizes(const RunConfig& cfg) {
  const auto n = [&](const char* key) {
    const auto v = cfg.get_int(key);
    if (v < 0) throw ConfigError(std::string(key) + " must be >= 0");
    return static_cast<std::size_t>(v);
  };
  return {n("data.n_train"), n("data.n_val"), n("data.n_test")};
}

inline std::vector<Vec> parse_centers(const std::string& text) {
  std::vector<Vec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (RunConfig::trim(item).empty()) continue;
    const auto vals = RunConfig::parse_list(item, "data.centers");
    Vec c(static_cast<Eigen::Index>(vals.size()));
    for (std::size_t i = 0; i < vals.size(); ++i) c[static_cast<Eigen::Index>(i)] = vals[i];
    out.push_back(c);
  }
  return out;
}

inline Dataset generate_dataset(const RunConfig& cfg) {
  const auto& gen = cfg.get("data.generator");
  const auto seed = cfg.get_u64("run.seed");
  if (gen == "moons") return make_moons(split_sizes(cfg), cfg.get_double("data.noise"), seed);
  if (gen == "blobs") return make_blobs(parse_centers(cfg.get("data.centers")), cfg.get_double("data.std"), split_sizes(cfg), seed);
  if (gen == "rings") return make_rings(cfg.get_list("data.radii"), cfg.get_double("data.noise"), split_sizes(cfg), seed);
  throw ConfigError("unknown generator '" + gen + "' (valid: moons, blobs, rings)");
}

inline Dataset load_dataset(const RunConfig& cfg) {
  if (!cfg.is_set("data.path")) throw ConfigError("data.path is required");
  const fs::path p = cfg.get("data.path");
  if (!fs::exists(p)) throw DataError("dataset file not found: " + p.string());
  return load_csv(p);
}

inline AttackConfig attack_config(const RunConfig& cfg) {
  AttackConfig a;
  const auto& norm = cfg.get("attack.norm");
  if (norm == "l2") a.norm = NormKind::l2;
  else if (norm == "linf") a.norm = NormKind::linf;
  else throw ConfigError("attack.norm must be l2 or linf, got '" + norm + "'");
  a.n_pgd = static_cast<int>(cfg.get_int("attack.n_pgd"));
  a.alpha = cfg.get_double("attack.alpha");
  a.n_binary = static_cast<int>(cfg.get_int("attack.n_binary"));
  a.seed = cfg.get_u64("run.seed");
  if (cfg.is_set("attack.clip_lo") != cfg.is_set("attack.clip_hi"))
    throw ConfigError("attack.clip_lo and attack.clip_hi must be set together");
  if (cfg.is_set("attack.clip_lo")) a.clip_box = ClipBox{cfg.get_double("attack.clip_lo"), cfg.get_double("attack.clip_hi")};
  a.validate();
  return a;
}

inline TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.beta = cfg.get_double("train.beta");
  t.eps_max = cfg.get_double("train.eps_max");
  t.delta_eps = cfg.get_optional_double("train.delta_eps");
  t.epochs = static_cast<int>(cfg.get_int("train.epochs"));
  const auto bs = cfg.get_int("train.batch_size");
  if (bs < 1) throw ConfigError("train.batch_size must be >= 1");
  t.batch_size = static_cast<std::size_t>(bs);
  t.attack = attack_config(cfg);
  t.optimizer.lr = cfg.get_double("train.lr");
  t.optimizer.beta1 = cfg.get_double("train.adam_beta1");
  t.optimizer.beta2 = cfg.get_double("train.adam_beta2");
  t.optimizer.eps = cfg.get_double("train.adam_eps");
  t.seed = cfg.get_u64("run.seed");
  t.validate();
  return t;
}

inline Model build_model(const RunConfig& cfg, const Dataset& ds) {
  auto layers = parse_architecture(cfg.get("model.layers"), cfg.get_double("model.negative_slope"),
                                   cfg.get_double("model.ln_epsilon"));
  Model m(layers, ds.num_classes, cfg.get_u64("run.seed"));
  if (m.input_dim() != ds.feature_dim)
    throw ConfigError("model.layers expects " + std::to_string(m.input_dim()) + " features, dataset has " +
                      std::to_string(ds.feature_dim));
  return m;
}

inline Split eval_split(const RunConfig& cfg) {
  const auto s = parse_split(cfg.get("eval.split"));
  if (!s) throw ConfigError("eval.split must be train, val or test");
  return *s;
}

// ---------------------------------------------------------------------------
// generate

inline int cmd_generate(Context& ctx) {
  Dataset ds = generate_dataset(ctx.cfg);
  const fs::path dir = prepare_run_dir(ctx.cfg);
  const fs::path csv = dir / (ctx.cfg.get("data.name") + ".csv");
  save_csv(csv, ds);
  save_meta(meta_path(csv), ds);
  auto& log = *ctx.log;
  log << "wrote " << csv.string() << "\n";
  for (Split s : {Split::train, Split::val, Split::test}) {
    std::vector<std::size_t> per_class(static_cast<std::size_t>(ds.num_classes), 0);
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.split[i] == s) ++per_class[static_cast<std::size_t>(ds.y[i])];
    log << to_string(s) << ": " << ds.count(s);
    for (std::size_t c = 0; c < per_class.size(); ++c) log << (c ? ", " : " (") << "class " << c << "=" << per_class[c];
    log << ")\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// train

inline int cmd_train(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const std::string method = cfg.get("train.method");
  if (method != "ima" && method != "adv" && method != "ce")
    throw ConfigError("train.method must be ima, adv or ce, got '" + method + "'");
  std::optional<double> adv_eps;
  if (method == "adv") {
    if (!cfg.is_set("train.adv_eps")) throw ConfigError("train.adv_eps is required for method=adv");
    adv_eps = cfg.get_double("train.adv_eps");
  }
  const TrainConfig tc = train_config(cfg);
  const Dataset ds = load_dataset(cfg);
  Model model = build_model(cfg, ds);
  const fs::path dir = prepare_run_dir(cfg);
  auto& log = *ctx.log;

  const EpochCallback cb = [&](const EpochLog& e, const Model& m, const MarginTable* table) {
    save_checkpoint(dir / ("ckpt_" + epoch_tag(e.epoch) + ".ckpt"), m);
    if (table) write_margins_csv(dir / ("margins_" + epoch_tag(e.epoch) + ".csv"), *table);
    log << "epoch " << e.epoch << " loss " << format_short(e.loss) << " train_acc " << format_short(e.train_acc)
        << " val_acc " << format_short(e.val_acc);
    if (table) log << " margin_mean " << format_short(e.margin_mean);
    log << "\n" << std::flush;
  };

  TrainResult r = method == "ima"   ? ima_train(std::move(model), ds, tc, cb)
                  : method == "adv" ? vanilla_adv_train(std::move(model), ds, *adv_eps, tc, cb)
                                    : ce_train(std::move(model), ds, tc, cb);
  write_trainlog_csv(dir / "trainlog.csv", r.logs);
  save_checkpoint(dir / "model.ckpt", r.model);
  if (!r.logs.empty()) log << "final val accuracy " << format_short(r.logs.back().val_acc) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

inline RobustnessConfig robustness_config(const RunConfig& cfg) {
  RobustnessConfig rc;
  rc.levels = cfg.get_list("eval.levels");
  if (rc.levels.empty()) throw ConfigError("eval.levels is empty");
  rc.attack = attack_config(cfg);
  rc.attack.n_pgd = static_cast<int>(cfg.get_int("eval.n_pgd"));
  rc.attack.alpha = cfg.get_double("eval.alpha");
  rc.attack.validate();
  rc.seed = cfg.get_u64("run.seed");
  return rc;
}

inline std::vector<fs::path> sweep_checkpoints(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("--checkpoint-sweep needs eval.checkpoint to be a directory");
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("ckpt_epoch", 0) == 0 && entry.path().extension() == ".ckpt") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("no ckpt_epoch*.ckpt files in " + dir.string());
  return out;
}

inline void write_white_noise_csv(const fs::path& path, const std::vector<double>& levels,
                                  const std::vector<WhiteNoiseResult>& res) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "level,flips,trials,fraction\n";
  for (std::size_t i = 0; i < levels.size(); ++i)
    os << format_short(levels[i]) << ',' << res[i].flips << ',' << res[i].trials << ',' << format_double(res[i].fraction())
       << '\n';
}

inline void eval_extras(Context& ctx, const Model& model, const Dataset& ds, const Samples& samples, const fs::path& dir,
                        int& status) {
  const auto& cfg = ctx.cfg;
  auto& log = *ctx.log;
  const AttackConfig attack = attack_config(cfg);

  const auto noise_levels = cfg.get_list("eval.white_noise_levels");
  if (!noise_levels.empty()) {
    std::vector<WhiteNoiseResult> res;
    for (double lv : noise_levels)
      res.push_back(evaluate_white_noise(model, samples, lv, static_cast<int>(cfg.get_int("eval.white_noise_trials")),
                                         cfg.get_u64("run.seed"), attack.norm));
    write_white_noise_csv(dir / "white_noise.csv", noise_levels, res);
    log << "wrote white_noise.csv\n";
  }

  const auto bins = cfg.get_int("eval.hist_bins");
  if (bins > 0) {
    if (!cfg.is_set("eval.margins")) throw ConfigError("eval.margins is required when eval.hist_bins > 0");
    const TrainConfig tc = train_config(cfg);
    const MarginTable table = read_margins_csv(cfg.get("eval.margins"), tc.resolved_delta_eps(), tc.eps_max);
    write_histogram_csv(dir / "hist.csv", margin_histogram(table, static_cast<int>(bins)));
    log << "wrote hist.csv\n";
  }

  if (cfg.get_bool("eval.raster")) {
    try {
      const int res = static_cast<int>(cfg.get_int("eval.raster_resolution"));
      const Raster r = rasterize_boundary(model, bounding_box(ds.x), res, res);
      write_pgm(dir / "boundary.pgm", r, model.num_classes());
      write_bounds_meta(dir / "bounds.meta", r);
      log << "wrote boundary.pgm\n";
    } catch (const UsageError& e) {
      *ctx.err << "error: raster: " << e.what() << "\n";
      status = std::max(status, e.exit_code());
    }
  }

  if (cfg.get_bool("eval.equilibrium")) {
    const auto want = static_cast<std::size_t>(std::max<long long>(0, cfg.get_int("eval.equilibrium_points")));
    const double margin = cfg.get_optional_double("eval.equilibrium_margin").value_or(cfg.get_double("train.eps_max"));
    const auto pred = predict(model, samples.x);
    std::vector<Eigen::Index> cols;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (pred[i] == samples.y[i]) cols.push_back(static_cast<Eigen::Index>(i));
    const Samples pool = gather(samples.x, samples.y, cols);
    std::vector<double> eps(pool.size(), margin);
    std::vector<std::uint64_t> seeds(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i)
      seeds[i] = derive_seed(cfg.get_u64("run.seed"), static_cast<std::uint64_t>(Stream::bpgd_margin), i);
    const auto res = bpgd_batch(model, pool.x, pool.y, eps, attack, seeds);
    std::vector<Vec> mids;
    std::vector<int> src;
    for (std::size_t i = 0; i < res.size() && mids.size() < want; ++i) {
      if (!res[i].found()) continue;
      mids.push_back(res[i].midpoint());
      src.push_back(pool.y[i]);
    }
    if (mids.empty()) {
      *ctx.err << "error: equilibrium: no boundary points within margin " << format_short(margin) << "\n";
      status = std::max(status, 2);
    } else {
      Mat pts(model.input_dim(), static_cast<Eigen::Index>(mids.size()));
      for (std::size_t i = 0; i < mids.size(); ++i) pts.col(static_cast<Eigen::Index>(i)) = mids[i];
      write_equilibrium_csv(dir / "equilibrium.csv", equilibrium_diagnostic(model, pts, src));
      log << "wrote equilibrium.csv (" << mids.size() << " points)\n";
    }
  }

  if (cfg.get_bool("eval.spsa")) {
    const auto n = std::min<std::size_t>(samples.size(), static_cast<std::size_t>(std::max<long long>(0, cfg.get_int("eval.spsa_subset"))));
    std::vector<Eigen::Index> cols(n);
    for (std::size_t i = 0; i < n; ++i) cols[i] = static_cast<Eigen::Index>(i);
    const Samples sub = gather(samples.x, samples.y, cols);
    SpsaConfig sc;
    sc.n_samples = static_cast<int>(cfg.get_int("eval.spsa_samples"));
    sc.perturb_scale = cfg.get_double("eval.spsa_perturb");
    std::ofstream os(dir / "spsa.csv");
    if (!os) throw DataError("cannot write spsa.csv");
    os << "level,n_correct,n_total,accuracy\n";
    for (double lv : cfg.get_list("eval.levels")) {
      AttackConfig a = attack;
      a.epsilon = lv;
      a.n_pgd = static_cast<int>(cfg.get_int("eval.spsa_n_pgd"));
      const std::size_t ok = lv > 0.0 ? spsa_robust_count(model, sub, a, sc, cfg.get_u64("run.seed")) : count_correct(model, sub.x, sub.y);
      os << format_short(lv) << ',' << ok << ',' << n << ',' << format_double(n ? static_cast<double>(ok) / static_cast<double>(n) : 0.0) << '\n';
    }
    log << "wrote spsa.csv\n";
  }
}

inline int cmd_eval(Context& ctx) {
  const auto& cfg = ctx.cfg;
  if (!cfg.is_set("eval.checkpoint")) throw ConfigError("eval.checkpoint is required");
  const fs::path ck = cfg.get("eval.checkpoint");
  const RobustnessConfig rc = robustness_config(cfg);
  const Dataset ds = load_dataset(cfg);
  const Samples samples = ds.samples(eval_split(cfg));
  if (samples.size() == 0) throw DataError("split " + cfg.get("eval.split") + " is empty");
  const fs::path dir = prepare_run_dir(cfg);
  auto& log = *ctx.log;

  const auto run_one = [&](const fs::path& path, const fs::path& report) {
    Model model = load_checkpoint(path);
    if (model.input_dim() != ds.feature_dim || model.num_classes() != ds.num_classes)
      throw ShapeError("checkpoint " + path.string() + " does not match the dataset shape");
    RobustnessReport rep = evaluate_robustness(model, samples, rc);
    rep.checkpoint_id = path.filename().string();
    write_report_csv(report, rep);
    log << report.filename().string() << ":";
    for (std::size_t i = 0; i < rep.noise_levels.size(); ++i)
      log << " " << format_short(rep.noise_levels[i]) << "=" << format_short(rep.accuracy(i, AttackKind::worst_case));
    log << "\n" << std::flush;
    return model;
  };

  int status = 0;
  if (ctx.checkpoint_sweep) {
    for (const auto& path : sweep_checkpoints(ck)) {
      std::string stem = path.stem().string();
      run_one(path, dir / ("report_" + stem.substr(5) + ".csv"));
    }
    return status;
  }
  if (!fs::exists(ck)) throw DataError("checkpoint not found: " + ck.string());
  const Model model = run_one(ck, dir / "report.csv");
  eval_extras(ctx, model, ds, samples, dir, status);
  return status;
}

// ---------------------------------------------------------------------------
// sweep

struct GridPoint {
  std::string name;
  std::vector<std::pair<std::string, std::string>> assignments;  // train.* key, value
};

inline std::vector<GridPoint> sweep_grid(const RunConfig& cfg) {
  std::vector<GridPoint> grid{GridPoint{}};
  bool any = false;
  for (const char* key : {"beta", "eps_max", "delta_eps", "adv_eps"}) {
    const auto values = cfg.get_list(std::string("sweep.") + key);
    if (values.empty()) continue;
    any = true;
    std::vector<GridPoint> next;
    for (const auto& g : grid)
      for (double v : values) {
        GridPoint p = g;
        const std::string text = format_short(v);
        p.name += (p.name.empty() ? "" : "_") + std::string(key) + "-" + text;
        p.assignments.emplace_back(std::string("train.") + key, text);
        next.push_back(std::move(p));
      }
    grid = std::move(next);
  }
  if (!any) throw UsageError("sweep grid is empty (set at least one of sweep.beta, sweep.eps_max, sweep.delta_eps, sweep.adv_eps)");
  return grid;
}

inline int run_guarded(Context& ctx, int (*fn)(Context&)) {
  try {
    return fn(ctx);
  } catch (const Error& e) {
    *ctx.err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    *ctx.err << "error: " << e.what() << "\n";
    return 1;
  }
}

inline int run_grid_point(const Context& base, const GridPoint& p, const fs::path& dir) {
  Context sub = base;
  for (const auto& [k, v] : p.assignments) sub.cfg.set(k, v);
  sub.cfg.set("run.out", dir.string());
  sub.cfg.set("eval.checkpoint", (dir / "model.ckpt").string());
  sub.checkpoint_sweep = false;
  std::ofstream log_file(dir.string() + ".log");
  sub.log = log_file ? static_cast<std::ostream*>(&log_file) : base.log;
  int code = run_guarded(sub, cmd_train);
  if (code == 0) code = run_guarded(sub, cmd_eval);
  if (code == 0) write_text(dir / "DONE", "ok\n");
  return code;
}

inline int cmd_sweep(Context& ctx) {
  const auto grid = sweep_grid(ctx.cfg);
  const fs::path root = prepare_run_dir(ctx.cfg);
  auto& log = *ctx.log;
  if (!ctx.cfg.is_set("data.path")) {
    const fs::path csv = root / "dataset.csv";
    if (!fs::exists(csv)) {
      const Dataset ds = generate_dataset(ctx.cfg);
      save_csv(csv, ds);
      save_meta(meta_path(csv), ds);
    }
    ctx.cfg.set("data.path", csv.string());
  }

  std::map<std::string, int> codes;
  std::vector<const GridPoint*> pending;
  for (const auto& p : grid) {
    if (fs::exists(root / p.name / "DONE")) {
      log << p.name << ": done, skipped\n";
      codes[p.name] = 0;
    } else {
      pending.push_back(&p);
    }
  }

  const int jobs = std::max(1, ctx.jobs);
  if (jobs == 1) {
    for (const auto* p : pending) {
      log << p->name << ": running\n" << std::flush;
      codes[p->name] = run_grid_point(ctx, *p, root / p->name);
    }
  } else {
    std::map<pid_t, std::string> running;
    const auto reap = [&] {
      int st = 0;
      const pid_t pid = ::wait(&st);
      if (pid <= 0) return;
      codes[running[pid]] = WIFEXITED(st) ? WEXITSTATUS(st) : 1;
      running.erase(pid);
    };
    for (const auto* p : pending) {
      while (static_cast<int>(running.size()) >= jobs) reap();
      log << p->name << ": running\n" << std::flush;
      ctx.err->flush();
      const pid_t pid = ::fork();
      if (pid < 0) {
        codes[p->name] = run_grid_point(ctx, *p, root / p->name);
      } else if (pid == 0) {
        const int code = run_grid_point(ctx, *p, root / p->name);
        std::cout.flush();
        std::cerr.flush();
        ::_exit(code);
      } else {
        running[pid] = p->name;
      }
    }
    while (!running.empty()) reap();
  }

  const auto levels = ctx.cfg.get_list("eval.levels");
  std::ofstream os(root / "summary.csv");
  if (!os) throw DataError("cannot write summary.csv");
  os << "point,beta,eps_max,delta_eps,adv_eps,status";
  for (double lv : levels) os << ",acc_" << format_short(lv);
  os << '\n';
  int failures = 0;
  for (const auto& p : grid) {
    RunConfig c = ctx.cfg;
    for (const auto& [k, v] : p.assignments) c.set(k, v);
    const int code = codes[p.name];
    os << p.name << ',' << c.get("train.beta") << ',' << c.get("train.eps_max") << ',' << c.get("train.delta_eps") << ','
       << c.get("train.adv_eps") << ',' << (code == 0 ? std::string("ok") : "failed:" + std::to_string(code));
    std::map<std::string, std::string> acc;
    if (code == 0) {
      std::istringstream rs(read_text(root / p.name / "report.csv"));
      std::string line;
      std::getline(rs, line);
      while (std::getline(rs, line)) {
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (f.size() >= 5 && f[1] == "worst") acc[f[0]] = f[4];
      }
    } else {
      ++failures;
    }
    for (double lv : levels) os << ',' << acc[format_short(lv)];
    os << '\n';
  }
  log << "wrote " << (root / "summary.csv").string() << " (" << grid.size() - static_cast<std::size_t>(failures) << "/"
      << grid.size() << " ok)\n";
  return failures ? 1 : 0;
}

}  // namespace ima::cli

#endif  // IMA_CLI_HPP
