#pragma once

// Command implementations behind the maxplus CLI. Each returns a process exit
// code and writes human-readable output to `out`.
//
//   0 success, 1 usage error, 2 check failure, 3 runtime abort

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "maxplus/checkpoint.hpp"
#include "maxplus/config.hpp"
#include "maxplus/equivalence.hpp"
#include "maxplus/gradcheck.hpp"
#include "maxplus/pruning.hpp"
#include "maxplus/report.hpp"

namespace maxplus {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitCheckFailed = 2, kExitAbort = 3 };

/// Usage-level failure raised by a command (bad flags, existing run dir, ...).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Runs `fn`, mapping exceptions to exit codes and messages on `err`.
inline int run_guarded(const std::function<int()>& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ContractViolation& e) {
    err << "invalid input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "aborted: " << e.what() << "\n";
    return kExitAbort;
  }
}

/// Runs task(i) for i in [0, n) on up to `jobs` threads. Results must be
/// written to per-index slots; the first exception is rethrown.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& task) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Creates a fresh run directory; an existing one is an error unless `force`.
inline void prepare_run_dir(const std::filesystem::path& dir, bool force) {
  if (std::filesystem::exists(dir)) {
    if (!force) throw UsageError("run directory " + dir.string() + " already exists (use --force to replace it)");
    std::filesystem::remove_all(dir);
  }
  std::filesystem::create_directories(dir);
}

// ---------------------------------------------------------------- train

struct TrainCommand {
  std::string config_path;  // optional JSON file
  std::string preset;
  std::string head;
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds;  // several seeds: one sub-directory each
  std::vector<std::string> overrides;
  std::string out;
  bool force = false;
  std::size_t jobs = 1;
  bool verbose = false;
};

inline nlohmann::ordered_json load_config_json(const std::string& path) {
  if (path.empty()) return nlohmann::ordered_json::object();
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("(file " + path + ")", e.what());
  }
  return j;
}

/// Raw config document after applying --preset, --head, --seed and --set.
inline nlohmann::ordered_json compose_config(const std::string& config_path, const std::string& preset,
                                             const std::string& head, std::optional<std::uint64_t> seed,
                                             const std::vector<std::string>& overrides) {
  auto j = load_config_json(config_path);
  if (!preset.empty()) j["preset"] = preset;
  if (!head.empty()) j["head"]["variant"] = head;
  if (seed) j["seed"] = *seed;
  for (const auto& o : overrides) apply_override(j, o);
  return j;
}

/// Trains one model and writes checkpoint.bin, curves.csv, config.json and
/// report.json into `dir` (which must already exist).
inline RunReport train_run(const RunConfig& cfg, const Dataset& ds, const std::filesystem::path& dir,
                           std::ostream* log = nullptr) {
  const HeadSpec spec = resolve_head(cfg, ds);
  const ModelParams init = build_head(spec);
  static std::mutex log_mu;
  EpochCallback cb;
  if (log)
    cb = [&](const EpochRecord& r) {
      std::lock_guard lock(log_mu);
      *log << to_string(spec.variant) << " seed " << cfg.seed << " epoch " << r.epoch << " train_loss "
           << format_double(r.train_loss) << " val_loss " << format_double(r.val_loss) << "\n";
    };
  const TrainResult tr = train(init, ds, cfg.train, cb);

  RunReport rep;
  rep.kind = "train";
  rep.preset = cfg.preset;
  rep.dataset = ds.name;
  rep.variant = spec.variant;
  rep.seed = cfg.seed;
  rep.d_in = spec.d_in;
  rep.d_hidden = spec.d_hidden;
  rep.d_out = spec.d_out;
  rep.pooling = spec.pooling;
  rep.split = ds.splits.test.empty() ? "val" : "test";
  rep.metrics = evaluate(tr.best, ds, evaluation_split(ds));
  rep.params_total = tr.best.census();
  rep.params_remaining = rep.params_total;
  rep.params_closed_form = expected_census(spec);
  rep.best_epoch = tr.best_epoch;
  if (std::isfinite(tr.best_val_loss)) rep.best_val_loss = tr.best_val_loss;
  rep.epochs_run = tr.curves.size();
  rep.steps = tr.steps;
  rep.diverged = tr.diverged;
  rep.abort_reason = tr.abort_reason;

  write_text(dir / "config.json", config_to_json(cfg).dump(2) + "\n");
  save_checkpoint(dir / "checkpoint.bin", tr.best, &tr.best_state);
  write_text(dir / "curves.csv", curves_csv(tr.curves));
  write_text(dir / "report.json", to_json(rep).dump(2) + "\n");
  return rep;
}

inline int cmd_train(const TrainCommand& c, std::ostream& out) {
  if (c.out.empty()) throw UsageError("--out is required");
  const auto raw = compose_config(c.config_path, c.preset, c.head, c.seed, c.overrides);
  const RunConfig base = parse_config(raw);
  const Dataset ds = load_dataset(base.data);

  std::vector<RunConfig> runs;
  std::vector<std::filesystem::path> dirs;
  if (c.seeds.empty()) {
    runs.push_back(base);
    dirs.emplace_back(c.out);
  } else {
    for (auto s : c.seeds) {
      auto j = raw;
      j["seed"] = s;
      runs.push_back(parse_config(j));
      dirs.push_back(std::filesystem::path(c.out) / (to_string(base.head.variant) + "-seed" + std::to_string(s)));
    }
  }
  if (!c.seeds.empty()) prepare_run_dir(c.out, c.force);
  for (const auto& d : dirs) prepare_run_dir(d, c.force);

  std::vector<RunReport> reports(runs.size());
  parallel_for(runs.size(), c.jobs,
               [&](std::size_t i) { reports[i] = train_run(runs[i], ds, dirs[i], c.verbose ? &out : nullptr); });
  bool diverged = false;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = reports[i];
    out << dirs[i].string() << ": " << to_string(r.variant) << " seed " << r.seed << " best_epoch " << r.best_epoch;
    if (auto m = r.metrics.primary()) out << " " << (r.metrics.roc_auc ? "roc_auc " : "accuracy ") << format_double(*m);
    if (r.diverged) out << " DIVERGED (" << r.abort_reason << ")";
    out << "\n";
    diverged = diverged || r.diverged;
  }
  return diverged ? kExitAbort : kExitOk;
}

// ---------------------------------------------------------------- evaluate

struct LoadedRun {
  RunConfig config;
  Dataset data;
  Checkpoint checkpoint;
};

inline LoadedRun load_run(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "checkpoint.bin"))
    throw UsageError("no checkpoint at " + (dir / "checkpoint.bin").string());
  LoadedRun r{parse_config(load_config_json((dir / "config.json").string())), {}, load_checkpoint(dir / "checkpoint.bin")};
  r.data = load_dataset(r.config.data);
  if (r.data.dim() != r.checkpoint.model.spec.d_in || r.data.outputs() != r.checkpoint.model.spec.d_out)
    throw ContractViolation("checkpoint in " + dir.string() + " does not match its dataset");
  return r;
}

struct EvaluateCommand {
  std::string run;
  std::string split = "test";  // test | val | train
  std::string out;             // optional report path
};

inline int cmd_evaluate(const EvaluateCommand& c, std::ostream& out) {
  if (c.split != "test" && c.split != "val" && c.split != "train") throw UsageError("--split must be test, val or train");
  const LoadedRun run = load_run(c.run);
  const auto& sp = run.data.splits;
  std::span<const std::size_t> idx = c.split == "train" ? std::span<const std::size_t>(sp.train)
                                     : c.split == "val" ? std::span<const std::size_t>(sp.val)
                                                        : evaluation_split(run.data);
  const ModelParams& m = run.checkpoint.model;
  RunReport rep;
  rep.kind = "evaluate";
  rep.preset = run.config.preset;
  rep.dataset = run.data.name;
  rep.variant = m.spec.variant;
  rep.seed = m.spec.seed;
  rep.d_in = m.spec.d_in;
  rep.d_hidden = m.spec.d_hidden;
  rep.d_out = m.spec.d_out;
  rep.pooling = m.spec.pooling;
  rep.split = c.split == "test" && sp.test.empty() ? "val" : c.split;
  rep.metrics = evaluate(m, run.data, idx);
  rep.params_total = m.census();
  rep.params_remaining = rep.params_total;
  const std::string text = to_json(rep).dump(2) + "\n";
  if (!c.out.empty()) write_text(c.out, text);
  out << text;
  return kExitOk;
}

// ---------------------------------------------------------------- prune-sweep

inline const std::vector<double> kMtatGrid = {0.8, 0.9, 0.95, 0.98};

struct PruneSweepCommand {
  std::string run;
  std::vector<double> r1 = kMtatGrid;
  std::vector<double> r2 = kMtatGrid;
  std::string out;  // default: <run>/sweep.csv
  bool force = false;
  std::size_t jobs = 1;
};

/// One row per (r2, r1) pair, r2 outermost.
inline std::vector<RunReport> prune_sweep(const ModelParams& model, const Dataset& ds, const std::vector<double>& r1s,
                                          const std::vector<double>& r2s, std::size_t jobs = 1) {
  std::vector<std::pair<double, double>> grid;
  for (double r2 : r2s)
    for (double r1 : r1s) grid.emplace_back(r1, r2);
  std::vector<PrunePlan> plans;
  for (const auto& [r1, r2] : grid) plans.push_back(build_prune_plan(model.spec.variant, r1, r2, dims_of(model.spec)));
  std::vector<RunReport> rows(grid.size());
  parallel_for(grid.size(), jobs, [&](std::size_t i) { rows[i] = prune_and_eval(model, plans[i], ds); });
  return rows;
}

inline int cmd_prune_sweep(const PruneSweepCommand& c, std::ostream& out) {
  if (c.r1.empty() || c.r2.empty()) throw UsageError("--r1 and --r2 need at least one ratio each");
  const std::filesystem::path dest = c.out.empty() ? std::filesystem::path(c.run) / "sweep.csv" : std::filesystem::path(c.out);
  if (std::filesystem::exists(dest) && !c.force) throw UsageError(dest.string() + " already exists (use --force to replace it)");
  const LoadedRun run = load_run(c.run);
  auto rows = prune_sweep(run.checkpoint.model, run.data, c.r1, c.r2, c.jobs);
  std::string csv = std::string(kSweepHeader) + "\n";
  for (auto& r : rows) {
    r.preset = run.config.preset;
    csv += sweep_row(r);
  }
  write_text(dest, csv);
  out << csv;
  return kExitOk;
}

// ---------------------------------------------------------------- equiv-check

inline int cmd_equiv_check(const EquivalenceOptions& o, std::ostream& out) {
  const auto s = run_equivalence_suite(o);
  out << "equiv-check: " << s.trials << " trials (in <= " << o.max_in << ", out <= " << o.max_out
      << ", pieces <= " << o.max_pool << "), tolerance " << format_double(o.tolerance) << "\n";
  out << "  relu   -> max-plus: failures " << s.relu_failures << ", max deviation " << format_double(s.relu_max_dev)
      << "\n";
  out << "  maxout -> max-plus: failures " << s.maxout_failures << ", max deviation " << format_double(s.maxout_max_dev)
      << "\n";
  out << (s.passed() ? "PASS" : "FAIL") << "\n";
  return s.passed() ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckCommand {
  std::vector<Variant> heads{std::begin(kAllVariants), std::end(kAllVariants)};
  std::size_t d_in = 8, d_hidden = 6, d_out = 4;
  std::uint64_t seed = 0;
  double threshold = 1e-4;
};

inline int cmd_gradcheck(const GradcheckCommand& c, std::ostream& out) {
  bool ok = true;
  for (Variant v : c.heads) {
    const auto r = gradient_check(v, c.d_in, c.d_hidden, c.d_out, c.seed);
    const bool pass = r.max_rel_error < c.threshold;
    ok = ok && pass;
    out << to_string(v) << " " << c.d_in << "->" << c.d_hidden << "->" << c.d_out << ": max relative error "
        << format_double(r.max_rel_error) << " over " << r.checked << " parameters";
    if (!r.worst_param.empty()) out << " (worst " << r.worst_param << ")";
    if (r.resamples) out << ", resampled " << r.resamples << " tie point(s)";
    out << " " << (pass ? "PASS" : "FAIL") << "\n";
  }
  return ok ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------- gen-data

struct GenDataCommand {
  std::string kind = "max-affine";  // max-affine | idx | cifar10
  std::string out;
  MaxAffineOptions max_affine;
  std::size_t n = 0;  // records for idx / cifar10 fixtures
  std::uint64_t seed = 0;
  bool force = false;
};

inline int cmd_gen_data(const GenDataCommand& c, std::ostream& out) {
  if (c.out.empty()) throw UsageError("--out is required");
  auto guard = [&](const std::filesystem::path& p) {
    if (std::filesystem::exists(p) && !c.force) throw UsageError(p.string() + " already exists (use --force to replace it)");
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  };
  Rng rng(c.seed);
  if (c.kind == "max-affine") {
    guard(c.out);
    MaxAffineOptions o = c.max_affine;
    o.seed = c.seed;
    if (c.n) o.n = c.n;
    const Dataset ds = gen_max_affine(o);
    write_features_csv(c.out, ds);
    out << "wrote " << ds.size() << " x " << ds.dim() << " features, " << ds.outputs() << " tags to " << c.out << "\n";
  } else if (c.kind == "idx") {
    const std::size_t n = c.n ? c.n : 4;
    const std::filesystem::path images = c.out + "-images.idx", labels = c.out + "-labels.idx";
    guard(images);
    guard(labels);
    std::vector<std::uint8_t> px(n * 28 * 28), lab(n);
    for (auto& b : px) b = static_cast<std::uint8_t>(rng.index(256));
    for (auto& b : lab) b = static_cast<std::uint8_t>(rng.index(10));
    write_idx(images, labels, px, lab, 28, 28);
    out << "wrote " << n << " 28x28 images to " << images.string() << " and " << labels.string() << "\n";
  } else if (c.kind == "cifar10") {
    const std::size_t n = c.n ? c.n : 100;
    guard(c.out);
    std::vector<std::uint8_t> px(n * kCifarPixels), lab(n);
    for (auto& b : px) b = static_cast<std::uint8_t>(rng.index(256));
    for (auto& b : lab) b = static_cast<std::uint8_t>(rng.index(10));
    write_cifar10_binary(c.out, lab, px);
    out << "wrote " << n << " CIFAR-10 records to " << c.out << "\n";
  } else {
    throw UsageError("--kind must be max-affine, idx or cifar10");
  }
  return kExitOk;
}

// ---------------------------------------------------------------- report

namespace detail {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  cells.push_back(cur);
  return cells;
}

inline std::vector<std::map<std::string, std::string>> read_csv_table(const std::filesystem::path& path,
                                                                      const std::string& expected_header) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected_header) throw ParseError(path.string() + ": unexpected header '" + line + "'");
  const auto names = split_line(line);
  std::vector<std::map<std::string, std::string>> rows;
  for (std::size_t ln = 2; std::getline(in, line); ++ln) {
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != names.size()) throw ParseError(path.string() + ": line " + std::to_string(ln) + " is ragged");
    std::map<std::string, std::string> row;
    for (std::size_t k = 0; k < names.size(); ++k) row[names[k]] = cells[k];
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::optional<double> cell(const std::map<std::string, std::string>& row, const std::string& key) {
  const auto it = row.find(key);
  if (it == row.end() || it->second.empty()) return std::nullopt;
  return std::stod(it->second);
}

inline std::string fmt_fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string fmt_cell(const Aggregate& a) {
  return fmt_fixed(a.mean) + " ± " + (a.std_error ? fmt_fixed(*a.std_error) : std::string("n/a"));
}

}  // namespace detail

struct ReportCommand {
  std::vector<std::string> inputs;  // run dirs, directories of run dirs, or sweep CSVs
  std::string out;                  // output directory
  std::size_t max_epoch = 25;
  bool force = false;
};

struct RunRecord {
  RunReport report;
  std::vector<std::map<std::string, std::string>> curves;
};

struct SweepRecord {
  std::string source;
  std::vector<std::map<std::string, std::string>> rows;
};

inline void collect_report_inputs(const std::filesystem::path& p, std::vector<RunRecord>& runs,
                                  std::vector<SweepRecord>& sweeps) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(p)) {
    if (p.extension() == ".csv") sweeps.push_back({p.string(), detail::read_csv_table(p, kSweepHeader)});
    else if (p.filename() == "report.json") collect_report_inputs(p.parent_path(), runs, sweeps);
    else throw UsageError("cannot interpret report input " + p.string());
    return;
  }
  if (!fs::is_directory(p)) throw UsageError("report input " + p.string() + " does not exist");
  bool used = false;
  if (fs::exists(p / "report.json")) {
    RunRecord r{report_from_json(Json::parse(read_text(p / "report.json"))), {}};
    if (fs::exists(p / "curves.csv")) r.curves = detail::read_csv_table(p / "curves.csv", kCurvesHeader);
    runs.push_back(std::move(r));
    used = true;
  }
  if (fs::exists(p / "sweep.csv")) {
    sweeps.push_back({(p / "sweep.csv").string(), detail::read_csv_table(p / "sweep.csv", kSweepHeader)});
    used = true;
  }
  if (!used) {
    std::vector<fs::path> children;
    for (const auto& e : fs::directory_iterator(p))
      if (e.is_directory()) children.push_back(e.path());
    std::sort(children.begin(), children.end());
    for (const auto& ch : children) collect_report_inputs(ch, runs, sweeps);
  }
}

/// Markdown tables (method x metric, ratio grid x method) plus the
/// convergence CSV, aggregated over seeds.
struct ReportOutput {
  std::string markdown;
  std::string convergence_csv;
};

inline constexpr const char* kConvergenceHeader = "method,seed,epoch,val_loss,val_roc_auc,val_pr_auc,val_accuracy";

inline ReportOutput build_report(const std::vector<RunRecord>& runs, const std::vector<SweepRecord>& sweeps,
                                 std::size_t max_epoch = 25) {
  ReportOutput o;
  std::ostringstream md;
  md << "# Results\n";

  if (!runs.empty()) {
    std::map<std::string, std::vector<RunReport>> groups;
    std::vector<std::string> order;
    for (const auto& r : runs) {
      const std::string key = r.report.dataset + "|" + to_string(r.report.variant);
      if (!groups.count(key)) order.push_back(key);
      groups[key].push_back(r.report);
    }
    std::sort(order.begin(), order.end());
    std::vector<std::string> metrics;
    for (const char* m : {"roc_auc", "pr_auc", "accuracy", "loss"}) {
      bool any = false;
      for (const auto& [k, rs] : groups) any = any || aggregate_runs(rs).count(m);
      if (any) metrics.emplace_back(m);
    }
    md << "\n## Methods (evaluation split, mean and standard error over seeds)\n\n";
    md << "| dataset | method | runs | params |";
    for (const auto& m : metrics) md << " " << m << " | " << m << " SE |";
    md << "\n|---|---|---|---|";
    for (std::size_t k = 0; k < metrics.size(); ++k) md << "---|---|";
    md << "\n";
    for (const auto& key : order) {
      const auto& rs = groups[key];
      const auto agg = aggregate_runs(rs);
      md << "| " << rs.front().dataset << " | " << to_string(rs.front().variant) << " | " << rs.size() << " | "
         << rs.front().params_total << " |";
      for (const auto& m : metrics) {
        const auto it = agg.find(m);
        if (it == agg.end()) {
          md << " | |";
          continue;
        }
        md << " " << detail::fmt_fixed(it->second.mean) << " | "
           << (it->second.std_error ? detail::fmt_fixed(*it->second.std_error) : std::string("n/a")) << " |";
      }
      md << "\n";
    }

    std::ostringstream cv;
    cv << kConvergenceHeader << "\n";
    std::vector<const RunRecord*> sorted;
    for (const auto& r : runs) sorted.push_back(&r);
    std::stable_sort(sorted.begin(), sorted.end(), [](const RunRecord* a, const RunRecord* b) {
      const auto ka = to_string(a->report.variant), kb = to_string(b->report.variant);
      return ka != kb ? ka < kb : a->report.seed < b->report.seed;
    });
    for (const RunRecord* r : sorted)
      for (const auto& row : r->curves) {
        const std::size_t epoch = std::stoul(row.at("epoch"));
        if (epoch > max_epoch) continue;
        cv << to_string(r->report.variant) << "," << r->report.seed << "," << epoch << "," << row.at("val_loss") << ","
           << row.at("val_roc_auc") << "," << row.at("val_pr_auc") << "," << row.at("val_accuracy") << "\n";
      }
    o.convergence_csv = cv.str();
  } else {
    o.convergence_csv = std::string(kConvergenceHeader) + "\n";
  }

  if (!sweeps.empty()) {
    // (r2, r1) -> variant -> values; remaining params per (r2, r1, variant).
    using Key = std::pair<double, double>;
    std::map<Key, std::map<std::string, std::vector<double>>> cells;
    std::map<Key, std::map<std::string, std::string>> remaining;
    std::set<std::string> variants;
    std::string metric;
    for (const auto& s : sweeps)
      for (const auto& row : s.rows) {
        const std::string m = detail::cell(row, "roc_auc") ? "roc_auc" : "accuracy";
        if (metric.empty()) metric = m;
        if (m != metric) throw ContractViolation("report: sweeps mix roc_auc and accuracy metrics");
        const auto v = detail::cell(row, m);
        if (!v) throw ContractViolation("report: sweep row without a " + m + " value in " + s.source);
        const Key k{*detail::cell(row, "r2"), *detail::cell(row, "r1")};
        cells[k][row.at("variant")].push_back(*v);
        remaining[k][row.at("variant")] = row.at("remaining_params");
        variants.insert(row.at("variant"));
      }
    md << "\n## Pruning (" << metric << " after one-shot pruning; remaining parameters in parentheses)\n\n";
    md << "| r2 | r1 |";
    for (const auto& v : variants) md << " " << v << " |";
    md << "\n|---|---|";
    for (std::size_t k = 0; k < variants.size(); ++k) md << "---|";
    md << "\n";
    for (const auto& [k, per] : cells) {
      md << "| " << format_double(k.first) << " | " << format_double(k.second) << " |";
      for (const auto& v : variants) {
        const auto it = per.find(v);
        if (it == per.end()) {
          md << " |";
          continue;
        }
        md << " " << detail::fmt_cell(aggregate(it->second)) << " (" << remaining.at(k).at(v) << ") |";
      }
      md << "\n";
    }
  }
  o.markdown = md.str();
  return o;
}

inline int cmd_report(const ReportCommand& c, std::ostream& out) {
  if (c.inputs.empty()) throw UsageError("report needs at least one run directory or sweep CSV");
  std::vector<RunRecord> runs;
  std::vector<SweepRecord> sweeps;
  for (const auto& p : c.inputs) collect_report_inputs(p, runs, sweeps);
  if (runs.empty() && sweeps.empty()) throw UsageError("no run reports or sweep CSVs found in the inputs");
  const auto rep = build_report(runs, sweeps, c.max_epoch);
  if (!c.out.empty()) {
    const std::filesystem::path dir(c.out);
    if (std::filesystem::exists(dir / "report.md") && !c.force)
      throw UsageError((dir / "report.md").string() + " already exists (use --force to replace it)");
    std::filesystem::create_directories(dir);
    write_text(dir / "report.md", rep.markdown);
    write_text(dir / "convergence.csv", rep.convergence_csv);
  }
  out << rep.markdown;
  return kExitOk;
}

}  // namespace maxplus
