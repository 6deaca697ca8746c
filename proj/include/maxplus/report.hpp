#pragma once

// RunReport and the CSV/JSON emitters shared by the CLI commands.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "maxplus/evaluate.hpp"
#include "maxplus/heads.hpp"
#include "maxplus/metrics.hpp"
#include "maxplus/optim.hpp"

namespace maxplus {

using Json = nlohmann::ordered_json;

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc{} ? std::string(buf, ptr) : std::string("nan");
}

inline std::string format_optional(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

struct RunReport {
  std::string kind = "train";  // train | evaluate | prune
  std::string preset;
  std::string dataset;
  Variant variant = Variant::kRelu;
  std::uint64_t seed = 0;
  std::size_t d_in = 0, d_hidden = 0, d_out = 0, pooling = 2;
  std::string split;  // which split the metrics come from
  EvalResult metrics;
  std::size_t params_total = 0;
  std::size_t params_remaining = 0;
  std::optional<std::size_t> params_closed_form;
  std::optional<double> r1, r2;
  std::size_t best_epoch = 0;
  std::optional<double> best_val_loss;
  std::size_t epochs_run = 0;
  std::size_t steps = 0;
  bool diverged = false;
  std::string abort_reason;
  bool degenerate = false;
};

namespace detail {
inline Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }
inline std::optional<double> json_opt(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}
}  // namespace detail

inline Json to_json(const RunReport& r) {
  Json j;
  j["kind"] = r.kind;
  j["preset"] = r.preset;
  j["dataset"] = r.dataset;
  j["variant"] = to_string(r.variant);
  j["seed"] = r.seed;
  j["dims"] = {{"d_in", r.d_in}, {"d_hidden", r.d_hidden}, {"d_out", r.d_out}, {"pooling", r.pooling}};
  j["split"] = r.split;
  j["metrics"] = {{"loss", r.metrics.loss},
                  {"roc_auc", detail::opt_json(r.metrics.roc_auc)},
                  {"pr_auc", detail::opt_json(r.metrics.pr_auc)},
                  {"accuracy", detail::opt_json(r.metrics.accuracy)},
                  {"samples", r.metrics.samples}};
  j["params_total"] = r.params_total;
  j["params_remaining"] = r.params_remaining;
  j["params_closed_form"] = r.params_closed_form ? Json(*r.params_closed_form) : Json(nullptr);
  j["r1"] = detail::opt_json(r.r1);
  j["r2"] = detail::opt_json(r.r2);
  j["best_epoch"] = r.best_epoch;
  j["best_val_loss"] = detail::opt_json(r.best_val_loss);
  j["epochs_run"] = r.epochs_run;
  j["steps"] = r.steps;
  j["diverged"] = r.diverged;
  j["abort_reason"] = r.abort_reason;
  j["degenerate"] = r.degenerate;
  return j;
}

inline RunReport report_from_json(const Json& j) {
  RunReport r;
  r.kind = j.value("kind", "train");
  r.preset = j.value("preset", "");
  r.dataset = j.value("dataset", "");
  r.variant = parse_variant(j.at("variant").get<std::string>());
  r.seed = j.value("seed", std::uint64_t{0});
  const auto& d = j.at("dims");
  r.d_in = d.at("d_in");
  r.d_hidden = d.at("d_hidden");
  r.d_out = d.at("d_out");
  r.pooling = d.value("pooling", std::size_t{2});
  r.split = j.value("split", "");
  const auto& m = j.at("metrics");
  r.metrics.loss = m.at("loss");
  r.metrics.roc_auc = detail::json_opt(m, "roc_auc");
  r.metrics.pr_auc = detail::json_opt(m, "pr_auc");
  r.metrics.accuracy = detail::json_opt(m, "accuracy");
  r.metrics.samples = m.value("samples", std::size_t{0});
  r.params_total = j.value("params_total", std::size_t{0});
  r.params_remaining = j.value("params_remaining", std::size_t{0});
  if (j.contains("params_closed_form") && !j["params_closed_form"].is_null())
    r.params_closed_form = j["params_closed_form"].get<std::size_t>();
  r.r1 = detail::json_opt(j, "r1");
  r.r2 = detail::json_opt(j, "r2");
  r.best_epoch = j.value("best_epoch", std::size_t{0});
  r.best_val_loss = detail::json_opt(j, "best_val_loss");
  r.epochs_run = j.value("epochs_run", std::size_t{0});
  r.steps = j.value("steps", std::size_t{0});
  r.diverged = j.value("diverged", false);
  r.abort_reason = j.value("abort_reason", "");
  r.degenerate = j.value("degenerate", false);
  return r;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline constexpr const char* kCurvesHeader = "epoch,phase,optimizer,lr,train_loss,val_loss,val_roc_auc,val_pr_auc,val_accuracy";

inline std::string curves_csv(const std::vector<EpochRecord>& curves) {
  std::string s = std::string(kCurvesHeader) + "\n";
  for (const auto& r : curves) {
    s += std::to_string(r.epoch) + "," + std::to_string(r.phase) + "," + to_string(r.optimizer) + "," +
         format_double(r.lr) + "," + format_double(r.train_loss) + "," + format_double(r.val_loss) + "," +
         format_optional(r.val_roc_auc) + "," + format_optional(r.val_pr_auc) + "," + format_optional(r.val_accuracy) +
         "\n";
  }
  return s;
}

inline constexpr const char* kSweepHeader =
    "variant,r1,r2,remaining_params,closed_form_params,roc_auc,pr_auc,accuracy,loss,degenerate,seed";

inline std::string sweep_row(const RunReport& r) {
  return to_string(r.variant) + "," + format_optional(r.r1) + "," + format_optional(r.r2) + "," +
         std::to_string(r.params_remaining) + "," +
         (r.params_closed_form ? std::to_string(*r.params_closed_form) : std::string()) + "," +
         format_optional(r.metrics.roc_auc) + "," + format_optional(r.metrics.pr_auc) + "," +
         format_optional(r.metrics.accuracy) + "," + format_double(r.metrics.loss) + "," +
         (r.degenerate ? "1" : "0") + "," + std::to_string(r.seed) + "\n";
}

/// Mean and standard error per metric over a set of runs. Metrics missing
/// from some runs are an error (inconsistent metric sets).
inline std::map<std::string, Aggregate> aggregate_runs(const std::vector<RunReport>& runs) {
  if (runs.empty()) throw ContractViolation("aggregate_runs: no runs");
  std::map<std::string, Aggregate> out;
  auto collect = [&](const char* name, auto getter) {
    std::vector<double> vals;
    for (const auto& r : runs)
      if (auto v = getter(r)) vals.push_back(*v);
    if (vals.empty()) return;
    if (vals.size() != runs.size())
      throw ContractViolation(std::string("aggregate_runs: metric '") + name + "' missing from some runs");
    out[name] = aggregate(vals);
  };
  collect("roc_auc", [](const RunReport& r) { return r.metrics.roc_auc; });
  collect("pr_auc", [](const RunReport& r) { return r.metrics.pr_auc; });
  collect("accuracy", [](const RunReport& r) { return r.metrics.accuracy; });
  collect("loss", [](const RunReport& r) { return std::optional<double>(r.metrics.loss); });
  return out;
}

}  // namespace maxplus
