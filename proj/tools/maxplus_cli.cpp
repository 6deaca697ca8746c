#include <iostream>

#include "CLI11.hpp"
#include "maxplus/maxplus.hpp"

using namespace maxplus;

namespace {

const std::vector<std::string> kHeads = {"relu", "maxout", "zhang", "dense-morph", "sparse-morph"};
const std::vector<std::string> kPresets = {"synthetic", "mtat-like", "cifar10"};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid linear / max-plus classification heads: training, pruning and checks."};
  app.require_subcommand(1);

  TrainCommand train_c;
  std::uint64_t train_seed = 0;
  auto* train = app.add_subcommand("train", "Train one head (or one per --seeds entry) into a run directory");
  train->add_option("--config", train_c.config_path, "JSON run config")->check(CLI::ExistingFile);
  train->add_option("--preset", train_c.preset, "Base preset")->check(CLI::IsMember(kPresets));
  train->add_option("--head", train_c.head, "Head variant")->check(CLI::IsMember(kHeads));
  auto* seed_opt = train->add_option("--seed", train_seed, "Model seed");
  train->add_option("--seeds", train_c.seeds, "Train one run per seed into <out>/<head>-seed<k>");
  train->add_option("--set", train_c.overrides, "Override a config field: path.to.field=value");
  train->add_option("--out", train_c.out, "Run directory")->required();
  train->add_flag("--force", train_c.force, "Replace an existing run directory");
  train->add_option("--jobs", train_c.jobs, "Worker threads for --seeds")->check(CLI::PositiveNumber);
  train->add_flag("-v,--verbose", train_c.verbose, "Log every epoch");

  EvaluateCommand eval_c;
  auto* eval = app.add_subcommand("evaluate", "Evaluate a trained run and print its RunReport JSON");
  eval->add_option("--run", eval_c.run, "Run directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--split", eval_c.split, "test, val or train")->check(CLI::IsMember({"test", "val", "train"}));
  eval->add_option("--out", eval_c.out, "Also write the report here");

  PruneSweepCommand prune_c;
  auto* prune = app.add_subcommand("prune-sweep", "One-shot L1 pruning over an (r1, r2) grid");
  prune->add_option("--run", prune_c.run, "Run directory with checkpoint.bin")->required()->check(CLI::ExistingDirectory);
  prune->add_option("--r1", prune_c.r1, "Ratios for the non-final layers")->expected(1, -1);
  prune->add_option("--r2", prune_c.r2, "Ratios for the final linear layer")->expected(1, -1);
  prune->add_option("--out", prune_c.out, "Sweep CSV (default <run>/sweep.csv)");
  prune->add_flag("--force", prune_c.force, "Replace an existing sweep CSV");
  prune->add_option("--jobs", prune_c.jobs, "Worker threads")->check(CLI::PositiveNumber);

  EquivalenceOptions equiv_c;
  std::vector<std::size_t> equiv_dims;
  auto* equiv = app.add_subcommand("equiv-check", "Randomized check of the ReLU and maxout max-plus rewrites");
  equiv->add_option("--trials", equiv_c.trials, "Random layers per rewrite");
  equiv->add_option("--dims", equiv_dims, "Upper bounds: inputs outputs pieces")->expected(3);
  equiv->add_option("--seed", equiv_c.seed, "Seed");
  equiv->add_option("--tolerance", equiv_c.tolerance, "Max entrywise deviation");
  equiv->add_flag("--corrupt", equiv_c.corrupt, "Perturb the converted weights (negative control)")->group("");

  GradcheckCommand grad_c;
  std::string grad_head;
  std::vector<std::size_t> grad_dims;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of backward() on a small head");
  grad->add_option("--head", grad_head, "Head variant (default: all)")->check(CLI::IsMember(kHeads));
  grad->add_option("--dims", grad_dims, "d_in d_hidden d_out")->expected(3);
  grad->add_option("--seed", grad_c.seed, "Seed");

  GenDataCommand gen_c;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset or a binary fixture");
  gen->add_option("--kind", gen_c.kind, "max-affine (CSV), idx or cifar10")
      ->check(CLI::IsMember({"max-affine", "idx", "cifar10"}));
  gen->add_option("--out", gen_c.out, "Output path (prefix for idx)")->required();
  gen->add_option("--n", gen_c.n, "Samples / records");
  gen->add_option("--d", gen_c.max_affine.d, "Feature dimension (max-affine)");
  gen->add_option("--k", gen_c.max_affine.k_pieces, "Affine pieces per tag (max-affine)");
  gen->add_option("--tags", gen_c.max_affine.tags, "Tags (max-affine)");
  gen->add_option("--seed", gen_c.seed, "Seed");
  gen->add_flag("--force", gen_c.force, "Overwrite existing files");

  ReportCommand report_c;
  auto* report = app.add_subcommand("report", "Aggregate runs and sweeps into markdown tables and convergence.csv");
  report->add_option("inputs", report_c.inputs, "Run directories, parents of run directories, or sweep CSVs")->required();
  report->add_option("--out", report_c.out, "Directory for report.md and convergence.csv");
  report->add_option("--epochs", report_c.max_epoch, "Last epoch in convergence.csv");
  report->add_flag("--force", report_c.force, "Overwrite an existing report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  return run_guarded(
      [&]() -> int {
        if (train->parsed()) {
          if (*seed_opt) train_c.seed = train_seed;
          return cmd_train(train_c, std::cout);
        }
        if (eval->parsed()) return cmd_evaluate(eval_c, std::cout);
        if (prune->parsed()) return cmd_prune_sweep(prune_c, std::cout);
        if (equiv->parsed()) {
          if (!equiv_dims.empty()) {
            equiv_c.max_in = equiv_dims[0];
            equiv_c.max_out = equiv_dims[1];
            equiv_c.max_pool = equiv_dims[2];
          }
          return cmd_equiv_check(equiv_c, std::cout);
        }
        if (grad->parsed()) {
          if (!grad_head.empty()) grad_c.heads = {parse_variant(grad_head)};
          if (!grad_dims.empty()) {
            grad_c.d_in = grad_dims[0];
            grad_c.d_hidden = grad_dims[1];
            grad_c.d_out = grad_dims[2];
          }
          return cmd_gradcheck(grad_c, std::cout);
        }
        if (gen->parsed()) return cmd_gen_data(gen_c, std::cout);
        return cmd_report(report_c, std::cout);
      },
      std::cerr);
}
