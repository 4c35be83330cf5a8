#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mixformer/check_suites.hpp"
#include "mixformer/complexity.hpp"
#include "mixformer/config_json.hpp"
#include "mixformer/serialize.hpp"
#include "mixformer/train.hpp"

namespace {

using namespace mixformer;

uint64_t env_seed_or(uint64_t fallback) {
  if (const char* env = std::getenv("MIXFORMER_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw std::runtime_error("MIXFORMER_SEED is not an integer: '" + std::string(env) + "'");
    }
  }
  return fallback;
}

ModelConfig resolve_model(const std::string& spec) {
  // variant name or path to a JSON config
  if (spec.find('.') != std::string::npos || spec.find('/') != std::string::npos) {
    return model_config_from_file(spec);
  }
  return ModelConfig::variant(spec);
}

int cmd_analyze(const std::string& variant, std::vector<int64_t> resolution, bool as_json) {
  Model model(resolve_model(variant), env_seed_or(0));
  ComplexityReport report = model_report(model, resolution[0], resolution[1]);
  std::cout << (as_json ? report.to_json() : report.to_text()) << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& scope, double tol, std::optional<uint64_t> seed_opt) {
  uint64_t seed = seed_opt ? *seed_opt : env_seed_or(0);
  const double eps = 1e-5;
  std::vector<SuiteResult> results;
  if (scope == "op") {
    results = gradcheck_ops(seed, tol, eps);
  } else if (scope == "block") {
    results = gradcheck_blocks(seed, tol, eps, /*max_elements_per_tensor=*/24);
  } else if (scope == "model") {
    results = gradcheck_model(seed, tol, eps);
  } else {
    throw std::runtime_error("unknown gradcheck scope '" + scope + "' (op|block|model)");
  }
  for (const SuiteResult& r : results) {
    double worst = std::max(r.report.max_param_rel_error, r.report.max_input_rel_error);
    std::cout << (r.report.pass ? "pass " : "FAIL ") << r.name << "  max rel err " << worst
              << "\n";
  }
  bool ok = suites_pass(results);
  std::cout << (ok ? "PASS" : "FAIL") << ": " << results.size() << " targets, max rel err "
            << suites_max_rel_error(results) << " (tol " << tol << ", eps " << eps << ")\n";
  return ok ? 0 : 1;
}

int cmd_forward(const std::string& weights, const std::string& input, const std::string& output,
                const std::string& variant) {
  Model model(resolve_model(variant), 0);
  load_model_weights(model, weights);
  Tensor x = load_single_tensor(input);
  if (x.rank() != 4 || x.dim(1) != 3) {
    throw std::runtime_error("input tensor must be (N,3,H,W), got " + shape_str(x.shape()));
  }
  ForwardCtx ctx = ForwardCtx::eval();
  Var logits = model.classify(Var(x), ctx);
  save_tensor(output, "logits", logits.value());
  std::cout << "wrote logits " << shape_str(logits.value().shape()) << " to " << output << "\n";
  return 0;
}

int cmd_train_toy(const std::string& config_path, const std::string& save_weights) {
  ToyRunConfig cfg;
  if (!config_path.empty()) cfg = toy_run_config_from_file(config_path);
  cfg.train.seed = env_seed_or(cfg.train.seed);
  cfg.dataset.seed = cfg.train.seed;
  SyntheticDataset data = SyntheticDataset::generate(cfg.dataset);
  TrainResult result = train_toy(cfg.model, cfg.train, data, &std::cout);
  std::cout << "initial_loss " << result.metrics.initial_loss << "\n"
            << "final_loss " << result.metrics.loss_curve.back() << "\n"
            << "train_accuracy " << result.metrics.final_train_accuracy << "\n";
  if (!save_weights.empty()) {
    save_model_weights(result.model, save_weights);
    std::cout << "saved weights to " << save_weights << "\n";
  }
  return 0;
}

int run_ablate_cell(const std::string& mode, const std::string& interactions) {
  ModelConfig cfg = ModelConfig::variant("micro");
  cfg.name = mode + "+" + interactions;
  cfg.mode = mode == "successive" ? BlockMode::Successive : BlockMode::Parallel;
  cfg.channel_interaction = interactions == "channel" || interactions == "both";
  cfg.spatial_interaction = interactions == "spatial" || interactions == "both";
  Model model(cfg, env_seed_or(0));
  ComplexityReport report = model_report(model, 56, 56);

  Rng rng(env_seed_or(0) ^ 0xab1a7eULL);
  ForwardCtx ctx = ForwardCtx::eval();
  Var logits = model.classify(Var(rng.normal_tensor({1, 3, 56, 56}, 0.0, 1.0)), ctx);
  bool finite = logits.value().all_finite();
  std::cout << mode << "\t" << interactions << "\tparams " << report.total_params()
            << "\tflops " << report.total_flops() << "\tsmoke-forward "
            << (finite ? "ok" : "NON-FINITE") << "\n";
  return finite ? 0 : 1;
}

int cmd_ablate(const std::string& mode, const std::string& interactions) {
  std::vector<std::string> modes =
      mode.empty() ? std::vector<std::string>{"parallel", "successive"}
                   : std::vector<std::string>{mode};
  std::vector<std::string> inters =
      interactions.empty() ? std::vector<std::string>{"none", "channel", "spatial", "both"}
                           : std::vector<std::string>{interactions};
  int rc = 0;
  for (const std::string& m : modes) {
    for (const std::string& i : inters) rc |= run_ablate_cell(m, i);
  }
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MixFormer backbone toolkit: complexity analysis, gradient checks, "
               "forward runs and toy training"};
  app.require_subcommand(1);

  auto* analyze = app.add_subcommand("analyze", "parameter/FLOP report for a model variant");
  std::string an_variant = "b1";
  std::vector<int64_t> an_res = {224, 224};
  bool an_json = false;
  analyze->add_option("--variant", an_variant, "b0..b6, micro, or a JSON config path");
  analyze->add_option("--resolution", an_res, "input H W")->expected(2);
  analyze->add_flag("--json", an_json, "emit machine-readable JSON");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string gc_scope = "op";
  double gc_tol = 1e-4;
  std::optional<uint64_t> gc_seed;
  gradcheck->add_option("--scope", gc_scope, "op | block | model");
  gradcheck->add_option("--tol", gc_tol, "max relative error");
  gradcheck->add_option("--seed", gc_seed, "rng seed (falls back to MIXFORMER_SEED)");

  auto* forward = app.add_subcommand("forward", "run a saved model on a tensor file");
  std::string fw_weights, fw_input, fw_output, fw_variant = "micro";
  forward->add_option("--weights", fw_weights, "weight file")->required();
  forward->add_option("--input", fw_input, "input tensor file (N,3,H,W)")->required();
  forward->add_option("--output", fw_output, "output logits file")->required();
  forward->add_option("--variant", fw_variant, "model variant or JSON config path");

  auto* train = app.add_subcommand("train-toy", "train on the synthetic dataset");
  std::string tr_config, tr_save;
  train->add_option("--config", tr_config, "JSON run config");
  train->add_option("--save-weights", tr_save, "write trained weights here");

  auto* ablate = app.add_subcommand("ablate", "mode/interaction configuration grid");
  std::string ab_mode, ab_inter;
  ablate->add_option("--mode", ab_mode, "parallel | successive (default: both)")
      ->check(CLI::IsMember({"parallel", "successive"}));
  ablate->add_option("--interactions", ab_inter, "none | channel | spatial | both (default: all)")
      ->check(CLI::IsMember({"none", "channel", "spatial", "both"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 2;
  }

  try {
    if (*analyze) return cmd_analyze(an_variant, an_res, an_json);
    if (*gradcheck) return cmd_gradcheck(gc_scope, gc_tol, gc_seed);
    if (*forward) return cmd_forward(fw_weights, fw_input, fw_output, fw_variant);
    if (*train) return cmd_train_toy(tr_config, tr_save);
    if (*ablate) return cmd_ablate(ab_mode, ab_inter);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
