#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "zodiac/checkpoint.hpp"
#include "zodiac/config_io.hpp"
#include "zodiac/errors.hpp"
#include "zodiac/gradcheck.hpp"
#include "zodiac/presets.hpp"
#include "zodiac/train.hpp"

namespace zodiac::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// One optional per flag; each maps onto exactly one config field.
struct Overrides {
  std::optional<std::uint64_t> seed;        // train.seed
  std::optional<std::uint64_t> model_seed;  // model.seed
  std::optional<std::uint64_t> task_seed;   // task.seed
  std::optional<std::string> attention;     // model.attention_kind
  std::optional<std::string> gate;          // model.attention.gate
  std::optional<double> zeta;               // model.attention.zoneout
  std::optional<double> zodiac_dropout;     // model.attention.zodiac_dropout
  std::optional<double> system_dropout;     // model.attention.system_dropout
  std::optional<bool> gelu_pre_linear, gelu_on_qk, gelu_post_scale, gelu_on_v, gelu_piv_map;
  std::optional<std::string> gelu_form;     // model.attention.gelu_form
  std::optional<bool> piv;                  // model.attention.piv_enabled
  std::optional<std::string> ffn;           // model.ffn_activation
  std::optional<std::size_t> beam;          // train.eval_beam_size
  std::optional<std::size_t> max_steps;     // train.max_steps
  std::optional<std::size_t> max_epochs;    // train.max_epochs
  std::optional<std::size_t> batch_size;    // train.batch_size
  std::optional<double> lr;                 // train.base_lr
  std::optional<double> target_accuracy;    // train.target_accuracy
  std::optional<std::size_t> checkpoint_every;  // train.checkpoint_every
  std::optional<std::string> task;          // task.kind
};

void add_override_flags(CLI::App* app, Overrides& o) {
  app->add_option("--seed", o.seed, "Training seed (shuffling, dropout)");
  app->add_option("--model-seed", o.model_seed, "Parameter initialization seed");
  app->add_option("--task-seed", o.task_seed, "Dataset generation seed");
  app->add_option("--attention", o.attention, "baseline | zodiac")->check(CLI::IsMember({"baseline", "zodiac"}));
  app->add_option("--gate", o.gate, "sigmoid | tanh | none")->check(CLI::IsMember({"sigmoid", "tanh", "none"}));
  app->add_option("--zeta", o.zeta, "Zoneout factor");
  app->add_option("--zodiac-dropout", o.zodiac_dropout, "Dropout rate inside RCA");
  app->add_option("--system-dropout", o.system_dropout, "Residual-path dropout rate");
  app->add_option("--gelu-pre-linear", o.gelu_pre_linear, "GELU on attention inputs (true/false)");
  app->add_option("--gelu-on-qk", o.gelu_on_qk, "GELU on Q1 and K^T");
  app->add_option("--gelu-post-scale", o.gelu_post_scale, "GELU on the scaled scores");
  app->add_option("--gelu-on-v", o.gelu_on_v, "GELU on V in RCA");
  app->add_option("--gelu-piv-map", o.gelu_piv_map, "GELU inside the PIV map");
  app->add_option("--gelu-form", o.gelu_form, "exact | approx")->check(CLI::IsMember({"exact", "approx"}));
  app->add_option("--piv", o.piv, "Enable the PIV branch");
  app->add_option("--ffn", o.ffn, "Feed-forward activation: gelu | relu")->check(CLI::IsMember({"gelu", "relu"}));
  app->add_option("--beam", o.beam, "Beam size for evaluation decoding");
  app->add_option("--max-steps", o.max_steps, "Optimizer step budget (0 = epochs only)");
  app->add_option("--max-epochs", o.max_epochs, "Epoch budget");
  app->add_option("--batch-size", o.batch_size, "Training batch size");
  app->add_option("--lr", o.lr, "Base learning rate");
  app->add_option("--target-accuracy", o.target_accuracy, "Stop once eval token accuracy reaches this");
  app->add_option("--checkpoint-every", o.checkpoint_every, "Checkpoint cadence in epochs (0 = off)");
  app->add_option("--task", o.task, "copy | reverse | sort")->check(CLI::IsMember({"copy", "reverse", "sort"}));
}

void apply(const Overrides& o, RunConfig& c) {
  auto& a = c.model.attention;
  if (o.seed) c.train.seed = *o.seed;
  if (o.model_seed) c.model.seed = *o.model_seed;
  if (o.task_seed) c.task.seed = *o.task_seed;
  if (o.attention) c.model.attention_kind = *o.attention == "zodiac" ? AttentionKind::zodiac : AttentionKind::baseline;
  if (o.gate) a.gate = *o.gate == "none" ? std::nullopt : parse_gate(*o.gate);
  if (o.zeta) a.zoneout = *o.zeta;
  if (o.zodiac_dropout) a.zodiac_dropout = *o.zodiac_dropout;
  if (o.system_dropout) a.system_dropout = *o.system_dropout;
  if (o.gelu_pre_linear) a.gelu.pre_linear = *o.gelu_pre_linear;
  if (o.gelu_on_qk) a.gelu.on_qk = *o.gelu_on_qk;
  if (o.gelu_post_scale) a.gelu.post_scale = *o.gelu_post_scale;
  if (o.gelu_on_v) a.gelu.on_v = *o.gelu_on_v;
  if (o.gelu_piv_map) a.gelu.piv_map = *o.gelu_piv_map;
  if (o.gelu_form) a.gelu_form = *o.gelu_form == "exact" ? GeluForm::exact : GeluForm::approx;
  if (o.piv) a.piv_enabled = *o.piv;
  if (o.ffn) c.model.ffn_activation = *o.ffn == "gelu" ? FfnActivation::gelu : FfnActivation::relu;
  if (o.beam) c.train.eval_beam_size = *o.beam;
  if (o.max_steps) c.train.max_steps = *o.max_steps;
  if (o.max_epochs) c.train.max_epochs = *o.max_epochs;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.lr) c.train.base_lr = *o.lr;
  if (o.target_accuracy) c.train.target_accuracy = *o.target_accuracy;
  if (o.checkpoint_every) c.train.checkpoint_every = *o.checkpoint_every;
  if (o.task) c.task.kind = *parse_task_kind(*o.task);
}

// Preset name, or a JSON file overlaid on the toy_copy preset.
RunConfig load_config(const std::string& name) {
  if (auto p = find_preset(name)) return *p;
  std::ifstream f(name);
  if (!f) throw ConfigError("--config", "'" + name + "' is neither a preset nor a readable file");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str(), toy_copy_config());
}

void validate(const RunConfig& c) {
  c.model.validate();
  c.task.validate();
  c.train.validate();
  if (c.task.vocab_size != c.model.vocab_size) throw ConfigError("task.vocab_size", "must equal model.vocab_size");
}

fs::path out_dir(const std::string& flag, const std::string& fallback_leaf) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return fs::path(env) / fallback_leaf;
  return fs::path("runs") / fallback_leaf;
}

json metrics_json(const Metrics& m) {
  return {{"token_accuracy", m.token_accuracy}, {"exact_match", m.exact_match}, {"cross_entropy", m.cross_entropy}};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw ContractError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

std::string with_commas(std::size_t v) {
  auto s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

json run_training(const RunConfig& cfg, const fs::path& dir, const std::string& resume, std::ostream& out) {
  fs::create_directories(dir);
  TrainOptions opts;
  opts.log_path = (dir / "metrics.tsv").string();
  opts.checkpoint_dir = cfg.train.checkpoint_every ? (dir / "checkpoints").string() : "";
  opts.resume_from = resume;
  opts.on_epoch = [&](const EpochRecord& r) { out << format_epoch_record(r) << '\n' << std::flush; };
  const auto res = train(cfg.model, cfg.task, cfg.train, opts);
  const auto ckpt = dir / "final.zdck";
  save_checkpoint(ckpt.string(), Checkpoint{cfg.model, res.params, cfg.train, cfg.task, res.state});
  json r{{"steps", res.state.step},
         {"epochs", res.state.next_epoch},
         {"reached_target", res.reached_target},
         {"metric_log", opts.log_path},
         {"checkpoint", ckpt.string()}};
  if (!res.state.log.empty()) {
    const auto& last = res.state.log.back();
    r["final"] = metrics_json(last.eval);
    r["final_train_loss"] = last.train_loss;
  }
  return r;
}

int cmd_params(std::size_t d_model, std::size_t heads, const std::string& layers, bool no_bias, std::ostream& out) {
  const auto x = layers.find('x');
  std::size_t enc = 0, dec = 0;
  try {
    if (x == std::string::npos) throw std::invalid_argument("");
    enc = std::stoul(layers.substr(0, x));
    dec = std::stoul(layers.substr(x + 1));
  } catch (const std::exception&) {
    throw ConfigError("--layers", "expected <encoders>x<decoders>, e.g. 6x6");
  }
  ModelConfig m;
  m.d_model = d_model;
  m.heads = heads;
  m.n_encoder_layers = enc;
  m.n_decoder_layers = dec;
  m.d_ff = 4 * d_model;
  m.sync_attention();
  m.attention.use_bias = !no_bias;
  m.validate();
  const auto extra = extra_param_count(m.attention, enc, dec);
  m.attention_kind = AttentionKind::baseline;
  const auto base = param_count(m);
  m.attention_kind = AttentionKind::zodiac;
  const auto zod = param_count(m);
  out << "per-instance extra: " << with_commas(extra.per_instance) << '\n'
      << "zmha instances: " << extra.instances << '\n'
      << "stack total: " << with_commas(extra.total) << '\n'
      << "baseline model: " << with_commas(base) << '\n'
      << "zodiac model: " << with_commas(zod) << '\n'
      << "measured difference: " << with_commas(zod - base) << (zod - base == extra.total ? " (matches)" : " (MISMATCH)")
      << '\n';
  return zod - base == extra.total ? kOk : kFailed;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ZoDIAC attention: toy-scale training, evaluation and verification"};
  app.name("zodiac");
  app.require_subcommand(1);

  std::string config = "toy_copy";
  std::string out_flag;
  Overrides ov;

  auto* train_cmd = app.add_subcommand("train", "Train on a synthetic task");
  std::string resume;
  train_cmd->add_option("--config", config, "Preset name or JSON file");
  train_cmd->add_option("--out", out_flag, "Output directory");
  train_cmd->add_option("--resume", resume, "Resume from a checkpoint written by train");
  add_override_flags(train_cmd, ov);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on its task's eval split");
  std::string ckpt_path;
  std::size_t eval_beam = 1;
  eval_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  eval_cmd->add_option("--beam", eval_beam, "Beam size (1 = greedy)");
  eval_cmd->add_option("--out", out_flag, "Output directory");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  std::uint64_t grad_seed = 0;
  std::string corrupt;
  grad_cmd->add_option("--seed", grad_seed, "Seed for inputs and parameters");
  grad_cmd->add_option("--corrupt", corrupt, "Scale one block's analytic gradient by 1.01 (op/block)");
  Overrides grad_ov;
  grad_cmd->add_option("--attention", grad_ov.attention, "baseline | zodiac")->check(CLI::IsMember({"baseline", "zodiac"}));
  grad_cmd->add_option("--gate", grad_ov.gate, "sigmoid | tanh | none")->check(CLI::IsMember({"sigmoid", "tanh", "none"}));
  grad_cmd->add_option("--zeta", grad_ov.zeta, "Zoneout factor");
  grad_cmd->add_option("--gelu-form", grad_ov.gelu_form, "exact | approx")->check(CLI::IsMember({"exact", "approx"}));

  auto* params_cmd = app.add_subcommand("params", "Parameter accounting for ZMHA versus MHA");
  std::size_t d_model = 512, heads = 8;
  std::string layers = "6x6";
  bool no_bias = false;
  params_cmd->add_option("--d-model", d_model, "Model width");
  params_cmd->add_option("--heads", heads, "Attention heads");
  params_cmd->add_option("--layers", layers, "<encoders>x<decoders>");
  params_cmd->add_flag("--no-bias", no_bias, "Projections without bias");

  auto* ablate_cmd = app.add_subcommand("ablate", "Run ablation presets end to end");
  std::string preset;
  ablate_cmd->add_option("--preset", preset, "Preset name, or 'table4-all' for every row")->required();
  ablate_cmd->add_option("--out", out_flag, "Output directory");
  add_override_flags(ablate_cmd, ov);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "zodiac: " << e.what() << '\n';
    return kConfigError;
  }

  try {
    if (*train_cmd) {
      auto cfg = load_config(config);
      apply(ov, cfg);
      validate(cfg);
      const auto dir = out_dir(out_flag, find_preset(config) ? config : fs::path(config).stem().string());
      json summary{{"command", "train"}, {"config", json::parse(to_json_string(cfg))}};
      summary["result"] = run_training(cfg, dir, resume, out);
      write_json(dir / "summary.json", summary);
      out << "summary: " << (dir / "summary.json").string() << '\n';
      return kOk;
    }
    if (*eval_cmd) {
      auto ck = load_checkpoint(ckpt_path);
      const TaskSpec task = ck.task.value_or(toy_copy_config().task);
      const auto data = gen_task(task);
      const auto m = evaluate(ck.params, ck.model, data.eval, eval_beam);
      char line[160];
      std::snprintf(line, sizeof line, "token_accuracy %.6f exact_match %.6f cross_entropy %.6f", m.token_accuracy,
                    m.exact_match, m.cross_entropy);
      out << line << '\n';
      if (!out_flag.empty() || std::getenv(kOutDirEnv)) {
        const auto dir = out_dir(out_flag, "eval");
        fs::create_directories(dir);
        write_json(dir / "summary.json", {{"command", "eval"},
                                          {"checkpoint", ckpt_path},
                                          {"beam", eval_beam},
                                          {"model", json::parse(to_json_string(ck.model))},
                                          {"task", json::parse(to_json_string(task))},
                                          {"metrics", metrics_json(m)}});
      }
      return kOk;
    }
    if (*grad_cmd) {
      auto cfg = gradcheck_model_config(AttentionKind::zodiac);
      RunConfig rc;
      rc.model = cfg;
      apply(grad_ov, rc);
      GradcheckOptions opts;
      if (!corrupt.empty()) opts.corrupt_block = corrupt;
      const auto report = gradcheck(rc.model, grad_seed, opts);
      bool ok = true;
      for (const auto& op : report.ops()) {
        const double tol = op == "model" ? 1e-4 : 1e-5;
        const double e = report.max_error(op);
        char line[128];
        std::snprintf(line, sizeof line, "%-12s max_rel_err %.3e  (tol %.0e) %s", op.c_str(), e, tol,
                      e < tol ? "ok" : "FAIL");
        out << line << '\n';
        ok = ok && e < tol;
      }
      for (const auto& b : report.blocks) {
        const double tol = b.op == "model" ? 1e-4 : 1e-5;
        if (b.rel_error >= tol) out << "  " << b.op << "/" << b.block << " rel_err " << b.rel_error << '\n';
      }
      return ok ? kOk : kFailed;
    }
    if (*params_cmd) return cmd_params(d_model, heads, layers, no_bias, out);
    if (*ablate_cmd) {
      std::vector<std::string> names;
      if (preset == "table4-all") {
        for (const auto& r : ablation_rows()) names.push_back(r.name);
      } else {
        if (!find_preset(preset)) throw ConfigError("--preset", "unknown preset '" + preset + "'");
        names.push_back(preset);
      }
      const auto root = out_dir(out_flag, "ablate");
      json runs = json::array();
      for (const auto& name : names) {
        auto cfg = *find_preset(name);
        apply(ov, cfg);
        validate(cfg);
        out << "== " << name << '\n';
        runs.push_back({{"preset", name},
                        {"config", json::parse(to_json_string(cfg))},
                        {"result", run_training(cfg, root / name, "", out)}});
      }
      fs::create_directories(root);
      write_json(root / "summary.json", {{"command", "ablate"}, {"runs", runs}});
      out << "summary: " << (root / "summary.json").string() << '\n';
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "zodiac: config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DivergenceError& e) {
    err << "zodiac: diverged at step " << e.step() << ": " << e.what() << '\n';
    return kDivergence;
  } catch (const ContractError& e) {
    err << "zodiac: contract violation: " << e.what() << '\n';
    return kContractViolation;
  } catch (const ShapeError& e) {
    err << "zodiac: contract violation: " << e.what() << '\n';
    return kContractViolation;
  } catch (const std::exception& e) {
    err << "zodiac: " << e.what() << '\n';
    return kFailed;
  }
  return kFailed;
}

}  // namespace zodiac::cli
