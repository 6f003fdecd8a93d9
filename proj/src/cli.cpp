#include "sketchalign/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "sketchalign/json_io.hpp"
#include "sketchalign/metrics.hpp"
#include "sketchalign/svg.hpp"

namespace sketchalign {

namespace {

PolicyConfig policy_config_from(const KeyValueConfig& kv, uint64_t seed) {
  PolicyConfig c;
  c.embed_dim = kv.get("model_embed_dim", c.embed_dim);
  c.enc_layers = kv.get("model_enc_layers", c.enc_layers);
  c.dec_layers = kv.get("model_dec_layers", c.dec_layers);
  c.heads = kv.get("model_heads", c.heads);
  c.ff_dim = kv.get("model_ff_dim", c.ff_dim);
  c.max_seq_len = kv.get("model_max_seq_len", c.max_seq_len);
  c.coord_bins = kv.get("model_coord_bins", c.coord_bins);
  c.seed = seed;
  return c;
}

StepLogger make_logger(const std::string& log_path, const std::string& stage) {
  auto file = log_path.empty() ? nullptr : std::make_shared<std::ofstream>(log_path);
  if (file && !*file) throw std::runtime_error("cannot write " + log_path);
  return [file, stage](const StepLog& s) {
    if (file) {
      nlohmann::ordered_json j;
      j["step"] = s.step;
      j["loss"] = s.loss;
      j["mean_reward"] = s.mean_reward;
      j["fc_rate"] = s.fc_rate;
      j["kl"] = s.kl;
      *file << j.dump() << '\n';
      file->flush();
    }
    if (s.step % 50 == 0) {
      std::cerr << stage << " step " << s.step << " loss " << s.loss << " fc_rate "
                << s.fc_rate << '\n';
    }
  };
}

struct SketchInput {
  Sketch sketch;
  ConstraintSequence constraints;
};

SketchInput load_sketch_input(const std::string& sketch_path,
                              const std::string& constraints_path) {
  SketchInput input;
  Json j = Json::parse(read_file(sketch_path));
  input.sketch = sketch_from_json(j);
  if (!constraints_path.empty()) {
    input.constraints = constraints_from_json(Json::parse(read_file(constraints_path)));
  } else if (j.contains("constraints")) {
    input.constraints = constraints_from_json(j.at("constraints"));
  }
  if (auto err = validate_sequence(input.sketch, input.constraints)) {
    throw std::runtime_error(std::string("invalid constraint: ") + to_string(*err));
  }
  return input;
}

int run_datagen(const std::string& templates_csv, int count, double drop_prob, double target_fc,
                int max_prims, uint64_t seed, int threads, const std::string& out_path,
                const std::string& stats_path) {
  DatagenOptions options;
  if (!templates_csv.empty() && templates_csv != "all") {
    options.templates.clear();
    std::stringstream ss(templates_csv);
    std::string name;
    while (std::getline(ss, name, ',')) {
      auto t = template_from_string(name);
      if (!t) throw CLI::ValidationError("--templates", "unknown template " + name);
      options.templates.push_back(*t);
    }
  }
  options.count = count;
  options.drop_prob = drop_prob;
  if (target_fc > 0.0) options.target_fc = target_fc;
  options.max_primitives = max_prims;
  options.seed = seed;
  options.threads = threads;
  std::vector<DatasetRecord> records = generate_dataset(options);
  save_dataset(out_path, records);
  if (!stats_path.empty()) {
    write_file(stats_path, dataset_stats(records).dump(2) + "\n");
  }
  std::cerr << "wrote " << records.size() << " records to " << out_path << '\n';
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"desk-scale constraint-generation alignment around a 2D sketch solver"};
  app.require_subcommand(1);

  std::string config_path, data_path, init_path, out_path, log_path, report_path;
  std::string sketch_path, constraints_path, model_path, split = "test", algo;
  std::string templates = "all", stats_path;
  int count = 1000, max_prims = kMaxPrimitives, k = 8;
  double drop_prob = 0.15, target_fc = -1.0, temperature = 1.0, top_p = 1.0;
  uint64_t seed = 0;
  int threads = 2;
  bool overlay = false;

  auto* datagen_cmd = app.add_subcommand("datagen", "generate a synthetic sketch corpus");
  datagen_cmd->add_option("--templates", templates, "comma-separated template names or 'all'");
  datagen_cmd->add_option("--count", count, "records to keep after dedup");
  datagen_cmd->add_option("--drop-prob", drop_prob, "per-constraint drop probability");
  datagen_cmd->add_option("--target-fc", target_fc, "calibrate drop-prob to this FC fraction");
  datagen_cmd->add_option("--max-prims", max_prims, "skip templates above this primitive count");
  datagen_cmd->add_option("--seed", seed);
  datagen_cmd->add_option("--threads", threads);
  datagen_cmd->add_option("--out", out_path)->required();
  datagen_cmd->add_option("--stats", stats_path, "also write a corpus statistics report");

  auto add_train_common = [&](CLI::App* cmd) {
    cmd->add_option("--data", data_path)->required();
    cmd->add_option("--config", config_path, "key=value training configuration");
    cmd->add_option("--out", out_path)->required();
    cmd->add_option("--log", log_path, "JSONL step log");
  };
  auto* pretrain_cmd = app.add_subcommand("pretrain", "next-token pretraining of the base model");
  add_train_common(pretrain_cmd);
  auto* sft_cmd = app.add_subcommand("sft", "supervised fine-tuning on solver-verified data");
  add_train_common(sft_cmd);
  sft_cmd->add_option("--init", init_path)->required();
  auto* align_cmd = app.add_subcommand("align", "post-training from solver feedback");
  align_cmd->add_option("--algo", algo, "exit | dpo | remax | rloo | grpo")->required();
  add_train_common(align_cmd);
  align_cmd->add_option("--init", init_path)->required();

  auto* eval_cmd = app.add_subcommand("eval", "sample, solve, and report metrics");
  eval_cmd->add_option("--model", model_path)->required();
  eval_cmd->add_option("--data", data_path)->required();
  eval_cmd->add_option("--split", split);
  eval_cmd->add_option("--k", k);
  eval_cmd->add_option("--temperature", temperature);
  eval_cmd->add_option("--top-p", top_p);
  eval_cmd->add_option("--seed", seed);
  eval_cmd->add_option("--threads", threads);
  eval_cmd->add_option("--report", report_path)->required();

  auto* solve_cmd = app.add_subcommand("solve", "classify one sketch + constraints");
  solve_cmd->add_option("--sketch", sketch_path)->required();
  solve_cmd->add_option("--constraints", constraints_path);
  solve_cmd->add_option("--report", report_path)->required();

  auto* render_cmd = app.add_subcommand("render", "solve and render to SVG");
  render_cmd->add_option("--sketch", sketch_path)->required();
  render_cmd->add_option("--constraints", constraints_path);
  render_cmd->add_option("--out", out_path)->required();
  render_cmd->add_flag("--overlay", overlay, "overlay the input geometry in red");

  auto* vocab_cmd = app.add_subcommand("vocab", "dump the token vocabulary");
  vocab_cmd->add_option("--out", out_path)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(datagen_cmd)) {
      return run_datagen(templates, count, drop_prob, target_fc, max_prims, seed, threads,
                         out_path, stats_path);
    }

    if (app.got_subcommand(vocab_cmd)) {
      write_file(out_path, vocab::dump().dump(2) + "\n");
      return 0;
    }

    if (app.got_subcommand(solve_cmd) || app.got_subcommand(render_cmd)) {
      SketchInput input = load_sketch_input(sketch_path, constraints_path);
      SolveReport report = solve(input.sketch, input.constraints);
      if (app.got_subcommand(solve_cmd)) {
        write_file(report_path, report_to_json(report).dump(2) + "\n");
      } else {
        const Sketch& drawn = report.solvable() ? *report.solved_sketch : input.sketch;
        write_file(out_path, render_svg(drawn, report.status.per_entity_fc,
                                        overlay ? &input.sketch : nullptr));
      }
      return 0;
    }

    KeyValueConfig kv =
        config_path.empty() ? KeyValueConfig() : KeyValueConfig::from_file(config_path);
    TrainConfig cfg = TrainConfig::from_config(kv);

    if (app.got_subcommand(eval_cmd)) {
      PolicyModel model = load_checkpoint(model_path);
      std::vector<DatasetRecord> records = load_dataset(data_path);
      EvalOptions options;
      options.k = k;
      options.temperature = temperature;
      options.top_p = top_p;
      options.seed = seed;
      options.threads = threads;
      MetricsTable metrics = eval_model(model, select_split(records, split), options);
      write_file(report_path, metrics_to_json(metrics).dump(2) + "\n");
      return 0;
    }

    std::vector<DatasetRecord> records = load_dataset(data_path);
    auto train_split = select_split(records, "train");
    PolicyModel model = [&] {
      if (app.got_subcommand(pretrain_cmd)) {
        return PolicyModel::init(policy_config_from(kv, cfg.seed));
      }
      return load_checkpoint(init_path);
    }();

    if (app.got_subcommand(pretrain_cmd)) {
      model = train_ce(std::move(model), filter_pretrainable(train_split), cfg.pretrain_lr,
                       cfg.pretrain_epochs, cfg.pretrain_batch, cfg.threads, cfg.seed,
                       make_logger(log_path, "pretrain"));
    } else if (app.got_subcommand(sft_cmd)) {
      model = train_ce(std::move(model), filter_sft(train_split), cfg.sft_lr, cfg.sft_epochs,
                       cfg.sft_batch, cfg.threads, cfg.seed, make_logger(log_path, "sft"));
    } else {
      if (algo == "exit") {
        model = train_exit(std::move(model), train_split, cfg, make_logger(log_path, "exit"));
      } else if (algo == "dpo") {
        model = train_dpo(std::move(model), train_split, cfg, make_logger(log_path, "dpo"));
      } else if (auto rl = rl_algo_from_string(algo)) {
        model = train_rl(*rl, std::move(model), train_split, cfg, make_logger(log_path, algo));
      } else {
        std::cerr << "unknown algo: " << algo << '\n';
        return 2;
      }
    }
    save_checkpoint(out_path, model);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace sketchalign
