#include "vlpre/cli.hpp"

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vlpre/adam.hpp"
#include "vlpre/checkpoint.hpp"
#include "vlpre/eval.hpp"
#include "vlpre/finetune.hpp"
#include "vlpre/gradcheck.hpp"
#include "vlpre/model.hpp"
#include "vlpre/pipeline.hpp"
#include "vlpre/pretrain.hpp"
#include "vlpre/synth.hpp"
#include "vlpre/tokenizer.hpp"
#include "vlpre/trainer.hpp"
#include "vlpre/util.hpp"

namespace vlpre {
namespace cli {
namespace {

constexpr const char* kVersion = "0.1.0";

void write_manifest(const std::string& path, const std::string& command,
                    const std::vector<std::string>& argv, uint64_t seed,
                    const std::vector<std::string>& outputs) {
  nlohmann::json j{
      {"command", command},
      {"argv", argv},
      {"seed", seed},
      {"versions",
       {{"vlpre", kVersion}, {"checkpoint_format", "vlpre-checkpoint-v1"}}},
      {"outputs", outputs}};
  write_file_atomic(path, j.dump(2) + "\n");
}

std::vector<std::string> collect_argv(int argc, char** argv) {
  std::vector<std::string> out;
  for (int i = 0; i < argc; ++i) out.emplace_back(argv[i]);
  return out;
}

// stems in a plan's dataset registry resolve relative to the plan file
std::string resolve_against(const std::string& base_file, const std::string& stem) {
  std::filesystem::path p(stem);
  if (p.is_absolute()) return stem;
  return (std::filesystem::path(base_file).parent_path() / p).string();
}

struct GenArgs {
  std::string spec_path, out_stem, emit_spec;
  uint64_t seed = 42;
  bool pair = false;
  double shift = 1.0;
};

int cmd_gen(const GenArgs& a, const std::vector<std::string>& argv) {
  if (!a.emit_spec.empty()) {
    write_file_atomic(a.emit_spec, synth::WorldSpec::demo().to_json() + "\n");
    std::cout << "wrote starter world spec to " << a.emit_spec << "\n";
    return 0;
  }
  if (a.spec_path.empty() || a.out_stem.empty()) {
    std::cerr << "gen: --spec and --out are required (or use --emit-spec)\n";
    return 1;
  }
  auto spec = synth::WorldSpec::from_json(read_file(a.spec_path));
  std::vector<std::string> outputs;
  if (a.pair) {
    auto [ood, ind] = synth::make_domain_pair(spec, a.shift, a.seed);
    corpus::save(a.out_stem + "_ood", ood);
    corpus::save(a.out_stem + "_ind", ind);
    outputs = {a.out_stem + "_ood.jsonl", a.out_stem + "_ood.features.bin",
               a.out_stem + "_ind.jsonl", a.out_stem + "_ind.features.bin"};
    std::cout << "generated " << ood.records.size() << " out-of-domain and "
              << ind.records.size() << " in-domain records\n";
  } else {
    auto ds = synth::generate(spec, a.seed);
    corpus::save(a.out_stem, ds);
    outputs = {a.out_stem + ".jsonl", a.out_stem + ".features.bin"};
    std::cout << "generated " << ds.records.size() << " records\n";
  }
  write_manifest(a.out_stem + ".manifest.json", "gen", argv, a.seed, outputs);
  return 0;
}

struct PipelineArgs {
  std::string in_path, out_path, policy_path, report_path, vocab_path;
};

int cmd_pipeline_run(const PipelineArgs& a, const std::vector<std::string>& argv) {
  auto vocab = Vocab::from_file(a.vocab_path);
  pipeline::PipelinePolicy policy;
  if (!a.policy_path.empty())
    policy = pipeline::PipelinePolicy::from_json(read_file(a.policy_path));

  std::vector<CorpusRecord> records;
  for (const auto& line : split_lines(read_file(a.in_path)))
    if (!line.empty()) records.push_back(corpus::from_json_line(line));

  pipeline::ReferenceScorer scorer;
  auto result = pipeline::run(records, policy, vocab, scorer);

  std::string out_text;
  for (const auto& rec : result.records) out_text += corpus::to_json_line(rec) + "\n";
  write_file_atomic(a.out_path, out_text);
  std::vector<std::string> outputs{a.out_path};

  // metadata filtering leaves feature blobs untouched: carry them alongside
  const std::string suffix = ".jsonl";
  if (a.in_path.size() > suffix.size() &&
      a.in_path.compare(a.in_path.size() - suffix.size(), suffix.size(), suffix) == 0 &&
      a.out_path.size() > suffix.size() &&
      a.out_path.compare(a.out_path.size() - suffix.size(), suffix.size(), suffix) == 0) {
    auto in_blob = a.in_path.substr(0, a.in_path.size() - suffix.size()) + ".features.bin";
    auto out_blob = a.out_path.substr(0, a.out_path.size() - suffix.size()) + ".features.bin";
    if (file_exists(in_blob)) {
      write_file_atomic(out_blob, read_file(in_blob));
      outputs.push_back(out_blob);
    }
  }

  if (!a.report_path.empty()) {
    write_file_atomic(a.report_path, result.stats.to_json() + "\n");
    outputs.push_back(a.report_path);
  }
  write_manifest(a.out_path + ".manifest.json", "pipeline run", argv, 0, outputs);
  std::cout << "kept " << result.records.size() << " of " << records.size() << " records\n";
  return 0;
}

struct TrainArgs {
  std::string plan_path, out_dir, init_checkpoint, vocab_path, eval_pool_stem;
  int start_stage = 0;
  uint64_t seed = 42;
  bool seed_set = false;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  auto plan = trainer::StagePlan::from_json(read_file(a.plan_path));
  if (a.seed_set) plan.seed = a.seed;
  auto vocab = Vocab::from_file(a.vocab_path);

  std::map<std::string, Dataset> datasets;
  for (const auto& [name, stem] : plan.datasets)
    datasets.emplace(name, corpus::load(resolve_against(a.plan_path, stem)));

  EvalPool pool;
  const EvalPool* pool_ptr = nullptr;
  if (!a.eval_pool_stem.empty()) {
    auto pool_ds = corpus::load(a.eval_pool_stem);
    pool = build_pool(pool_ds, vocab, plan.model);
    pool_ptr = &pool;
  }

  auto result = trainer::run_plan(plan, datasets, vocab, a.out_dir, a.init_checkpoint,
                                  a.start_stage, pool_ptr);

  std::vector<std::string> outputs;
  for (const auto& s : result.stages) {
    std::cout << "stage " << s.name << " (" << s.kind << "): " << s.steps
              << " steps, total " << s.first_total << " -> " << s.last_total << "\n";
    if (s.has_zero_shot && !s.zero_shot.ks.empty())
      std::cout << "  zero-shot R@" << s.zero_shot.ks[0] << ": image "
                << s.zero_shot.image_retrieval[0] << ", sentence "
                << s.zero_shot.sentence_retrieval[0] << "\n";
    outputs.push_back(s.checkpoint_stem);
    outputs.push_back(s.metrics_path);
  }
  outputs.push_back(result.final_stem);
  std::cout << "final checkpoint: " << result.final_stem << "\n";
  write_manifest(a.out_dir + "/manifest.json", "train", argv, plan.seed, outputs);
  return 0;
}

struct EvalArgs {
  std::string pool_stem, checkpoint_stem, out_path, vocab_path;
  std::vector<int> ks{1, 5, 10};
};

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& argv) {
  auto cfg = ModelConfig::from_json(read_file(a.checkpoint_stem + ".config.json"));
  auto vocab = Vocab::from_file(a.vocab_path);
  auto ds = corpus::load(a.pool_stem);
  auto pool = build_pool(ds, vocab, cfg);
  auto report = trainer::zero_shot_eval_hook(a.checkpoint_stem, pool, a.ks);
  std::cout << report.to_table();
  if (!a.out_path.empty()) {
    write_file_atomic(a.out_path, report.to_json() + "\n");
    write_manifest(a.out_path + ".manifest.json", "eval", argv, 0, {a.out_path});
  }
  return 0;
}

struct TokenizeArgs {
  std::string vocab_path, text, in_path;
  int max_len = 44;
};

int cmd_tokenize(const TokenizeArgs& a) {
  if (a.text.empty() == a.in_path.empty()) {
    std::cerr << "tokenize: provide exactly one of --text or --in\n";
    return 1;
  }
  auto vocab = Vocab::from_file(a.vocab_path);
  std::vector<std::string> texts;
  if (!a.text.empty()) {
    texts.push_back(a.text);
  } else {
    for (const auto& line : split_lines(read_file(a.in_path)))
      if (!line.empty()) texts.push_back(line);
  }
  for (const auto& t : texts) {
    auto seq = tokenize(t, vocab, a.max_len);
    nlohmann::json tokens = nlohmann::json::array();
    for (int id : seq.token_ids) tokens.push_back(vocab.token(id));
    nlohmann::json j{{"text", t},
                     {"token_ids", seq.token_ids},
                     {"tokens", tokens},
                     {"real_length", seq.real_length()}};
    std::cout << j.dump() << "\n";
  }
  return 0;
}

struct GradcheckArgs {
  std::string config_path;
  uint64_t seed = 42;
  double eps = 0.0;  // 0 = per-suite defaults
};

// built-in vocabulary for the self-contained gradient check: the caption
// template words plus however many class tokens the config asks for
Vocab gradcheck_vocab(int num_classes) {
  std::vector<std::string> toks{
      "[PAD]", "[UNK]", "[CLS]",  "[SEP]",  "[MASK]", "a",     "an",    "the",   "photo",
      "picture", "image", "snapshot", "of",  "and",    "with",  "near",  "beside", "there",
      "is",    "small", "large",  "old",    "new",    "red",   "blue",  "green", "."};
  static const std::vector<std::string> demo = synth::WorldSpec::demo().class_names;
  for (int c = 0; c < num_classes; ++c)
    toks.push_back(c < static_cast<int>(demo.size()) ? demo[c]
                                                     : "token" + std::to_string(c));
  return Vocab::from_tokens(toks);
}

int cmd_gradcheck(const GradcheckArgs& a) {
  ModelConfig cfg;
  if (!a.config_path.empty()) {
    cfg = ModelConfig::from_json(read_file(a.config_path));
  } else {
    cfg.layers = 2;
    cfg.hidden = 16;
    cfg.intermediate = 32;
    cfg.heads = 2;
    cfg.max_seq_len = 16;
    cfg.max_text_len = 6;
    cfg.num_visual_tokens = 4;
    cfg.d_v = 8;
    cfg.num_classes = 5;
    cfg.vocab_size = 5;  // patched to the built-in vocab below
  }
  cfg.dropout = 0.0;  // finite differences need a deterministic forward
  auto vocab = gradcheck_vocab(cfg.num_classes);
  cfg.vocab_size = static_cast<int>(vocab.size());
  cfg.validate();

  synth::WorldSpec world;
  world.class_names.clear();
  for (int c = 0; c < cfg.num_classes; ++c)
    world.class_names.push_back(vocab.token(27 + c));  // class block starts after "."
  world.num_images = 4;
  world.rois_per_image = cfg.num_visual_tokens;
  world.d_v = cfg.d_v;
  auto ds = synth::generate(world, a.seed);

  Rng init_rng(a.seed);
  auto params = ModelParams::init(cfg, init_rng);

  // small, structurally diverse parameter subset: embeddings, both visual
  // projections, first-layer attention, and the ITM head
  std::vector<Tensor> inputs;
  for (const auto& [name, t] : params.named())
    if (name == "embeddings.ln.gain" || name == "visual.proj.w" || name == "visual.geom.w" ||
        name == "encoder.0.attn.q.w" || name == "heads.itm.w" || name == "heads.itm.b")
      inputs.push_back(t);

  std::cout << "gradcheck: " << cfg.layers << " layers, hidden " << cfg.hidden << ", "
            << cfg.num_visual_tokens << " visual tokens, d_v " << cfg.d_v << ", vocab "
            << vocab.size() << "\n";

  Rng batch_rng(a.seed + 1);
  auto batch = build_pair_batch(ds, {0, 1}, vocab, cfg, batch_rng);
  auto pretrain_loss = [&]() {
    Rng r(7);
    return pretrain_losses(batch, params, Mode::train, r, vocab).total;
  };
  // the reconstruction term is a sum over masked features, so its scale
  // demands a larger step to keep roundoff below the tolerance
  const double pre_eps = a.eps > 0 ? a.eps : 1e-4;
  auto pre = gradcheck::check(pretrain_loss, inputs, pre_eps);
  std::cout << "  pretrain total:  max rel err " << pre.max_rel_err << " over " << pre.checked
            << " entries (eps " << pre_eps << ")\n";

  // backward accumulates, so the second suite needs clean slates
  for (auto& t : params.trainable()) t.zero_grad();

  RetrievalGroup group;
  group.direction = Direction::image_to_text;
  group.anchor_record = 0;
  group.candidate_records = {1, 2, 0};
  group.positive_index = 2;
  FinetuneLossConfig fl;
  fl.binary = fl.ce = fl.triplet = true;
  auto finetune_loss = [&]() {
    Rng r(9);
    auto scores = group_scores(ds, group, params, vocab, Mode::train, r);
    auto b = binary_loss_from_scores(scores, group.positive_index);
    auto c = ce_loss_from_scores(scores, group.positive_index);
    auto t = triplet_loss_from_scores(scores, group.positive_index, fl.margin);
    return ops::add(ops::add(b, c), t);
  };
  const double ft_eps = a.eps > 0 ? a.eps : 1e-5;
  auto ft = gradcheck::check(finetune_loss, inputs, ft_eps);
  std::cout << "  finetune losses: max rel err " << ft.max_rel_err << " over " << ft.checked
            << " entries (eps " << ft_eps << ")\n";

  const double worst = std::max(pre.max_rel_err, ft.max_rel_err);
  const bool pass = worst < 1e-4;
  std::cout << "max relative error: " << worst << " (threshold 1e-4) "
            << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? 0 : 2;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"joint image-text pretraining workbench"};
  app.name("vlpre");
  auto argv_copy = collect_argv(argc, argv);

  GenArgs gen_args;
  auto* gen = app.add_subcommand("gen", "generate a synthetic image-text corpus");
  gen->add_option("--spec", gen_args.spec_path, "world spec JSON");
  gen->add_option("--out", gen_args.out_stem, "output stem (writes .jsonl + .features.bin)");
  gen->add_option("--seed", gen_args.seed, "generation seed")->capture_default_str();
  gen->add_flag("--pair", gen_args.pair, "emit an out-of-domain/in-domain pair");
  gen->add_option("--shift", gen_args.shift, "domain shift for --pair")->capture_default_str();
  gen->add_option("--emit-spec", gen_args.emit_spec, "write a starter spec and exit");

  PipelineArgs pipe_args;
  auto* pipe = app.add_subcommand("pipeline", "weak-supervision corpus cleaning");
  auto* pipe_run = pipe->add_subcommand("run", "filter, clean, score, and aggregate");
  pipe_run->add_option("--in", pipe_args.in_path, "input JSONL of raw records")->required();
  pipe_run->add_option("--out", pipe_args.out_path, "output JSONL")->required();
  pipe_run->add_option("--policy", pipe_args.policy_path, "policy JSON (defaults when omitted)");
  pipe_run->add_option("--report", pipe_args.report_path, "write stage-counter report JSON");
  pipe_run->add_option("--vocab", pipe_args.vocab_path, "vocabulary file")->required();
  pipe->require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "run a multi-stage training plan");
  train->add_option("--plan", train_args.plan_path, "stage plan JSON")->required();
  train->add_option("--out", train_args.out_dir, "output directory")->required();
  train->add_option("--vocab", train_args.vocab_path, "vocabulary file")->required();
  train->add_option("--init", train_args.init_checkpoint, "initial checkpoint stem");
  train->add_option("--start-stage", train_args.start_stage,
                    "resume from this stage index (expects earlier checkpoints in --out)");
  auto* train_seed =
      train->add_option("--seed", train_args.seed, "override the plan's seed");
  train->add_option("--eval-pool", train_args.eval_pool_stem,
                    "dataset stem for per-stage zero-shot retrieval");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "retrieval metrics for a checkpoint");
  eval->add_option("--pool", eval_args.pool_stem, "evaluation dataset stem")->required();
  eval->add_option("--checkpoint", eval_args.checkpoint_stem, "checkpoint stem")->required();
  eval->add_option("--vocab", eval_args.vocab_path, "vocabulary file")->required();
  eval->add_option("--ks", eval_args.ks, "recall cutoffs")->delimiter(',');
  eval->add_option("--out", eval_args.out_path, "write report JSON here");

  TokenizeArgs tok_args;
  auto* tok = app.add_subcommand("tokenize", "wordpiece-tokenize text");
  tok->add_option("--vocab", tok_args.vocab_path, "vocabulary file")->required();
  tok->add_option("--text", tok_args.text, "single text");
  tok->add_option("--in", tok_args.in_path, "file with one text per line");
  tok->add_option("--max-len", tok_args.max_len, "padded sequence length")
      ->capture_default_str();

  GradcheckArgs gc_args;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gc->add_option("--config", gc_args.config_path, "model config JSON (default: tiny built-in)");
  gc->add_option("--seed", gc_args.seed, "data/init seed")->capture_default_str();
  gc->add_option("--eps", gc_args.eps, "finite-difference step (default per suite)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (app.get_subcommands().empty()) {
    std::cout << app.help();
    return 1;
  }
  train_args.seed_set = train_seed->count() > 0;

  try {
    if (gen->parsed()) return cmd_gen(gen_args, argv_copy);
    if (pipe->parsed() && pipe_run->parsed()) return cmd_pipeline_run(pipe_args, argv_copy);
    if (train->parsed()) return cmd_train(train_args, argv_copy);
    if (eval->parsed()) return cmd_eval(eval_args, argv_copy);
    if (tok->parsed()) return cmd_tokenize(tok_args);
    if (gc->parsed()) return cmd_gradcheck(gc_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  std::cout << app.help();
  return 1;
}

}  // namespace cli
}  // namespace vlpre
