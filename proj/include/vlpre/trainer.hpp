#pragma once

#include <map>
#include <string>
#include <vector>

#include "vlpre/corpus.hpp"
#include "vlpre/eval.hpp"
#include "vlpre/finetune.hpp"
#include "vlpre/model.hpp"
#include "vlpre/pretrain.hpp"
#include "vlpre/tokenizer.hpp"

namespace vlpre {
namespace trainer {

// One stage of an ordered plan. batch_size/lr of 0 resolve to the standard
// defaults for the kind: pretrain 48 @ 1e-4, finetune 24 @ 5e-5.
struct StageConfig {
  std::string name;
  std::string kind = "pretrain";  // pretrain | finetune
  std::vector<std::string> datasets;  // several refs = merged (concat + reshuffle)
  int epochs = 1;
  int batch_size = 0;
  double lr = 0.0;

  // pretrain knobs
  TaskToggles tasks;
  MaskConfig mask;
  double negative_ratio = 1.0;

  // finetune knobs
  FinetuneLossConfig loss;
  std::string direction = "image_to_text";  // image_to_text | text_to_image | both
  int group_size = 8;

  int resolved_batch_size() const;
  double resolved_lr() const;
};

struct StagePlan {
  ModelConfig model;
  uint64_t seed = 42;
  std::map<std::string, std::string> datasets;  // ref -> file stem, for the CLI
  std::vector<StageConfig> stages;

  // >=1 stage, unique nonempty names, valid kinds with every pretrain stage
  // before the first finetune stage, per-stage knobs in range
  void validate() const;
  std::string to_json() const;
  static StagePlan from_json(const std::string& text);
};

struct StageSummary {
  std::string name;
  std::string kind;
  int steps = 0;
  double first_total = 0.0;
  double last_total = 0.0;
  std::string checkpoint_stem;
  std::string metrics_path;
  bool has_zero_shot = false;
  EvalReport zero_shot;
};

struct RunResult {
  ModelParams params;
  std::vector<StageSummary> stages;
  std::string final_stem;
};

// Stages run in plan order, each resuming from the previous stage's
// parameters with fresh Adam moments. Checkpoints (<out_dir>/stage_<i>_<name>
// plus <out_dir>/final, each with a .config.json beside it) are written at
// stage boundaries, metrics as one JSONL file per stage. All randomness
// derives from (plan.seed, stage index), so resuming from start_stage on top
// of existing stage checkpoints reproduces an uninterrupted run exactly.
RunResult run_plan(const StagePlan& plan, const std::map<std::string, Dataset>& datasets,
                   const Vocab& vocab, const std::string& out_dir,
                   const std::string& init_checkpoint = "", int start_stage = 0,
                   const EvalPool* zero_shot_pool = nullptr);

struct StageRunInfo {
  int steps = 0;
  double first_total = 0.0;
  double last_total = 0.0;
};

// The per-stage training loops run_plan delegates to; exposed so a direct
// call and a one-stage plan can be compared bit for bit.
StageRunInfo run_pretrain_stage(ModelParams& params, const StageConfig& stage, const Dataset& ds,
                                const Vocab& vocab, const Rng& stage_rng, int stage_index,
                                std::string* metrics_out);
StageRunInfo run_finetune_stage(ModelParams& params, const StageConfig& stage, const Dataset& ds,
                                const Vocab& vocab, const Rng& stage_rng,
                                std::string* metrics_out);

// Retrieval metrics for a stored checkpoint; never writes, never updates.
EvalReport zero_shot_eval_hook(const std::string& checkpoint_stem, const EvalPool& pool,
                               const std::vector<int>& ks = {1, 5, 10});

}  // namespace trainer
}  // namespace vlpre
