#include "vlpre/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "vlpre/adam.hpp"
#include "vlpre/checkpoint.hpp"
#include "vlpre/util.hpp"

namespace vlpre {
namespace trainer {

int StageConfig::resolved_batch_size() const {
  if (batch_size > 0) return batch_size;
  return kind == "finetune" ? 24 : 48;
}

double StageConfig::resolved_lr() const {
  if (lr > 0) return lr;
  return kind == "finetune" ? 5e-5 : 1e-4;
}

void StagePlan::validate() const {
  if (stages.empty()) throw std::invalid_argument("plan: needs at least one stage");
  std::set<std::string> names;
  bool finetune_seen = false;
  for (const auto& s : stages) {
    if (s.name.empty()) throw std::invalid_argument("plan: unnamed stage");
    if (!names.insert(s.name).second)
      throw std::invalid_argument("plan: duplicate stage name '" + s.name + "'");
    if (s.kind != "pretrain" && s.kind != "finetune")
      throw std::invalid_argument("plan: stage '" + s.name + "' has unknown kind '" + s.kind + "'");
    if (s.kind == "finetune") {
      finetune_seen = true;
      if (s.group_size < 2)
        throw std::invalid_argument("plan: stage '" + s.name + "': group_size must be >= 2");
      if (s.direction != "image_to_text" && s.direction != "text_to_image" &&
          s.direction != "both")
        throw std::invalid_argument("plan: stage '" + s.name + "': bad direction '" +
                                    s.direction + "'");
      s.loss.validate();
    } else if (finetune_seen) {
      throw std::invalid_argument("plan: pretrain stage '" + s.name +
                                  "' appears after a finetune stage");
    }
    if (s.epochs < 1) throw std::invalid_argument("plan: stage '" + s.name + "': epochs < 1");
    if (s.batch_size < 0 || s.lr < 0)
      throw std::invalid_argument("plan: stage '" + s.name + "': negative batch size or lr");
    if (s.negative_ratio < 0)
      throw std::invalid_argument("plan: stage '" + s.name + "': negative negative_ratio");
    if (s.datasets.empty())
      throw std::invalid_argument("plan: stage '" + s.name + "' references no dataset");
    if (!datasets.empty())
      for (const auto& ref : s.datasets)
        if (!datasets.count(ref))
          throw std::invalid_argument("plan: stage '" + s.name + "' references unknown dataset '" +
                                      ref + "'");
  }
}

namespace {

nlohmann::json tasks_json(const TaskToggles& t) {
  return {{"mlm", t.mlm}, {"moc", t.moc}, {"mrfr", t.mrfr}, {"itm", t.itm}};
}

TaskToggles tasks_from_json(const nlohmann::json& j) {
  TaskToggles t;
  t.mlm = j.value("mlm", t.mlm);
  t.moc = j.value("moc", t.moc);
  t.mrfr = j.value("mrfr", t.mrfr);
  t.itm = j.value("itm", t.itm);
  return t;
}

nlohmann::json mask_json(const MaskConfig& m) {
  return {{"text_mask_prob", m.text_mask_prob},
          {"mask_action_prob", m.mask_action_prob},
          {"random_action_prob", m.random_action_prob},
          {"visual_mask_prob", m.visual_mask_prob},
          {"visual_zero_prob", m.visual_zero_prob},
          {"force_text_mask", m.force_text_mask}};
}

MaskConfig mask_from_json(const nlohmann::json& j) {
  MaskConfig m;
  m.text_mask_prob = j.value("text_mask_prob", m.text_mask_prob);
  m.mask_action_prob = j.value("mask_action_prob", m.mask_action_prob);
  m.random_action_prob = j.value("random_action_prob", m.random_action_prob);
  m.visual_mask_prob = j.value("visual_mask_prob", m.visual_mask_prob);
  m.visual_zero_prob = j.value("visual_zero_prob", m.visual_zero_prob);
  m.force_text_mask = j.value("force_text_mask", m.force_text_mask);
  return m;
}

nlohmann::json loss_json(const FinetuneLossConfig& l) {
  return {{"binary", l.binary}, {"ce", l.ce}, {"triplet", l.triplet}, {"margin", l.margin}};
}

FinetuneLossConfig loss_from_json(const nlohmann::json& j) {
  FinetuneLossConfig l;
  l.binary = j.value("binary", l.binary);
  l.ce = j.value("ce", l.ce);
  l.triplet = j.value("triplet", l.triplet);
  l.margin = j.value("margin", l.margin);
  return l;
}

std::string stage_stem(const std::string& out_dir, int index, const std::string& name) {
  return out_dir + "/stage_" + std::to_string(index) + "_" + name;
}

std::vector<int> valid_ks(const EvalPool& pool) {
  std::vector<int> ks;
  for (int k : {1, 5, 10})
    if (k <= pool.num_images() && k <= pool.num_captions()) ks.push_back(k);
  return ks;
}

}  // namespace

std::string StagePlan::to_json() const {
  nlohmann::json stages_j = nlohmann::json::array();
  for (const auto& s : stages) {
    nlohmann::json sj{{"name", s.name},         {"kind", s.kind},
                      {"datasets", s.datasets}, {"epochs", s.epochs},
                      {"batch_size", s.batch_size}, {"lr", s.lr}};
    if (s.kind == "pretrain") {
      sj["tasks"] = tasks_json(s.tasks);
      sj["mask"] = mask_json(s.mask);
      sj["negative_ratio"] = s.negative_ratio;
    } else {
      sj["loss"] = loss_json(s.loss);
      sj["direction"] = s.direction;
      sj["group_size"] = s.group_size;
    }
    stages_j.push_back(std::move(sj));
  }
  nlohmann::json j{{"seed", seed},
                   {"model", nlohmann::json::parse(model.to_json())},
                   {"datasets", datasets},
                   {"stages", stages_j}};
  return j.dump(2);
}

StagePlan StagePlan::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  StagePlan plan;
  plan.seed = j.value("seed", plan.seed);
  if (j.contains("model")) {
    // vocab_size 0 in a plan means "resolve from the vocabulary at run time";
    // parse through the strict config codec with a placeholder, then restore
    auto mj = j.at("model");
    const bool deferred_vocab = mj.value("vocab_size", 0) == 0;
    if (deferred_vocab) mj["vocab_size"] = 5;
    plan.model = ModelConfig::from_json(mj.dump());
    if (deferred_vocab) plan.model.vocab_size = 0;
  }
  if (j.contains("datasets"))
    plan.datasets = j.at("datasets").get<std::map<std::string, std::string>>();
  for (const auto& sj : j.at("stages")) {
    StageConfig s;
    s.name = sj.at("name").get<std::string>();
    s.kind = sj.value("kind", s.kind);
    s.datasets = sj.at("datasets").get<std::vector<std::string>>();
    s.epochs = sj.value("epochs", s.epochs);
    s.batch_size = sj.value("batch_size", s.batch_size);
    s.lr = sj.value("lr", s.lr);
    if (sj.contains("tasks")) s.tasks = tasks_from_json(sj.at("tasks"));
    if (sj.contains("mask")) s.mask = mask_from_json(sj.at("mask"));
    s.negative_ratio = sj.value("negative_ratio", s.negative_ratio);
    if (sj.contains("loss")) s.loss = loss_from_json(sj.at("loss"));
    s.direction = sj.value("direction", s.direction);
    s.group_size = sj.value("group_size", s.group_size);
    plan.stages.push_back(std::move(s));
  }
  plan.validate();
  return plan;
}

StageRunInfo run_pretrain_stage(ModelParams& params, const StageConfig& stage, const Dataset& ds,
                                const Vocab& vocab, const Rng& stage_rng, int stage_index,
                                std::string* metrics_out) {
  if (ds.records.empty())
    throw std::invalid_argument("stage '" + stage.name + "': empty dataset");
  AdamConfig acfg;
  acfg.lr = stage.resolved_lr();
  Adam opt(acfg);  // fresh moments at every stage boundary
  const int n = static_cast<int>(ds.records.size());
  const int b = stage.resolved_batch_size();
  StageRunInfo info;
  for (int e = 0; e < stage.epochs; ++e) {
    std::vector<int> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    Rng order_rng = stage_rng.derive("order").derive(static_cast<uint64_t>(e));
    order_rng.shuffle(ids);
    for (int start = 0; start < n; start += b) {
      std::vector<int> chunk(ids.begin() + start, ids.begin() + std::min(n, start + b));
      // a lone positive cannot donate a rotated negative caption
      if (chunk.size() < 2 && stage.negative_ratio > 0) continue;
      Rng batch_rng = stage_rng.derive("batch").derive(static_cast<uint64_t>(info.steps));
      auto batch = build_pair_batch(ds, chunk, vocab, params.config, batch_rng, stage.mask,
                                    stage.negative_ratio);
      Rng fwd_rng = stage_rng.derive("fwd").derive(static_cast<uint64_t>(info.steps));
      auto rep =
          pretrain_step(batch, params, opt, fwd_rng, vocab, stage.tasks, info.steps, stage_index);
      if (metrics_out) *metrics_out += rep.to_json_line() + "\n";
      if (info.steps == 0) info.first_total = rep.total;
      info.last_total = rep.total;
      ++info.steps;
    }
  }
  return info;
}

StageRunInfo run_finetune_stage(ModelParams& params, const StageConfig& stage, const Dataset& ds,
                                const Vocab& vocab, const Rng& stage_rng,
                                std::string* metrics_out) {
  if (ds.records.empty())
    throw std::invalid_argument("stage '" + stage.name + "': empty dataset");
  AdamConfig acfg;
  acfg.lr = stage.resolved_lr();
  Adam opt(acfg);
  std::vector<Direction> dirs;
  if (stage.direction == "image_to_text") dirs = {Direction::image_to_text};
  else if (stage.direction == "text_to_image") dirs = {Direction::text_to_image};
  else dirs = {Direction::image_to_text, Direction::text_to_image};
  const int b = stage.resolved_batch_size();
  StageRunInfo info;
  for (int e = 0; e < stage.epochs; ++e) {
    // one batched pass per direction, interleaved step by step
    std::vector<std::vector<std::vector<RetrievalGroup>>> batches_by_dir;
    for (size_t d = 0; d < dirs.size(); ++d) {
      Rng group_rng =
          stage_rng.derive("groups").derive(static_cast<uint64_t>(e) * 2 + d);
      auto groups = build_groups(ds, stage.group_size, dirs[d], group_rng);
      std::vector<std::vector<RetrievalGroup>> batches;
      for (size_t start = 0; start < groups.size(); start += b)
        batches.emplace_back(groups.begin() + start,
                             groups.begin() + std::min(groups.size(), start + b));
      batches_by_dir.push_back(std::move(batches));
    }
    size_t max_batches = 0;
    for (const auto& bs : batches_by_dir) max_batches = std::max(max_batches, bs.size());
    for (size_t bi = 0; bi < max_batches; ++bi) {
      for (size_t d = 0; d < dirs.size(); ++d) {
        if (bi >= batches_by_dir[d].size()) continue;
        Rng fwd_rng = stage_rng.derive("fwd").derive(static_cast<uint64_t>(info.steps));
        auto rep = finetune_step(ds, batches_by_dir[d][bi], params, opt, vocab, stage.loss,
                                 fwd_rng, info.steps);
        if (metrics_out) *metrics_out += rep.to_json_line() + "\n";
        if (info.steps == 0) info.first_total = rep.total;
        info.last_total = rep.total;
        ++info.steps;
      }
    }
  }
  return info;
}

RunResult run_plan(const StagePlan& plan, const std::map<std::string, Dataset>& datasets,
                   const Vocab& vocab, const std::string& out_dir,
                   const std::string& init_checkpoint, int start_stage,
                   const EvalPool* zero_shot_pool) {
  plan.validate();
  ModelConfig cfg = plan.model;
  if (cfg.vocab_size == 0) cfg.vocab_size = vocab.size();
  if (cfg.vocab_size != vocab.size())
    throw std::invalid_argument("plan: model vocab_size " + std::to_string(cfg.vocab_size) +
                                " does not match vocab (" + std::to_string(vocab.size()) + ")");
  cfg.validate();
  const int n_stages = static_cast<int>(plan.stages.size());
  if (start_stage < 0 || start_stage >= n_stages)
    throw std::invalid_argument("plan: start_stage out of range");

  // resolve and merge every stage's data before any training happens
  std::vector<Dataset> stage_data;
  for (const auto& stage : plan.stages) {
    std::vector<const Dataset*> parts;
    for (const auto& ref : stage.datasets) {
      auto it = datasets.find(ref);
      if (it == datasets.end())
        throw std::invalid_argument("plan: stage '" + stage.name +
                                    "' references unresolved dataset '" + ref + "'");
      parts.push_back(&it->second);
    }
    stage_data.push_back(corpus::merge(parts));
  }

  std::filesystem::create_directories(out_dir);
  Rng root(plan.seed);
  Rng init_rng = root.derive("init");
  ModelParams params = ModelParams::init(cfg, init_rng);
  if (start_stage == 0) {
    if (!init_checkpoint.empty()) checkpoint::load_into(init_checkpoint, params.named());
  } else {
    checkpoint::load_into(stage_stem(out_dir, start_stage - 1, plan.stages[start_stage - 1].name),
                          params.named());
  }

  RunResult result{std::move(params), {}, ""};
  for (int i = start_stage; i < n_stages; ++i) {
    const auto& stage = plan.stages[i];
    Rng stage_rng = root.derive(static_cast<uint64_t>(i));
    std::string metrics;
    StageRunInfo info;
    if (stage.kind == "pretrain")
      info = run_pretrain_stage(result.params, stage, stage_data[i], vocab, stage_rng, i, &metrics);
    else
      info = run_finetune_stage(result.params, stage, stage_data[i], vocab, stage_rng, &metrics);

    StageSummary sum;
    sum.name = stage.name;
    sum.kind = stage.kind;
    sum.steps = info.steps;
    sum.first_total = info.first_total;
    sum.last_total = info.last_total;
    sum.checkpoint_stem = stage_stem(out_dir, i, stage.name);
    sum.metrics_path = out_dir + "/metrics_stage_" + std::to_string(i) + "_" + stage.name + ".jsonl";
    checkpoint::save(sum.checkpoint_stem, result.params.named());
    write_file_atomic(sum.checkpoint_stem + ".config.json", cfg.to_json());
    write_file_atomic(sum.metrics_path, metrics);
    if (zero_shot_pool) {
      sum.zero_shot = report_from_matrix(score_all(*zero_shot_pool, result.params),
                                         *zero_shot_pool, valid_ks(*zero_shot_pool),
                                         sum.checkpoint_stem);
      sum.has_zero_shot = true;
      write_file_atomic(sum.checkpoint_stem + ".zero_shot.json", sum.zero_shot.to_json());
    }
    result.stages.push_back(std::move(sum));
  }

  result.final_stem = out_dir + "/final";
  checkpoint::save(result.final_stem, result.params.named());
  write_file_atomic(result.final_stem + ".config.json", cfg.to_json());
  return result;
}

EvalReport zero_shot_eval_hook(const std::string& checkpoint_stem, const EvalPool& pool,
                               const std::vector<int>& ks) {
  auto cfg = ModelConfig::from_json(read_file(checkpoint_stem + ".config.json"));
  Rng rng(0);
  auto params = ModelParams::init(cfg, rng);
  checkpoint::load_into(checkpoint_stem, params.named());
  return report_from_matrix(score_all(pool, params), pool, ks, checkpoint_stem);
}

}  // namespace trainer
}  // namespace vlpre
