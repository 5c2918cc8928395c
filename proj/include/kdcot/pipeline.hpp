#pragma once

#include <map>
#include <string>
#include <vector>

#include "kdcot/distill.hpp"
#include "kdcot/evalharness.hpp"
#include "kdcot/synthtasks.hpp"

namespace kdcot {

// Resolved run configuration with per-key provenance (where each value came
// from: preset default, config file, or command-line flag). Every pipeline
// stage writes the resolved config as run_config.json into its output
// directory.
struct RunConfig {
    std::string preset = "desk";
    std::vector<TaskKind> kinds = {TaskKind::BooleanExpressions, TaskKind::ObjectTracking,
                                   TaskKind::MultistepArithmetic, TaskKind::TemporalOrdering};
    int difficulty = 1;
    int train_count = 200;
    int dev_count = 40;
    int eval_count = 25;
    int demo_pool = 8;
    int max_demos_in_train = 1;
    uint64_t seed = 0;
    size_t vocab_budget = 512;
    bool loss_on_prompt = false;

    ModelConfig teacher;
    ModelConfig student;
    DistillConfig teacher_sft;
    DistillConfig distill;

    int eval_k = 1;
    DecodeParams eval_decode;

    std::map<std::string, std::string> provenance;  // key -> preset | file | flag

    // "desk" (fits a laptop-scale end-to-end run) or "paper" (the published
    // hyperparameters).
    static RunConfig from_preset(const std::string& name);

    // Overlays a JSON config file / a dotted-path flag ("distill.learning_rate").
    void apply_file(const std::string& path);
    void apply_flag(const std::string& dotted_key, const std::string& value);

    std::string to_json() const;
};

void write_run_config(const std::string& dir, const RunConfig& cfg);

// ---- stages ---------------------------------------------------------------
// Directory contracts:
//   tasks_dir : <kind>.train.jsonl / <kind>.dev.jsonl / <kind>.task.json
//   data_dir  : tokenizer.json, {train,dev}.{cot,vanilla}.jsonl, stats.json
//   model dirs: checkpoint layout of save_model(); training output
//               additionally holds step_* snapshots, checkpoints.json and
//               train_log.jsonl, with the last snapshot mirrored to final/.

void stage_gen_tasks(const RunConfig& cfg, const std::string& out_dir);

void stage_prepare_data(const RunConfig& cfg, const std::string& tasks_dir,
                        const std::string& out_dir, bool strip);

void stage_train_teacher(const RunConfig& cfg, const std::string& data_dir,
                         const std::string& out_dir);

void stage_distill(const RunConfig& cfg, const std::string& data_dir,
                   const std::string& teacher_dir, const std::string& out_dir, RenderMode mode,
                   KlDirection kl, bool use_lora);

// variant_dirs maps variant name to a model checkpoint dir; `variants` fixes
// the column order (variants[0] is the gain baseline).
EvalReport stage_eval(const RunConfig& cfg, const std::vector<std::string>& variants,
                      const std::map<std::string, std::string>& variant_dirs,
                      const std::string& data_dir, const std::string& tasks_dir,
                      const std::string& out_dir);

// Scores every checkpoint of a distillation run on the eval tasks and picks
// the argmax (ties: earliest step).
BestCheckpointReport stage_select_best(const RunConfig& cfg, const std::string& run_dir,
                                       const std::string& data_dir, const std::string& tasks_dir,
                                       const std::string& out_dir);

std::vector<TimingStats> stage_bench(const RunConfig& cfg,
                                     const std::map<std::string, std::string>& variant_dirs,
                                     const std::string& data_dir, const std::string& tasks_dir,
                                     const std::string& out_dir, const std::string& teacher_name);

// Renders a bundled or produced per-task score file into the report tables.
EvalReport stage_report(const std::string& scores_path, const std::string& out_dir);

// Mean eval score (over all tasks in tasks_dir) for one model checkpoint.
double mean_eval_score(const RunConfig& cfg, const Model& model, const TokenizerSpec& tokenizer,
                       const std::string& tasks_dir);

std::vector<Checkpoint> load_checkpoints_json(const std::string& path);

}  // namespace kdcot
