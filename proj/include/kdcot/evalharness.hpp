#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kdcot/model.hpp"

namespace kdcot {

enum class TaskCategory {
    AlgorithmicMultistepArithmetic,
    NaturalLanguageUnderstanding,
    WorldKnowledge,
    Multilingual,
};

std::string category_name(TaskCategory c);
TaskCategory category_from_name(const std::string& name);

struct EvalQuestion {
    std::string input;
    std::string target;
};

struct Demo {
    std::string question;
    std::string answer;  // CoT text ending "So the answer is ..."
};

struct EvalTask {
    std::string name;
    TaskCategory category = TaskCategory::AlgorithmicMultistepArithmetic;
    std::string instruction;
    std::vector<EvalQuestion> questions;
    std::vector<Demo> demos;
};

EvalTask load_task(const std::string& path);
void save_task(const std::string& path, const EvalTask& task);

// Task instruction, k demo Q/A blocks, then the target question and the
// answer cue. Deterministic demo order (first k).
std::string build_fewshot_prompt(const EvalTask& task, const std::string& question, int k);

enum class AnswerStyle { Auto, OptionLetter, Literal };

// Last occurrence of "the answer is" wins; returns the parenthesized option
// letter for multiple-choice style, the trailing-punctuation-stripped literal
// otherwise. Absent when no cue is found.
std::optional<std::string> extract_answer(const std::string& generated_text,
                                          AnswerStyle style = AnswerStyle::Auto);

// Exact-match normalization: trim, case-fold, unify "(B)"/"B" option forms.
std::string normalize_answer(const std::string& answer);

struct TaskScore {
    std::string task_name;
    TaskCategory category = TaskCategory::AlgorithmicMultistepArithmetic;
    int question_count = 0;
    // Exact-match percentage per model variant, keyed by variant name
    // (e.g. baseline / kd / kd_cot / teacher).
    std::map<std::string, double> percent;
};

struct Gain {
    enum class Kind { Relative, Absolute };
    Kind kind = Kind::Relative;
    double value = 0.0;  // raw, unrounded
    double rounded() const;
    std::string to_string() const;  // "+37.54%" or "+11.60%, abs."
};

// baseline > 0: relative gain 100*(new-baseline)/baseline; baseline == 0:
// absolute gain equal to the new percentage.
Gain relative_gain(double baseline_pct, double new_pct);

struct EvalReport {
    std::vector<std::string> variants;  // column order; variants[0] is the baseline
    std::vector<TaskScore> tasks;
    std::map<std::string, double> category_mean(TaskCategory c) const;
    std::map<std::string, double> overall_mean;  // unweighted over tasks
    std::map<std::string, Gain> overall_gain;    // vs variants[0], from rounded means
    std::string normalization_note;
};

// Per-model generation + extraction + exact-match scoring for one task.
double score_task(const Model& model, const TokenizerSpec& tokenizer, const EvalTask& task,
                  const DecodeParams& decode, int k);

// Aggregates task scores: unweighted task means per variant, gains recomputed
// from the (2-decimal rounded) means at every level.
EvalReport aggregate_report(const std::vector<TaskScore>& task_scores,
                            const std::vector<std::string>& variants);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& json_text);

// Markdown table mirroring the task/#questions/baseline/KD(+gain)/... layout.
std::string render_report_markdown(const EvalReport& report);

// Loads a per-task score file ({variants:[...], tasks:[{name, category,
// questions, scores:{variant:pct}}]}) for report rendering.
std::vector<TaskScore> load_task_scores(const std::string& path,
                                        std::vector<std::string>& variants_out);

// ---- inference-time benchmarking -------------------------------------------

struct TimingStats {
    std::string model_name;
    int64_t parameter_count = 0;
    double median_seconds = 0.0;
    double ratio_vs_teacher = 1.0;
};

struct BenchEntry {
    std::string name;
    const Model* model = nullptr;
};

// Median wall-clock over `repetitions` serial runs of the prompt suite under
// identical decode settings; ratios are against the entry named
// `teacher_name`.
std::vector<TimingStats> bench_inference(const std::vector<BenchEntry>& models,
                                         const TokenizerSpec& tokenizer,
                                         const std::vector<std::string>& prompt_suite,
                                         const DecodeParams& decode, int repetitions,
                                         const std::string& teacher_name);

// "requires approximately 53% of the teacher's inference time" style lines.
std::string render_timing_markdown(const std::vector<TimingStats>& stats,
                                   const std::string& teacher_name);

}  // namespace kdcot
