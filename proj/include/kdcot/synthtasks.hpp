#pragma once

#include <string>
#include <vector>

#include "kdcot/datapipe.hpp"
#include "kdcot/evalharness.hpp"

namespace kdcot {

enum class TaskKind {
    BooleanExpressions,
    ObjectTracking,
    MultistepArithmetic,
    TemporalOrdering,
};

std::string task_kind_name(TaskKind k);
TaskKind task_kind_from_name(const std::string& name);
TaskCategory task_kind_category(TaskKind k);

struct GenParams {
    TaskKind kind = TaskKind::BooleanExpressions;
    int difficulty = 2;  // expression depth / #objects / #operands / #events
    int train_count = 200;
    int dev_count = 40;
    int eval_count = 25;
    int demo_pool = 8;       // held-out instances used as few-shot demos
    int max_demos_in_train = 3;  // training instructions embed 0..k demos
    uint64_t seed = 0;
};

struct GeneratedTask {
    std::vector<TrainingExample> train;
    std::vector<TrainingExample> dev;
    EvalTask eval;
};

// A well-formed task instance, produced and consumed by the generators.
struct TaskInstance {
    TaskKind kind = TaskKind::BooleanExpressions;
    std::string question;
    std::string canonical_form;  // split-hygiene key
    std::string payload;         // kind-specific encoding, re-executable
};

// Deterministic per seed. Every instance carries a machine-built rationale
// ending "So the answer is X"; eval instances are disjoint from train/dev by
// canonical form. Training instructions are rendered in the few-shot prompt
// format (instruction + 0..k demo blocks + question + answer cue) so the
// training and evaluation text distributions match.
GeneratedTask generate_task(const GenParams& params);

// One random well-formed instance; the building block behind generate_task,
// exposed so property tests can sample the raw instance space.
TaskInstance draw_instance(TaskKind kind, Rng& rng, int difficulty);

// Faithful execution trace plus the brute-force answer for one instance.
std::pair<std::string, std::string> rationale_oracle(TaskKind kind, const TaskInstance& instance);

// Re-executes a rationale's steps and checks they reproduce the answer;
// test oracle for rationale soundness.
bool verify_rationale(TaskKind kind, const TaskInstance& instance, const std::string& rationale,
                      const std::string& answer);

// All words the generator can emit (templates, numerals, object names);
// callers add this to the tokenizer corpus so answers stay in-vocabulary.
std::vector<std::string> task_lexicon(TaskKind kind, int difficulty);

}  // namespace kdcot
