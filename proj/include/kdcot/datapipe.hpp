#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kdcot/tokenizer.hpp"

namespace kdcot {

// One instruction/rationale/answer record; the unit of CoT vs non-CoT data.
struct TrainingExample {
    std::string id;
    std::string instruction;
    std::optional<std::string> rationale;
    std::string answer;
    std::optional<std::string> task_name;
};

enum class RenderMode { CoT, Vanilla };

inline const char* render_mode_name(RenderMode m) {
    return m == RenderMode::CoT ? "cot" : "vanilla";
}

struct TrainingSequence {
    std::vector<int> ids;
    std::vector<uint8_t> loss_mask;  // true where the distillation loss applies
    RenderMode mode = RenderMode::CoT;
};

struct SplitSpec {
    double train_fraction = 0.5;
    uint64_t seed = 0;
};

struct MalformedLine {
    size_t line_number = 0;  // 1-based
    std::string reason;
};

struct LoadReport {
    std::vector<TrainingExample> examples;
    std::vector<MalformedLine> malformed;
};

// JSONL, one object per line with instruction/rationale/answer (aliases
// source/target accepted). Malformed lines are collected, never dropped
// silently. Throws when the file is unreadable or yields zero valid records.
LoadReport load_cot_records(const std::string& path);

// Removes every rationale; all other fields are untouched. Idempotent.
std::vector<TrainingExample> strip_rationales(std::vector<TrainingExample> examples);

// Sequence layout (sep = dedicated separator token):
//   CoT:     bos instruction sep rationale sep answer eos
//   vanilla: bos instruction sep answer eos
// loss_mask is true exactly on rationale and answer token positions (plus
// instruction tokens when loss_on_prompt is set). Over-long sequences drop
// instruction tokens from the left; the answer is never truncated.
TrainingSequence render_training_sequence(const TrainingExample& example, RenderMode mode,
                                          const TokenizerSpec& tokenizer, size_t max_len,
                                          bool loss_on_prompt = false);

// Seeded shuffle then split at round(train_fraction * n).
std::pair<std::vector<TrainingExample>, std::vector<TrainingExample>> split_train_dev(
    std::vector<TrainingExample> examples, const SplitSpec& spec);

// ---- on-disk formats -------------------------------------------------------

void save_examples_jsonl(const std::string& path, const std::vector<TrainingExample>& examples);
void save_sequences_jsonl(const std::string& path, const std::vector<TrainingSequence>& seqs);
std::vector<TrainingSequence> load_sequences_jsonl(const std::string& path);
void save_malformed_report(const std::string& path, const std::vector<MalformedLine>& report);

}  // namespace kdcot
