#include "kdcot/datapipe.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace kdcot {

using nlohmann::json;

LoadReport load_cot_records(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("load_cot_records: cannot open " + path);
    LoadReport report;
    std::string line;
    size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
        if (j.is_discarded() || !j.is_object()) {
            report.malformed.push_back({line_no, "not a JSON object"});
            continue;
        }
        TrainingExample ex;
        // Canonical field names, with CoT-Collection style aliases.
        if (j.contains("instruction"))
            ex.instruction = j["instruction"].get<std::string>();
        else if (j.contains("source"))
            ex.instruction = j["source"].get<std::string>();
        if (j.contains("answer"))
            ex.answer = j["answer"].get<std::string>();
        else if (j.contains("target"))
            ex.answer = j["target"].get<std::string>();
        if (j.contains("rationale") && !j["rationale"].is_null())
            ex.rationale = j["rationale"].get<std::string>();
        if (j.contains("id")) ex.id = j["id"].get<std::string>();
        if (ex.id.empty()) ex.id = "line-" + std::to_string(line_no);
        if (j.contains("task_name")) ex.task_name = j["task_name"].get<std::string>();
        if (ex.instruction.empty()) {
            report.malformed.push_back({line_no, "missing instruction"});
            continue;
        }
        if (ex.answer.empty()) {
            report.malformed.push_back({line_no, "missing answer"});
            continue;
        }
        report.examples.push_back(std::move(ex));
    }
    if (report.examples.empty())
        throw RuntimeFailure("load_cot_records: zero valid records in " + path);
    return report;
}

std::vector<TrainingExample> strip_rationales(std::vector<TrainingExample> examples) {
    for (auto& ex : examples) ex.rationale.reset();
    return examples;
}

TrainingSequence render_training_sequence(const TrainingExample& example, RenderMode mode,
                                          const TokenizerSpec& tokenizer, size_t max_len,
                                          bool loss_on_prompt) {
    if (mode == RenderMode::CoT && !example.rationale)
        throw ValidationError("render: CoT mode requires a rationale (example " + example.id + ")");

    std::vector<int> instr = tokenizer.encode(example.instruction);
    std::vector<int> rationale =
        mode == RenderMode::CoT ? tokenizer.encode(*example.rationale) : std::vector<int>{};
    std::vector<int> answer = tokenizer.encode(example.answer);

    // bos + instr + sep [+ rationale + sep] + answer + eos
    const size_t fixed = 2 + answer.size() + rationale.size() +
                         (mode == RenderMode::CoT ? 2 : 1);
    if (fixed > max_len)
        throw ValidationError("render: rationale+answer alone exceed max_len (example " +
                              example.id + ")");
    // Truncation drops the oldest instruction tokens first.
    if (fixed + instr.size() > max_len)
        instr.erase(instr.begin(), instr.begin() + static_cast<long>(fixed + instr.size() - max_len));

    TrainingSequence seq;
    seq.mode = mode;
    auto push = [&seq](int id, bool masked) {
        seq.ids.push_back(id);
        seq.loss_mask.push_back(masked ? 1 : 0);
    };
    push(TokenizerSpec::kBos, false);
    for (int id : instr) push(id, loss_on_prompt);
    push(TokenizerSpec::kSep, false);
    if (mode == RenderMode::CoT) {
        for (int id : rationale) push(id, true);
        // The terminating separator belongs to the rationale span: without
        // loss on it the model never learns where the rationale ends.
        push(TokenizerSpec::kSep, true);
    }
    for (int id : answer) push(id, true);
    push(TokenizerSpec::kEos, true);
    return seq;
}

std::pair<std::vector<TrainingExample>, std::vector<TrainingExample>> split_train_dev(
    std::vector<TrainingExample> examples, const SplitSpec& spec) {
    if (examples.size() < 2) throw ValidationError("split: need at least 2 examples");
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
        throw ValidationError("split: train_fraction must be in (0,1)");
    Rng rng(spec.seed);
    rng.shuffle(examples);
    const auto cut = static_cast<size_t>(
        std::llround(spec.train_fraction * static_cast<double>(examples.size())));
    if (cut == 0 || cut == examples.size())
        throw ValidationError("split: fraction yields an empty side");
    std::vector<TrainingExample> train(examples.begin(), examples.begin() + static_cast<long>(cut));
    std::vector<TrainingExample> dev(examples.begin() + static_cast<long>(cut), examples.end());
    return {std::move(train), std::move(dev)};
}

// ---- persistence -----------------------------------------------------------

void save_examples_jsonl(const std::string& path, const std::vector<TrainingExample>& examples) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot write " + path);
    for (const auto& ex : examples) {
        json j{{"id", ex.id}, {"instruction", ex.instruction}, {"answer", ex.answer}};
        if (ex.rationale) j["rationale"] = *ex.rationale;
        if (ex.task_name) j["task_name"] = *ex.task_name;
        f << j.dump() << '\n';
    }
}

void save_sequences_jsonl(const std::string& path, const std::vector<TrainingSequence>& seqs) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot write " + path);
    for (const auto& s : seqs) {
        json j{{"ids", s.ids},
               {"loss_mask", std::vector<int>(s.loss_mask.begin(), s.loss_mask.end())},
               {"mode", render_mode_name(s.mode)}};
        f << j.dump() << '\n';
    }
}

std::vector<TrainingSequence> load_sequences_jsonl(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot read " + path);
    std::vector<TrainingSequence> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        TrainingSequence s;
        s.ids = j.at("ids").get<std::vector<int>>();
        for (int b : j.at("loss_mask").get<std::vector<int>>())
            s.loss_mask.push_back(static_cast<uint8_t>(b != 0));
        s.mode = j.at("mode") == "cot" ? RenderMode::CoT : RenderMode::Vanilla;
        if (s.ids.size() != s.loss_mask.size())
            throw ValidationError("sequence file: ids/loss_mask length mismatch");
        out.push_back(std::move(s));
    }
    return out;
}

void save_malformed_report(const std::string& path, const std::vector<MalformedLine>& report) {
    json j = json::array();
    for (const auto& m : report) j.push_back({{"line", m.line_number}, {"reason", m.reason}});
    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot write " + path);
    f << json{{"malformed_count", report.size()}, {"lines", j}}.dump(2);
}

}  // namespace kdcot
