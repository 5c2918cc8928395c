#include "kdcot/evalharness.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace kdcot {

using nlohmann::json;

std::string category_name(TaskCategory c) {
    switch (c) {
        case TaskCategory::AlgorithmicMultistepArithmetic: return "algorithmic_multistep_arithmetic";
        case TaskCategory::NaturalLanguageUnderstanding: return "natural_language_understanding";
        case TaskCategory::WorldKnowledge: return "world_knowledge";
        case TaskCategory::Multilingual: return "multilingual";
    }
    throw ValidationError("unknown category");
}

TaskCategory category_from_name(const std::string& name) {
    if (name == "algorithmic_multistep_arithmetic")
        return TaskCategory::AlgorithmicMultistepArithmetic;
    if (name == "natural_language_understanding") return TaskCategory::NaturalLanguageUnderstanding;
    if (name == "world_knowledge") return TaskCategory::WorldKnowledge;
    if (name == "multilingual") return TaskCategory::Multilingual;
    throw ValidationError("unknown category: " + name);
}

// ---- task files ---------------------------------------------------------------

EvalTask load_task(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("load_task: cannot open " + path);
    json j = json::parse(in);
    EvalTask t;
    t.name = j.at("name");
    t.category = category_from_name(j.at("category"));
    t.instruction = j.value("instruction", "");
    // Both the native layout ("questions") and the BBH-style one ("examples")
    // are accepted; demos may use {q,a} shorthand.
    const auto& qs = j.contains("questions") ? j.at("questions") : j.at("examples");
    for (const auto& q : qs) t.questions.push_back({q.at("input"), q.at("target")});
    for (const auto& d : j.value("demos", json::array())) {
        const std::string q = d.contains("question") ? d.at("question") : d.at("q");
        const std::string a = d.contains("answer") ? d.at("answer") : d.at("a");
        t.demos.push_back({q, a});
    }
    if (t.questions.empty()) throw ValidationError("load_task: empty question list in " + path);
    return t;
}

void save_task(const std::string& path, const EvalTask& task) {
    json qs = json::array(), ds = json::array();
    for (const auto& q : task.questions) qs.push_back({{"input", q.input}, {"target", q.target}});
    for (const auto& d : task.demos) ds.push_back({{"question", d.question}, {"answer", d.answer}});
    json j{{"name", task.name},
           {"category", category_name(task.category)},
           {"instruction", task.instruction},
           {"questions", qs},
           {"demos", ds}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("save_task: cannot write " + path);
    out << j.dump(2) << '\n';
}

std::string build_fewshot_prompt(const EvalTask& task, const std::string& question, int k) {
    if (k < 0) throw ValidationError("build_fewshot_prompt: negative demo count");
    if (size_t(k) > task.demos.size())
        throw ValidationError("build_fewshot_prompt: task has fewer demos than requested");
    std::string prompt = task.instruction + "\n\n";
    for (int i = 0; i < k; ++i)
        prompt += "Q: " + task.demos[size_t(i)].question + "\nA: " + task.demos[size_t(i)].answer +
                  "\n\n";
    prompt += "Q: " + question + "\nA:";
    return prompt;
}

// ---- answer extraction ----------------------------------------------------------

namespace {

std::string to_lower(std::string s) {
    for (auto& c : s) c = char(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// "(C)", "( C )", " ( c)" -> 'C'; 0 when the text does not start with an
// option marker.
char leading_option_letter(const std::string& text, size_t* consumed = nullptr) {
    size_t i = 0;
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size() || text[i] != '(') return 0;
    ++i;
    while (i < text.size() && text[i] == ' ') ++i;
    if (i >= text.size() || !std::isalpha(static_cast<unsigned char>(text[i]))) return 0;
    const char letter = char(std::toupper(static_cast<unsigned char>(text[i])));
    ++i;
    while (i < text.size() && text[i] == ' ') ++i;
    if (i >= text.size() || text[i] != ')') return 0;
    if (consumed) *consumed = i + 1;
    return letter;
}

}  // namespace

std::optional<std::string> extract_answer(const std::string& generated_text, AnswerStyle style) {
    static const std::string cue = "the answer is";
    const std::string lowered = to_lower(generated_text);
    const size_t pos = lowered.rfind(cue);
    if (pos == std::string::npos) return std::nullopt;
    size_t start = pos + cue.size();
    while (start < generated_text.size() &&
           (generated_text[start] == ' ' || generated_text[start] == ':'))
        ++start;
    const std::string rest = generated_text.substr(start);

    if (style != AnswerStyle::Literal) {
        if (char letter = leading_option_letter(rest)) return std::string("(") + letter + ")";
        if (style == AnswerStyle::OptionLetter) return std::nullopt;
    }

    std::string literal = rest.substr(0, rest.find('.'));
    literal = trim(literal);
    while (!literal.empty() && std::strchr(",!?;:\"'", literal.back()))
        literal.pop_back();
    literal = trim(literal);
    if (literal.empty()) return std::nullopt;
    return literal;
}

std::string normalize_answer(const std::string& answer) {
    std::string t = trim(answer);
    size_t consumed = 0;
    if (char letter = leading_option_letter(t, &consumed)) {
        if (trim(t.substr(consumed)).empty())
            return std::string(1, char(std::tolower(static_cast<unsigned char>(letter))));
    }
    if (t.size() == 1 && std::isalpha(static_cast<unsigned char>(t[0])))
        return std::string(1, char(std::tolower(static_cast<unsigned char>(t[0]))));
    // Case-fold and collapse runs of whitespace; drop trailing punctuation.
    std::string out;
    bool in_space = false;
    for (char c : t) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            in_space = true;
            continue;
        }
        if (in_space && !out.empty()) out += ' ';
        in_space = false;
        out += char(std::tolower(static_cast<unsigned char>(c)));
    }
    while (!out.empty() && std::strchr(".,!?;:", out.back())) out.pop_back();
    return trim(out);
}

// ---- gains ----------------------------------------------------------------------

double Gain::rounded() const { return round2(value); }

std::string Gain::to_string() const {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%+.2f%%", rounded());
    std::string s = buf;
    if (kind == Kind::Absolute) s += ", abs.";
    return s;
}

Gain relative_gain(double baseline_pct, double new_pct) {
    if (baseline_pct < 0 || new_pct < 0) throw ValidationError("relative_gain: negative percentage");
    if (baseline_pct > 0)
        return {Gain::Kind::Relative, 100.0 * (new_pct - baseline_pct) / baseline_pct};
    return {Gain::Kind::Absolute, new_pct};
}

// ---- scoring --------------------------------------------------------------------

double score_task(const Model& model, const TokenizerSpec& tokenizer, const EvalTask& task,
                  const DecodeParams& decode, int k) {
    if (task.questions.empty()) throw ValidationError("score_task: task has no questions");
    int correct = 0;
    for (size_t i = 0; i < task.questions.size(); ++i) {
        const auto& q = task.questions[i];
        std::vector<int> ids = tokenizer.encode(build_fewshot_prompt(task, q.input, k), true);
        ids.push_back(TokenizerSpec::kSep);
        DecodeParams per = decode;
        per.seed = decode.seed + i;  // independent but reproducible per question
        try {
            const std::vector<int> out = generate(model, ids, per);
            const std::string text = tokenizer.decode(out);
            const auto got = extract_answer(text);
            if (got && normalize_answer(*got) == normalize_answer(q.target)) ++correct;
        } catch (const std::exception& e) {
            // A failed generation scores as incorrect rather than aborting the task.
            std::fprintf(stderr, "score_task: generation failed on question %zu: %s\n", i,
                         e.what());
        }
    }
    return 100.0 * double(correct) / double(task.questions.size());
}

EvalReport aggregate_report(const std::vector<TaskScore>& task_scores,
                            const std::vector<std::string>& variants) {
    if (variants.empty()) throw ValidationError("aggregate_report: no variants");
    if (task_scores.empty()) throw ValidationError("aggregate_report: no task scores");
    for (const auto& ts : task_scores)
        for (const auto& v : variants)
            if (!ts.percent.count(v))
                throw ValidationError("aggregate_report: task " + ts.task_name +
                                      " is missing variant " + v);
    EvalReport r;
    r.variants = variants;
    r.tasks = task_scores;
    for (const auto& v : variants) {
        double sum = 0.0;
        for (const auto& ts : task_scores) sum += ts.percent.at(v);
        r.overall_mean[v] = sum / double(task_scores.size());
    }
    const double base = round2(r.overall_mean.at(variants[0]));
    for (size_t i = 1; i < variants.size(); ++i)
        r.overall_gain[variants[i]] = relative_gain(base, round2(r.overall_mean.at(variants[i])));
    r.normalization_note =
        "Means are unweighted over tasks; gains are computed from the two-decimal rounded "
        "means. A zero baseline makes the relative gain undefined, so those entries report "
        "the absolute point change instead.";
    return r;
}

std::map<std::string, double> EvalReport::category_mean(TaskCategory c) const {
    std::map<std::string, double> out;
    int n = 0;
    for (const auto& ts : tasks) {
        if (ts.category != c) continue;
        ++n;
        for (const auto& [v, pct] : ts.percent) out[v] += pct;
    }
    for (auto& [v, sum] : out) sum /= double(n);
    return out;
}

// ---- serialization ---------------------------------------------------------------

namespace {

json gain_to_json(const Gain& g) {
    return {{"kind", g.kind == Gain::Kind::Relative ? "relative" : "absolute"},
            {"value", g.value}};
}

Gain gain_from_json(const json& j) {
    Gain g;
    g.kind = j.at("kind") == "absolute" ? Gain::Kind::Absolute : Gain::Kind::Relative;
    g.value = j.at("value");
    return g;
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
    json tasks = json::array();
    for (const auto& ts : report.tasks)
        tasks.push_back({{"name", ts.task_name},
                         {"category", category_name(ts.category)},
                         {"questions", ts.question_count},
                         {"scores", ts.percent}});
    json gains;
    for (const auto& [v, g] : report.overall_gain) gains[v] = gain_to_json(g);
    return json{{"variants", report.variants},
                {"tasks", tasks},
                {"overall_mean", report.overall_mean},
                {"overall_gain", gains},
                {"normalization_note", report.normalization_note}}
        .dump(2);
}

EvalReport report_from_json(const std::string& json_text) {
    json j = json::parse(json_text);
    EvalReport r;
    r.variants = j.at("variants").get<std::vector<std::string>>();
    for (const auto& t : j.at("tasks")) {
        TaskScore ts;
        ts.task_name = t.at("name");
        ts.category = category_from_name(t.at("category"));
        ts.question_count = t.at("questions");
        ts.percent = t.at("scores").get<std::map<std::string, double>>();
        r.tasks.push_back(std::move(ts));
    }
    r.overall_mean = j.at("overall_mean").get<std::map<std::string, double>>();
    for (const auto& [v, g] : j.at("overall_gain").items()) r.overall_gain[v] = gain_from_json(g);
    r.normalization_note = j.value("normalization_note", "");
    return r;
}

std::vector<TaskScore> load_task_scores(const std::string& path,
                                        std::vector<std::string>& variants_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("load_task_scores: cannot open " + path);
    json j = json::parse(in);
    variants_out = j.at("variants").get<std::vector<std::string>>();
    std::vector<TaskScore> out;
    for (const auto& t : j.at("tasks")) {
        TaskScore ts;
        ts.task_name = t.at("name");
        ts.category = category_from_name(t.at("category"));
        ts.question_count = t.at("questions");
        ts.percent = t.at("scores").get<std::map<std::string, double>>();
        for (const auto& v : variants_out)
            if (!ts.percent.count(v))
                throw ValidationError("load_task_scores: task " + ts.task_name +
                                      " is missing variant " + v);
        out.push_back(std::move(ts));
    }
    return out;
}

namespace {

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", round2(v));
    return buf;
}

}  // namespace

std::string render_report_markdown(const EvalReport& report) {
    std::ostringstream md;
    md << "| Task | Category | #Q |";
    for (const auto& v : report.variants) md << ' ' << v << " |";
    md << "\n|---|---|---|";
    for (size_t i = 0; i < report.variants.size(); ++i) md << "---|";
    md << '\n';
    const std::string& base = report.variants[0];
    for (const auto& ts : report.tasks) {
        md << "| " << ts.task_name << " | " << category_name(ts.category) << " | "
           << ts.question_count << " |";
        for (const auto& v : report.variants) {
            md << ' ' << fmt2(ts.percent.at(v));
            if (v != base) {
                const Gain g = relative_gain(round2(ts.percent.at(base)), round2(ts.percent.at(v)));
                md << " (" << g.to_string() << ")";
            }
            md << " |";
        }
        md << '\n';
    }
    md << "| **mean** |  | " << report.tasks.size() << " tasks |";
    for (const auto& v : report.variants) {
        md << ' ' << fmt2(report.overall_mean.at(v));
        auto it = report.overall_gain.find(v);
        if (it != report.overall_gain.end()) md << " (" << it->second.to_string() << ")";
        md << " |";
    }
    md << "\n\n" << report.normalization_note << '\n';
    return md.str();
}

// ---- timing -----------------------------------------------------------------------

std::vector<TimingStats> bench_inference(const std::vector<BenchEntry>& models,
                                         const TokenizerSpec& tokenizer,
                                         const std::vector<std::string>& prompt_suite,
                                         const DecodeParams& decode, int repetitions,
                                         const std::string& teacher_name) {
    if (models.empty() || prompt_suite.empty() || repetitions <= 0)
        throw ValidationError("bench_inference: empty models, prompts, or repetitions");
    std::vector<std::vector<int>> encoded;
    for (const auto& p : prompt_suite) encoded.push_back(tokenizer.encode(p, true));

    std::vector<TimingStats> stats;
    for (const auto& entry : models) {
        if (!entry.model) throw ValidationError("bench_inference: null model " + entry.name);
        std::vector<double> times;
        for (int r = 0; r < repetitions; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            for (const auto& ids : encoded) generate(*entry.model, ids, decode);
            times.push_back(
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        }
        std::sort(times.begin(), times.end());
        const double median = times.size() % 2 ? times[times.size() / 2]
                                               : 0.5 * (times[times.size() / 2 - 1] +
                                                        times[times.size() / 2]);
        stats.push_back({entry.name, entry.model->total_parameter_count(), median, 1.0});
    }
    const auto teacher = std::find_if(stats.begin(), stats.end(),
                                      [&](const TimingStats& s) { return s.model_name == teacher_name; });
    if (teacher == stats.end())
        throw ValidationError("bench_inference: no entry named " + teacher_name);
    for (auto& s : stats) s.ratio_vs_teacher = s.median_seconds / teacher->median_seconds;
    return stats;
}

std::string render_timing_markdown(const std::vector<TimingStats>& stats,
                                   const std::string& teacher_name) {
    std::ostringstream md;
    for (const auto& s : stats) {
        char line[256];
        std::snprintf(line, sizeof(line),
                      "- %s: %lld parameters, median %.3f s per suite", s.model_name.c_str(),
                      static_cast<long long>(s.parameter_count), s.median_seconds);
        md << line;
        if (s.model_name != teacher_name) {
            std::snprintf(line, sizeof(line),
                          "; requires approximately %.0f%% of the %s's inference time",
                          100.0 * s.ratio_vs_teacher, teacher_name.c_str());
            md << line;
        }
        md << '\n';
    }
    return md.str();
}

}  // namespace kdcot
