#include "kdcot/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

namespace kdcot {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json config_values(const RunConfig& c) {
    json kinds = json::array();
    for (auto k : c.kinds) kinds.push_back(task_kind_name(k));
    return json{{"preset", c.preset},
                {"kinds", kinds},
                {"difficulty", c.difficulty},
                {"train_count", c.train_count},
                {"dev_count", c.dev_count},
                {"eval_count", c.eval_count},
                {"demo_pool", c.demo_pool},
                {"max_demos_in_train", c.max_demos_in_train},
                {"seed", c.seed},
                {"vocab_budget", c.vocab_budget},
                {"loss_on_prompt", c.loss_on_prompt},
                {"teacher", json::parse(c.teacher.to_json())},
                {"student", json::parse(c.student.to_json())},
                {"teacher_sft", json::parse(c.teacher_sft.to_json())},
                {"distill", json::parse(c.distill.to_json())},
                {"eval_k", c.eval_k},
                {"eval_decode",
                 {{"temperature", c.eval_decode.temperature},
                  {"max_new_tokens", c.eval_decode.max_new_tokens},
                  {"seed", c.eval_decode.seed}}}};
}

void config_from_values(RunConfig& c, const json& j) {
    c.preset = j.at("preset");
    c.kinds.clear();
    for (const auto& k : j.at("kinds")) c.kinds.push_back(task_kind_from_name(k));
    c.difficulty = j.at("difficulty");
    c.train_count = j.at("train_count");
    c.dev_count = j.at("dev_count");
    c.eval_count = j.at("eval_count");
    c.demo_pool = j.at("demo_pool");
    c.max_demos_in_train = j.at("max_demos_in_train");
    c.seed = j.at("seed");
    c.vocab_budget = j.at("vocab_budget");
    c.loss_on_prompt = j.at("loss_on_prompt");
    c.teacher = ModelConfig::from_json(j.at("teacher").dump());
    c.student = ModelConfig::from_json(j.at("student").dump());
    c.teacher_sft = DistillConfig::from_json(j.at("teacher_sft").dump());
    c.distill = DistillConfig::from_json(j.at("distill").dump());
    c.eval_k = j.at("eval_k");
    c.eval_decode.temperature = j.at("eval_decode").at("temperature");
    c.eval_decode.max_new_tokens = j.at("eval_decode").at("max_new_tokens");
    c.eval_decode.seed = j.at("eval_decode").at("seed");
}

void flatten_keys(const json& j, const std::string& prefix, std::vector<std::string>& out) {
    if (!j.is_object()) {
        out.push_back(prefix);
        return;
    }
    for (const auto& [k, v] : j.items())
        flatten_keys(v, prefix.empty() ? k : prefix + "." + k, out);
}

json* navigate(json& root, const std::string& dotted, bool create) {
    json* cur = &root;
    size_t start = 0;
    while (true) {
        const size_t dot = dotted.find('.', start);
        const std::string part = dotted.substr(start, dot - start);
        if (!cur->is_object() || (!cur->contains(part) && !create)) return nullptr;
        cur = &(*cur)[part];
        if (dot == std::string::npos) return cur;
        start = dot + 1;
    }
}

}  // namespace

RunConfig RunConfig::from_preset(const std::string& name) {
    RunConfig c;
    c.preset = name;
    if (name == "desk") {
        // Small enough for an end-to-end CPU run, large enough that the
        // teacher saturates the synthetic tasks.
        c.difficulty = 1;
        c.train_count = 384;
        c.dev_count = 40;
        c.eval_count = 25;
        c.demo_pool = 8;
        c.max_demos_in_train = 1;
        c.vocab_budget = 512;
        c.teacher = ModelConfig{4, 4, 128, 256, 0, 384};
        c.student = ModelConfig{2, 2, 64, 128, 0, 384};
        c.teacher_sft.learning_rate = 1e-3;
        c.teacher_sft.batch_size = 8;
        c.teacher_sft.total_steps = 2400;
        c.teacher_sft.lr_schedule = "cosine";
        c.teacher_sft.warmup_steps = 100;
        c.teacher_sft.epochs = 100;
        c.teacher_sft.checkpoint_interval = 400;
        c.teacher_sft.max_prompt_length = 384;
        c.distill.learning_rate = 1e-3;
        c.distill.lr_schedule = "cosine";
        c.distill.warmup_steps = 100;
        c.distill.batch_size = 6;
        c.distill.dev_eval_limit = 32;
        c.distill.total_steps = 2000;
        c.distill.epochs = 100;
        c.distill.checkpoint_interval = 500;
        c.distill.max_prompt_length = 384;
        c.eval_k = 1;
        c.eval_decode.temperature = 0.0;
        c.eval_decode.max_new_tokens = 120;
    } else if (name == "paper") {
        c.difficulty = 3;
        c.train_count = 2000;
        c.dev_count = 400;
        c.eval_count = 250;
        c.demo_pool = 16;
        c.max_demos_in_train = 3;
        c.vocab_budget = 32000;
        c.teacher = ModelConfig{12, 12, 768, 3072, 0, 512};
        c.student = ModelConfig{6, 8, 512, 2048, 0, 512};
        c.teacher_sft = DistillConfig{};  // tau 1, lr 5e-6, batch 16, 20000 steps,
        c.distill = DistillConfig{};      // 10 epochs, checkpoints every 1000
        c.distill.lora = LoraConfig{};    // r 32, alpha 32, dropout 0.1
        c.eval_k = 3;
        c.eval_decode.temperature = 0.2;
        c.eval_decode.max_new_tokens = 128;
    } else {
        throw ValidationError("unknown preset: " + name);
    }
    std::vector<std::string> keys;
    flatten_keys(config_values(c), "", keys);
    for (const auto& k : keys) c.provenance[k] = "preset";
    return c;
}

void RunConfig::apply_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("config file not readable: " + path);
    json overlay = json::parse(in);
    json values = config_values(*this);
    std::vector<std::string> keys;
    flatten_keys(overlay, "", keys);
    for (const auto& k : keys) {
        json* src = navigate(overlay, k, false);
        json* dst = navigate(values, k, false);
        if (!dst) throw ValidationError("config file: unknown key " + k);
        *dst = *src;
        provenance[k] = "file";
    }
    config_from_values(*this, values);
}

void RunConfig::apply_flag(const std::string& dotted_key, const std::string& value) {
    json values = config_values(*this);
    json* dst = navigate(values, dotted_key, false);
    if (!dst) throw ValidationError("unknown config key: " + dotted_key);
    json parsed;
    try {
        parsed = json::parse(value);
    } catch (...) {
        parsed = value;  // bare strings
    }
    if (dst->is_string() && !parsed.is_string()) parsed = value;
    *dst = parsed;
    provenance[dotted_key] = "flag";
    config_from_values(*this, values);
}

std::string RunConfig::to_json() const {
    json j = config_values(*this);
    j["provenance"] = provenance;
    return j.dump(2);
}

void write_run_config(const std::string& dir, const RunConfig& cfg) {
    fs::create_directories(dir);
    std::ofstream out(fs::path(dir) / "run_config.json", std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write run_config.json under " + dir);
    out << cfg.to_json() << '\n';
}

// ---- stages ---------------------------------------------------------------

namespace {

std::string kind_path(const std::string& dir, TaskKind k, const std::string& suffix) {
    return (fs::path(dir) / (task_kind_name(k) + suffix)).string();
}

// Accepts either a checkpoint dir itself or a stage output dir holding final/.
std::string resolve_model_dir(const std::string& dir) {
    if (fs::exists(fs::path(dir) / "manifest.json")) return dir;
    const std::string final_dir = (fs::path(dir) / "final").string();
    if (fs::exists(fs::path(final_dir) / "manifest.json")) return final_dir;
    throw ValidationError("no model checkpoint found under " + dir);
}

TokenizerSpec load_data_tokenizer(const std::string& data_dir) {
    return TokenizerSpec::load((fs::path(data_dir) / "tokenizer.json").string());
}

std::vector<TrainingSequence> load_split(const std::string& data_dir, const std::string& split,
                                         RenderMode mode) {
    const std::string name = split + "." + render_mode_name(mode) + ".jsonl";
    return load_sequences_jsonl((fs::path(data_dir) / name).string());
}

std::vector<EvalTask> load_eval_tasks(const RunConfig& cfg, const std::string& tasks_dir) {
    std::vector<EvalTask> tasks;
    for (auto k : cfg.kinds) tasks.push_back(load_task(kind_path(tasks_dir, k, ".task.json")));
    return tasks;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write " + path);
    out << text;
}

}  // namespace

void stage_gen_tasks(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::set<std::string> lexicon;
    for (auto kind : cfg.kinds) {
        GenParams p;
        p.kind = kind;
        p.difficulty = cfg.difficulty;
        p.train_count = cfg.train_count;
        p.dev_count = cfg.dev_count;
        p.eval_count = cfg.eval_count;
        p.demo_pool = cfg.demo_pool;
        p.max_demos_in_train = cfg.max_demos_in_train;
        p.seed = cfg.seed;
        GeneratedTask task = generate_task(p);
        save_examples_jsonl(kind_path(out_dir, kind, ".train.jsonl"), task.train);
        save_examples_jsonl(kind_path(out_dir, kind, ".dev.jsonl"), task.dev);
        save_task(kind_path(out_dir, kind, ".task.json"), task.eval);
        for (const auto& w : task_lexicon(kind, cfg.difficulty)) lexicon.insert(w);
    }
    std::string lex_text;
    for (const auto& w : lexicon) lex_text += w + "\n";
    write_text((fs::path(out_dir) / "lexicon.txt").string(), lex_text);
    write_run_config(out_dir, cfg);
}

void stage_prepare_data(const RunConfig& cfg, const std::string& tasks_dir,
                        const std::string& out_dir, bool strip) {
    fs::create_directories(out_dir);
    std::vector<TrainingExample> train, dev;
    std::vector<MalformedLine> malformed;
    for (auto kind : cfg.kinds) {
        for (auto* split : {"train", "dev"}) {
            LoadReport rep = load_cot_records(kind_path(tasks_dir, kind, std::string(".") + split +
                                                                             ".jsonl"));
            auto& dst = std::string(split) == "train" ? train : dev;
            dst.insert(dst.end(), rep.examples.begin(), rep.examples.end());
            malformed.insert(malformed.end(), rep.malformed.begin(), rep.malformed.end());
        }
    }
    if (strip) {
        train = strip_rationales(std::move(train));
        dev = strip_rationales(std::move(dev));
    }

    std::vector<std::string> corpus;
    const fs::path lex = fs::path(tasks_dir) / "lexicon.txt";
    if (fs::exists(lex)) {
        std::ifstream in(lex, std::ios::binary);
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) corpus.push_back(line);
    }
    for (const auto* split : {&train, &dev})
        for (const auto& ex : *split) {
            corpus.push_back(ex.instruction);
            if (ex.rationale) corpus.push_back(*ex.rationale);
            corpus.push_back(ex.answer);
        }
    TokenizerSpec tokenizer = TokenizerSpec::build(corpus, cfg.vocab_budget);
    tokenizer.save((fs::path(out_dir) / "tokenizer.json").string());

    const size_t max_len = size_t(cfg.distill.max_prompt_length);
    size_t longest = 0;
    auto render_split = [&](const std::vector<TrainingExample>& exs, const std::string& split,
                            RenderMode mode) {
        std::vector<TrainingSequence> seqs;
        for (const auto& ex : exs) {
            seqs.push_back(render_training_sequence(ex, mode, tokenizer, max_len,
                                                    cfg.loss_on_prompt));
            longest = std::max(longest, seqs.back().ids.size());
        }
        save_sequences_jsonl(
            (fs::path(out_dir) / (split + "." + render_mode_name(mode) + ".jsonl")).string(), seqs);
        return seqs.size();
    };
    json stats{{"train_examples", train.size()},
               {"dev_examples", dev.size()},
               {"vocab_size", tokenizer.size()},
               {"tokenizer_hash", hash_to_hex(tokenizer.content_hash())},
               {"stripped", strip},
               {"malformed_lines", malformed.size()}};
    if (!strip) {
        stats["train_cot_sequences"] = render_split(train, "train", RenderMode::CoT);
        stats["dev_cot_sequences"] = render_split(dev, "dev", RenderMode::CoT);
    }
    stats["train_vanilla_sequences"] = render_split(train, "train", RenderMode::Vanilla);
    stats["dev_vanilla_sequences"] = render_split(dev, "dev", RenderMode::Vanilla);
    stats["longest_sequence"] = longest;
    write_text((fs::path(out_dir) / "stats.json").string(), stats.dump(2) + "\n");
    save_malformed_report((fs::path(out_dir) / "malformed.json").string(), malformed);
    write_run_config(out_dir, cfg);
}

void stage_train_teacher(const RunConfig& cfg, const std::string& data_dir,
                         const std::string& out_dir) {
    TokenizerSpec tokenizer = load_data_tokenizer(data_dir);
    auto train = load_split(data_dir, "train", RenderMode::CoT);
    auto dev = load_split(data_dir, "dev", RenderMode::CoT);
    ModelConfig mc = cfg.teacher;
    mc.vocab_size = int(tokenizer.size());
    mc.validate();
    Model teacher = build_model(mc, cfg.seed, tokenizer.content_hash());
    write_run_config(out_dir, cfg);
    Model trained = supervised_finetune(std::move(teacher), train, dev, cfg.teacher_sft, out_dir);
    save_model((fs::path(out_dir) / "final").string(), trained,
               json{{"role", "teacher"}}.dump());
}

void stage_distill(const RunConfig& cfg, const std::string& data_dir,
                   const std::string& teacher_dir, const std::string& out_dir, RenderMode mode,
                   KlDirection kl, bool use_lora) {
    TokenizerSpec tokenizer = load_data_tokenizer(data_dir);
    Model teacher = load_model(resolve_model_dir(teacher_dir));
    if (teacher.tokenizer_hash != tokenizer.content_hash())
        throw ValidationError(
            "distill: teacher tokenizer hash does not match the prepared data; refusing to "
            "train against a mismatched vocabulary");
    auto train = load_split(data_dir, "train", mode);
    auto dev = load_split(data_dir, "dev", mode);

    ModelConfig mc = cfg.student;
    mc.vocab_size = int(tokenizer.size());
    mc.validate();
    Model student = build_model(mc, cfg.seed + 1, tokenizer.content_hash());
    DistillConfig dc = cfg.distill;
    dc.kl_direction = kl;
    if (use_lora && !dc.lora) dc.lora = LoraConfig{};
    if (!use_lora) dc.lora.reset();
    if (dc.lora) student = inject_lora(student, *dc.lora, cfg.seed + 2);

    write_run_config(out_dir, cfg);
    RunResult result = run_distillation(teacher, std::move(student), train, dev, dc, out_dir);

    json cks = json::array();
    for (const auto& ck : result.checkpoints)
        cks.push_back({{"step", ck.step},
                       {"snapshot_dir", ck.snapshot_dir},
                       {"train_loss", ck.train_loss},
                       {"dev_loss", ck.dev_loss},
                       {"config_hash", ck.config_hash}});
    json log = json::array();
    for (const auto& e : result.log) {
        json entry{{"step", e.step}, {"train_loss", e.train_loss}, {"wall_clock_sec", e.wall_clock_sec}};
        if (e.dev_loss) entry["dev_loss"] = *e.dev_loss;
        log.push_back(entry);
    }
    write_text((fs::path(out_dir) / "checkpoints.json").string(),
               json{{"mode", render_mode_name(mode)},
                    {"kl_direction", kl_direction_name(kl)},
                    {"checkpoints", cks},
                    {"log", log}}
                       .dump(2) +
                   "\n");
    // Mirror the last snapshot to final/ so downstream stages have a stable path.
    Model final_student = load_model(result.checkpoints.back().snapshot_dir);
    save_model((fs::path(out_dir) / "final").string(), final_student,
               json{{"role", "student"}, {"mode", render_mode_name(mode)}}.dump());
}

std::vector<Checkpoint> load_checkpoints_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    json j = json::parse(in);
    std::vector<Checkpoint> out;
    for (const auto& c : j.at("checkpoints"))
        out.push_back({c.at("step"), c.at("snapshot_dir"), c.at("train_loss"), c.at("dev_loss"),
                       c.at("config_hash")});
    return out;
}

double mean_eval_score(const RunConfig& cfg, const Model& model, const TokenizerSpec& tokenizer,
                       const std::string& tasks_dir) {
    const auto tasks = load_eval_tasks(cfg, tasks_dir);
    double sum = 0.0;
    for (const auto& t : tasks) sum += score_task(model, tokenizer, t, cfg.eval_decode, cfg.eval_k);
    return sum / double(tasks.size());
}

EvalReport stage_eval(const RunConfig& cfg, const std::vector<std::string>& variants,
                      const std::map<std::string, std::string>& variant_dirs,
                      const std::string& data_dir, const std::string& tasks_dir,
                      const std::string& out_dir) {
    TokenizerSpec tokenizer = load_data_tokenizer(data_dir);
    const auto tasks = load_eval_tasks(cfg, tasks_dir);
    std::vector<TaskScore> scores;
    for (const auto& t : tasks)
        scores.push_back({t.name, t.category, int(t.questions.size()), {}});
    for (const auto& variant : variants) {
        Model model = load_model(resolve_model_dir(variant_dirs.at(variant)));
        if (model.tokenizer_hash != tokenizer.content_hash())
            throw ValidationError("eval: model " + variant + " has a mismatched tokenizer hash");
        for (size_t i = 0; i < tasks.size(); ++i)
            scores[i].percent[variant] =
                score_task(model, tokenizer, tasks[i], cfg.eval_decode, cfg.eval_k);
    }
    EvalReport report = aggregate_report(scores, variants);
    fs::create_directories(out_dir);
    write_text((fs::path(out_dir) / "report.json").string(), report_to_json(report) + "\n");
    write_text((fs::path(out_dir) / "report.md").string(), render_report_markdown(report));
    json tasks_json = json::array();
    for (const auto& ts : scores)
        tasks_json.push_back({{"name", ts.task_name},
                              {"category", category_name(ts.category)},
                              {"questions", ts.question_count},
                              {"scores", ts.percent}});
    write_text((fs::path(out_dir) / "scores.json").string(),
               json{{"variants", variants}, {"tasks", tasks_json}}.dump(2) + "\n");
    write_run_config(out_dir, cfg);
    return report;
}

BestCheckpointReport stage_select_best(const RunConfig& cfg, const std::string& run_dir,
                                       const std::string& data_dir, const std::string& tasks_dir,
                                       const std::string& out_dir) {
    TokenizerSpec tokenizer = load_data_tokenizer(data_dir);
    auto checkpoints = load_checkpoints_json((fs::path(run_dir) / "checkpoints.json").string());
    auto report = select_best_checkpoint(checkpoints, [&](const Checkpoint& ck) {
        return mean_eval_score(cfg, load_model(ck.snapshot_dir), tokenizer, tasks_dir);
    });
    fs::create_directories(out_dir);
    json table = json::array();
    for (const auto& row : report.table) {
        json entry{{"step", row.checkpoint.step}, {"snapshot_dir", row.checkpoint.snapshot_dir}};
        if (row.score) entry["score"] = *row.score;
        if (!row.error.empty()) entry["error"] = row.error;
        table.push_back(entry);
    }
    write_text((fs::path(out_dir) / "selection.json").string(),
               json{{"best_step", report.best.step},
                    {"best_dir", report.best.snapshot_dir},
                    {"table", table}}
                       .dump(2) +
                   "\n");
    write_run_config(out_dir, cfg);
    return report;
}

std::vector<TimingStats> stage_bench(const RunConfig& cfg,
                                     const std::map<std::string, std::string>& variant_dirs,
                                     const std::string& data_dir, const std::string& tasks_dir,
                                     const std::string& out_dir, const std::string& teacher_name) {
    TokenizerSpec tokenizer = load_data_tokenizer(data_dir);
    const auto tasks = load_eval_tasks(cfg, tasks_dir);
    std::vector<std::string> suite;
    for (const auto& t : tasks)
        suite.push_back(build_fewshot_prompt(t, t.questions.at(0).input, cfg.eval_k));

    std::vector<Model> models;
    models.reserve(variant_dirs.size());
    std::vector<BenchEntry> entries;
    for (const auto& [name, dir] : variant_dirs) {
        models.push_back(load_model(resolve_model_dir(dir)));
        entries.push_back({name, &models.back()});
    }
    auto stats = bench_inference(entries, tokenizer, suite, cfg.eval_decode, 5, teacher_name);
    fs::create_directories(out_dir);
    json j = json::array();
    for (const auto& s : stats)
        j.push_back({{"model", s.model_name},
                     {"parameters", s.parameter_count},
                     {"median_seconds", s.median_seconds},
                     {"ratio_vs_teacher", s.ratio_vs_teacher}});
    write_text((fs::path(out_dir) / "timing.json").string(), j.dump(2) + "\n");
    write_text((fs::path(out_dir) / "timing.md").string(),
               render_timing_markdown(stats, teacher_name));
    write_run_config(out_dir, cfg);
    return stats;
}

EvalReport stage_report(const std::string& scores_path, const std::string& out_dir) {
    std::vector<std::string> variants;
    const auto scores = load_task_scores(scores_path, variants);
    EvalReport report = aggregate_report(scores, variants);
    fs::create_directories(out_dir);
    write_text((fs::path(out_dir) / "report.json").string(), report_to_json(report) + "\n");
    write_text((fs::path(out_dir) / "report.md").string(), render_report_markdown(report));
    return report;
}

}  // namespace kdcot
