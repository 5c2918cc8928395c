// Acceptance suite: run with a criterion number 1..9; prints exactly one
// PASS/FAIL line for that criterion and exits 0/1.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kdcot/pipeline.hpp"

using namespace kdcot;
namespace fs = std::filesystem;

namespace {

struct Failure {
    std::string what;
};

void require(bool cond, const std::string& what) {
    if (!cond) throw Failure{what};
}

std::string data_dir() {
    const char* env = std::getenv("KDCOT_DATA_DIR");
    return env ? env : "data";
}

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("kdcot_acceptance_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- criterion 1: reference-table arithmetic --------------------------------

std::string criterion1() {
    std::vector<std::string> variants;
    auto scores = load_task_scores(data_dir() + "/bbh_reference_scores.json", variants);
    require(scores.size() == 27, "expected 27 reference tasks");
    auto rep = aggregate_report(scores, variants);
    auto r2 = [](double v) { return round2(v); };
    require(r2(rep.overall_mean.at("baseline")) == 17.77, "baseline mean != 17.77");
    require(r2(rep.overall_mean.at("kd")) == 23.10, "kd mean != 23.10");
    require(r2(rep.overall_mean.at("kd_cot")) == 24.44, "kd_cot mean != 24.44");
    require(std::abs(rep.overall_gain.at("kd").rounded() - 30.00) <= 0.011,
            "kd gain not within 0.01 of +30.00");
    require(std::abs(rep.overall_gain.at("kd_cot").rounded() - 37.54) <= 0.011,
            "kd_cot gain not within 0.01 of +37.54");
    // Zero-baseline rows report absolute gains.
    Gain g = relative_gain(0.00, 11.60);
    require(g.kind == Gain::Kind::Absolute && g.to_string() == "+11.60%, abs.",
            "zero-baseline gain must be absolute");
    std::ostringstream os;
    os << "means 17.77/23.10/24.44, gains " << rep.overall_gain.at("kd").to_string() << "/"
       << rep.overall_gain.at("kd_cot").to_string();
    return os.str();
}

// ---- criterion 2: KL loss vs a closed-form oracle ----------------------------

double oracle_kl(const TensorData<float>& tl, const TensorData<float>& sl,
                 const std::vector<uint8_t>& mask, double tau, KlDirection dir) {
    // Independent implementation: explicit normalized probabilities.
    const int64_t rows = tl.shape[0], n = tl.shape[1];
    double total = 0.0;
    int64_t count = 0;
    for (int64_t t = 0; t < rows; ++t) {
        if (!mask[size_t(t)]) continue;
        std::vector<double> p(static_cast<size_t>(n), 0.0);
        std::vector<double> q(static_cast<size_t>(n), 0.0);
        double zp = 0.0, zq = 0.0;
        for (int64_t v = 0; v < n; ++v) {
            p[size_t(v)] = std::exp(double(tl.data[t * n + v]) / tau);
            q[size_t(v)] = std::exp(double(sl.data[t * n + v]) / tau);
            zp += p[size_t(v)];
            zq += q[size_t(v)];
        }
        double kl = 0.0;
        for (int64_t v = 0; v < n; ++v) {
            const double a = p[size_t(v)] / zp, b = q[size_t(v)] / zq;
            if (dir == KlDirection::Forward)
                kl += a * std::log(a / b);
            else
                kl += b * std::log(b / a);
        }
        total += kl;
        ++count;
    }
    return total / double(count) * tau * tau;
}

std::string criterion2() {
    Rng rng(0xacce97);
    double max_dev = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 2 + int(rng.below(63));
        const int rows = 1 + int(rng.below(4));
        TensorData<float> tl = TensorData<float>::zeros({rows, n});
        TensorData<float> sl = TensorData<float>::zeros({rows, n});
        for (auto& v : tl.data) v = float(rng.normal() * 2.0);
        for (auto& v : sl.data) v = float(rng.normal() * 2.0);
        std::vector<uint8_t> mask(size_t(rows), 0);
        mask[rng.below(uint64_t(rows))] = 1;
        for (auto& m : mask) m = m | uint8_t(rng.uniform() < 0.5);
        const double tau = 0.5 + rng.uniform() * 3.5;
        const KlDirection dir = rng.uniform() < 0.5 ? KlDirection::Forward : KlDirection::Reverse;

        const double got = distillation_loss(tl, sl, mask, tau, dir);
        const double want = oracle_kl(tl, sl, mask, tau, dir);
        max_dev = std::max(max_dev, std::abs(got - want));
        require(std::abs(got - want) < 1e-6, "loss deviates from the closed-form oracle");
        require(got >= 0.0, "loss must be non-negative");
        require(std::abs(distillation_loss(tl, tl, mask, tau, dir)) < 1e-7,
                "identical logits must give zero loss");
        require(got > 1e-9, "distinct random distributions must give positive loss");

        // Masked-out rows are inert.
        TensorData<float> sl2 = sl;
        bool touched = false;
        for (int64_t t = 0; t < rows; ++t)
            if (!mask[size_t(t)]) {
                for (int64_t v = 0; v < n; ++v) sl2.data[t * n + v] += 50.0f;
                touched = true;
            }
        if (touched)
            require(distillation_loss(tl, sl2, mask, tau, dir) == got,
                    "masked-out positions altered the loss");
    }
    std::ostringstream os;
    os << "1000 pairs, max |deviation| " << max_dev;
    return os.str();
}

// ---- criterion 3: gradient fidelity through the full forward -----------------

std::string criterion3() {
    ModelConfig c;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_model = 8;
    c.d_ff = 16;
    c.vocab_size = 12;
    c.max_seq_len = 8;
    const std::vector<std::string> vary = {"layers/0/attn/wq", "layers/0/ff/w1",
                                           "final_ln/gamma", "lm_head"};
    const std::vector<int> ids = {TokenizerSpec::kBos, 6, 7, 8, 9};
    const std::vector<uint8_t> mask = {0, 0, 1, 1, 1};
    double worst = 0.0;
    for (uint64_t seed = 0; seed < 50; ++seed) {
        Model student = build_model(c, seed);
        Model teacher = build_model(c, seed + 1000);
        TensorData<double> tlogits = forward_logits(teacher, ids).cast<double>();
        const std::string path = vary[size_t(seed % vary.size())];

        GradCheckFn fn = [&](Tape<double>& t, const std::vector<Tape<double>::NodeId>& xs) {
            auto P = register_params<double>(t, student, false);
            P.ids[path] = xs[0];
            auto logits = forward_logits_on_tape<double>(t, P, c, std::nullopt, ids, nullptr);
            return distillation_loss_node_t<double>(t, tlogits, logits, mask, 2.0,
                                                    KlDirection::Forward);
        };
        // The five-point stencil kills truncation error, so a generous step
        // keeps 64-bit roundoff well below the tolerance even on coordinates
        // whose gradient is orders of magnitude below the rest of the matrix.
        const double err = grad_check(fn, {student.param(path).cast<double>()}, 1e-2);
        worst = std::max(worst, err);
        require(err < 1e-4, "gradient check exceeded 1e-4 at seed " + std::to_string(seed) +
                               " on " + path);
    }
    std::ostringstream os;
    os << "50 seeded points, max relative error " << worst;
    return os.str();
}

// ---- criterion 4: adapter contract -------------------------------------------

std::string criterion4() {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 32;
    c.d_ff = 64;
    c.vocab_size = 48;
    c.max_seq_len = 32;
    Model teacher = build_model(c, 1);
    Model base = build_model(c, 2);
    LoraConfig lc;
    lc.rank = 4;
    lc.dropout = 0.0;
    Model student = inject_lora(base, lc, 3);

    // Identity at init, bit-exact.
    const std::vector<int> probe = {TokenizerSpec::kBos, 10, 11, 12, 13};
    auto a = forward_logits(base, probe);
    auto b = forward_logits(student, probe);
    for (size_t i = 0; i < a.data.size(); ++i)
        require(a.data[i] == b.data[i], "adapter init must not change any logit bit");

    // Trainable count.
    int64_t expected = 0;
    for (const auto& [path, p] : base.params)
        for (const auto& pat : lc.target_patterns)
            if (path.size() >= pat.size() && path.compare(path.size() - pat.size(), pat.size(), pat) == 0)
                expected += int64_t(lc.rank) * (p.tensor.shape[0] + p.tensor.shape[1]);
    require(student.trainable_parameter_count() == expected,
            "trainable count != sum r*(d_in+d_out)");

    // 100 distillation steps leave the base bits alone.
    std::vector<std::pair<std::string, std::vector<float>>> before;
    for (const auto& [path, p] : student.params)
        if (!p.trainable) before.push_back({path, p.tensor.data});
    Rng seq_rng(5);
    std::vector<TrainingSequence> batch;
    for (int i = 0; i < 4; ++i) {
        TrainingSequence s;
        s.ids.push_back(TokenizerSpec::kBos);
        for (int t = 0; t < 11; ++t)
            s.ids.push_back(int(TokenizerSpec::kNumSpecials + seq_rng.below(40)));
        s.loss_mask.assign(s.ids.size(), 0);
        for (size_t t = s.ids.size() / 2; t < s.ids.size(); ++t) s.loss_mask[t] = 1;
        batch.push_back(std::move(s));
    }
    DistillConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 4;
    cfg.max_prompt_length = 32;
    cfg.lora = lc;
    auto opt = OptimizerState::init(student);
    Rng drop(0);
    for (int step = 0; step < 100; ++step) distill_step(teacher, student, batch, opt, cfg, drop);
    for (const auto& [path, data] : before) {
        const auto& now = student.params.at(path).tensor.data;
        for (size_t i = 0; i < data.size(); ++i)
            require(data[i] == now[i], "frozen base weight changed: " + path);
    }
    require(student.parameter_hash() != inject_lora(base, lc, 3).parameter_hash(),
            "adapters did not train at all");
    return "identity at init, trainable count " + std::to_string(expected) +
           ", base bits stable over 100 steps";
}

// ---- criterion 5: frozen teacher and shared-vocabulary guards ----------------

std::string criterion5() {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 32;
    c.d_ff = 64;
    c.vocab_size = 48;
    c.max_seq_len = 32;
    Model teacher = build_model(c, 1, 0x77);
    Model student = build_model(c, 2, 0x77);
    Rng seq_rng(5);
    std::vector<TrainingSequence> train, dev;
    for (int i = 0; i < 8; ++i) {
        TrainingSequence s;
        s.ids.push_back(TokenizerSpec::kBos);
        for (int t = 0; t < 11; ++t)
            s.ids.push_back(int(TokenizerSpec::kNumSpecials + seq_rng.below(40)));
        s.loss_mask.assign(s.ids.size(), 0);
        for (size_t t = s.ids.size() / 2; t < s.ids.size(); ++t) s.loss_mask[t] = 1;
        (i < 6 ? train : dev).push_back(std::move(s));
    }
    DistillConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 2;
    cfg.total_steps = 12;
    cfg.epochs = 100;
    cfg.checkpoint_interval = 6;
    cfg.max_prompt_length = 32;

    const uint64_t teacher_hash = teacher.parameter_hash();
    fs::path dir = scratch("c5");
    run_distillation(teacher, student, train, dev, cfg, (dir / "run").string());
    require(teacher.parameter_hash() == teacher_hash,
            "teacher parameters changed during the run");

    Model other = build_model(c, 3, 0x99);  // different tokenizer hash
    const uint64_t before = other.parameter_hash();
    bool threw = false;
    try {
        run_distillation(teacher, other, train, dev, cfg, (dir / "bad").string());
    } catch (const ValidationError&) {
        threw = true;
    }
    require(threw, "mismatched tokenizer hashes must abort");
    require(other.parameter_hash() == before, "aborted run must not update the student");
    require(!fs::exists(dir / "bad" / "step_000006"), "aborted run must not write step snapshots");
    fs::remove_all(dir);
    return "teacher hash constant; vocabulary mismatch aborts before step 1";
}

// ---- criterion 6: end-to-end desk experiment ----------------------------------

std::string criterion6() {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = RunConfig::from_preset("desk");
    fs::path W = scratch("c6");

    stage_gen_tasks(cfg, (W / "tasks").string());
    stage_prepare_data(cfg, (W / "tasks").string(), (W / "data").string(), false);
    stage_train_teacher(cfg, (W / "data").string(), (W / "teacher").string());

    auto tokenizer = TokenizerSpec::load((W / "data" / "tokenizer.json").string());
    Model teacher = load_model((W / "teacher" / "final").string());

    std::ostringstream detail;
    detail.setf(std::ios::fixed);
    detail.precision(2);
    for (TaskKind kind : cfg.kinds) {
        EvalTask task = load_task((W / "tasks" / (task_kind_name(kind) + ".task.json")).string());
        const double pct = score_task(teacher, tokenizer, task, cfg.eval_decode, cfg.eval_k);
        detail << task_kind_name(kind) << " " << pct << "% ";
        require(pct >= 90.0, "teacher below 90% on " + task_kind_name(kind) + " (" +
                                 std::to_string(pct) + "%)");
    }

    // Untrained-student baseline.
    Model untrained = build_model(cfg.student, cfg.seed + 1, tokenizer.content_hash());
    save_model((W / "student0").string(), untrained);
    const double baseline = mean_eval_score(cfg, untrained, tokenizer, (W / "tasks").string());

    stage_distill(cfg, (W / "data").string(), (W / "teacher").string(),
                  (W / "distill_cot").string(), RenderMode::CoT, KlDirection::Forward, false);
    stage_distill(cfg, (W / "data").string(), (W / "teacher").string(),
                  (W / "distill_vanilla").string(), RenderMode::Vanilla, KlDirection::Forward,
                  false);

    // Dev KL must at least halve over the CoT run.
    std::ifstream in((W / "distill_cot" / "checkpoints.json").string());
    require(bool(in), "missing checkpoints.json");
    std::stringstream buf;
    buf << in.rdbuf();
    double initial_kl = -1.0, final_kl = -1.0;
    {
        auto cks = load_checkpoints_json((W / "distill_cot" / "checkpoints.json").string());
        require(!cks.empty(), "no checkpoints recorded");
        final_kl = cks.back().dev_loss;
        // The step-0 log entry carries the pre-training dev loss.
        const std::string& text = buf.str();
        const size_t pos = text.find("\"step\":0");
        require(pos != std::string::npos, "no step-0 log entry");
        const size_t dpos = text.rfind("\"dev_loss\":", pos);
        require(dpos != std::string::npos, "step-0 entry lacks dev loss");
        initial_kl = std::stod(text.substr(dpos + 11));
    }
    require(final_kl <= 0.5 * initial_kl, "final dev KL " + std::to_string(final_kl) +
                                              " not <= half of initial " +
                                              std::to_string(initial_kl));

    // Best CoT checkpoint beats the untrained student by 20 points.
    auto best = stage_select_best(cfg, (W / "distill_cot").string(), (W / "data").string(),
                                  (W / "tasks").string(), (W / "select").string());
    Model best_student = load_model(best.best.snapshot_dir);
    const double best_score = mean_eval_score(cfg, best_student, tokenizer, (W / "tasks").string());
    require(best_score >= baseline + 20.0,
            "best student " + std::to_string(best_score) + "% vs untrained " +
                std::to_string(baseline) + "%: gain below 20 points");

    // Comparative report across all four variants.
    std::map<std::string, std::string> dirs = {
        {"baseline", (W / "student0").string()},
        {"kd", (W / "distill_vanilla").string()},
        {"kd_cot", best.best.snapshot_dir},
        {"teacher", (W / "teacher").string()}};
    auto rep = stage_eval(cfg, {"baseline", "kd", "kd_cot", "teacher"}, dirs,
                          (W / "data").string(), (W / "tasks").string(), (W / "report").string());
    require(fs::exists(W / "report" / "report.md"), "comparative report not written");

    const double secs = elapsed_since(t0);
    require(secs < 1800.0, "end-to-end run exceeded 30 minutes");
    detail << "| untrained " << baseline << "%, best CoT student " << best_score << "%, dev KL "
           << initial_kl << " -> " << final_kl << ", kd mean "
           << rep.overall_mean.at("kd") << "%, kd_cot mean " << rep.overall_mean.at("kd_cot")
           << "%, " << int(secs) << "s";
    return detail.str();
}

// ---- criterion 7: evaluation protocol fidelity --------------------------------

std::string criterion7() {
    EvalTask task;
    task.name = "protocol";
    task.instruction = "Answer .";
    for (int i = 0; i < 5; ++i)
        task.demos.push_back({"q" + std::to_string(i),
                              "Let's think step by step . So the answer is " + std::to_string(i) +
                                  " ."});
    const std::string p = build_fewshot_prompt(task, "final ?", 3);
    size_t count = 0, pos = 0;
    while ((pos = p.find("So the answer is", pos)) != std::string::npos) {
        ++count;
        pos += 1;
    }
    require(count == 3, "prompt must contain exactly 3 demonstrations");

    auto i1 = extract_answer("blah . So the answer is (B).");
    require(i1 && *i1 == "(B)", "fixture (i) failed");
    auto i2 = extract_answer("So the answer is (C) 12pm to 2pm.");
    require(i2 && *i2 == "(C)", "fixture (ii) failed");

    // Temperature-0 eval is byte-deterministic.
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 32;
    c.d_ff = 64;
    c.vocab_size = 0;
    c.max_seq_len = 128;
    auto tok = TokenizerSpec::build({"Q : A : So the answer is True False . ? q final"}, 64);
    c.vocab_size = int(tok.size());
    Model m = build_model(c, 9, tok.content_hash());
    EvalTask t2 = task;
    t2.questions = {{"q ?", "True"}, {"final ?", "False"}};
    DecodeParams d;
    d.temperature = 0.0;
    d.max_new_tokens = 24;
    const double s1 = score_task(m, tok, t2, d, 3);
    const double s2 = score_task(m, tok, t2, d, 3);
    require(s1 == s2, "temperature-0 eval must be deterministic");
    return "3-shot prompts, extraction fixtures, deterministic temp-0 eval";
}

// ---- criterion 8: inference-time benchmark ------------------------------------

std::string criterion8() {
    RunConfig cfg = RunConfig::from_preset("desk");
    fs::path W = scratch("c8");
    stage_gen_tasks(cfg, (W / "tasks").string());
    stage_prepare_data(cfg, (W / "tasks").string(), (W / "data").string(), false);
    auto tokenizer = TokenizerSpec::load((W / "data" / "tokenizer.json").string());

    ModelConfig tc = cfg.teacher, sc = cfg.student;
    tc.vocab_size = sc.vocab_size = int(tokenizer.size());
    Model teacher = build_model(tc, 1, tokenizer.content_hash());
    Model student = build_model(sc, 2, tokenizer.content_hash());

    std::vector<std::string> suite;
    for (TaskKind kind : cfg.kinds) {
        EvalTask task = load_task((W / "tasks" / (task_kind_name(kind) + ".task.json")).string());
        suite.push_back(build_fewshot_prompt(task, task.questions.at(0).input, cfg.eval_k));
    }
    DecodeParams d = cfg.eval_decode;
    d.max_new_tokens = 48;
    auto stats = bench_inference({{"teacher", &teacher}, {"student", &student}}, tokenizer, suite,
                                 d, 3, "teacher");
    double ratio = -1.0;
    for (const auto& s : stats)
        if (s.model_name == "student") ratio = s.ratio_vs_teacher;
    require(ratio > 0.0 && ratio < 1.0,
            "student/teacher ratio must be below 1.0, got " + std::to_string(ratio));
    const std::string md = render_timing_markdown(stats, "teacher");
    require(md.find("% of the teacher's inference time") != std::string::npos,
            "timing report must render percentage-style ratios");
    fs::remove_all(W);
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << "student/teacher ratio " << ratio;
    return os.str();
}

// ---- criterion 9: data-pipeline properties ------------------------------------

std::string criterion9() {
    std::vector<TrainingExample> recs(10000);
    for (size_t i = 0; i < recs.size(); ++i) {
        recs[i].id = std::to_string(i);
        recs[i].instruction = "inst " + std::to_string(i);
        recs[i].rationale = "because " + std::to_string(i);
        recs[i].answer = std::to_string(i % 7);
    }
    auto once = strip_rationales(recs);
    require(once.size() == recs.size(), "strip must preserve the record count");
    for (const auto& e : once) require(!e.rationale.has_value(), "rationale survived stripping");
    auto twice = strip_rationales(once);
    require(twice.size() == once.size(), "second strip changed the count");
    for (size_t i = 0; i < once.size(); ++i)
        require(twice[i].id == once[i].id && twice[i].answer == once[i].answer,
                "strip must not touch other fields");

    // The published 1.84M-rationale split.
    std::vector<TrainingExample> big(1840000);
    for (size_t i = 0; i < big.size(); ++i) big[i].id = std::to_string(i);
    auto [train, dev] = split_train_dev(std::move(big), {1.44 / 1.84, 0});
    require(train.size() == 1440000, "train split must be exactly 1,440,000");
    require(dev.size() == 400000, "dev split must be exactly 400,000");
    train.clear();
    dev.clear();

    // No rendered sequence exceeds the 512-token context under the paper preset.
    RunConfig paper = RunConfig::from_preset("paper");
    GenParams gp;
    gp.difficulty = paper.difficulty;
    gp.train_count = 50;
    gp.dev_count = 10;
    gp.max_demos_in_train = paper.max_demos_in_train;
    size_t longest = 0;
    for (TaskKind kind : paper.kinds) {
        gp.kind = kind;
        auto g = generate_task(gp);
        std::vector<std::string> corpus = task_lexicon(kind, gp.difficulty);
        for (const auto& e : g.train) {
            corpus.push_back(e.instruction);
            if (e.rationale) corpus.push_back(*e.rationale);
        }
        auto tok = TokenizerSpec::build(corpus, paper.vocab_budget);
        for (const auto& e : g.train) {
            for (RenderMode mode : {RenderMode::CoT, RenderMode::Vanilla}) {
                auto seq = render_training_sequence(e, mode, tok,
                                                    size_t(paper.distill.max_prompt_length),
                                                    paper.loss_on_prompt);
                longest = std::max(longest, seq.ids.size());
                require(seq.ids.size() <= 512, "rendered sequence exceeds 512 tokens");
            }
        }
    }
    return "strip idempotent on 10k records, split 1440000/400000, longest paper sequence " +
           std::to_string(longest);
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: acceptance <criterion 1..9>\n");
        return 2;
    }
    const int n = std::atoi(argv[1]);
    using Fn = std::string (*)();
    const Fn fns[] = {criterion1, criterion2, criterion3, criterion4, criterion5,
                      criterion6, criterion7, criterion8, criterion9};
    if (n < 1 || n > 9) {
        std::fprintf(stderr, "usage: acceptance <criterion 1..9>\n");
        return 2;
    }
    try {
        const std::string detail = fns[n - 1]();
        std::printf("PASS criterion %d: %s\n", n, detail.c_str());
        return 0;
    } catch (const Failure& f) {
        std::printf("FAIL criterion %d: %s\n", n, f.what.c_str());
        return 1;
    } catch (const std::exception& e) {
        std::printf("FAIL criterion %d: unexpected error: %s\n", n, e.what());
        return 1;
    }
}
