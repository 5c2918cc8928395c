#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "kdcot/evalharness.hpp"

using namespace kdcot;

TEST_CASE("answer extraction handles option letters and trailing text") {
    auto a = extract_answer("Let's think step by step . True and True is True . So the answer is (B).");
    REQUIRE(a.has_value());
    CHECK(*a == "(B)");

    auto b = extract_answer("So the answer is (C) 12pm to 2pm.");
    REQUIRE(b.has_value());
    CHECK(*b == "(C)");

    CHECK_FALSE(extract_answer("no cue here").has_value());
}

TEST_CASE("answer extraction uses the last cue and tolerates spaced parentheses") {
    auto a = extract_answer("the answer is (A) . Wait . So the answer is ( C ) .");
    REQUIRE(a.has_value());
    CHECK(*a == "(C)");

    auto lit = extract_answer("So the answer is 42.");
    REQUIRE(lit.has_value());
    CHECK(*lit == "42");
}

TEST_CASE("normalization unifies option forms and case") {
    CHECK(normalize_answer("(B)") == normalize_answer("B"));
    CHECK(normalize_answer("(B)") == normalize_answer("b"));
    CHECK(normalize_answer("  True ") == normalize_answer("true"));
    CHECK(normalize_answer("12pm  to 2pm") == normalize_answer("12pm to 2pm"));
}

TEST_CASE("relative gain formats: relative, absolute fallback, zero") {
    CHECK(relative_gain(17.77, 24.44).to_string() == "+37.54%");
    Gain abs = relative_gain(0.00, 11.60);
    CHECK(abs.kind == Gain::Kind::Absolute);
    CHECK(abs.to_string() == "+11.60%, abs.");
    CHECK(relative_gain(33.33, 33.33).to_string() == "+0.00%");
}

TEST_CASE("aggregate means are unweighted over tasks") {
    TaskScore t1{"alpha", TaskCategory::AlgorithmicMultistepArithmetic, 100, {{"base", 10.0}, {"kd", 20.0}}};
    TaskScore t2{"beta", TaskCategory::WorldKnowledge, 10, {{"base", 30.0}, {"kd", 40.0}}};
    auto rep = aggregate_report({t1, t2}, {"base", "kd"});
    CHECK(rep.overall_mean.at("base") == doctest::Approx(20.0));
    CHECK(rep.overall_mean.at("kd") == doctest::Approx(30.0));
    CHECK(rep.overall_gain.at("kd").to_string() == "+50.00%");
}

TEST_CASE("aggregate rejects a task missing a variant column") {
    TaskScore t1{"alpha", TaskCategory::WorldKnowledge, 5, {{"base", 10.0}}};
    CHECK_THROWS_AS(aggregate_report({t1}, {"base", "kd"}), ValidationError);
}

TEST_CASE("few-shot prompt includes exactly k demo answers") {
    EvalTask task;
    task.name = "demo_task";
    task.instruction = "Answer the question .";
    task.demos = {{"q one ?", "Let's think step by step . So the answer is 1 ."},
                  {"q two ?", "Let's think step by step . So the answer is 2 ."},
                  {"q three ?", "Let's think step by step . So the answer is 3 ."},
                  {"q four ?", "Let's think step by step . So the answer is 4 ."}};

    std::string p3 = build_fewshot_prompt(task, "q five ?", 3);
    size_t count = 0, pos = 0;
    while ((pos = p3.find("So the answer is", pos)) != std::string::npos) {
        ++count;
        pos += 1;
    }
    CHECK(count == 3);
    CHECK(p3.find("q five ?") != std::string::npos);

    std::string p0 = build_fewshot_prompt(task, "q five ?", 0);
    CHECK(p0.find("So the answer is") == std::string::npos);
    CHECK(p0.rfind("Answer the question .", 0) == 0);
    CHECK(p0.find("Q: q five ?") != std::string::npos);

    CHECK_THROWS_AS(build_fewshot_prompt(task, "q", 5), ValidationError);
}

TEST_CASE("report JSON round trip preserves means and gains") {
    TaskScore t1{"alpha", TaskCategory::Multilingual, 50, {{"base", 0.0}, {"kd", 12.5}}};
    TaskScore t2{"beta", TaskCategory::Multilingual, 50, {{"base", 0.0}, {"kd", 10.0}}};
    auto rep = aggregate_report({t1, t2}, {"base", "kd"});
    auto back = report_from_json(report_to_json(rep));
    CHECK(back.variants == rep.variants);
    CHECK(back.overall_mean.at("kd") == doctest::Approx(rep.overall_mean.at("kd")));
    CHECK(back.overall_gain.at("kd").to_string() == rep.overall_gain.at("kd").to_string());
    CHECK(back.overall_gain.at("kd").kind == Gain::Kind::Absolute);
}

TEST_CASE("task files load from both native and examples-style layouts") {
    const std::string native = "/tmp/kdcot_test_task_native.json";
    {
        std::ofstream out(native);
        out << R"({"name":"t","category":"world_knowledge","instruction":"Do it .",
                   "questions":[{"input":"a ?","target":"1"}],
                   "demos":[{"question":"b ?","answer":"So the answer is 2 ."}]})";
    }
    EvalTask t = load_task(native);
    CHECK(t.questions.size() == 1);
    CHECK(t.demos.at(0).question == "b ?");

    const std::string alt = "/tmp/kdcot_test_task_alt.json";
    {
        std::ofstream out(alt);
        out << R"({"name":"t2","category":"multilingual",
                   "examples":[{"input":"x ?","target":"y"}],
                   "demos":[{"q":"c ?","a":"So the answer is 3 ."}]})";
    }
    EvalTask t2 = load_task(alt);
    CHECK(t2.questions.at(0).target == "y");
    CHECK(t2.demos.at(0).answer == "So the answer is 3 .");
    std::remove(native.c_str());
    std::remove(alt.c_str());
}

TEST_CASE("task save/load round trip") {
    EvalTask t;
    t.name = "rt";
    t.category = TaskCategory::NaturalLanguageUnderstanding;
    t.instruction = "inst";
    t.questions = {{"in ?", "out"}};
    t.demos = {{"dq", "da"}};
    const std::string path = "/tmp/kdcot_test_task_rt.json";
    save_task(path, t);
    EvalTask back = load_task(path);
    CHECK(back.name == t.name);
    CHECK(back.category == t.category);
    CHECK(back.questions.at(0).input == "in ?");
    CHECK(back.demos.at(0).answer == "da");
    std::remove(path.c_str());
}

TEST_CASE("timing markdown reports the teacher-relative percentage") {
    std::vector<TimingStats> stats = {{"teacher", 1000, 2.0, 1.0}, {"student", 200, 1.06, 0.53}};
    std::string md = render_timing_markdown(stats, "teacher");
    CHECK(md.find("53%") != std::string::npos);
    CHECK(md.find("student") != std::string::npos);
}
