#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "kdcot/synthtasks.hpp"

using namespace kdcot;

namespace {

const std::vector<TaskKind> kAllKinds = {TaskKind::BooleanExpressions, TaskKind::ObjectTracking,
                                         TaskKind::MultistepArithmetic,
                                         TaskKind::TemporalOrdering};

GenParams desk_params(TaskKind kind, uint64_t seed = 0) {
    GenParams p;
    p.kind = kind;
    p.difficulty = 1;
    p.train_count = 40;
    p.dev_count = 10;
    p.eval_count = 25;
    p.demo_pool = 8;
    p.max_demos_in_train = 1;
    p.seed = seed;
    return p;
}

}  // namespace

TEST_CASE("every machine rationale re-executes to its own answer (1000 per kind)") {
    for (TaskKind kind : kAllKinds) {
        Rng rng(0x5eed ^ uint64_t(kind));
        int checked = 0;
        for (int i = 0; i < 1000; ++i) {
            TaskInstance inst = draw_instance(kind, rng, 1 + i % 3);
            auto [rationale, answer] = rationale_oracle(kind, inst);
            CAPTURE(task_kind_name(kind));
            CAPTURE(inst.question);
            REQUIRE(verify_rationale(kind, inst, rationale, answer));
            ++checked;
        }
        CHECK(checked == 1000);
    }
}

TEST_CASE("a corrupted rationale or answer fails verification") {
    Rng rng(77);
    TaskInstance inst = draw_instance(TaskKind::BooleanExpressions, rng, 2);
    auto [rationale, answer] = rationale_oracle(TaskKind::BooleanExpressions, inst);
    const std::string flipped = answer == "True" ? "False" : "True";
    CHECK_FALSE(verify_rationale(TaskKind::BooleanExpressions, inst, rationale, flipped));
    std::string bad = rationale;
    size_t pos = bad.find(" is True");
    if (pos == std::string::npos) pos = bad.find(" is False");
    if (pos != std::string::npos)
        bad.replace(pos, 8, bad[pos + 4] == 'T' ? " is False" : " is True ");
    CHECK_FALSE(verify_rationale(TaskKind::BooleanExpressions, inst, bad, answer));
}

TEST_CASE("boolean oracle: not ( True and False ) is True") {
    TaskInstance inst;
    inst.kind = TaskKind::BooleanExpressions;
    inst.payload = R"x({"expr":"not ( True and False )"})x";
    inst.question = "What is the value of not ( True and False ) ?";
    auto [rationale, answer] = rationale_oracle(TaskKind::BooleanExpressions, inst);
    CHECK(answer == "True");
    CHECK(rationale.find("( True and False ) is False") != std::string::npos);
    CHECK(rationale.find("So the answer is True") != std::string::npos);
}

TEST_CASE("tracking oracle: swaps (0,1) then (1,2) rotate (A,B,C) to (B,C,A)") {
    TaskInstance inst;
    inst.kind = TaskKind::ObjectTracking;
    inst.payload = R"x({"n":3,"objects":[0,1,2],"swaps":[[0,1],[1,2]],"query":2})x";
    auto [rationale, answer] = rationale_oracle(TaskKind::ObjectTracking, inst);
    // After the two swaps person 0 holds color 1, person 1 holds color 2,
    // person 2 holds color 0.
    CHECK(answer == "red ball");
    TaskInstance q0 = inst;
    q0.payload = R"x({"n":3,"objects":[0,1,2],"swaps":[[0,1],[1,2]],"query":0})x";
    CHECK(rationale_oracle(TaskKind::ObjectTracking, q0).second == "blue ball");
    TaskInstance q1 = inst;
    q1.payload = R"x({"n":3,"objects":[0,1,2],"swaps":[[0,1],[1,2]],"query":1})x";
    CHECK(rationale_oracle(TaskKind::ObjectTracking, q1).second == "green ball");
}

TEST_CASE("same seed reproduces the dataset exactly, different seeds do not") {
    for (TaskKind kind : kAllKinds) {
        auto a = generate_task(desk_params(kind, 9));
        auto b = generate_task(desk_params(kind, 9));
        auto c = generate_task(desk_params(kind, 10));
        REQUIRE(a.train.size() == b.train.size());
        bool all_equal = true;
        for (size_t i = 0; i < a.train.size(); ++i) {
            CHECK(a.train[i].instruction == b.train[i].instruction);
            CHECK(a.train[i].answer == b.train[i].answer);
            CHECK(a.train[i].rationale == b.train[i].rationale);
        }
        for (size_t i = 0; i < a.train.size() && i < c.train.size(); ++i)
            all_equal = all_equal && a.train[i].instruction == c.train[i].instruction;
        CHECK_FALSE(all_equal);
    }
}

TEST_CASE("eval questions never leak into training or dev text") {
    for (TaskKind kind : kAllKinds) {
        auto g = generate_task(desk_params(kind, 3));
        CHECK(g.eval.questions.size() == 25);
        for (const auto& q : g.eval.questions) {
            for (const auto& e : g.train) {
                CAPTURE(q.input);
                CHECK(e.instruction.find(q.input) == std::string::npos);
            }
            for (const auto& e : g.dev) CHECK(e.instruction.find(q.input) == std::string::npos);
            // Few-shot demos are held out from the eval questions too.
            for (const auto& d : g.eval.demos) CHECK(d.question != q.input);
        }
    }
}

TEST_CASE("no answer dominates more than 60 percent of the eval split") {
    for (TaskKind kind : kAllKinds) {
        auto g = generate_task(desk_params(kind, 4));
        std::map<std::string, int> freq;
        for (const auto& q : g.eval.questions) ++freq[normalize_answer(q.target)];
        const int cap = int(std::ceil(0.6 * double(g.eval.questions.size())));
        for (const auto& [ans, n] : freq) {
            CAPTURE(task_kind_name(kind));
            CAPTURE(ans);
            CHECK(n <= cap);
        }
    }
}

TEST_CASE("training rationales end with the answer cue and verify") {
    auto g = generate_task(desk_params(TaskKind::MultistepArithmetic, 5));
    for (const auto& e : g.train) {
        REQUIRE(e.rationale.has_value());
        CHECK(e.rationale->rfind("Let's think step by step .", 0) == 0);
        auto got = extract_answer(*e.rationale);
        REQUIRE(got.has_value());
        CHECK(normalize_answer(*got) == normalize_answer(e.answer));
    }
}

TEST_CASE("training instructions carry at most the configured demo count") {
    auto p = desk_params(TaskKind::BooleanExpressions, 6);
    p.max_demos_in_train = 2;
    auto g = generate_task(p);
    bool saw_zero = false, saw_some = false;
    for (const auto& e : g.train) {
        size_t demos = 0, pos = 0;
        while ((pos = e.instruction.find("So the answer is", pos)) != std::string::npos) {
            ++demos;
            pos += 1;
        }
        CHECK(demos <= 2);
        saw_zero = saw_zero || demos == 0;
        saw_some = saw_some || demos > 0;
        // The target question comes last, after every demo block.
        CHECK(e.instruction.rfind("A:") == e.instruction.size() - 2);
    }
    CHECK(saw_zero);
    CHECK(saw_some);
}

TEST_CASE("the lexicon covers every generated word") {
    for (TaskKind kind : kAllKinds) {
        auto lex = task_lexicon(kind, 1);
        std::set<std::string> words(lex.begin(), lex.end());
        auto g = generate_task(desk_params(kind, 7));
        auto covered = [&](const std::string& text) {
            for (const auto& w : TokenizerSpec::split_words(text)) {
                CAPTURE(task_kind_name(kind));
                CAPTURE(w);
                CHECK(words.count(w) == 1);
            }
        };
        for (const auto& e : g.train) {
            covered(e.instruction);
            if (e.rationale) covered(*e.rationale);
            covered(e.answer);
        }
        for (const auto& q : g.eval.questions) {
            covered(q.input);
            covered(q.target);
        }
    }
}

TEST_CASE("kind names round trip and all kinds have a category") {
    for (TaskKind kind : kAllKinds) {
        CHECK(task_kind_from_name(task_kind_name(kind)) == kind);
        (void)category_name(task_kind_category(kind));
    }
    CHECK_THROWS_AS(task_kind_from_name("no_such_kind"), ValidationError);
}
