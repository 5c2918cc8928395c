#include "kdcot/synthtasks.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

namespace kdcot {

using nlohmann::json;

std::string task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::BooleanExpressions: return "boolean_expressions";
        case TaskKind::ObjectTracking: return "object_tracking";
        case TaskKind::MultistepArithmetic: return "multistep_arithmetic";
        case TaskKind::TemporalOrdering: return "temporal_ordering";
    }
    throw ValidationError("unknown task kind");
}

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "boolean_expressions") return TaskKind::BooleanExpressions;
    if (name == "object_tracking") return TaskKind::ObjectTracking;
    if (name == "multistep_arithmetic") return TaskKind::MultistepArithmetic;
    if (name == "temporal_ordering") return TaskKind::TemporalOrdering;
    throw ValidationError("unknown task kind: " + name);
}

TaskCategory task_kind_category(TaskKind k) {
    // All four generators are algorithmic at heart; the natural-language
    // templates only give some of them an NLU flavor.
    (void)k;
    return TaskCategory::AlgorithmicMultistepArithmetic;
}

namespace {

const std::vector<std::string> kPeople = {"Alice", "Bob", "Claire", "Dave", "Eve"};
const std::vector<std::string> kColors = {"red", "blue", "green", "yellow", "black"};
const std::vector<std::string> kEvents = {"a movie", "a parade", "a play",
                                          "a game",  "a show",   "a race"};
const char* kThink = "Let's think step by step .";

std::string hour_label(int h) {
    if (h < 12) return std::to_string(h) + "am";
    if (h == 12) return "12pm";
    return std::to_string(h - 12) + "pm";
}

// ---- boolean expressions ------------------------------------------------------

// Grammar: expr := True | False | not expr | ( expr op expr ), space separated.
struct BoolParser {
    std::vector<std::string> toks;
    size_t pos = 0;
    bool ok = true;

    std::string next() { return pos < toks.size() ? toks[pos++] : (ok = false, std::string()); }

    bool parse() {
        std::string t = next();
        if (t == "True") return true;
        if (t == "False") return false;
        if (t == "not") return !parse();
        if (t == "(") {
            bool a = parse();
            std::string op = next();
            bool b = parse();
            if (next() != ")") ok = false;
            if (op == "and") return a && b;
            if (op == "or") return a || b;
            ok = false;
        }
        ok = false;
        return false;
    }
};

std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

bool eval_bool_expr(const std::string& expr, bool& ok) {
    BoolParser p{split_ws(expr)};
    bool v = p.parse();
    ok = p.ok && p.pos == p.toks.size();
    return v;
}

std::string gen_bool_expr(Rng& rng, int depth) {
    if (depth <= 0 || (depth < 2 && rng.uniform() < 0.3))
        return rng.uniform() < 0.5 ? "True" : "False";
    if (rng.uniform() < 0.3) return "not " + gen_bool_expr(rng, depth - 1);
    const char* op = rng.uniform() < 0.5 ? "and" : "or";
    return "( " + gen_bool_expr(rng, depth - 1) + " " + op + " " + gen_bool_expr(rng, depth - 1) +
           " )";
}

std::string join_toks(const std::vector<std::string>& toks) {
    std::string s;
    for (const auto& t : toks) s += (s.empty() ? "" : " ") + t;
    return s;
}

TaskInstance make_bool_instance(Rng& rng, int difficulty) {
    TaskInstance inst;
    inst.kind = TaskKind::BooleanExpressions;
    // Mostly shallow, occasionally one level deeper so the instance space
    // stays large enough for a desk-scale train/dev/eval split.
    const int depth = difficulty + 1 + (rng.uniform() < 0.3 ? 1 : 0);
    std::string expr = gen_bool_expr(rng, depth);
    inst.question = "What is the value of " + expr + " ?";
    inst.canonical_form = expr;
    inst.payload = json{{"expr", expr}}.dump();
    return inst;
}

// Innermost-first rewriting: each step states one operator fact and then
// restates the whole expression with that value substituted, so every
// sentence is a small edit of its predecessor.
std::pair<std::string, std::string> bool_oracle(const TaskInstance& inst) {
    const std::string expr = json::parse(inst.payload).at("expr");
    auto toks = split_ws(expr);
    auto lit = [](const std::string& t) { return t == "True" || t == "False"; };
    std::string rationale = kThink;
    rationale += " The expression is " + join_toks(toks) + " .";
    while (toks.size() > 1) {
        const size_t before = toks.size();
        for (size_t i = 0; i < toks.size(); ++i) {
            if (toks[i] == "not" && i + 1 < toks.size() && lit(toks[i + 1])) {
                const bool v = toks[i + 1] == "False";
                rationale += " not " + toks[i + 1] + " is " + (v ? "True" : "False") + " .";
                toks[i] = v ? "True" : "False";
                toks.erase(toks.begin() + long(i) + 1);
                break;
            }
            if (toks[i] == "(" && i + 4 < toks.size() && lit(toks[i + 1]) && lit(toks[i + 3]) &&
                toks[i + 4] == ")") {
                const bool a = toks[i + 1] == "True", b = toks[i + 3] == "True";
                const bool v = toks[i + 2] == "and" ? (a && b) : (a || b);
                rationale += " ( " + toks[i + 1] + " " + toks[i + 2] + " " + toks[i + 3] +
                             " ) is " + (v ? "True" : "False") + " .";
                toks.erase(toks.begin() + long(i), toks.begin() + long(i) + 5);
                toks.insert(toks.begin() + long(i), v ? "True" : "False");
                break;
            }
        }
        if (toks.size() == before) throw ValidationError("bool_oracle: irreducible expression");
        if (toks.size() > 1) rationale += " Now the expression is " + join_toks(toks) + " .";
    }
    const std::string answer = toks.at(0);
    rationale += " So the answer is " + answer + " .";
    return {rationale, answer};
}

// ---- object tracking ----------------------------------------------------------

struct TrackingSpec {
    int n = 3;
    std::vector<int> objects;             // objects[i]: color index held by person i
    std::vector<std::pair<int, int>> swaps;
    int query = 0;
};

TrackingSpec tracking_from_payload(const std::string& payload) {
    json j = json::parse(payload);
    TrackingSpec s;
    s.n = j.at("n");
    s.objects = j.at("objects").get<std::vector<int>>();
    for (const auto& sw : j.at("swaps")) s.swaps.push_back({sw[0], sw[1]});
    s.query = j.at("query");
    return s;
}

std::string ball(int color) { return kColors[size_t(color)] + " ball"; }

TaskInstance make_tracking_instance(Rng& rng, int difficulty) {
    TrackingSpec s;
    s.n = std::min<int>(int(kPeople.size()), std::max(3, difficulty + 2));
    // People draw distinct colors from the full palette, not just the first
    // n: the wider assignment space lets low difficulties keep few swaps
    // while still clearing the train/dev/eval disjointness requirement.
    std::vector<int> palette(kColors.size());
    for (size_t i = 0; i < palette.size(); ++i) palette[i] = int(i);
    rng.shuffle(palette);
    s.objects.assign(palette.begin(), palette.begin() + s.n);
    const int n_swaps = std::max(1, difficulty);
    for (int k = 0; k < n_swaps; ++k) {
        int a = int(rng.below(uint64_t(s.n)));
        int b = int(rng.below(uint64_t(s.n - 1)));
        if (b >= a) ++b;
        s.swaps.push_back({a, b});
    }
    s.query = int(rng.below(uint64_t(s.n)));

    std::string q = "At the start ,";
    for (int i = 0; i < s.n; ++i)
        q += (i ? " , " : " ") + kPeople[size_t(i)] + " has the " + ball(s.objects[size_t(i)]);
    q += " .";
    for (const auto& [a, b] : s.swaps)
        q += " " + kPeople[size_t(a)] + " and " + kPeople[size_t(b)] + " swap items .";
    q += " What does " + kPeople[size_t(s.query)] + " have ?";

    TaskInstance inst;
    inst.kind = TaskKind::ObjectTracking;
    inst.question = q;
    inst.canonical_form = q;
    json sw = json::array();
    for (const auto& [a, b] : s.swaps) sw.push_back({a, b});
    inst.payload =
        json{{"n", s.n}, {"objects", s.objects}, {"swaps", sw}, {"query", s.query}}.dump();
    return inst;
}

std::pair<std::string, std::string> tracking_oracle(const TaskInstance& inst) {
    TrackingSpec s = tracking_from_payload(inst.payload);
    std::vector<int> state = s.objects;
    std::string rationale = kThink;
    rationale += " At the start ,";
    for (int i = 0; i < s.n; ++i)
        rationale += (i ? " and " : " ") + kPeople[size_t(i)] + " has the " + ball(state[size_t(i)]);
    rationale += " .";
    for (const auto& [a, b] : s.swaps) {
        std::swap(state[size_t(a)], state[size_t(b)]);
        rationale += " After " + kPeople[size_t(a)] + " and " + kPeople[size_t(b)] + " swap , " +
                     kPeople[size_t(a)] + " has the " + ball(state[size_t(a)]) + " and " +
                     kPeople[size_t(b)] + " has the " + ball(state[size_t(b)]) + " .";
    }
    std::string answer = ball(state[size_t(s.query)]);
    // Restate the queried holding so the answer cue is a copy of the
    // sentence right before it.
    rationale += " At the end , " + kPeople[size_t(s.query)] + " has the " + answer + " .";
    rationale += " So the answer is " + answer + " .";
    return {rationale, answer};
}

// ---- multistep arithmetic -----------------------------------------------------

struct ArithParser {
    std::vector<std::string> toks;
    size_t pos = 0;
    bool ok = true;

    std::string next() { return pos < toks.size() ? toks[pos++] : (ok = false, std::string()); }

    long parse() {
        std::string t = next();
        if (t == "(") {
            long a = parse();
            std::string op = next();
            long b = parse();
            if (next() != ")") ok = false;
            if (op == "+") return a + b;
            if (op == "-") return a - b;
            ok = false;
            return 0;
        }
        try {
            size_t used = 0;
            long v = std::stol(t, &used);
            if (used != t.size()) ok = false;
            return v;
        } catch (...) {
            ok = false;
            return 0;
        }
    }
};

long eval_arith_expr(const std::string& expr, bool& ok) {
    ArithParser p{split_ws(expr)};
    long v = p.parse();
    ok = p.ok && p.pos == p.toks.size();
    return v;
}

std::string gen_arith_expr(Rng& rng, int leaves) {
    if (leaves <= 1) return std::to_string(1 + rng.below(4));
    const int left = 1 + int(rng.below(uint64_t(leaves - 1)));
    const char* op = rng.uniform() < 0.5 ? "+" : "-";
    return "( " + gen_arith_expr(rng, left) + " " + op + " " + gen_arith_expr(rng, leaves - left) +
           " )";
}

bool arith_number(const std::string& t) {
    if (t.empty()) return false;
    const size_t start = t[0] == '-' ? 1 : 0;
    if (start == t.size()) return false;
    return std::all_of(t.begin() + long(start), t.end(),
                       [](unsigned char c) { return std::isdigit(c); });
}

TaskInstance make_arith_instance(Rng& rng, int difficulty) {
    TaskInstance inst;
    inst.kind = TaskKind::MultistepArithmetic;
    // Mostly one operand above the base count: the deeper forms dominate the
    // instance space, so the train split cannot exhaust them and the eval
    // split keeps the same depth profile as training.
    const int leaves = std::max(2, difficulty + 1) + (rng.uniform() < 0.7 ? 1 : 0);
    std::string expr = gen_arith_expr(rng, leaves);
    inst.question = "What is " + expr + " ?";
    inst.canonical_form = expr;
    inst.payload = json{{"expr", expr}}.dump();
    return inst;
}

// Same innermost-first rewriting scheme as the boolean oracle: one
// arithmetic fact per step, then the whole expression restated with the
// result substituted.
std::pair<std::string, std::string> arith_oracle(const TaskInstance& inst) {
    const std::string expr = json::parse(inst.payload).at("expr");
    auto toks = split_ws(expr);
    std::string rationale = kThink;
    rationale += " The expression is " + join_toks(toks) + " .";
    while (toks.size() > 1) {
        const size_t before = toks.size();
        for (size_t i = 0; i + 4 < toks.size(); ++i) {
            if (toks[i] != "(" || !arith_number(toks[i + 1]) || !arith_number(toks[i + 3]) ||
                toks[i + 4] != ")")
                continue;
            const long a = std::stol(toks[i + 1]), b = std::stol(toks[i + 3]);
            const long v = toks[i + 2] == "+" ? a + b : a - b;
            rationale += " " + toks[i + 1] + " " + toks[i + 2] + " " + toks[i + 3] + " = " +
                         std::to_string(v) + " .";
            toks.erase(toks.begin() + long(i), toks.begin() + long(i) + 5);
            toks.insert(toks.begin() + long(i), std::to_string(v));
            break;
        }
        if (toks.size() == before) throw ValidationError("arith_oracle: irreducible expression");
        if (toks.size() > 1) rationale += " Now the expression is " + join_toks(toks) + " .";
    }
    const std::string answer = toks.at(0);
    rationale += " So the answer is " + answer + " .";
    return {rationale, answer};
}

// ---- temporal ordering ----------------------------------------------------------

struct TemporalSpec {
    std::string name;
    int start = 6;
    int slots = 4;                                     // one-hour slots, one free
    std::vector<std::pair<std::string, int>> events;   // label, start slot
    int free_slot = 0;
    std::vector<int> options;                          // slot per option letter
    int answer_idx = 0;
};

TemporalSpec temporal_from_payload(const std::string& payload) {
    json j = json::parse(payload);
    TemporalSpec s;
    s.name = j.at("name");
    s.start = j.at("start");
    s.slots = j.at("slots");
    for (const auto& e : j.at("events")) s.events.push_back({e[0], e[1].get<int>()});
    s.free_slot = j.at("free_slot");
    s.options = j.at("options").get<std::vector<int>>();
    s.answer_idx = j.at("answer_idx");
    return s;
}

std::string slot_range(const TemporalSpec& s, int slot) {
    return hour_label(s.start + slot) + " to " + hour_label(s.start + slot + 1);
}

TaskInstance make_temporal_instance(Rng& rng, int difficulty) {
    TemporalSpec s;
    const int n_events = std::max(3, difficulty + 2);
    s.slots = n_events + 1;
    s.name = kPeople[rng.below(kPeople.size())];
    s.free_slot = int(rng.below(uint64_t(s.slots)));

    std::vector<int> busy;
    for (int slot = 0; slot < s.slots; ++slot)
        if (slot != s.free_slot) busy.push_back(slot);
    std::vector<int> labels(static_cast<size_t>(n_events), 0);
    for (int i = 0; i < n_events; ++i) labels[size_t(i)] = i % int(kEvents.size());
    rng.shuffle(labels);
    for (int i = 0; i < n_events; ++i) s.events.push_back({kEvents[size_t(labels[size_t(i)])], busy[size_t(i)]});
    rng.shuffle(s.events);

    // Four candidate windows: the free one plus three busy ones.
    std::vector<int> pool = busy;
    rng.shuffle(pool);
    s.options = {s.free_slot, pool[0], pool[1], pool[2]};
    // Options are listed chronologically, so the letter is a deterministic
    // function of the free hour; shuffled letters are beyond desk scale.
    std::sort(s.options.begin(), s.options.end());
    s.answer_idx =
        int(std::find(s.options.begin(), s.options.end(), s.free_slot) - s.options.begin());

    std::string q = s.name + " woke up at " + hour_label(s.start) + " .";
    for (const auto& [label, slot] : s.events)
        q += " " + s.name + " saw " + label + " from " + slot_range(s, slot) + " .";
    q += " The day ended at " + hour_label(s.start + s.slots) + " . When was " + s.name +
         " free ? Options :";
    for (size_t i = 0; i < s.options.size(); ++i)
        q += " ( " + std::string(1, char('A' + i)) + " ) " + slot_range(s, s.options[i]);

    TaskInstance inst;
    inst.kind = TaskKind::TemporalOrdering;
    inst.question = q;
    inst.canonical_form = q;
    json ev = json::array();
    for (const auto& [label, slot] : s.events) ev.push_back({label, slot});
    inst.payload = json{{"name", s.name},   {"start", s.start},
                        {"slots", s.slots}, {"events", ev},
                        {"free_slot", s.free_slot}, {"options", s.options},
                        {"answer_idx", s.answer_idx}}
                       .dump();
    return inst;
}

std::pair<std::string, std::string> temporal_oracle(const TaskInstance& inst) {
    TemporalSpec s = temporal_from_payload(inst.payload);
    auto sorted = s.events;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    std::string rationale = kThink;
    for (const auto& [label, slot] : sorted)
        rationale += " " + s.name + " was busy from " + slot_range(s, slot) + " .";
    rationale += " The free hour is from " + slot_range(s, s.free_slot) + " .";
    const char letter = char('A' + s.answer_idx);
    std::string answer = std::string("(") + letter + ")";
    rationale += " So the answer is ( " + std::string(1, letter) + " ) .";
    return {rationale, answer};
}

// ---- shared helpers -------------------------------------------------------------

TaskInstance make_instance(TaskKind kind, Rng& rng, int difficulty) {
    switch (kind) {
        case TaskKind::BooleanExpressions: return make_bool_instance(rng, difficulty);
        case TaskKind::ObjectTracking: return make_tracking_instance(rng, difficulty);
        case TaskKind::MultistepArithmetic: return make_arith_instance(rng, difficulty);
        case TaskKind::TemporalOrdering: return make_temporal_instance(rng, difficulty);
    }
    throw ValidationError("unknown task kind");
}

std::string task_instruction(TaskKind kind) {
    switch (kind) {
        case TaskKind::BooleanExpressions: return "Evaluate the Boolean expression .";
        case TaskKind::ObjectTracking:
            return "Track the items as people swap them and answer what the person ends up with .";
        case TaskKind::MultistepArithmetic: return "Solve the arithmetic expression .";
        case TaskKind::TemporalOrdering:
            return "Read the schedule and pick the option naming the free hour .";
    }
    throw ValidationError("unknown task kind");
}

std::vector<std::string> rationale_sentences(const std::string& rationale) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(rationale);
    std::string w;
    while (in >> w) {
        if (w == ".") {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += (cur.empty() ? "" : " ") + w;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

bool check_final_answer(const std::string& rationale, const std::string& answer,
                        const std::string& truth) {
    auto got = extract_answer(rationale);
    return got && normalize_answer(*got) == normalize_answer(answer) &&
           normalize_answer(answer) == normalize_answer(truth);
}

}  // namespace

TaskInstance draw_instance(TaskKind kind, Rng& rng, int difficulty) {
    return make_instance(kind, rng, difficulty);
}

std::pair<std::string, std::string> rationale_oracle(TaskKind kind, const TaskInstance& instance) {
    switch (kind) {
        case TaskKind::BooleanExpressions: return bool_oracle(instance);
        case TaskKind::ObjectTracking: return tracking_oracle(instance);
        case TaskKind::MultistepArithmetic: return arith_oracle(instance);
        case TaskKind::TemporalOrdering: return temporal_oracle(instance);
    }
    throw ValidationError("unknown task kind");
}

bool verify_rationale(TaskKind kind, const TaskInstance& instance, const std::string& rationale,
                      const std::string& answer) {
    const auto truth = rationale_oracle(kind, instance).second;
    if (!check_final_answer(rationale, answer, truth)) return false;
    const auto sentences = rationale_sentences(rationale);

    // Restatement sentences ("... expression is E") must preserve the value
    // of the original expression.
    auto restated = [](const std::string& s, std::string* out) {
        const char* cue = "expression is ";
        const auto p = s.find(cue);
        if (p == std::string::npos) return false;
        *out = s.substr(p + std::strlen(cue));
        return true;
    };
    if (kind == TaskKind::BooleanExpressions) {
        bool ok = false;
        const bool truth_v = eval_bool_expr(json::parse(instance.payload).at("expr"), ok);
        if (!ok) return false;
        for (const auto& s : sentences) {
            std::string e;
            if (restated(s, &e)) {
                bool eok = false;
                if (eval_bool_expr(e, eok) != truth_v || !eok) return false;
                continue;
            }
            if (s.rfind("not ", 0) != 0 && s.rfind("( ", 0) != 0) continue;
            const auto p = s.rfind(" is ");
            if (p == std::string::npos) return false;
            bool sok = false;
            const bool v = eval_bool_expr(s.substr(0, p), sok);
            if (!sok || (v ? "True" : "False") != s.substr(p + 4)) return false;
        }
        return true;
    }
    if (kind == TaskKind::MultistepArithmetic) {
        bool ok = false;
        const long truth_v = eval_arith_expr(json::parse(instance.payload).at("expr"), ok);
        if (!ok) return false;
        for (const auto& s : sentences) {
            std::string e;
            if (restated(s, &e)) {
                bool eok = false;
                if (eval_arith_expr(e, eok) != truth_v || !eok) return false;
                continue;
            }
            const auto p = s.find(" = ");
            if (p == std::string::npos) continue;
            // Reduction steps read "a op b = v" without parentheses.
            std::string lhs = s.substr(0, p);
            if (lhs.find(' ') != std::string::npos && lhs.rfind("( ", 0) != 0)
                lhs = "( " + lhs + " )";
            bool sok = false;
            const long v = eval_arith_expr(lhs, sok);
            if (!sok || std::to_string(v) != s.substr(p + 3)) return false;
        }
        return true;
    }
    if (kind == TaskKind::ObjectTracking) {
        TrackingSpec spec = tracking_from_payload(instance.payload);
        std::vector<int> state = spec.objects;
        size_t swap_idx = 0;
        auto claims_hold = [&](const std::string& s) {
            for (size_t p = s.find(" has the "); p != std::string::npos;
                 p = s.find(" has the ", p + 1)) {
                const auto name_start = s.rfind(' ', p == 0 ? 0 : p - 1);
                const std::string name =
                    s.substr(name_start == std::string::npos ? 0 : name_start + 1,
                             p - (name_start == std::string::npos ? 0 : name_start + 1));
                const auto who = std::find(kPeople.begin(), kPeople.end(), name);
                if (who == kPeople.end() || who - kPeople.begin() >= spec.n) return false;
                const std::string rest = s.substr(p + 9);
                const std::string held = ball(state[size_t(who - kPeople.begin())]);
                if (rest.rfind(held, 0) != 0) return false;
            }
            return true;
        };
        for (const auto& s : sentences) {
            if (s.rfind("After ", 0) == 0) {
                if (swap_idx >= spec.swaps.size()) return false;
                const auto& [a, b] = spec.swaps[swap_idx++];
                std::swap(state[size_t(a)], state[size_t(b)]);
            }
            if (!claims_hold(s)) return false;
        }
        return swap_idx == spec.swaps.size();
    }
    // temporal ordering
    TemporalSpec spec = temporal_from_payload(instance.payload);
    const std::string expected = "The free hour is from " + slot_range(spec, spec.free_slot);
    return rationale.find(expected) != std::string::npos;
}

std::vector<std::string> task_lexicon(TaskKind kind, int difficulty) {
    std::set<std::string> words;
    auto add_text = [&](const std::string& text) {
        // Same word/punctuation splitting as the tokenizer corpus sees.
        for (const auto& w : TokenizerSpec::split_words(text)) words.insert(w);
    };
    add_text(task_instruction(kind));
    add_text(kThink);
    add_text("Q : A : So the answer is . , ? ( )");

    switch (kind) {
        case TaskKind::BooleanExpressions:
            add_text("True False and or not What is the value of");
            break;
        case TaskKind::ObjectTracking: {
            for (const auto& p : kPeople) add_text(p);
            for (const auto& c : kColors) add_text(c + " ball");
            add_text("At the start has the and swap items What does have After");
            break;
        }
        case TaskKind::MultistepArithmetic: {
            const int leaves = std::max(2, difficulty + 2);
            for (long v = -5 * leaves; v <= 5 * leaves; ++v) add_text(std::to_string(v));
            add_text("What is + - =");
            break;
        }
        case TaskKind::TemporalOrdering: {
            for (const auto& p : kPeople) add_text(p);
            for (const auto& e : kEvents) add_text(e);
            const int slots = std::max(3, difficulty + 2) + 1;
            for (int h = 6; h <= 6 + slots; ++h) add_text(hour_label(h));
            add_text("woke up at saw from to The day ended When was free Options A B C D");
            add_text("busy hour That option");
            break;
        }
    }
    return {words.begin(), words.end()};
}

GeneratedTask generate_task(const GenParams& params) {
    if (params.train_count <= 0 || params.dev_count <= 0 || params.eval_count <= 0)
        throw ValidationError("generate_task: counts must be positive");
    if (params.demo_pool < params.max_demos_in_train)
        throw ValidationError("generate_task: demo pool smaller than max demos per prompt");

    Rng rng(params.seed ^ fnv1a(task_kind_name(params.kind)));
    std::set<std::string> seen;
    auto draw = [&] {
        for (int attempt = 0; attempt < 20000; ++attempt) {
            TaskInstance inst = make_instance(params.kind, rng, params.difficulty);
            if (seen.insert(inst.canonical_form).second) return inst;
        }
        throw RuntimeFailure("generate_task: could not draw enough distinct instances; "
                             "raise difficulty or lower counts");
    };

    // Demo pool first, then train/dev, then eval with an answer-majority guard.
    std::vector<TaskInstance> demo_insts, train_insts, dev_insts, eval_insts;
    for (int i = 0; i < params.demo_pool; ++i) demo_insts.push_back(draw());
    for (int i = 0; i < params.train_count; ++i) train_insts.push_back(draw());
    for (int i = 0; i < params.dev_count; ++i) dev_insts.push_back(draw());

    std::map<std::string, int> eval_answers;
    const int cap = std::max(1, int(std::ceil(0.6 * params.eval_count)));
    while (int(eval_insts.size()) < params.eval_count) {
        TaskInstance inst = draw();
        const std::string ans = rationale_oracle(params.kind, inst).second;
        if (eval_answers[ans] >= cap) continue;  // no answer may dominate the eval split
        ++eval_answers[ans];
        eval_insts.push_back(std::move(inst));
    }

    GeneratedTask out;
    out.eval.name = task_kind_name(params.kind);
    out.eval.category = task_kind_category(params.kind);
    out.eval.instruction = task_instruction(params.kind);
    for (const auto& inst : demo_insts) {
        auto [rat, ans] = rationale_oracle(params.kind, inst);
        out.eval.demos.push_back({inst.question, rat});
    }
    for (const auto& inst : eval_insts) {
        const std::string ans = rationale_oracle(params.kind, inst).second;
        out.eval.questions.push_back({inst.question, ans});
    }

    // Training prompts use the evaluation few-shot format with 0..k embedded
    // demo blocks, so the student sees the test-time text distribution.
    auto render_split = [&](const std::vector<TaskInstance>& insts, const std::string& tag) {
        std::vector<TrainingExample> out_ex;
        for (size_t i = 0; i < insts.size(); ++i) {
            const auto& inst = insts[i];
            const int k = int(rng.below(uint64_t(params.max_demos_in_train + 1)));
            EvalTask scratch = out.eval;
            scratch.demos.clear();
            std::vector<size_t> order(demo_insts.size());
            for (size_t d = 0; d < order.size(); ++d) order[d] = d;
            rng.shuffle(order);
            for (int d = 0; d < k; ++d) scratch.demos.push_back(out.eval.demos[order[size_t(d)]]);
            auto [rat, ans] = rationale_oracle(params.kind, inst);
            TrainingExample ex;
            ex.id = task_kind_name(params.kind) + "-" + tag + "-" + std::to_string(i);
            ex.instruction = build_fewshot_prompt(scratch, inst.question, k);
            ex.rationale = rat;
            ex.answer = ans;
            ex.task_name = task_kind_name(params.kind);
            out_ex.push_back(std::move(ex));
        }
        return out_ex;
    };
    out.train = render_split(train_insts, "train");
    out.dev = render_split(dev_insts, "dev");
    return out;
}

}  // namespace kdcot
