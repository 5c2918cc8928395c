#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "kdcot/distill.hpp"

using namespace kdcot;

namespace {

ModelConfig tiny_config(int vocab) {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 32;
    c.d_ff = 64;
    c.vocab_size = vocab;
    c.max_seq_len = 64;
    return c;
}

// Random training sequences over a tiny vocabulary; loss on the second half.
std::vector<TrainingSequence> random_sequences(int count, int len, int vocab, uint64_t seed) {
    Rng rng(seed);
    std::vector<TrainingSequence> out;
    for (int i = 0; i < count; ++i) {
        TrainingSequence s;
        s.ids.push_back(TokenizerSpec::kBos);
        for (int t = 1; t < len; ++t)
            s.ids.push_back(int(TokenizerSpec::kNumSpecials +
                                rng.below(uint64_t(vocab - TokenizerSpec::kNumSpecials))));
        s.loss_mask.assign(size_t(len), 0);
        for (int t = len / 2; t < len; ++t) s.loss_mask[size_t(t)] = 1;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

TEST_CASE("single-position binary KL matches the hand value") {
    // teacher probs (0.75, 0.25) vs uniform student at tau 1:
    // 0.75*ln(1.5) + 0.25*ln(0.5) = 0.130812 nats.
    TensorData<float> teacher({1, 2}, {std::log(0.75f), std::log(0.25f)});
    TensorData<float> student({1, 2}, {0.0f, 0.0f});
    double loss = distillation_loss(teacher, student, {1}, 1.0, KlDirection::Forward);
    CHECK(loss == doctest::Approx(0.130812).epsilon(1e-4));
}

TEST_CASE("identical logits give zero loss in both directions") {
    Rng rng(3);
    TensorData<float> logits = TensorData<float>::zeros({4, 7});
    for (auto& v : logits.data) v = float(rng.normal() * 2.0);
    std::vector<uint8_t> mask = {1, 0, 1, 1};
    CHECK(std::abs(distillation_loss(logits, logits, mask, 2.0, KlDirection::Forward)) < 1e-7);
    CHECK(std::abs(distillation_loss(logits, logits, mask, 2.0, KlDirection::Reverse)) < 1e-7);
}

TEST_CASE("masked-out positions cannot influence the loss") {
    Rng rng(5);
    TensorData<float> teacher = TensorData<float>::zeros({3, 5});
    TensorData<float> student = TensorData<float>::zeros({3, 5});
    for (auto& v : teacher.data) v = float(rng.normal() * 1.0);
    for (auto& v : student.data) v = float(rng.normal() * 1.0);
    std::vector<uint8_t> mask = {1, 0, 1};
    const double before = distillation_loss(teacher, student, mask, 1.0);
    for (int64_t v = 0; v < 5; ++v) student.data[1 * 5 + v] += 100.0f;
    const double after = distillation_loss(teacher, student, mask, 1.0);
    CHECK(before == after);
}

TEST_CASE("tau of one applies no scaling at the bit level") {
    Rng rng(9);
    TensorData<float> teacher = TensorData<float>::zeros({2, 6});
    TensorData<float> student = TensorData<float>::zeros({2, 6});
    for (auto& v : teacher.data) v = float(rng.normal() * 1.5);
    for (auto& v : student.data) v = float(rng.normal() * 1.5);
    std::vector<uint8_t> mask = {1, 1};
    const double loss = distillation_loss(teacher, student, mask, 1.0);

    // Independent accumulation of the same definition, without any tau term.
    auto logsoftmax = [](const float* row, int n, std::vector<double>& out) {
        out.resize(size_t(n));
        double mx = -1e300;
        for (int i = 0; i < n; ++i) mx = std::max(mx, double(row[i]) * 1.0);
        double z = 0.0;
        for (int i = 0; i < n; ++i) z += std::exp(double(row[i]) * 1.0 - mx);
        const double lz = mx + std::log(z);
        for (int i = 0; i < n; ++i) out[size_t(i)] = double(row[i]) * 1.0 - lz;
    };
    std::vector<double> lp, lq;
    double total = 0.0;
    for (int t = 0; t < 2; ++t) {
        logsoftmax(teacher.data.data() + t * 6, 6, lp);
        logsoftmax(student.data.data() + t * 6, 6, lq);
        double kl = 0.0;
        for (int v = 0; v < 6; ++v) kl += std::exp(lp[size_t(v)]) * (lp[size_t(v)] - lq[size_t(v)]);
        total += kl;
    }
    CHECK(loss == total / 2.0 * 1.0 * 1.0);
}

TEST_CASE("tape loss value matches the reference implementation") {
    Rng rng(13);
    TensorData<float> teacher = TensorData<float>::zeros({5, 9});
    TensorData<float> student = TensorData<float>::zeros({5, 9});
    for (auto& v : teacher.data) v = float(rng.normal() * 1.0);
    for (auto& v : student.data) v = float(rng.normal() * 1.0);
    std::vector<uint8_t> mask = {0, 1, 1, 0, 1};
    for (KlDirection dir : {KlDirection::Forward, KlDirection::Reverse}) {
        for (double tau : {1.0, 2.5}) {
            Tape<float> tape;
            auto s = tape.leaf(student, true);
            auto node = distillation_loss_node(tape, teacher, s, mask, tau, dir);
            CHECK(double(tape.value(node).data[0]) ==
                  doctest::Approx(distillation_loss(teacher, student, mask, tau, dir))
                      .epsilon(1e-4));
        }
    }
}

TEST_CASE("tape loss gradient passes a double-precision finite-difference check") {
    Rng rng(17);
    TensorData<double> teacher = TensorData<double>::zeros({3, 6});
    TensorData<double> student = TensorData<double>::zeros({3, 6});
    for (auto& v : teacher.data) v = rng.normal() * 1.0;
    for (auto& v : student.data) v = rng.normal() * 1.0;
    std::vector<uint8_t> mask = {1, 0, 1};
    for (KlDirection dir : {KlDirection::Forward, KlDirection::Reverse}) {
        GradCheckFn fn = [&](Tape<double>& t, const std::vector<Tape<double>::NodeId>& xs) {
            return distillation_loss_node_t<double>(t, teacher, xs[0], mask, 1.7, dir);
        };
        CHECK(grad_check(fn, {student}) < 1e-6);
    }
}

TEST_CASE("zero learning rate leaves every parameter bit unchanged") {
    ModelConfig c = tiny_config(32);
    Model teacher = build_model(c, 1);
    Model student = build_model(c, 2);
    auto batch = random_sequences(2, 12, 32, 7);
    DistillConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.batch_size = 2;
    cfg.max_prompt_length = 64;
    auto opt = OptimizerState::init(student);
    const uint64_t before = student.parameter_hash();
    Rng drop(0);
    distill_step(teacher, student, batch, opt, cfg, drop);
    CHECK(student.parameter_hash() == before);
}

TEST_CASE("a student equal to the teacher sees near-zero loss and updates") {
    ModelConfig c = tiny_config(32);
    Model teacher = build_model(c, 4);
    Model student = build_model(c, 4);  // same seed: identical parameters
    auto batch = random_sequences(2, 12, 32, 9);
    DistillConfig cfg;
    cfg.learning_rate = 1e-8;
    cfg.batch_size = 2;
    cfg.max_prompt_length = 64;
    auto opt = OptimizerState::init(student);
    Rng drop(0);
    const double loss = distill_step(teacher, student, batch, opt, cfg, drop);
    CHECK(std::abs(loss) < 1e-4);
    double sq = 0.0;
    for (const auto& [path, p] : student.params) {
        const auto& t = teacher.params.at(path).tensor;
        for (size_t i = 0; i < p.tensor.data.size(); ++i) {
            const double d = double(p.tensor.data[i]) - double(t.data[i]);
            sq += d * d;
        }
    }
    CHECK(std::sqrt(sq) < 1e-6);
}

TEST_CASE("mismatched tokenizer hashes are rejected before any update") {
    ModelConfig c = tiny_config(32);
    Model teacher = build_model(c, 1, 111);
    Model student = build_model(c, 2, 222);
    auto batch = random_sequences(1, 8, 32, 3);
    DistillConfig cfg;
    cfg.batch_size = 1;
    auto opt = OptimizerState::init(student);
    Rng drop(0);
    CHECK_THROWS_AS(distill_step(teacher, student, batch, opt, cfg, drop), ValidationError);
}

TEST_CASE("checkpoint cadence: 20 steps at interval 5 gives 5,10,15,20") {
    ModelConfig c = tiny_config(32);
    Model teacher = build_model(c, 1);
    Model student = build_model(c, 2);
    auto train = random_sequences(8, 10, 32, 11);
    auto dev = random_sequences(2, 10, 32, 12);
    DistillConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 4;
    cfg.total_steps = 20;
    cfg.epochs = 100;
    cfg.checkpoint_interval = 5;
    cfg.max_prompt_length = 64;
    const std::string dir = "/tmp/kdcot_test_cadence";
    std::filesystem::remove_all(dir);
    auto result = run_distillation(teacher, std::move(student), train, dev, cfg, dir);
    std::vector<int> steps;
    for (const auto& ck : result.checkpoints) steps.push_back(ck.step);
    CHECK(steps == std::vector<int>{5, 10, 15, 20});
    for (const auto& ck : result.checkpoints)
        CHECK(std::filesystem::exists(ck.snapshot_dir + "/manifest.json"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("distillation improves teacher-argmax agreement from the initial student") {
    ModelConfig c = tiny_config(32);
    Model teacher = build_model(c, 21);
    Model student = build_model(c, 22);
    auto train = random_sequences(8, 12, 32, 13);
    auto dev = random_sequences(4, 12, 32, 14);
    const double before = argmax_agreement(teacher, student, dev);
    DistillConfig cfg;
    cfg.learning_rate = 3e-3;
    cfg.batch_size = 4;
    cfg.total_steps = 40;
    cfg.epochs = 100;
    cfg.checkpoint_interval = 40;
    cfg.max_prompt_length = 64;
    const std::string dir = "/tmp/kdcot_test_agree";
    std::filesystem::remove_all(dir);
    run_distillation(teacher, student, train, dev, cfg, dir);
    Model best = load_model(dir + "/step_000040");
    const double after = argmax_agreement(teacher, best, dev);
    CHECK(after > before);
    std::filesystem::remove_all(dir);
}

TEST_CASE("supervised fine-tuning overfits one example and starts near ln(N)") {
    ModelConfig c = tiny_config(32);
    Model model = build_model(c, 31);
    auto train = random_sequences(1, 10, 32, 15);
    DistillConfig cfg;
    cfg.learning_rate = 3e-3;
    cfg.batch_size = 1;
    cfg.total_steps = 150;
    cfg.epochs = 1000;
    cfg.checkpoint_interval = 150;
    cfg.max_prompt_length = 64;

    const double init_loss = evaluate_dev_loss(nullptr, model, train, cfg);
    CHECK(init_loss == doctest::Approx(std::log(32.0)).epsilon(0.10));

    const std::string dir = "/tmp/kdcot_test_overfit";
    std::filesystem::remove_all(dir);
    Model tuned = supervised_finetune(std::move(model), train, train, cfg, dir);
    CHECK(evaluate_dev_loss(nullptr, tuned, train, cfg) < 0.1);
    std::filesystem::remove_all(dir);
}

TEST_CASE("best-checkpoint selection takes the argmax with earliest-step ties") {
    std::vector<Checkpoint> cks(3);
    for (int i = 0; i < 3; ++i) cks[size_t(i)].step = (i + 1) * 100;
    std::vector<double> scores = {10.0, 30.0, 20.0};
    auto rep = select_best_checkpoint(
        cks, [&](const Checkpoint& c) { return scores[size_t(c.step / 100 - 1)]; });
    CHECK(rep.best.step == 200);

    auto tie = select_best_checkpoint(cks, [](const Checkpoint&) { return 5.0; });
    CHECK(tie.best.step == 100);

    auto partial = select_best_checkpoint(cks, [&](const Checkpoint& c) -> double {
        if (c.step == 200) throw RuntimeFailure("scorer broke");
        return scores[size_t(c.step / 100 - 1)];
    });
    CHECK(partial.best.step == 300);
    CHECK_FALSE(partial.table[1].score.has_value());
    CHECK_THROWS_AS(
        select_best_checkpoint(cks, [](const Checkpoint&) -> double { throw RuntimeFailure("x"); }),
        RuntimeFailure);
}

TEST_CASE("config serialization round trips and validation rejects bad values") {
    DistillConfig cfg;
    cfg.temperature = 2.0;
    cfg.kl_direction = KlDirection::Reverse;
    auto back = DistillConfig::from_json(cfg.to_json());
    CHECK(back.temperature == cfg.temperature);
    CHECK(back.kl_direction == KlDirection::Reverse);

    DistillConfig bad;
    bad.temperature = 0.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = DistillConfig{};
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}
