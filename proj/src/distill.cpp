#include "kdcot/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace kdcot {

namespace fs = std::filesystem;
using nlohmann::json;

void DistillConfig::validate() const {
    if (temperature <= 0) throw ValidationError("DistillConfig: tau must be positive");
    if (learning_rate < 0) throw ValidationError("DistillConfig: negative learning rate");
    if (batch_size <= 0 || total_steps <= 0 || epochs <= 0)
        throw ValidationError("DistillConfig: batch_size/total_steps/epochs must be positive");
    if (checkpoint_interval <= 0 || checkpoint_interval > total_steps)
        throw ValidationError("DistillConfig: checkpoint_interval must be in [1, total_steps]");
    if (max_prompt_length <= 0) throw ValidationError("DistillConfig: max_prompt_length must be positive");
    if (lr_schedule != "constant" && lr_schedule != "cosine")
        throw ValidationError("DistillConfig: unknown lr schedule: " + lr_schedule);
    if (warmup_steps < 0) throw ValidationError("DistillConfig: negative warmup");
}

std::string DistillConfig::to_json() const {
    json j{{"temperature", temperature},
           {"learning_rate", learning_rate},
           {"batch_size", batch_size},
           {"total_steps", total_steps},
           {"epochs", epochs},
           {"checkpoint_interval", checkpoint_interval},
           {"max_prompt_length", max_prompt_length},
           {"kl_direction", kl_direction_name(kl_direction)},
           {"seed", seed},
           {"dev_eval_limit", dev_eval_limit},
           {"lr_schedule", lr_schedule},
           {"warmup_steps", warmup_steps}};
    if (lora) j["lora"] = json::parse(lora->to_json());
    return j.dump();
}

DistillConfig DistillConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    DistillConfig c;
    c.temperature = j.at("temperature");
    c.learning_rate = j.at("learning_rate");
    c.batch_size = j.at("batch_size");
    c.total_steps = j.at("total_steps");
    c.epochs = j.at("epochs");
    c.checkpoint_interval = j.at("checkpoint_interval");
    c.max_prompt_length = j.at("max_prompt_length");
    c.kl_direction = j.at("kl_direction") == "reverse" ? KlDirection::Reverse : KlDirection::Forward;
    c.seed = j.at("seed");
    c.dev_eval_limit = j.value("dev_eval_limit", 64);
    c.lr_schedule = j.value("lr_schedule", std::string("constant"));
    c.warmup_steps = j.value("warmup_steps", 0);
    if (j.contains("lora")) c.lora = LoraConfig::from_json(j["lora"].dump());
    return c;
}

// ---- optimizer ---------------------------------------------------------------

OptimizerState OptimizerState::init(const Model& model) {
    OptimizerState s;
    for (const auto& [name, p] : model.params) {
        if (!p.trainable) continue;  // no state for frozen parameters
        Slot slot;
        slot.m.assign(p.tensor.data.size(), 0.f);
        slot.v.assign(p.tensor.data.size(), 0.f);
        s.slots.emplace(name, std::move(slot));
    }
    return s;
}

void OptimizerState::apply(Model& model, const std::map<std::string, std::vector<float>>& grads,
                           double learning_rate) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, double(step_count));
    const double bc2 = 1.0 - std::pow(beta2, double(step_count));
    for (auto& [name, slot] : slots) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        auto& p = model.params.at(name);
        const auto& g = git->second;
        for (size_t i = 0; i < g.size(); ++i) {
            slot.m[i] = float(beta1) * slot.m[i] + float(1.0 - beta1) * g[i];
            slot.v[i] = float(beta2) * slot.v[i] + float(1.0 - beta2) * g[i] * g[i];
            const double mhat = slot.m[i] / bc1;
            const double vhat = slot.v[i] / bc2;
            double upd = learning_rate * mhat / (std::sqrt(vhat) + eps);
            if (weight_decay != 0.0) upd += learning_rate * weight_decay * p.tensor.data[i];
            p.tensor.data[i] = static_cast<float>(p.tensor.data[i] - upd);
        }
    }
}

// ---- loss --------------------------------------------------------------------

namespace {

// Row log-softmax in double precision.
void log_softmax_row(const float* logits, int64_t n, double inv_tau, std::vector<double>& out) {
    out.resize(static_cast<size_t>(n));
    double mx = -1e300;
    for (int64_t i = 0; i < n; ++i) {
        out[static_cast<size_t>(i)] = double(logits[i]) * inv_tau;
        mx = std::max(mx, out[static_cast<size_t>(i)]);
    }
    double z = 0.0;
    for (int64_t i = 0; i < n; ++i) z += std::exp(out[static_cast<size_t>(i)] - mx);
    const double lz = mx + std::log(z);
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] -= lz;
}

void check_loss_inputs(const TensorData<float>& a, const TensorData<float>& b,
                       const std::vector<uint8_t>& mask, double tau) {
    if (a.shape != b.shape || a.shape.size() != 2)
        throw ValidationError("distillation_loss: teacher/student logits shapes must match");
    if (static_cast<int64_t>(mask.size()) != a.shape[0])
        throw ValidationError("distillation_loss: mask length must equal the row count");
    if (tau <= 0) throw ValidationError("distillation_loss: tau must be positive");
    if (std::none_of(mask.begin(), mask.end(), [](uint8_t b) { return b != 0; }))
        throw ValidationError("distillation_loss: empty mask");
    for (float v : a.data)
        if (!std::isfinite(v)) throw RuntimeFailure("distillation_loss: non-finite teacher logits");
    for (float v : b.data)
        if (!std::isfinite(v)) throw RuntimeFailure("distillation_loss: non-finite student logits");
}

}  // namespace

double distillation_loss(const TensorData<float>& teacher_logits,
                         const TensorData<float>& student_logits,
                         const std::vector<uint8_t>& loss_mask, double tau,
                         KlDirection direction) {
    check_loss_inputs(teacher_logits, student_logits, loss_mask, tau);
    const int64_t rows = teacher_logits.shape[0], n = teacher_logits.shape[1];
    const double inv_tau = 1.0 / tau;
    std::vector<double> lp, lq;
    double total = 0.0;
    int64_t count = 0;
    for (int64_t t = 0; t < rows; ++t) {
        if (!loss_mask[static_cast<size_t>(t)]) continue;
        log_softmax_row(teacher_logits.data.data() + t * n, n, inv_tau, lp);
        log_softmax_row(student_logits.data.data() + t * n, n, inv_tau, lq);
        double kl = 0.0;
        for (int64_t v = 0; v < n; ++v) {
            // forward: sum_v p * (log p - log q); reverse swaps the roles.
            const double a = direction == KlDirection::Forward ? lp[size_t(v)] : lq[size_t(v)];
            const double b = direction == KlDirection::Forward ? lq[size_t(v)] : lp[size_t(v)];
            kl += std::exp(a) * (a - b);
        }
        total += kl;
        ++count;
    }
    return total / double(count) * tau * tau;
}

Tape<float>::NodeId distillation_loss_node(Tape<float>& tape,
                                           const TensorData<float>& teacher_logits,
                                           Tape<float>::NodeId student_logits,
                                           const std::vector<uint8_t>& loss_mask, double tau,
                                           KlDirection direction) {
    check_loss_inputs(teacher_logits, tape.value(student_logits), loss_mask, tau);
    return distillation_loss_node_t<float>(tape, teacher_logits, student_logits, loss_mask, tau,
                                           direction);
}

// ---- training steps ----------------------------------------------------------

namespace {

// Row mask for next-token prediction: logits row t carries loss when token
// t+1 is masked.
std::vector<uint8_t> shifted_row_mask(const TrainingSequence& seq) {
    std::vector<uint8_t> rows(seq.ids.size(), 0);
    for (size_t i = 1; i < seq.ids.size(); ++i)
        if (seq.loss_mask[i]) rows[i - 1] = 1;
    return rows;
}

int64_t masked_count(const std::vector<uint8_t>& m) {
    return std::count_if(m.begin(), m.end(), [](uint8_t b) { return b != 0; });
}

enum class LossKind { Distill, CrossEntropy };

struct StepContext {
    const Model* teacher = nullptr;  // null for supervised fine-tuning
    LossKind kind = LossKind::Distill;
};

double training_step(const StepContext& ctx, Model& student,
                     const std::vector<TrainingSequence>& batch, OptimizerState& opt,
                     const DistillConfig& config, Rng& dropout_rng) {
    if (ctx.kind == LossKind::Distill) {
        if (!ctx.teacher) throw ValidationError("distill_step: teacher required");
        if (ctx.teacher->tokenizer_hash != student.tokenizer_hash)
            throw ValidationError(
                "distill_step: teacher and student tokenizer hashes differ; distillation "
                "requires a shared vocabulary of size N");
    }
    if (batch.empty()) throw ValidationError("training step: empty batch");

    int64_t total_masked = 0;
    std::vector<std::vector<uint8_t>> row_masks;
    row_masks.reserve(batch.size());
    for (const auto& seq : batch) {
        row_masks.push_back(shifted_row_mask(seq));
        total_masked += masked_count(row_masks.back());
    }
    if (total_masked == 0) throw ValidationError("training step: batch has zero masked tokens");

    Tape<float> tape;
    auto params = register_params(tape, student, /*trainable_enabled=*/true);
    Tape<float>::NodeId total = -1;
    Rng* drop = student.lora ? &dropout_rng : nullptr;

    for (size_t b = 0; b < batch.size(); ++b) {
        const auto& seq = batch[b];
        const auto& rows = row_masks[b];
        const int64_t m = masked_count(rows);
        if (m == 0) continue;
        auto logits = forward_logits_on_tape(tape, params, student.config, student.lora, seq.ids, drop);

        Tape<float>::NodeId part;
        if (ctx.kind == LossKind::Distill) {
            InferenceSession teacher_session(*ctx.teacher);
            auto teacher_logits = teacher_session.feed(seq.ids);
            part = distillation_loss_node(tape, teacher_logits, logits, rows, config.temperature,
                                          config.kl_direction);
        } else {
            // Masked next-token cross-entropy.
            auto logp = tape.log_softmax_rows(logits);
            std::vector<int64_t> r, c;
            for (size_t i = 1; i < seq.ids.size(); ++i)
                if (seq.loss_mask[i]) {
                    r.push_back(static_cast<int64_t>(i - 1));
                    c.push_back(seq.ids[i]);
                }
            auto picked = tape.gather2d(logp, r, c);
            part = tape.scale(tape.sum_all(picked), -1.0f / float(m));
        }
        auto weighted = tape.scale(part, float(double(m) / double(total_masked)));
        total = total < 0 ? weighted : tape.add(total, weighted);
    }

    const double loss = tape.value(total).data[0];
    if (!std::isfinite(loss)) throw RuntimeFailure("training step: non-finite loss");
    tape.backward(total);

    std::map<std::string, std::vector<float>> grads;
    for (const auto& path : student.trainable_paths()) grads[path] = tape.grad(params.ids.at(path));
    opt.apply(student, grads, config.learning_rate);
    return loss;
}

}  // namespace

double distill_step(const Model& teacher, Model& student,
                    const std::vector<TrainingSequence>& batch, OptimizerState& opt,
                    const DistillConfig& config, Rng& dropout_rng) {
    StepContext ctx{&teacher, LossKind::Distill};
    return training_step(ctx, student, batch, opt, config, dropout_rng);
}

double evaluate_dev_loss(const Model* teacher, const Model& student,
                         const std::vector<TrainingSequence>& dev, const DistillConfig& config) {
    double total = 0.0;
    int64_t count = 0;
    const size_t limit = std::min<size_t>(dev.size(), static_cast<size_t>(config.dev_eval_limit));
    for (size_t s = 0; s < limit; ++s) {
        const auto& seq = dev[s];
        const auto rows = shifted_row_mask(seq);
        const int64_t m = masked_count(rows);
        if (m == 0) continue;
        auto student_logits = forward_logits(student, seq.ids);
        if (teacher) {
            auto teacher_logits = forward_logits(*teacher, seq.ids);
            total += distillation_loss(teacher_logits, student_logits, rows, config.temperature,
                                       config.kl_direction) *
                     double(m);
        } else {
            const int64_t n = student_logits.shape[1];
            std::vector<double> lq;
            for (size_t i = 1; i < seq.ids.size(); ++i) {
                if (!seq.loss_mask[i]) continue;
                log_softmax_row(student_logits.data.data() + int64_t(i - 1) * n, n, 1.0, lq);
                total -= lq[static_cast<size_t>(seq.ids[i])];
            }
        }
        count += m;
    }
    if (count == 0) throw ValidationError("evaluate_dev_loss: no masked tokens");
    return total / double(count);
}

double argmax_agreement(const Model& teacher, const Model& student,
                        const std::vector<TrainingSequence>& dev, int limit) {
    int64_t match = 0, total = 0;
    const size_t cap = std::min<size_t>(dev.size(), static_cast<size_t>(limit));
    for (size_t s = 0; s < cap; ++s) {
        const auto& seq = dev[s];
        const auto rows = shifted_row_mask(seq);
        if (masked_count(rows) == 0) continue;
        auto tl = forward_logits(teacher, seq.ids);
        auto sl = forward_logits(student, seq.ids);
        const int64_t n = tl.shape[1];
        for (size_t t = 0; t < rows.size(); ++t) {
            if (!rows[t]) continue;
            const float* tr = tl.data.data() + int64_t(t) * n;
            const float* sr = sl.data.data() + int64_t(t) * n;
            const auto ta = std::max_element(tr, tr + n) - tr;
            const auto sa = std::max_element(sr, sr + n) - sr;
            match += (ta == sa);
            ++total;
        }
    }
    return total == 0 ? 0.0 : double(match) / double(total);
}

// ---- full runs -----------------------------------------------------------------

namespace {

RunResult run_training_loop(const StepContext& ctx, Model& student,
                            const std::vector<TrainingSequence>& train,
                            const std::vector<TrainingSequence>& dev, const DistillConfig& config,
                            const std::string& out_dir) {
    config.validate();
    if (train.empty()) throw ValidationError("run: empty training data");
    fs::create_directories(out_dir);

    OptimizerState opt = OptimizerState::init(student);
    Rng shuffle_rng(config.seed);
    Rng dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ull);

    const int steps_per_epoch =
        static_cast<int>((train.size() + config.batch_size - 1) / size_t(config.batch_size));
    const int64_t by_epochs = int64_t(config.epochs) * steps_per_epoch;
    const int total = static_cast<int>(std::min<int64_t>(config.total_steps, by_epochs));

    RunResult result;
    const uint64_t config_hash = fnv1a(config.to_json());
    const auto t0 = std::chrono::steady_clock::now();
    std::ofstream log_file(fs::path(out_dir) / "train_log.jsonl", std::ios::binary);

    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    auto emit_checkpoint = [&](int step, double train_loss) {
        const double dev_loss =
            dev.empty() ? 0.0 : evaluate_dev_loss(ctx.teacher, student, dev, config);
        char name[32];
        std::snprintf(name, sizeof(name), "step_%06d", step);
        const std::string snap_dir = (fs::path(out_dir) / name).string();
        json extra{{"step", step},
                   {"seed", config.seed},
                   {"train_loss", train_loss},
                   {"dev_loss", dev_loss},
                   {"distill_config", json::parse(config.to_json())}};
        save_model(snap_dir, student, extra.dump());
        result.checkpoints.push_back({step, snap_dir, train_loss, dev_loss, config_hash});
        TrainLogEntry entry{step, train_loss, dev_loss, elapsed()};
        result.log.push_back(entry);
        if (log_file)
            log_file << json{{"step", step},
                             {"train_loss", train_loss},
                             {"dev_loss", dev_loss},
                             {"wall_clock_sec", entry.wall_clock_sec}}
                            .dump()
                     << '\n';
    };

    if (!dev.empty()) {
        // Step-0 entry so the dev-loss trajectory has a pre-training anchor.
        TrainLogEntry first{0, 0.0, evaluate_dev_loss(ctx.teacher, student, dev, config), 0.0};
        result.log.push_back(first);
        if (log_file)
            log_file << json{{"step", 0}, {"dev_loss", *first.dev_loss}, {"wall_clock_sec", 0.0}}.dump()
                     << '\n';
    }

    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t cursor = order.size();  // forces a shuffle before the first batch

    // Linear warmup, then either flat or cosine decay down to 10% of peak.
    auto lr_at = [&](int step) {
        double lr = config.learning_rate;
        if (config.warmup_steps > 0 && step <= config.warmup_steps)
            return lr * double(step) / double(config.warmup_steps);
        if (config.lr_schedule == "cosine" && total > config.warmup_steps) {
            const double progress = double(step - config.warmup_steps) /
                                    double(total - config.warmup_steps);
            lr *= 0.1 + 0.45 * (1.0 + std::cos(3.14159265358979323846 * progress));
        }
        return lr;
    };

    double running_loss = 0.0;
    int running_count = 0;
    DistillConfig step_cfg = config;
    for (int step = 1; step <= total; ++step) {
        std::vector<TrainingSequence> batch;
        batch.reserve(static_cast<size_t>(config.batch_size));
        for (int b = 0; b < config.batch_size && batch.size() < train.size(); ++b) {
            if (cursor >= order.size()) {
                shuffle_rng.shuffle(order);
                cursor = 0;
            }
            batch.push_back(train[order[cursor++]]);
        }
        double loss;
        try {
            step_cfg.learning_rate = lr_at(step);
            loss = training_step(ctx, student, batch, opt, step_cfg, dropout_rng);
        } catch (const RuntimeFailure& e) {
            // Diagnostic snapshot before aborting; silent NaN training is the
            // costliest failure mode.
            save_model((fs::path(out_dir) / "diagnostic").string(),
                       student, json{{"step", step}, {"error", e.what()}}.dump());
            throw RuntimeFailure(std::string("training aborted at step ") + std::to_string(step) +
                                 ": " + e.what());
        }
        running_loss += loss;
        ++running_count;
        if (log_file && (step % 50 == 0 || step == 1))
            log_file << json{{"step", step}, {"train_loss", loss}, {"wall_clock_sec", elapsed()}}.dump()
                     << '\n';
        if (step % config.checkpoint_interval == 0 || step == total) {
            emit_checkpoint(step, running_loss / running_count);
            running_loss = 0.0;
            running_count = 0;
            if (step == total) break;
        }
    }
    return result;
}

}  // namespace

RunResult run_distillation(const Model& teacher, Model student,
                           const std::vector<TrainingSequence>& train,
                           const std::vector<TrainingSequence>& dev, const DistillConfig& config,
                           const std::string& out_dir) {
    StepContext ctx{&teacher, LossKind::Distill};
    if (teacher.tokenizer_hash != student.tokenizer_hash)
        throw ValidationError(
            "run_distillation: tokenizer hashes differ; the shared-vocabulary assumption is "
            "violated");
    const uint64_t teacher_hash_before = teacher.parameter_hash();
    RunResult result = run_training_loop(ctx, student, train, dev, config, out_dir);
    if (teacher.parameter_hash() != teacher_hash_before)
        throw RuntimeFailure("run_distillation: teacher parameters changed during the run");
    return result;
}

Model supervised_finetune(Model model, const std::vector<TrainingSequence>& train,
                          const std::vector<TrainingSequence>& dev, const DistillConfig& config,
                          const std::string& out_dir) {
    StepContext ctx{nullptr, LossKind::CrossEntropy};
    run_training_loop(ctx, model, train, dev, config, out_dir);
    return model;
}

BestCheckpointReport select_best_checkpoint(
    const std::vector<Checkpoint>& checkpoints,
    const std::function<double(const Checkpoint&)>& scorer) {
    if (checkpoints.empty()) throw ValidationError("select_best_checkpoint: empty list");
    BestCheckpointReport report;
    bool have_best = false;
    double best_score = 0.0;
    for (const auto& ck : checkpoints) {
        ScoredCheckpoint scored;
        scored.checkpoint = ck;
        try {
            scored.score = scorer(ck);
        } catch (const std::exception& e) {
            scored.error = e.what();
        }
        if (scored.score && (!have_best || *scored.score > best_score)) {
            best_score = *scored.score;
            report.best = ck;  // strict '>' keeps the earliest step on ties
            have_best = true;
        }
        report.table.push_back(std::move(scored));
    }
    if (!have_best) throw RuntimeFailure("select_best_checkpoint: scorer failed on every checkpoint");
    return report;
}

}  // namespace kdcot
