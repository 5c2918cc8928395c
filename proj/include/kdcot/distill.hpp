#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kdcot/datapipe.hpp"
#include "kdcot/model.hpp"

namespace kdcot {

enum class KlDirection { Forward, Reverse };

inline const char* kl_direction_name(KlDirection d) {
    return d == KlDirection::Forward ? "forward" : "reverse";
}

struct DistillConfig {
    double temperature = 1.0;  // distillation tau
    double learning_rate = 5e-6;
    int batch_size = 16;
    int total_steps = 20000;
    int epochs = 10;
    int checkpoint_interval = 1000;
    int max_prompt_length = 512;
    KlDirection kl_direction = KlDirection::Forward;
    std::optional<LoraConfig> lora;
    uint64_t seed = 0;
    // Dev loss is evaluated on at most this many sequences per checkpoint.
    int dev_eval_limit = 64;
    // "constant" or "cosine" (decays to 10% of the peak by the last step).
    std::string lr_schedule = "constant";
    int warmup_steps = 0;

    void validate() const;
    std::string to_json() const;
    static DistillConfig from_json(const std::string& json_text);
};

struct Checkpoint {
    int step = 0;
    std::string snapshot_dir;
    double train_loss = 0.0;
    double dev_loss = 0.0;
    uint64_t config_hash = 0;
};

// Decoupled-weight-decay adaptive-moment optimizer state, one slot per
// trainable parameter.
struct OptimizerState {
    struct Slot {
        std::vector<float> m;
        std::vector<float> v;
    };
    std::map<std::string, Slot> slots;
    int64_t step_count = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    static OptimizerState init(const Model& model);
    void apply(Model& model, const std::map<std::string, std::vector<float>>& grads,
               double learning_rate);
};

// Mean over masked positions of the temperature-softened per-token KL,
// scaled by tau^2. Forward direction is KL(teacher || student); reverse
// swaps the roles. 64-bit accumulation; the training tape path is checked
// against this value in tests.
double distillation_loss(const TensorData<float>& teacher_logits,
                         const TensorData<float>& student_logits,
                         const std::vector<uint8_t>& loss_mask, double tau,
                         KlDirection direction = KlDirection::Forward);

// Builds the same loss on a tape so gradients flow through the student
// logits node only. Templated on the scalar so gradient checks can run the
// whole construction in double precision.
template <typename T>
typename Tape<T>::NodeId distillation_loss_node_t(Tape<T>& tape,
                                                  const TensorData<T>& teacher_logits,
                                                  typename Tape<T>::NodeId student_logits,
                                                  const std::vector<uint8_t>& loss_mask,
                                                  double tau, KlDirection direction) {
    const auto& student_val = tape.value(student_logits);
    if (teacher_logits.shape != student_val.shape || teacher_logits.shape.size() != 2)
        throw ValidationError("distillation_loss: teacher/student logits shapes must match");
    if (static_cast<int64_t>(loss_mask.size()) != teacher_logits.shape[0])
        throw ValidationError("distillation_loss: mask length must equal the row count");
    if (tau <= 0) throw ValidationError("distillation_loss: tau must be positive");
    const int64_t rows = teacher_logits.shape[0], n = teacher_logits.shape[1];
    const int64_t masked =
        std::count_if(loss_mask.begin(), loss_mask.end(), [](uint8_t b) { return b != 0; });
    if (masked == 0) throw ValidationError("distillation_loss: empty mask");
    const double inv_m = 1.0 / double(masked);
    const double inv_tau = 1.0 / tau;

    // Teacher log-probabilities are constants on the tape.
    TensorData<T> teacher_logp = TensorData<T>::zeros(teacher_logits.shape);
    for (int64_t t = 0; t < rows; ++t) {
        const T* src = teacher_logits.data.data() + t * n;
        double mx = -1e300;
        for (int64_t v = 0; v < n; ++v) mx = std::max(mx, double(src[v]) * inv_tau);
        double z = 0.0;
        for (int64_t v = 0; v < n; ++v) z += std::exp(double(src[v]) * inv_tau - mx);
        const double lz = mx + std::log(z);
        for (int64_t v = 0; v < n; ++v)
            teacher_logp.data[t * n + v] = static_cast<T>(double(src[v]) * inv_tau - lz);
    }

    auto scaled = tape.scale(student_logits, static_cast<T>(inv_tau));
    auto student_logp = tape.log_softmax_rows(scaled);

    if (direction == KlDirection::Forward) {
        // loss = C - sum w * log q, with w = mask * p / M and C = sum w * log p.
        TensorData<T> w = TensorData<T>::zeros(teacher_logits.shape);
        double c = 0.0;
        for (int64_t t = 0; t < rows; ++t) {
            if (!loss_mask[size_t(t)]) continue;
            for (int64_t v = 0; v < n; ++v) {
                const double p = std::exp(double(teacher_logp.data[t * n + v]));
                w.data[t * n + v] = static_cast<T>(p * inv_m);
                c += p * inv_m * double(teacher_logp.data[t * n + v]);
            }
        }
        auto cross = tape.weighted_sum(student_logp, std::move(w));
        auto loss = tape.add_scalar(tape.scale(cross, static_cast<T>(-1.0)), static_cast<T>(c));
        return tape.scale(loss, static_cast<T>(tau * tau));
    }

    // reverse: mean over masked rows of sum q * (log q - log p).
    TensorData<T> neg_logp = teacher_logp;
    for (auto& v : neg_logp.data) v = -v;
    auto q = tape.softmax_rows(scaled);
    auto diff = tape.add_const(student_logp, neg_logp);
    auto prod = tape.mul(q, diff);
    TensorData<T> w = TensorData<T>::zeros(teacher_logits.shape);
    for (int64_t t = 0; t < rows; ++t)
        if (loss_mask[size_t(t)])
            for (int64_t v = 0; v < n; ++v) w.data[t * n + v] = static_cast<T>(inv_m);
    auto loss = tape.weighted_sum(prod, std::move(w));
    return tape.scale(loss, static_cast<T>(tau * tau));
}

Tape<float>::NodeId distillation_loss_node(Tape<float>& tape,
                                           const TensorData<float>& teacher_logits,
                                           Tape<float>::NodeId student_logits,
                                           const std::vector<uint8_t>& loss_mask, double tau,
                                           KlDirection direction);

// One optimizer update on the trainable student parameters. The teacher is
// forwarded without gradients and must share the student's tokenizer hash.
double distill_step(const Model& teacher, Model& student,
                    const std::vector<TrainingSequence>& batch, OptimizerState& opt,
                    const DistillConfig& config, Rng& dropout_rng);

struct TrainLogEntry {
    int step = 0;
    double train_loss = 0.0;
    std::optional<double> dev_loss;
    double wall_clock_sec = 0.0;
};

struct RunResult {
    std::vector<Checkpoint> checkpoints;
    std::vector<TrainLogEntry> log;
};

// Full distillation run: seeded-shuffled batches for
// min(total_steps, epochs * steps_per_epoch) steps, checkpoints every
// checkpoint_interval steps plus final. Non-finite loss aborts with a
// diagnostic snapshot under <out_dir>/diagnostic.
RunResult run_distillation(const Model& teacher, Model student,
                           const std::vector<TrainingSequence>& train,
                           const std::vector<TrainingSequence>& dev, const DistillConfig& config,
                           const std::string& out_dir);

// Masked next-token cross-entropy on the model's own outputs; same loop and
// checkpoint machinery as distillation. Returns the fine-tuned model.
Model supervised_finetune(Model model, const std::vector<TrainingSequence>& train,
                          const std::vector<TrainingSequence>& dev, const DistillConfig& config,
                          const std::string& out_dir);

// Dev-set loss with the distillation loss definition (or cross-entropy when
// `teacher` is null).
double evaluate_dev_loss(const Model* teacher, const Model& student,
                         const std::vector<TrainingSequence>& dev, const DistillConfig& config);

// Fraction of masked dev positions where the student's argmax next-token
// prediction matches the teacher's.
double argmax_agreement(const Model& teacher, const Model& student,
                        const std::vector<TrainingSequence>& dev, int limit = 64);

struct ScoredCheckpoint {
    Checkpoint checkpoint;
    std::optional<double> score;  // absent when the scorer failed
    std::string error;
};

struct BestCheckpointReport {
    Checkpoint best;
    std::vector<ScoredCheckpoint> table;
};

// Argmax over scorer results, ties broken by earliest step. Scorer failures
// are recorded and the checkpoint excluded.
BestCheckpointReport select_best_checkpoint(
    const std::vector<Checkpoint>& checkpoints,
    const std::function<double(const Checkpoint&)>& scorer);

}  // namespace kdcot
