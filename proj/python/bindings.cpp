// Python bindings for the core operations: tokenizer, model, data rendering,
// distillation loss, evaluation protocol, and the synthetic task generators.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "kdcot/datapipe.hpp"
#include "kdcot/distill.hpp"
#include "kdcot/evalharness.hpp"
#include "kdcot/model.hpp"
#include "kdcot/synthtasks.hpp"
#include "kdcot/tokenizer.hpp"

namespace py = pybind11;
using namespace kdcot;

namespace {

// Row-major logits as nested lists keep the interface dependency-free; the
// arrays involved are tiny (T x vocab).
TensorData<float> logits_from_rows(const std::vector<std::vector<float>>& rows) {
    if (rows.empty()) throw ValidationError("logits: need at least one row");
    const int64_t n = static_cast<int64_t>(rows[0].size());
    auto t = TensorData<float>::zeros({static_cast<int64_t>(rows.size()), n});
    for (size_t i = 0; i < rows.size(); ++i) {
        if (static_cast<int64_t>(rows[i].size()) != n)
            throw ValidationError("logits: ragged rows");
        std::copy(rows[i].begin(), rows[i].end(), t.data.begin() + static_cast<long>(i) * n);
    }
    return t;
}

std::vector<std::vector<float>> logits_to_rows(const TensorData<float>& t) {
    std::vector<std::vector<float>> rows(static_cast<size_t>(t.shape[0]));
    const int64_t n = t.shape[1];
    for (int64_t i = 0; i < t.shape[0]; ++i)
        rows[static_cast<size_t>(i)].assign(t.data.begin() + i * n, t.data.begin() + (i + 1) * n);
    return rows;
}

}  // namespace

PYBIND11_MODULE(_kdcot, m) {
    m.doc() = "Teacher/student distillation toolkit: core operations";

    py::register_exception<ValidationError>(m, "ValidationError");

    // ---- tokenizer ----------------------------------------------------------
    py::class_<TokenizerSpec>(m, "TokenizerSpec")
        .def_static("build", &TokenizerSpec::build, py::arg("corpus_lines"),
                    py::arg("vocab_budget"))
        .def_static("load", &TokenizerSpec::load)
        .def("save", &TokenizerSpec::save)
        .def("encode", &TokenizerSpec::encode, py::arg("text"), py::arg("add_bos") = false)
        .def("decode", &TokenizerSpec::decode, py::arg("ids"), py::arg("keep_specials") = false)
        .def("token_id", &TokenizerSpec::token_id)
        .def("content_hash", &TokenizerSpec::content_hash)
        .def("__len__", &TokenizerSpec::size)
        .def_property_readonly_static("BOS", [](py::object) { return TokenizerSpec::kBos; })
        .def_property_readonly_static("EOS", [](py::object) { return TokenizerSpec::kEos; })
        .def_property_readonly_static("SEP", [](py::object) { return TokenizerSpec::kSep; });

    // ---- model --------------------------------------------------------------
    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("n_layers", &ModelConfig::n_layers)
        .def_readwrite("n_heads", &ModelConfig::n_heads)
        .def_readwrite("d_model", &ModelConfig::d_model)
        .def_readwrite("d_ff", &ModelConfig::d_ff)
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
        .def("validate", &ModelConfig::validate);

    py::class_<LoraConfig>(m, "LoraConfig")
        .def(py::init<>())
        .def_readwrite("rank", &LoraConfig::rank)
        .def_readwrite("alpha", &LoraConfig::alpha)
        .def_readwrite("dropout", &LoraConfig::dropout)
        .def_readwrite("target_patterns", &LoraConfig::target_patterns);

    py::class_<DecodeParams>(m, "DecodeParams")
        .def(py::init<>())
        .def_readwrite("temperature", &DecodeParams::temperature)
        .def_readwrite("max_new_tokens", &DecodeParams::max_new_tokens)
        .def_readwrite("stop_sequences", &DecodeParams::stop_sequences)
        .def_readwrite("seed", &DecodeParams::seed);

    py::class_<Model>(m, "Model")
        .def_readonly("config", &Model::config)
        .def_readonly("tokenizer_hash", &Model::tokenizer_hash)
        .def("total_parameter_count", &Model::total_parameter_count)
        .def("trainable_parameter_count", &Model::trainable_parameter_count)
        .def("parameter_hash", &Model::parameter_hash);

    m.def("build_model", &build_model, py::arg("config"), py::arg("seed"),
          py::arg("tokenizer_hash") = 0);
    m.def("inject_lora", &inject_lora, py::arg("base"), py::arg("lora"), py::arg("seed"));
    m.def("parameter_count_formula", &parameter_count_formula);
    m.def("save_model", &save_model, py::arg("dir"), py::arg("model"),
          py::arg("extra_manifest_json") = std::string("{}"));
    m.def("load_model", &load_model);
    m.def(
        "forward_logits",
        [](const Model& model, const std::vector<int>& ids) {
            return logits_to_rows(forward_logits(model, ids));
        },
        py::arg("model"), py::arg("token_ids"),
        "Next-token logits for every prefix, as a list of rows");
    m.def("generate", &generate, py::arg("model"), py::arg("prompt_ids"), py::arg("decode"));

    // ---- data pipeline ------------------------------------------------------
    py::enum_<RenderMode>(m, "RenderMode")
        .value("CoT", RenderMode::CoT)
        .value("Vanilla", RenderMode::Vanilla);

    py::class_<TrainingExample>(m, "TrainingExample")
        .def(py::init<>())
        .def_readwrite("id", &TrainingExample::id)
        .def_readwrite("instruction", &TrainingExample::instruction)
        .def_readwrite("rationale", &TrainingExample::rationale)
        .def_readwrite("answer", &TrainingExample::answer)
        .def_readwrite("task_name", &TrainingExample::task_name);

    py::class_<TrainingSequence>(m, "TrainingSequence")
        .def_readonly("ids", &TrainingSequence::ids)
        .def_property_readonly("loss_mask",
                               [](const TrainingSequence& s) {
                                   return std::vector<int>(s.loss_mask.begin(), s.loss_mask.end());
                               })
        .def_readonly("mode", &TrainingSequence::mode);

    m.def("strip_rationales", &strip_rationales);
    m.def("render_training_sequence", &render_training_sequence, py::arg("example"),
          py::arg("mode"), py::arg("tokenizer"), py::arg("max_len"),
          py::arg("loss_on_prompt") = false);
    m.def(
        "split_train_dev",
        [](std::vector<TrainingExample> examples, double train_fraction, uint64_t seed) {
            return split_train_dev(std::move(examples), SplitSpec{train_fraction, seed});
        },
        py::arg("examples"), py::arg("train_fraction"), py::arg("seed") = 0);

    // ---- distillation -------------------------------------------------------
    py::enum_<KlDirection>(m, "KlDirection")
        .value("Forward", KlDirection::Forward)
        .value("Reverse", KlDirection::Reverse);

    m.def(
        "distillation_loss",
        [](const std::vector<std::vector<float>>& teacher, const std::vector<std::vector<float>>& student,
           const std::vector<int>& mask, double tau, KlDirection direction) {
            std::vector<uint8_t> m8(mask.size());
            for (size_t i = 0; i < mask.size(); ++i) m8[i] = mask[i] != 0;
            return distillation_loss(logits_from_rows(teacher), logits_from_rows(student), m8, tau,
                                     direction);
        },
        py::arg("teacher_logits"), py::arg("student_logits"), py::arg("loss_mask"),
        py::arg("tau") = 1.0, py::arg("direction") = KlDirection::Forward,
        "Masked per-token KL between temperature-softened next-token distributions");

    // ---- evaluation protocol ------------------------------------------------
    py::class_<EvalTask>(m, "EvalTask")
        .def_readonly("name", &EvalTask::name)
        .def_readonly("instruction", &EvalTask::instruction)
        .def_property_readonly("question_count",
                               [](const EvalTask& t) { return t.questions.size(); });

    m.def("load_task", &load_task);
    m.def("build_fewshot_prompt", &build_fewshot_prompt, py::arg("task"), py::arg("question"),
          py::arg("k"));
    m.def(
        "extract_answer",
        [](const std::string& text) -> std::optional<std::string> { return extract_answer(text); },
        py::arg("generated_text"),
        "Answer after the last 'the answer is' cue, or None when absent");
    m.def("normalize_answer", &normalize_answer);

    // ---- synthetic tasks ----------------------------------------------------
    py::enum_<TaskKind>(m, "TaskKind")
        .value("BooleanExpressions", TaskKind::BooleanExpressions)
        .value("ObjectTracking", TaskKind::ObjectTracking)
        .value("MultistepArithmetic", TaskKind::MultistepArithmetic)
        .value("TemporalOrdering", TaskKind::TemporalOrdering);

    py::class_<TaskInstance>(m, "TaskInstance")
        .def_readonly("question", &TaskInstance::question)
        .def_readonly("canonical_form", &TaskInstance::canonical_form);

    m.def(
        "draw_instance",
        [](TaskKind kind, uint64_t seed, int difficulty) {
            Rng rng(seed);
            return draw_instance(kind, rng, difficulty);
        },
        py::arg("kind"), py::arg("seed"), py::arg("difficulty"));
    m.def(
        "rationale_oracle",
        [](TaskKind kind, const TaskInstance& inst) { return rationale_oracle(kind, inst); },
        py::arg("kind"), py::arg("instance"),
        "Machine-built (rationale, answer) pair for an instance");
    m.def("verify_rationale", &verify_rationale, py::arg("kind"), py::arg("instance"),
          py::arg("rationale"), py::arg("answer"));
    m.def("task_kind_name", &task_kind_name);
}
