// Command-line front end over the pipeline stages. Exit codes: 0 success,
// 1 invalid input or configuration, 2 runtime failure.

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kdcot/pipeline.hpp"

using namespace kdcot;

namespace {

struct CommonOpts {
    std::string preset = "desk";
    std::string config_file;
    std::vector<std::string> overrides;  // key=value
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--preset", opts.preset, "Configuration preset (desk or paper)")
        ->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("--config", opts.config_file, "JSON config file overlaying the preset");
    cmd->add_option("--set", opts.overrides,
                    "Override a single config key, dotted path (e.g. distill.learning_rate=1e-3)");
}

RunConfig resolve_config(const CommonOpts& opts) {
    RunConfig cfg = RunConfig::from_preset(opts.preset);
    if (!opts.config_file.empty()) cfg.apply_file(opts.config_file);
    for (const auto& kv : opts.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ValidationError("--set expects key=value, got: " + kv);
        cfg.apply_flag(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

std::map<std::string, std::string> parse_variant_dirs(const std::vector<std::string>& specs,
                                                      std::vector<std::string>& order) {
    std::map<std::string, std::string> out;
    for (const auto& s : specs) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ValidationError("--model expects name=dir, got: " + s);
        const std::string name = s.substr(0, eq);
        if (out.count(name)) throw ValidationError("duplicate model name: " + name);
        out[name] = s.substr(eq + 1);
        order.push_back(name);
    }
    if (out.empty()) throw ValidationError("at least one --model name=dir is required");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge distillation with chain-of-thought: data, training, and evaluation"};
    app.require_subcommand(1);

    CommonOpts common;

    std::string out_dir, tasks_dir, data_dir, teacher_dir, run_dir, scores_path;
    std::string mode = "cot", kl = "forward", teacher_name = "teacher";
    bool strip = false, use_lora = false;
    std::vector<std::string> model_specs;

    auto* gen = app.add_subcommand("gen-tasks", "Generate synthetic task splits and eval files");
    gen->add_option("--out", out_dir)->required();
    add_common(gen, common);

    auto* prep = app.add_subcommand("prepare-data",
                                    "Tokenize and render training sequences from task files");
    prep->add_option("--tasks", tasks_dir)->required();
    prep->add_option("--out", out_dir)->required();
    prep->add_flag("--strip-rationales", strip, "Drop rationales before rendering");
    add_common(prep, common);

    auto* tt = app.add_subcommand("train-teacher", "Supervised fine-tuning of the teacher");
    tt->add_option("--data", data_dir)->required();
    tt->add_option("--out", out_dir)->required();
    add_common(tt, common);

    auto* dist = app.add_subcommand("distill", "Distill the frozen teacher into the student");
    dist->add_option("--data", data_dir)->required();
    dist->add_option("--teacher", teacher_dir)->required();
    dist->add_option("--out", out_dir)->required();
    dist->add_option("--mode", mode)->check(CLI::IsMember({"cot", "vanilla"}));
    dist->add_option("--kl", kl)->check(CLI::IsMember({"forward", "reverse"}));
    dist->add_flag("--lora", use_lora, "Train low-rank adapters instead of full weights");
    add_common(dist, common);

    auto* ev = app.add_subcommand("eval", "Few-shot exact-match evaluation");
    ev->add_option("--data", data_dir)->required();
    ev->add_option("--tasks", tasks_dir)->required();
    ev->add_option("--out", out_dir)->required();
    ev->add_option("--model", model_specs, "name=dir; first entry is the gain baseline")
        ->required();
    add_common(ev, common);

    auto* sel = app.add_subcommand("select-best", "Pick the best checkpoint of a distillation run");
    sel->add_option("--run", run_dir)->required();
    sel->add_option("--data", data_dir)->required();
    sel->add_option("--tasks", tasks_dir)->required();
    sel->add_option("--out", out_dir)->required();
    add_common(sel, common);

    auto* bench = app.add_subcommand("bench", "Inference-time comparison over a prompt suite");
    bench->add_option("--data", data_dir)->required();
    bench->add_option("--tasks", tasks_dir)->required();
    bench->add_option("--out", out_dir)->required();
    bench->add_option("--model", model_specs)->required();
    bench->add_option("--teacher-name", teacher_name, "Entry timings are normalized against");
    add_common(bench, common);

    auto* rep = app.add_subcommand("report", "Render report tables from a per-task score file");
    rep->add_option("--scores", scores_path)->required();
    rep->add_option("--out", out_dir)->required();
    add_common(rep, common);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            stage_gen_tasks(resolve_config(common), out_dir);
        } else if (prep->parsed()) {
            stage_prepare_data(resolve_config(common), tasks_dir, out_dir, strip);
        } else if (tt->parsed()) {
            stage_train_teacher(resolve_config(common), data_dir, out_dir);
        } else if (dist->parsed()) {
            stage_distill(resolve_config(common), data_dir, teacher_dir, out_dir,
                          mode == "cot" ? RenderMode::CoT : RenderMode::Vanilla,
                          kl == "forward" ? KlDirection::Forward : KlDirection::Reverse, use_lora);
        } else if (ev->parsed()) {
            std::vector<std::string> order;
            auto dirs = parse_variant_dirs(model_specs, order);
            EvalReport report =
                stage_eval(resolve_config(common), order, dirs, data_dir, tasks_dir, out_dir);
            std::cout << render_report_markdown(report);
        } else if (sel->parsed()) {
            auto report =
                stage_select_best(resolve_config(common), run_dir, data_dir, tasks_dir, out_dir);
            std::cout << "best checkpoint: step " << report.best.step << " ("
                      << report.best.snapshot_dir << ")\n";
        } else if (bench->parsed()) {
            std::vector<std::string> order;
            auto dirs = parse_variant_dirs(model_specs, order);
            auto stats = stage_bench(resolve_config(common), dirs, data_dir, tasks_dir, out_dir,
                                     teacher_name);
            std::cout << render_timing_markdown(stats, teacher_name);
        } else if (rep->parsed()) {
            EvalReport report = stage_report(scores_path, out_dir);
            std::cout << render_report_markdown(report);
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
