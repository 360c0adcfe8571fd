#include <CLI11.hpp>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include "vtm/commands.hpp"
#include "vtm/errors.hpp"

namespace fs = std::filesystem;

namespace {

vtm::ExperimentConfig load_or_default(const std::string& config_path) {
    if (config_path.empty()) return {};
    return vtm::load_config(config_path);
}

void apply_freeze(const std::string& what, vtm::TrainCommand& cmd) {
    if (what.empty()) return;
    if (what == "text") {
        cmd.freeze_text = true;
    } else if (what == "vision") {
        cmd.freeze_vision = true;
    } else if (what == "both") {
        cmd.freeze_text = cmd.freeze_vision = true;
    } else {
        throw vtm::ConfigError("--freeze expects text, vision, or both");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"video-text matching workbench"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "experiment config (JSON)");

    auto* gen = app.add_subcommand("gen-data", "write a synthetic labeled clip dataset");

    auto* train = app.add_subcommand("train", "fine-tune and track validation metrics");
    std::string run_dir = "runs/default";
    std::string visual_prompt, freeze_what, init_from = "random";
    bool no_text_prompt = false, unimodal = false;
    train->add_option("--run", run_dir, "run directory for outputs");
    train->add_option("--visual-prompt", visual_prompt,
                      "joint|shift|meanp|conv1d|lstm|transf|transf_cls");
    train->add_flag("--no-text-prompt", no_text_prompt, "use bare label text");
    train->add_flag("--unimodal-baseline", unimodal, "linear classifier, no text tower");
    train->add_option("--freeze", freeze_what, "text|vision|both");
    train->add_option("--init", init_from, "checkpoint path, or 'random'");

    auto* eval = app.add_subcommand("eval", "score a checkpoint on the val split");
    std::string eval_ckpt, eval_run = "runs/eval";
    bool multi_view = false;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate")->required();
    eval->add_option("--run", eval_run, "run directory for outputs");
    eval->add_flag("--multi-view", multi_view, "average several spatial/temporal views");

    auto* zeroshot = app.add_subcommand("zeroshot", "match a trained run against new labels");
    std::string zs_train_run, zs_data, zs_ckpt, zs_run = "runs/zeroshot";
    zeroshot->add_option("--train-run", zs_train_run, "directory of the training run")->required();
    zeroshot->add_option("--data", zs_data, "dataset root with the evaluation labels")->required();
    zeroshot->add_option("--checkpoint", zs_ckpt, "defaults to the run's best.ckpt");
    zeroshot->add_option("--run", zs_run, "run directory for outputs");

    auto* fewshot = app.add_subcommand("fewshot", "k clips per class, then fine-tune");
    int64_t shots = 2;
    std::string fs_run = "runs/fewshot";
    fewshot->add_option("--k", shots, "clips kept per class")->required();
    fewshot->add_option("--run", fs_run, "run directory for outputs");

    auto* ablate = app.add_subcommand("ablate", "compare settings along one axis");
    std::string axis = "visual-prompt", ab_run = "runs/ablate";
    ablate->add_option("--axis", axis, "visual-prompt|textual-prompt|freeze");
    ablate->add_option("--run", ab_run, "run directory for outputs");

    CLI11_PARSE(app, argc, argv);

    try {
        vtm::ExperimentConfig cfg = load_or_default(config_path);
        if (gen->parsed()) {
            vtm::cmd_gen_data(cfg, std::cout);
        } else if (train->parsed()) {
            vtm::TrainCommand cmd;
            cmd.cfg = cfg;
            cmd.run_dir = run_dir;
            if (!visual_prompt.empty())
                cmd.cfg.model.prompt = vtm::visual_prompt_from_name(visual_prompt);
            if (no_text_prompt) cmd.cfg.model.text_prompt = false;
            if (unimodal) cmd.cfg.model.unimodal = true;
            apply_freeze(freeze_what, cmd);
            if (init_from != "random") cmd.init_checkpoint = init_from;
            vtm::cmd_train(cmd, std::cout);
        } else if (eval->parsed()) {
            if (multi_view) cfg.eval.multi_view = true;
            vtm::cmd_eval(cfg, eval_ckpt, eval_run, std::cout);
        } else if (zeroshot->parsed()) {
            vtm::cmd_zeroshot(zs_train_run, zs_data, zs_ckpt, zs_run, std::cout);
        } else if (fewshot->parsed()) {
            vtm::cmd_fewshot(cfg, shots, fs_run, std::cout);
        } else if (ablate->parsed()) {
            vtm::cmd_ablate(cfg, vtm::ablation_axis_from_name(axis), ab_run, std::cout);
        }
    } catch (const vtm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const vtm::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const vtm::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 4;
    }
    return 0;
}
