#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "vtm/config.hpp"
#include "vtm/inference.hpp"

namespace vtm {

struct RunPaths {
    std::filesystem::path dir;
    std::filesystem::path config;        // config.json, the resolved settings
    std::filesystem::path vocab;         // vocab.txt, one label per line
    std::filesystem::path templates;     // templates.tsv
    std::filesystem::path metrics;       // metrics.tsv
    std::filesystem::path predictions;   // predictions.tsv
    std::filesystem::path checkpoints;   // best.ckpt / last.ckpt live here
    std::filesystem::path ablation;      // ablation.tsv
};
RunPaths run_paths(const std::filesystem::path& dir);

// exclusive marker file so two writers cannot share a run directory
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path file_;
};

void save_vocab(const LabelVocabulary& vocab, const std::filesystem::path& path);
LabelVocabulary load_vocab(const std::filesystem::path& path);

struct TrainCommand {
    ExperimentConfig cfg;
    std::filesystem::path run_dir;
    std::filesystem::path init_checkpoint;  // empty = random init
    bool freeze_text = false;
    bool freeze_vision = false;
};

void cmd_gen_data(const ExperimentConfig& cfg, std::ostream& out);
EvalSummary cmd_train(const TrainCommand& cmd, std::ostream& out);
EvalSummary cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                     const std::filesystem::path& run_dir, std::ostream& out);
// matches a trained run against the label set of another dataset
ZeroShotResult cmd_zeroshot(const std::filesystem::path& train_run_dir,
                            const std::filesystem::path& data_root,
                            const std::filesystem::path& checkpoint,
                            const std::filesystem::path& run_dir, std::ostream& out);
FewShotResult cmd_fewshot(const ExperimentConfig& cfg, int64_t k,
                          const std::filesystem::path& run_dir, std::ostream& out);

enum class AblationAxis { visual_prompt, textual_prompt, freeze_grid };
AblationAxis ablation_axis_from_name(const std::string& name);
std::vector<std::string> cmd_ablate(const ExperimentConfig& cfg, AblationAxis axis,
                                    const std::filesystem::path& run_dir, std::ostream& out);

}  // namespace vtm
