#include "vtm/commands.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <fstream>
#include <ostream>
#include <sstream>

#include "vtm/errors.hpp"
#include "vtm/trainer.hpp"

namespace vtm {

namespace fs = std::filesystem;

namespace {

DatasetManifest load_manifest_at(const fs::path& root) {
    return load_manifest(root / "manifest.tsv");
}

void write_metrics(const std::vector<std::string>& lines, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("metrics: cannot write " + path.string());
    out << "step\tsplit\tmetric\tvalue\n";
    for (const std::string& line : lines) out << line << '\n';
    if (!out) throw DataError("metrics: write failed for " + path.string());
}

Model build_from(const ExperimentConfig& cfg, const LabelVocabulary& vocab) {
    return build_model(cfg.model, vocab);
}

void check_hash(const Checkpoint& ckpt, const ModelConfig& model_cfg) {
    if (ckpt.config_hash != config_hash(model_cfg))
        throw ConfigError("checkpoint was written by a different model configuration");
}

EvalSummary final_eval(Model& model, const DatasetManifest& manifest,
                       const ExperimentConfig& cfg) {
    if (cfg.eval.multi_view)
        return evaluate_multi_view(model, manifest, "val",
                                   {cfg.eval.spatial_views, cfg.eval.temporal_views});
    return evaluate_manifest(model, manifest, "val");
}

void report_summary(const EvalSummary& summary, int64_t num_classes, std::ostream& out) {
    out << "val top1 " << summary.top1 << '\n';
    out << "val top5 " << summary.top5 << '\n';
    std::ostringstream warnings;
    out << "val mAP " << mean_average_precision(summary.records, num_classes, &warnings) << '\n';
    out << warnings.str();
}

void write_run_inputs(const ExperimentConfig& cfg, const Model& model, const RunPaths& paths) {
    save_config(cfg, paths.config);
    save_vocab(model.vocab, paths.vocab);
    save_templates(model.templates, paths.templates);
}

}  // namespace

RunPaths run_paths(const fs::path& dir) {
    RunPaths p;
    p.dir = dir;
    p.config = dir / "config.json";
    p.vocab = dir / "vocab.txt";
    p.templates = dir / "templates.tsv";
    p.metrics = dir / "metrics.tsv";
    p.predictions = dir / "predictions.tsv";
    p.checkpoints = dir / "checkpoints";
    p.ablation = dir / "ablation.tsv";
    return p;
}

RunLock::RunLock(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("run: cannot create '" + dir.string() + "': " + ec.message());
    file_ = dir / ".lock";
    const int fd = ::open(file_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        file_.clear();
        throw DataError("run: '" + dir.string() +
                        "' is locked by another writer (remove .lock if that run crashed)");
    }
    ::close(fd);
}

RunLock::~RunLock() {
    if (!file_.empty()) {
        std::error_code ec;
        fs::remove(file_, ec);
    }
}

void save_vocab(const LabelVocabulary& vocab, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("vocab: cannot write " + path.string());
    for (const std::string& label : vocab.labels()) out << label << '\n';
    if (!out) throw DataError("vocab: write failed for " + path.string());
}

LabelVocabulary load_vocab(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("vocab: cannot open " + path.string());
    std::vector<std::string> labels;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) labels.push_back(line);
    if (labels.empty()) throw DataError("vocab: no labels in " + path.string());
    return LabelVocabulary(labels);
}

void cmd_gen_data(const ExperimentConfig& cfg, std::ostream& out) {
    DatasetManifest manifest = generate_synthetic(synthetic_spec(cfg.data), cfg.data.root);
    int64_t train = 0, val = 0;
    for (const ManifestEntry& e : manifest.entries) (e.split == "train" ? train : val) += 1;
    out << "wrote " << manifest.entries.size() << " clips (" << train << " train, " << val
        << " val), " << manifest.vocab.size() << " classes to " << cfg.data.root << '\n';
}

EvalSummary cmd_train(const TrainCommand& cmd, std::ostream& out) {
    RunLock lock(cmd.run_dir);
    RunPaths paths = run_paths(cmd.run_dir);
    DatasetManifest manifest = load_manifest_at(cmd.cfg.data.root);
    Model model = build_from(cmd.cfg, manifest.vocab);

    if (!cmd.init_checkpoint.empty()) {
        Checkpoint init = load_checkpoint(cmd.init_checkpoint);
        initialize_from(model.store, init, &out);
        out << "initialized from " << cmd.init_checkpoint << '\n';
    }
    freeze(model, cmd.freeze_text, cmd.freeze_vision);
    write_run_inputs(cmd.cfg, model, paths);

    FitOptions options;
    options.opt = cmd.cfg.opt;
    options.out_dir = paths.checkpoints;
    FitResult result = fit(model, manifest, options);
    write_metrics(result.metric_lines, paths.metrics);
    out << "trained " << result.total_steps << " steps; best val top1 " << result.best_top1
        << " at step " << result.best_step << '\n';

    restore_into(model.store, result.best);
    EvalSummary summary = final_eval(model, manifest, cmd.cfg);
    save_predictions(summary.records, paths.predictions);
    report_summary(summary, model.vocab.size(), out);
    return summary;
}

EvalSummary cmd_eval(const ExperimentConfig& cfg, const fs::path& checkpoint,
                     const fs::path& run_dir, std::ostream& out) {
    RunLock lock(run_dir);
    RunPaths paths = run_paths(run_dir);
    DatasetManifest manifest = load_manifest_at(cfg.data.root);
    Model model = build_from(cfg, manifest.vocab);
    Checkpoint ckpt = load_checkpoint(checkpoint);
    check_hash(ckpt, cfg.model);
    restore_into(model.store, ckpt);

    EvalSummary summary = final_eval(model, manifest, cfg);
    save_config(cfg, paths.config);
    save_predictions(summary.records, paths.predictions);
    out << "evaluated " << summary.records.size() << " clips from step " << ckpt.step << '\n';
    report_summary(summary, model.vocab.size(), out);
    return summary;
}

ZeroShotResult cmd_zeroshot(const fs::path& train_run_dir, const fs::path& data_root,
                            const fs::path& checkpoint, const fs::path& run_dir,
                            std::ostream& out) {
    RunLock lock(run_dir);
    RunPaths paths = run_paths(run_dir);
    RunPaths train_paths = run_paths(train_run_dir);
    ExperimentConfig cfg = load_config(train_paths.config);
    LabelVocabulary train_vocab = load_vocab(train_paths.vocab);
    Model model = build_from(cfg, train_vocab);
    const fs::path ckpt_path =
        checkpoint.empty() ? train_paths.checkpoints / "best.ckpt" : checkpoint;
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    check_hash(ckpt, cfg.model);
    restore_into(model.store, ckpt);

    DatasetManifest eval_manifest = load_manifest_at(data_root);
    std::vector<const ManifestEntry*> entries = eval_manifest.split_entries("val");
    if (entries.empty()) throw DataError("zeroshot: eval manifest has no val split");
    std::vector<VideoClip> storage;
    storage.reserve(entries.size());
    std::vector<const VideoClip*> clips;
    std::vector<std::vector<int64_t>> truth;
    std::vector<std::string> ids;
    for (const ManifestEntry* e : entries) {
        storage.push_back(load_clip(eval_manifest.clip_path(*e)));
        truth.push_back(e->label_indices);
        ids.push_back(e->clip_id);
    }
    for (const VideoClip& clip : storage) clips.push_back(&clip);

    ZeroShotResult result = zero_shot(model, clips, truth, ids, eval_manifest.vocab);
    save_predictions(result.summary.records, paths.predictions);
    out << "zero-shot over " << eval_manifest.vocab.size() << " labels: top1 "
        << result.summary.top1 << " (95% CI " << result.ci_low << ".." << result.ci_high
        << "), top5 " << result.summary.top5 << '\n';
    return result;
}

FewShotResult cmd_fewshot(const ExperimentConfig& cfg, int64_t k, const fs::path& run_dir,
                          std::ostream& out) {
    RunLock lock(run_dir);
    RunPaths paths = run_paths(run_dir);
    DatasetManifest manifest = load_manifest_at(cfg.data.root);

    FitOptions options;
    options.opt = cfg.opt;
    options.out_dir = paths.checkpoints;
    FewShotResult result = few_shot(cfg.model, manifest, k, options);
    save_config(cfg, paths.config);
    save_vocab(manifest.vocab, paths.vocab);
    write_metrics(result.fit.metric_lines, paths.metrics);
    save_predictions(result.summary.records, paths.predictions);
    out << "few-shot k=" << k << " over " << result.train_pairs << " pairs: val top1 "
        << result.summary.top1 << ", top5 " << result.summary.top5 << '\n';
    return result;
}

AblationAxis ablation_axis_from_name(const std::string& name) {
    if (name == "visual-prompt") return AblationAxis::visual_prompt;
    if (name == "textual-prompt") return AblationAxis::textual_prompt;
    if (name == "freeze") return AblationAxis::freeze_grid;
    throw ConfigError("ablate: unknown axis '" + name + "'");
}

std::vector<std::string> cmd_ablate(const ExperimentConfig& cfg, AblationAxis axis,
                                    const fs::path& run_dir, std::ostream& out) {
    RunLock lock(run_dir);
    RunPaths paths = run_paths(run_dir);
    DatasetManifest manifest = load_manifest_at(cfg.data.root);

    struct Row {
        std::string setting;
        ExperimentConfig cfg;
        bool freeze_text = false, freeze_vision = false;
    };
    std::vector<Row> rows;
    switch (axis) {
        case AblationAxis::visual_prompt:
            for (VisualPromptKind kind : all_visual_prompts()) {
                Row row{visual_prompt_name(kind), cfg};
                row.cfg.model.prompt = kind;
                rows.push_back(row);
            }
            break;
        case AblationAxis::textual_prompt: {
            Row prompted{"prompted", cfg};
            prompted.cfg.model.text_prompt = true;
            Row plain{"label-only", cfg};
            plain.cfg.model.text_prompt = false;
            rows = {prompted, plain};
            break;
        }
        case AblationAxis::freeze_grid:
            for (const char* setting : {"none", "text", "vision", "both"}) {
                Row row{setting, cfg};
                row.freeze_text = setting == std::string("text") || setting == std::string("both");
                row.freeze_vision =
                    setting == std::string("vision") || setting == std::string("both");
                rows.push_back(row);
            }
            break;
    }

    std::vector<std::string> table;
    table.push_back("setting\ttop1\ttop5\tbest_step\ttotal_steps");
    for (const Row& row : rows) {
        Model model = build_from(row.cfg, manifest.vocab);
        freeze(model, row.freeze_text, row.freeze_vision);
        FitOptions options;
        options.opt = row.cfg.opt;
        FitResult result = fit(model, manifest, options);
        restore_into(model.store, result.best);
        EvalSummary summary = final_eval(model, manifest, row.cfg);
        std::ostringstream line;
        line << row.setting << '\t' << summary.top1 << '\t' << summary.top5 << '\t'
             << result.best_step << '\t' << result.total_steps;
        table.push_back(line.str());
    }

    std::ofstream file(paths.ablation);
    if (!file) throw DataError("ablate: cannot write " + paths.ablation.string());
    for (const std::string& line : table) {
        file << line << '\n';
        out << line << '\n';
    }
    save_config(cfg, paths.config);
    return table;
}

}  // namespace vtm
