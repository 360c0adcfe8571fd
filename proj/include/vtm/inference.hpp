#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "vtm/model.hpp"
#include "vtm/tensor.hpp"
#include "vtm/trainer.hpp"

namespace vtm {

struct ViewSet {
    int64_t spatial = 3;   // 1 (center) or 3 (along the longer side)
    int64_t temporal = 10;
};

struct PredictionRecord {
    std::string clip_id;
    std::vector<int64_t> ranking;  // label indices, best first
    std::vector<double> scores;    // aligned with ranking, descending
    std::vector<int64_t> truth;
};

// one record per score row; ties rank the lower label index first
std::vector<PredictionRecord> rank_scores(const Tensor& scores,
                                          const std::vector<std::string>& clip_ids,
                                          const std::vector<std::vector<int64_t>>& truth);

// cosine matching of clips against label embeddings
std::vector<PredictionRecord> classify(const Tensor& video_emb, const Tensor& label_emb,
                                       const std::vector<std::string>& clip_ids,
                                       const std::vector<std::vector<int64_t>>& truth);

double topk_accuracy(const std::vector<PredictionRecord>& records, int64_t k);
// unweighted mean over classes of average precision; zero-positive classes
// are excluded with a warning line
double mean_average_precision(const std::vector<PredictionRecord>& records, int64_t num_classes,
                              std::ostream* warnings = nullptr);

std::string format_prediction(const PredictionRecord& record);
void save_predictions(const std::vector<PredictionRecord>& records,
                      const std::filesystem::path& path);

struct EvalSummary {
    double top1 = 0.0;
    double top5 = 0.0;  // top-min(5, |vocab|)
    std::vector<PredictionRecord> records;
};

// single centered view per clip against the ensemble label embeddings
// (vocabulary logits when the model is unimodal)
EvalSummary evaluate(Model& model, const std::vector<const VideoClip*>& clips,
                     const std::vector<std::vector<int64_t>>& truth,
                     const std::vector<std::string>& ids);
EvalSummary evaluate_manifest(Model& model, const DatasetManifest& manifest,
                              const std::string& split);

std::vector<int64_t> temporal_starts(int64_t total_frames, int64_t span, int64_t num_clips);

// raw cosine rows averaged over spatial x temporal views, length |label_emb rows|
Tensor multi_view_scores(Model& model, const VideoClip& clip, const Tensor& label_emb,
                         const ViewSet& views);

EvalSummary evaluate_multi_view(Model& model, const DatasetManifest& manifest,
                                const std::string& split, const ViewSet& views);

struct ZeroShotResult {
    EvalSummary summary;
    double ci_low = 0.0, ci_high = 0.0;  // Wilson 95% interval on top-1
};

// matching against a caller-supplied vocabulary; no parameter updates
ZeroShotResult zero_shot(Model& model, const std::vector<const VideoClip*>& clips,
                         const std::vector<std::vector<int64_t>>& truth,
                         const std::vector<std::string>& ids, const LabelVocabulary& eval_vocab);

struct FewShotResult {
    EvalSummary summary;
    FitResult fit;
    int64_t train_pairs = 0;
};

// seeded k-per-class subsample of the train split, full fine-tune, val metrics
FewShotResult few_shot(const ModelConfig& model_cfg, const DatasetManifest& manifest, int64_t k,
                       const FitOptions& options);

double wilson_interval_low(double p_hat, int64_t n);
double wilson_interval_high(double p_hat, int64_t n);

}  // namespace vtm
