#include "vtm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "vtm/errors.hpp"
#include "vtm/objective.hpp"
#include "vtm/rng.hpp"

namespace vtm {

namespace {

constexpr uint64_t kEvalSeed = 0x6576616cull;
constexpr uint64_t kFewShotSalt = 0x6673ull;
constexpr int64_t kEvalBatch = 16;
constexpr double kWilsonZ = 1.96;

std::string join_i64(const std::vector<int64_t>& v) {
    std::ostringstream out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out << ',';
        out << v[i];
    }
    return out.str();
}

std::string join_f64(const std::vector<double>& v) {
    std::ostringstream out;
    out << std::setprecision(17);
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out << ',';
        out << v[i];
    }
    return out.str();
}

Tensor label_matrix(Model& model, const LabelVocabulary& vocab) {
    if (model.cfg.unimodal)
        throw ConfigError("matching eval: unimodal model has no text tower");
    Var emb = embed_label_set(vocab, model.templates, model.tokenizer, model.text,
                              LabelEmbedMode::ensemble, 0);
    return emb->value;
}

EvalSummary eval_against(Model& model, const std::vector<const VideoClip*>& clips,
                         const std::vector<std::vector<int64_t>>& truth,
                         const std::vector<std::string>& ids, const Tensor& label_emb) {
    const int64_t n = static_cast<int64_t>(clips.size());
    const int64_t v = label_emb.dim(0);
    Tensor scores({n, v});
    for (int64_t begin = 0; begin < n; begin += kEvalBatch) {
        const int64_t count = std::min<int64_t>(kEvalBatch, n - begin);
        std::vector<const VideoClip*> batch(clips.begin() + begin, clips.begin() + begin + count);
        Var video = model_video_batch(model, batch, false, Rng::mix(kEvalSeed, begin));
        Tensor sim = cosine_similarity(video->value, label_emb);
        std::copy(sim.data(), sim.data() + sim.numel(), scores.data() + begin * v);
    }
    EvalSummary summary;
    summary.records = rank_scores(scores, ids, truth);
    summary.top1 = topk_accuracy(summary.records, 1);
    summary.top5 = topk_accuracy(summary.records, std::min<int64_t>(5, v));
    return summary;
}

void check_eval_inputs(const std::vector<const VideoClip*>& clips,
                       const std::vector<std::vector<int64_t>>& truth,
                       const std::vector<std::string>& ids) {
    if (clips.empty()) throw ConfigError("evaluate: empty clip set");
    if (truth.size() != clips.size() || ids.size() != clips.size())
        throw ConfigError("evaluate: clips, truth, and ids must align");
    for (const VideoClip* clip : clips)
        if (!clip) throw ConfigError("evaluate: null clip");
}

}  // namespace

std::vector<PredictionRecord> rank_scores(const Tensor& scores,
                                          const std::vector<std::string>& clip_ids,
                                          const std::vector<std::vector<int64_t>>& truth) {
    if (scores.rank() != 2) throw ConfigError("rank_scores: scores must be [clips, labels]");
    const int64_t n = scores.dim(0), v = scores.dim(1);
    if (v < 1) throw ConfigError("rank_scores: no labels to rank");
    if (clip_ids.size() != static_cast<size_t>(n) || truth.size() != static_cast<size_t>(n))
        throw ConfigError("rank_scores: ids and truth must align with score rows");
    std::vector<PredictionRecord> records(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const double* row = scores.data() + i * v;
        std::vector<int64_t> order(static_cast<size_t>(v));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [row](int64_t a, int64_t b) { return row[a] > row[b]; });
        PredictionRecord& rec = records[static_cast<size_t>(i)];
        rec.clip_id = clip_ids[static_cast<size_t>(i)];
        rec.ranking = std::move(order);
        rec.scores.resize(static_cast<size_t>(v));
        for (int64_t r = 0; r < v; ++r)
            rec.scores[static_cast<size_t>(r)] = row[rec.ranking[static_cast<size_t>(r)]];
        rec.truth = truth[static_cast<size_t>(i)];
    }
    return records;
}

std::vector<PredictionRecord> classify(const Tensor& video_emb, const Tensor& label_emb,
                                       const std::vector<std::string>& clip_ids,
                                       const std::vector<std::vector<int64_t>>& truth) {
    return rank_scores(cosine_similarity(video_emb, label_emb), clip_ids, truth);
}

double topk_accuracy(const std::vector<PredictionRecord>& records, int64_t k) {
    if (records.empty()) throw DataError("topk_accuracy: no records");
    const int64_t v = static_cast<int64_t>(records.front().ranking.size());
    if (k < 1 || k > v) throw ConfigError("topk_accuracy: k out of range");
    int64_t hits = 0;
    for (const PredictionRecord& rec : records) {
        if (static_cast<int64_t>(rec.ranking.size()) != v)
            throw DataError("topk_accuracy: inconsistent ranking lengths");
        bool hit = false;
        for (int64_t r = 0; r < k && !hit; ++r) {
            const int64_t label = rec.ranking[static_cast<size_t>(r)];
            hit = std::find(rec.truth.begin(), rec.truth.end(), label) != rec.truth.end();
        }
        hits += hit ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(records.size());
}

double mean_average_precision(const std::vector<PredictionRecord>& records, int64_t num_classes,
                              std::ostream* warnings) {
    if (records.empty()) throw DataError("mean_average_precision: no records");
    if (num_classes < 1) throw ConfigError("mean_average_precision: num_classes must be >= 1");
    const size_t n = records.size();
    // dense per-record lookup: score and relevance for every class
    std::vector<std::vector<double>> score_of(n, std::vector<double>(num_classes));
    std::vector<std::vector<char>> relevant(n, std::vector<char>(num_classes, 0));
    for (size_t i = 0; i < n; ++i) {
        const PredictionRecord& rec = records[i];
        if (static_cast<int64_t>(rec.ranking.size()) != num_classes)
            throw DataError("mean_average_precision: ranking length != num_classes");
        for (size_t r = 0; r < rec.ranking.size(); ++r)
            score_of[i][static_cast<size_t>(rec.ranking[r])] = rec.scores[r];
        for (int64_t label : rec.truth) {
            if (label < 0 || label >= num_classes)
                throw DataError("mean_average_precision: truth label out of range");
            relevant[i][static_cast<size_t>(label)] = 1;
        }
    }
    double sum_ap = 0.0;
    int64_t counted = 0;
    for (int64_t c = 0; c < num_classes; ++c) {
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            return score_of[a][static_cast<size_t>(c)] > score_of[b][static_cast<size_t>(c)];
        });
        int64_t positives = 0;
        double ap = 0.0;
        for (size_t rank = 0; rank < n; ++rank) {
            if (!relevant[order[rank]][static_cast<size_t>(c)]) continue;
            ++positives;
            ap += static_cast<double>(positives) / static_cast<double>(rank + 1);
        }
        if (positives == 0) {
            if (warnings)
                *warnings << "mAP: class " << c << " has no positive clips, skipping\n";
            continue;
        }
        sum_ap += ap / static_cast<double>(positives);
        ++counted;
    }
    if (counted == 0) throw DataError("mean_average_precision: no class has positives");
    return sum_ap / static_cast<double>(counted);
}

std::string format_prediction(const PredictionRecord& record) {
    std::ostringstream out;
    out << record.clip_id << '\t' << join_i64(record.ranking) << '\t' << join_f64(record.scores)
        << '\t' << join_i64(record.truth);
    return out.str();
}

void save_predictions(const std::vector<PredictionRecord>& records,
                      const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("save_predictions: cannot open " + path.string());
    out << "clip_id\tranking\tscores\ttruth\n";
    for (const PredictionRecord& rec : records) out << format_prediction(rec) << '\n';
    if (!out) throw DataError("save_predictions: write failed for " + path.string());
}

EvalSummary evaluate(Model& model, const std::vector<const VideoClip*>& clips,
                     const std::vector<std::vector<int64_t>>& truth,
                     const std::vector<std::string>& ids) {
    check_eval_inputs(clips, truth, ids);
    if (model.cfg.unimodal) {
        const int64_t n = static_cast<int64_t>(clips.size());
        const int64_t v = model.vocab.size();
        Tensor scores({n, v});
        for (int64_t begin = 0; begin < n; begin += kEvalBatch) {
            const int64_t count = std::min<int64_t>(kEvalBatch, n - begin);
            std::vector<const VideoClip*> batch(clips.begin() + begin,
                                                clips.begin() + begin + count);
            Var video = model_video_batch(model, batch, false, Rng::mix(kEvalSeed, begin));
            Var logits = add_bcast(matmul(video, model.unimodal_w), model.unimodal_b);
            std::copy(logits->value.data(), logits->value.data() + logits->value.numel(),
                      scores.data() + begin * v);
        }
        EvalSummary summary;
        summary.records = rank_scores(scores, ids, truth);
        summary.top1 = topk_accuracy(summary.records, 1);
        summary.top5 = topk_accuracy(summary.records, std::min<int64_t>(5, v));
        return summary;
    }
    return eval_against(model, clips, truth, ids, label_matrix(model, model.vocab));
}

EvalSummary evaluate_manifest(Model& model, const DatasetManifest& manifest,
                              const std::string& split) {
    std::vector<const ManifestEntry*> entries = manifest.split_entries(split);
    if (entries.empty()) throw DataError("evaluate_manifest: split '" + split + "' is empty");
    std::vector<VideoClip> storage;
    storage.reserve(entries.size());
    std::vector<const VideoClip*> clips;
    std::vector<std::vector<int64_t>> truth;
    std::vector<std::string> ids;
    for (const ManifestEntry* e : entries) {
        storage.push_back(load_clip(manifest.clip_path(*e)));
        truth.push_back(e->label_indices);
        ids.push_back(e->clip_id);
    }
    for (const VideoClip& clip : storage) clips.push_back(&clip);
    return evaluate(model, clips, truth, ids);
}

EvalSummary evaluate_multi_view(Model& model, const DatasetManifest& manifest,
                                const std::string& split, const ViewSet& views) {
    std::vector<const ManifestEntry*> entries = manifest.split_entries(split);
    if (entries.empty())
        throw DataError("evaluate_multi_view: split '" + split + "' is empty");
    Tensor label_emb = label_matrix(model, model.vocab);
    const int64_t n = static_cast<int64_t>(entries.size());
    const int64_t v = label_emb.dim(0);
    Tensor scores({n, v});
    std::vector<std::vector<int64_t>> truth;
    std::vector<std::string> ids;
    for (int64_t i = 0; i < n; ++i) {
        const ManifestEntry* e = entries[static_cast<size_t>(i)];
        VideoClip clip = load_clip(manifest.clip_path(*e));
        Tensor row = multi_view_scores(model, clip, label_emb, views);
        std::copy(row.data(), row.data() + v, scores.data() + i * v);
        truth.push_back(e->label_indices);
        ids.push_back(e->clip_id);
    }
    EvalSummary summary;
    summary.records = rank_scores(scores, ids, truth);
    summary.top1 = topk_accuracy(summary.records, 1);
    summary.top5 = topk_accuracy(summary.records, std::min<int64_t>(5, v));
    return summary;
}

std::vector<int64_t> temporal_starts(int64_t total_frames, int64_t span, int64_t num_clips) {
    if (total_frames < 1 || span < 1 || num_clips < 1)
        throw ConfigError("temporal_starts: frame counts must be >= 1");
    std::vector<int64_t> starts;
    starts.reserve(static_cast<size_t>(num_clips));
    if (num_clips == 1) {
        starts.push_back(std::max<int64_t>((total_frames - span) / 2, 0));
        return starts;
    }
    for (int64_t j = 0; j < num_clips; ++j)
        starts.push_back(std::max<int64_t>(0, j * (total_frames - span) / (num_clips - 1)));
    return starts;
}

Tensor multi_view_scores(Model& model, const VideoClip& clip, const Tensor& label_emb,
                         const ViewSet& views) {
    if (views.spatial != 1 && views.spatial != 3)
        throw ConfigError("multi_view_scores: spatial views must be 1 or 3");
    if (views.temporal < 1) throw ConfigError("multi_view_scores: temporal views must be >= 1");
    if (label_emb.rank() != 2) throw ConfigError("multi_view_scores: label_emb must be [V, dim]");
    const int64_t size = model.cfg.image_size;
    const int64_t frames = model.cfg.frames;

    // shorter side to the model input size once, then crop per spatial view
    VideoClip resized = clip;
    if (clip.height != size || clip.width != size) {
        int64_t nh = size, nw = size;
        if (clip.height <= clip.width) {
            nw = std::max<int64_t>(size, std::llround(static_cast<double>(clip.width) * size /
                                                      static_cast<double>(clip.height)));
        } else {
            nh = std::max<int64_t>(size, std::llround(static_cast<double>(clip.height) * size /
                                                      static_cast<double>(clip.width)));
        }
        resized = resize_clip_bilinear(clip, nh, nw);
    }
    std::vector<std::pair<int64_t, int64_t>> offsets;
    if (views.spatial == 3) {
        offsets = three_crop_offsets(resized.height, resized.width, size);
    } else {
        offsets.push_back({(resized.height - size) / 2, (resized.width - size) / 2});
    }
    std::vector<VideoClip> crops;
    crops.reserve(offsets.size());
    for (const auto& [top, left] : offsets) crops.push_back(crop_clip(resized, top, left, size));

    const std::vector<int64_t> starts = temporal_starts(resized.frames, frames, views.temporal);
    std::vector<const VideoClip*> view_clips;
    std::vector<std::vector<int64_t>> view_idx;
    for (const VideoClip& crop : crops) {
        for (int64_t start : starts) {
            view_clips.push_back(&crop);
            std::vector<int64_t> idx(static_cast<size_t>(frames));
            for (int64_t i = 0; i < frames; ++i)
                idx[static_cast<size_t>(i)] = std::min<int64_t>(start + i, resized.frames - 1);
            view_idx.push_back(std::move(idx));
        }
    }
    const int64_t n_views = static_cast<int64_t>(view_clips.size());
    Tensor batch = gather_frames(view_clips, view_idx);
    Var sp = encode_spatial(batch, model.vision, model.cfg.prompt, n_views, frames);
    Var feat = aggregate_clip_features(sp, model.has_head ? &model.head : nullptr,
                                       model.cfg.prompt);
    Tensor per_view = cosine_similarity(feat->value, label_emb);

    // centered average so identical views reproduce the single-view row exactly
    const int64_t v = label_emb.dim(0);
    Tensor mean({v});
    for (int64_t j = 0; j < v; ++j) {
        const double base = per_view.at(0, j);
        double delta = 0.0;
        for (int64_t i = 0; i < n_views; ++i) delta += per_view.at(i, j) - base;
        mean.data()[j] = base + delta / static_cast<double>(n_views);
    }
    return mean;
}

double wilson_interval_low(double p_hat, int64_t n) {
    if (n < 1) throw ConfigError("wilson interval: n must be >= 1");
    const double z = kWilsonZ, nn = static_cast<double>(n);
    const double denom = 1.0 + z * z / nn;
    const double center = (p_hat + z * z / (2.0 * nn)) / denom;
    const double half =
        z * std::sqrt(p_hat * (1.0 - p_hat) / nn + z * z / (4.0 * nn * nn)) / denom;
    return std::max(0.0, center - half);
}

double wilson_interval_high(double p_hat, int64_t n) {
    if (n < 1) throw ConfigError("wilson interval: n must be >= 1");
    const double z = kWilsonZ, nn = static_cast<double>(n);
    const double denom = 1.0 + z * z / nn;
    const double center = (p_hat + z * z / (2.0 * nn)) / denom;
    const double half =
        z * std::sqrt(p_hat * (1.0 - p_hat) / nn + z * z / (4.0 * nn * nn)) / denom;
    return std::min(1.0, center + half);
}

ZeroShotResult zero_shot(Model& model, const std::vector<const VideoClip*>& clips,
                         const std::vector<std::vector<int64_t>>& truth,
                         const std::vector<std::string>& ids, const LabelVocabulary& eval_vocab) {
    check_eval_inputs(clips, truth, ids);
    if (eval_vocab.size() < 1) throw ConfigError("zero_shot: empty evaluation vocabulary");
    ZeroShotResult result;
    result.summary = eval_against(model, clips, truth, ids, label_matrix(model, eval_vocab));
    result.ci_low = wilson_interval_low(result.summary.top1, static_cast<int64_t>(clips.size()));
    result.ci_high = wilson_interval_high(result.summary.top1, static_cast<int64_t>(clips.size()));
    return result;
}

FewShotResult few_shot(const ModelConfig& model_cfg, const DatasetManifest& manifest, int64_t k,
                       const FitOptions& options) {
    if (k < 1) throw ConfigError("few_shot: k must be >= 1");
    std::vector<const ManifestEntry*> train = manifest.split_entries("train");
    if (train.empty()) throw DataError("few_shot: empty train split");
    const int64_t v = manifest.vocab.size();
    std::vector<std::vector<size_t>> by_class(static_cast<size_t>(v));
    for (size_t i = 0; i < train.size(); ++i) {
        if (train[i]->label_indices.empty())
            throw DataError("few_shot: unlabeled train clip " + train[i]->clip_id);
        const int64_t first = train[i]->label_indices.front();
        if (first < 0 || first >= v) throw DataError("few_shot: label out of range");
        by_class[static_cast<size_t>(first)].push_back(i);
    }
    Rng rng(Rng::mix(options.opt.seed, kFewShotSalt));
    std::unordered_set<size_t> keep;
    for (int64_t c = 0; c < v; ++c) {
        std::vector<size_t>& pool = by_class[static_cast<size_t>(c)];
        if (static_cast<int64_t>(pool.size()) < k)
            throw DataError("few_shot: class '" + manifest.vocab.label(c) + "' has fewer than k clips");
        for (int64_t i = 0; i < k; ++i) {
            const int64_t j = rng.uniform_int(i, static_cast<int64_t>(pool.size()) - 1);
            std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
            keep.insert(pool[static_cast<size_t>(i)]);
        }
    }
    DatasetManifest sub;
    sub.root = manifest.root;
    sub.vocab = manifest.vocab;
    size_t train_pos = 0;
    for (const ManifestEntry& e : manifest.entries) {
        if (e.split == "train") {
            if (keep.count(train_pos)) sub.entries.push_back(e);
            ++train_pos;
        } else {
            sub.entries.push_back(e);
        }
    }
    FewShotResult result;
    for (const ManifestEntry& e : sub.entries)
        if (e.split == "train") result.train_pairs += static_cast<int64_t>(e.label_indices.size());

    Model model = build_model(model_cfg, manifest.vocab);
    result.fit = fit(model, sub, options);
    if (!result.fit.best.entries.empty()) restore_into(model.store, result.fit.best);
    result.summary = evaluate_manifest(model, manifest, "val");
    return result;
}

}  // namespace vtm
