#include "vtm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "vtm/binio.hpp"
#include "vtm/errors.hpp"
#include "vtm/inference.hpp"
#include "vtm/rng.hpp"

namespace vtm {

namespace {

constexpr uint64_t kShuffleSalt = 1000;
constexpr uint64_t kStepSalt = 0x73746570ull;
constexpr char kMagicLine[] = "vtmckpt 1";

std::string hex16(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

std::string metric_line(int64_t step, const char* split, const char* metric, double value) {
    std::ostringstream out;
    out << step << '\t' << split << '\t' << metric << '\t' << value;
    return out.str();
}

}  // namespace

int64_t warmup_steps(int64_t total_steps, const OptimizerConfig& cfg) {
    if (total_steps < 0) throw ConfigError("warmup_steps: negative total");
    return static_cast<int64_t>(
        std::ceil(cfg.warmup_fraction * static_cast<double>(total_steps)));
}

LrPair lr_at(int64_t step, int64_t total_steps, const OptimizerConfig& cfg) {
    if (total_steps < 1) throw ConfigError("lr_at: total_steps must be >= 1");
    if (step < 0 || step > total_steps) throw ConfigError("lr_at: step out of range");
    const int64_t w = warmup_steps(total_steps, cfg);
    double factor = 1.0;
    if (step < w) {
        factor = static_cast<double>(step) / static_cast<double>(w);
    } else {
        const int64_t denom = total_steps - w;
        const double progress =
            denom > 0 ? static_cast<double>(step - w) / static_cast<double>(denom) : 1.0;
        factor = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
    return {cfg.lr_pretrained * factor, cfg.lr_new * factor};
}

void AdamW::step(ParamStore& store, const LrPair& lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Param& param : store.all()) {
        if (param.frozen || !param.var->requires_grad || !param.var->has_grad()) continue;
        const double base = param.tag == ParamTag::pretrained ? lr.pretrained : lr.fresh;
        Tensor& value = param.var->value;
        const Tensor& grad = param.var->grad;
        auto [it, fresh_slot] = slots_.try_emplace(param.name);
        if (fresh_slot) {
            it->second.m = Tensor(value.shape());
            it->second.v = Tensor(value.shape());
        }
        Tensor& m = it->second.m;
        Tensor& v = it->second.v;
        for (int64_t i = 0; i < value.numel(); ++i) {
            const double g = grad.data()[i];
            m.data()[i] = cfg_.beta1 * m.data()[i] + (1.0 - cfg_.beta1) * g;
            v.data()[i] = cfg_.beta2 * v.data()[i] + (1.0 - cfg_.beta2) * g * g;
            const double m_hat = m.data()[i] / bc1;
            const double v_hat = v.data()[i] / bc2;
            value.data()[i] -=
                base * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * value.data()[i]);
        }
        value.quantize_f32();
    }
}

Checkpoint snapshot(const ParamStore& store, int64_t step, uint64_t config_hash) {
    Checkpoint ckpt;
    ckpt.step = step;
    ckpt.config_hash = config_hash;
    ckpt.payload.reserve(static_cast<size_t>(store.total_elements()));
    for (const Param& param : store.all()) {
        ckpt.entries.push_back({param.name, param.tag, param.var->value.shape()});
        const Tensor& value = param.var->value;
        for (int64_t i = 0; i < value.numel(); ++i)
            ckpt.payload.push_back(static_cast<float>(value.data()[i]));
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ostringstream header;
    header << kMagicLine << '\n';
    header << "step " << ckpt.step << '\n';
    header << "config " << hex16(ckpt.config_hash) << '\n';
    header << "params " << ckpt.entries.size() << '\n';
    for (const CheckpointEntry& e : ckpt.entries) {
        header << e.name << ' ' << param_tag_name(e.tag) << ' ';
        for (size_t i = 0; i < e.shape.size(); ++i) {
            if (i) header << ',';
            header << e.shape[i];
        }
        header << '\n';
    }
    const std::string text = header.str();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_checkpoint: cannot open " + path.string());
    binio::write_u64(out, static_cast<uint64_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (float f : ckpt.payload) binio::write_f32(out, f);
    if (!out) throw DataError("save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_checkpoint: cannot open " + path.string());
    uint64_t header_len = 0;
    if (!binio::read_u64(in, header_len))
        throw BadMagicError("load_checkpoint: file too short for header");
    if (header_len > (1ull << 24)) throw BadMagicError("load_checkpoint: implausible header size");
    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));
    if (static_cast<uint64_t>(in.gcount()) != header_len)
        throw BadMagicError("load_checkpoint: truncated header");
    std::istringstream lines(text);
    std::string line;
    if (!std::getline(lines, line) || line != kMagicLine)
        throw BadMagicError("load_checkpoint: bad magic line");
    Checkpoint ckpt;
    std::string word;
    if (!(lines >> word >> ckpt.step) || word != "step")
        throw DataError("load_checkpoint: missing step line");
    std::string hash_text;
    if (!(lines >> word >> hash_text) || word != "config")
        throw DataError("load_checkpoint: missing config line");
    try {
        ckpt.config_hash = std::stoull(hash_text, nullptr, 16);
    } catch (const std::exception&) {
        throw DataError("load_checkpoint: bad config hash '" + hash_text + "'");
    }
    size_t param_count = 0;
    if (!(lines >> word >> param_count) || word != "params")
        throw DataError("load_checkpoint: missing params line");
    int64_t total = 0;
    for (size_t p = 0; p < param_count; ++p) {
        CheckpointEntry entry;
        std::string tag_text, dims_text;
        if (!(lines >> entry.name >> tag_text >> dims_text))
            throw DataError("load_checkpoint: short parameter table");
        entry.tag = param_tag_from_name(tag_text);
        std::istringstream dims(dims_text);
        std::string dim;
        while (std::getline(dims, dim, ',')) {
            try {
                entry.shape.push_back(std::stoll(dim));
            } catch (const std::exception&) {
                throw DataError("load_checkpoint: bad dimension '" + dim + "'");
            }
        }
        if (entry.shape.empty()) throw DataError("load_checkpoint: empty shape for " + entry.name);
        int64_t numel = 1;
        for (int64_t d : entry.shape) {
            if (d < 0) throw DataError("load_checkpoint: negative dimension");
            numel *= d;
        }
        total += numel;
        ckpt.entries.push_back(std::move(entry));
    }
    ckpt.payload.resize(static_cast<size_t>(total));
    for (int64_t i = 0; i < total; ++i) {
        if (!binio::read_f32(in, ckpt.payload[static_cast<size_t>(i)]))
            throw TruncatedPayloadError("load_checkpoint: payload ends early in " + path.string());
    }
    if (in.peek() != std::char_traits<char>::eof())
        throw DataError("load_checkpoint: trailing bytes after payload");
    return ckpt;
}

void restore_into(ParamStore& store, const Checkpoint& ckpt) {
    if (static_cast<int64_t>(ckpt.entries.size()) != store.count())
        throw DataError("restore: checkpoint and store disagree on parameter count");
    size_t offset = 0;
    for (size_t i = 0; i < ckpt.entries.size(); ++i) {
        const CheckpointEntry& entry = ckpt.entries[i];
        Param& param = store.all()[i];
        if (entry.name != param.name)
            throw DataError("restore: parameter order mismatch at " + entry.name);
        Tensor& value = param.var->value;
        if (entry.shape != value.shape())
            throw DataError("restore: shape mismatch for " + entry.name);
        for (int64_t j = 0; j < value.numel(); ++j)
            value.data()[j] = static_cast<double>(ckpt.payload[offset + static_cast<size_t>(j)]);
        offset += static_cast<size_t>(value.numel());
        param.tag = entry.tag;
    }
}

void initialize_from(ParamStore& store, const Checkpoint& ckpt, std::ostream* warnings) {
    size_t offset = 0;
    for (const CheckpointEntry& entry : ckpt.entries) {
        int64_t numel = 1;
        for (int64_t d : entry.shape) numel *= d;
        if (!store.has(entry.name)) {
            if (warnings) *warnings << "init: skipping unknown parameter " << entry.name << "\n";
            offset += static_cast<size_t>(numel);
            continue;
        }
        Param& param = store.at(entry.name);
        Tensor& value = param.var->value;
        if (entry.shape != value.shape())
            throw DataError("init: shape mismatch for " + entry.name);
        for (int64_t j = 0; j < numel; ++j)
            value.data()[j] = static_cast<double>(ckpt.payload[offset + static_cast<size_t>(j)]);
        offset += static_cast<size_t>(numel);
        param.tag = ParamTag::pretrained;
    }
}

void freeze(Model& model, bool freeze_text, bool freeze_vision) {
    if (model.cfg.unimodal && freeze_text)
        throw ConfigError("freeze: unimodal model has no text tower");
    if (freeze_text) model.store.set_frozen("text.", true);
    if (freeze_vision) model.store.set_frozen("vision.", true);
}

double clip_gradients(ParamStore& store, double max_norm) {
    double sq = 0.0;
    for (Param& param : store.all()) {
        if (param.frozen || !param.var->requires_grad || !param.var->has_grad()) continue;
        const Tensor& grad = param.var->grad;
        for (int64_t i = 0; i < grad.numel(); ++i) sq += grad.data()[i] * grad.data()[i];
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (Param& param : store.all()) {
            if (param.frozen || !param.var->requires_grad || !param.var->has_grad()) continue;
            Tensor& grad = param.var->grad;
            for (int64_t i = 0; i < grad.numel(); ++i) grad.data()[i] *= scale;
        }
    }
    return norm;
}

double train_step(Model& model, const std::vector<const VideoClip*>& clips,
                  const std::vector<int64_t>& labels, AdamW& opt, const LrPair& lr,
                  uint64_t step_seed) {
    model.store.zero_grads();
    Var loss = model_loss(model, clips, labels, step_seed);
    const double value = loss->value.data()[0];
    if (!std::isfinite(value)) throw NumericError("train_step: non-finite loss");
    backward(loss);
    clip_gradients(model.store, opt.config().clip_norm);
    opt.step(model.store, lr);
    return value;
}

FitResult fit(Model& model, const DatasetManifest& manifest, const FitOptions& options) {
    const OptimizerConfig& opt_cfg = options.opt;
    if (opt_cfg.epochs < 0) throw ConfigError("fit: negative epoch count");
    if (opt_cfg.batch_size < 1) throw ConfigError("fit: batch size must be >= 1");
    std::vector<const ManifestEntry*> train_entries = manifest.split_entries("train");
    if (train_entries.empty()) throw DataError("fit: empty train split");

    std::vector<VideoClip> storage;
    storage.reserve(train_entries.size());
    for (const ManifestEntry* e : train_entries) storage.push_back(load_clip(manifest.clip_path(*e)));
    // one (clip, label) pair per label so multi-label clips pair with each of
    // their captions
    std::vector<std::pair<const VideoClip*, int64_t>> pairs;
    for (size_t i = 0; i < storage.size(); ++i) {
        if (train_entries[i]->label_indices.empty())
            throw DataError("fit: unlabeled train clip " + train_entries[i]->clip_id);
        for (int64_t label : train_entries[i]->label_indices)
            pairs.push_back({&storage[i], label});
    }

    const int64_t pair_count = static_cast<int64_t>(pairs.size());
    const int64_t steps_per_epoch = (pair_count + opt_cfg.batch_size - 1) / opt_cfg.batch_size;
    const uint64_t hash = config_hash(model.cfg);
    FitResult result;
    result.total_steps = opt_cfg.epochs * steps_per_epoch;
    result.best = snapshot(model.store, 0, hash);
    result.best_step = 0;
    if (result.total_steps == 0) {
        result.last = result.best;
        if (!options.out_dir.empty()) {
            std::filesystem::create_directories(options.out_dir);
            save_checkpoint(result.best, options.out_dir / "best.ckpt");
            save_checkpoint(result.last, options.out_dir / "last.ckpt");
        }
        return result;
    }

    const bool has_val = !manifest.split_entries("val").empty();
    AdamW opt(opt_cfg);
    int64_t global_step = 0;
    for (int64_t epoch = 0; epoch < opt_cfg.epochs; ++epoch) {
        std::vector<size_t> order(pairs.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(Rng::mix(opt_cfg.seed, kShuffleSalt + static_cast<uint64_t>(epoch)));
        for (size_t i = order.size(); i > 1; --i) {
            const int64_t j = shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1);
            std::swap(order[i - 1], order[static_cast<size_t>(j)]);
        }
        for (int64_t s = 0; s < steps_per_epoch; ++s) {
            const int64_t begin = s * opt_cfg.batch_size;
            const int64_t count = std::min<int64_t>(opt_cfg.batch_size, pair_count - begin);
            std::vector<const VideoClip*> clips;
            std::vector<int64_t> labels;
            clips.reserve(static_cast<size_t>(count));
            labels.reserve(static_cast<size_t>(count));
            for (int64_t i = 0; i < count; ++i) {
                const auto& pair = pairs[order[static_cast<size_t>(begin + i)]];
                clips.push_back(pair.first);
                labels.push_back(pair.second);
            }
            const LrPair lr = lr_at(global_step, result.total_steps, opt_cfg);
            const uint64_t step_seed =
                Rng::mix(Rng::mix(opt_cfg.seed, kStepSalt), static_cast<uint64_t>(global_step));
            const double loss = train_step(model, clips, labels, opt, lr, step_seed);
            ++global_step;
            if (options.log_train_loss)
                result.metric_lines.push_back(metric_line(global_step, "train", "loss", loss));
        }
        if (has_val) {
            EvalSummary val = evaluate_manifest(model, manifest, "val");
            result.metric_lines.push_back(metric_line(global_step, "val", "top1", val.top1));
            result.metric_lines.push_back(metric_line(global_step, "val", "top5", val.top5));
            if (val.top1 > result.best_top1) {
                result.best_top1 = val.top1;
                result.best_step = global_step;
                result.best = snapshot(model.store, global_step, hash);
            }
        }
    }
    result.last = snapshot(model.store, global_step, hash);
    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir);
        save_checkpoint(result.best, options.out_dir / "best.ckpt");
        save_checkpoint(result.last, options.out_dir / "last.ckpt");
    }
    return result;
}

}  // namespace vtm
