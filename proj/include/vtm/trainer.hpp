#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "vtm/model.hpp"
#include "vtm/params.hpp"

namespace vtm {

struct OptimizerConfig {
    double lr_pretrained = 5e-6;
    double lr_new = 5e-5;
    double weight_decay = 0.2;
    double beta1 = 0.9, beta2 = 0.98, eps = 1e-8;
    double clip_norm = 1.0;  // global gradient norm cap, 0 disables
    int64_t epochs = 50;
    double warmup_fraction = 0.10;
    int64_t batch_size = 32;
    uint64_t seed = 0;
};

struct LrPair {
    double pretrained = 0.0;
    double fresh = 0.0;
};

int64_t warmup_steps(int64_t total_steps, const OptimizerConfig& cfg);
// linear 0 -> base over the warmup steps, then cosine base -> 0
LrPair lr_at(int64_t step, int64_t total_steps, const OptimizerConfig& cfg);

// decoupled-weight-decay adaptive moments; updated values snap back to the
// float32 grid so checkpoints round-trip bit-exactly
class AdamW {
public:
    explicit AdamW(OptimizerConfig cfg) : cfg_(std::move(cfg)) {}
    void step(ParamStore& store, const LrPair& lr);
    int64_t steps_taken() const { return t_; }
    const OptimizerConfig& config() const { return cfg_; }

private:
    struct Slots {
        Tensor m, v;
    };
    OptimizerConfig cfg_;
    std::unordered_map<std::string, Slots> slots_;
    int64_t t_ = 0;
};

struct CheckpointEntry {
    std::string name;
    ParamTag tag = ParamTag::fresh;
    std::vector<int64_t> shape;
};

struct Checkpoint {
    int64_t step = 0;
    uint64_t config_hash = 0;
    std::vector<CheckpointEntry> entries;
    std::vector<float> payload;  // concatenated values in entry order
};

Checkpoint snapshot(const ParamStore& store, int64_t step, uint64_t config_hash);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// strict restore: entry list must match the store exactly; tags come from the file
void restore_into(ParamStore& store, const Checkpoint& ckpt);
// pre-train initialization: parameters found in the checkpoint are loaded and
// tagged pretrained, absent ones keep their fresh init, file entries unknown
// to the store are skipped; shape conflicts are errors
void initialize_from(ParamStore& store, const Checkpoint& ckpt, std::ostream* warnings = nullptr);

void freeze(Model& model, bool freeze_text, bool freeze_vision);

// scales all gradients of update-eligible parameters so their global L2 norm
// is at most max_norm; returns the pre-clip norm
double clip_gradients(ParamStore& store, double max_norm);

// one optimizer step; throws NumericError on a non-finite loss before any update
double train_step(Model& model, const std::vector<const VideoClip*>& clips,
                  const std::vector<int64_t>& labels, AdamW& opt, const LrPair& lr,
                  uint64_t step_seed);

struct FitOptions {
    OptimizerConfig opt;
    std::filesystem::path out_dir;  // best/last checkpoints written here when set
    bool log_train_loss = true;
};

struct FitResult {
    std::vector<std::string> metric_lines;  // step\tsplit\tmetric\tvalue
    double best_top1 = -1.0;
    int64_t best_step = 0;
    Checkpoint best;  // highest val top-1; the initial state if never evaluated
    Checkpoint last;
    int64_t total_steps = 0;
};

FitResult fit(Model& model, const DatasetManifest& manifest, const FitOptions& options);

}  // namespace vtm
