#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "vtm/model.hpp"
#include "vtm/trainer.hpp"

namespace vtm {

struct DataConfig {
    std::string root = "data";
    int64_t classes = 8;
    int64_t frames = 8;
    int64_t size = 64;
    int64_t train_per_class = 20;
    int64_t val_per_class = 5;
    int64_t multi_label_train = 0;
    int64_t multi_label_val = 0;
    uint64_t seed = 7;
};

struct EvalConfig {
    bool multi_view = false;
    int64_t spatial_views = 3;
    int64_t temporal_views = 10;
};

struct ExperimentConfig {
    DataConfig data;
    ModelConfig model;
    OptimizerConfig opt;
    EvalConfig eval;
};

// strict parse: unknown keys anywhere are ConfigErrors, absent keys keep the
// defaults above, types must match
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

// resolved round-trip form: parsing the emitted text reproduces the config
std::string config_to_json_text(const ExperimentConfig& cfg);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

SyntheticSpec synthetic_spec(const DataConfig& data);

}  // namespace vtm
