#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace vtm {

struct VideoClip {
    std::string id;
    int64_t frames = 0, height = 0, width = 0, channels = 3;
    std::vector<float> data;  // frame-major then row-major, values in [0,1]
    std::vector<int64_t> label_indices;

    int64_t numel() const { return frames * height * width * channels; }
    float& at(int64_t f, int64_t y, int64_t x, int64_t c) {
        return data[((f * height + y) * width + x) * channels + c];
    }
    float at(int64_t f, int64_t y, int64_t x, int64_t c) const {
        return data[((f * height + y) * width + x) * channels + c];
    }
};

class LabelVocabulary {
public:
    LabelVocabulary() = default;
    explicit LabelVocabulary(std::vector<std::string> labels);

    int64_t size() const { return static_cast<int64_t>(labels_.size()); }
    const std::string& label(int64_t i) const { return labels_.at(static_cast<size_t>(i)); }
    const std::vector<std::string>& labels() const { return labels_; }
    // -1 when absent
    int64_t index_of(const std::string& label) const;
    bool operator==(const LabelVocabulary&) const = default;

private:
    std::vector<std::string> labels_;
};

struct ManifestEntry {
    std::string clip_id;
    std::string path;  // relative to manifest root
    std::vector<int64_t> label_indices;
    std::string split;  // "train" or "val"
};

struct DatasetManifest {
    std::filesystem::path root;
    LabelVocabulary vocab;
    std::vector<ManifestEntry> entries;

    std::vector<const ManifestEntry*> split_entries(const std::string& split) const;
    std::filesystem::path clip_path(const ManifestEntry& e) const { return root / e.path; }
};

struct SyntheticSpec {
    int64_t num_classes = 8;
    int64_t frames = 8;
    int64_t size = 64;  // square canvas
    int64_t train_per_class = 20;
    int64_t val_per_class = 5;
    uint64_t seed = 7;
    // extra two-motif clips (two shapes, two labels) appended per split
    int64_t multi_label_train = 0;
    int64_t multi_label_val = 0;
};

// The full motif set the generator can draw classes from, in canonical order.
std::vector<std::string> synthetic_motifs();

void save_clip(const VideoClip& clip, const std::filesystem::path& path);
VideoClip load_clip(const std::filesystem::path& path);

void save_manifest(const DatasetManifest& manifest,
                   const std::filesystem::path& path = {});  // default <root>/manifest.tsv
DatasetManifest load_manifest(const std::filesystem::path& path);

DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& manifest,
                                                           uint64_t seed, double fraction);

}  // namespace vtm
