#include "vtm/config.hpp"

#include <fstream>
#include <initializer_list>
#include <json.hpp>
#include <sstream>

#include "vtm/errors.hpp"

namespace vtm {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* key : allowed) known = known || item.key() == key;
        if (!known) throw ConfigError("config: unknown key '" + where + "." + item.key() + "'");
    }
}

template <typename T>
void read_field(const json& obj, const char* key, const std::string& where, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: bad value for '" + where + "." + key + "'");
    }
}

void read_data(const json& obj, DataConfig& data) {
    check_keys(obj, "data",
               {"root", "classes", "frames", "size", "train_per_class", "val_per_class",
                "multi_label_train", "multi_label_val", "seed"});
    read_field(obj, "root", "data", data.root);
    read_field(obj, "classes", "data", data.classes);
    read_field(obj, "frames", "data", data.frames);
    read_field(obj, "size", "data", data.size);
    read_field(obj, "train_per_class", "data", data.train_per_class);
    read_field(obj, "val_per_class", "data", data.val_per_class);
    read_field(obj, "multi_label_train", "data", data.multi_label_train);
    read_field(obj, "multi_label_val", "data", data.multi_label_val);
    read_field(obj, "seed", "data", data.seed);
}

void read_model(const json& obj, ModelConfig& model) {
    check_keys(obj, "model",
               {"embed_dim", "text_width", "text_layers", "text_heads", "context_len",
                "image_size", "patch", "vision_width", "vision_layers", "vision_heads", "frames",
                "head_layers", "head_heads", "visual_prompt", "text_prompt", "unimodal",
                "init_seed"});
    read_field(obj, "embed_dim", "model", model.embed_dim);
    read_field(obj, "text_width", "model", model.text_width);
    read_field(obj, "text_layers", "model", model.text_layers);
    read_field(obj, "text_heads", "model", model.text_heads);
    read_field(obj, "context_len", "model", model.context_len);
    read_field(obj, "image_size", "model", model.image_size);
    read_field(obj, "patch", "model", model.patch);
    read_field(obj, "vision_width", "model", model.vision_width);
    read_field(obj, "vision_layers", "model", model.vision_layers);
    read_field(obj, "vision_heads", "model", model.vision_heads);
    read_field(obj, "frames", "model", model.frames);
    read_field(obj, "head_layers", "model", model.head_layers);
    read_field(obj, "head_heads", "model", model.head_heads);
    std::string prompt = visual_prompt_name(model.prompt);
    read_field(obj, "visual_prompt", "model", prompt);
    model.prompt = visual_prompt_from_name(prompt);
    read_field(obj, "text_prompt", "model", model.text_prompt);
    read_field(obj, "unimodal", "model", model.unimodal);
    read_field(obj, "init_seed", "model", model.init_seed);
}

void read_opt(const json& obj, OptimizerConfig& opt) {
    check_keys(obj, "optimizer",
               {"lr_pretrained", "lr_new", "weight_decay", "beta1", "beta2", "eps", "clip_norm",
                "epochs", "warmup_fraction", "batch_size", "seed"});
    read_field(obj, "lr_pretrained", "optimizer", opt.lr_pretrained);
    read_field(obj, "lr_new", "optimizer", opt.lr_new);
    read_field(obj, "weight_decay", "optimizer", opt.weight_decay);
    read_field(obj, "beta1", "optimizer", opt.beta1);
    read_field(obj, "beta2", "optimizer", opt.beta2);
    read_field(obj, "eps", "optimizer", opt.eps);
    read_field(obj, "clip_norm", "optimizer", opt.clip_norm);
    read_field(obj, "epochs", "optimizer", opt.epochs);
    read_field(obj, "warmup_fraction", "optimizer", opt.warmup_fraction);
    read_field(obj, "batch_size", "optimizer", opt.batch_size);
    read_field(obj, "seed", "optimizer", opt.seed);
}

void read_eval(const json& obj, EvalConfig& eval) {
    check_keys(obj, "eval", {"multi_view", "spatial_views", "temporal_views"});
    read_field(obj, "multi_view", "eval", eval.multi_view);
    read_field(obj, "spatial_views", "eval", eval.spatial_views);
    read_field(obj, "temporal_views", "eval", eval.temporal_views);
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    check_keys(root, "<top>", {"data", "model", "optimizer", "eval"});
    ExperimentConfig cfg;
    if (root.contains("data")) read_data(root.at("data"), cfg.data);
    if (root.contains("model")) read_model(root.at("model"), cfg.model);
    if (root.contains("optimizer")) read_opt(root.at("optimizer"), cfg.opt);
    if (root.contains("eval")) read_eval(root.at("eval"), cfg.eval);
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("config: cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
    json root;
    root["data"] = {{"root", cfg.data.root},
                    {"classes", cfg.data.classes},
                    {"frames", cfg.data.frames},
                    {"size", cfg.data.size},
                    {"train_per_class", cfg.data.train_per_class},
                    {"val_per_class", cfg.data.val_per_class},
                    {"multi_label_train", cfg.data.multi_label_train},
                    {"multi_label_val", cfg.data.multi_label_val},
                    {"seed", cfg.data.seed}};
    root["model"] = {{"embed_dim", cfg.model.embed_dim},
                     {"text_width", cfg.model.text_width},
                     {"text_layers", cfg.model.text_layers},
                     {"text_heads", cfg.model.text_heads},
                     {"context_len", cfg.model.context_len},
                     {"image_size", cfg.model.image_size},
                     {"patch", cfg.model.patch},
                     {"vision_width", cfg.model.vision_width},
                     {"vision_layers", cfg.model.vision_layers},
                     {"vision_heads", cfg.model.vision_heads},
                     {"frames", cfg.model.frames},
                     {"head_layers", cfg.model.head_layers},
                     {"head_heads", cfg.model.head_heads},
                     {"visual_prompt", visual_prompt_name(cfg.model.prompt)},
                     {"text_prompt", cfg.model.text_prompt},
                     {"unimodal", cfg.model.unimodal},
                     {"init_seed", cfg.model.init_seed}};
    root["optimizer"] = {{"lr_pretrained", cfg.opt.lr_pretrained},
                         {"lr_new", cfg.opt.lr_new},
                         {"weight_decay", cfg.opt.weight_decay},
                         {"beta1", cfg.opt.beta1},
                         {"beta2", cfg.opt.beta2},
                         {"eps", cfg.opt.eps},
                         {"clip_norm", cfg.opt.clip_norm},
                         {"epochs", cfg.opt.epochs},
                         {"warmup_fraction", cfg.opt.warmup_fraction},
                         {"batch_size", cfg.opt.batch_size},
                         {"seed", cfg.opt.seed}};
    root["eval"] = {{"multi_view", cfg.eval.multi_view},
                    {"spatial_views", cfg.eval.spatial_views},
                    {"temporal_views", cfg.eval.temporal_views}};
    return root.dump(2) + "\n";
}

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("config: cannot write " + path.string());
    out << config_to_json_text(cfg);
    if (!out) throw DataError("config: write failed for " + path.string());
}

SyntheticSpec synthetic_spec(const DataConfig& data) {
    SyntheticSpec spec;
    spec.num_classes = data.classes;
    spec.frames = data.frames;
    spec.size = data.size;
    spec.train_per_class = data.train_per_class;
    spec.val_per_class = data.val_per_class;
    spec.seed = data.seed;
    spec.multi_label_train = data.multi_label_train;
    spec.multi_label_val = data.multi_label_val;
    return spec;
}

}  // namespace vtm
