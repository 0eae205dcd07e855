#include "ldp/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace ldp {

using nlohmann::json;

void DataConfig::validate() const {
    if (source != "synthetic" && source != "directory")
        throw std::invalid_argument("config: data.source must be 'synthetic' or 'directory'");
    if (source == "directory" && path.empty())
        throw std::invalid_argument("config: data.path is required when data.source is 'directory'");
    if (source == "synthetic" && count < 1)
        throw std::invalid_argument("config: data.count must be >= 1");
    if (image_size < 8) throw std::invalid_argument("config: data.image_size must be >= 8");
}

void DiffusionSection::validate() const {
    if (timesteps < 2) throw std::invalid_argument("config: diffusion.timesteps must be >= 2");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument("config: need 0 < diffusion.beta_start <= beta_end < 1");
    denoiser.validate();
}

void DetectorSection::validate() const {
    grid.validate();
    if (scenes < 1) throw std::invalid_argument("config: detector.scenes must be >= 1");
}

void AttackSection::validate() const {
    weights.validate();
    optimizer.validate();
    transform.validate();
    if (num_images < 1) throw std::invalid_argument("config: attack.num_images must be >= 1");
}

void EvalSection::validate() const {
    if (num_images < 1) throw std::invalid_argument("config: eval.num_images must be >= 1");
    if (!(confidence_threshold > 0.0 && confidence_threshold < 1.0))
        throw std::invalid_argument("config: eval.confidence_threshold must be in (0,1)");
    if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
        throw std::invalid_argument("config: eval.iou_threshold must be in (0,1)");
}

void PipelineConfig::validate() const {
    data.validate();
    autoencoder.validate();
    diffusion.validate();
    detector.validate();
    attack.validate();
    eval.validate();
    if (autoencoder.image_size != data.image_size || detector.grid.image_size != data.image_size)
        throw std::invalid_argument("config: image sizes are wired from data.image_size and diverged");
    if (diffusion.denoiser.latent_size != autoencoder.latent_size() ||
        diffusion.denoiser.latent_depth != autoencoder.latent_depth)
        throw std::invalid_argument("config: diffusion latent shape must match the autoencoder");
}

PipelineConfig default_pipeline_config() {
    PipelineConfig cfg;
    cfg.autoencoder.image_size = cfg.data.image_size;
    cfg.detector.grid.image_size = cfg.data.image_size;
    cfg.diffusion.denoiser.latent_size = cfg.autoencoder.latent_size();
    cfg.diffusion.denoiser.latent_depth = cfg.autoencoder.latent_depth;
    cfg.validate();
    return cfg;
}

namespace {

void check_keys(const json& j, const std::string& section, const std::set<std::string>& allowed) {
    if (!j.is_object())
        throw std::invalid_argument("config: section '" + section + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw std::invalid_argument("config: unknown key '" +
                                        (section.empty() ? it.key() : section + "." + it.key()) + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void parse_data(const json& j, DataConfig& out) {
    check_keys(j, "data", {"source", "path", "count", "image_size"});
    read(j, "source", out.source);
    read(j, "path", out.path);
    read(j, "count", out.count);
    read(j, "image_size", out.image_size);
}

void parse_autoencoder(const json& j, AEConfig& out) {
    check_keys(j, "autoencoder",
               {"downsample_factor", "latent_depth", "base_channels", "epochs", "learning_rate",
                "batch_size"});
    read(j, "downsample_factor", out.downsample_factor);
    read(j, "latent_depth", out.latent_depth);
    read(j, "base_channels", out.base_channels);
    read(j, "epochs", out.epochs);
    read(j, "learning_rate", out.learning_rate);
    read(j, "batch_size", out.batch_size);
}

void parse_diffusion(const json& j, DiffusionSection& out) {
    check_keys(j, "diffusion",
               {"timesteps", "beta_start", "beta_end", "base_channels", "time_embed_dim",
                "down_stages", "epochs", "learning_rate", "batch_size"});
    read(j, "timesteps", out.timesteps);
    read(j, "beta_start", out.beta_start);
    read(j, "beta_end", out.beta_end);
    read(j, "base_channels", out.denoiser.base_channels);
    read(j, "time_embed_dim", out.denoiser.time_embed_dim);
    read(j, "down_stages", out.denoiser.down_stages);
    read(j, "epochs", out.denoiser.epochs);
    read(j, "learning_rate", out.denoiser.learning_rate);
    read(j, "batch_size", out.denoiser.batch_size);
}

void parse_detector(const json& j, DetectorSection& out) {
    check_keys(j, "detector",
               {"grid_size", "classes", "person_class", "confidence_threshold", "base_channels",
                "scenes", "epochs", "learning_rate", "batch_size"});
    read(j, "grid_size", out.grid.grid_size);
    read(j, "classes", out.grid.classes);
    read(j, "confidence_threshold", out.grid.confidence_threshold);
    read(j, "base_channels", out.grid.base_channels);
    read(j, "scenes", out.scenes);
    read(j, "epochs", out.grid.epochs);
    read(j, "learning_rate", out.grid.learning_rate);
    read(j, "batch_size", out.grid.batch_size);
    if (j.contains("person_class")) {
        const std::string name = j.at("person_class").get<std::string>();
        int idx = -1;
        for (size_t i = 0; i < out.grid.classes.size(); ++i)
            if (out.grid.classes[i] == name) idx = static_cast<int>(i);
        if (idx < 0)
            throw std::invalid_argument("config: detector.person_class '" + name +
                                        "' is not in detector.classes");
        out.grid.person_class = idx;
    }
}

void parse_transform(const json& j, TransformConfig& out) {
    check_keys(j, "attack.transform",
               {"patch_scale", "rotation_deg", "scale_jitter", "brightness", "contrast_min",
                "contrast_max", "noise_std"});
    read(j, "patch_scale", out.patch_scale);
    read(j, "rotation_deg", out.rotation_deg);
    read(j, "scale_jitter", out.scale_jitter);
    read(j, "brightness", out.brightness);
    read(j, "contrast_min", out.contrast_min);
    read(j, "contrast_max", out.contrast_max);
    read(j, "noise_std", out.noise_std);
}

void parse_attack(const json& j, AttackSection& out) {
    check_keys(j, "attack",
               {"alpha", "beta", "gamma", "steps", "batch_size", "learning_rate", "adam_beta1",
                "adam_beta2", "chain_stride", "palette_path", "num_images", "transform"});
    read(j, "alpha", out.weights.alpha);
    read(j, "beta", out.weights.beta);
    read(j, "gamma", out.weights.gamma);
    read(j, "steps", out.optimizer.steps);
    read(j, "batch_size", out.optimizer.batch_size);
    read(j, "learning_rate", out.optimizer.learning_rate);
    read(j, "adam_beta1", out.optimizer.adam_beta1);
    read(j, "adam_beta2", out.optimizer.adam_beta2);
    read(j, "chain_stride", out.optimizer.chain_stride);
    read(j, "palette_path", out.palette_path);
    read(j, "num_images", out.num_images);
    if (j.contains("transform")) parse_transform(j.at("transform"), out.transform);
}

void parse_eval(const json& j, EvalSection& out) {
    check_keys(j, "eval", {"num_images", "confidence_threshold", "iou_threshold"});
    read(j, "num_images", out.num_images);
    read(j, "confidence_threshold", out.confidence_threshold);
    read(j, "iou_threshold", out.iou_threshold);
}

}  // namespace

PipelineConfig parse_pipeline_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: malformed JSON: ") + e.what());
    }
    check_keys(j, "", {"seed", "data", "autoencoder", "diffusion", "detector", "attack", "eval"});

    PipelineConfig cfg;
    read(j, "seed", cfg.seed);
    if (j.contains("data")) parse_data(j.at("data"), cfg.data);
    if (j.contains("autoencoder")) parse_autoencoder(j.at("autoencoder"), cfg.autoencoder);
    if (j.contains("diffusion")) parse_diffusion(j.at("diffusion"), cfg.diffusion);
    if (j.contains("detector")) parse_detector(j.at("detector"), cfg.detector);
    if (j.contains("attack")) parse_attack(j.at("attack"), cfg.attack);
    if (j.contains("eval")) parse_eval(j.at("eval"), cfg.eval);

    // sizes wired from the data section
    cfg.data.validate();
    cfg.autoencoder.image_size = cfg.data.image_size;
    cfg.detector.grid.image_size = cfg.data.image_size;
    cfg.autoencoder.validate();  // before latent_size() divides by the factor
    cfg.diffusion.denoiser.latent_size = cfg.autoencoder.latent_size();
    cfg.diffusion.denoiser.latent_depth = cfg.autoencoder.latent_depth;

    cfg.validate();
    return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
    if (path.empty()) return default_pipeline_config();
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_pipeline_config(text);
}

}  // namespace ldp
