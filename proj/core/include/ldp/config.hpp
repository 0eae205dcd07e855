#pragma once

#include <cstdint>
#include <string>

#include "ldp/autoencoder.hpp"
#include "ldp/detector.hpp"
#include "ldp/diffusion.hpp"
#include "ldp/patch.hpp"

namespace ldp {

struct DataConfig {
    std::string source = "synthetic";  // "synthetic" | "directory"
    std::string path;                  // image directory when source == "directory"
    int count = 500;                   // synthetic corpus size
    int image_size = 64;
    void validate() const;
};

struct DiffusionSection {
    int timesteps = 100;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    DenoiserConfig denoiser;  // latent dims are derived from the autoencoder section
    void validate() const;
};

struct DetectorSection {
    GridConfig grid;
    int scenes = 500;
    void validate() const;
};

struct AttackSection {
    LossWeights weights;
    OptimizeConfig optimizer;
    TransformConfig transform;
    std::string palette_path;  // empty -> built-in 30-color palette
    int num_images = 48;       // synthetic attack-training scenes
    void validate() const;
};

struct EvalSection {
    int num_images = 200;
    double confidence_threshold = 0.5;
    double iou_threshold = 0.5;
    void validate() const;
};

// Whole-pipeline configuration. Parsing rejects unknown keys anywhere and
// validates every section against its module invariants before any stage
// runs.
struct PipelineConfig {
    uint64_t seed = 1234;
    DataConfig data;
    AEConfig autoencoder;
    DiffusionSection diffusion;
    DetectorSection detector;
    AttackSection attack;
    EvalSection eval;

    void validate() const;
};

PipelineConfig default_pipeline_config();

// path may be empty: returns validated defaults.
PipelineConfig load_pipeline_config(const std::string& path);
PipelineConfig parse_pipeline_config(const std::string& json_text);

}  // namespace ldp
