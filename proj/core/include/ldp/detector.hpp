#pragma once

#include <map>
#include <string>
#include <vector>

#include "ldp/nn.hpp"
#include "ldp/random.hpp"
#include "ldp/tensor.hpp"
#include "ldp/types.hpp"

namespace ldp {

// Single-scale grid detector over an S x S cell lattice, one candidate per
// cell. Exactly one class is the person proxy the attack targets.
struct GridConfig {
    int image_size = 64;
    int grid_size = 8;
    std::vector<std::string> classes = {"person", "ball", "box"};
    int person_class = 0;
    double confidence_threshold = 0.5;
    int base_channels = 16;
    int epochs = 30;
    double learning_rate = 1e-3;
    int batch_size = 16;

    int num_classes() const { return static_cast<int>(classes.size()); }
    int down_stages() const;
    void validate() const;
};

struct DetectorParams {
    GridConfig config;
    ParamSet net;
};

// Scene with exact box labels, produced by the synthetic generator.
struct SynthScene {
    ImageTensor image;
    std::vector<std::pair<BBox, int>> objects;  // (box, class index)
};

// Textured backgrounds with 1-3 non-overlapping shapes; the person proxy is
// a distinctive upright figure. Deterministic for a given seed.
std::vector<SynthScene> generate_synthetic_dataset(int n, const GridConfig& cfg, RandomSource& rng);

DetectorParams init_detector(const GridConfig& cfg, RandomSource& rng);

DetectorParams train_detector(const std::vector<SynthScene>& scenes, const GridConfig& cfg,
                              RandomSource& rng, TrainLog* log = nullptr, bool quiet = true);

// All S*S candidates: boxes squashed into valid fractions, obj in (0,1),
// class probabilities summing to 1.
std::vector<Detection> detect(const DetectorParams& params, const ImageTensor& image);

// Reporting view: candidates with obj * person probability above the
// configured threshold. No suppression here; evaluation applies its own.
std::vector<Detection> detect_thresholded(const DetectorParams& params, const ImageTensor& image);

// Mean over the batch of the per-image max over candidates of
// obj * person-class probability. In [0,1].
double detection_loss(const DetectorParams& params, const std::vector<ImageTensor>& batch);

// Tape pieces for the attack loop and the training loss.
Var detector_raw_on_tape(Tape& tape, const GridConfig& cfg, const TapeParams& tp, Var image);
Var person_score_on_tape(Tape& tape, const GridConfig& cfg, const TapeParams& tp, Var image);

// Max over candidate products for one detection list (shared by the loss and
// its tests).
double max_person_score(const std::vector<Detection>& dets, int person_class);

void save_detector(const std::string& path, const DetectorParams& params,
                   const std::map<std::string, std::string>& extra_meta = {});
DetectorParams load_detector(const std::string& path);

}  // namespace ldp
