#pragma once

#include <map>
#include <string>
#include <vector>

#include "ldp/detector.hpp"
#include "ldp/patch.hpp"
#include "ldp/types.hpp"

namespace ldp {

struct PRPoint {
    double confidence = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

struct ScoredBox {
    BBox box;
    double confidence = 0.0;
};

// Greedy same-class suppression: boxes sorted by confidence, any box with
// IoU > iou_thresh against a kept box is dropped.
std::vector<ScoredBox> suppress_overlaps(std::vector<ScoredBox> boxes, double iou_thresh);

// Person-proxy detections on clean images (obj * cls >= thresh, then
// suppression). These boxes serve as both the ground truth for AP and the
// placement targets for patches.
std::vector<std::vector<BBox>> pseudo_ground_truth(const DetectorParams& det,
                                                   const std::vector<ImageTensor>& images,
                                                   double thresh);

// Single-class all-point-interpolated average precision at the given IoU
// threshold. Throws if the ground truth is empty across the whole set.
double compute_ap(const std::vector<std::vector<BBox>>& gt,
                  const std::vector<std::vector<ScoredBox>>& preds, double iou_thresh,
                  std::vector<PRPoint>* curve = nullptr);

// Percent of ground-truth-bearing images in which no surviving person
// detection overlaps any of that image's boxes at IoU >= 0.5.
double compute_asr(const DetectorParams& det, const std::vector<ImageTensor>& patched_images,
                   const std::vector<std::vector<BBox>>& gt, double thresh);

struct EvalReport {
    double clean_map = 0.0;    // percent
    double patched_map = 0.0;  // percent
    double asr = 0.0;          // percent
    std::vector<double> clean_max_conf;    // per-image max obj*person
    std::vector<double> patched_max_conf;
    std::map<std::string, std::string> config;
};

// Full protocol: pseudo-GT on clean scenes, patch composited at the GT
// boxes, thresholded detections scored against the pseudo-GT.
EvalReport evaluate_patch(const DetectorParams& det, const std::vector<ImageTensor>& images,
                          const ImageTensor& patch, const TransformConfig& t, double thresh,
                          double iou_thresh, RandomSource& rng);

// Person-proxy detections of one image as scored boxes (thresholded view
// plus suppression), confidence = obj * person probability.
std::vector<ScoredBox> person_predictions(const DetectorParams& det, const ImageTensor& image,
                                          double thresh, double iou_thresh);

struct CrossEvalStack {
    const AEParams* ae = nullptr;
    const DenoiserParams* diff = nullptr;
    const NoiseSchedule* sched = nullptr;
    LossWeights weights;
    TransformConfig transform;
    PrintColorSet colors;
    OptimizeConfig optimizer;
    double eval_thresh = 0.5;
    double iou_thresh = 0.5;
};

// For each training detector: optimize one patch white-box, then score the
// patched mAP (percent) against every victim detector. Row i = training
// detector i, column j = victim j. Full per-pair reports are returned through
// `reports` when given.
std::vector<std::vector<double>> cross_model_matrix(
    const std::vector<const DetectorParams*>& train_dets,
    const std::vector<const DetectorParams*>& victim_dets,
    const std::vector<ImageTensor>& images, const CrossEvalStack& stack, RandomSource& rng,
    bool quiet = true, std::vector<std::vector<EvalReport>>* reports = nullptr);

}  // namespace ldp
