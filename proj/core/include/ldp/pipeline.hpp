#pragma once

#include <string>
#include <vector>

#include "ldp/config.hpp"

namespace ldp::pipeline {

// Exit codes shared by every stage.
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 2;    // bad config, bad/mismatched artifacts
inline constexpr int kTrainingError = 3;  // divergence or non-finite losses
inline constexpr int kEvalDataError = 4;  // evaluation set has no ground truth

// Each stage validates everything it needs before writing any output, prints
// a short summary to stdout (unless quiet), errors to stderr, and returns an
// exit code.

int cmd_gen_data(const PipelineConfig& cfg, const std::string& out_dir, bool quiet);

int cmd_train_ae(const PipelineConfig& cfg, const std::string& out_path, bool quiet);

int cmd_train_diffusion(const PipelineConfig& cfg, const std::string& ae_path,
                        const std::string& out_path, bool quiet);

int cmd_train_detector(const PipelineConfig& cfg, const std::string& out_path, bool quiet);

// Writes <out>.ldp (or the given path), plus "<stem>.png" and
// "<stem>_loss.csv" next to it.
int cmd_optimize_patch(const PipelineConfig& cfg, const std::string& ae_path,
                       const std::string& diffusion_path, const std::string& detector_path,
                       const std::string& out_path, bool quiet);

// Writes "<stem>.json" and "<stem>.csv". gray_control swaps the patch for an
// all-gray square of the same size.
int cmd_evaluate(const PipelineConfig& cfg, const std::vector<std::string>& detector_paths,
                 const std::string& patch_path, const std::string& out_path, bool quiet,
                 bool gray_control = false);

// Writes "<stem>.csv" (flat rows), "<stem>_matrix.csv" and "<stem>.json".
int cmd_cross_eval(const PipelineConfig& cfg, const std::vector<std::string>& detector_paths,
                   const std::string& ae_path, const std::string& diffusion_path,
                   const std::string& out_path, bool quiet);

// Corpus selection shared by train-ae / train-diffusion.
std::vector<ImageTensor> load_corpus(const PipelineConfig& cfg);

std::string stem_of(const std::string& path);

}  // namespace ldp::pipeline
