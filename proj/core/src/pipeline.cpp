#include "ldp/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "ldp/eval.hpp"
#include "ldp/image_io.hpp"
#include "ldp/parallel.hpp"
#include "ldp/synth.hpp"

namespace ldp::pipeline {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// stable per-stage child-seed tags
enum SeedTag : uint64_t {
    kSeedCorpus = 1,
    kSeedTrainAE = 2,
    kSeedTrainDiffusion = 3,
    kSeedDetectorScenes = 4,
    kSeedTrainDetector = 5,
    kSeedAttackScenes = 6,
    kSeedAttack = 7,
    kSeedChainNoise = 8,
    kSeedEvalScenes = 9,
    kSeedEvaluate = 10,
    kSeedCrossEval = 11,
};

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string basename_of(const std::string& path) { return fs::path(path).filename().string(); }

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

json report_to_json(const EvalReport& rep, const std::string& train_model,
                    const std::string& victim_model) {
    double clean_mean = 0.0, patched_mean = 0.0;
    for (double v : rep.clean_max_conf) clean_mean += v;
    for (double v : rep.patched_max_conf) patched_mean += v;
    const double n = std::max<size_t>(1, rep.clean_max_conf.size());
    json j;
    j["train_model"] = train_model;
    j["victim_model"] = victim_model;
    j["clean_map"] = rep.clean_map;
    j["patched_map"] = rep.patched_map;
    j["asr"] = rep.asr;
    j["mean_clean_max_conf"] = clean_mean / n;
    j["mean_patched_max_conf"] = patched_mean / n;
    j["clean_max_conf"] = rep.clean_max_conf;
    j["patched_max_conf"] = rep.patched_max_conf;
    j["config"] = rep.config;
    return j;
}

PrintColorSet palette_from(const AttackSection& attack) {
    return attack.palette_path.empty() ? default_print_colors()
                                       : load_print_colors(attack.palette_path);
}

std::map<std::string, std::string> seed_meta(const PipelineConfig& cfg) {
    return {{"seed", std::to_string(cfg.seed)}};
}

int consistency_error(const std::string& message, bool quiet) {
    (void)quiet;
    std::fprintf(stderr, "error: %s\n", message.c_str());
    return kConfigError;
}

}  // namespace

std::string stem_of(const std::string& path) {
    const fs::path p(path);
    fs::path parent = p.parent_path();
    return (parent / p.stem()).string();
}

std::vector<ImageTensor> load_corpus(const PipelineConfig& cfg) {
    if (cfg.data.source == "directory") return load_image_dir(cfg.data.path, cfg.data.image_size);
    RandomSource rng = RandomSource(cfg.seed).child(kSeedCorpus);
    return generate_toy_corpus(cfg.data.count, cfg.data.image_size, rng);
}

int cmd_gen_data(const PipelineConfig& cfg, const std::string& out_dir, bool quiet) {
    std::vector<SynthScene> scenes;
    try {
        RandomSource rng = RandomSource(cfg.seed).child(kSeedDetectorScenes);
        scenes = generate_synthetic_dataset(cfg.detector.scenes, cfg.detector.grid, rng);
        fs::create_directories(out_dir);
    } catch (const std::exception& e) {
        return consistency_error(e.what(), quiet);
    }
    try {
        for (size_t i = 0; i < scenes.size(); ++i) {
            char name[64];
            std::snprintf(name, sizeof name, "scene_%05zu", i);
            save_png((fs::path(out_dir) / (std::string(name) + ".png")).string(), scenes[i].image);
            json objs = json::array();
            for (const auto& [box, cls] : scenes[i].objects)
                objs.push_back({{"class", cfg.detector.grid.classes[static_cast<size_t>(cls)]},
                                {"cx", box.cx},
                                {"cy", box.cy},
                                {"w", box.w},
                                {"h", box.h}});
            json sidecar;
            sidecar["image"] = std::string(name) + ".png";
            sidecar["objects"] = objs;
            write_text_file((fs::path(out_dir) / (std::string(name) + ".json")).string(),
                            sidecar.dump(2) + "\n");
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kTrainingError;
    }
    if (!quiet)
        std::printf("gen-data: wrote %zu scenes to %s\n", scenes.size(), out_dir.c_str());
    return kOk;
}

int cmd_train_ae(const PipelineConfig& cfg, const std::string& out_path, bool quiet) {
    std::vector<ImageTensor> corpus;
    try {
        corpus = load_corpus(cfg);
    } catch (const std::exception& e) {
        return consistency_error(e.what(), quiet);
    }

    AEParams params;
    double final_mse = 0.0;
    try {
        RandomSource rng = RandomSource(cfg.seed).child(kSeedTrainAE);
        params = train_autoencoder(corpus, cfg.autoencoder, rng, nullptr, quiet);

        std::vector<double> mse(corpus.size());
        parallel_for(static_cast<int>(corpus.size()), [&](int i) {
            const ImageTensor rec = decode(params, encode(params, corpus[static_cast<size_t>(i)]));
            double s = 0.0;
            for (size_t k = 0; k < rec.data.size(); ++k) {
                const double d = rec.data[k] - corpus[static_cast<size_t>(i)].data[k];
                s += d * d;
            }
            mse[static_cast<size_t>(i)] = s / static_cast<double>(rec.numel());
        });
        for (double v : mse) final_mse += v;
        final_mse /= static_cast<double>(corpus.size());

        save_autoencoder(out_path, params, seed_meta(cfg));
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kTrainingError;
    }
    std::printf("train-ae: reconstruction MSE %.6f, artifact %s\n", final_mse, out_path.c_str());
    return kOk;
}

int cmd_train_diffusion(const PipelineConfig& cfg, const std::string& ae_path,
                        const std::string& out_path, bool quiet) {
    AEParams ae;
    std::vector<ImageTensor> corpus;
    try {
        ae = load_autoencoder(ae_path);
        if (ae.config.image_size != cfg.data.image_size)
            throw std::invalid_argument(
                "autoencoder artifact image size " + std::to_string(ae.config.image_size) +
                " does not match configured data.image_size " + std::to_string(cfg.data.image_size));
        if (ae.config.latent_size() != cfg.diffusion.denoiser.latent_size ||
            ae.config.latent_depth != cfg.diffusion.denoiser.latent_depth)
            throw std::invalid_argument(
                "autoencoder artifact latent shape (" + std::to_string(ae.config.latent_size()) +
                "," + std::to_string(ae.config.latent_size()) + "," +
                std::to_string(ae.config.latent_depth) + ") does not match the configured latent (" +
                std::to_string(cfg.diffusion.denoiser.latent_size) + "," +
                std::to_string(cfg.diffusion.denoiser.latent_size) + "," +
                std::to_string(cfg.diffusion.denoiser.latent_depth) + ")");
        corpus = load_corpus(cfg);
    } catch (const std::exception& e) {
        return consistency_error(e.what(), quiet);
    }

    try {
        std::vector<LatentTensor> latents(corpus.size());
        parallel_for(static_cast<int>(corpus.size()), [&](int i) {
            latents[static_cast<size_t>(i)] = encode(ae, corpus[static_cast<size_t>(i)]);
        });

        const NoiseSchedule sched =
            make_schedule(cfg.diffusion.timesteps, cfg.diffusion.beta_start, cfg.diffusion.beta_end);
        RandomSource rng = RandomSource(cfg.seed).child(kSeedTrainDiffusion);
        const DenoiserParams params =
            train_denoiser(latents, cfg.diffusion.denoiser, sched, rng, nullptr, quiet);
        save_diffusion(out_path, params, sched, seed_meta(cfg));
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kTrainingError;
    }
    if (!quiet) std::printf("train-diffusion: artifact %s\n", out_path.c_str());
    return kOk;
}

int cmd_train_detector(const PipelineConfig& cfg, const std::string& out_path, bool quiet) {
    std::vector<SynthScene> scenes;
    try {
        RandomSource rng = RandomSource(cfg.seed).child(kSeedDetectorScenes);
        scenes = generate_synthetic_dataset(cfg.detector.scenes, cfg.detector.grid, rng);
    } catch (const std::exception& e) {
        return consistency_error(e.what(), quiet);
    }
    try {
        RandomSource rng = RandomSource(cfg.seed).child(kSeedTrainDetector);
        const DetectorParams params = train_detector(scenes, cfg.detector.grid, rng, nullptr, quiet);
        save_detector(out_path, params, seed_meta(cfg));
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kTrainingError;
    }
    if (!quiet) std::printf("train-detector: artifact %s\n", out_path.c_str());
    return kOk;
}

int cmd_optimize_patch(const PipelineConfig& cfg, const std::string& ae_path,
                       const std::string& diffusion_path, const std::string& detector_path,
                       const std::string& out_path, bool quiet) {
    AEParams ae;
    DenoiserParams diff;
    NoiseSchedule sched;
    DetectorParams det;
    PrintColorSet palette;
    try {
        ae = load_autoencoder(ae_path);
        auto loaded = load_diffusion(diffusion_path);
        diff = std::move(loaded.first);
        sched = std::move(loaded.second);
        det = load_detector(detector_path);
        palette = palette_from(cfg.attack);
        if (ae.config.latent_size() != diff.config.latent_size ||
            ae.config.latent_depth != diff.config.latent_depth)
            throw std::invalid_argument("autoencoder and diffusion artifacts disagree on latent shape");
        if (ae.config.image_size != det.config.image_size)
            throw std::invalid_argument("autoencoder and detector artifacts disagree on image size");
    } catch (const std::exception& e) {
        return consistency_error(e.what(), quiet);
    }

    try {
        RandomSource scene_rng = RandomSource(cfg.seed).child(kSeedAttackScenes);
        const auto scenes = generate_synthetic_dataset(cfg.attack.num_images, det.config, scene_rng);
        std::vector<ImageTensor> images;
        for (const auto& s : scenes) images.push_back(s.image);
        const auto gt = pseudo_ground_truth(det, images, det.config.confidence_threshold);

        OptimizeConfig opt = cfg.attack.optimizer;
        opt.frozen_noise_seed = mix_seed(cfg.seed, kSeedChainNoise);
        RandomSource rng = RandomSource(cfg.seed).child(kSeedAttack);
        const PatchResult result = optimize_patch(ae, diff, sched, det, images, gt,
                                                  cfg.attack.weights, cfg.attack.transform, palette,
                                                  opt, rng, quiet);

        auto meta = seed_meta(cfg);
        meta["train_model"] = basename_of(detector_path);
        meta["chain_stride"] = std::to_string(opt.chain_stride);
        save_patch(out_path, result, opt.frozen_noise_seed, meta);

        const std::string stem = stem_of(out_path);
        save_png(stem + ".png", result.patch);

        std::string csv = "step,l_det,l_kl,l_tv,l_nps,l_total\n";
        for (size_t i = 0; i < result.history.total.size(); ++i)
            csv += std::to_string(i) + "," + fmt17(result.history.det[i]) + "," +
                   fmt17(result.history.kl[i]) + "," + fmt17(result.history.tv[i]) + "," +
                   fmt17(result.history.nps[i]) + "," + fmt17(result.history.total[i]) + "\n";
        write_text_file(stem + "_loss.csv", csv);

        if (!quiet)
            std::printf("optimize-patch: final losses det %.4f kl %.4f tv %.2f nps %.2f\n",
                        result.history.det.back(), result.history.kl.back(),
                        result.history.tv.back(), result.history.nps.back());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kTrainingError;
    }
    return kOk;
}

int cmd_evaluate(const PipelineConfig& cfg, const std::vector<std::string>& detector_paths,
                 const std::string& patch_path, const std::string& out_path, bool quiet,
                 bool gray_control) {
    std::vector<DetectorParams> dets;
    ImageTensor patch;
    std::string train_model = "gray-control";
    try {
        if (detector_paths.empty()) throw std::invalid_argument("evaluate: need at least one --detector");
        for (const std::string& p : detector_paths) dets.push_back(load_detector(p));
        const Artifact patch_art = load_artifact(patch_path);
        if (patch_art.kind != "patch")
            throw std::invalid_argument("'" + patch_path + "' is a '" + patch_art.kind +
                                        "' artifact, expected 'patch'");
        patch = to_tensor(find_array(patch_art, "patch_image"));
        if (auto it = patch_art.meta.find("train_model"); it != patch_art.meta.end())
            train_model = it->second;
        if (gray_control) {
            patch = ImageTensor(patch.shape, 0.5);
            train_model = "gray-control";
        }
    } catch (const std::exception& e) {
        return consistency_error(e.what(), quiet);
    }

    try {
        RandomSource scene_rng = RandomSource(cfg.seed).child(kSeedEvalScenes);
        const auto scenes =
            generate_synthetic_dataset(cfg.eval.num_images, dets[0].config, scene_rng);
        std::vector<ImageTensor> images;
        for (const auto& s : scenes) images.push_back(s.image);

        json out_json = json::array();
        std::string csv = "train_model,victim_model,clean_map,patched_map,asr\n";
        for (size_t d = 0; d < dets.size(); ++d) {
            const auto gt = pseudo_ground_truth(dets[d], images, cfg.eval.confidence_threshold);
            int with_gt = 0;
            for (const auto& g : gt) with_gt += g.empty() ? 0 : 1;
            if (with_gt == 0) {
                std::fprintf(stderr, "error: no evaluation image has a pseudo-ground-truth box\n");
                return kEvalDataError;
            }
            RandomSource eval_rng = RandomSource(cfg.seed).child(kSeedEvaluate + d);
            EvalReport rep =
                evaluate_patch(dets[d], images, patch, cfg.attack.transform,
                               cfg.eval.confidence_threshold, cfg.eval.iou_threshold, eval_rng);
            rep.config["seed"] = std::to_string(cfg.seed);
            rep.config["num_images"] = std::to_string(cfg.eval.num_images);
            rep.config["confidence_threshold"] = fmt17(cfg.eval.confidence_threshold);
            rep.config["iou_threshold"] = fmt17(cfg.eval.iou_threshold);
            const std::string victim = basename_of(detector_paths[d]);
            out_json.push_back(report_to_json(rep, train_model, victim));
            csv += train_model + "," + victim + "," + fmt17(rep.clean_map) + "," +
                   fmt17(rep.patched_map) + "," + fmt17(rep.asr) + "\n";
            if (!quiet)
                std::printf("evaluate[%s]: clean mAP %.2f%%, patched mAP %.2f%%, ASR %.2f%%\n",
                            victim.c_str(), rep.clean_map, rep.patched_map, rep.asr);
        }
        const std::string stem = stem_of(out_path);
        write_text_file(stem + ".json", out_json.dump(2) + "\n");
        write_text_file(stem + ".csv", csv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kTrainingError;
    }
    return kOk;
}

int cmd_cross_eval(const PipelineConfig& cfg, const std::vector<std::string>& detector_paths,
                   const std::string& ae_path, const std::string& diffusion_path,
                   const std::string& out_path, bool quiet) {
    AEParams ae;
    DenoiserParams diff;
    NoiseSchedule sched;
    std::vector<DetectorParams> dets;
    PrintColorSet palette;
    try {
        if (detector_paths.size() < 2)
            throw std::invalid_argument("cross-eval: need at least two --detector artifacts");
        ae = load_autoencoder(ae_path);
        auto loaded = load_diffusion(diffusion_path);
        diff = std::move(loaded.first);
        sched = std::move(loaded.second);
        for (const std::string& p : detector_paths) dets.push_back(load_detector(p));
        palette = palette_from(cfg.attack);
        for (const DetectorParams& d : dets)
            if (d.config.image_size != ae.config.image_size)
                throw std::invalid_argument("detector image size differs from the autoencoder");
    } catch (const std::exception& e) {
        return consistency_error(e.what(), quiet);
    }

    try {
        RandomSource scene_rng = RandomSource(cfg.seed).child(kSeedEvalScenes);
        const auto scenes = generate_synthetic_dataset(cfg.eval.num_images, dets[0].config, scene_rng);
        std::vector<ImageTensor> images;
        for (const auto& s : scenes) images.push_back(s.image);

        CrossEvalStack stack;
        stack.ae = &ae;
        stack.diff = &diff;
        stack.sched = &sched;
        stack.weights = cfg.attack.weights;
        stack.transform = cfg.attack.transform;
        stack.colors = palette;
        stack.optimizer = cfg.attack.optimizer;
        stack.optimizer.frozen_noise_seed = mix_seed(cfg.seed, kSeedChainNoise);
        stack.eval_thresh = cfg.eval.confidence_threshold;
        stack.iou_thresh = cfg.eval.iou_threshold;

        std::vector<const DetectorParams*> ptrs;
        for (const DetectorParams& d : dets) ptrs.push_back(&d);

        RandomSource rng = RandomSource(cfg.seed).child(kSeedCrossEval);
        std::vector<std::vector<EvalReport>> reports;
        const auto matrix = cross_model_matrix(ptrs, ptrs, images, stack, rng, quiet, &reports);

        std::string flat = "train_model,victim_model,clean_map,patched_map,asr\n";
        std::string mat = "train\\victim";
        json out_json = json::array();
        for (const std::string& p : detector_paths) mat += "," + basename_of(p);
        mat += "\n";
        for (size_t ti = 0; ti < matrix.size(); ++ti) {
            mat += basename_of(detector_paths[ti]);
            for (size_t vi = 0; vi < matrix[ti].size(); ++vi) {
                mat += "," + fmt17(matrix[ti][vi]);
                const EvalReport& rep = reports[ti][vi];
                flat += basename_of(detector_paths[ti]) + "," + basename_of(detector_paths[vi]) +
                        "," + fmt17(rep.clean_map) + "," + fmt17(rep.patched_map) + "," +
                        fmt17(rep.asr) + "\n";
                out_json.push_back(report_to_json(rep, basename_of(detector_paths[ti]),
                                                  basename_of(detector_paths[vi])));
            }
            mat += "\n";
        }
        const std::string stem = stem_of(out_path);
        write_text_file(stem + ".csv", flat);
        write_text_file(stem + "_matrix.csv", mat);
        write_text_file(stem + ".json", out_json.dump(2) + "\n");
        if (!quiet) std::printf("cross-eval: %zux%zu matrix written to %s*\n", matrix.size(),
                                matrix.empty() ? 0 : matrix[0].size(), stem.c_str());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kTrainingError;
    }
    return kOk;
}

}  // namespace ldp::pipeline
