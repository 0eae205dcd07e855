#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ldp/config.hpp"
#include "ldp/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    long long seed = -1;  // <0: keep the config seed
    std::string out;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool out_required = true) {
    cmd->add_option("--config", args.config_path, "pipeline config JSON (defaults when omitted)");
    cmd->add_option("--seed", args.seed, "override the config seed");
    auto* out = cmd->add_option("--out", args.out, "output path");
    if (out_required) out->required();
    cmd->add_flag("--quiet", args.quiet, "suppress progress output");
}

// returns false (with exit code set) when the config is unusable
bool load_config(const CommonArgs& args, ldp::PipelineConfig& cfg, int& code) {
    try {
        cfg = ldp::load_pipeline_config(args.config_path);
        if (args.seed >= 0) cfg.seed = static_cast<uint64_t>(args.seed);
        return true;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        code = ldp::pipeline::kConfigError;
        return false;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent-diffusion adversarial patch toolkit"};
    app.require_subcommand(1);

    CommonArgs gen_args;
    auto* gen = app.add_subcommand("gen-data", "write synthetic detection scenes as PNG + labels");
    add_common(gen, gen_args);

    CommonArgs ae_args;
    auto* train_ae = app.add_subcommand("train-ae", "train the compression autoencoder");
    add_common(train_ae, ae_args);

    CommonArgs diff_args;
    std::string diff_ae_path;
    auto* train_diff = app.add_subcommand("train-diffusion", "train the latent denoiser");
    add_common(train_diff, diff_args);
    train_diff->add_option("--ae", diff_ae_path, "autoencoder artifact")->required();

    CommonArgs det_args;
    auto* train_det = app.add_subcommand("train-detector", "train the grid detector");
    add_common(train_det, det_args);

    CommonArgs patch_args;
    std::string patch_ae, patch_diff, patch_det;
    auto* opt_patch = app.add_subcommand("optimize-patch", "optimize an adversarial patch");
    add_common(opt_patch, patch_args);
    opt_patch->add_option("--ae", patch_ae, "autoencoder artifact")->required();
    opt_patch->add_option("--diffusion", patch_diff, "diffusion artifact")->required();
    opt_patch->add_option("--detector", patch_det, "detector artifact")->required();

    CommonArgs eval_args;
    std::vector<std::string> eval_dets;
    std::string eval_patch;
    bool gray_control = false;
    auto* evaluate = app.add_subcommand("evaluate", "score a patch against detectors");
    add_common(evaluate, eval_args);
    evaluate->add_option("--detector", eval_dets, "detector artifact (repeatable)")->required();
    evaluate->add_option("--patch", eval_patch, "patch artifact")->required();
    evaluate->add_flag("--gray-control", gray_control, "score an all-gray control patch instead");

    CommonArgs cross_args;
    std::vector<std::string> cross_dets;
    std::string cross_ae, cross_diff;
    auto* cross = app.add_subcommand("cross-eval", "train/victim transfer matrix");
    add_common(cross, cross_args);
    cross->add_option("--detector", cross_dets, "detector artifact (repeat >= 2 times)")->required();
    cross->add_option("--ae", cross_ae, "autoencoder artifact")->required();
    cross->add_option("--diffusion", cross_diff, "diffusion artifact")->required();

    CLI11_PARSE(app, argc, argv);

    int code = 0;
    ldp::PipelineConfig cfg;
    using namespace ldp::pipeline;

    if (gen->parsed()) {
        if (!load_config(gen_args, cfg, code)) return code;
        return cmd_gen_data(cfg, gen_args.out, gen_args.quiet);
    }
    if (train_ae->parsed()) {
        if (!load_config(ae_args, cfg, code)) return code;
        return cmd_train_ae(cfg, ae_args.out, ae_args.quiet);
    }
    if (train_diff->parsed()) {
        if (!load_config(diff_args, cfg, code)) return code;
        return cmd_train_diffusion(cfg, diff_ae_path, diff_args.out, diff_args.quiet);
    }
    if (train_det->parsed()) {
        if (!load_config(det_args, cfg, code)) return code;
        return cmd_train_detector(cfg, det_args.out, det_args.quiet);
    }
    if (opt_patch->parsed()) {
        if (!load_config(patch_args, cfg, code)) return code;
        return cmd_optimize_patch(cfg, patch_ae, patch_diff, patch_det, patch_args.out,
                                  patch_args.quiet);
    }
    if (evaluate->parsed()) {
        if (!load_config(eval_args, cfg, code)) return code;
        return cmd_evaluate(cfg, eval_dets, eval_patch, eval_args.out, eval_args.quiet,
                            gray_control);
    }
    if (cross->parsed()) {
        if (!load_config(cross_args, cfg, code)) return code;
        return cmd_cross_eval(cfg, cross_dets, cross_ae, cross_diff, cross_args.out,
                              cross_args.quiet);
    }
    return 0;
}
