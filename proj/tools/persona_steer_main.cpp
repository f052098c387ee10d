#include "steer/pipeline.hpp"

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

namespace {

struct GlobalFlags {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<int> k;
    std::optional<std::string> mode;
    std::optional<std::string> persona;
    std::optional<std::string> baseline;
    std::optional<int> context_k;
    std::string sweep_kind = "unseen";
};

// Flags win over config-file values; --seed retargets the active command's
// own seed.
steer::PipelineConfig resolve_config(const GlobalFlags& flags, const std::string& command) {
    steer::PipelineConfig config = flags.config_path.empty()
                                       ? steer::default_pipeline_config()
                                       : steer::load_pipeline_config(flags.config_path);
    if (flags.out_dir) config.paths.artifacts = *flags.out_dir;
    if (flags.context_k) config.eval.context_k = *flags.context_k;
    if (flags.mode) config.spm.mode = steer::prefix_mode_from_string(*flags.mode);
    if (flags.seed) {
        if (command == "gen-synthetic") config.synthetic.seed = *flags.seed;
        else if (command == "split") config.split.seed = *flags.seed;
        else if (command == "fit-cf" || command == "embed-unseen") config.cf.seed = *flags.seed;
        else if (command == "cluster") config.cluster.seed = *flags.seed;
        else if (command == "pretrain-lm") config.lm.seed = *flags.seed;
        else if (command == "train-spm") config.spm.seed = *flags.seed;
        else
            steer::fail(steer::ErrorCategory::config,
                        "--seed has no effect on command '" + command + "'");
    }
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"persona-steer: persona embeddings, analytics and steered answering"};
    app.require_subcommand(1);

    GlobalFlags flags;
    app.add_option("--config", flags.config_path, "pipeline config JSON (defaults otherwise)");
    app.add_option("--seed", flags.seed, "override the active command's seed");
    app.add_option("--out", flags.out_dir, "artifact directory override");
    app.add_option("--k", flags.k, "cluster count (cluster) or response budget (embed-unseen)");
    app.add_option("--mode", flags.mode, "SPM mode: prefix|prompt")
        ->check(CLI::IsMember({"prefix", "prompt"}));
    app.add_option("--persona", flags.persona, "eval only this persona kind")
        ->check(CLI::IsMember({"individual", "cluster", "demographic"}));
    app.add_option("--baseline", flags.baseline, "eval only this baseline")
        ->check(CLI::IsMember({"raw", "demo", "context"}));
    app.add_option("--context-k", flags.context_k, "context baseline question count");

    auto* gen = app.add_subcommand("gen-synthetic", "generate the synthetic survey fixture");
    auto* split = app.add_subcommand("split", "four-way train/validation split");
    auto* fitcf = app.add_subcommand("fit-cf", "train CF embeddings on r_tr_tr");
    auto* cluster = app.add_subcommand("cluster", "elbow scan and k-means cluster personas");
    auto* analyze = app.add_subcommand("analyze", "disagreement and composition reports");
    auto* pretrain = app.add_subcommand("pretrain-lm", "pretrain and freeze the answer model");
    auto* trainspm = app.add_subcommand("train-spm", "train the soft-prompting model");
    auto* eval = app.add_subcommand("eval", "baselines and steered evaluation");
    auto* unseen = app.add_subcommand("embed-unseen", "embed validation individuals");
    auto* sweep = app.add_subcommand("sweep", "unseen-K or cluster-count sweep");
    sweep->add_option("--kind", flags.sweep_kind, "unseen|clusters")
        ->check(CLI::IsMember({"unseen", "clusters"}));

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            steer::cmd_gen_synthetic(resolve_config(flags, "gen-synthetic"));
        } else if (split->parsed()) {
            steer::cmd_split(resolve_config(flags, "split"));
        } else if (fitcf->parsed()) {
            steer::cmd_fit_cf(resolve_config(flags, "fit-cf"));
        } else if (cluster->parsed()) {
            steer::cmd_cluster(resolve_config(flags, "cluster"), flags.k);
        } else if (analyze->parsed()) {
            steer::cmd_analyze(resolve_config(flags, "analyze"));
        } else if (pretrain->parsed()) {
            steer::cmd_pretrain_lm(resolve_config(flags, "pretrain-lm"));
        } else if (trainspm->parsed()) {
            steer::cmd_train_spm(resolve_config(flags, "train-spm"));
        } else if (eval->parsed()) {
            steer::EvalOptions options;
            options.only_persona = flags.persona;
            options.only_baseline = flags.baseline;
            steer::cmd_eval(resolve_config(flags, "eval"), options);
        } else if (unseen->parsed()) {
            steer::cmd_embed_unseen(resolve_config(flags, "embed-unseen"), flags.k);
        } else if (sweep->parsed()) {
            steer::cmd_sweep(resolve_config(flags, "sweep"),
                             flags.sweep_kind == "unseen" ? steer::SweepKind::unseen
                                                          : steer::SweepKind::clusters);
        }
    } catch (const steer::SteerError& e) {
        nlohmann::ordered_json err;
        err["error"] = std::string(steer::to_string(e.category()));
        err["message"] = e.what();
        std::cerr << err.dump() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        nlohmann::ordered_json err;
        err["error"] = "internal";
        err["message"] = e.what();
        std::cerr << err.dump() << std::endl;
        return 2;
    }
    return 0;
}
