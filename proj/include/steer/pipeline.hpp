#pragma once

#include "steer/analytics.hpp"
#include "steer/cf.hpp"
#include "steer/dataset.hpp"
#include "steer/eval.hpp"
#include "steer/persona.hpp"
#include "steer/spm.hpp"
#include "steer/toy_lm.hpp"

#include <optional>
#include <string>
#include <vector>

namespace steer {

// Declarative pipeline configuration (single JSON file, flag overrides win).
// All randomness flows from the explicit seeds below.
struct PipelineConfig {
    struct Paths {
        std::string questions = "questions.jsonl";
        std::string responses = "responses.csv";
        std::string demographics = "demographics.csv";
        std::string artifacts = "artifacts";
    } paths;

    SyntheticSpec synthetic{300, 60, 3, 0.05, 7, 8, 3, 5};
    SplitSpec split{11, 0.8, 0.8};
    // The bundled fixture has ~11k training responses; a 256 batch gives the
    // optimizer enough steps per epoch to converge within the epoch budget.
    CfConfig cf = [] {
        CfConfig c;
        c.batch_size = 256;
        c.seed = 13;
        return c;
    }();
    LmConfig lm = [] {
        LmConfig c;
        c.seed = 17;
        return c;
    }();
    SpmConfig spm = [] {
        SpmConfig c;
        c.seed = 19;
        return c;
    }();

    struct Cluster {
        int k = 0;  // 0 = pick by elbow curvature
        std::vector<int> k_scan = {2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
        uint64_t seed = 23;
    } cluster;

    struct Analytics {
        int min_support = 20;
        int top_n = 3;
        std::optional<std::string> topic;
        std::vector<std::string> traits = {"cohort", "random_group"};
    } analytics;

    struct Eval {
        int context_k = 5;
        std::string demographic_trait = "random_group";
        std::vector<std::optional<int>> unseen_k = {1, 5, 10, std::nullopt};
        std::vector<int> cluster_k_sweep = {2, 3, 6, 10};
    } eval;
};

PipelineConfig load_pipeline_config(const std::string& path);
PipelineConfig default_pipeline_config();
void save_pipeline_config(const std::string& path, const PipelineConfig& config);

// Hash of the semantic configuration (paths excluded, so runs in different
// directories stay comparable).
std::string pipeline_config_hash(const PipelineConfig& config);

// Combined hash of the three dataset files.
std::string dataset_hash(const PipelineConfig& config);

// Artifact locations inside paths.artifacts.
struct ArtifactPaths {
    std::string dir;
    std::string ground_truth() const { return dir + "/ground_truth.json"; }
    std::string split() const { return dir + "/split.json"; }
    std::string cf() const { return dir + "/cf.json"; }
    std::string clusters() const { return dir + "/clusters.json"; }
    std::string elbow() const { return dir + "/elbow.csv"; }
    std::string lm() const { return dir + "/lm.json"; }
    std::string spm() const { return dir + "/spm.json"; }
    std::string manifest(const std::string& command) const {
        return dir + "/manifest_" + command + ".json";
    }
};

ArtifactPaths artifact_paths(const PipelineConfig& config);

// Subcommand bodies. Each checks its prerequisites (dependency error naming
// the producing command when missing), writes artifacts plus a run manifest,
// and is deterministic for a fixed config.
void cmd_gen_synthetic(const PipelineConfig& config);
void cmd_split(const PipelineConfig& config);
void cmd_fit_cf(const PipelineConfig& config);
void cmd_cluster(const PipelineConfig& config, std::optional<int> k_override);
void cmd_analyze(const PipelineConfig& config);
void cmd_pretrain_lm(const PipelineConfig& config);
void cmd_train_spm(const PipelineConfig& config);

struct EvalOptions {
    std::optional<std::string> only_persona;   // individual|cluster|demographic
    std::optional<std::string> only_baseline;  // raw|demo|context
};
void cmd_eval(const PipelineConfig& config, const EvalOptions& options);

void cmd_embed_unseen(const PipelineConfig& config, std::optional<int> k);

enum class SweepKind { unseen, clusters };
void cmd_sweep(const PipelineConfig& config, SweepKind kind);

}  // namespace steer
