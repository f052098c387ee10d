#include "steer/pipeline.hpp"

#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace steer {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// --- config (de)serialization -------------------------------------------

ordered_json config_to_json(const PipelineConfig& c) {
    ordered_json j;
    j["paths"] = {{"questions", c.paths.questions},
                  {"responses", c.paths.responses},
                  {"demographics", c.paths.demographics},
                  {"artifacts", c.paths.artifacts}};
    j["synthetic"] = {{"n_individuals", c.synthetic.n_individuals},
                      {"n_questions", c.synthetic.n_questions},
                      {"n_latent_clusters", c.synthetic.n_latent_clusters},
                      {"noise", c.synthetic.noise},
                      {"seed", c.synthetic.seed},
                      {"latent_dim", c.synthetic.latent_dim},
                      {"min_options", c.synthetic.min_options},
                      {"max_options", c.synthetic.max_options},
                      {"cluster_spread_ratio", c.synthetic.cluster_spread_ratio}};
    j["split"] = {{"seed", c.split.seed},
                  {"individual_train_fraction", c.split.individual_train_fraction},
                  {"response_train_fraction", c.split.response_train_fraction}};
    j["cf"] = {{"dim", c.cf.dim},
               {"learning_rate", c.cf.learning_rate},
               {"batch_size", c.cf.batch_size},
               {"epochs", c.cf.epochs},
               {"init_scale", c.cf.init_scale},
               {"seed", c.cf.seed},
               {"regularization", c.cf.regularization}};
    j["lm"] = {{"layers", c.lm.layers},
               {"model_dim", c.lm.model_dim},
               {"heads", c.lm.heads},
               {"context_len", c.lm.context_len},
               {"seed", c.lm.seed},
               {"learning_rate", c.lm.learning_rate},
               {"batch_size", c.lm.batch_size},
               {"max_epochs", c.lm.max_epochs},
               {"target_loss", c.lm.target_loss}};
    j["spm"] = {{"hidden_units", c.spm.hidden_units},
                {"virtual_tokens", c.spm.virtual_tokens},
                {"mode", std::string(to_string(c.spm.mode))},
                {"learning_rate", c.spm.learning_rate},
                {"weight_decay", c.spm.weight_decay},
                {"epochs", c.spm.epochs},
                {"patience", c.spm.patience},
                {"batch_size", c.spm.batch_size},
                {"seed", c.spm.seed}};
    j["cluster"] = {{"k", c.cluster.k}, {"k_scan", c.cluster.k_scan}, {"seed", c.cluster.seed}};
    j["analytics"] = {{"min_support", c.analytics.min_support},
                      {"top_n", c.analytics.top_n},
                      {"topic", c.analytics.topic ? json(*c.analytics.topic) : json(nullptr)},
                      {"traits", c.analytics.traits}};
    json unseen_k = json::array();
    for (const auto& k : c.eval.unseen_k) unseen_k.push_back(k ? json(*k) : json(nullptr));
    j["eval"] = {{"context_k", c.eval.context_k},
                 {"demographic_trait", c.eval.demographic_trait},
                 {"unseen_k", unseen_k},
                 {"cluster_k_sweep", c.eval.cluster_k_sweep}};
    return j;
}

template <typename T>
void maybe_get(const json& j, const char* key, T& out) {
    if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

PipelineConfig config_from_json(const json& j) {
    PipelineConfig c;
    if (j.contains("paths")) {
        const json& p = j.at("paths");
        maybe_get(p, "questions", c.paths.questions);
        maybe_get(p, "responses", c.paths.responses);
        maybe_get(p, "demographics", c.paths.demographics);
        maybe_get(p, "artifacts", c.paths.artifacts);
    }
    if (j.contains("synthetic")) {
        const json& s = j.at("synthetic");
        maybe_get(s, "n_individuals", c.synthetic.n_individuals);
        maybe_get(s, "n_questions", c.synthetic.n_questions);
        maybe_get(s, "n_latent_clusters", c.synthetic.n_latent_clusters);
        maybe_get(s, "noise", c.synthetic.noise);
        maybe_get(s, "seed", c.synthetic.seed);
        maybe_get(s, "latent_dim", c.synthetic.latent_dim);
        maybe_get(s, "min_options", c.synthetic.min_options);
        maybe_get(s, "max_options", c.synthetic.max_options);
        maybe_get(s, "cluster_spread_ratio", c.synthetic.cluster_spread_ratio);
    }
    if (j.contains("split")) {
        const json& s = j.at("split");
        maybe_get(s, "seed", c.split.seed);
        maybe_get(s, "individual_train_fraction", c.split.individual_train_fraction);
        maybe_get(s, "response_train_fraction", c.split.response_train_fraction);
    }
    if (j.contains("cf")) {
        const json& s = j.at("cf");
        maybe_get(s, "dim", c.cf.dim);
        maybe_get(s, "learning_rate", c.cf.learning_rate);
        maybe_get(s, "batch_size", c.cf.batch_size);
        maybe_get(s, "epochs", c.cf.epochs);
        maybe_get(s, "init_scale", c.cf.init_scale);
        maybe_get(s, "seed", c.cf.seed);
        maybe_get(s, "regularization", c.cf.regularization);
    }
    if (j.contains("lm")) {
        const json& s = j.at("lm");
        maybe_get(s, "layers", c.lm.layers);
        maybe_get(s, "model_dim", c.lm.model_dim);
        maybe_get(s, "heads", c.lm.heads);
        maybe_get(s, "context_len", c.lm.context_len);
        maybe_get(s, "seed", c.lm.seed);
        maybe_get(s, "learning_rate", c.lm.learning_rate);
        maybe_get(s, "batch_size", c.lm.batch_size);
        maybe_get(s, "max_epochs", c.lm.max_epochs);
        maybe_get(s, "target_loss", c.lm.target_loss);
    }
    if (j.contains("spm")) {
        const json& s = j.at("spm");
        maybe_get(s, "hidden_units", c.spm.hidden_units);
        maybe_get(s, "virtual_tokens", c.spm.virtual_tokens);
        if (s.contains("mode")) c.spm.mode = prefix_mode_from_string(s.at("mode").get<std::string>());
        maybe_get(s, "learning_rate", c.spm.learning_rate);
        maybe_get(s, "weight_decay", c.spm.weight_decay);
        maybe_get(s, "epochs", c.spm.epochs);
        maybe_get(s, "patience", c.spm.patience);
        maybe_get(s, "batch_size", c.spm.batch_size);
        maybe_get(s, "seed", c.spm.seed);
    }
    if (j.contains("cluster")) {
        const json& s = j.at("cluster");
        maybe_get(s, "k", c.cluster.k);
        maybe_get(s, "k_scan", c.cluster.k_scan);
        maybe_get(s, "seed", c.cluster.seed);
    }
    if (j.contains("analytics")) {
        const json& s = j.at("analytics");
        maybe_get(s, "min_support", c.analytics.min_support);
        maybe_get(s, "top_n", c.analytics.top_n);
        if (s.contains("topic") && !s.at("topic").is_null())
            c.analytics.topic = s.at("topic").get<std::string>();
        maybe_get(s, "traits", c.analytics.traits);
    }
    if (j.contains("eval")) {
        const json& s = j.at("eval");
        maybe_get(s, "context_k", c.eval.context_k);
        maybe_get(s, "demographic_trait", c.eval.demographic_trait);
        if (s.contains("unseen_k")) {
            c.eval.unseen_k.clear();
            for (const auto& k : s.at("unseen_k"))
                c.eval.unseen_k.push_back(k.is_null() ? std::optional<int>()
                                                      : std::optional<int>(k.get<int>()));
        }
        maybe_get(s, "cluster_k_sweep", c.eval.cluster_k_sweep);
    }
    return c;
}

// --- manifests ------------------------------------------------------------

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorCategory::io, "cannot create directory " + dir + ": " + ec.message());
}

void require_file(const std::string& path, const std::string& producer) {
    if (!fs::exists(path))
        fail(ErrorCategory::dependency,
             "missing prerequisite artifact '" + path + "'; run '" + producer + "' first");
}

void write_manifest(const PipelineConfig& config, const std::string& command,
                    uint64_t seed, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
    ArtifactPaths ap = artifact_paths(config);
    ordered_json j;
    j["command"] = command;
    j["config_hash"] = pipeline_config_hash(config);
    j["seed"] = seed;
    ordered_json in = ordered_json::object(), out = ordered_json::object();
    for (const std::string& p : inputs) in[fs::path(p).filename().string()] = hash_hex(hash_file(p));
    for (const std::string& p : outputs) out[fs::path(p).filename().string()] = hash_hex(hash_file(p));
    j["inputs"] = in;
    j["outputs"] = out;

    std::ofstream f(ap.manifest(command));
    if (!f) fail(ErrorCategory::io, "cannot write manifest for " + command);
    f << j.dump(2) << "\n";
}

ResponseMatrix load_matrix(const PipelineConfig& config) {
    require_file(config.paths.questions, "gen-synthetic");
    require_file(config.paths.responses, "gen-synthetic");
    require_file(config.paths.demographics, "gen-synthetic");
    return load_dataset(config.paths.questions, config.paths.responses, config.paths.demographics);
}

void check_dataset_binding(const std::string& artifact, const std::string& stored,
                           const std::string& current) {
    if (!stored.empty() && stored != current)
        fail(ErrorCategory::incompatibility,
             artifact + " was produced from a different dataset (hash mismatch)");
}

}  // namespace

PipelineConfig default_pipeline_config() { return PipelineConfig{}; }

PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCategory::io, "cannot open config file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCategory::parse, path + ": " + e.what());
    }
    return config_from_json(j);
}

void save_pipeline_config(const std::string& path, const PipelineConfig& config) {
    std::ofstream out(path);
    if (!out) fail(ErrorCategory::io, "cannot write " + path);
    out << config_to_json(config).dump(2) << "\n";
}

std::string pipeline_config_hash(const PipelineConfig& config) {
    ordered_json j = config_to_json(config);
    j.erase("paths");
    return hash_hex(fnv1a64(j.dump()));
}

std::string dataset_hash(const PipelineConfig& config) {
    uint64_t h = kFnvOffset;
    for (const std::string& p : {config.paths.questions, config.paths.responses,
                                 config.paths.demographics}) {
        uint64_t fh = hash_file(p);
        h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&fh), sizeof(fh)), h);
    }
    return hash_hex(h);
}

ArtifactPaths artifact_paths(const PipelineConfig& config) {
    return ArtifactPaths{config.paths.artifacts};
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_gen_synthetic(const PipelineConfig& config) {
    ArtifactPaths ap = artifact_paths(config);
    ensure_dir(ap.dir);
    SyntheticData data = generate_synthetic(config.synthetic);
    save_dataset_files(data.matrix, config.paths.questions, config.paths.responses,
                       config.paths.demographics);
    save_ground_truth(ap.ground_truth(), data.truth, data.matrix);
    write_manifest(config, "gen-synthetic", config.synthetic.seed, {},
                   {config.paths.questions, config.paths.responses, config.paths.demographics,
                    ap.ground_truth()});
    log_info("gen-synthetic: " + std::to_string(data.matrix.individuals().size()) +
             " individuals, " + std::to_string(data.matrix.questions().size()) + " questions, " +
             std::to_string(data.matrix.response_count()) + " responses");
}

void cmd_split(const PipelineConfig& config) {
    ArtifactPaths ap = artifact_paths(config);
    ensure_dir(ap.dir);
    ResponseMatrix matrix = load_matrix(config);
    FourWaySplit split = four_way_split(matrix, config.split);
    save_split(ap.split(), split, config.split, matrix, dataset_hash(config));
    write_manifest(config, "split", config.split.seed,
                   {config.paths.questions, config.paths.responses, config.paths.demographics},
                   {ap.split()});
    log_info("split: |p_tr|=" + std::to_string(split.p_tr.size()) +
             " |p_val|=" + std::to_string(split.p_val.size()) +
             " |r_tr_tr|=" + std::to_string(split.r_tr_tr.size()));
}

void cmd_fit_cf(const PipelineConfig& config) {
    ArtifactPaths ap = artifact_paths(config);
    ResponseMatrix matrix = load_matrix(config);
    require_file(ap.split(), "split");
    LoadedSplit loaded = load_split(ap.split(), matrix);
    check_dataset_binding(ap.split(), loaded.dataset_hash, dataset_hash(config));

    CfResult result = train_cf(matrix, loaded.split.r_tr_tr, config.cf);
    save_embeddings(ap.cf(), result.table, config.cf, result.trace, dataset_hash(config));
    write_manifest(config, "fit-cf", config.cf.seed, {ap.split()}, {ap.cf()});
    log_info("fit-cf: final train MSE " +
             format_double(result.trace.train_loss.empty() ? 0.0 : result.trace.train_loss.back()) +
             " after " + std::to_string(result.trace.train_loss.size()) + " epochs");
}

void cmd_cluster(const PipelineConfig& config, std::optional<int> k_override) {
    ArtifactPaths ap = artifact_paths(config);
    ResponseMatrix matrix = load_matrix(config);
    require_file(ap.split(), "split");
    require_file(ap.cf(), "fit-cf");
    LoadedSplit loaded = load_split(ap.split(), matrix);
    LoadedEmbeddings emb = load_embeddings(ap.cf());
    check_dataset_binding(ap.cf(), emb.dataset_hash, dataset_hash(config));

    ElbowCurve curve = elbow_scan(emb.table, matrix, loaded.split.r_tr_tr, config.cluster.k_scan,
                                  config.cluster.seed);
    save_elbow_csv(ap.elbow(), curve);

    int k = k_override.value_or(config.cluster.k);
    if (k <= 0) k = elbow_pick(curve);
    ClusterModel model = kmeans(emb.table.individual_vectors, k,
                                mix_seed(config.cluster.seed, static_cast<uint64_t>(k)));
    save_clusters(ap.clusters(), model, dataset_hash(config));
    write_manifest(config, "cluster", config.cluster.seed, {ap.cf()},
                   {ap.clusters(), ap.elbow()});
    log_info("cluster: chose k=" + std::to_string(k) + " (inertia " +
             format_double(model.inertia) + ")");
}

void cmd_analyze(const PipelineConfig& config) {
    ArtifactPaths ap = artifact_paths(config);
    ResponseMatrix matrix = load_matrix(config);
    require_file(ap.clusters(), "cluster");
    LoadedClusters clusters = load_clusters(ap.clusters());
    check_dataset_binding(ap.clusters(), clusters.dataset_hash, dataset_hash(config));

    std::string out_dir = ap.dir + "/analytics";
    ensure_dir(out_dir);
    std::vector<std::string> outputs;
    for (int c = 0; c < clusters.model.k; ++c) {
        DisagreementReport report = top_disagreement_vs_population(
            matrix, clusters.model, c, config.analytics.top_n, config.analytics.min_support);
        std::string base = out_dir + "/vs_population_cluster" + std::to_string(c);
        save_disagreement_csv(base + ".csv", report);
        save_disagreement_markdown(base + ".md", report, matrix);
        outputs.push_back(base + ".csv");
        outputs.push_back(base + ".md");
    }
    DisagreementReport between = top_disagreement_between_clusters(
        matrix, clusters.model, config.analytics.top_n, config.analytics.topic,
        config.analytics.min_support);
    save_disagreement_csv(out_dir + "/between_clusters.csv", between);
    save_disagreement_markdown(out_dir + "/between_clusters.md", between, matrix);
    outputs.push_back(out_dir + "/between_clusters.csv");
    outputs.push_back(out_dir + "/between_clusters.md");

    for (const std::string& trait : config.analytics.traits) {
        DemographicComposition comp =
            demographic_composition(matrix.individuals(), clusters.model, trait);
        std::string path = out_dir + "/composition_" + trait + ".csv";
        save_composition_csv(path, comp);
        outputs.push_back(path);
    }
    write_manifest(config, "analyze", 0, {ap.clusters()}, outputs);
    log_info("analyze: wrote " + std::to_string(outputs.size()) + " report files");
}

void cmd_pretrain_lm(const PipelineConfig& config) {
    ArtifactPaths ap = artifact_paths(config);
    ResponseMatrix matrix = load_matrix(config);
    require_file(ap.split(), "split");
    LoadedSplit loaded = load_split(ap.split(), matrix);

    FrozenAnswerModel model = pretrain_toy_lm(matrix, loaded.split.r_tr_tr, config.lm);
    save_lm(ap.lm(), model, dataset_hash(config));
    write_manifest(config, "pretrain-lm", config.lm.seed, {ap.split()}, {ap.lm()});
    log_info("pretrain-lm: frozen model fingerprint " + model.fingerprint());
}

void cmd_train_spm(const PipelineConfig& config) {
    ArtifactPaths ap = artifact_paths(config);
    ResponseMatrix matrix = load_matrix(config);
    require_file(ap.split(), "split");
    require_file(ap.cf(), "fit-cf");
    require_file(ap.lm(), "pretrain-lm");
    LoadedSplit loaded = load_split(ap.split(), matrix);
    LoadedEmbeddings emb = load_embeddings(ap.cf());
    LoadedLm lm = load_lm(ap.lm());
    check_dataset_binding(ap.cf(), emb.dataset_hash, dataset_hash(config));
    check_dataset_binding(ap.lm(), lm.dataset_hash, dataset_hash(config));

    SoftPromptModel spm(config.spm, emb.table.dim, lm.model.config());
    SpmTrainResult result = train_spm(std::move(spm), lm.model, emb.table.individual_vectors,
                                      matrix, loaded.split.r_tr_tr, loaded.split.r_tr_val,
                                      config.spm);
    save_spm(ap.spm(), result.spm, result.trace, lm.model.fingerprint(), dataset_hash(config));
    write_manifest(config, "train-spm", config.spm.seed, {ap.cf(), ap.lm()}, {ap.spm()});
    log_info("train-spm: best epoch " + std::to_string(result.trace.best_epoch) + ", val loss " +
             format_double(result.trace.val_loss.empty()
                               ? 0.0
                               : result.trace.val_loss[static_cast<size_t>(
                                     std::max(0, result.trace.best_epoch))]));
}

void cmd_eval(const PipelineConfig& config, const EvalOptions& options) {
    ArtifactPaths ap = artifact_paths(config);
    ResponseMatrix matrix = load_matrix(config);
    require_file(ap.split(), "split");
    require_file(ap.cf(), "fit-cf");
    require_file(ap.lm(), "pretrain-lm");
    require_file(ap.spm(), "train-spm");
    LoadedSplit loaded = load_split(ap.split(), matrix);
    LoadedEmbeddings emb = load_embeddings(ap.cf());
    LoadedLm lm = load_lm(ap.lm());
    LoadedSpm spm = load_spm(ap.spm(), &lm.model);
    check_dataset_binding(ap.spm(), spm.dataset_hash, dataset_hash(config));

    std::string out_dir = ap.dir + "/eval";
    ensure_dir(out_dir);
    std::string fingerprint = pipeline_config_hash(config);

    std::vector<EvaluationReport> reports;
    auto want_baseline = [&](std::string_view name) {
        if (options.only_persona) return false;
        return !options.only_baseline || *options.only_baseline == name;
    };
    auto want_persona = [&](std::string_view name) {
        if (options.only_baseline) return false;
        return !options.only_persona || *options.only_persona == name;
    };

    if (want_baseline("raw"))
        reports.push_back(run_baseline({BaselineKind::raw_q, config.eval.context_k}, lm.model,
                                       matrix, loaded.split, emb.table.question_vectors));
    if (want_baseline("demo"))
        reports.push_back(run_baseline({BaselineKind::demographics_raw_q, config.eval.context_k},
                                       lm.model, matrix, loaded.split,
                                       emb.table.question_vectors));
    if (want_baseline("context"))
        reports.push_back(run_baseline({BaselineKind::context_raw_q, config.eval.context_k},
                                       lm.model, matrix, loaded.split,
                                       emb.table.question_vectors));

    if (want_persona("individual"))
        reports.push_back(run_steered("steered-individual", spm.spm, lm.model, matrix,
                                      loaded.split,
                                      individual_personas(emb.table.individual_vectors)));
    if (want_persona("cluster")) {
        require_file(ap.clusters(), "cluster");
        LoadedClusters clusters = load_clusters(ap.clusters());
        reports.push_back(run_steered("steered-cluster", spm.spm, lm.model, matrix, loaded.split,
                                      cluster_personas(clusters.model)));
    }
    if (want_persona("demographic"))
        reports.push_back(run_steered(
            "steered-demographic-" + config.eval.demographic_trait, spm.spm, lm.model, matrix,
            loaded.split,
            demographic_personas(emb.table.individual_vectors, matrix.individuals(),
                                 config.eval.demographic_trait)));

    std::vector<std::string> outputs;
    for (EvaluationReport& report : reports) {
        report.config_fingerprint = fingerprint;
        std::string base = out_dir + "/" + report.method;
        save_report_json(base + ".json", report);
        save_report_csv(base + ".csv", report);
        outputs.push_back(base + ".json");
        outputs.push_back(base + ".csv");
        log_info("eval: " + report.method + " macro accuracy " +
                 format_double(report.macro_accuracy * 100.0) + "%");
    }
    save_comparison_markdown(out_dir + "/comparison.md", reports);
    outputs.push_back(out_dir + "/comparison.md");
    write_manifest(config, "eval", 0, {ap.cf(), ap.lm(), ap.spm()}, outputs);
}

void cmd_embed_unseen(const PipelineConfig& config, std::optional<int> k) {
    ArtifactPaths ap = artifact_paths(config);
    ResponseMatrix matrix = load_matrix(config);
    require_file(ap.split(), "split");
    require_file(ap.cf(), "fit-cf");
    LoadedSplit loaded = load_split(ap.split(), matrix);
    LoadedEmbeddings emb = load_embeddings(ap.cf());
    check_dataset_binding(ap.cf(), emb.dataset_hash, dataset_hash(config));

    int k_effective = k ? *k : std::numeric_limits<int>::max();
    auto vectors = embed_unseen(matrix, loaded.split.r_val_tr, emb.table.question_vectors,
                                config.cf, k_effective);

    ordered_json j;
    j["format"] = "unseen-embeddings-v1";
    j["dataset_hash"] = dataset_hash(config);
    j["k_responses"] = k ? json(*k) : json(nullptr);
    j["individuals"] = vectors;
    std::string path = ap.dir + "/unseen_embeddings.json";
    std::ofstream out(path);
    if (!out) fail(ErrorCategory::io, "cannot write " + path);
    out << j.dump() << "\n";
    write_manifest(config, "embed-unseen", config.cf.seed, {ap.split(), ap.cf()}, {path});
    log_info("embed-unseen: embedded " + std::to_string(vectors.size()) + " individuals");
}

void cmd_sweep(const PipelineConfig& config, SweepKind kind) {
    ArtifactPaths ap = artifact_paths(config);
    ResponseMatrix matrix = load_matrix(config);
    require_file(ap.split(), "split");
    require_file(ap.cf(), "fit-cf");
    require_file(ap.lm(), "pretrain-lm");
    require_file(ap.spm(), "train-spm");
    LoadedSplit loaded = load_split(ap.split(), matrix);
    LoadedEmbeddings emb = load_embeddings(ap.cf());
    LoadedLm lm = load_lm(ap.lm());
    LoadedSpm spm = load_spm(ap.spm(), &lm.model);

    if (kind == SweepKind::unseen) {
        std::vector<EvaluationReport> reports =
            unseen_sweep(config.eval.unseen_k, spm.spm, lm.model, emb.table, matrix, loaded.split,
                         config.cf);
        std::string path = ap.dir + "/sweep_unseen.csv";
        std::ofstream out(path);
        if (!out) fail(ErrorCategory::io, "cannot write " + path);
        out << "method,macro_accuracy,n_individuals,n_responses\n";
        for (const EvaluationReport& r : reports)
            out << r.method << "," << format_double(r.macro_accuracy) << "," << r.n_individuals
                << "," << r.n_responses << "\n";
        write_manifest(config, "sweep", 0, {ap.cf(), ap.lm(), ap.spm()}, {path});
        for (const EvaluationReport& r : reports)
            log_info("sweep: " + r.method + " macro accuracy " +
                     format_double(r.macro_accuracy * 100.0) + "%");
    } else {
        std::vector<EvaluationReport> reports =
            cluster_count_sweep(config.eval.cluster_k_sweep, spm.spm, lm.model, emb.table, matrix,
                                loaded.split, config.cluster.seed);
        std::string path = ap.dir + "/sweep_clusters.csv";
        std::ofstream out(path);
        if (!out) fail(ErrorCategory::io, "cannot write " + path);
        out << "method,macro_accuracy,n_individuals,n_responses\n";
        for (const EvaluationReport& r : reports)
            out << r.method << "," << format_double(r.macro_accuracy) << "," << r.n_individuals
                << "," << r.n_responses << "\n";
        write_manifest(config, "sweep", 0, {ap.cf(), ap.lm(), ap.spm()}, {path});
        for (const EvaluationReport& r : reports)
            log_info("sweep: " + r.method + " macro accuracy " +
                     format_double(r.macro_accuracy * 100.0) + "%");
    }
}

}  // namespace steer
