#include "steer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"

namespace steer {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::raw_q: return "raw_q";
        case BaselineKind::demographics_raw_q: return "demographics_raw_q";
        case BaselineKind::context_raw_q: return "context_raw_q";
    }
    return "unknown";
}

BaselineKind baseline_kind_from_string(std::string_view s) {
    if (s == "raw" || s == "raw_q") return BaselineKind::raw_q;
    if (s == "demo" || s == "demographics_raw_q") return BaselineKind::demographics_raw_q;
    if (s == "context" || s == "context_raw_q") return BaselineKind::context_raw_q;
    fail(ErrorCategory::config, "unknown baseline '" + std::string(s) + "'");
}

namespace {

int argmax_option(const std::vector<double>& logits, int option_count) {
    int best = 0;
    for (int o = 1; o < option_count; ++o)
        if (logits[static_cast<size_t>(o)] > logits[static_cast<size_t>(best)]) best = o;
    return best;
}

const std::vector<ResponseKey>& eval_keys(const FourWaySplit& split, EvalPartition partition) {
    return partition == EvalPartition::seen ? split.r_tr_val : split.r_val_val;
}

const std::vector<ResponseKey>& context_keys(const FourWaySplit& split, EvalPartition partition) {
    return partition == EvalPartition::seen ? split.r_tr_tr : split.r_val_tr;
}

std::map<ResponseKey, int> truths_for(const ResponseMatrix& matrix,
                                      const std::vector<ResponseKey>& keys) {
    std::map<ResponseKey, int> truths;
    for (ResponseKey key : keys) truths[key] = matrix.option_index(key);
    return truths;
}

}  // namespace

EvaluationReport macro_accuracy(const std::map<ResponseKey, int>& predictions,
                                const std::map<ResponseKey, int>& truths,
                                const ResponseMatrix& matrix, const std::string& method) {
    if (predictions.empty()) fail(ErrorCategory::invalid_input, "no predictions to score");
    if (predictions.size() != truths.size())
        fail(ErrorCategory::alignment, "prediction and truth key sets differ in size");

    std::map<int, std::pair<int, int>> per_ind;  // individual -> (correct, answered)
    for (const auto& [key, predicted] : predictions) {
        auto it = truths.find(key);
        if (it == truths.end())
            fail(ErrorCategory::alignment, "prediction key missing from the truth set");
        auto& [correct, answered] = per_ind[key.individual];
        ++answered;
        if (predicted == it->second) ++correct;
    }

    EvaluationReport report;
    report.method = method;
    double sum = 0.0;
    for (const auto& [ind, counts] : per_ind) {
        double acc = static_cast<double>(counts.first) / static_cast<double>(counts.second);
        report.per_individual[matrix.individual(ind).id] = acc;
        sum += acc;
        report.n_responses += counts.second;
    }
    report.n_individuals = static_cast<int>(per_ind.size());
    report.macro_accuracy = sum / static_cast<double>(per_ind.size());
    return report;
}

EvaluationReport run_baseline(const BaselineSpec& spec, const FrozenAnswerModel& frozen_model,
                              const ResponseMatrix& matrix, const FourWaySplit& split,
                              const std::map<std::string, std::vector<double>>& question_vectors,
                              EvalPartition partition) {
    if (spec.kind == BaselineKind::context_raw_q && spec.context_k < 1)
        fail(ErrorCategory::config, "context baseline needs context_k >= 1");

    const std::vector<ResponseKey>& keys = eval_keys(split, partition);
    if (keys.empty()) fail(ErrorCategory::invalid_input, "evaluation key set is empty");

    // Context candidates per individual, from the partition's training side.
    std::map<int, std::vector<ResponseKey>> context_of;
    if (spec.kind == BaselineKind::context_raw_q)
        for (ResponseKey key : context_keys(split, partition))
            context_of[key.individual].push_back(key);

    EvaluationReport report;
    std::map<ResponseKey, int> predictions;
    for (ResponseKey key : keys) {
        const Question& question = matrix.question(key.question);
        const Individual& ind = matrix.individual(key.individual);
        std::vector<int> tokens;

        if (spec.kind == BaselineKind::demographics_raw_q) {
            // One vocabulary token per (trait, category), traits in name order.
            for (const auto& [trait, category] : ind.demographics)
                tokens.push_back(frozen_model.vocab().demographic_token(trait, category));
            if (tokens.empty()) report.fallbacks[ind.id] = "no demographics; raw question only";
        } else if (spec.kind == BaselineKind::context_raw_q) {
            auto ctx_it = context_of.find(key.individual);
            if (ctx_it == context_of.end() || ctx_it->second.empty()) {
                report.fallbacks[ind.id] = "no training responses; raw question fallback";
            } else {
                const auto& target_vec = question_vectors.find(question.id);
                if (target_vec == question_vectors.end())
                    fail(ErrorCategory::lookup,
                         "no question vector for '" + question.id + "' in context baseline");
                // Rank candidates by cosine similarity to the target question,
                // ties by question id.
                std::vector<std::pair<double, ResponseKey>> ranked;
                for (ResponseKey cand : ctx_it->second) {
                    if (cand.question == key.question) continue;
                    auto qv = question_vectors.find(matrix.question(cand.question).id);
                    if (qv == question_vectors.end())
                        fail(ErrorCategory::lookup, "no question vector for context candidate");
                    ranked.emplace_back(cosine_similarity(target_vec->second, qv->second), cand);
                }
                std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
                    if (a.first != b.first) return a.first > b.first;
                    return matrix.question(a.second.question).id <
                           matrix.question(b.second.question).id;
                });
                size_t take = std::min(ranked.size(), static_cast<size_t>(spec.context_k));
                for (size_t i = 0; i < take; ++i) {
                    ResponseKey cand = ranked[i].second;
                    tokens.push_back(
                        frozen_model.vocab().question_token(matrix.question(cand.question).id));
                    tokens.push_back(frozen_model.vocab().option_token(matrix.option_index(cand)));
                }
                if (take == 0) report.fallbacks[ind.id] = "no usable context; raw question fallback";
            }
        }

        std::vector<int> qtokens = frozen_model.question_tokens(question.id);
        tokens.insert(tokens.end(), qtokens.begin(), qtokens.end());

        std::vector<double> logits =
            frozen_model.forward_with_prefix(nullptr, tokens, question.option_count());
        predictions[key] = argmax_option(logits, question.option_count());
    }

    EvaluationReport scored =
        macro_accuracy(predictions, truths_for(matrix, keys), matrix, std::string(to_string(spec.kind)));
    scored.fallbacks = std::move(report.fallbacks);
    return scored;
}

PersonaMap individual_personas(const std::map<std::string, std::vector<double>>& vectors) {
    PersonaMap out;
    for (const auto& [id, vec] : vectors) {
        PersonaEmbedding p;
        p.kind = PersonaKind::individual;
        p.source_id = id;
        p.vector = vec;
        out[id] = std::move(p);
    }
    return out;
}

PersonaMap cluster_personas(const ClusterModel& model) {
    PersonaMap out;
    for (const auto& [id, c] : model.assignment) out[id] = cluster_embedding(model, id);
    return out;
}

PersonaMap demographic_personas(const std::map<std::string, std::vector<double>>& vectors,
                                const std::vector<Individual>& individuals,
                                const std::string& trait) {
    // One centroid per category; every individual carrying the trait maps to
    // their category's centroid.
    std::set<std::string> categories;
    for (const Individual& ind : individuals) {
        auto it = ind.demographics.find(trait);
        if (it != ind.demographics.end()) categories.insert(it->second);
    }
    if (categories.empty())
        fail(ErrorCategory::lookup, "no individual carries trait '" + trait + "'");

    std::map<std::string, PersonaEmbedding> centroid_of;
    for (const std::string& category : categories)
        centroid_of[category] = demographic_embedding(vectors, individuals, trait, category);

    PersonaMap out;
    for (const Individual& ind : individuals) {
        auto it = ind.demographics.find(trait);
        if (it == ind.demographics.end()) continue;
        if (vectors.find(ind.id) == vectors.end()) continue;
        out[ind.id] = centroid_of.at(it->second);
    }
    return out;
}

EvaluationReport run_steered(const std::string& method_label, const SoftPromptModel& spm,
                             const FrozenAnswerModel& frozen_model, const ResponseMatrix& matrix,
                             const FourWaySplit& split, const PersonaMap& personas,
                             EvalPartition partition) {
    const std::vector<ResponseKey>& keys = eval_keys(split, partition);
    if (keys.empty()) fail(ErrorCategory::invalid_input, "evaluation key set is empty");

    std::map<ResponseKey, int> predictions;
    for (ResponseKey key : keys) {
        const Question& question = matrix.question(key.question);
        const std::string& ind_id = matrix.individual(key.individual).id;
        auto persona = personas.find(ind_id);
        if (persona == personas.end())
            fail(ErrorCategory::lookup, "no persona embedding for individual '" + ind_id + "'");
        predictions[key] = steer_predict(spm, frozen_model, persona->second, question.id,
                                         question.option_count());
    }
    return macro_accuracy(predictions, truths_for(matrix, keys), matrix, method_label);
}

std::vector<EvaluationReport> unseen_sweep(const std::vector<std::optional<int>>& k_values,
                                           const SoftPromptModel& spm,
                                           const FrozenAnswerModel& frozen_model,
                                           const EmbeddingTable& table,
                                           const ResponseMatrix& matrix,
                                           const FourWaySplit& split, const CfConfig& cf_config) {
    if (split.r_val_tr.empty() || split.r_val_val.empty())
        fail(ErrorCategory::invalid_input, "unseen sweep needs non-empty validation partitions");

    std::vector<EvaluationReport> reports;
    for (const std::optional<int>& k : k_values) {
        int k_effective = k ? *k : std::numeric_limits<int>::max();
        auto vectors = embed_unseen(matrix, split.r_val_tr, table.question_vectors, cf_config,
                                    k_effective);
        std::string label = "unseen-K=" + (k ? std::to_string(*k) : std::string("all"));
        EvaluationReport report = run_steered(label, spm, frozen_model, matrix, split,
                                              individual_personas(vectors), EvalPartition::unseen);
        reports.push_back(std::move(report));
    }
    return reports;
}

std::vector<EvaluationReport> cluster_count_sweep(const std::vector<int>& k_list,
                                                  const SoftPromptModel& spm,
                                                  const FrozenAnswerModel& frozen_model,
                                                  const EmbeddingTable& table,
                                                  const ResponseMatrix& matrix,
                                                  const FourWaySplit& split, uint64_t seed) {
    std::vector<EvaluationReport> reports;
    for (int k : k_list) {
        ClusterModel model =
            kmeans(table.individual_vectors, k, mix_seed(seed, static_cast<uint64_t>(k)));
        EvaluationReport report =
            run_steered("cluster-k=" + std::to_string(k), spm, frozen_model, matrix, split,
                        cluster_personas(model), EvalPartition::seen);
        reports.push_back(std::move(report));
    }
    return reports;
}

// ---------------------------------------------------------------------------
// Emitters
// ---------------------------------------------------------------------------

void save_report_json(const std::string& path, const EvaluationReport& report) {
    ordered_json j;
    j["format"] = "eval-report-v1";
    j["method"] = report.method;
    j["macro_accuracy"] = report.macro_accuracy;
    j["n_individuals"] = report.n_individuals;
    j["n_responses"] = report.n_responses;
    j["config_fingerprint"] = report.config_fingerprint;
    j["per_individual"] = report.per_individual;
    j["fallbacks"] = report.fallbacks;

    std::ofstream out(path);
    if (!out) fail(ErrorCategory::io, "cannot write " + path);
    out << j.dump(2) << "\n";
}

void save_report_csv(const std::string& path, const EvaluationReport& report) {
    std::ofstream out(path);
    if (!out) fail(ErrorCategory::io, "cannot write " + path);
    out << "individual_id,accuracy\n";
    for (const auto& [id, acc] : report.per_individual)
        out << id << "," << format_double(acc) << "\n";
}

void save_comparison_markdown(const std::string& path,
                              const std::vector<EvaluationReport>& reports) {
    std::ofstream out(path);
    if (!out) fail(ErrorCategory::io, "cannot write " + path);
    out << "| Method | Macro accuracy | Individuals | Responses |\n";
    out << "|---|---|---|---|\n";
    for (const EvaluationReport& r : reports)
        out << "| " << r.method << " | " << format_double(r.macro_accuracy * 100.0) << "% | "
            << r.n_individuals << " | " << r.n_responses << " |\n";
}

}  // namespace steer
