#pragma once

#include "steer/cf.hpp"
#include "steer/persona.hpp"
#include "steer/spm.hpp"
#include "steer/toy_lm.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace steer {

struct EvaluationReport {
    std::string method;
    double macro_accuracy = 0.0;  // unweighted mean of per-individual accuracies
    std::map<std::string, double> per_individual;
    int n_individuals = 0;
    int n_responses = 0;
    std::string config_fingerprint;
    // Individuals that needed a documented fallback (e.g. no context
    // available), with a short reason.
    std::map<std::string, std::string> fallbacks;
};

enum class BaselineKind { raw_q, demographics_raw_q, context_raw_q };

std::string_view to_string(BaselineKind kind);
BaselineKind baseline_kind_from_string(std::string_view s);

struct BaselineSpec {
    BaselineKind kind = BaselineKind::raw_q;
    int context_k = 5;  // for context_raw_q
};

// Which side of the four-way split the evaluation runs on: `seen` scores
// r_tr_val with context drawn from r_tr_tr; `unseen` scores r_val_val with
// context drawn from r_val_tr.
enum class EvalPartition { seen, unseen };

// Per-individual accuracy = correct/answered; macro = unweighted mean.
EvaluationReport macro_accuracy(const std::map<ResponseKey, int>& predictions,
                                const std::map<ResponseKey, int>& truths,
                                const ResponseMatrix& matrix, const std::string& method);

EvaluationReport run_baseline(const BaselineSpec& spec, const FrozenAnswerModel& frozen_model,
                              const ResponseMatrix& matrix, const FourWaySplit& split,
                              const std::map<std::string, std::vector<double>>& question_vectors,
                              EvalPartition partition = EvalPartition::seen);

// id -> persona embedding, one entry per individual to evaluate.
using PersonaMap = std::map<std::string, PersonaEmbedding>;

PersonaMap individual_personas(const std::map<std::string, std::vector<double>>& vectors);
PersonaMap cluster_personas(const ClusterModel& model);
PersonaMap demographic_personas(const std::map<std::string, std::vector<double>>& vectors,
                                const std::vector<Individual>& individuals,
                                const std::string& trait);

EvaluationReport run_steered(const std::string& method_label, const SoftPromptModel& spm,
                             const FrozenAnswerModel& frozen_model, const ResponseMatrix& matrix,
                             const FourWaySplit& split, const PersonaMap& personas,
                             EvalPartition partition = EvalPartition::seen);

// Unseen-individual sweep: for each K, embed p_val individuals from at most K
// of their r_val_tr responses (question vectors frozen), then score steered
// predictions on r_val_val. nullopt means "all available responses".
std::vector<EvaluationReport> unseen_sweep(const std::vector<std::optional<int>>& k_values,
                                           const SoftPromptModel& spm,
                                           const FrozenAnswerModel& frozen_model,
                                           const EmbeddingTable& table,
                                           const ResponseMatrix& matrix,
                                           const FourWaySplit& split, const CfConfig& cf_config);

// Cluster-count sweep: run_steered with cluster personas for each k.
std::vector<EvaluationReport> cluster_count_sweep(const std::vector<int>& k_list,
                                                  const SoftPromptModel& spm,
                                                  const FrozenAnswerModel& frozen_model,
                                                  const EmbeddingTable& table,
                                                  const ResponseMatrix& matrix,
                                                  const FourWaySplit& split, uint64_t seed);

void save_report_json(const std::string& path, const EvaluationReport& report);
void save_report_csv(const std::string& path, const EvaluationReport& report);
// Comparison summary across methods, one row per report.
void save_comparison_markdown(const std::string& path,
                              const std::vector<EvaluationReport>& reports);

}  // namespace steer
