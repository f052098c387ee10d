#pragma once

#include "steer/dataset.hpp"
#include "steer/persona.hpp"

#include <optional>
#include <string>
#include <vector>

namespace steer {

// Empirical distribution over one question's options for some member set.
struct ResponseDistribution {
    std::string question_id;
    std::vector<double> probabilities;  // length m, sums to 1
    int support_count = 0;
};

struct ModalAnswer {
    std::string group;   // e.g. "cluster-0" or "population"
    int option_index = -1;
    std::string option_label;
    double share = 0.0;
};

struct DisagreementRow {
    std::string question_id;
    double score = 0.0;  // TV or TV-average, in [0,1]
    std::vector<ModalAnswer> modal_answers;
};

// Rows sorted by score descending, question id ascending on ties.
struct DisagreementReport {
    std::string title;
    std::vector<DisagreementRow> rows;
};

ResponseDistribution response_distribution(const ResponseMatrix& matrix,
                                           const std::string& question_id,
                                           const std::vector<std::string>& member_ids);

// Half L1 distance between two distributions over the same question.
double total_variation(const ResponseDistribution& p, const ResponseDistribution& q);

// Mean pairwise TV across cluster distributions for one question.
double tv_ave(const std::vector<ResponseDistribution>& cluster_distributions);

// Questions where `cluster_index` diverges most from the whole population
// (all individuals assigned in `clusters`). Questions with fewer than
// `min_support` answers in either group are excluded.
DisagreementReport top_disagreement_vs_population(const ResponseMatrix& matrix,
                                                  const ClusterModel& clusters,
                                                  int cluster_index, int top_n,
                                                  int min_support = 20);

// Questions ranked by the cross-cluster TV average; optional topic filter.
DisagreementReport top_disagreement_between_clusters(
    const ResponseMatrix& matrix, const ClusterModel& clusters, int top_n,
    const std::optional<std::string>& topic_filter = std::nullopt, int min_support = 20);

struct CompositionRow {
    std::string group;  // "cluster-<i>" or "population"
    std::vector<double> frequencies;  // aligned with DemographicComposition::categories
    int support_count = 0;
};

struct DemographicComposition {
    std::string trait;
    std::vector<std::string> categories;  // sorted
    std::vector<CompositionRow> rows;     // clusters 0..k-1, then population
};

DemographicComposition demographic_composition(const std::vector<Individual>& individuals,
                                               const ClusterModel& clusters,
                                               const std::string& trait);

void save_disagreement_csv(const std::string& path, const DisagreementReport& report);
void save_disagreement_markdown(const std::string& path, const DisagreementReport& report,
                                const ResponseMatrix& matrix);
void save_composition_csv(const std::string& path, const DemographicComposition& table);

}  // namespace steer
