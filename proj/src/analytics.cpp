#include "steer/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

namespace steer {

namespace {

// Distribution from raw counts; callers guarantee support > 0.
ResponseDistribution from_counts(const std::string& question_id, const std::vector<int>& counts,
                                 int support) {
    ResponseDistribution d;
    d.question_id = question_id;
    d.support_count = support;
    d.probabilities.resize(counts.size());
    for (size_t o = 0; o < counts.size(); ++o)
        d.probabilities[o] = static_cast<double>(counts[o]) / static_cast<double>(support);
    return d;
}

// Counts per option for one question over a member index set; returns support.
int count_options(const ResponseMatrix& matrix, int q_idx, const std::vector<int>& members,
                  std::vector<int>& counts) {
    counts.assign(static_cast<size_t>(matrix.question(q_idx).option_count()), 0);
    int support = 0;
    for (int ind : members) {
        ResponseKey key{ind, q_idx};
        if (!matrix.has(key)) continue;
        ++counts[static_cast<size_t>(matrix.option_index(key))];
        ++support;
    }
    return support;
}

ModalAnswer modal_of(const std::string& group, const ResponseDistribution& d,
                     const Question& question) {
    ModalAnswer m;
    m.group = group;
    m.option_index = static_cast<int>(
        std::max_element(d.probabilities.begin(), d.probabilities.end()) - d.probabilities.begin());
    m.option_label = question.options[static_cast<size_t>(m.option_index)];
    m.share = d.probabilities[static_cast<size_t>(m.option_index)];
    return m;
}

void sort_rows(std::vector<DisagreementRow>& rows) {
    std::sort(rows.begin(), rows.end(), [](const DisagreementRow& a, const DisagreementRow& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.question_id < b.question_id;
    });
}

// Members per cluster plus the combined population, as matrix indices.
struct ClusterMembers {
    std::vector<std::vector<int>> per_cluster;
    std::vector<int> all;
};

ClusterMembers collect_members(const ResponseMatrix& matrix, const ClusterModel& clusters) {
    ClusterMembers m;
    m.per_cluster.resize(static_cast<size_t>(clusters.k));
    for (const auto& [id, c] : clusters.assignment) {
        int idx = matrix.individual_index(id);
        if (idx < 0)
            fail(ErrorCategory::referential_integrity,
                 "cluster model references individual '" + id + "' missing from the matrix");
        m.per_cluster[static_cast<size_t>(c)].push_back(idx);
        m.all.push_back(idx);
    }
    for (auto& v : m.per_cluster) std::sort(v.begin(), v.end());
    std::sort(m.all.begin(), m.all.end());
    return m;
}

}  // namespace

ResponseDistribution response_distribution(const ResponseMatrix& matrix,
                                           const std::string& question_id,
                                           const std::vector<std::string>& member_ids) {
    int q_idx = matrix.question_index(question_id);
    if (q_idx < 0) fail(ErrorCategory::lookup, "unknown question '" + question_id + "'");
    std::vector<int> members;
    members.reserve(member_ids.size());
    for (const std::string& id : member_ids) {
        int idx = matrix.individual_index(id);
        if (idx < 0) fail(ErrorCategory::lookup, "unknown individual '" + id + "'");
        members.push_back(idx);
    }
    std::vector<int> counts;
    int support = count_options(matrix, q_idx, members, counts);
    if (support == 0)
        fail(ErrorCategory::empty_support,
             "no member answered question '" + question_id + "'");
    return from_counts(question_id, counts, support);
}

double total_variation(const ResponseDistribution& p, const ResponseDistribution& q) {
    if (p.question_id != q.question_id)
        fail(ErrorCategory::invalid_input, "total_variation across different questions");
    if (p.probabilities.size() != q.probabilities.size())
        fail(ErrorCategory::dimension, "total_variation over mismatched option counts");
    double s = 0.0;
    for (size_t o = 0; o < p.probabilities.size(); ++o)
        s += std::abs(p.probabilities[o] - q.probabilities[o]);
    return 0.5 * s;
}

double tv_ave(const std::vector<ResponseDistribution>& cluster_distributions) {
    const size_t k = cluster_distributions.size();
    if (k < 2) fail(ErrorCategory::invalid_input, "tv_ave needs at least 2 clusters");
    double s = 0.0;
    for (size_t i = 0; i < k; ++i)
        for (size_t j = i + 1; j < k; ++j)
            s += total_variation(cluster_distributions[i], cluster_distributions[j]);
    return s / (static_cast<double>(k) * static_cast<double>(k - 1) / 2.0);
}

DisagreementReport top_disagreement_vs_population(const ResponseMatrix& matrix,
                                                  const ClusterModel& clusters,
                                                  int cluster_index, int top_n,
                                                  int min_support) {
    if (cluster_index < 0 || cluster_index >= clusters.k)
        fail(ErrorCategory::lookup, "cluster index out of range");
    ClusterMembers members = collect_members(matrix, clusters);
    if (members.per_cluster[static_cast<size_t>(cluster_index)].empty())
        fail(ErrorCategory::empty_group, "cluster has no members");

    DisagreementReport report;
    report.title = "cluster-" + std::to_string(cluster_index) + " vs population";
    std::vector<int> cluster_counts, pop_counts;
    for (size_t q = 0; q < matrix.questions().size(); ++q) {
        int qi = static_cast<int>(q);
        int cs = count_options(matrix, qi, members.per_cluster[static_cast<size_t>(cluster_index)],
                               cluster_counts);
        if (cs < std::max(1, min_support)) continue;
        int ps = count_options(matrix, qi, members.all, pop_counts);
        if (ps < std::max(1, min_support)) continue;

        const Question& question = matrix.question(qi);
        ResponseDistribution dc = from_counts(question.id, cluster_counts, cs);
        ResponseDistribution dq = from_counts(question.id, pop_counts, ps);
        DisagreementRow row;
        row.question_id = question.id;
        row.score = total_variation(dc, dq);
        row.modal_answers.push_back(modal_of("cluster-" + std::to_string(cluster_index), dc, question));
        row.modal_answers.push_back(modal_of("population", dq, question));
        report.rows.push_back(std::move(row));
    }
    sort_rows(report.rows);
    if (top_n >= 0 && static_cast<size_t>(top_n) < report.rows.size())
        report.rows.resize(static_cast<size_t>(top_n));
    return report;
}

DisagreementReport top_disagreement_between_clusters(
    const ResponseMatrix& matrix, const ClusterModel& clusters, int top_n,
    const std::optional<std::string>& topic_filter, int min_support) {
    if (clusters.k < 2)
        fail(ErrorCategory::invalid_input, "between-cluster disagreement needs k >= 2");
    ClusterMembers members = collect_members(matrix, clusters);

    DisagreementReport report;
    report.title = topic_filter ? "cross-cluster disagreement (topic: " + *topic_filter + ")"
                                : "cross-cluster disagreement";
    std::vector<int> counts;
    for (size_t q = 0; q < matrix.questions().size(); ++q) {
        const Question& question = matrix.question(static_cast<int>(q));
        if (topic_filter && question.topic != *topic_filter) continue;

        std::vector<ResponseDistribution> dists;
        dists.reserve(static_cast<size_t>(clusters.k));
        bool ok = true;
        for (int c = 0; c < clusters.k; ++c) {
            int support = count_options(matrix, static_cast<int>(q),
                                        members.per_cluster[static_cast<size_t>(c)], counts);
            if (support < std::max(1, min_support)) {
                ok = false;
                break;
            }
            dists.push_back(from_counts(question.id, counts, support));
        }
        if (!ok) continue;

        DisagreementRow row;
        row.question_id = question.id;
        row.score = tv_ave(dists);
        for (int c = 0; c < clusters.k; ++c)
            row.modal_answers.push_back(
                modal_of("cluster-" + std::to_string(c), dists[static_cast<size_t>(c)], question));
        report.rows.push_back(std::move(row));
    }
    sort_rows(report.rows);
    if (top_n >= 0 && static_cast<size_t>(top_n) < report.rows.size())
        report.rows.resize(static_cast<size_t>(top_n));
    return report;
}

DemographicComposition demographic_composition(const std::vector<Individual>& individuals,
                                               const ClusterModel& clusters,
                                               const std::string& trait) {
    std::set<std::string> category_set;
    for (const Individual& ind : individuals) {
        auto it = ind.demographics.find(trait);
        if (it != ind.demographics.end()) category_set.insert(it->second);
    }
    if (category_set.empty())
        fail(ErrorCategory::lookup, "no individual carries trait '" + trait + "'");

    DemographicComposition table;
    table.trait = trait;
    table.categories.assign(category_set.begin(), category_set.end());
    std::map<std::string, size_t> cat_index;
    for (size_t i = 0; i < table.categories.size(); ++i) cat_index[table.categories[i]] = i;

    std::map<std::string, const Individual*> by_id;
    for (const Individual& ind : individuals) by_id[ind.id] = &ind;

    auto tally = [&](const std::vector<const Individual*>& group, const std::string& label) {
        CompositionRow row;
        row.group = label;
        row.frequencies.assign(table.categories.size(), 0.0);
        for (const Individual* ind : group) {
            auto it = ind->demographics.find(trait);
            if (it == ind->demographics.end()) continue;
            row.frequencies[cat_index.at(it->second)] += 1.0;
            ++row.support_count;
        }
        if (row.support_count > 0)
            for (double& f : row.frequencies) f /= static_cast<double>(row.support_count);
        return row;
    };

    std::vector<std::vector<const Individual*>> cluster_groups(static_cast<size_t>(clusters.k));
    std::vector<const Individual*> all;
    for (const auto& [id, c] : clusters.assignment) {
        auto it = by_id.find(id);
        if (it == by_id.end())
            fail(ErrorCategory::referential_integrity,
                 "cluster model references unknown individual '" + id + "'");
        cluster_groups[static_cast<size_t>(c)].push_back(it->second);
        all.push_back(it->second);
    }
    for (int c = 0; c < clusters.k; ++c)
        table.rows.push_back(tally(cluster_groups[static_cast<size_t>(c)],
                                   "cluster-" + std::to_string(c)));
    table.rows.push_back(tally(all, "population"));
    return table;
}

// ---------------------------------------------------------------------------
// Emitters
// ---------------------------------------------------------------------------

void save_disagreement_csv(const std::string& path, const DisagreementReport& report) {
    std::ofstream out(path);
    if (!out) fail(ErrorCategory::io, "cannot write " + path);
    out << "question_id,score,group,modal_option_index,modal_option_label,modal_share\n";
    for (const DisagreementRow& row : report.rows)
        for (const ModalAnswer& m : row.modal_answers)
            out << row.question_id << "," << format_double(row.score) << "," << m.group << ","
                << m.option_index << "," << m.option_label << "," << format_double(m.share)
                << "\n";
}

void save_disagreement_markdown(const std::string& path, const DisagreementReport& report,
                                const ResponseMatrix& matrix) {
    std::ofstream out(path);
    if (!out) fail(ErrorCategory::io, "cannot write " + path);
    out << "# " << report.title << "\n\n";
    out << "| Question | Score | Group | Modal response |\n";
    out << "|---|---|---|---|\n";
    for (const DisagreementRow& row : report.rows) {
        int q = matrix.question_index(row.question_id);
        std::string text = q >= 0 ? matrix.question(q).text : row.question_id;
        bool first = true;
        for (const ModalAnswer& m : row.modal_answers) {
            out << "| " << (first ? text : "") << " | "
                << (first ? format_double(row.score) : "") << " | " << m.group << " | "
                << m.option_label << " (" << format_double(m.share * 100.0) << "%) |\n";
            first = false;
        }
    }
}

void save_composition_csv(const std::string& path, const DemographicComposition& table) {
    std::ofstream out(path);
    if (!out) fail(ErrorCategory::io, "cannot write " + path);
    out << "group,support";
    for (const std::string& c : table.categories) out << "," << c;
    out << "\n";
    for (const CompositionRow& row : table.rows) {
        out << row.group << "," << row.support_count;
        for (double f : row.frequencies) out << "," << format_double(f);
        out << "\n";
    }
}

}  // namespace steer
