// Test-only reference implementations. Everything here recomputes results by
// the most literal route available (plain loops, exhaustive enumeration,
// central differences) and stays independent of the library code it checks.
#pragma once

#include "steer/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <vector>

namespace oracle {

inline double rel_err(double a, double b, double floor) {
    return std::abs(a - b) / std::max({floor, std::abs(a), std::abs(b)});
}

// Central finite difference of f at *x.
inline double central_diff(const std::function<double()>& f, double* x, double h) {
    double saved = *x;
    *x = saved + h;
    double up = f();
    *x = saved - h;
    double down = f();
    *x = saved;
    return (up - down) / (2.0 * h);
}

// Literal re-computation of the squared-error mean.
inline double brute_cf_loss(const steer::EmbeddingTable& table, const steer::ResponseMatrix& m,
                            const std::vector<steer::ResponseKey>& keys) {
    double total = 0.0;
    for (steer::ResponseKey key : keys) {
        const auto& u = table.individual_vectors.at(m.individual(key.individual).id);
        const auto& q = table.question_vectors.at(m.question(key.question).id);
        double pred = 0.0;
        for (size_t i = 0; i < u.size(); ++i) pred += u[i] * q[i];
        double d = pred - m.value(key);
        total += d * d;
    }
    return total / static_cast<double>(keys.size());
}

// Tally-based distribution over one question for a member set.
inline std::vector<double> brute_distribution(const steer::ResponseMatrix& m, int q_idx,
                                              const std::vector<int>& members) {
    std::vector<double> counts(static_cast<size_t>(m.question(q_idx).option_count()), 0.0);
    double support = 0.0;
    for (int ind : members) {
        steer::ResponseKey key{ind, q_idx};
        if (!m.has(key)) continue;
        counts[static_cast<size_t>(m.option_index(key))] += 1.0;
        support += 1.0;
    }
    for (double& c : counts) c /= support;
    return counts;
}

inline double brute_tv(const std::vector<double>& p, const std::vector<double>& q) {
    double s = 0.0;
    for (size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
    return s / 2.0;
}

inline double brute_tv_ave(const std::vector<std::vector<double>>& dists) {
    double s = 0.0;
    int pairs = 0;
    for (size_t i = 0; i < dists.size(); ++i)
        for (size_t j = i + 1; j < dists.size(); ++j) {
            s += brute_tv(dists[i], dists[j]);
            ++pairs;
        }
    return s / pairs;
}

// Per-individual recount of macro accuracy.
inline double brute_macro_accuracy(const std::map<steer::ResponseKey, int>& predictions,
                                   const std::map<steer::ResponseKey, int>& truths) {
    std::map<int, std::pair<double, double>> per_ind;
    for (const auto& [key, pred] : predictions) {
        auto& [correct, total] = per_ind[key.individual];
        total += 1.0;
        if (pred == truths.at(key)) correct += 1.0;
    }
    double s = 0.0;
    for (const auto& [ind, ct] : per_ind) s += ct.first / ct.second;
    return s / static_cast<double>(per_ind.size());
}

// Adjusted Rand index via the contingency-table formula.
inline double adjusted_rand(const std::vector<int>& a, const std::vector<int>& b) {
    int ka = *std::max_element(a.begin(), a.end()) + 1;
    int kb = *std::max_element(b.begin(), b.end()) + 1;
    std::vector<std::vector<long>> n(static_cast<size_t>(ka), std::vector<long>(static_cast<size_t>(kb), 0));
    for (size_t i = 0; i < a.size(); ++i) ++n[static_cast<size_t>(a[i])][static_cast<size_t>(b[i])];
    auto choose2 = [](double x) { return x * (x - 1.0) / 2.0; };
    std::vector<long> ra(static_cast<size_t>(ka), 0), rb(static_cast<size_t>(kb), 0);
    double sum_ij = 0.0;
    for (int i = 0; i < ka; ++i)
        for (int j = 0; j < kb; ++j) {
            long nij = n[static_cast<size_t>(i)][static_cast<size_t>(j)];
            sum_ij += choose2(static_cast<double>(nij));
            ra[static_cast<size_t>(i)] += nij;
            rb[static_cast<size_t>(j)] += nij;
        }
    double sum_a = 0.0, sum_b = 0.0;
    for (long x : ra) sum_a += choose2(static_cast<double>(x));
    for (long x : rb) sum_b += choose2(static_cast<double>(x));
    double total = choose2(static_cast<double>(a.size()));
    double expected = sum_a * sum_b / total;
    double maximum = 0.5 * (sum_a + sum_b);
    return (sum_ij - expected) / (maximum - expected);
}

// Minimum k-means cost over every possible assignment (tiny n only).
inline double exhaustive_kmeans_cost(const std::vector<std::vector<double>>& points, int k) {
    const size_t n = points.size();
    const size_t dim = points[0].size();
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> assign(n, 0);
    size_t combos = 1;
    for (size_t i = 0; i < n; ++i) combos *= static_cast<size_t>(k);
    for (size_t code = 0; code < combos; ++code) {
        size_t c = code;
        bool used_all = true;
        std::vector<int> count(static_cast<size_t>(k), 0);
        for (size_t i = 0; i < n; ++i) {
            assign[i] = static_cast<int>(c % static_cast<size_t>(k));
            c /= static_cast<size_t>(k);
            ++count[static_cast<size_t>(assign[i])];
        }
        for (int cc : count) used_all = used_all && cc > 0;
        if (!used_all) continue;

        std::vector<std::vector<double>> centers(static_cast<size_t>(k),
                                                 std::vector<double>(dim, 0.0));
        for (size_t i = 0; i < n; ++i)
            for (size_t d = 0; d < dim; ++d)
                centers[static_cast<size_t>(assign[i])][d] += points[i][d];
        for (int cc = 0; cc < k; ++cc)
            for (size_t d = 0; d < dim; ++d)
                centers[static_cast<size_t>(cc)][d] /= count[static_cast<size_t>(cc)];
        double cost = 0.0;
        for (size_t i = 0; i < n; ++i)
            for (size_t d = 0; d < dim; ++d) {
                double diff = points[i][d] - centers[static_cast<size_t>(assign[i])][d];
                cost += diff * diff;
            }
        best = std::min(best, cost);
    }
    return best;
}

// Small hand-built response matrix helper.
inline steer::ResponseMatrix make_matrix(
    const std::vector<std::pair<std::string, int>>& questions,  // (id, option count)
    const std::vector<std::string>& individuals,
    const std::vector<std::tuple<std::string, std::string, int>>& responses,
    const std::map<std::string, std::map<std::string, std::string>>& demographics = {}) {
    std::vector<steer::Question> qs;
    for (const auto& [id, m] : questions) {
        steer::Question q;
        q.id = id;
        q.text = "question " + id;
        q.topic = "topic";
        for (int o = 0; o < m; ++o) q.options.push_back("opt-" + std::to_string(o));
        qs.push_back(std::move(q));
    }
    std::vector<steer::Individual> inds;
    for (const std::string& id : individuals) {
        steer::Individual ind;
        ind.id = id;
        auto it = demographics.find(id);
        if (it != demographics.end())
            ind.demographics.insert(it->second.begin(), it->second.end());
        inds.push_back(std::move(ind));
    }
    std::vector<steer::ResponseMatrix::RawResponse> raw;
    for (const auto& [ind, q, opt] : responses) raw.push_back({ind, q, opt});
    return steer::ResponseMatrix::build(std::move(qs), std::move(inds), raw);
}

// Random dense-ish matrix for property tests.
inline steer::ResponseMatrix random_matrix(std::mt19937_64& rng, int n_individuals,
                                           int n_questions, double density = 0.8) {
    std::vector<std::pair<std::string, int>> questions;
    std::uniform_int_distribution<int> opts(2, 5);
    for (int q = 0; q < n_questions; ++q)
        questions.emplace_back("q" + std::to_string(q), opts(rng));
    std::vector<std::string> individuals;
    for (int i = 0; i < n_individuals; ++i) individuals.push_back("i" + std::to_string(i));
    std::vector<std::tuple<std::string, std::string, int>> responses;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < n_individuals; ++i)
        for (int q = 0; q < n_questions; ++q) {
            if (unit(rng) > density) continue;
            std::uniform_int_distribution<int> pick(0, questions[static_cast<size_t>(q)].second - 1);
            responses.emplace_back(individuals[static_cast<size_t>(i)],
                                   questions[static_cast<size_t>(q)].first, pick(rng));
        }
    return make_matrix(questions, individuals, responses);
}

}  // namespace oracle
