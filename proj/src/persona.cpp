#include "steer/persona.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace steer {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct Points {
    std::vector<std::string> ids;          // sorted
    std::vector<std::vector<double>> xs;   // same order
    int dim = 0;
};

Points collect(const std::map<std::string, std::vector<double>>& embeddings) {
    Points p;
    for (const auto& [id, vec] : embeddings) {  // std::map iterates in id order
        if (p.ids.empty()) p.dim = static_cast<int>(vec.size());
        if (static_cast<int>(vec.size()) != p.dim)
            fail(ErrorCategory::dimension, "embedding '" + id + "' has inconsistent length");
        p.ids.push_back(id);
        p.xs.push_back(vec);
    }
    return p;
}

int nearest_centroid(const std::vector<double>& x,
                     const std::vector<std::vector<double>>& centroids) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t c = 0; c < centroids.size(); ++c) {
        double d = squared_distance(x, centroids[c]);
        if (d < best_d) {  // strict: ties resolve to the lowest index
            best_d = d;
            best = static_cast<int>(c);
        }
    }
    return best;
}

// k-means++: first centroid uniform, then proportional to squared distance
// from the nearest chosen centroid.
std::vector<std::vector<double>> kmeanspp_init(const Points& p, int k, Rng& rng) {
    const size_t n = p.xs.size();
    std::vector<std::vector<double>> centroids;
    std::uniform_int_distribution<size_t> uniform(0, n - 1);
    centroids.push_back(p.xs[uniform(rng)]);

    std::vector<double> dist2(n);
    while (static_cast<int>(centroids.size()) < k) {
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double d = std::numeric_limits<double>::infinity();
            for (const auto& c : centroids) d = std::min(d, squared_distance(p.xs[i], c));
            dist2[i] = d;
            total += d;
        }
        size_t chosen;
        if (total <= 0.0) {
            // All remaining mass sits on already-chosen points; fall back to
            // the first index not yet used as a centroid.
            chosen = 0;
            for (size_t i = 0; i < n; ++i) {
                bool used = false;
                for (const auto& c : centroids)
                    if (c == p.xs[i]) { used = true; break; }
                if (!used) { chosen = i; break; }
            }
        } else {
            std::uniform_real_distribution<double> pick(0.0, total);
            double target = pick(rng);
            chosen = n - 1;
            double acc = 0.0;
            for (size_t i = 0; i < n; ++i) {
                acc += dist2[i];
                if (acc >= target) { chosen = i; break; }
            }
        }
        centroids.push_back(p.xs[chosen]);
    }
    return centroids;
}

double compute_inertia(const Points& p, const std::vector<int>& assign,
                       const std::vector<std::vector<double>>& centroids) {
    double s = 0.0;
    for (size_t i = 0; i < p.xs.size(); ++i)
        s += squared_distance(p.xs[i], centroids[static_cast<size_t>(assign[i])]);
    return s;
}

}  // namespace

ClusterModel kmeans(const std::map<std::string, std::vector<double>>& embeddings, int k,
                    uint64_t seed, int max_iterations) {
    Points p = collect(embeddings);
    const int n = static_cast<int>(p.xs.size());
    if (k < 1 || k > n)
        fail(ErrorCategory::invalid_k,
             "k=" + std::to_string(k) + " invalid for " + std::to_string(n) + " points");

    Rng rng(mix_seed(seed, "kmeans"));
    std::vector<std::vector<double>> centroids = kmeanspp_init(p, k, rng);
    std::vector<int> assign(static_cast<size_t>(n), -1);

    ClusterModel model;
    for (int iter = 0; iter < max_iterations; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int c = nearest_centroid(p.xs[static_cast<size_t>(i)], centroids);
            if (c != assign[static_cast<size_t>(i)]) {
                assign[static_cast<size_t>(i)] = c;
                changed = true;
            }
        }

        // Re-seed empty clusters from the farthest point before recomputing
        // means, so every cluster stays populated.
        std::vector<int> count(static_cast<size_t>(k), 0);
        for (int a : assign) ++count[static_cast<size_t>(a)];
        for (int c = 0; c < k; ++c) {
            if (count[static_cast<size_t>(c)] > 0) continue;
            int farthest = -1;
            double far_d = -1.0;
            for (int i = 0; i < n; ++i) {
                if (count[static_cast<size_t>(assign[static_cast<size_t>(i)])] <= 1) continue;
                double d = squared_distance(p.xs[static_cast<size_t>(i)],
                                            centroids[static_cast<size_t>(assign[static_cast<size_t>(i)])]);
                if (d > far_d) { far_d = d; farthest = i; }
            }
            if (farthest < 0) fail(ErrorCategory::invalid_k, "cannot repair empty cluster");
            --count[static_cast<size_t>(assign[static_cast<size_t>(farthest)])];
            assign[static_cast<size_t>(farthest)] = c;
            ++count[static_cast<size_t>(c)];
            centroids[static_cast<size_t>(c)] = p.xs[static_cast<size_t>(farthest)];
            changed = true;
        }

        // Mean update.
        for (auto& c : centroids) std::fill(c.begin(), c.end(), 0.0);
        for (int i = 0; i < n; ++i) {
            auto& c = centroids[static_cast<size_t>(assign[static_cast<size_t>(i)])];
            const auto& x = p.xs[static_cast<size_t>(i)];
            for (int d = 0; d < p.dim; ++d) c[static_cast<size_t>(d)] += x[static_cast<size_t>(d)];
        }
        for (int c = 0; c < k; ++c)
            for (double& v : centroids[static_cast<size_t>(c)])
                v /= static_cast<double>(count[static_cast<size_t>(c)]);

        model.inertia_per_iteration.push_back(compute_inertia(p, assign, centroids));
        if (!changed) break;
    }

    model.k = k;
    model.centroids = std::move(centroids);
    for (int i = 0; i < n; ++i)
        model.assignment[p.ids[static_cast<size_t>(i)]] = assign[static_cast<size_t>(i)];
    model.inertia = model.inertia_per_iteration.back();
    return model;
}

ElbowCurve elbow_scan(const EmbeddingTable& table, const ResponseMatrix& matrix,
                      const std::vector<ResponseKey>& keys, const std::vector<int>& k_values,
                      uint64_t seed) {
    if (k_values.empty()) fail(ErrorCategory::invalid_input, "elbow_scan needs at least one k");
    std::vector<int> ks = k_values;
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

    ElbowCurve curve;
    for (int k : ks) {
        ClusterModel model = kmeans(table.individual_vectors, k, mix_seed(seed, static_cast<uint64_t>(k)));
        EmbeddingTable substituted;
        substituted.dim = table.dim;
        substituted.question_vectors = table.question_vectors;
        for (const auto& [id, c] : model.assignment)
            substituted.individual_vectors[id] = model.centroids[static_cast<size_t>(c)];
        curve.entries.emplace_back(k, cf_loss(substituted, matrix, keys));
    }
    return curve;
}

int elbow_pick(const ElbowCurve& curve) {
    const auto& e = curve.entries;
    if (e.empty()) fail(ErrorCategory::invalid_input, "empty elbow curve");
    if (e.size() < 3) {
        // Too few points for curvature; take the k with the lowest loss.
        return std::min_element(e.begin(), e.end(),
                                [](auto& a, auto& b) { return a.second < b.second; })
            ->first;
    }

    double lo = e.front().second, hi = lo;
    for (const auto& [k, loss] : e) {
        lo = std::min(lo, loss);
        hi = std::max(hi, loss);
    }
    double y_range = hi - lo;
    if (y_range <= 0.0) return e.front().first;  // flat curve: smallest k
    double x_range = static_cast<double>(e.back().first - e.front().first);

    // Second divided difference of the normalized curve; the sharpest convex
    // bend wins, ties to the smaller k.
    int best_k = e[1].first;
    double best_curv = -std::numeric_limits<double>::infinity();
    for (size_t i = 1; i + 1 < e.size(); ++i) {
        double x0 = static_cast<double>(e[i - 1].first) / x_range;
        double x1 = static_cast<double>(e[i].first) / x_range;
        double x2 = static_cast<double>(e[i + 1].first) / x_range;
        double y0 = (e[i - 1].second - lo) / y_range;
        double y1 = (e[i].second - lo) / y_range;
        double y2 = (e[i + 1].second - lo) / y_range;
        double curv = 2.0 * ((y2 - y1) / (x2 - x1) - (y1 - y0) / (x1 - x0)) / (x2 - x0);
        if (curv > best_curv) {
            best_curv = curv;
            best_k = e[i].first;
        }
    }
    return best_k;
}

PersonaEmbedding demographic_embedding(const std::map<std::string, std::vector<double>>& embeddings,
                                       const std::vector<Individual>& individuals,
                                       const std::string& trait, const std::string& category) {
    PersonaEmbedding out;
    out.kind = PersonaKind::demographic;
    out.source_id = trait + "=" + category;
    int count = 0;
    for (const Individual& ind : individuals) {
        auto t = ind.demographics.find(trait);
        if (t == ind.demographics.end() || t->second != category) continue;
        auto e = embeddings.find(ind.id);
        if (e == embeddings.end()) continue;
        if (out.vector.empty()) out.vector.assign(e->second.size(), 0.0);
        if (out.vector.size() != e->second.size())
            fail(ErrorCategory::dimension, "inconsistent embedding lengths in demographic group");
        for (size_t d = 0; d < out.vector.size(); ++d) out.vector[d] += e->second[d];
        ++count;
    }
    if (count == 0)
        fail(ErrorCategory::empty_group,
             "no embedded individual carries " + trait + "=" + category);
    for (double& v : out.vector) v /= static_cast<double>(count);
    return out;
}

PersonaEmbedding cluster_embedding(const ClusterModel& model, const std::string& individual_id) {
    auto it = model.assignment.find(individual_id);
    if (it == model.assignment.end())
        fail(ErrorCategory::lookup, "individual '" + individual_id + "' not assigned in cluster model");
    PersonaEmbedding out;
    out.kind = PersonaKind::cluster;
    out.source_id = "cluster-" + std::to_string(it->second);
    out.vector = model.centroids[static_cast<size_t>(it->second)];
    return out;
}

void save_clusters(const std::string& path, const ClusterModel& model,
                   const std::string& dataset_hash) {
    ordered_json j;
    j["format"] = "clusters-v1";
    j["dataset_hash"] = dataset_hash;
    j["k"] = model.k;
    j["centroids"] = model.centroids;
    j["assignment"] = model.assignment;
    j["inertia"] = model.inertia;

    std::ofstream out(path);
    if (!out) fail(ErrorCategory::io, "cannot write " + path);
    out << j.dump() << "\n";
}

LoadedClusters load_clusters(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCategory::io, "cannot open cluster file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCategory::parse, path + ": " + e.what());
    }
    if (j.value("format", "") != "clusters-v1")
        fail(ErrorCategory::incompatibility, path + ": unsupported cluster format");
    LoadedClusters out;
    out.dataset_hash = j.value("dataset_hash", "");
    out.model.k = j.at("k").get<int>();
    out.model.centroids = j.at("centroids").get<std::vector<std::vector<double>>>();
    for (const auto& [id, c] : j.at("assignment").items())
        out.model.assignment[id] = c.get<int>();
    out.model.inertia = j.at("inertia").get<double>();
    return out;
}

void save_elbow_csv(const std::string& path, const ElbowCurve& curve) {
    std::ofstream out(path);
    if (!out) fail(ErrorCategory::io, "cannot write " + path);
    out << "k,substitution_loss\n";
    for (const auto& [k, loss] : curve.entries)
        out << k << "," << format_double(loss) << "\n";
}

}  // namespace steer
