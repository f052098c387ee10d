#pragma once

#include "steer/cf.hpp"

#include <map>
#include <string>
#include <vector>

namespace steer {

// K-means result over individual embeddings. Centroids satisfy the mean
// property exactly (final recompute) and every cluster is non-empty.
struct ClusterModel {
    int k = 0;
    std::vector<std::vector<double>> centroids;
    std::map<std::string, int> assignment;  // individual id -> cluster index
    double inertia = 0.0;
    std::vector<double> inertia_per_iteration;  // diagnostics; non-increasing
};

struct ElbowCurve {
    // (k, substitution loss): Eq-style CF loss with each individual vector
    // replaced by its cluster centroid. k strictly increasing.
    std::vector<std::pair<int, double>> entries;
};

enum class PersonaKind { individual, cluster, demographic };

struct PersonaEmbedding {
    std::vector<double> vector;
    PersonaKind kind = PersonaKind::individual;
    std::string source_id;
};

// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded from
// the point farthest from its centroid. Pure function of (embeddings, k, seed).
ClusterModel kmeans(const std::map<std::string, std::vector<double>>& embeddings, int k,
                    uint64_t seed, int max_iterations = 300);

// For each k: cluster, substitute centroids for individual vectors, and score
// cf_loss over `keys`. Used to pick k by the elbow heuristic.
ElbowCurve elbow_scan(const EmbeddingTable& table, const ResponseMatrix& matrix,
                      const std::vector<ResponseKey>& keys, const std::vector<int>& k_values,
                      uint64_t seed);

// Maximum-discrete-curvature pick on the (k, loss) curve; the aid the CLI
// offers before the user overrides k.
int elbow_pick(const ElbowCurve& curve);

// Mean embedding over individuals carrying (trait, category).
PersonaEmbedding demographic_embedding(const std::map<std::string, std::vector<double>>& embeddings,
                                       const std::vector<Individual>& individuals,
                                       const std::string& trait, const std::string& category);

// Centroid of the cluster the individual is assigned to.
PersonaEmbedding cluster_embedding(const ClusterModel& model, const std::string& individual_id);

void save_clusters(const std::string& path, const ClusterModel& model,
                   const std::string& dataset_hash);
struct LoadedClusters {
    ClusterModel model;
    std::string dataset_hash;
};
LoadedClusters load_clusters(const std::string& path);

void save_elbow_csv(const std::string& path, const ElbowCurve& curve);

}  // namespace steer
