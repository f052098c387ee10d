#include "steer/persona.hpp"

#include <filesystem>
#include <random>

#include "doctest.h"
#include "oracles.hpp"

using namespace steer;

namespace {

std::map<std::string, std::vector<double>> blob_points(int per_cluster,
                                                       const std::vector<std::vector<double>>& centers,
                                                       double spread, uint64_t seed,
                                                       std::vector<int>* labels = nullptr) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, spread);
    std::map<std::string, std::vector<double>> points;
    int n = 0;
    for (size_t c = 0; c < centers.size(); ++c)
        for (int i = 0; i < per_cluster; ++i) {
            std::vector<double> p = centers[c];
            for (double& x : p) x += g(rng);
            char buf[16];
            std::snprintf(buf, sizeof(buf), "p%03d", n++);
            points[buf] = p;
            if (labels) labels->push_back(static_cast<int>(c));
        }
    return points;
}

}  // namespace

TEST_CASE("kmeans with k=1 returns the global mean") {
    auto points = blob_points(6, {{0.0, 0.0}}, 1.0, 5);
    ClusterModel model = kmeans(points, 1, 17);
    std::vector<double> mean(2, 0.0);
    for (const auto& [id, p] : points)
        for (size_t d = 0; d < 2; ++d) mean[d] += p[d] / static_cast<double>(points.size());
    CHECK(model.centroids[0][0] == doctest::Approx(mean[0]).epsilon(1e-12));
    CHECK(model.centroids[0][1] == doctest::Approx(mean[1]).epsilon(1e-12));

    double variance_cost = 0.0;
    for (const auto& [id, p] : points) variance_cost += squared_distance(p, mean);
    CHECK(model.inertia == doctest::Approx(variance_cost).epsilon(1e-12));
}

TEST_CASE("kmeans recovers well-separated planted blobs") {
    std::vector<int> labels;
    auto points = blob_points(15, {{0, 0, 0}, {10, 0, 0}, {0, 10, 0}}, 0.3, 6, &labels);
    ClusterModel model = kmeans(points, 3, 23);
    std::vector<int> found;
    for (const auto& [id, p] : points) found.push_back(model.assignment.at(id));
    CHECK(oracle::adjusted_rand(labels, found) == doctest::Approx(1.0));
}

TEST_CASE("kmeans matches the exhaustive optimum on 4 points") {
    std::map<std::string, std::vector<double>> points = {
        {"a", {0.0, 0.0}}, {"b", {0.2, 0.1}}, {"c", {4.0, 4.0}}, {"d", {4.4, 3.9}}};
    std::vector<std::vector<double>> raw;
    for (const auto& [id, p] : points) raw.push_back(p);
    double best = oracle::exhaustive_kmeans_cost(raw, 2);
    ClusterModel model = kmeans(points, 2, 3);
    CHECK(model.inertia == doctest::Approx(best).epsilon(1e-9));
}

TEST_CASE("kmeans invariants") {
    std::vector<int> labels;
    auto points = blob_points(10, {{0, 0}, {6, 6}, {-6, 6}}, 1.0, 7, &labels);
    ClusterModel model = kmeans(points, 3, 11);

    SUBCASE("centroids equal member means") {
        std::vector<std::vector<double>> sums(3, std::vector<double>(2, 0.0));
        std::vector<int> counts(3, 0);
        for (const auto& [id, c] : model.assignment) {
            const auto& p = points.at(id);
            for (size_t d = 0; d < 2; ++d) sums[static_cast<size_t>(c)][d] += p[d];
            ++counts[static_cast<size_t>(c)];
        }
        for (int c = 0; c < 3; ++c) {
            CHECK(counts[static_cast<size_t>(c)] > 0);
            for (size_t d = 0; d < 2; ++d)
                CHECK(std::abs(model.centroids[static_cast<size_t>(c)][d] -
                               sums[static_cast<size_t>(c)][d] / counts[static_cast<size_t>(c)]) <=
                      1e-9);
        }
    }
    SUBCASE("inertia non-increasing across iterations") {
        for (size_t i = 1; i < model.inertia_per_iteration.size(); ++i)
            CHECK(model.inertia_per_iteration[i] <= model.inertia_per_iteration[i - 1] + 1e-12);
    }
    SUBCASE("pure function of (embeddings, k, seed)") {
        ClusterModel again = kmeans(points, 3, 11);
        CHECK(again.assignment == model.assignment);
        CHECK(again.centroids == model.centroids);
        CHECK(again.inertia == model.inertia);
    }
}

TEST_CASE("kmeans handles duplicate points via empty-cluster repair") {
    std::map<std::string, std::vector<double>> points = {
        {"a", {1.0, 1.0}}, {"b", {1.0, 1.0}}, {"c", {5.0, 5.0}}};
    ClusterModel model = kmeans(points, 3, 2);
    std::vector<int> counts(3, 0);
    for (const auto& [id, c] : model.assignment) ++counts[static_cast<size_t>(c)];
    for (int c = 0; c < 3; ++c) CHECK(counts[static_cast<size_t>(c)] == 1);
    CHECK(model.inertia == doctest::Approx(0.0));
}

TEST_CASE("kmeans rejects invalid k") {
    auto points = blob_points(4, {{0, 0}}, 1.0, 9);
    try {
        kmeans(points, 5, 1);
        FAIL("expected invalid-k error");
    } catch (const SteerError& e) {
        CHECK(e.category() == ErrorCategory::invalid_k);
    }
    CHECK_THROWS_AS(kmeans(points, 0, 1), SteerError);
}

TEST_CASE("elbow substitution loss at k=n equals the raw loss") {
    std::mt19937_64 rng(12);
    ResponseMatrix m = oracle::random_matrix(rng, 8, 5, 1.0);
    CfConfig cfg;
    cfg.dim = 3;
    cfg.epochs = 30;
    cfg.batch_size = 8;
    cfg.seed = 4;
    CfResult cf = train_cf(m, m.all_keys(), cfg);
    auto keys = m.all_keys();

    ElbowCurve curve = elbow_scan(cf.table, m, keys, {2, 8}, 19);
    double raw = cf_loss(cf.table, m, keys);
    CHECK(curve.entries.back().first == 8);
    CHECK(curve.entries.back().second == doctest::Approx(raw).epsilon(1e-12));
    // k column strictly increasing
    for (size_t i = 1; i < curve.entries.size(); ++i)
        CHECK(curve.entries[i].first > curve.entries[i - 1].first);
}

TEST_CASE("elbow pick finds the sharpest bend") {
    ElbowCurve curve;
    curve.entries = {{2, 1.00}, {3, 0.80}, {4, 0.10}, {5, 0.08}, {6, 0.07}};
    CHECK(elbow_pick(curve) == 4);

    ElbowCurve flat;
    flat.entries = {{2, 0.5}, {3, 0.5}, {4, 0.5}};
    CHECK(elbow_pick(flat) == 2);

    ElbowCurve two;
    two.entries = {{2, 0.9}, {5, 0.3}};
    CHECK(elbow_pick(two) == 5);
}

TEST_CASE("demographic_embedding") {
    std::vector<Individual> individuals(3);
    individuals[0].id = "a";
    individuals[0].demographics = {{"party", "left"}};
    individuals[1].id = "b";
    individuals[1].demographics = {{"party", "right"}};
    individuals[2].id = "c";
    individuals[2].demographics = {{"party", "right"}};
    std::map<std::string, std::vector<double>> vectors = {
        {"a", {2.0, -1.0}}, {"b", {1.0, 3.0}}, {"c", {-1.0, -3.0}}};

    SUBCASE("singleton group returns that vector") {
        PersonaEmbedding p = demographic_embedding(vectors, individuals, "party", "left");
        CHECK(p.vector == std::vector<double>{2.0, -1.0});
        CHECK(p.kind == PersonaKind::demographic);
    }
    SUBCASE("opposite vectors average to zero") {
        PersonaEmbedding p = demographic_embedding(vectors, individuals, "party", "right");
        CHECK(p.vector[0] == doctest::Approx(0.0));
        CHECK(p.vector[1] == doctest::Approx(0.0));
    }
    SUBCASE("empty group") {
        try {
            demographic_embedding(vectors, individuals, "party", "center");
            FAIL("expected empty-group error");
        } catch (const SteerError& e) {
            CHECK(e.category() == ErrorCategory::empty_group);
        }
    }
}

TEST_CASE("cluster_embedding") {
    std::vector<int> labels;
    auto points = blob_points(8, {{0, 0}, {9, 9}, {-9, 9}}, 0.4, 13, &labels);
    ClusterModel model = kmeans(points, 3, 29);

    SUBCASE("returns the centroid of the assigned cluster") {
        for (const auto& [id, c] : model.assignment) {
            PersonaEmbedding p = cluster_embedding(model, id);
            CHECK(p.vector == model.centroids[static_cast<size_t>(c)]);
            CHECK(p.kind == PersonaKind::cluster);
        }
    }
    SUBCASE("same blob, same embedding") {
        // p000..p007 are the first blob by construction.
        PersonaEmbedding a = cluster_embedding(model, "p000");
        PersonaEmbedding b = cluster_embedding(model, "p003");
        CHECK(a.vector == b.vector);
    }
    SUBCASE("unknown id") {
        try {
            cluster_embedding(model, "nope");
            FAIL("expected lookup error");
        } catch (const SteerError& e) {
            CHECK(e.category() == ErrorCategory::lookup);
        }
    }
    SUBCASE("k=1 maps everyone to the global mean") {
        ClusterModel one = kmeans(points, 1, 29);
        PersonaEmbedding p = cluster_embedding(one, "p001");
        CHECK(p.vector == one.centroids[0]);
    }
}

TEST_CASE("cluster persistence round trip") {
    auto points = blob_points(5, {{0, 0}, {4, 4}}, 0.5, 15);
    ClusterModel model = kmeans(points, 2, 33);
    auto path = (std::filesystem::temp_directory_path() / "steer-clusters-roundtrip.json").string();
    save_clusters(path, model, "dh");
    LoadedClusters loaded = load_clusters(path);
    CHECK(loaded.model.k == model.k);
    CHECK(loaded.model.centroids == model.centroids);
    CHECK(loaded.model.assignment == model.assignment);
    CHECK(loaded.model.inertia == model.inertia);
    CHECK(loaded.dataset_hash == "dh");
    std::filesystem::remove(path);
}
