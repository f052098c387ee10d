#include "steer/analytics.hpp"

#include <random>

#include "doctest.h"
#include "oracles.hpp"

using namespace steer;

namespace {

ResponseDistribution dist_of(const std::string& qid, std::vector<double> probs) {
    ResponseDistribution d;
    d.question_id = qid;
    d.probabilities = std::move(probs);
    d.support_count = 100;
    return d;
}

// Cluster model over explicit member lists (no geometry needed).
ClusterModel manual_clusters(const std::vector<std::vector<std::string>>& groups) {
    ClusterModel model;
    model.k = static_cast<int>(groups.size());
    model.centroids.assign(groups.size(), {0.0});
    for (size_t c = 0; c < groups.size(); ++c)
        for (const std::string& id : groups[c]) model.assignment[id] = static_cast<int>(c);
    return model;
}

}  // namespace

TEST_CASE("response_distribution basics") {
    ResponseMatrix m = oracle::make_matrix(
        {{"q0", 4}, {"q1", 2}}, {"a", "b"},
        {{"a", "q0", 2}, {"a", "q1", 0}, {"b", "q1", 1}});

    SUBCASE("point mass") {
        ResponseDistribution d = response_distribution(m, "q0", {"a"});
        CHECK(d.probabilities == std::vector<double>{0, 0, 1, 0});
        CHECK(d.support_count == 1);
    }
    SUBCASE("even split") {
        ResponseDistribution d = response_distribution(m, "q1", {"a", "b"});
        CHECK(d.probabilities == std::vector<double>{0.5, 0.5});
        CHECK(d.support_count == 2);
    }
    SUBCASE("zero answers") {
        try {
            response_distribution(m, "q0", {"b"});
            FAIL("expected empty-support error");
        } catch (const SteerError& e) {
            CHECK(e.category() == ErrorCategory::empty_support);
        }
    }
}

TEST_CASE("response_distribution matches a manual tally on random fixtures") {
    std::mt19937_64 rng(71);
    for (int trial = 0; trial < 20; ++trial) {
        ResponseMatrix m = oracle::random_matrix(rng, 8, 5, 0.9);
        std::vector<std::string> members;
        std::vector<int> member_idx;
        for (const Individual& ind : m.individuals()) {
            members.push_back(ind.id);
            member_idx.push_back(m.individual_index(ind.id));
        }
        for (const Question& q : m.questions()) {
            bool answered = false;
            for (int i : member_idx) answered = answered || m.has({i, m.question_index(q.id)});
            if (!answered) continue;
            ResponseDistribution d = response_distribution(m, q.id, members);
            auto brute = oracle::brute_distribution(m, m.question_index(q.id), member_idx);
            REQUIRE(d.probabilities.size() == brute.size());
            double sum = 0.0;
            for (size_t o = 0; o < brute.size(); ++o) {
                CHECK(std::abs(d.probabilities[o] - brute[o]) <= 1e-12);
                sum += d.probabilities[o];
            }
            CHECK(std::abs(sum - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("total_variation examples and properties") {
    CHECK(total_variation(dist_of("q", {0.3, 0.7}), dist_of("q", {0.3, 0.7})) == doctest::Approx(0.0));
    CHECK(total_variation(dist_of("q", {1, 0}), dist_of("q", {0, 1})) == doctest::Approx(1.0));
    CHECK(total_variation(dist_of("q", {0.2, 0.8}), dist_of("q", {0.5, 0.5})) ==
          doctest::Approx(0.3));

    CHECK_THROWS_AS(total_variation(dist_of("q", {1, 0}), dist_of("q", {1, 0, 0})), SteerError);
    CHECK_THROWS_AS(total_variation(dist_of("q1", {1, 0}), dist_of("q2", {1, 0})), SteerError);

    // Symmetry and triangle inequality on random triples.
    std::mt19937_64 rng(72);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        auto random_dist = [&]() {
            std::vector<double> p(4);
            double s = 0;
            for (double& x : p) {
                x = unit(rng);
                s += x;
            }
            for (double& x : p) x /= s;
            return dist_of("q", p);
        };
        ResponseDistribution p = random_dist(), q = random_dist(), r = random_dist();
        CHECK(total_variation(p, q) == doctest::Approx(total_variation(q, p)));
        CHECK(total_variation(p, p) == doctest::Approx(0.0));
        CHECK(total_variation(p, r) <= total_variation(p, q) + total_variation(q, r) + 1e-12);
        CHECK(total_variation(p, q) >= 0.0);
        CHECK(total_variation(p, q) <= 1.0);
    }
}

TEST_CASE("tv_ave examples") {
    SUBCASE("identical clusters") {
        std::vector<ResponseDistribution> ds(4, dist_of("q", {0.25, 0.75}));
        CHECK(tv_ave(ds) == doctest::Approx(0.0));
    }
    SUBCASE("two clusters reduce to plain TV") {
        auto a = dist_of("q", {0.2, 0.8}), b = dist_of("q", {0.6, 0.4});
        CHECK(tv_ave({a, b}) == doctest::Approx(total_variation(a, b)));
    }
    SUBCASE("three clusters with pairwise TVs 0.1, 0.3, 0.2") {
        // Two-option distributions: TV = |p1 - q1|.
        auto a = dist_of("q", {0.0, 1.0});
        auto b = dist_of("q", {0.1, 0.9});
        auto c = dist_of("q", {0.3, 0.7});
        CHECK(tv_ave({a, b, c}) == doctest::Approx(0.2));
    }
    SUBCASE("fewer than two clusters") {
        try {
            tv_ave({dist_of("q", {1.0, 0.0})});
            FAIL("expected invalid-input error");
        } catch (const SteerError& e) {
            CHECK(e.category() == ErrorCategory::invalid_input);
        }
    }
    SUBCASE("permutation invariance") {
        std::vector<ResponseDistribution> ds = {dist_of("q", {0.1, 0.9}), dist_of("q", {0.5, 0.5}),
                                                dist_of("q", {0.8, 0.2})};
        double base = tv_ave(ds);
        std::vector<ResponseDistribution> shuffled = {ds[2], ds[0], ds[1]};
        CHECK(tv_ave(shuffled) == doctest::Approx(base));
        CHECK(base >= 0.0);
        CHECK(base <= 1.0);
    }
}

TEST_CASE("top disagreement vs population") {
    SUBCASE("cluster equal to population scores zero everywhere") {
        std::mt19937_64 rng(73);
        ResponseMatrix m = oracle::random_matrix(rng, 6, 5, 1.0);
        std::vector<std::string> ids;
        for (const Individual& ind : m.individuals()) ids.push_back(ind.id);
        ClusterModel model = manual_clusters({ids});
        DisagreementReport report = top_disagreement_vs_population(m, model, 0, 10, 1);
        for (const DisagreementRow& row : report.rows) CHECK(row.score == doctest::Approx(0.0));
    }

    SUBCASE("a flipped unanimous answer ranks first with TV 1") {
        // Population answers option 0 everywhere except the cluster flips qX.
        std::vector<std::tuple<std::string, std::string, int>> responses;
        std::vector<std::string> ids;
        for (int i = 0; i < 6; ++i) {
            std::string id = "i" + std::to_string(i);
            ids.push_back(id);
            responses.emplace_back(id, "qX", i < 3 ? 1 : 0);
            responses.emplace_back(id, "qY", 0);
        }
        ResponseMatrix m =
            oracle::make_matrix({{"qX", 2}, {"qY", 2}}, ids, responses);
        ClusterModel model = manual_clusters({{"i0", "i1", "i2"}, {"i3", "i4", "i5"}});
        DisagreementReport report = top_disagreement_vs_population(m, model, 0, 10, 1);
        REQUIRE(report.rows.size() == 2);
        CHECK(report.rows[0].question_id == "qX");
        CHECK(report.rows[0].score == doctest::Approx(0.5));  // cluster [0,1] vs population [0.5,0.5]
        CHECK(report.rows[1].score == doctest::Approx(0.0));
        CHECK(report.rows[0].modal_answers[0].group == "cluster-0");
        CHECK(report.rows[0].modal_answers[0].option_index == 1);
        CHECK(report.rows[0].modal_answers[1].group == "population");
    }

    SUBCASE("top_n beyond the question count returns everything") {
        std::mt19937_64 rng(74);
        ResponseMatrix m = oracle::random_matrix(rng, 5, 4, 1.0);
        std::vector<std::string> ids;
        for (const Individual& ind : m.individuals()) ids.push_back(ind.id);
        ClusterModel model = manual_clusters({ids});
        DisagreementReport report = top_disagreement_vs_population(m, model, 0, 999, 1);
        CHECK(report.rows.size() == m.questions().size());
    }

    SUBCASE("support threshold excludes thin questions") {
        ResponseMatrix m = oracle::make_matrix({{"q0", 2}}, {"a", "b"},
                                               {{"a", "q0", 0}, {"b", "q0", 1}});
        ClusterModel model = manual_clusters({{"a"}, {"b"}});
        DisagreementReport report = top_disagreement_vs_population(m, model, 0, 10, 20);
        CHECK(report.rows.empty());
    }
}

TEST_CASE("top disagreement between clusters") {
    SUBCASE("opposite unanimous answers score 1 and rank first") {
        std::vector<std::tuple<std::string, std::string, int>> responses;
        std::vector<std::string> ids;
        for (int i = 0; i < 6; ++i) {
            std::string id = "i" + std::to_string(i);
            ids.push_back(id);
            responses.emplace_back(id, "qX", i < 3 ? 0 : 1);  // opposed
            responses.emplace_back(id, "qY", 1);              // unanimous
        }
        ResponseMatrix m = oracle::make_matrix({{"qX", 2}, {"qY", 3}}, ids, responses);
        ClusterModel model = manual_clusters({{"i0", "i1", "i2"}, {"i3", "i4", "i5"}});
        DisagreementReport report = top_disagreement_between_clusters(m, model, 10, std::nullopt, 1);
        REQUIRE(report.rows.size() == 2);
        CHECK(report.rows[0].question_id == "qX");
        CHECK(report.rows[0].score == doctest::Approx(1.0));
        CHECK(report.rows[1].score == doctest::Approx(0.0));
        CHECK(report.rows[0].modal_answers.size() == 2);
    }

    SUBCASE("topic filter restricts the report") {
        std::vector<Question> questions(2);
        questions[0].id = "qa";
        questions[0].topic = "immigration";
        questions[0].options = {"o0", "o1"};
        questions[1].id = "qb";
        questions[1].topic = "economy";
        questions[1].options = {"o0", "o1"};
        std::vector<Individual> individuals(2);
        individuals[0].id = "a";
        individuals[1].id = "b";
        ResponseMatrix m = ResponseMatrix::build(
            questions, individuals,
            {{"a", "qa", 0}, {"b", "qa", 1}, {"a", "qb", 0}, {"b", "qb", 1}});
        ClusterModel model = manual_clusters({{"a"}, {"b"}});
        DisagreementReport report =
            top_disagreement_between_clusters(m, model, 10, std::string("immigration"), 1);
        REQUIRE(report.rows.size() == 1);
        CHECK(report.rows[0].question_id == "qa");
    }

    SUBCASE("tv_ave scores match the brute-force oracle") {
        std::mt19937_64 rng(75);
        ResponseMatrix m = oracle::random_matrix(rng, 9, 6, 1.0);
        std::vector<std::vector<std::string>> groups(3);
        std::vector<std::vector<int>> group_idx(3);
        for (size_t i = 0; i < m.individuals().size(); ++i) {
            groups[i % 3].push_back(m.individuals()[i].id);
            group_idx[i % 3].push_back(static_cast<int>(i));
        }
        ClusterModel model = manual_clusters(groups);
        DisagreementReport report = top_disagreement_between_clusters(m, model, 999, std::nullopt, 1);
        for (const DisagreementRow& row : report.rows) {
            int q = m.question_index(row.question_id);
            std::vector<std::vector<double>> dists;
            for (int c = 0; c < 3; ++c)
                dists.push_back(oracle::brute_distribution(m, q, group_idx[static_cast<size_t>(c)]));
            CHECK(std::abs(row.score - oracle::brute_tv_ave(dists)) <= 1e-12);
        }
        // Deterministic total order: score desc, id asc.
        for (size_t i = 1; i < report.rows.size(); ++i) {
            const auto& prev = report.rows[i - 1];
            const auto& cur = report.rows[i];
            CHECK((prev.score > cur.score ||
                   (prev.score == cur.score && prev.question_id < cur.question_id)));
        }
    }
}

TEST_CASE("demographic_composition") {
    std::vector<Individual> individuals(4);
    for (int i = 0; i < 4; ++i) individuals[static_cast<size_t>(i)].id = "i" + std::to_string(i);
    individuals[0].demographics = {{"color", "A"}};
    individuals[1].demographics = {{"color", "A"}};
    individuals[2].demographics = {{"color", "A"}};
    individuals[3].demographics = {{"color", "B"}};

    SUBCASE("counting") {
        ClusterModel model = manual_clusters({{"i0", "i1", "i2", "i3"}});
        DemographicComposition table = demographic_composition(individuals, model, "color");
        REQUIRE(table.categories == std::vector<std::string>{"A", "B"});
        REQUIRE(table.rows.size() == 2);  // one cluster + population
        CHECK(table.rows[0].frequencies[0] == doctest::Approx(0.75));
        CHECK(table.rows[0].frequencies[1] == doctest::Approx(0.25));
        // single cluster equals the population row
        CHECK(table.rows[0].frequencies == table.rows[1].frequencies);
    }
    SUBCASE("unknown trait") {
        ClusterModel model = manual_clusters({{"i0", "i1", "i2", "i3"}});
        try {
            demographic_composition(individuals, model, "height");
            FAIL("expected lookup error");
        } catch (const SteerError& e) {
            CHECK(e.category() == ErrorCategory::lookup);
        }
    }
    SUBCASE("rows with support sum to one on random fixtures") {
        std::mt19937_64 rng(76);
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<Individual> inds(12);
            std::vector<std::vector<std::string>> groups(3);
            std::uniform_int_distribution<int> cat(0, 3);
            for (int i = 0; i < 12; ++i) {
                inds[static_cast<size_t>(i)].id = "p" + std::to_string(i);
                if (cat(rng) > 0)  // some individuals lack the trait
                    inds[static_cast<size_t>(i)].demographics["g"] =
                        "c" + std::to_string(cat(rng));
                groups[static_cast<size_t>(i % 3)].push_back(inds[static_cast<size_t>(i)].id);
            }
            bool any = false;
            for (const Individual& ind : inds) any = any || ind.demographics.count("g");
            if (!any) continue;
            ClusterModel model = manual_clusters(groups);
            DemographicComposition table = demographic_composition(inds, model, "g");
            for (const CompositionRow& row : table.rows) {
                if (row.support_count == 0) continue;
                double sum = 0.0;
                for (double f : row.frequencies) sum += f;
                CHECK(std::abs(sum - 1.0) <= 1e-9);
            }
        }
    }
}
