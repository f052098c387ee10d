#include "steer/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "oracles.hpp"

using namespace steer;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("steer-test-" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

}  // namespace

TEST_CASE("map_ordinal spacing") {
    CHECK(map_ordinal(0, 3) == doctest::Approx(0.0));
    CHECK(map_ordinal(1, 3) == doctest::Approx(0.5));
    CHECK(map_ordinal(2, 3) == doctest::Approx(1.0));
    CHECK(map_ordinal(0, 2) == doctest::Approx(0.0));
    CHECK(map_ordinal(1, 2) == doctest::Approx(1.0));
    CHECK(map_ordinal(1, 5) == doctest::Approx(0.25));
    CHECK(map_ordinal(3, 5) == doctest::Approx(0.75));
}

TEST_CASE("map_ordinal errors") {
    CHECK_THROWS_AS(map_ordinal(0, 1), SteerError);
    CHECK_THROWS_AS(map_ordinal(3, 3), SteerError);
    CHECK_THROWS_AS(map_ordinal(-1, 3), SteerError);
    try {
        map_ordinal(0, 1);
    } catch (const SteerError& e) {
        CHECK(e.category() == ErrorCategory::invalid_question);
    }
    try {
        map_ordinal(4, 4);
    } catch (const SteerError& e) {
        CHECK(e.category() == ErrorCategory::invalid_response);
    }
}

TEST_CASE("nearest_option inverts map_ordinal") {
    for (int m = 2; m <= 7; ++m)
        for (int i = 0; i < m; ++i) CHECK(nearest_option(map_ordinal(i, m), m) == i);
    CHECK(nearest_option(-0.4, 4) == 0);
    CHECK(nearest_option(1.7, 4) == 3);
}

TEST_CASE("stored values equal option_index/(m-1) exactly") {
    std::mt19937_64 rng(11);
    ResponseMatrix m = oracle::random_matrix(rng, 8, 6);
    for (const Response& r : m.responses()) {
        int opts = m.question(r.key.question).option_count();
        CHECK(r.value == static_cast<double>(r.option_index) / (opts - 1));
    }
}

TEST_CASE("load_dataset happy path and null handling") {
    TempDir dir;
    write_file(dir.file("q.jsonl"),
               R"({"id":"q1","text":"first","topic":"a","options":["no","yes"]})"
               "\n"
               R"({"id":"q2","text":"second","topic":"b","options":["low","mid","high"]})"
               "\n");
    write_file(dir.file("d.csv"), "individual_id,trait,category\nA,party,left\nB,party,right\n");

    SUBCASE("full matrix") {
        write_file(dir.file("r.csv"),
                   "individual_id,question_id,option_index\nA,q1,0\nA,q2,2\nB,q1,1\nB,q2,1\n");
        ResponseMatrix m = load_dataset(dir.file("q.jsonl"), dir.file("r.csv"), dir.file("d.csv"));
        CHECK(m.response_count() == 4);
        CHECK(m.individuals().size() == 2);
        CHECK(m.questions().size() == 2);
        int a = m.individual_index("A"), q2 = m.question_index("q2");
        CHECK(m.value({a, q2}) == doctest::Approx(1.0));
        CHECK(m.individual(a).demographics.at("party") == "left");
    }

    SUBCASE("skipped response stays null") {
        write_file(dir.file("r.csv"),
                   "individual_id,question_id,option_index\nA,q1,0\nB,q1,1\nB,q2,1\n");
        ResponseMatrix m = load_dataset(dir.file("q.jsonl"), dir.file("r.csv"), dir.file("d.csv"));
        CHECK(m.response_count() == 3);
        CHECK_FALSE(m.has({m.individual_index("A"), m.question_index("q2")}));
    }

    SUBCASE("unknown question id") {
        write_file(dir.file("r.csv"), "individual_id,question_id,option_index\nA,q9,0\n");
        try {
            load_dataset(dir.file("q.jsonl"), dir.file("r.csv"), dir.file("d.csv"));
            FAIL("expected referential-integrity error");
        } catch (const SteerError& e) {
            CHECK(e.category() == ErrorCategory::referential_integrity);
        }
    }

    SUBCASE("malformed row reports the line") {
        write_file(dir.file("r.csv"), "individual_id,question_id,option_index\nA,q1,zero\n");
        try {
            load_dataset(dir.file("q.jsonl"), dir.file("r.csv"), dir.file("d.csv"));
            FAIL("expected parse error");
        } catch (const SteerError& e) {
            CHECK(e.category() == ErrorCategory::parse);
            CHECK(std::string(e.what()).find(":2") != std::string::npos);
        }
    }

    SUBCASE("duplicate response") {
        write_file(dir.file("r.csv"),
                   "individual_id,question_id,option_index\nA,q1,0\nA,q1,1\n");
        try {
            load_dataset(dir.file("q.jsonl"), dir.file("r.csv"), dir.file("d.csv"));
            FAIL("expected duplicate-response error");
        } catch (const SteerError& e) {
            CHECK(e.category() == ErrorCategory::duplicate_response);
        }
    }
}

TEST_CASE("refusal options are dropped and indices remapped") {
    TempDir dir;
    write_file(dir.file("q.jsonl"),
               R"({"id":"q1","text":"t","topic":"a","options":["agree","Refused","disagree"]})"
               "\n");
    write_file(dir.file("d.csv"), "individual_id,trait,category\n");
    write_file(dir.file("r.csv"),
               "individual_id,question_id,option_index\nA,q1,0\nB,q1,1\nC,q1,2\n");
    ResponseMatrix m = load_dataset(dir.file("q.jsonl"), dir.file("r.csv"), dir.file("d.csv"));

    // B chose the refusal, so that response became null; C's index shifted.
    CHECK(m.question(0).option_count() == 2);
    CHECK(m.response_count() == 2);
    CHECK(m.option_index({m.individual_index("C"), 0}) == 1);
    CHECK(m.value({m.individual_index("C"), 0}) == doctest::Approx(1.0));
    // B still exists as an individual (it appeared in the responses file).
    CHECK(m.individual_index("B") >= 0);
}

TEST_CASE("dataset file round trip") {
    std::mt19937_64 rng(3);
    ResponseMatrix m = oracle::random_matrix(rng, 6, 5);
    TempDir dir;
    save_dataset_files(m, dir.file("q.jsonl"), dir.file("r.csv"), dir.file("d.csv"));
    ResponseMatrix loaded =
        load_dataset(dir.file("q.jsonl"), dir.file("r.csv"), dir.file("d.csv"));
    REQUIRE(loaded.response_count() == m.response_count());
    for (const Response& r : m.responses()) {
        ResponseKey key{loaded.individual_index(m.individual(r.key.individual).id),
                        loaded.question_index(m.question(r.key.question).id)};
        CHECK(loaded.option_index(key) == r.option_index);
    }
}

TEST_CASE("four_way_split partition sizes") {
    std::mt19937_64 rng(5);
    ResponseMatrix m = oracle::random_matrix(rng, 10, 6, 1.0);
    FourWaySplit split = four_way_split(m, SplitSpec{42, 0.8, 0.8});
    CHECK(split.p_tr.size() == 8);
    CHECK(split.p_val.size() == 2);
}

TEST_CASE("four_way_split determinism") {
    std::mt19937_64 rng(6);
    ResponseMatrix m = oracle::random_matrix(rng, 12, 8);
    FourWaySplit a = four_way_split(m, SplitSpec{9, 0.8, 0.8});
    FourWaySplit b = four_way_split(m, SplitSpec{9, 0.8, 0.8});
    CHECK(a.p_tr == b.p_tr);
    CHECK(a.r_tr_tr == b.r_tr_tr);
    CHECK(a.r_tr_val == b.r_tr_val);
    CHECK(a.r_val_tr == b.r_val_tr);
    CHECK(a.r_val_val == b.r_val_val);
}

TEST_CASE("four_way_split partition property on a 50-individual fixture") {
    SyntheticSpec spec;
    spec.n_individuals = 50;
    spec.n_questions = 12;
    spec.n_latent_clusters = 3;
    spec.noise = 0.1;
    spec.seed = 77;
    ResponseMatrix m = generate_synthetic(spec).matrix;
    FourWaySplit split = four_way_split(m, SplitSpec{123, 0.8, 0.8});

    // Exhaustive check: the four sets partition all keys.
    std::set<ResponseKey> seen;
    size_t total = 0;
    for (const auto* part : {&split.r_tr_tr, &split.r_tr_val, &split.r_val_tr, &split.r_val_val}) {
        for (ResponseKey key : *part) {
            CHECK(seen.insert(key).second);  // pairwise disjoint
            ++total;
        }
    }
    CHECK(total == m.response_count());
    for (ResponseKey key : m.all_keys()) CHECK(seen.count(key) == 1);

    // Keys respect the individual partition.
    std::set<int> tr(split.p_tr.begin(), split.p_tr.end());
    for (ResponseKey key : split.r_tr_tr) CHECK(tr.count(key.individual) == 1);
    for (ResponseKey key : split.r_tr_val) CHECK(tr.count(key.individual) == 1);
    for (ResponseKey key : split.r_val_tr) CHECK(tr.count(key.individual) == 0);
    for (ResponseKey key : split.r_val_val) CHECK(tr.count(key.individual) == 0);
}

TEST_CASE("four_way_split degenerate cases") {
    std::mt19937_64 rng(8);
    ResponseMatrix one = oracle::random_matrix(rng, 1, 4, 1.0);
    try {
        four_way_split(one, SplitSpec{1, 0.8, 0.8});
        FAIL("expected degenerate-split error");
    } catch (const SteerError& e) {
        CHECK(e.category() == ErrorCategory::degenerate_split);
    }
    CHECK_THROWS_AS(four_way_split(one, SplitSpec{1, 1.0, 0.8}), SteerError);
}

TEST_CASE("split file round trip") {
    std::mt19937_64 rng(10);
    ResponseMatrix m = oracle::random_matrix(rng, 9, 5);
    FourWaySplit split = four_way_split(m, SplitSpec{4, 0.8, 0.8});
    TempDir dir;
    save_split(dir.file("split.json"), split, SplitSpec{4, 0.8, 0.8}, m, "hash");
    LoadedSplit loaded = load_split(dir.file("split.json"), m);
    CHECK(loaded.split.p_tr == split.p_tr);
    CHECK(loaded.split.r_tr_tr == split.r_tr_tr);
    CHECK(loaded.split.r_val_val == split.r_val_val);
    CHECK(loaded.spec.seed == 4);
    CHECK(loaded.dataset_hash == "hash");
}

TEST_CASE("generate_synthetic zero-noise degenerate case") {
    SyntheticSpec spec;
    spec.n_individuals = 12;
    spec.n_questions = 8;
    spec.n_latent_clusters = 1;
    spec.noise = 0.0;
    spec.seed = 2;
    SyntheticData data = generate_synthetic(spec);
    for (int q = 0; q < 8; ++q) {
        int first = data.matrix.option_index({0, q});
        for (int i = 1; i < 12; ++i) CHECK(data.matrix.option_index({i, q}) == first);
    }
}

TEST_CASE("generate_synthetic zero noise makes cluster members identical") {
    SyntheticSpec spec;
    spec.n_individuals = 15;
    spec.n_questions = 6;
    spec.n_latent_clusters = 3;
    spec.noise = 0.0;
    spec.seed = 21;
    SyntheticData data = generate_synthetic(spec);
    for (int q = 0; q < 6; ++q)
        for (int i = 3; i < 15; ++i) {
            // Assignment is round-robin, so i and i-3 share a cluster.
            CHECK(data.truth.cluster_of[static_cast<size_t>(i)] ==
                  data.truth.cluster_of[static_cast<size_t>(i - 3)]);
            CHECK(data.matrix.option_index({i, q}) == data.matrix.option_index({i - 3, q}));
        }
}

TEST_CASE("generate_synthetic determinism") {
    SyntheticSpec spec;
    spec.n_individuals = 20;
    spec.n_questions = 10;
    spec.n_latent_clusters = 2;
    spec.noise = 0.07;
    spec.seed = 99;
    SyntheticData a = generate_synthetic(spec);
    SyntheticData b = generate_synthetic(spec);
    REQUIRE(a.matrix.response_count() == b.matrix.response_count());
    for (size_t i = 0; i < a.matrix.responses().size(); ++i) {
        CHECK(a.matrix.responses()[i].key == b.matrix.responses()[i].key);
        CHECK(a.matrix.responses()[i].option_index == b.matrix.responses()[i].option_index);
    }
    CHECK(a.truth.latents == b.truth.latents);
}

TEST_CASE("generate_synthetic validates inputs") {
    SyntheticSpec spec;
    spec.n_individuals = 0;
    CHECK_THROWS_AS(generate_synthetic(spec), SteerError);
    spec.n_individuals = 5;
    spec.n_questions = 5;
    spec.noise = -0.1;
    CHECK_THROWS_AS(generate_synthetic(spec), SteerError);
}
