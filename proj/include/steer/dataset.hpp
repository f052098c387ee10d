#pragma once

#include "steer/common.hpp"

#include <compare>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace steer {

struct Question {
    std::string id;
    std::string text;
    std::string topic;
    std::vector<std::string> options;  // ordered, distinct, size >= 2

    int option_count() const { return static_cast<int>(options.size()); }
};

struct Individual {
    std::string id;
    std::map<std::string, std::string> demographics;  // trait -> category
};

// Uniform ordinal mapping: option i of m maps to i/(m-1), so a three-option
// question yields 0, 0.5, 1.
double map_ordinal(int option_index, int option_count);

// Inverse direction: snap a real value to the nearest ordinal level's index,
// clamped to [0, m-1].
int nearest_option(double value, int option_count);

// (individual, question) pair, as indices into a ResponseMatrix.
struct ResponseKey {
    int individual = -1;
    int question = -1;
    auto operator<=>(const ResponseKey&) const = default;
};

struct Response {
    ResponseKey key;
    int option_index = 0;
    double value = 0.0;  // option_index / (m - 1)
};

// Sparse ordinal response set plus question/individual metadata. Immutable
// after construction; safe to share read-only across workers.
class ResponseMatrix {
  public:
    ResponseMatrix() = default;

    struct RawResponse {
        std::string individual_id;
        std::string question_id;
        int option_index = 0;
    };

    // Validates referential integrity, option ranges and key uniqueness.
    static ResponseMatrix build(std::vector<Question> questions,
                                std::vector<Individual> individuals,
                                const std::vector<RawResponse>& raw);

    const std::vector<Question>& questions() const { return questions_; }
    const std::vector<Individual>& individuals() const { return individuals_; }
    const std::vector<Response>& responses() const { return responses_; }

    int question_index(const std::string& id) const;    // -1 when unknown
    int individual_index(const std::string& id) const;  // -1 when unknown
    const Question& question(int idx) const { return questions_.at(static_cast<size_t>(idx)); }
    const Individual& individual(int idx) const { return individuals_.at(static_cast<size_t>(idx)); }

    bool has(ResponseKey key) const;
    const Response& at(ResponseKey key) const;  // lookup error when absent
    double value(ResponseKey key) const { return at(key).value; }
    int option_index(ResponseKey key) const { return at(key).option_index; }

    std::vector<ResponseKey> all_keys() const;
    size_t response_count() const { return responses_.size(); }

  private:
    static uint64_t pack(ResponseKey key) {
        return (static_cast<uint64_t>(static_cast<uint32_t>(key.individual)) << 32) |
               static_cast<uint32_t>(key.question);
    }

    std::vector<Question> questions_;
    std::vector<Individual> individuals_;
    std::vector<Response> responses_;  // sorted by key
    std::unordered_map<uint64_t, size_t> response_index_;
    std::unordered_map<std::string, int> question_index_;
    std::unordered_map<std::string, int> individual_index_;
};

// ---------------------------------------------------------------------------
// File loading. Formats:
//   questions:    JSON lines, {"id","text","topic","options":[...]}
//   responses:    CSV, header individual_id,question_id,option_index
//   demographics: CSV, header individual_id,trait,category
// Options matching a refusal label are removed before ordinal mapping and
// responses that chose them are treated as null.
// ---------------------------------------------------------------------------
struct LoadOptions {
    std::vector<std::string> refusal_labels = {"Refused"};
};

ResponseMatrix load_dataset(const std::string& questions_path,
                            const std::string& responses_path,
                            const std::string& demographics_path,
                            const LoadOptions& options = {});

void save_dataset_files(const ResponseMatrix& matrix,
                        const std::string& questions_path,
                        const std::string& responses_path,
                        const std::string& demographics_path);

// ---------------------------------------------------------------------------
// Four-way split: individuals into train/val, then each individual's
// responses into train/val, giving r_tr_tr, r_tr_val, r_val_tr, r_val_val.
// ---------------------------------------------------------------------------
struct SplitSpec {
    uint64_t seed = 0;
    double individual_train_fraction = 0.8;
    double response_train_fraction = 0.8;
};

struct FourWaySplit {
    std::vector<int> p_tr;  // individual indices, sorted
    std::vector<int> p_val;
    std::vector<ResponseKey> r_tr_tr;  // all key lists sorted
    std::vector<ResponseKey> r_tr_val;
    std::vector<ResponseKey> r_val_tr;
    std::vector<ResponseKey> r_val_val;
};

FourWaySplit four_way_split(const ResponseMatrix& matrix, const SplitSpec& spec);

void save_split(const std::string& path, const FourWaySplit& split,
                const SplitSpec& spec, const ResponseMatrix& matrix,
                const std::string& dataset_hash);
struct LoadedSplit {
    FourWaySplit split;
    SplitSpec spec;
    std::string dataset_hash;
};
LoadedSplit load_split(const std::string& path, const ResponseMatrix& matrix);

// ---------------------------------------------------------------------------
// Synthetic data with planted cluster structure. Individual latents scatter
// around their cluster prototype with std cluster_spread_ratio * noise, so
// cluster members differ in a learnable way while noise = 0 still makes them
// answer identically. Responses are the min-max rescaled latent/question
// inner product plus Gaussian response noise (std = noise), snapped to the
// nearest ordinal level.
// ---------------------------------------------------------------------------
struct SyntheticSpec {
    int n_individuals = 0;
    int n_questions = 0;
    int n_latent_clusters = 1;
    double noise = 0.0;  // response noise std-dev; also scales latent scatter
    uint64_t seed = 0;
    int latent_dim = 8;
    int min_options = 3;  // per-question option counts cycle in this range
    int max_options = 5;
    double cluster_spread_ratio = 2.5;
};

struct SyntheticGroundTruth {
    std::vector<int> cluster_of;                      // per individual index
    std::vector<std::vector<double>> latents;         // per individual
    std::vector<std::vector<double>> prototypes;      // per cluster
    std::vector<std::vector<double>> question_latents;
};

struct SyntheticData {
    ResponseMatrix matrix;
    SyntheticGroundTruth truth;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

void save_ground_truth(const std::string& path, const SyntheticGroundTruth& truth,
                       const ResponseMatrix& matrix);

}  // namespace steer
