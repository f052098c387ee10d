#pragma once

#include "steer/dataset.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace steer {

struct CfConfig {
    int dim = 16;
    double learning_rate = 0.001;
    int batch_size = 2048;
    int epochs = 200;
    double init_scale = 0.1;  // stddev of the seeded Gaussian init
    uint64_t seed = 0;
    // Adam moments (paper-silent; standard defaults).
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    // L2 regularization, off by default to match the stated objective.
    double regularization = 0.0;
    // Early stop when the best full-set loss improves by less than this over
    // `early_stop_patience` consecutive epochs.
    double early_stop_tolerance = 1e-6;
    int early_stop_patience = 10;
};

// Learned d-dimensional vectors for individuals and questions, keyed by id.
// Immutable once training returns it.
struct EmbeddingTable {
    int dim = 0;
    std::map<std::string, std::vector<double>> individual_vectors;
    std::map<std::string, std::vector<double>> question_vectors;

    const std::vector<double>& individual(const std::string& id) const;
    const std::vector<double>& question(const std::string& id) const;
};

struct TrainTrace {
    std::vector<double> train_loss;  // full key-set MSE at each epoch end
    std::optional<double> final_validation_loss;
};

// Inner product <u, q>; predictions are deliberately unclamped.
double predict(std::span<const double> u, std::span<const double> q);

// Mean squared error of <u_i, q_j> against r_ij over `keys`.
double cf_loss(const EmbeddingTable& table, const ResponseMatrix& matrix,
               const std::vector<ResponseKey>& keys);

// Analytic gradient of cf_loss with respect to every embedding coordinate,
// returned in a gradient-shaped table (entries only for ids touched by keys).
EmbeddingTable cf_loss_gradient(const EmbeddingTable& table, const ResponseMatrix& matrix,
                                const std::vector<ResponseKey>& keys);

struct CfResult {
    EmbeddingTable table;
    TrainTrace trace;
};

// Minibatch Adam on the squared-error objective over `keys`. Deterministic
// for fixed (matrix, keys, config).
CfResult train_cf(const ResponseMatrix& matrix, const std::vector<ResponseKey>& keys,
                  const CfConfig& config);

// Fits embeddings for individuals absent from training, holding the given
// question vectors fixed. Per individual at most `k_responses` keys are used
// (seeded subsample when more are available; pass a large value for "all").
std::map<std::string, std::vector<double>> embed_unseen(
    const ResponseMatrix& matrix, const std::vector<ResponseKey>& keys,
    const std::map<std::string, std::vector<double>>& frozen_questions,
    const CfConfig& config, int k_responses);

void save_embeddings(const std::string& path, const EmbeddingTable& table,
                     const CfConfig& config, const TrainTrace& trace,
                     const std::string& dataset_hash);
struct LoadedEmbeddings {
    EmbeddingTable table;
    CfConfig config;
    TrainTrace trace;
    std::string dataset_hash;
};
LoadedEmbeddings load_embeddings(const std::string& path);

}  // namespace steer
