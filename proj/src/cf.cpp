#include "steer/cf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"

namespace steer {

using nlohmann::json;
using nlohmann::ordered_json;

const std::vector<double>& EmbeddingTable::individual(const std::string& id) const {
    auto it = individual_vectors.find(id);
    if (it == individual_vectors.end())
        fail(ErrorCategory::lookup, "no embedding for individual '" + id + "'");
    return it->second;
}

const std::vector<double>& EmbeddingTable::question(const std::string& id) const {
    auto it = question_vectors.find(id);
    if (it == question_vectors.end())
        fail(ErrorCategory::lookup, "no embedding for question '" + id + "'");
    return it->second;
}

double predict(std::span<const double> u, std::span<const double> q) {
    if (u.size() != q.size())
        fail(ErrorCategory::dimension, "embedding length mismatch: " + std::to_string(u.size()) +
                                           " vs " + std::to_string(q.size()));
    return dot(u, q);
}

double cf_loss(const EmbeddingTable& table, const ResponseMatrix& matrix,
               const std::vector<ResponseKey>& keys) {
    if (keys.empty()) fail(ErrorCategory::undefined_mean, "cf_loss over an empty key set");
    double sum = 0.0;
    for (ResponseKey key : keys) {
        const auto& u = table.individual(matrix.individual(key.individual).id);
        const auto& q = table.question(matrix.question(key.question).id);
        double r = predict(u, q) - matrix.value(key);
        sum += r * r;
    }
    return sum / static_cast<double>(keys.size());
}

EmbeddingTable cf_loss_gradient(const EmbeddingTable& table, const ResponseMatrix& matrix,
                                const std::vector<ResponseKey>& keys) {
    if (keys.empty()) fail(ErrorCategory::undefined_mean, "cf_loss_gradient over an empty key set");
    EmbeddingTable grads;
    grads.dim = table.dim;
    const double inv = 1.0 / static_cast<double>(keys.size());
    for (ResponseKey key : keys) {
        const std::string& ind_id = matrix.individual(key.individual).id;
        const std::string& q_id = matrix.question(key.question).id;
        const auto& u = table.individual(ind_id);
        const auto& q = table.question(q_id);
        double g = 2.0 * (predict(u, q) - matrix.value(key)) * inv;
        auto& gu = grads.individual_vectors[ind_id];
        auto& gq = grads.question_vectors[q_id];
        if (gu.empty()) gu.assign(u.size(), 0.0);
        if (gq.empty()) gq.assign(q.size(), 0.0);
        for (size_t k = 0; k < u.size(); ++k) {
            gu[k] += g * q[k];
            gq[k] += g * u[k];
        }
    }
    return grads;
}

namespace {

// Dense Adam state over a flat parameter block. Updates every coordinate each
// step (gradients of untouched embeddings are zero), matching the usual
// embedding-table treatment.
struct AdamState {
    std::vector<double> m, v;
    int64_t t = 0;

    explicit AdamState(size_t n) : m(n, 0.0), v(n, 0.0) {}

    void step(std::vector<double>& params, const std::vector<double>& grad,
              const CfConfig& cfg) {
        ++t;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        for (size_t i = 0; i < params.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
};

struct Problem {
    // Row-major [rows x dim] blocks for individuals and questions involved in
    // the key set, with id-sorted row order for determinism.
    std::vector<std::string> individual_ids, question_ids;
    std::vector<int> ind_row_of, q_row_of;  // matrix index -> row (-1 if absent)
    std::vector<double> U, Q;
    int dim = 0;

    double* u_row(int row) { return U.data() + static_cast<size_t>(row) * static_cast<size_t>(dim); }
    double* q_row(int row) { return Q.data() + static_cast<size_t>(row) * static_cast<size_t>(dim); }
};

double batch_mse(const Problem& p, const ResponseMatrix& matrix,
                 const std::vector<ResponseKey>& keys) {
    double sum = 0.0;
    for (ResponseKey key : keys) {
        const double* u = p.U.data() +
                          static_cast<size_t>(p.ind_row_of[static_cast<size_t>(key.individual)]) *
                              static_cast<size_t>(p.dim);
        const double* q = p.Q.data() +
                          static_cast<size_t>(p.q_row_of[static_cast<size_t>(key.question)]) *
                              static_cast<size_t>(p.dim);
        double r = -matrix.value(key);
        for (int k = 0; k < p.dim; ++k) r += u[k] * q[k];
        sum += r * r;
    }
    return sum / static_cast<double>(keys.size());
}

// Shared minibatch-Adam loop. When train_questions is false the question
// block receives no updates at all.
TrainTrace optimize(Problem& p, const ResponseMatrix& matrix,
                    const std::vector<ResponseKey>& keys, const CfConfig& cfg,
                    bool train_questions, uint64_t shuffle_seed) {
    AdamState adam_u(p.U.size());
    AdamState adam_q(train_questions ? p.Q.size() : 0);
    std::vector<double> grad_u(p.U.size(), 0.0);
    std::vector<double> grad_q(train_questions ? p.Q.size() : 0, 0.0);

    std::vector<ResponseKey> order = keys;
    Rng shuffle_rng(shuffle_seed);

    TrainTrace trace;
    double best = std::numeric_limits<double>::infinity();
    int stale = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            double inv = 1.0 / static_cast<double>(end - start);
            std::fill(grad_u.begin(), grad_u.end(), 0.0);
            std::fill(grad_q.begin(), grad_q.end(), 0.0);
            for (size_t b = start; b < end; ++b) {
                ResponseKey key = order[b];
                int ur = p.ind_row_of[static_cast<size_t>(key.individual)];
                int qr = p.q_row_of[static_cast<size_t>(key.question)];
                double* u = p.u_row(ur);
                double* q = p.q_row(qr);
                double r = -matrix.value(key);
                for (int k = 0; k < p.dim; ++k) r += u[k] * q[k];
                double g = 2.0 * r * inv;
                double* gu = grad_u.data() + static_cast<size_t>(ur) * static_cast<size_t>(p.dim);
                for (int k = 0; k < p.dim; ++k) gu[k] += g * q[k];
                if (train_questions) {
                    double* gq = grad_q.data() + static_cast<size_t>(qr) * static_cast<size_t>(p.dim);
                    for (int k = 0; k < p.dim; ++k) gq[k] += g * u[k];
                }
            }
            if (cfg.regularization > 0.0) {
                for (size_t i = 0; i < grad_u.size(); ++i)
                    grad_u[i] += 2.0 * cfg.regularization * p.U[i];
                if (train_questions)
                    for (size_t i = 0; i < grad_q.size(); ++i)
                        grad_q[i] += 2.0 * cfg.regularization * p.Q[i];
            }
            adam_u.step(p.U, grad_u, cfg);
            if (train_questions) adam_q.step(p.Q, grad_q, cfg);
        }

        double loss = batch_mse(p, matrix, keys);
        if (!std::isfinite(loss))
            fail(ErrorCategory::training_diverged,
                 "CF training diverged at epoch " + std::to_string(epoch));
        trace.train_loss.push_back(loss);

        if (loss < best - cfg.early_stop_tolerance) {
            best = loss;
            stale = 0;
        } else if (++stale >= cfg.early_stop_patience) {
            break;
        }
        best = std::min(best, loss);
    }
    return trace;
}

void validate_config(const CfConfig& cfg) {
    if (cfg.dim < 1 || cfg.learning_rate <= 0.0 || cfg.batch_size < 1 || cfg.epochs < 1)
        fail(ErrorCategory::config, "invalid CF config (dim/lr/batch/epochs)");
}

}  // namespace

CfResult train_cf(const ResponseMatrix& matrix, const std::vector<ResponseKey>& keys,
                  const CfConfig& config) {
    validate_config(config);
    if (keys.empty()) fail(ErrorCategory::invalid_input, "train_cf needs a non-empty key set");

    Problem p;
    p.dim = config.dim;
    p.ind_row_of.assign(matrix.individuals().size(), -1);
    p.q_row_of.assign(matrix.questions().size(), -1);

    std::set<int> inds, qs;
    for (ResponseKey key : keys) {
        if (key.individual < 0 || key.individual >= static_cast<int>(matrix.individuals().size()) ||
            key.question < 0 || key.question >= static_cast<int>(matrix.questions().size()))
            fail(ErrorCategory::lookup, "train_cf key outside the matrix");
        inds.insert(key.individual);
        qs.insert(key.question);
    }
    // Row order sorted by id so the result is a pure function of the inputs.
    std::vector<std::pair<std::string, int>> ind_sorted, q_sorted;
    for (int i : inds) ind_sorted.emplace_back(matrix.individual(i).id, i);
    for (int q : qs) q_sorted.emplace_back(matrix.question(q).id, q);
    std::sort(ind_sorted.begin(), ind_sorted.end());
    std::sort(q_sorted.begin(), q_sorted.end());
    for (auto& [id, idx] : ind_sorted) {
        p.ind_row_of[static_cast<size_t>(idx)] = static_cast<int>(p.individual_ids.size());
        p.individual_ids.push_back(id);
    }
    for (auto& [id, idx] : q_sorted) {
        p.q_row_of[static_cast<size_t>(idx)] = static_cast<int>(p.question_ids.size());
        p.question_ids.push_back(id);
    }

    Rng init_rng(mix_seed(config.seed, "cf-init"));
    std::normal_distribution<double> gauss(0.0, config.init_scale);
    p.U.resize(p.individual_ids.size() * static_cast<size_t>(p.dim));
    p.Q.resize(p.question_ids.size() * static_cast<size_t>(p.dim));
    for (double& x : p.U) x = gauss(init_rng);
    for (double& x : p.Q) x = gauss(init_rng);

    TrainTrace trace =
        optimize(p, matrix, keys, config, /*train_questions=*/true, mix_seed(config.seed, "cf-shuffle"));

    CfResult result;
    result.table.dim = p.dim;
    for (size_t r = 0; r < p.individual_ids.size(); ++r)
        result.table.individual_vectors[p.individual_ids[r]] =
            std::vector<double>(p.u_row(static_cast<int>(r)), p.u_row(static_cast<int>(r)) + p.dim);
    for (size_t r = 0; r < p.question_ids.size(); ++r)
        result.table.question_vectors[p.question_ids[r]] =
            std::vector<double>(p.q_row(static_cast<int>(r)), p.q_row(static_cast<int>(r)) + p.dim);
    result.trace = std::move(trace);
    return result;
}

std::map<std::string, std::vector<double>> embed_unseen(
    const ResponseMatrix& matrix, const std::vector<ResponseKey>& keys,
    const std::map<std::string, std::vector<double>>& frozen_questions,
    const CfConfig& config, int k_responses) {
    validate_config(config);
    if (k_responses < 1) fail(ErrorCategory::invalid_input, "k_responses must be >= 1");
    if (keys.empty()) fail(ErrorCategory::invalid_input, "embed_unseen needs a non-empty key set");
    for (const auto& [id, vec] : frozen_questions)
        if (static_cast<int>(vec.size()) != config.dim)
            fail(ErrorCategory::dimension,
                 "frozen question vector '" + id + "' does not match configured dim");

    // Group usable keys per individual; every key's question must be frozen.
    std::map<std::string, std::vector<ResponseKey>> per_individual;
    for (ResponseKey key : keys) {
        const std::string& qid = matrix.question(key.question).id;
        if (frozen_questions.find(qid) == frozen_questions.end())
            fail(ErrorCategory::lookup,
                 "embed_unseen key references question '" + qid + "' without a frozen vector");
        per_individual[matrix.individual(key.individual).id].push_back(key);
    }

    std::vector<ResponseKey> selected;
    std::vector<std::pair<std::string, int>> ind_sorted;
    for (auto& [id, ind_keys] : per_individual) {
        if (ind_keys.empty())
            fail(ErrorCategory::insufficient_data, "individual '" + id + "' has no usable responses");
        std::sort(ind_keys.begin(), ind_keys.end(), [&](ResponseKey a, ResponseKey b) {
            return matrix.question(a.question).id < matrix.question(b.question).id;
        });
        if (static_cast<int>(ind_keys.size()) > k_responses) {
            Rng pick(mix_seed(config.seed, "embed-unseen-pick:" + id));
            std::shuffle(ind_keys.begin(), ind_keys.end(), pick);
            ind_keys.resize(static_cast<size_t>(k_responses));
            std::sort(ind_keys.begin(), ind_keys.end());
        }
        selected.insert(selected.end(), ind_keys.begin(), ind_keys.end());
        ind_sorted.emplace_back(id, ind_keys.front().individual);
    }
    std::sort(selected.begin(), selected.end());

    Problem p;
    p.dim = config.dim;
    p.ind_row_of.assign(matrix.individuals().size(), -1);
    p.q_row_of.assign(matrix.questions().size(), -1);
    for (auto& [id, idx] : ind_sorted) {
        p.ind_row_of[static_cast<size_t>(idx)] = static_cast<int>(p.individual_ids.size());
        p.individual_ids.push_back(id);
    }
    // Question rows copied from the frozen vectors; never updated below.
    for (ResponseKey key : selected) {
        if (p.q_row_of[static_cast<size_t>(key.question)] >= 0) continue;
        const std::string& qid = matrix.question(key.question).id;
        p.q_row_of[static_cast<size_t>(key.question)] = static_cast<int>(p.question_ids.size());
        p.question_ids.push_back(qid);
        const auto& vec = frozen_questions.at(qid);
        p.Q.insert(p.Q.end(), vec.begin(), vec.end());
    }

    p.U.resize(p.individual_ids.size() * static_cast<size_t>(p.dim));
    for (size_t r = 0; r < p.individual_ids.size(); ++r) {
        Rng init_rng(mix_seed(config.seed, "embed-unseen-init:" + p.individual_ids[r]));
        std::normal_distribution<double> gauss(0.0, config.init_scale);
        double* row = p.u_row(static_cast<int>(r));
        for (int k = 0; k < p.dim; ++k) row[k] = gauss(init_rng);
    }

    optimize(p, matrix, selected, config, /*train_questions=*/false,
             mix_seed(config.seed, "embed-unseen-shuffle"));

    std::map<std::string, std::vector<double>> out;
    for (size_t r = 0; r < p.individual_ids.size(); ++r)
        out[p.individual_ids[r]] =
            std::vector<double>(p.u_row(static_cast<int>(r)), p.u_row(static_cast<int>(r)) + p.dim);
    return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------
namespace {

json config_to_json(const CfConfig& c) {
    return {{"dim", c.dim},
            {"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"init_scale", c.init_scale},
            {"seed", c.seed},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps},
            {"regularization", c.regularization},
            {"early_stop_tolerance", c.early_stop_tolerance},
            {"early_stop_patience", c.early_stop_patience}};
}

CfConfig config_from_json(const json& j) {
    CfConfig c;
    c.dim = j.at("dim").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.init_scale = j.at("init_scale").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.regularization = j.at("regularization").get<double>();
    c.early_stop_tolerance = j.at("early_stop_tolerance").get<double>();
    c.early_stop_patience = j.at("early_stop_patience").get<int>();
    return c;
}

}  // namespace

void save_embeddings(const std::string& path, const EmbeddingTable& table,
                     const CfConfig& config, const TrainTrace& trace,
                     const std::string& dataset_hash) {
    ordered_json j;
    j["format"] = "cf-embeddings-v1";
    j["dataset_hash"] = dataset_hash;
    j["d"] = table.dim;
    j["individuals"] = table.individual_vectors;
    j["questions"] = table.question_vectors;
    j["config"] = config_to_json(config);
    j["trace"] = {{"train_loss", trace.train_loss}};
    if (trace.final_validation_loss)
        j["trace"]["final_validation_loss"] = *trace.final_validation_loss;

    std::ofstream out(path);
    if (!out) fail(ErrorCategory::io, "cannot write " + path);
    out << j.dump() << "\n";
}

LoadedEmbeddings load_embeddings(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCategory::io, "cannot open embeddings file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCategory::parse, path + ": " + e.what());
    }
    if (j.value("format", "") != "cf-embeddings-v1")
        fail(ErrorCategory::incompatibility, path + ": unsupported embeddings format");

    LoadedEmbeddings out;
    out.dataset_hash = j.value("dataset_hash", "");
    out.table.dim = j.at("d").get<int>();
    for (const auto& [id, vec] : j.at("individuals").items())
        out.table.individual_vectors[id] = vec.get<std::vector<double>>();
    for (const auto& [id, vec] : j.at("questions").items())
        out.table.question_vectors[id] = vec.get<std::vector<double>>();
    out.config = config_from_json(j.at("config"));
    out.trace.train_loss = j.at("trace").at("train_loss").get<std::vector<double>>();
    if (j.at("trace").contains("final_validation_loss"))
        out.trace.final_validation_loss = j.at("trace").at("final_validation_loss").get<double>();

    for (const auto& [id, vec] : out.table.individual_vectors)
        if (static_cast<int>(vec.size()) != out.table.dim)
            fail(ErrorCategory::dimension, path + ": individual '" + id + "' has wrong length");
    for (const auto& [id, vec] : out.table.question_vectors)
        if (static_cast<int>(vec.size()) != out.table.dim)
            fail(ErrorCategory::dimension, path + ": question '" + id + "' has wrong length");
    return out;
}

}  // namespace steer
