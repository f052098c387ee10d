#include "steer/spm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace steer {

using nlohmann::json;
using nlohmann::ordered_json;

SoftPromptModel::SoftPromptModel(const SpmConfig& config, int input_dim, const LmConfig& lm_config)
    : config_(config), input_dim_(input_dim), hidden_(config.hidden_units) {
    if (config.hidden_units < 1 || config.virtual_tokens < 1)
        fail(ErrorCategory::config, "SPM needs hidden_units >= 1 and virtual_tokens >= 1");
    if (input_dim < 1) fail(ErrorCategory::config, "SPM input dim must be >= 1");
    lm_layers_ = lm_config.layers;
    lm_dim_ = lm_config.model_dim;
    output_dim_ = config.mode == PrefixMode::prefix
                      ? config.virtual_tokens * lm_config.layers * 2 * lm_config.model_dim
                      : config.virtual_tokens * lm_config.model_dim;

    size_t total = static_cast<size_t>(hidden_) * static_cast<size_t>(input_dim_) +
                   static_cast<size_t>(hidden_) +
                   static_cast<size_t>(output_dim_) * static_cast<size_t>(hidden_) +
                   static_cast<size_t>(output_dim_);
    weights_.resize(total);
    // Biases included: a nonzero output bias keeps prompt rows away from the
    // degenerate all-zero point of the frozen model's layer norm.
    Rng rng(mix_seed(config.seed, "spm-init"));
    std::normal_distribution<double> gauss(0.0, config.init_scale);
    for (double& w : weights_) w = gauss(rng);
    const char* boost = std::getenv("SPM_W1_BOOST");
    if (boost) {
        double f = std::atof(boost);
        size_t n1 = static_cast<size_t>(hidden_) * static_cast<size_t>(input_dim_);
        for (size_t i = 0; i < n1; ++i) weights_[i] *= f;
    }
}

void SoftPromptModel::set_weights(std::vector<double> w) {
    if (w.size() != weights_.size())
        fail(ErrorCategory::dimension, "SPM weight vector has wrong length");
    weights_ = std::move(w);
}

VirtualPrefix SoftPromptModel::forward(const PersonaEmbedding& persona) const {
    if (static_cast<int>(persona.vector.size()) != input_dim_)
        fail(ErrorCategory::dimension,
             "persona embedding length " + std::to_string(persona.vector.size()) +
                 " does not match SPM input dim " + std::to_string(input_dim_));

    const double* W1 = weights_.data();
    const double* b1 = W1 + static_cast<size_t>(hidden_) * static_cast<size_t>(input_dim_);
    const double* W2 = b1 + hidden_;
    const double* b2 = W2 + static_cast<size_t>(output_dim_) * static_cast<size_t>(hidden_);

    std::vector<double> z(static_cast<size_t>(hidden_));
    for (int h = 0; h < hidden_; ++h) {
        const double* w = W1 + static_cast<size_t>(h) * static_cast<size_t>(input_dim_);
        double s = b1[h];
        for (int i = 0; i < input_dim_; ++i) s += w[i] * persona.vector[static_cast<size_t>(i)];
        z[static_cast<size_t>(h)] = std::tanh(s);
    }

    VirtualPrefix out = VirtualPrefix::zeros(config_.mode, config_.virtual_tokens,
                                             lm_layers_, lm_dim_);
    for (int o = 0; o < output_dim_; ++o) {
        const double* w = W2 + static_cast<size_t>(o) * static_cast<size_t>(hidden_);
        double s = b2[o];
        for (int h = 0; h < hidden_; ++h) s += w[h] * z[static_cast<size_t>(h)];
        out.data[static_cast<size_t>(o)] = s;
    }
    return out;
}

void SoftPromptModel::accumulate_gradients(const std::vector<double>& persona_vector,
                                           const VirtualPrefix& prefix_grad,
                                           std::vector<double>& weight_grads) const {
    if (weight_grads.size() != weights_.size())
        fail(ErrorCategory::dimension, "weight gradient buffer has wrong length");
    if (prefix_grad.data.size() != static_cast<size_t>(output_dim_))
        fail(ErrorCategory::dimension, "prefix gradient does not match SPM output dim");

    const double* W1 = weights_.data();
    const double* b1 = W1 + static_cast<size_t>(hidden_) * static_cast<size_t>(input_dim_);
    const double* W2 = b1 + hidden_;
    size_t off_b1 = static_cast<size_t>(hidden_) * static_cast<size_t>(input_dim_);
    size_t off_w2 = off_b1 + static_cast<size_t>(hidden_);
    size_t off_b2 = off_w2 + static_cast<size_t>(output_dim_) * static_cast<size_t>(hidden_);

    // Recompute the hidden activations (cheaper than caching per sample).
    std::vector<double> z(static_cast<size_t>(hidden_));
    for (int h = 0; h < hidden_; ++h) {
        const double* w = W1 + static_cast<size_t>(h) * static_cast<size_t>(input_dim_);
        double s = b1[h];
        for (int i = 0; i < input_dim_; ++i) s += w[i] * persona_vector[static_cast<size_t>(i)];
        z[static_cast<size_t>(h)] = std::tanh(s);
    }

    std::vector<double> dz(static_cast<size_t>(hidden_), 0.0);
    for (int o = 0; o < output_dim_; ++o) {
        double g = prefix_grad.data[static_cast<size_t>(o)];
        if (g == 0.0) continue;
        const double* w = W2 + static_cast<size_t>(o) * static_cast<size_t>(hidden_);
        double* gw = weight_grads.data() + off_w2 +
                     static_cast<size_t>(o) * static_cast<size_t>(hidden_);
        for (int h = 0; h < hidden_; ++h) {
            gw[h] += g * z[static_cast<size_t>(h)];
            dz[static_cast<size_t>(h)] += g * w[h];
        }
        weight_grads[off_b2 + static_cast<size_t>(o)] += g;
    }
    for (int h = 0; h < hidden_; ++h) {
        double dpre = dz[static_cast<size_t>(h)] *
                      (1.0 - z[static_cast<size_t>(h)] * z[static_cast<size_t>(h)]);
        double* gw = weight_grads.data() + static_cast<size_t>(h) * static_cast<size_t>(input_dim_);
        for (int i = 0; i < input_dim_; ++i) gw[i] += dpre * persona_vector[static_cast<size_t>(i)];
        weight_grads[off_b1 + static_cast<size_t>(h)] += dpre;
    }
}

namespace {

struct KeyBatchItem {
    const std::vector<double>* embedding;
    std::vector<int> tokens;
    int option_count;
    int target;
};

std::vector<KeyBatchItem> prepare_items(const FrozenAnswerModel& lm,
                                        const std::map<std::string, std::vector<double>>& embeddings,
                                        const ResponseMatrix& matrix,
                                        const std::vector<ResponseKey>& keys) {
    std::vector<KeyBatchItem> items;
    items.reserve(keys.size());
    for (ResponseKey key : keys) {
        const std::string& ind_id = matrix.individual(key.individual).id;
        auto it = embeddings.find(ind_id);
        if (it == embeddings.end())
            fail(ErrorCategory::lookup, "no embedding for individual '" + ind_id + "'");
        KeyBatchItem item;
        item.embedding = &it->second;
        item.tokens = lm.question_tokens(matrix.question(key.question).id);
        item.option_count = matrix.question(key.question).option_count();
        item.target = matrix.option_index(key);
        items.push_back(std::move(item));
    }
    return items;
}

double cross_entropy_from_logits(const std::vector<double>& logits, int target) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : logits) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : logits)
        if (std::isfinite(v)) denom += std::exp(v - mx);
    return std::log(denom) + mx - logits[static_cast<size_t>(target)];
}

double mean_loss(const SoftPromptModel& spm, const FrozenAnswerModel& lm,
                 const std::vector<KeyBatchItem>& items) {
    if (items.empty()) fail(ErrorCategory::undefined_mean, "loss over an empty key set");
    double total = 0.0;
    PersonaEmbedding persona;
    persona.kind = PersonaKind::individual;
    for (const KeyBatchItem& item : items) {
        persona.vector = *item.embedding;
        VirtualPrefix prefix = spm.forward(persona);
        std::vector<double> logits = lm.forward_with_prefix(&prefix, item.tokens, item.option_count);
        total += cross_entropy_from_logits(logits, item.target);
    }
    return total / static_cast<double>(items.size());
}

}  // namespace

double spm_validation_loss(const SoftPromptModel& spm, const FrozenAnswerModel& frozen_model,
                           const std::map<std::string, std::vector<double>>& embeddings,
                           const ResponseMatrix& matrix, const std::vector<ResponseKey>& keys) {
    return mean_loss(spm, frozen_model, prepare_items(frozen_model, embeddings, matrix, keys));
}

SpmTrainResult train_spm(SoftPromptModel spm, const FrozenAnswerModel& frozen_model,
                         const std::map<std::string, std::vector<double>>& embeddings,
                         const ResponseMatrix& matrix,
                         const std::vector<ResponseKey>& train_keys,
                         const std::vector<ResponseKey>& val_keys, const SpmConfig& config) {
    if (!frozen_model.frozen())
        fail(ErrorCategory::frozen_violation, "train_spm requires a frozen answer model");
    if (train_keys.empty()) fail(ErrorCategory::invalid_input, "train_spm needs train keys");
    if (val_keys.empty()) fail(ErrorCategory::invalid_input, "train_spm needs validation keys");

    std::vector<KeyBatchItem> train_items =
        prepare_items(frozen_model, embeddings, matrix, train_keys);
    std::vector<KeyBatchItem> val_items = prepare_items(frozen_model, embeddings, matrix, val_keys);

    const size_t n_weights = spm.weights().size();
    std::vector<double> grads(n_weights), m(n_weights, 0.0), v(n_weights, 0.0);
    int64_t t = 0;

    std::vector<size_t> order(train_items.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(config.seed, "spm-shuffle"));

    SpmTrace trace;
    std::vector<double> best_weights(spm.weights().begin(), spm.weights().end());
    double best_val = std::numeric_limits<double>::infinity();
    int stale = 0;

    PersonaEmbedding persona;
    persona.kind = PersonaKind::individual;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
            std::fill(grads.begin(), grads.end(), 0.0);
            for (size_t b = start; b < end; ++b) {
                const KeyBatchItem& item = train_items[order[b]];
                persona.vector = *item.embedding;
                VirtualPrefix prefix = spm.forward(persona);
                double loss = 0.0;
                VirtualPrefix pgrad = frozen_model.prefix_gradient(
                    prefix, item.tokens, item.option_count, item.target, &loss);
                epoch_loss += loss;
                spm.accumulate_gradients(*item.embedding, pgrad, grads);
            }
            double inv = 1.0 / static_cast<double>(end - start);
            ++t;
            const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
            const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
            std::vector<double> w(spm.weights().begin(), spm.weights().end());
            for (size_t i = 0; i < n_weights; ++i) {
                double g = grads[i] * inv;
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
                v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
                // Decoupled weight decay.
                w[i] -= config.learning_rate * ((m[i] / bc1) / (std::sqrt(v[i] / bc2) + config.adam_eps) +
                                                config.weight_decay * w[i]);
            }
            spm.set_weights(std::move(w));
        }
        epoch_loss /= static_cast<double>(train_items.size());
        if (!std::isfinite(epoch_loss))
            fail(ErrorCategory::training_diverged,
                 "SPM training diverged at epoch " + std::to_string(epoch));
        trace.train_loss.push_back(epoch_loss);

        double val = mean_loss(spm, frozen_model, val_items);
        trace.val_loss.push_back(val);
        if (val < best_val) {
            best_val = val;
            best_weights.assign(spm.weights().begin(), spm.weights().end());
            trace.best_epoch = epoch;
            stale = 0;
        } else if (++stale >= config.patience) {
            break;
        }
    }

    spm.set_weights(std::move(best_weights));
    return SpmTrainResult{std::move(spm), std::move(trace)};
}

int steer_predict(const SoftPromptModel& spm, const FrozenAnswerModel& frozen_model,
                  const PersonaEmbedding& persona, const std::string& question_id,
                  int option_count) {
    VirtualPrefix prefix = spm.forward(persona);
    std::vector<int> tokens = frozen_model.question_tokens(question_id);
    std::vector<double> logits = frozen_model.forward_with_prefix(&prefix, tokens, option_count);
    int best = 0;
    for (int o = 1; o < option_count; ++o)
        if (logits[static_cast<size_t>(o)] > logits[static_cast<size_t>(best)]) best = o;
    return best;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

struct SpmPersistence {
    static void save(const std::string& path, const SoftPromptModel& spm, const SpmTrace& trace,
                     const std::string& lm_fingerprint, const std::string& dataset_hash) {
        ordered_json j;
        j["format"] = "spm-v1";
        j["dataset_hash"] = dataset_hash;
        j["lm_fingerprint"] = lm_fingerprint;
        const SpmConfig& c = spm.config();
        j["config"] = {{"hidden_units", c.hidden_units},
                       {"virtual_tokens", c.virtual_tokens},
                       {"mode", std::string(to_string(c.mode))},
                       {"learning_rate", c.learning_rate},
                       {"weight_decay", c.weight_decay},
                       {"epochs", c.epochs},
                       {"patience", c.patience},
                       {"batch_size", c.batch_size},
                       {"seed", c.seed},
                       {"init_scale", c.init_scale}};
        j["input_dim"] = spm.input_dim();
        j["lm_layers"] = spm.lm_layers();
        j["lm_dim"] = spm.lm_dim();
        j["trace"] = {{"train_loss", trace.train_loss},
                      {"val_loss", trace.val_loss},
                      {"best_epoch", trace.best_epoch}};
        j["weights"] = std::vector<double>(spm.weights().begin(), spm.weights().end());

        std::ofstream out(path);
        if (!out) fail(ErrorCategory::io, "cannot write " + path);
        out << j.dump() << "\n";
    }

    static LoadedSpm load(const std::string& path, const FrozenAnswerModel* expected_lm) {
        std::ifstream in(path);
        if (!in) fail(ErrorCategory::io, "cannot open SPM file: " + path);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            fail(ErrorCategory::parse, path + ": " + e.what());
        }
        if (j.value("format", "") != "spm-v1")
            fail(ErrorCategory::incompatibility, path + ": unsupported SPM format");

        LoadedSpm out;
        out.dataset_hash = j.value("dataset_hash", "");
        out.lm_fingerprint = j.at("lm_fingerprint").get<std::string>();
        if (expected_lm && out.lm_fingerprint != expected_lm->fingerprint())
            fail(ErrorCategory::incompatibility,
                 path + ": SPM was trained against a different frozen model");

        const json& jc = j.at("config");
        SpmConfig c;
        c.hidden_units = jc.at("hidden_units").get<int>();
        c.virtual_tokens = jc.at("virtual_tokens").get<int>();
        c.mode = prefix_mode_from_string(jc.at("mode").get<std::string>());
        c.learning_rate = jc.at("learning_rate").get<double>();
        c.weight_decay = jc.at("weight_decay").get<double>();
        c.epochs = jc.at("epochs").get<int>();
        c.patience = jc.at("patience").get<int>();
        c.batch_size = jc.at("batch_size").get<int>();
        c.seed = jc.at("seed").get<uint64_t>();
        c.init_scale = jc.at("init_scale").get<double>();

        LmConfig lm_shape;
        lm_shape.layers = j.at("lm_layers").get<int>();
        lm_shape.model_dim = j.at("lm_dim").get<int>();
        out.spm = SoftPromptModel(c, j.at("input_dim").get<int>(), lm_shape);
        out.spm.set_weights(j.at("weights").get<std::vector<double>>());
        out.trace.train_loss = j.at("trace").at("train_loss").get<std::vector<double>>();
        out.trace.val_loss = j.at("trace").at("val_loss").get<std::vector<double>>();
        out.trace.best_epoch = j.at("trace").at("best_epoch").get<int>();
        return out;
    }
};

void save_spm(const std::string& path, const SoftPromptModel& spm, const SpmTrace& trace,
              const std::string& lm_fingerprint, const std::string& dataset_hash) {
    SpmPersistence::save(path, spm, trace, lm_fingerprint, dataset_hash);
}

LoadedSpm load_spm(const std::string& path, const FrozenAnswerModel* expected_lm) {
    return SpmPersistence::load(path, expected_lm);
}

}  // namespace steer
