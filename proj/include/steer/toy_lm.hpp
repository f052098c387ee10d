#pragma once

#include "steer/dataset.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace steer {

enum class PrefixMode { prefix, prompt };

std::string_view to_string(PrefixMode mode);
PrefixMode prefix_mode_from_string(std::string_view s);

struct LmConfig {
    int layers = 2;      // L
    int model_dim = 32;  // D, divisible by heads
    int heads = 2;       // H
    int context_len = 64;
    int ffn_mult = 4;
    uint64_t seed = 0;
    double init_scale = 0.08;
    // Pretraining (population-majority objective). Training stops once every
    // question's argmax equals its majority option and the mean loss falls
    // below target_loss; stopping there keeps the frozen model's logits soft
    // enough for a prefix to override them.
    double learning_rate = 1e-3;
    int batch_size = 32;
    int max_epochs = 400;
    double target_loss = 0.3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
};

// Token inventory: option-index tokens 0..m_max-1, one separator, one token
// per question, then one token per (trait, category) demographic pair.
class Vocabulary {
  public:
    Vocabulary() = default;
    static Vocabulary from_matrix(const ResponseMatrix& matrix);
    static Vocabulary from_parts(int max_options, std::vector<std::string> question_ids,
                                 std::vector<std::pair<std::string, std::string>> demographic_pairs);

    int size() const;
    int max_options() const { return max_options_; }
    int option_token(int option_index) const;
    int separator_token() const { return max_options_; }
    int question_token(const std::string& question_id) const;
    int demographic_token(const std::string& trait, const std::string& category) const;

    const std::vector<std::string>& question_ids() const { return question_ids_; }
    const std::vector<std::pair<std::string, std::string>>& demographic_pairs() const {
        return demographic_pairs_;
    }

  private:
    friend class FrozenAnswerModel;
    int max_options_ = 0;
    std::vector<std::string> question_ids_;
    std::vector<std::pair<std::string, std::string>> demographic_pairs_;  // sorted
    std::map<std::string, int> question_token_;
    std::map<std::pair<std::string, std::string>, int> demographic_token_;
};

// Continuous virtual tokens. Prefix mode holds per-layer key/value rows of
// shape [T, L, 2, D]; prompt mode holds input-embedding rows [T, D].
struct VirtualPrefix {
    PrefixMode mode = PrefixMode::prefix;
    int virtual_tokens = 0;  // T
    int layers = 0;          // L (prefix mode only)
    int dim = 0;             // D
    std::vector<double> data;

    static VirtualPrefix zeros(PrefixMode mode, int virtual_tokens, int layers, int dim);

    size_t element_count() const { return data.size(); }
    // Prefix-mode accessor: kv = 0 for key rows, 1 for value rows.
    double& at(int t, int layer, int kv, int d);
    double at(int t, int layer, int kv, int d) const;
    // Prompt-mode accessor.
    double& at(int t, int d);
    double at(int t, int d) const;
};

// Miniature causal transformer with an option-token output head. After
// freezing, parameters are immutable and forward passes are deterministic.
class FrozenAnswerModel {
  public:
    FrozenAnswerModel() = default;
    FrozenAnswerModel(LmConfig config, Vocabulary vocab);  // seeded random init, unfrozen

    const LmConfig& config() const { return config_; }
    const Vocabulary& vocab() const { return vocab_; }
    bool frozen() const { return frozen_; }
    void freeze() { frozen_ = true; }

    std::span<const double> parameters() const { return params_; }
    // Training-time update; throws frozen-violation once frozen.
    void add_to_parameters(std::span<const double> delta);
    // Wholesale replacement (artifact loading); throws frozen-violation once frozen.
    void set_parameters(std::vector<double> params);

    // Tokenized question: [question token, separator].
    std::vector<int> question_tokens(const std::string& question_id) const;

    // Final-position logits restricted to option tokens: entries above
    // option_count are -inf. prefix may be null (plain forward).
    std::vector<double> forward_with_prefix(const VirtualPrefix* prefix,
                                            std::span<const int> tokens,
                                            int option_count) const;
    // Same, at an arbitrary answer position (used by causal-masking checks).
    std::vector<double> forward_logits_at(const VirtualPrefix* prefix,
                                          std::span<const int> tokens, int answer_pos,
                                          int option_count) const;

    // Gradient of the option-masked cross-entropy at target_option with
    // respect to every prefix entry. Model parameters receive no gradient.
    VirtualPrefix prefix_gradient(const VirtualPrefix& prefix, std::span<const int> tokens,
                                  int option_count, int target_option,
                                  double* loss_out = nullptr) const;

    // Attention rows (one per layer and query position, prefix slots
    // included) for softmax-normalization checks.
    std::vector<std::vector<double>> attention_rows(const VirtualPrefix* prefix,
                                                    std::span<const int> tokens) const;

    // Stable hash over config, vocab and parameters; binds SPM artifacts.
    std::string fingerprint() const;

    // Internal hook shared with the pretrainer/SPM trainer (loss + grads).
    double loss_and_gradients(const VirtualPrefix* prefix, std::span<const int> tokens,
                              int option_count, int target_option,
                              std::vector<double>* param_grads,
                              VirtualPrefix* prefix_grads) const;

  private:
    LmConfig config_;
    Vocabulary vocab_;
    std::vector<double> params_;
    bool frozen_ = false;
};

// Trains the transformer (no prefix) to emit each question's population
// majority option, then freezes it.
FrozenAnswerModel pretrain_toy_lm(const ResponseMatrix& matrix,
                                  const std::vector<ResponseKey>& keys,
                                  const LmConfig& config);

void save_lm(const std::string& path, const FrozenAnswerModel& model,
             const std::string& dataset_hash);
struct LoadedLm {
    FrozenAnswerModel model;
    std::string dataset_hash;
};
LoadedLm load_lm(const std::string& path);

}  // namespace steer
