#pragma once

#include "steer/cf.hpp"
#include "steer/persona.hpp"
#include "steer/toy_lm.hpp"

#include <map>
#include <string>
#include <vector>

namespace steer {

struct SpmConfig {
    int hidden_units = 32;
    int virtual_tokens = 1;  // T
    PrefixMode mode = PrefixMode::prefix;
    double learning_rate = 0.001;
    double weight_decay = 0.001;  // decoupled (AdamW)
    int epochs = 10;
    int patience = 3;  // early stopping on validation loss
    // Small batches give the fixed 10-epoch budget enough optimizer steps at
    // desk scale (tens of thousands of responses, not millions).
    int batch_size = 2;
    uint64_t seed = 0;
    double init_scale = 0.02;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
};

// Two-layer MLP (tanh between the affine maps) from a persona embedding to a
// VirtualPrefix. Output dim is T*L*2*D in prefix mode, T*D in prompt mode.
class SoftPromptModel {
  public:
    SoftPromptModel() = default;
    // Seeded Gaussian init bound to the frozen model's shape.
    SoftPromptModel(const SpmConfig& config, int input_dim, const LmConfig& lm_config);

    const SpmConfig& config() const { return config_; }
    int input_dim() const { return input_dim_; }
    int output_dim() const { return output_dim_; }
    int lm_layers() const { return lm_layers_; }
    int lm_dim() const { return lm_dim_; }

    VirtualPrefix forward(const PersonaEmbedding& persona) const;

    std::span<const double> weights() const { return weights_; }
    void set_weights(std::vector<double> w);

    // Backprop d(loss)/d(prefix) through the MLP into weight gradients.
    void accumulate_gradients(const std::vector<double>& persona_vector,
                              const VirtualPrefix& prefix_grad,
                              std::vector<double>& weight_grads) const;

  private:
    friend struct SpmPersistence;
    SpmConfig config_;
    int input_dim_ = 0;
    int hidden_ = 0;
    int output_dim_ = 0;
    int lm_layers_ = 0;
    int lm_dim_ = 0;
    // Layout: W1 [hidden x input], b1 [hidden], W2 [output x hidden], b2 [output]
    std::vector<double> weights_;
};

struct SpmTrace {
    std::vector<double> train_loss;  // per-epoch mean over train keys
    std::vector<double> val_loss;    // per-epoch mean over val keys
    int best_epoch = -1;
};

struct SpmTrainResult {
    SoftPromptModel spm;
    SpmTrace trace;
};

// Minimizes the frozen model's option cross-entropy over train_keys, feeding
// each individual's (constant) embedding through the SPM. Early stopping
// keeps the weight snapshot with the lowest validation loss.
SpmTrainResult train_spm(SoftPromptModel spm, const FrozenAnswerModel& frozen_model,
                         const std::map<std::string, std::vector<double>>& embeddings,
                         const ResponseMatrix& matrix,
                         const std::vector<ResponseKey>& train_keys,
                         const std::vector<ResponseKey>& val_keys, const SpmConfig& config);

// Argmax option for the question under the steered model; ties break to the
// lowest option index.
int steer_predict(const SoftPromptModel& spm, const FrozenAnswerModel& frozen_model,
                  const PersonaEmbedding& persona, const std::string& question_id,
                  int option_count);

double spm_validation_loss(const SoftPromptModel& spm, const FrozenAnswerModel& frozen_model,
                           const std::map<std::string, std::vector<double>>& embeddings,
                           const ResponseMatrix& matrix, const std::vector<ResponseKey>& keys);

void save_spm(const std::string& path, const SoftPromptModel& spm, const SpmTrace& trace,
              const std::string& lm_fingerprint, const std::string& dataset_hash);
struct LoadedSpm {
    SoftPromptModel spm;
    SpmTrace trace;
    std::string lm_fingerprint;
    std::string dataset_hash;
};
// Verifies the stored LM fingerprint against `expected_lm`; mismatch is an
// incompatibility error.
LoadedSpm load_spm(const std::string& path, const FrozenAnswerModel* expected_lm = nullptr);

}  // namespace steer
