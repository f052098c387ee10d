#include "steer/toy_lm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "json.hpp"

namespace steer {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(PrefixMode mode) {
    return mode == PrefixMode::prefix ? "prefix" : "prompt";
}

PrefixMode prefix_mode_from_string(std::string_view s) {
    if (s == "prefix") return PrefixMode::prefix;
    if (s == "prompt") return PrefixMode::prompt;
    fail(ErrorCategory::config, "unknown prefix mode '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

Vocabulary Vocabulary::from_matrix(const ResponseMatrix& matrix) {
    Vocabulary v;
    for (const Question& q : matrix.questions())
        v.max_options_ = std::max(v.max_options_, q.option_count());
    for (const Question& q : matrix.questions()) {
        v.question_token_[q.id] =
            v.max_options_ + 1 + static_cast<int>(v.question_ids_.size());
        v.question_ids_.push_back(q.id);
    }
    std::set<std::pair<std::string, std::string>> pairs;
    for (const Individual& ind : matrix.individuals())
        for (const auto& [trait, category] : ind.demographics) pairs.emplace(trait, category);
    int base = v.max_options_ + 1 + static_cast<int>(v.question_ids_.size());
    for (const auto& p : pairs) {
        v.demographic_token_[p] = base + static_cast<int>(v.demographic_pairs_.size());
        v.demographic_pairs_.push_back(p);
    }
    return v;
}

Vocabulary Vocabulary::from_parts(
    int max_options, std::vector<std::string> question_ids,
    std::vector<std::pair<std::string, std::string>> demographic_pairs) {
    Vocabulary v;
    v.max_options_ = max_options;
    for (std::string& id : question_ids) {
        v.question_token_[id] = v.max_options_ + 1 + static_cast<int>(v.question_ids_.size());
        v.question_ids_.push_back(std::move(id));
    }
    int base = v.max_options_ + 1 + static_cast<int>(v.question_ids_.size());
    for (auto& p : demographic_pairs) {
        v.demographic_token_[p] = base + static_cast<int>(v.demographic_pairs_.size());
        v.demographic_pairs_.push_back(std::move(p));
    }
    return v;
}

int Vocabulary::size() const {
    return max_options_ + 1 + static_cast<int>(question_ids_.size()) +
           static_cast<int>(demographic_pairs_.size());
}

int Vocabulary::option_token(int option_index) const {
    if (option_index < 0 || option_index >= max_options_)
        fail(ErrorCategory::vocab, "option index " + std::to_string(option_index) +
                                       " outside the option-token range");
    return option_index;
}

int Vocabulary::question_token(const std::string& question_id) const {
    auto it = question_token_.find(question_id);
    if (it == question_token_.end())
        fail(ErrorCategory::vocab, "question '" + question_id + "' not in vocabulary");
    return it->second;
}

int Vocabulary::demographic_token(const std::string& trait, const std::string& category) const {
    auto it = demographic_token_.find({trait, category});
    if (it == demographic_token_.end())
        fail(ErrorCategory::vocab, "demographic pair " + trait + "=" + category + " not in vocabulary");
    return it->second;
}

// ---------------------------------------------------------------------------
// VirtualPrefix
// ---------------------------------------------------------------------------

VirtualPrefix VirtualPrefix::zeros(PrefixMode mode, int virtual_tokens, int layers, int dim) {
    if (virtual_tokens < 1 || dim < 1 || (mode == PrefixMode::prefix && layers < 1))
        fail(ErrorCategory::invalid_input, "invalid virtual prefix shape");
    VirtualPrefix p;
    p.mode = mode;
    p.virtual_tokens = virtual_tokens;
    p.layers = mode == PrefixMode::prefix ? layers : 0;
    p.dim = dim;
    size_t count = mode == PrefixMode::prefix
                       ? static_cast<size_t>(virtual_tokens) * static_cast<size_t>(layers) * 2 *
                             static_cast<size_t>(dim)
                       : static_cast<size_t>(virtual_tokens) * static_cast<size_t>(dim);
    p.data.assign(count, 0.0);
    return p;
}

double& VirtualPrefix::at(int t, int layer, int kv, int d) {
    return data[((static_cast<size_t>(t) * static_cast<size_t>(layers) +
                  static_cast<size_t>(layer)) *
                     2 +
                 static_cast<size_t>(kv)) *
                    static_cast<size_t>(dim) +
                static_cast<size_t>(d)];
}

double VirtualPrefix::at(int t, int layer, int kv, int d) const {
    return const_cast<VirtualPrefix*>(this)->at(t, layer, kv, d);
}

double& VirtualPrefix::at(int t, int d) {
    return data[static_cast<size_t>(t) * static_cast<size_t>(dim) + static_cast<size_t>(d)];
}

double VirtualPrefix::at(int t, int d) const {
    return const_cast<VirtualPrefix*>(this)->at(t, d);
}

// ---------------------------------------------------------------------------
// Parameter layout
// ---------------------------------------------------------------------------
namespace {

struct LayerOffsets {
    size_t ln1_g, ln1_b;
    size_t wq, bq, wk, bk, wv, bv, wo, bo;
    size_t ln2_g, ln2_b;
    size_t w1, b1, w2, b2;
};

struct Offsets {
    size_t tok_emb = 0;
    std::vector<LayerOffsets> layers;
    size_t lnf_g = 0, lnf_b = 0, wout = 0, bout = 0;
    size_t total = 0;
};

Offsets make_offsets(const LmConfig& c, int vocab_size) {
    const size_t D = static_cast<size_t>(c.model_dim);
    const size_t F = D * static_cast<size_t>(c.ffn_mult);
    const size_t V = static_cast<size_t>(vocab_size);

    Offsets off;
    size_t cur = 0;
    auto take = [&](size_t n) {
        size_t at = cur;
        cur += n;
        return at;
    };
    off.tok_emb = take(V * D);
    off.layers.resize(static_cast<size_t>(c.layers));
    for (auto& l : off.layers) {
        l.ln1_g = take(D);
        l.ln1_b = take(D);
        l.wq = take(D * D);
        l.bq = take(D);
        l.wk = take(D * D);
        l.bk = take(D);
        l.wv = take(D * D);
        l.bv = take(D);
        l.wo = take(D * D);
        l.bo = take(D);
        l.ln2_g = take(D);
        l.ln2_b = take(D);
        l.w1 = take(F * D);
        l.b1 = take(F);
        l.w2 = take(D * F);
        l.b2 = take(D);
    }
    off.lnf_g = take(D);
    off.lnf_b = take(D);
    off.wout = take(V * D);
    off.bout = take(V);
    off.total = cur;
    return off;
}

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

double gelu(double x) { return x * 0.5 * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
    double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

// y = W x + b with W row-major [rows][cols].
void linear(const double* W, const double* b, const double* x, double* y, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const double* w = W + static_cast<size_t>(r) * static_cast<size_t>(cols);
        double s = b ? b[r] : 0.0;
        for (int c = 0; c < cols; ++c) s += w[c] * x[c];
        y[r] = s;
    }
}

// dx += W^T dy; dW += dy x^T; db += dy. Grad pointers may be null.
void linear_backward(const double* W, const double* x, const double* dy, double* dx, double* dW,
                     double* db, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const double* w = W + static_cast<size_t>(r) * static_cast<size_t>(cols);
        double g = dy[r];
        if (dx)
            for (int c = 0; c < cols; ++c) dx[c] += w[c] * g;
        if (dW) {
            double* dwr = dW + static_cast<size_t>(r) * static_cast<size_t>(cols);
            for (int c = 0; c < cols; ++c) dwr[c] += g * x[c];
        }
        if (db) db[r] += g;
    }
}

void layer_norm(const double* x, const double* g, const double* b, double* y, int dim,
                double* mean_out, double* rstd_out) {
    double mean = 0.0;
    for (int i = 0; i < dim; ++i) mean += x[i];
    mean /= dim;
    double var = 0.0;
    for (int i = 0; i < dim; ++i) {
        double d = x[i] - mean;
        var += d * d;
    }
    var /= dim;
    double rstd = 1.0 / std::sqrt(var + kLnEps);
    for (int i = 0; i < dim; ++i) y[i] = g[i] * ((x[i] - mean) * rstd) + b[i];
    *mean_out = mean;
    *rstd_out = rstd;
}

void layer_norm_backward(const double* x, const double* g, double mean, double rstd,
                         const double* dy, double* dx, double* dg, double* db, int dim) {
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (int i = 0; i < dim; ++i) {
        double xhat = (x[i] - mean) * rstd;
        double dxhat = dy[i] * g[i];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        if (dg) dg[i] += dy[i] * xhat;
        if (db) db[i] += dy[i];
    }
    for (int i = 0; i < dim; ++i) {
        double xhat = (x[i] - mean) * rstd;
        double dxhat = dy[i] * g[i];
        dx[i] += rstd * (dxhat - sum_dxhat / dim - xhat * sum_dxhat_xhat / dim);
    }
}

// One forward (optionally backward) pass. Activations are cached per run so
// the reverse sweep can consume them.
struct Run {
    const LmConfig& cfg;
    const Offsets& off;
    std::span<const double> params;
    const VirtualPrefix* prefix;
    std::span<const int> tokens;

    int n = 0;     // real tokens
    int Tp = 0;    // prompt slots occupying positions
    int Tpre = 0;  // per-layer prefix kv slots
    int P = 0;     // total stream positions
    int D = 0, F = 0, H = 0, hd = 0;
    double scale = 0.0;
    int answer_stream = 0;
    int option_count = 0;

    // Pre-norm blocks: x += attn(LN1(x)); x += ffn(LN2(x)); head reads
    // LNf(x). Virtual prompt rows skip LN1 at their own positions so their
    // scale carries signal, mirroring how prefix mode consumes raw key/value
    // rows.
    struct LayerCache {
        std::vector<double> x_in;  // stream entering the layer
        std::vector<double> ln1_mean, ln1_rstd, a;
        std::vector<double> q, k, v;
        std::vector<double> attn;         // ragged softmax rows
        std::vector<size_t> attn_offset;  // row start per position
        std::vector<double> o;            // concatenated head outputs
        std::vector<double> x1;           // after the attention residual
        std::vector<double> ln2_mean, ln2_rstd, m;
        std::vector<double> h1, a1;       // ffn pre-activation / activation
    };
    std::vector<LayerCache> layers;
    std::vector<double> x_final;
    double lnf_mean = 0.0, lnf_rstd = 0.0;
    std::vector<double> y;       // final layer-norm output at the answer position
    std::vector<double> logits;  // size option_count

    Run(const LmConfig& c, const Offsets& o, std::span<const double> p,
        const VirtualPrefix* pre, std::span<const int> toks)
        : cfg(c), off(o), params(p), prefix(pre), tokens(toks) {}

    size_t attn_row_size(int pos) const { return static_cast<size_t>(Tpre + pos + 1); }
    bool virtual_row(int pos) const { return pos < Tp; }

    void forward(int answer_pos, int opt_count) {
        n = static_cast<int>(tokens.size());
        if (n < 1) fail(ErrorCategory::invalid_input, "empty token sequence");
        D = cfg.model_dim;
        F = D * cfg.ffn_mult;
        H = cfg.heads;
        hd = D / H;
        scale = 1.0 / std::sqrt(static_cast<double>(hd));
        option_count = opt_count;

        if (prefix) {
            for (double v : prefix->data)
                if (!std::isfinite(v))
                    fail(ErrorCategory::invalid_input, "virtual prefix contains non-finite entries");
            if (prefix->dim != D ||
                (prefix->mode == PrefixMode::prefix && prefix->layers != cfg.layers))
                fail(ErrorCategory::dimension, "virtual prefix shape does not match model config");
            if (prefix->mode == PrefixMode::prompt)
                Tp = prefix->virtual_tokens;
            else
                Tpre = prefix->virtual_tokens;
        }
        P = Tp + n;
        if (P > cfg.context_len)
            fail(ErrorCategory::dimension, "sequence length " + std::to_string(P) +
                                               " exceeds context length " +
                                               std::to_string(cfg.context_len));
        if (answer_pos < 0 || answer_pos >= n)
            fail(ErrorCategory::invalid_input, "answer position out of range");
        answer_stream = Tp + answer_pos;
        if (option_count < 1)
            fail(ErrorCategory::invalid_input, "option count must be >= 1");

        const double* tok_emb = params.data() + off.tok_emb;

        // No positional embeddings: order enters only through the causal
        // mask, so prompt rows do not displace what the frozen model learned
        // for the real tokens.
        layers.assign(static_cast<size_t>(cfg.layers), LayerCache{});
        std::vector<double> x(static_cast<size_t>(P) * static_cast<size_t>(D));
        for (int p = 0; p < P; ++p) {
            double* row = x.data() + static_cast<size_t>(p) * static_cast<size_t>(D);
            if (virtual_row(p)) {
                for (int d = 0; d < D; ++d) row[d] = prefix->at(p, d);
            } else {
                int tok = tokens[static_cast<size_t>(p - Tp)];
                for (int d = 0; d < D; ++d) row[d] = tok_emb[static_cast<size_t>(tok) * D + d];
            }
        }

        for (int l = 0; l < cfg.layers; ++l) {
            LayerCache& lc = layers[static_cast<size_t>(l)];
            const LayerOffsets& lo = off.layers[static_cast<size_t>(l)];
            lc.x_in = x;
            lc.ln1_mean.assign(static_cast<size_t>(P), 0.0);
            lc.ln1_rstd.assign(static_cast<size_t>(P), 0.0);
            lc.a.resize(x.size());
            lc.q.resize(x.size());
            lc.k.resize(x.size());
            lc.v.resize(x.size());
            lc.o.assign(x.size(), 0.0);

            for (int p = 0; p < P; ++p) {
                size_t row = static_cast<size_t>(p) * static_cast<size_t>(D);
                if (virtual_row(p)) {
                    std::copy(lc.x_in.begin() + static_cast<long>(row),
                              lc.x_in.begin() + static_cast<long>(row) + D,
                              lc.a.begin() + static_cast<long>(row));
                } else {
                    layer_norm(lc.x_in.data() + row, params.data() + lo.ln1_g,
                               params.data() + lo.ln1_b, lc.a.data() + row, D,
                               &lc.ln1_mean[static_cast<size_t>(p)],
                               &lc.ln1_rstd[static_cast<size_t>(p)]);
                }
                linear(params.data() + lo.wq, params.data() + lo.bq, lc.a.data() + row,
                       lc.q.data() + row, D, D);
                linear(params.data() + lo.wk, params.data() + lo.bk, lc.a.data() + row,
                       lc.k.data() + row, D, D);
                linear(params.data() + lo.wv, params.data() + lo.bv, lc.a.data() + row,
                       lc.v.data() + row, D, D);
            }

            lc.attn_offset.resize(static_cast<size_t>(P));
            size_t total = 0;
            for (int p = 0; p < P; ++p) {
                lc.attn_offset[static_cast<size_t>(p)] = total;
                total += attn_row_size(p) * static_cast<size_t>(H);
            }
            lc.attn.resize(total);

            // Causal attention; prefix key/value rows sit before position 0.
            for (int p = 0; p < P; ++p) {
                size_t slots = attn_row_size(p);
                for (int h = 0; h < H; ++h) {
                    const double* qh = lc.q.data() +
                                       static_cast<size_t>(p) * static_cast<size_t>(D) +
                                       static_cast<size_t>(h) * static_cast<size_t>(hd);
                    double* alpha = lc.attn.data() + lc.attn_offset[static_cast<size_t>(p)] +
                                    static_cast<size_t>(h) * slots;
                    double max_score = -std::numeric_limits<double>::infinity();
                    for (size_t s = 0; s < slots; ++s) {
                        const double* kh = slot_kv(lc, l, s, h, /*kv=*/0);
                        double score = 0.0;
                        for (int d = 0; d < hd; ++d) score += qh[d] * kh[d];
                        score *= scale;
                        alpha[s] = score;
                        max_score = std::max(max_score, score);
                    }
                    double denom = 0.0;
                    for (size_t s = 0; s < slots; ++s) {
                        alpha[s] = std::exp(alpha[s] - max_score);
                        denom += alpha[s];
                    }
                    double* oh = lc.o.data() + static_cast<size_t>(p) * static_cast<size_t>(D) +
                                 static_cast<size_t>(h) * static_cast<size_t>(hd);
                    for (size_t s = 0; s < slots; ++s) {
                        alpha[s] /= denom;
                        const double* vh = slot_kv(lc, l, s, h, /*kv=*/1);
                        for (int d = 0; d < hd; ++d) oh[d] += alpha[s] * vh[d];
                    }
                }
            }

            lc.x1.resize(x.size());
            for (int p = 0; p < P; ++p) {
                size_t row = static_cast<size_t>(p) * static_cast<size_t>(D);
                std::vector<double> att(static_cast<size_t>(D));
                linear(params.data() + lo.wo, params.data() + lo.bo, lc.o.data() + row, att.data(),
                       D, D);
                for (int d = 0; d < D; ++d)
                    lc.x1[row + static_cast<size_t>(d)] =
                        lc.x_in[row + static_cast<size_t>(d)] + att[static_cast<size_t>(d)];
            }

            lc.ln2_mean.resize(static_cast<size_t>(P));
            lc.ln2_rstd.resize(static_cast<size_t>(P));
            lc.m.resize(x.size());
            lc.h1.resize(static_cast<size_t>(P) * static_cast<size_t>(F));
            lc.a1.resize(lc.h1.size());
            for (int p = 0; p < P; ++p) {
                size_t row = static_cast<size_t>(p) * static_cast<size_t>(D);
                size_t frow = static_cast<size_t>(p) * static_cast<size_t>(F);
                layer_norm(lc.x1.data() + row, params.data() + lo.ln2_g,
                           params.data() + lo.ln2_b, lc.m.data() + row, D,
                           &lc.ln2_mean[static_cast<size_t>(p)], &lc.ln2_rstd[static_cast<size_t>(p)]);
                linear(params.data() + lo.w1, params.data() + lo.b1, lc.m.data() + row,
                       lc.h1.data() + frow, F, D);
                for (int f = 0; f < F; ++f)
                    lc.a1[frow + static_cast<size_t>(f)] = gelu(lc.h1[frow + static_cast<size_t>(f)]);
                std::vector<double> ff(static_cast<size_t>(D));
                linear(params.data() + lo.w2, params.data() + lo.b2, lc.a1.data() + frow, ff.data(),
                       D, F);
                for (int d = 0; d < D; ++d)
                    x[row + static_cast<size_t>(d)] =
                        lc.x1[row + static_cast<size_t>(d)] + ff[static_cast<size_t>(d)];
            }
        }

        x_final = std::move(x);
        y.resize(static_cast<size_t>(D));
        size_t arow = static_cast<size_t>(answer_stream) * static_cast<size_t>(D);
        layer_norm(x_final.data() + arow, params.data() + off.lnf_g, params.data() + off.lnf_b,
                   y.data(), D, &lnf_mean, &lnf_rstd);

        logits.resize(static_cast<size_t>(option_count));
        const double* wout = params.data() + off.wout;
        const double* bout = params.data() + off.bout;
        for (int o = 0; o < option_count; ++o) {
            const double* w = wout + static_cast<size_t>(o) * static_cast<size_t>(D);
            double s = bout[o];
            for (int d = 0; d < D; ++d) s += w[d] * y[static_cast<size_t>(d)];
            logits[static_cast<size_t>(o)] = s;
        }
    }

    // kv = 0 for keys, 1 for values; slot s is a prefix row when s < Tpre,
    // otherwise the computed row of real position s - Tpre.
    const double* slot_kv(const LayerCache& lc, int layer, size_t s, int h, int kv) const {
        if (s < static_cast<size_t>(Tpre))
            return prefix->data.data() +
                   ((s * static_cast<size_t>(cfg.layers) + static_cast<size_t>(layer)) * 2 +
                    static_cast<size_t>(kv)) *
                       static_cast<size_t>(D) +
                   static_cast<size_t>(h) * static_cast<size_t>(hd);
        const std::vector<double>& rows = kv == 0 ? lc.k : lc.v;
        return rows.data() + (s - static_cast<size_t>(Tpre)) * static_cast<size_t>(D) +
               static_cast<size_t>(h) * static_cast<size_t>(hd);
    }

    // Masked cross-entropy at target over the option logits.
    double loss_and_dlogits(int target, std::vector<double>& dlogits) const {
        double mx = *std::max_element(logits.begin(), logits.end());
        double denom = 0.0;
        for (double v : logits) denom += std::exp(v - mx);
        double log_denom = std::log(denom) + mx;
        dlogits.resize(logits.size());
        for (size_t o = 0; o < logits.size(); ++o)
            dlogits[o] = std::exp(logits[o] - log_denom);
        dlogits[static_cast<size_t>(target)] -= 1.0;
        return log_denom - logits[static_cast<size_t>(target)];
    }

    void backward(const std::vector<double>& dlogits, std::vector<double>* pg,
                  VirtualPrefix* prefix_grads) {
        auto lparam = [&](size_t at) { return params.data() + at; };
        auto gparam = [&](size_t at) -> double* { return pg ? pg->data() + at : nullptr; };

        // Head and final layer norm.
        std::vector<double> dy(static_cast<size_t>(D), 0.0);
        const double* wout = params.data() + off.wout;
        for (size_t o = 0; o < dlogits.size(); ++o) {
            const double* w = wout + o * static_cast<size_t>(D);
            double g = dlogits[o];
            for (int d = 0; d < D; ++d) dy[static_cast<size_t>(d)] += w[d] * g;
            if (pg) {
                double* dwout = pg->data() + off.wout + o * static_cast<size_t>(D);
                for (int d = 0; d < D; ++d) dwout[d] += g * y[static_cast<size_t>(d)];
                (*pg)[off.bout + o] += g;
            }
        }

        std::vector<double> dx(static_cast<size_t>(P) * static_cast<size_t>(D), 0.0);
        size_t arow = static_cast<size_t>(answer_stream) * static_cast<size_t>(D);
        layer_norm_backward(x_final.data() + arow, lparam(off.lnf_g), lnf_mean, lnf_rstd, dy.data(),
                            dx.data() + arow, gparam(off.lnf_g), gparam(off.lnf_b), D);

        std::vector<double> dx1(dx.size()), da(dx.size()), dq(dx.size()), dk(dx.size()),
            dv(dx.size()), do_(dx.size()), dm(static_cast<size_t>(D)), dh1(static_cast<size_t>(F)),
            da1(static_cast<size_t>(F)), datt(static_cast<size_t>(D));

        for (int l = cfg.layers - 1; l >= 0; --l) {
            LayerCache& lc = layers[static_cast<size_t>(l)];
            const LayerOffsets& lo = off.layers[static_cast<size_t>(l)];

            // FFN: dx holds the gradient at the layer output (x2).
            std::fill(dx1.begin(), dx1.end(), 0.0);
            for (int p = 0; p < P; ++p) {
                size_t row = static_cast<size_t>(p) * static_cast<size_t>(D);
                size_t frow = static_cast<size_t>(p) * static_cast<size_t>(F);
                const double* df = dx.data() + row;
                for (int d = 0; d < D; ++d) dx1[row + static_cast<size_t>(d)] += df[d];

                std::fill(da1.begin(), da1.end(), 0.0);
                linear_backward(lparam(lo.w2), lc.a1.data() + frow, df, da1.data(), gparam(lo.w2),
                                gparam(lo.b2), D, F);
                for (int f = 0; f < F; ++f)
                    dh1[static_cast<size_t>(f)] =
                        da1[static_cast<size_t>(f)] * gelu_grad(lc.h1[frow + static_cast<size_t>(f)]);
                std::fill(dm.begin(), dm.end(), 0.0);
                linear_backward(lparam(lo.w1), lc.m.data() + row, dh1.data(), dm.data(),
                                gparam(lo.w1), gparam(lo.b1), F, D);
                layer_norm_backward(lc.x1.data() + row, lparam(lo.ln2_g),
                                    lc.ln2_mean[static_cast<size_t>(p)],
                                    lc.ln2_rstd[static_cast<size_t>(p)], dm.data(),
                                    dx1.data() + row, gparam(lo.ln2_g), gparam(lo.ln2_b), D);
            }

            // Attention block: dx1 holds the gradient at x1 = x_in + attn_out.
            std::fill(dx.begin(), dx.end(), 0.0);  // becomes gradient at x_in
            std::fill(da.begin(), da.end(), 0.0);
            std::fill(dq.begin(), dq.end(), 0.0);
            std::fill(dk.begin(), dk.end(), 0.0);
            std::fill(dv.begin(), dv.end(), 0.0);
            std::fill(do_.begin(), do_.end(), 0.0);

            for (int p = 0; p < P; ++p) {
                size_t row = static_cast<size_t>(p) * static_cast<size_t>(D);
                for (int d = 0; d < D; ++d)
                    dx[row + static_cast<size_t>(d)] += dx1[row + static_cast<size_t>(d)];
                std::fill(datt.begin(), datt.end(), 0.0);
                for (int d = 0; d < D; ++d)
                    datt[static_cast<size_t>(d)] = dx1[row + static_cast<size_t>(d)];
                linear_backward(lparam(lo.wo), lc.o.data() + row, datt.data(), do_.data() + row,
                                gparam(lo.wo), gparam(lo.bo), D, D);
            }

            for (int p = 0; p < P; ++p) {
                size_t slots = attn_row_size(p);
                for (int h = 0; h < H; ++h) {
                    const double* alpha = lc.attn.data() + lc.attn_offset[static_cast<size_t>(p)] +
                                          static_cast<size_t>(h) * slots;
                    const double* doh = do_.data() + static_cast<size_t>(p) * static_cast<size_t>(D) +
                                        static_cast<size_t>(h) * static_cast<size_t>(hd);
                    const double* qh = lc.q.data() + static_cast<size_t>(p) * static_cast<size_t>(D) +
                                       static_cast<size_t>(h) * static_cast<size_t>(hd);

                    double inner = 0.0;
                    std::vector<double> dalpha(slots);
                    for (size_t s = 0; s < slots; ++s) {
                        const double* vh = slot_kv(lc, l, s, h, 1);
                        double da_s = 0.0;
                        for (int d = 0; d < hd; ++d) da_s += doh[d] * vh[d];
                        dalpha[s] = da_s;
                        inner += alpha[s] * da_s;
                    }
                    double* dqh = dq.data() + static_cast<size_t>(p) * static_cast<size_t>(D) +
                                  static_cast<size_t>(h) * static_cast<size_t>(hd);
                    for (size_t s = 0; s < slots; ++s) {
                        double dsc = alpha[s] * (dalpha[s] - inner);
                        const double* kh = slot_kv(lc, l, s, h, 0);
                        for (int d = 0; d < hd; ++d) dqh[d] += scale * dsc * kh[d];
                        if (s < static_cast<size_t>(Tpre)) {
                            if (prefix_grads) {
                                double* gk = prefix_grads->data.data() +
                                             ((s * static_cast<size_t>(cfg.layers) +
                                               static_cast<size_t>(l)) *
                                              2) *
                                                 static_cast<size_t>(D) +
                                             static_cast<size_t>(h) * static_cast<size_t>(hd);
                                double* gv = gk + static_cast<size_t>(D);
                                for (int d = 0; d < hd; ++d) {
                                    gk[d] += scale * dsc * qh[d];
                                    gv[d] += alpha[s] * doh[d];
                                }
                            }
                        } else {
                            size_t real = s - static_cast<size_t>(Tpre);
                            double* dkh = dk.data() + real * static_cast<size_t>(D) +
                                          static_cast<size_t>(h) * static_cast<size_t>(hd);
                            double* dvh = dv.data() + real * static_cast<size_t>(D) +
                                          static_cast<size_t>(h) * static_cast<size_t>(hd);
                            for (int d = 0; d < hd; ++d) {
                                dkh[d] += scale * dsc * qh[d];
                                dvh[d] += alpha[s] * doh[d];
                            }
                        }
                    }
                }
            }

            for (int p = 0; p < P; ++p) {
                size_t row = static_cast<size_t>(p) * static_cast<size_t>(D);
                linear_backward(lparam(lo.wq), lc.a.data() + row, dq.data() + row, da.data() + row,
                                gparam(lo.wq), gparam(lo.bq), D, D);
                linear_backward(lparam(lo.wk), lc.a.data() + row, dk.data() + row, da.data() + row,
                                gparam(lo.wk), gparam(lo.bk), D, D);
                linear_backward(lparam(lo.wv), lc.a.data() + row, dv.data() + row, da.data() + row,
                                gparam(lo.wv), gparam(lo.bv), D, D);
                if (virtual_row(p)) {
                    for (int d = 0; d < D; ++d)
                        dx[row + static_cast<size_t>(d)] += da[row + static_cast<size_t>(d)];
                } else {
                    layer_norm_backward(lc.x_in.data() + row, lparam(lo.ln1_g),
                                        lc.ln1_mean[static_cast<size_t>(p)],
                                        lc.ln1_rstd[static_cast<size_t>(p)], da.data() + row,
                                        dx.data() + row, gparam(lo.ln1_g), gparam(lo.ln1_b), D);
                }
            }
            // dx now carries the gradient entering this layer.
        }

        // Embeddings / prompt rows.
        for (int p = 0; p < P; ++p) {
            size_t row = static_cast<size_t>(p) * static_cast<size_t>(D);
            if (virtual_row(p)) {
                if (prefix_grads)
                    for (int d = 0; d < D; ++d)
                        prefix_grads->at(p, d) += dx[row + static_cast<size_t>(d)];
            } else if (pg) {
                int tok = tokens[static_cast<size_t>(p - Tp)];
                double* gt = pg->data() + off.tok_emb + static_cast<size_t>(tok) * static_cast<size_t>(D);
                for (int d = 0; d < D; ++d) gt[d] += dx[row + static_cast<size_t>(d)];
            }
        }
    }
};

}  // namespace

// ---------------------------------------------------------------------------
// FrozenAnswerModel
// ---------------------------------------------------------------------------

FrozenAnswerModel::FrozenAnswerModel(LmConfig config, Vocabulary vocab)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
    if (config_.model_dim % config_.heads != 0)
        fail(ErrorCategory::config, "model_dim must be divisible by heads");
    if (config_.layers < 1 || config_.model_dim < 1 || config_.context_len < 1)
        fail(ErrorCategory::config, "invalid LM config");
    Offsets off = make_offsets(config_, vocab_.size());
    params_.resize(off.total);

    Rng rng(mix_seed(config_.seed, "toylm-init"));
    std::normal_distribution<double> gauss(0.0, config_.init_scale);
    for (double& x : params_) x = gauss(rng);
    // Biases zero, layer-norm gains one.
    const int D = config_.model_dim;
    const int F = D * config_.ffn_mult;
    auto ones = [&](size_t at, int count) {
        for (int i = 0; i < count; ++i) params_[at + static_cast<size_t>(i)] = 1.0;
    };
    auto zeros = [&](size_t at, int count) {
        for (int i = 0; i < count; ++i) params_[at + static_cast<size_t>(i)] = 0.0;
    };
    for (const LayerOffsets& lo : off.layers) {
        ones(lo.ln1_g, D);
        zeros(lo.ln1_b, D);
        zeros(lo.bq, D);
        zeros(lo.bk, D);
        zeros(lo.bv, D);
        zeros(lo.bo, D);
        ones(lo.ln2_g, D);
        zeros(lo.ln2_b, D);
        zeros(lo.b1, F);
        zeros(lo.b2, D);
    }
    ones(off.lnf_g, D);
    zeros(off.lnf_b, D);
    zeros(off.bout, vocab_.size());
}

void FrozenAnswerModel::add_to_parameters(std::span<const double> delta) {
    if (frozen_)
        fail(ErrorCategory::frozen_violation, "attempted to update a frozen answer model");
    if (delta.size() != params_.size())
        fail(ErrorCategory::dimension, "parameter update has wrong length");
    for (size_t i = 0; i < params_.size(); ++i) params_[i] += delta[i];
}

void FrozenAnswerModel::set_parameters(std::vector<double> params) {
    if (frozen_)
        fail(ErrorCategory::frozen_violation, "attempted to update a frozen answer model");
    if (params.size() != params_.size())
        fail(ErrorCategory::dimension, "parameter vector has wrong length");
    params_ = std::move(params);
}

std::vector<int> FrozenAnswerModel::question_tokens(const std::string& question_id) const {
    return {vocab_.question_token(question_id), vocab_.separator_token()};
}

namespace {

void check_tokens(std::span<const int> tokens, int vocab_size) {
    for (int t : tokens)
        if (t < 0 || t >= vocab_size)
            fail(ErrorCategory::vocab, "token " + std::to_string(t) + " outside the vocabulary");
}

}  // namespace

std::vector<double> FrozenAnswerModel::forward_logits_at(const VirtualPrefix* prefix,
                                                         std::span<const int> tokens,
                                                         int answer_pos, int option_count) const {
    check_tokens(tokens, vocab_.size());
    if (option_count < 1 || option_count > vocab_.max_options())
        fail(ErrorCategory::invalid_input, "option count outside the option-token range");
    Offsets off = make_offsets(config_, vocab_.size());
    Run run(config_, off, params_, prefix, tokens);
    run.forward(answer_pos, option_count);

    std::vector<double> out(static_cast<size_t>(vocab_.max_options()),
                            -std::numeric_limits<double>::infinity());
    for (int o = 0; o < option_count; ++o) out[static_cast<size_t>(o)] = run.logits[static_cast<size_t>(o)];
    return out;
}

std::vector<double> FrozenAnswerModel::forward_with_prefix(const VirtualPrefix* prefix,
                                                           std::span<const int> tokens,
                                                           int option_count) const {
    return forward_logits_at(prefix, tokens, static_cast<int>(tokens.size()) - 1, option_count);
}

double FrozenAnswerModel::loss_and_gradients(const VirtualPrefix* prefix,
                                             std::span<const int> tokens, int option_count,
                                             int target_option, std::vector<double>* param_grads,
                                             VirtualPrefix* prefix_grads) const {
    check_tokens(tokens, vocab_.size());
    if (target_option < 0 || target_option >= option_count)
        fail(ErrorCategory::invalid_response, "target option outside the question's options");
    Offsets off = make_offsets(config_, vocab_.size());
    if (param_grads && param_grads->size() != params_.size())
        param_grads->assign(params_.size(), 0.0);
    Run run(config_, off, params_, prefix, tokens);
    run.forward(static_cast<int>(tokens.size()) - 1, option_count);
    std::vector<double> dlogits;
    double loss = run.loss_and_dlogits(target_option, dlogits);
    run.backward(dlogits, param_grads, prefix_grads);
    return loss;
}

VirtualPrefix FrozenAnswerModel::prefix_gradient(const VirtualPrefix& prefix,
                                                 std::span<const int> tokens, int option_count,
                                                 int target_option, double* loss_out) const {
    VirtualPrefix grads = prefix;
    std::fill(grads.data.begin(), grads.data.end(), 0.0);
    double loss = loss_and_gradients(&prefix, tokens, option_count, target_option, nullptr, &grads);
    if (loss_out) *loss_out = loss;
    return grads;
}

std::vector<std::vector<double>> FrozenAnswerModel::attention_rows(
    const VirtualPrefix* prefix, std::span<const int> tokens) const {
    check_tokens(tokens, vocab_.size());
    Offsets off = make_offsets(config_, vocab_.size());
    Run run(config_, off, params_, prefix, tokens);
    run.forward(static_cast<int>(tokens.size()) - 1, 1);

    std::vector<std::vector<double>> rows;
    for (int l = 0; l < config_.layers; ++l) {
        const auto& lc = run.layers[static_cast<size_t>(l)];
        for (int p = 0; p < run.P; ++p) {
            size_t slots = run.attn_row_size(p);
            for (int h = 0; h < config_.heads; ++h) {
                const double* alpha = lc.attn.data() + lc.attn_offset[static_cast<size_t>(p)] +
                                      static_cast<size_t>(h) * slots;
                rows.emplace_back(alpha, alpha + slots);
            }
        }
    }
    return rows;
}

std::string FrozenAnswerModel::fingerprint() const {
    uint64_t h = kFnvOffset;
    auto mix_int = [&](int64_t v) {
        h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&v), sizeof(v)), h);
    };
    mix_int(config_.layers);
    mix_int(config_.model_dim);
    mix_int(config_.heads);
    mix_int(config_.context_len);
    mix_int(config_.ffn_mult);
    mix_int(static_cast<int64_t>(config_.seed));
    mix_int(vocab_.size());
    for (const auto& id : vocab_.question_ids()) h = fnv1a64(id, h);
    for (const auto& [t, c] : vocab_.demographic_pairs()) h = fnv1a64(t + "=" + c, h);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(params_.data()),
                                 params_.size() * sizeof(double)),
                h);
    return hash_hex(h);
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

FrozenAnswerModel pretrain_toy_lm(const ResponseMatrix& matrix,
                                  const std::vector<ResponseKey>& keys,
                                  const LmConfig& config) {
    if (keys.empty()) fail(ErrorCategory::invalid_input, "pretrain_toy_lm needs a non-empty key set");

    // Population-majority target per question; ties go to the lowest index.
    std::map<int, std::vector<int>> counts;
    for (ResponseKey key : keys) {
        auto& c = counts[key.question];
        c.resize(static_cast<size_t>(matrix.question(key.question).option_count()), 0);
        ++c[static_cast<size_t>(matrix.option_index(key))];
    }
    struct Example {
        std::vector<int> tokens;
        int option_count;
        int target;
    };
    FrozenAnswerModel model(config, Vocabulary::from_matrix(matrix));
    std::vector<Example> examples;
    for (const auto& [q_idx, c] : counts) {
        Example ex;
        ex.tokens = model.question_tokens(matrix.question(q_idx).id);
        ex.option_count = static_cast<int>(c.size());
        ex.target = static_cast<int>(std::max_element(c.begin(), c.end()) - c.begin());
        examples.push_back(std::move(ex));
    }

    const size_t n_params = model.parameters().size();
    std::vector<double> grads(n_params), m(n_params, 0.0), v(n_params, 0.0), step(n_params);
    int64_t t = 0;

    std::vector<size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(config.seed, "toylm-shuffle"));

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
            std::fill(grads.begin(), grads.end(), 0.0);
            for (size_t b = start; b < end; ++b) {
                const Example& ex = examples[order[b]];
                epoch_loss += model.loss_and_gradients(nullptr, ex.tokens, ex.option_count,
                                                       ex.target, &grads, nullptr);
            }
            double inv = 1.0 / static_cast<double>(end - start);
            ++t;
            const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
            const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
            for (size_t i = 0; i < n_params; ++i) {
                double g = grads[i] * inv;
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
                v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
                step[i] = -config.learning_rate * (m[i] / bc1) /
                          (std::sqrt(v[i] / bc2) + config.adam_eps);
            }
            model.add_to_parameters(step);
        }
        epoch_loss /= static_cast<double>(examples.size());
        if (!std::isfinite(epoch_loss))
            fail(ErrorCategory::training_diverged,
                 "toy LM pretraining diverged at epoch " + std::to_string(epoch));
        if (epoch_loss < config.target_loss) {
            bool all_majority = true;
            for (const Example& ex : examples) {
                std::vector<double> logits =
                    model.forward_with_prefix(nullptr, ex.tokens, ex.option_count);
                int best = 0;
                for (int o = 1; o < ex.option_count; ++o)
                    if (logits[static_cast<size_t>(o)] > logits[static_cast<size_t>(best)]) best = o;
                if (best != ex.target) {
                    all_majority = false;
                    break;
                }
            }
            if (all_majority) break;
        }
    }

    model.freeze();
    return model;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

void save_lm(const std::string& path, const FrozenAnswerModel& model,
             const std::string& dataset_hash) {
    ordered_json j;
    j["format"] = "toylm-v1";
    j["dataset_hash"] = dataset_hash;
    const LmConfig& c = model.config();
    j["config"] = {{"layers", c.layers},       {"model_dim", c.model_dim},
                   {"heads", c.heads},         {"context_len", c.context_len},
                   {"ffn_mult", c.ffn_mult},   {"seed", c.seed},
                   {"init_scale", c.init_scale}, {"learning_rate", c.learning_rate},
                   {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
                   {"target_loss", c.target_loss}};
    const Vocabulary& v = model.vocab();
    json demo = json::array();
    for (const auto& [t, cat] : v.demographic_pairs()) demo.push_back({t, cat});
    j["vocab"] = {{"max_options", v.max_options()},
                  {"question_ids", v.question_ids()},
                  {"demographic_pairs", demo}};
    j["fingerprint"] = model.fingerprint();
    j["params"] = std::vector<double>(model.parameters().begin(), model.parameters().end());

    std::ofstream out(path);
    if (!out) fail(ErrorCategory::io, "cannot write " + path);
    out << j.dump() << "\n";
}

LoadedLm load_lm(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCategory::io, "cannot open LM file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCategory::parse, path + ": " + e.what());
    }
    if (j.value("format", "") != "toylm-v1")
        fail(ErrorCategory::incompatibility, path + ": unsupported LM format");

    LmConfig c;
    const json& jc = j.at("config");
    c.layers = jc.at("layers").get<int>();
    c.model_dim = jc.at("model_dim").get<int>();
    c.heads = jc.at("heads").get<int>();
    c.context_len = jc.at("context_len").get<int>();
    c.ffn_mult = jc.at("ffn_mult").get<int>();
    c.seed = jc.at("seed").get<uint64_t>();
    c.init_scale = jc.at("init_scale").get<double>();
    c.learning_rate = jc.at("learning_rate").get<double>();
    c.batch_size = jc.at("batch_size").get<int>();
    c.max_epochs = jc.at("max_epochs").get<int>();
    c.target_loss = jc.at("target_loss").get<double>();

    std::vector<std::pair<std::string, std::string>> demo_pairs;
    for (const auto& pair : j.at("vocab").at("demographic_pairs"))
        demo_pairs.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
    Vocabulary v = Vocabulary::from_parts(
        j.at("vocab").at("max_options").get<int>(),
        j.at("vocab").at("question_ids").get<std::vector<std::string>>(), std::move(demo_pairs));

    LoadedLm out{FrozenAnswerModel(c, v), j.value("dataset_hash", "")};
    std::vector<double> params = j.at("params").get<std::vector<double>>();
    if (params.size() != out.model.parameters().size())
        fail(ErrorCategory::incompatibility, path + ": parameter count does not match config");
    out.model.set_parameters(std::move(params));
    out.model.freeze();
    if (j.contains("fingerprint") && j.at("fingerprint").get<std::string>() != out.model.fingerprint())
        fail(ErrorCategory::incompatibility, path + ": fingerprint mismatch (corrupt artifact)");
    return out;
}

}  // namespace steer
