#pragma once

#include <map>
#include <string>
#include <vector>

#include "din/autodiff.hpp"
#include "din/dataset.hpp"
#include "din/diffusion.hpp"
#include "din/types.hpp"

namespace din {

struct ModelConfig {
    int d = 64;
    int heads = 1;
    int enc_blocks = 2;
    int ffn_mult = 4;
    int patch = 4;
    int max_q_tokens = 32;
    int time_embed = 32;
    int denoiser_hidden = 128;
    int token_vocab_cap = 4096;
    int L = 0;
    std::string classifier_input = "cond";  // "cond" or "fused"
    uint64_t init_seed = 1;
};

struct TokenVocab {
    std::vector<std::string> tokens;  // index 0 is the unknown token
    std::map<std::string, int> ids;

    static TokenVocab build(const std::vector<std::string>& questions, int cap);
    int lookup(const std::string& token) const;
    int size() const { return static_cast<int>(tokens.size()); }
};

std::vector<std::string> tokenize(const std::string& text);

ProtoAnswer proto_from_logits(const Vec& logits);

// The full net: tiny patch/token transformer encoders, key/value fusion, the
// answer condition generator, the auxiliary classifier head, and the label
// denoiser MLP. All learnable state lives in a flat name-keyed store; forward
// passes build autodiff tapes so training and inference share one code path.
class Model {
public:
    Model(ModelConfig cfg, AnswerVocabulary vocab, TokenVocab tokens);

    struct AcgOut {
        ad::Var f_fused;    // L x d
        ad::Var f_cond;     // 1 x L condition logits
        ad::Var cond_prob;  // softmax(f_cond)
    };

    struct ForwardOut {
        ad::Var f_v, f_q;
        ad::Var keys, values;
        AcgOut acg;
        ad::Var proto_logits;  // 1 x L
    };

    ad::Var encode_image(ad::Tape& tp, const Image& image) const;
    ad::Var encode_question(ad::Tape& tp, const std::string& question) const;
    std::pair<ad::Var, ad::Var> fuse_to_kv(ad::Tape& tp, ad::Var fv, ad::Var fq) const;
    AcgOut acg_forward(ad::Tape& tp, ad::Var keys, ad::Var values) const;
    ad::Var classifier_logits(ad::Tape& tp, const AcgOut& acg) const;
    ForwardOut forward(ad::Tape& tp, const Image& image, const std::string& question) const;

    ad::Var denoiser_forward(ad::Tape& tp, ad::Var y_t, ad::Var cond, int t) const;
    Vec denoise_predict(const Vec& y_t, const Vec& cond, int t) const;

    ParamStore& params() const { return params_; }
    Param& param(const std::string& name) const { return params_.at(name); }

    const ModelConfig& config() const { return cfg_; }
    const AnswerVocabulary& vocab() const { return vocab_; }
    const TokenVocab& token_vocab() const { return tokens_; }

private:
    ModelConfig cfg_;
    AnswerVocabulary vocab_;
    TokenVocab tokens_;
    // Mutable so const forward passes can hand out Param references to tapes;
    // gradient writes stay tape-local until the training loop folds them in.
    mutable ParamStore params_;

    struct AttnRef {
        Param *wq, *wk, *wv, *wo;
    };
    ad::Var attend(ad::Tape& tp, ad::Var q, ad::Var k, ad::Var v, const AttnRef& ap) const;
    ad::Var encoder_stack(ad::Tape& tp, ad::Var x, const std::string& prefix) const;
    void build_params();
};

// Adapter exposing the model's denoiser under the sampling contract.
class ModelDenoiser : public diffusion::Denoiser {
public:
    explicit ModelDenoiser(const Model& m) : model_(m) {}
    Vec predict(const Vec& y_t, const Vec& cond, int t) const override {
        return model_.denoise_predict(y_t, cond, t);
    }

private:
    const Model& model_;
};

// Checkpoints hold a config echo (flat strings), both vocabularies, and every
// parameter array; save/load round-trips bit-exactly.
void save_checkpoint(const Model& model, const std::map<std::string, std::string>& extra_config,
                     const std::string& path);

struct Checkpoint {
    Model model;
    std::map<std::string, std::string> config;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace din
