#include "din/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

#include "din/kernels.hpp"
#include "din/rng.hpp"

namespace din {

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        } else {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

TokenVocab TokenVocab::build(const std::vector<std::string>& questions, int cap) {
    std::map<std::string, int64_t> freq;
    for (const auto& q : questions)
        for (const auto& tok : tokenize(q)) ++freq[tok];

    std::vector<std::pair<std::string, int64_t>> order(freq.begin(), freq.end());
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    TokenVocab v;
    v.tokens.push_back("<unk>");
    v.ids["<unk>"] = 0;
    for (const auto& [tok, f] : order) {
        if (static_cast<int>(v.tokens.size()) >= cap) break;
        v.ids[tok] = static_cast<int>(v.tokens.size());
        v.tokens.push_back(tok);
    }
    return v;
}

int TokenVocab::lookup(const std::string& token) const {
    auto it = ids.find(token);
    return it == ids.end() ? 0 : it->second;
}

ProtoAnswer proto_from_logits(const Vec& logits) {
    Vec p = logits;
    kernels::softmax_row(p.data(), static_cast<int>(p.size()));
    return ProtoAnswer::from_probs(std::move(p));
}

namespace {

Mat xavier(Rng& rng, int rows, int cols) {
    Mat m(rows, cols);
    const double limit = std::sqrt(6.0 / (rows + cols));
    for (double& v : m.a) v = (2.0 * rng.uniform() - 1.0) * limit;
    return m;
}

Mat normal_init(Rng& rng, int rows, int cols, double scale) {
    Mat m(rows, cols);
    for (double& v : m.a) v = scale * rng.normal();
    return m;
}

Mat ones_row(int n) {
    Mat m(1, n);
    m.fill(1.0);
    return m;
}

std::vector<int> iota_ids(int n) {
    std::vector<int> ids(n);
    for (int i = 0; i < n; ++i) ids[i] = i;
    return ids;
}

}  // namespace

// Learned position tables start at zero so zero inputs encode to zero.
constexpr int kMaxPatches = 64;

Model::Model(ModelConfig cfg, AnswerVocabulary vocab, TokenVocab tokens)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)), tokens_(std::move(tokens)) {
    require(cfg_.d > 0 && cfg_.d % cfg_.heads == 0, "model: d must be divisible by heads");
    if (cfg_.L == 0) cfg_.L = vocab_.size();
    require(cfg_.L == vocab_.size(), "model: config L does not match vocabulary");
    build_params();
}

void Model::build_params() {
    Rng rng(derive_seed(cfg_.init_seed, 0x90d31ULL));
    const int d = cfg_.d;
    const int ff = cfg_.ffn_mult * d;
    const double emb_scale = 1.0 / std::sqrt(static_cast<double>(d));

    auto make_block = [&](const std::string& p) {
        params_.create(p + ".ln1.g", ones_row(d));
        params_.create(p + ".ln1.b", Mat(1, d));
        params_.create(p + ".attn.wq", xavier(rng, d, d));
        params_.create(p + ".attn.wk", xavier(rng, d, d));
        params_.create(p + ".attn.wv", xavier(rng, d, d));
        params_.create(p + ".attn.wo", xavier(rng, d, d));
        params_.create(p + ".ln2.g", ones_row(d));
        params_.create(p + ".ln2.b", Mat(1, d));
        params_.create(p + ".ffn.w1", xavier(rng, d, ff));
        params_.create(p + ".ffn.b1", Mat(1, ff));
        params_.create(p + ".ffn.w2", xavier(rng, ff, d));
        params_.create(p + ".ffn.b2", Mat(1, d));
    };

    params_.create("venc.patch.w", xavier(rng, cfg_.patch * cfg_.patch, d));
    params_.create("venc.patch.b", Mat(1, d));
    params_.create("venc.pos", Mat(kMaxPatches, d));
    for (int b = 0; b < cfg_.enc_blocks; ++b) make_block("venc.b" + std::to_string(b));

    params_.create("tenc.emb", normal_init(rng, tokens_.size(), d, emb_scale));
    params_.create("tenc.pos", Mat(cfg_.max_q_tokens, d));
    for (int b = 0; b < cfg_.enc_blocks; ++b) make_block("tenc.b" + std::to_string(b));

    params_.create("fuse.wk", xavier(rng, d, d));
    params_.create("fuse.wv", xavier(rng, d, d));

    params_.create("acg.ans.emb", normal_init(rng, cfg_.L, d, emb_scale));
    params_.create("acg.ln1.g", ones_row(d));
    params_.create("acg.ln1.b", Mat(1, d));
    params_.create("acg.self.wq", xavier(rng, d, d));
    params_.create("acg.self.wk", xavier(rng, d, d));
    params_.create("acg.self.wv", xavier(rng, d, d));
    params_.create("acg.self.wo", xavier(rng, d, d));
    params_.create("acg.ln2.g", ones_row(d));
    params_.create("acg.ln2.b", Mat(1, d));
    params_.create("acg.cross.wq", xavier(rng, d, d));
    params_.create("acg.cross.wk", xavier(rng, d, d));
    params_.create("acg.cross.wv", xavier(rng, d, d));
    params_.create("acg.cross.wo", xavier(rng, d, d));
    params_.create("acg.ln3.g", ones_row(d));
    params_.create("acg.ln3.b", Mat(1, d));
    params_.create("acg.ffn.w1", xavier(rng, d, ff));
    params_.create("acg.ffn.b1", Mat(1, ff));
    params_.create("acg.ffn.w2", xavier(rng, ff, d));
    params_.create("acg.ffn.b2", Mat(1, d));
    params_.create("acg.reduce.w", xavier(rng, d, 1));
    params_.create("acg.reduce.b", Mat(1, 1));

    if (cfg_.classifier_input == "fused") {
        params_.create("cls.fused.w", xavier(rng, d, 1));
        params_.create("cls.fused.b", Mat(1, 1));
    } else {
        require(cfg_.classifier_input == "cond", "model: classifier_input must be cond|fused");
        params_.create("cls.w", xavier(rng, cfg_.L, cfg_.L));
        params_.create("cls.b", Mat(1, cfg_.L));
    }

    const int den_in = 2 * cfg_.L + cfg_.time_embed;
    params_.create("den.fc1.w", xavier(rng, den_in, cfg_.denoiser_hidden));
    params_.create("den.fc1.b", Mat(1, cfg_.denoiser_hidden));
    params_.create("den.fc2.w", xavier(rng, cfg_.denoiser_hidden, cfg_.denoiser_hidden));
    params_.create("den.fc2.b", Mat(1, cfg_.denoiser_hidden));
    params_.create("den.out.w", xavier(rng, cfg_.denoiser_hidden, cfg_.L));
    params_.create("den.out.b", Mat(1, cfg_.L));
}

ad::Var Model::attend(ad::Tape& tp, ad::Var q, ad::Var k, ad::Var v, const AttnRef& ap) const {
    using ad::Var;
    const int d = cfg_.d;
    const int dh = d / cfg_.heads;
    Var qp = tp.matmul_nn(q, tp.use(*ap.wq));
    Var kp = tp.matmul_nn(k, tp.use(*ap.wk));
    Var vp = tp.matmul_nn(v, tp.use(*ap.wv));
    Var mixed;
    for (int h = 0; h < cfg_.heads; ++h) {
        Var qh = cfg_.heads == 1 ? qp : tp.slice_cols(qp, h * dh, (h + 1) * dh);
        Var kh = cfg_.heads == 1 ? kp : tp.slice_cols(kp, h * dh, (h + 1) * dh);
        Var vh = cfg_.heads == 1 ? vp : tp.slice_cols(vp, h * dh, (h + 1) * dh);
        Var scores = tp.scale(tp.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
        Var probs = tp.softmax_rows(scores);
        Var oh = tp.matmul_nn(probs, vh);
        mixed = h == 0 ? oh : tp.concat_cols(mixed, oh);
    }
    return tp.matmul_nn(mixed, tp.use(*ap.wo));
}

ad::Var Model::encoder_stack(ad::Tape& tp, ad::Var x, const std::string& prefix) const {
    using ad::Var;
    auto& ps = params_;
    for (int b = 0; b < cfg_.enc_blocks; ++b) {
        const std::string p = prefix + ".b" + std::to_string(b);
        AttnRef attn{&ps.at(p + ".attn.wq"), &ps.at(p + ".attn.wk"), &ps.at(p + ".attn.wv"),
                     &ps.at(p + ".attn.wo")};
        Var n1 = tp.layer_norm(x, tp.use(ps.at(p + ".ln1.g")), tp.use(ps.at(p + ".ln1.b")));
        x = tp.add(x, attend(tp, n1, n1, n1, attn));
        Var n2 = tp.layer_norm(x, tp.use(ps.at(p + ".ln2.g")), tp.use(ps.at(p + ".ln2.b")));
        Var h = tp.gelu(tp.add_row_vec(tp.matmul_nn(n2, tp.use(ps.at(p + ".ffn.w1"))),
                                       tp.use(ps.at(p + ".ffn.b1"))));
        Var f = tp.add_row_vec(tp.matmul_nn(h, tp.use(ps.at(p + ".ffn.w2"))),
                               tp.use(ps.at(p + ".ffn.b2")));
        x = tp.add(x, f);
    }
    return x;
}

ad::Var Model::encode_image(ad::Tape& tp, const Image& image) const {
    const int patch = cfg_.patch;
    require(image.rows > 0 && image.cols > 0, "encode_image: empty image");
    require(image.rows % patch == 0 && image.cols % patch == 0,
            "encode_image: image dimensions not divisible by patch size");
    const int pr = image.rows / patch;
    const int pc = image.cols / patch;
    require(pr * pc <= kMaxPatches, "encode_image: too many patches for the position table");
    Mat patches(pr * pc, patch * patch);
    for (int bi = 0; bi < pr; ++bi)
        for (int bj = 0; bj < pc; ++bj) {
            double* row = patches.row(bi * pc + bj);
            for (int i = 0; i < patch; ++i)
                for (int j = 0; j < patch; ++j)
                    row[i * patch + j] = image.at(bi * patch + i, bj * patch + j);
        }

    auto& ps = params_;
    ad::Var x = tp.add_row_vec(tp.matmul_nn(tp.input(std::move(patches)), tp.use(ps.at("venc.patch.w"))),
                               tp.use(ps.at("venc.patch.b")));
    x = tp.add(x, tp.embed_rows(tp.use(ps.at("venc.pos")), iota_ids(pr * pc)));
    return encoder_stack(tp, x, "venc");
}

ad::Var Model::encode_question(ad::Tape& tp, const std::string& question) const {
    auto toks = tokenize(question);
    require(!toks.empty(), "encode_question: empty question");
    if (static_cast<int>(toks.size()) > cfg_.max_q_tokens) toks.resize(cfg_.max_q_tokens);
    std::vector<int> ids(toks.size());
    for (size_t i = 0; i < toks.size(); ++i) ids[i] = tokens_.lookup(toks[i]);

    auto& ps = params_;
    ad::Var x = tp.embed_rows(tp.use(ps.at("tenc.emb")), ids);
    x = tp.add(x, tp.embed_rows(tp.use(ps.at("tenc.pos")), iota_ids(static_cast<int>(ids.size()))));
    return encoder_stack(tp, x, "tenc");
}

std::pair<ad::Var, ad::Var> Model::fuse_to_kv(ad::Tape& tp, ad::Var fv, ad::Var fq) const {
    require(tp.value(fv).cols == cfg_.d && tp.value(fq).cols == cfg_.d,
            "fuse_to_kv: feature width mismatch");
    auto& ps = params_;
    ad::Var seq = tp.concat_rows(fv, fq);
    ad::Var keys = tp.matmul_nn(seq, tp.use(ps.at("fuse.wk")));
    ad::Var values = tp.matmul_nn(seq, tp.use(ps.at("fuse.wv")));
    return {keys, values};
}

Model::AcgOut Model::acg_forward(ad::Tape& tp, ad::Var keys, ad::Var values) const {
    using ad::Var;
    auto& ps = params_;
    require(tp.value(keys).cols == cfg_.d && tp.value(values).cols == cfg_.d,
            "acg_forward: key/value width mismatch");
    require(tp.value(keys).rows == tp.value(values).rows,
            "acg_forward: key/value length mismatch");

    Var e = tp.use(ps.at("acg.ans.emb"));
    AttnRef self{&ps.at("acg.self.wq"), &ps.at("acg.self.wk"), &ps.at("acg.self.wv"),
                 &ps.at("acg.self.wo")};
    Var n1 = tp.layer_norm(e, tp.use(ps.at("acg.ln1.g")), tp.use(ps.at("acg.ln1.b")));
    Var query = tp.add(e, attend(tp, n1, n1, n1, self));

    AttnRef cross{&ps.at("acg.cross.wq"), &ps.at("acg.cross.wk"), &ps.at("acg.cross.wv"),
                  &ps.at("acg.cross.wo")};
    Var n2 = tp.layer_norm(query, tp.use(ps.at("acg.ln2.g")), tp.use(ps.at("acg.ln2.b")));
    Var mixed = tp.add(query, attend(tp, n2, keys, values, cross));

    Var n3 = tp.layer_norm(mixed, tp.use(ps.at("acg.ln3.g")), tp.use(ps.at("acg.ln3.b")));
    Var h = tp.gelu(tp.add_row_vec(tp.matmul_nn(n3, tp.use(ps.at("acg.ffn.w1"))),
                                   tp.use(ps.at("acg.ffn.b1"))));
    Var f = tp.add_row_vec(tp.matmul_nn(h, tp.use(ps.at("acg.ffn.w2"))),
                           tp.use(ps.at("acg.ffn.b2")));
    AcgOut out;
    out.f_fused = tp.add(mixed, f);

    Var col = tp.add_row_vec(tp.matmul_nn(out.f_fused, tp.use(ps.at("acg.reduce.w"))),
                             tp.use(ps.at("acg.reduce.b")));
    out.f_cond = tp.transpose(col);
    out.cond_prob = tp.softmax_rows(out.f_cond);
    require(tp.value(out.f_cond).all_finite(), "acg_forward: non-finite activations");
    return out;
}

ad::Var Model::classifier_logits(ad::Tape& tp, const AcgOut& acg) const {
    auto& ps = params_;
    if (cfg_.classifier_input == "fused") {
        ad::Var col = tp.add_row_vec(tp.matmul_nn(acg.f_fused, tp.use(ps.at("cls.fused.w"))),
                                     tp.use(ps.at("cls.fused.b")));
        return tp.transpose(col);
    }
    return tp.add_row_vec(tp.matmul_nt(acg.f_cond, tp.use(ps.at("cls.w"))),
                          tp.use(ps.at("cls.b")));
}

Model::ForwardOut Model::forward(ad::Tape& tp, const Image& image,
                                 const std::string& question) const {
    ForwardOut out;
    out.f_v = encode_image(tp, image);
    out.f_q = encode_question(tp, question);
    auto [keys, values] = fuse_to_kv(tp, out.f_v, out.f_q);
    out.keys = keys;
    out.values = values;
    out.acg = acg_forward(tp, keys, values);
    out.proto_logits = classifier_logits(tp, out.acg);
    return out;
}

ad::Var Model::denoiser_forward(ad::Tape& tp, ad::Var y_t, ad::Var cond, int t) const {
    auto& ps = params_;
    ad::Var temb = tp.input(Mat::row_vec(diffusion::sinusoidal_time_embedding(t, cfg_.time_embed)));
    ad::Var h = tp.concat_cols(tp.concat_cols(y_t, cond), temb);
    h = tp.gelu(tp.add_row_vec(tp.matmul_nn(h, tp.use(ps.at("den.fc1.w"))),
                               tp.use(ps.at("den.fc1.b"))));
    h = tp.gelu(tp.add_row_vec(tp.matmul_nn(h, tp.use(ps.at("den.fc2.w"))),
                               tp.use(ps.at("den.fc2.b"))));
    return tp.add_row_vec(tp.matmul_nn(h, tp.use(ps.at("den.out.w"))),
                          tp.use(ps.at("den.out.b")));
}

Vec Model::denoise_predict(const Vec& y_t, const Vec& cond, int t) const {
    require(static_cast<int>(y_t.size()) == cfg_.L && y_t.size() == cond.size(),
            "denoise_predict: length mismatch");
    ad::Tape tp;
    ad::Var out = denoiser_forward(tp, tp.input(Mat::row_vec(y_t)), tp.input(Mat::row_vec(cond)), t);
    return tp.value(out).a;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O (little-endian binary)

namespace {

constexpr char kMagic[8] = {'D', 'I', 'N', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

void put_str(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t get_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

uint64_t get_u64(std::istream& in) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

std::string get_str(std::istream& in) {
    uint32_t n = get_u32(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    return s;
}

int config_int(const std::map<std::string, std::string>& cfg, const std::string& key) {
    auto it = cfg.find(key);
    require(it != cfg.end(), "checkpoint: missing config key " + key);
    return std::stoi(it->second);
}

}  // namespace

void save_checkpoint(const Model& model, const std::map<std::string, std::string>& extra_config,
                     const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));

    const ModelConfig& c = model.config();
    std::map<std::string, std::string> cfg = extra_config;
    cfg["model.d"] = std::to_string(c.d);
    cfg["model.heads"] = std::to_string(c.heads);
    cfg["model.enc_blocks"] = std::to_string(c.enc_blocks);
    cfg["model.ffn_mult"] = std::to_string(c.ffn_mult);
    cfg["model.patch"] = std::to_string(c.patch);
    cfg["model.max_q_tokens"] = std::to_string(c.max_q_tokens);
    cfg["model.time_embed"] = std::to_string(c.time_embed);
    cfg["model.denoiser_hidden"] = std::to_string(c.denoiser_hidden);
    cfg["model.token_vocab_cap"] = std::to_string(c.token_vocab_cap);
    cfg["model.L"] = std::to_string(c.L);
    cfg["model.classifier_input"] = c.classifier_input;
    cfg["model.init_seed"] = std::to_string(c.init_seed);

    put_u32(out, static_cast<uint32_t>(cfg.size()));
    for (const auto& [k, v] : cfg) {
        put_str(out, k);
        put_str(out, v);
    }

    const auto& vocab = model.vocab();
    put_u32(out, static_cast<uint32_t>(vocab.answers.size()));
    for (size_t i = 0; i < vocab.answers.size(); ++i) {
        put_str(out, vocab.answers[i]);
        put_u64(out, static_cast<uint64_t>(vocab.frequency[i]));
        out.put(vocab.closed[i] ? 1 : 0);
    }

    const auto& toks = model.token_vocab();
    put_u32(out, static_cast<uint32_t>(toks.tokens.size()));
    for (const auto& t : toks.tokens) put_str(out, t);

    auto params = model.params().all();
    put_u32(out, static_cast<uint32_t>(params.size()));
    for (const Param* p : params) {
        put_str(out, p->name);
        put_u32(out, static_cast<uint32_t>(p->value.rows));
        put_u32(out, static_cast<uint32_t>(p->value.cols));
        out.write(reinterpret_cast<const char*>(p->value.a.data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!out) throw Error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    require(in && std::memcmp(magic, kMagic, 8) == 0, "checkpoint: bad magic in " + path);

    std::map<std::string, std::string> cfg;
    const uint32_t ncfg = get_u32(in);
    for (uint32_t i = 0; i < ncfg; ++i) {
        std::string k = get_str(in);
        cfg[k] = get_str(in);
    }

    AnswerVocabulary vocab;
    const uint32_t nans = get_u32(in);
    for (uint32_t i = 0; i < nans; ++i) {
        std::string a = get_str(in);
        vocab.frequency.push_back(static_cast<int64_t>(get_u64(in)));
        vocab.closed.push_back(in.get() != 0);
        vocab.index_of[a] = static_cast<int>(vocab.answers.size());
        vocab.answers.push_back(std::move(a));
    }

    TokenVocab toks;
    const uint32_t ntok = get_u32(in);
    for (uint32_t i = 0; i < ntok; ++i) {
        std::string t = get_str(in);
        toks.ids[t] = static_cast<int>(toks.tokens.size());
        toks.tokens.push_back(std::move(t));
    }

    ModelConfig mc;
    mc.d = config_int(cfg, "model.d");
    mc.heads = config_int(cfg, "model.heads");
    mc.enc_blocks = config_int(cfg, "model.enc_blocks");
    mc.ffn_mult = config_int(cfg, "model.ffn_mult");
    mc.patch = config_int(cfg, "model.patch");
    mc.max_q_tokens = config_int(cfg, "model.max_q_tokens");
    mc.time_embed = config_int(cfg, "model.time_embed");
    mc.denoiser_hidden = config_int(cfg, "model.denoiser_hidden");
    mc.token_vocab_cap = config_int(cfg, "model.token_vocab_cap");
    mc.L = config_int(cfg, "model.L");
    mc.classifier_input = cfg.at("model.classifier_input");
    mc.init_seed = std::stoull(cfg.at("model.init_seed"));

    Checkpoint ck{Model(mc, std::move(vocab), std::move(toks)), std::move(cfg)};

    const uint32_t nparams = get_u32(in);
    for (uint32_t i = 0; i < nparams; ++i) {
        std::string name = get_str(in);
        const int rows = static_cast<int>(get_u32(in));
        const int cols = static_cast<int>(get_u32(in));
        Param* p = ck.model.params().find(name);
        require(p != nullptr, "checkpoint: unexpected parameter " + name);
        require(p->value.rows == rows && p->value.cols == cols,
                "checkpoint: shape mismatch for " + name);
        in.read(reinterpret_cast<char*>(p->value.a.data()),
                static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    require(static_cast<bool>(in), "checkpoint: truncated file " + path);
    return ck;
}

}  // namespace din
