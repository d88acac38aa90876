#include "din/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>

#include "din/kernels.hpp"
#include "din/nlr.hpp"
#include "din/parallel.hpp"
#include "din/rng.hpp"

namespace din {

namespace {
constexpr uint64_t kSaltShuffle = 0x5f17f1eULL;
constexpr uint64_t kSaltTrain = 0x7a21bULL;
constexpr uint64_t kSaltEval = 0xe7a1ULL;

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace

diffusion::DifLossKind TrainConfig::dif_loss_kind() const {
    if (dif_loss == "mse") return diffusion::DifLossKind::mse;
    if (dif_loss == "kl") return diffusion::DifLossKind::kl;
    throw Error("config: dif_loss must be mse|kl, got " + dif_loss);
}

diffusion::InitMode TrainConfig::init_mode() const {
    if (init == "terminal") return diffusion::InitMode::terminal;
    if (init == "gaussian") return diffusion::InitMode::gaussian;
    throw Error("config: init must be terminal|gaussian, got " + init);
}

ModelConfig TrainConfig::model_config(int L) const {
    ModelConfig mc;
    mc.d = d;
    mc.heads = heads;
    mc.enc_blocks = enc_blocks;
    mc.ffn_mult = ffn_mult;
    mc.patch = patch;
    mc.max_q_tokens = max_q_tokens;
    mc.time_embed = time_embed;
    mc.denoiser_hidden = denoiser_hidden;
    mc.L = L;
    mc.classifier_input = classifier_input;
    mc.init_seed = seed;
    return mc;
}

std::map<std::string, std::string> TrainConfig::to_config_map() const {
    std::map<std::string, std::string> m;
    m["train.alpha"] = fmt_double(alpha);
    m["train.gamma"] = fmt_double(gamma);
    m["train.tau"] = fmt_double(tau);
    m["train.rfl_clip"] = fmt_double(rfl_clip);
    m["train.T"] = std::to_string(T);
    m["train.beta_start"] = fmt_double(beta_start);
    m["train.beta_end"] = fmt_double(beta_end);
    m["train.dif_loss"] = dif_loss;
    m["train.init"] = init;
    m["train.lr"] = fmt_double(lr);
    m["train.batch_size"] = std::to_string(batch_size);
    m["train.epochs"] = std::to_string(epochs);
    m["train.seed"] = std::to_string(seed);
    m["train.use_ad"] = use_ad ? "true" : "false";
    m["train.use_rfl"] = use_rfl ? "true" : "false";
    m["train.use_aa"] = use_aa ? "true" : "false";
    m["train.d"] = std::to_string(d);
    m["train.heads"] = std::to_string(heads);
    m["train.enc_blocks"] = std::to_string(enc_blocks);
    m["train.ffn_mult"] = std::to_string(ffn_mult);
    m["train.patch"] = std::to_string(patch);
    m["train.time_embed"] = std::to_string(time_embed);
    m["train.denoiser_hidden"] = std::to_string(denoiser_hidden);
    m["train.max_q_tokens"] = std::to_string(max_q_tokens);
    m["train.classifier_input"] = classifier_input;
    m["train.threads"] = std::to_string(threads);
    return m;
}

TrainConfig TrainConfig::from_config_map(const std::map<std::string, std::string>& m) {
    TrainConfig c;
    auto str = [&](const char* k, std::string& dst) {
        auto it = m.find(k);
        if (it != m.end()) dst = it->second;
    };
    auto dbl = [&](const char* k, double& dst) {
        auto it = m.find(k);
        if (it != m.end()) dst = std::stod(it->second);
    };
    auto integer = [&](const char* k, int& dst) {
        auto it = m.find(k);
        if (it != m.end()) dst = std::stoi(it->second);
    };
    auto boolean = [&](const char* k, bool& dst) {
        auto it = m.find(k);
        if (it != m.end()) dst = it->second == "true" || it->second == "1";
    };
    dbl("train.alpha", c.alpha);
    dbl("train.gamma", c.gamma);
    dbl("train.tau", c.tau);
    dbl("train.rfl_clip", c.rfl_clip);
    integer("train.T", c.T);
    dbl("train.beta_start", c.beta_start);
    dbl("train.beta_end", c.beta_end);
    str("train.dif_loss", c.dif_loss);
    str("train.init", c.init);
    dbl("train.lr", c.lr);
    integer("train.batch_size", c.batch_size);
    integer("train.epochs", c.epochs);
    auto it = m.find("train.seed");
    if (it != m.end()) c.seed = std::stoull(it->second);
    boolean("train.use_ad", c.use_ad);
    boolean("train.use_rfl", c.use_rfl);
    boolean("train.use_aa", c.use_aa);
    integer("train.d", c.d);
    integer("train.heads", c.heads);
    integer("train.enc_blocks", c.enc_blocks);
    integer("train.ffn_mult", c.ffn_mult);
    integer("train.patch", c.patch);
    integer("train.time_embed", c.time_embed);
    integer("train.denoiser_hidden", c.denoiser_hidden);
    integer("train.max_q_tokens", c.max_q_tokens);
    str("train.classifier_input", c.classifier_input);
    integer("train.threads", c.threads);
    return c;
}

void write_trace_csv(const std::vector<TraceRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write trace: " + path);
    out << "step,w,l_rfl,l_dif,l_total\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g,%.10g,%.10g\n",
                      static_cast<long long>(r.step), r.w, r.l_rfl, r.l_dif, r.l_total);
        out << buf;
    }
}

double macro_overall(double acc_open, double acc_close) { return (acc_open + acc_close) / 2.0; }

Metrics compute_metrics(const std::vector<int>& predictions, const Dataset& data) {
    require(predictions.size() == data.samples.size(), "compute_metrics: prediction count mismatch");
    require(!data.samples.empty(), "compute_metrics: empty dataset");
    int64_t correct_open = 0, correct_close = 0;
    Metrics m;
    for (size_t i = 0; i < data.samples.size(); ++i) {
        const auto& s = data.samples[i];
        const bool hit = predictions[i] == s.answer_index;
        if (s.qtype == QType::open) {
            ++m.n_open;
            correct_open += hit ? 1 : 0;
        } else {
            ++m.n_close;
            correct_close += hit ? 1 : 0;
        }
    }
    m.open_defined = m.n_open > 0;
    m.close_defined = m.n_close > 0;
    if (m.open_defined) m.acc_open = static_cast<double>(correct_open) / m.n_open;
    if (m.close_defined) m.acc_close = static_cast<double>(correct_close) / m.n_close;
    if (m.open_defined && m.close_defined)
        m.acc_overall = macro_overall(m.acc_open, m.acc_close);
    else if (m.open_defined)
        m.acc_overall = m.acc_open;
    else
        m.acc_overall = m.acc_close;
    m.acc_micro = static_cast<double>(correct_open + correct_close) /
                  static_cast<double>(m.n_open + m.n_close);
    return m;
}

namespace {

// Per-sample training tape: forward pass, classifier loss, and (phase two)
// the diffusion branch. Tapes stay alive across the EMA sync point.
struct SampleWork {
    std::unique_ptr<ad::Tape> tape;
    Model::ForwardOut fwd;
    ad::Var cls_loss;
    ProtoAnswer proto;
    ad::Var dif_loss;
    ad::Var total;
    bool has_dif = false;
};

}  // namespace

Model train(const TrainConfig& config, const Dataset& train_data, std::vector<TraceRow>* trace) {
    require(!train_data.samples.empty(), "train: empty dataset");
    require(config.batch_size >= 1, "train: batch_size must be >= 1");
    require(config.epochs >= 1, "train: epochs must be >= 1");
    require(config.alpha >= 0.0, "train: alpha must be >= 0");
    if (config.threads > 0) set_threads(config.threads);

    const int L = train_data.vocabulary.size();
    std::vector<std::string> questions;
    questions.reserve(train_data.samples.size());
    for (const auto& s : train_data.samples) questions.push_back(s.question);
    TokenVocab tokens = TokenVocab::build(questions, ModelConfig{}.token_vocab_cap);

    Model model(config.model_config(L), train_data.vocabulary, tokens);
    auto sched = diffusion::make_schedule(config.T, config.beta_start, config.beta_end);
    Adam opt(AdamConfig{.lr = config.lr});
    nlr::EmaWeight ema{.tau = config.tau};
    const auto kind = config.dif_loss_kind();

    std::vector<size_t> order(train_data.samples.size());
    std::iota(order.begin(), order.end(), 0);

    int64_t step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(config.seed, static_cast<uint64_t>(epoch), kSaltShuffle));
        shuffle_rng.shuffle(order);

        for (size_t start = 0; start < order.size(); start += config.batch_size) {
            const size_t bsz = std::min(order.size() - start, static_cast<size_t>(config.batch_size));
            ++step;
            std::vector<SampleWork> work(bsz);

            // Phase 1: forward passes and classifier losses.
            parallel_for(bsz, [&](size_t bi) {
                const Sample& s = train_data.samples[order[start + bi]];
                SampleWork& w = work[bi];
                w.tape = std::make_unique<ad::Tape>();
                w.fwd = model.forward(*w.tape, s.image, s.question);
                Mat label = Mat::row_vec(onehot(s.answer_index, L));
                if (config.use_rfl)
                    w.cls_loss = w.tape->rfl_loss(w.fwd.proto_logits, std::move(label),
                                                  config.gamma, config.rfl_clip, true);
                else
                    w.cls_loss = w.tape->rfl_loss(w.fwd.proto_logits, std::move(label), 0.0,
                                                  config.rfl_clip, false);
                w.proto = proto_from_logits(w.tape->value(w.fwd.proto_logits).a);
            });

            // EMA weight update from this batch's confidences (single writer).
            Vec confidences(bsz);
            for (size_t bi = 0; bi < bsz; ++bi) confidences[bi] = work[bi].proto.confidence;
            ema = nlr::update_weight(ema, confidences);
            const double w_t = ema.w;

            // Phase 2: refined labels, diffusion branch, backward.
            parallel_for(bsz, [&](size_t bi) {
                const Sample& s = train_data.samples[order[start + bi]];
                SampleWork& w = work[bi];
                ad::Tape& tp = *w.tape;
                Vec a = onehot(s.answer_index, L);
                if (config.use_ad) {
                    Vec y_bar = config.use_aa ? nlr::adjust_answer(w.proto, a, w_t) : a;
                    Rng rng(derive_seed(derive_seed(config.seed, kSaltTrain),
                                        fnv1a64(s.id), static_cast<uint64_t>(step)));
                    const int t = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(config.T)));
                    // Forward-marginal draw with the condition kept on-tape:
                    // y_t = [sqrt(abar) y_bar + sqrt(1-abar) eps] + (1-sqrt(abar)) cond.
                    const double root = std::sqrt(sched.alpha_bar[t - 1]);
                    const double sd = std::sqrt(1.0 - sched.alpha_bar[t - 1]);
                    Mat base(1, L);
                    for (int l = 0; l < L; ++l) base.a[l] = root * y_bar[l] + sd * rng.normal();
                    ad::Var y_t = tp.add_scaled(tp.input(std::move(base)), w.fwd.acg.cond_prob,
                                                1.0, 1.0 - root);
                    ad::Var y0_hat = model.denoiser_forward(tp, y_t, w.fwd.acg.cond_prob, t);
                    Mat target = Mat::row_vec(y_bar);
                    w.dif_loss = kind == diffusion::DifLossKind::mse
                                     ? tp.mse_loss(y0_hat, std::move(target))
                                     : tp.kl_loss(y0_hat, std::move(target));
                    w.has_dif = true;
                    w.total = tp.add_scaled(w.dif_loss, w.cls_loss, 1.0, config.alpha);
                } else {
                    w.total = tp.scale(w.cls_loss, config.alpha);
                }
                tp.backward(w.total);
            });

            // Serial gradient accumulation in batch order, then mean-scale.
            model.params().zero_grads();
            for (auto& w : work) w.tape->add_param_grads();
            const double inv_b = 1.0 / static_cast<double>(bsz);
            for (Param* p : model.params().all())
                for (double& g : p->grad.a) g *= inv_b;
            opt.step(model.params());

            TraceRow row;
            row.step = step;
            row.w = w_t;
            for (const auto& w : work) {
                row.l_rfl += w.tape->value(w.cls_loss).a[0] * inv_b;
                if (w.has_dif) row.l_dif += w.tape->value(w.dif_loss).a[0] * inv_b;
                row.l_total += w.tape->value(w.total).a[0] * inv_b;
            }
            if (trace) trace->push_back(row);
            if (!std::isfinite(row.l_total))
                throw Error("train: diverged (non-finite loss) at step " + std::to_string(step));
        }
    }
    return model;
}

std::vector<int> predict_answers(const Model& model, const TrainConfig& config,
                                 const Dataset& data, const std::vector<size_t>& indices,
                                 uint64_t seed,
                                 std::vector<std::vector<diffusion::ChainStep>>* chains) {
    auto sched = diffusion::make_schedule(config.T, config.beta_start, config.beta_end);
    const auto init = config.init_mode();
    const uint64_t eval_seed = derive_seed(seed, kSaltEval);
    ModelDenoiser den(model);

    std::vector<int> out(indices.size(), -1);
    if (chains) chains->assign(indices.size(), {});
    parallel_for(indices.size(), [&](size_t i) {
        const Sample& s = data.samples[indices[i]];
        ad::Tape tp;
        auto fwd = model.forward(tp, s.image, s.question);
        if (config.use_ad) {
            Rng rng(derive_seed(eval_seed, s.id));
            auto res = diffusion::sample_answer(den, tp.value(fwd.acg.cond_prob).a, sched, rng,
                                                init, chains ? &(*chains)[i] : nullptr);
            out[i] = res.answer;
        } else {
            out[i] = argmax(tp.value(fwd.proto_logits).a);
        }
    });
    return out;
}

void write_chain_trace_csv(const Dataset& data, const std::vector<size_t>& indices,
                           const std::vector<std::vector<diffusion::ChainStep>>& chains,
                           const std::string& path) {
    require(indices.size() == chains.size(), "write_chain_trace_csv: size mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write chain trace: " + path);
    out << "sample_id,t,mean_norm,y0_argmax\n";
    char buf[160];
    for (size_t i = 0; i < indices.size(); ++i) {
        const std::string& id = data.samples[indices[i]].id;
        for (const auto& step : chains[i]) {
            std::snprintf(buf, sizeof(buf), "%s,%d,%.10g,%d\n", id.c_str(), step.t,
                          step.mean_norm, step.y0_argmax);
            out << buf;
        }
    }
}

Metrics evaluate(const Model& model, const TrainConfig& config, const Dataset& test_data,
                 uint64_t seed) {
    require(model.vocab().answers == test_data.vocabulary.answers,
            "evaluate: vocabulary mismatch between checkpoint and dataset");
    const uint64_t nlr_before = nlr::call_count();

    std::vector<size_t> indices(test_data.samples.size());
    std::iota(indices.begin(), indices.end(), 0);
    auto preds = predict_answers(model, config, test_data, indices, seed);

    require(nlr::call_count() == nlr_before, "evaluate: inference touched NLR state");
    return compute_metrics(preds, test_data);
}

std::vector<size_t> noised_indices(const Dataset& data) {
    std::vector<size_t> noised;
    for (size_t i = 0; i < data.samples.size(); ++i)
        if (data.samples[i].is_noised) noised.push_back(i);
    return noised;
}

double correction_fraction(const std::vector<int>& predictions, const Dataset& data,
                           const std::vector<size_t>& noised) {
    require(!noised.empty(), "correction_rate: dataset has no noised samples");
    require(predictions.size() == noised.size(), "correction_fraction: size mismatch");
    int64_t corrected = 0;
    for (size_t i = 0; i < noised.size(); ++i) {
        const auto& s = data.samples[noised[i]];
        require(s.clean_answer_index.has_value(), "correction_fraction: missing clean label");
        if (predictions[i] == *s.clean_answer_index) ++corrected;
    }
    return static_cast<double>(corrected) / static_cast<double>(noised.size());
}

double correction_rate(const Model& model, const TrainConfig& config, const Dataset& noisy_train,
                       uint64_t seed) {
    auto noised = noised_indices(noisy_train);
    require(!noised.empty(), "correction_rate: dataset has no noised samples");
    auto preds = predict_answers(model, config, noisy_train, noised, seed);
    return correction_fraction(preds, noisy_train, noised);
}

const std::vector<int> kAllAblationChoices = {0, 1, 2, 3, 4, 5};

void apply_ablation_choice(TrainConfig& cfg, int choice) {
    switch (choice) {
        case 0: cfg.use_ad = false; cfg.use_rfl = false; cfg.use_aa = false; break;
        case 1: cfg.use_ad = false; cfg.use_rfl = true;  cfg.use_aa = false; break;
        case 2: cfg.use_ad = true;  cfg.use_rfl = false; cfg.use_aa = false; break;
        case 3: cfg.use_ad = true;  cfg.use_rfl = false; cfg.use_aa = true;  break;
        case 4: cfg.use_ad = true;  cfg.use_rfl = true;  cfg.use_aa = false; break;
        case 5: cfg.use_ad = true;  cfg.use_rfl = true;  cfg.use_aa = true;  break;
        default: throw Error("ablation: choice must be in 0..5");
    }
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, const Dataset& train_data,
                                      const Dataset& test_data,
                                      const std::vector<uint64_t>& seeds,
                                      const std::vector<int>& choices,
                                      std::vector<TraceRow>* last_trace) {
    require(!seeds.empty(), "run_ablation: need at least one seed");
    bool has_noise = false;
    for (const auto& s : train_data.samples) has_noise = has_noise || s.is_noised;

    std::vector<AblationRow> rows;
    for (int choice : choices) {
        AblationRow row;
        row.choice = choice;
        for (uint64_t seed : seeds) {
            TrainConfig cfg = base;
            apply_ablation_choice(cfg, choice);
            cfg.seed = seed;
            std::vector<TraceRow> trace;
            Model model = train(cfg, train_data, &trace);
            if (last_trace) *last_trace = std::move(trace);
            row.per_seed.push_back(evaluate(model, cfg, test_data, seed));
            row.per_seed_correction.push_back(
                has_noise ? correction_rate(model, cfg, train_data, seed)
                          : std::numeric_limits<double>::quiet_NaN());
        }
        const double n = static_cast<double>(row.per_seed.size());
        for (size_t i = 0; i < row.per_seed.size(); ++i) {
            row.mean.acc_open += row.per_seed[i].acc_open / n;
            row.mean.acc_close += row.per_seed[i].acc_close / n;
            row.mean.acc_overall += row.per_seed[i].acc_overall / n;
            row.mean.acc_micro += row.per_seed[i].acc_micro / n;
            if (has_noise) row.mean_correction += row.per_seed_correction[i] / n;
        }
        row.mean.n_open = row.per_seed[0].n_open;
        row.mean.n_close = row.per_seed[0].n_close;
        row.mean.open_defined = row.per_seed[0].open_defined;
        row.mean.close_defined = row.per_seed[0].close_defined;
        if (!has_noise) row.mean_correction = std::numeric_limits<double>::quiet_NaN();
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace {

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v * 100.0);
    return buf;
}

}  // namespace

void emit_report(const std::vector<ReportTable>& tables, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);

    std::ofstream csv(fs::path(dir) / "report.csv", std::ios::binary);
    if (!csv) throw Error("cannot write report under " + dir);
    csv << "table,row,open,close,overall,micro,correction_rate\n";
    for (const auto& t : tables) {
        for (size_t i = 0; i < t.rows.size(); ++i) {
            const Metrics& m = t.rows[i];
            csv << t.title << ',' << t.row_labels[i] << ',' << pct(m.acc_open) << ','
                << pct(m.acc_close) << ',' << pct(m.acc_overall) << ',' << pct(m.acc_micro) << ',';
            if (t.correction.size() > i && t.correction[i].has_value())
                csv << pct(*t.correction[i]);
            csv << '\n';
        }
    }
    csv.close();

    std::ofstream md(fs::path(dir) / "report.md", std::ios::binary);
    if (!md) throw Error("cannot write report under " + dir);
    for (const auto& t : tables) {
        md << "## " << t.title << "\n\n";
        md << "| Row | Open | Close | Overall | Micro | Correction |\n";
        md << "|---|---|---|---|---|---|\n";
        for (size_t i = 0; i < t.rows.size(); ++i) {
            const Metrics& m = t.rows[i];
            md << "| " << t.row_labels[i] << " | " << pct(m.acc_open) << " | " << pct(m.acc_close)
               << " | " << pct(m.acc_overall) << " | " << pct(m.acc_micro) << " | ";
            if (t.correction.size() > i && t.correction[i].has_value())
                md << pct(*t.correction[i]);
            else
                md << "-";
            md << " |\n";
        }
        md << '\n';
    }
}

void save_model_checkpoint(const Model& model, const TrainConfig& config, const std::string& path) {
    save_checkpoint(model, config.to_config_map(), path);
}

std::pair<Checkpoint, TrainConfig> load_model_checkpoint(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    TrainConfig cfg = TrainConfig::from_config_map(ck.config);
    return {std::move(ck), cfg};
}

}  // namespace din
