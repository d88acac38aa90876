#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "din/config.hpp"
#include "din/dataset.hpp"
#include "din/noise.hpp"
#include "din/parallel.hpp"
#include "din/rng.hpp"
#include "din/train.hpp"

namespace {

using namespace din;

std::vector<uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<uint64_t> seeds;
    std::string cur;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!cur.empty()) seeds.push_back(std::stoull(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    require(!seeds.empty(), "expected a comma-separated seed list");
    return seeds;
}

std::vector<int> parse_choice_list(const std::string& csv) {
    std::vector<int> v;
    for (uint64_t s : parse_seed_list(csv)) v.push_back(static_cast<int>(s));
    return v;
}

// Config file first, then explicit CLI overrides.
struct ConfigCli {
    std::string config_path;
    std::vector<std::string> sets;  // key=value pairs

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "flat key=value config file");
        cmd->add_option("--set", sets, "override a config key, e.g. --set epochs=10")
            ->take_all();
    }

    TrainConfig resolve() const {
        TrainConfig cfg;
        if (!config_path.empty()) cfg = config_from_file(config_path);
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            require(eq != std::string::npos, "--set expects key=value, got " + kv);
            apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        }
        return cfg;
    }
};

void add_train_flags(CLI::App* cmd, ConfigCli& cc) {
    cc.attach(cmd);
    // Frequent knobs as first-class flags; they funnel through the same
    // key=value override path so config/file/flag precedence stays uniform.
    static const char* keys[] = {"alpha",  "gamma",      "tau",   "T",     "beta_start",
                                 "beta_end", "dif_loss", "init",  "lr",    "batch_size",
                                 "epochs", "seed",       "use_ad", "use_rfl", "use_aa",
                                 "d",      "heads",      "threads"};
    for (const char* key : keys) {
        std::string flag = std::string("--") + key;
        for (auto& ch : flag)
            if (ch == '_') ch = '-';
        cmd->add_option_function<std::string>(
            flag, [&cc, key = std::string(key)](const std::string& v) { cc.sets.push_back(key + "=" + v); },
            std::string("override config key ") + key);
    }
}

int cmd_synth(const std::string& train_out, const std::string& test_out,
              const std::string& vocab_out, int n, int test_n, int l_open, uint64_t seed) {
    Dataset train = generate_synthetic_corpus(n, l_open, seed);
    save_dataset(train, train_out);
    if (!vocab_out.empty()) save_vocabulary(train.vocabulary, vocab_out);
    if (!test_out.empty()) {
        Dataset test = generate_synthetic_corpus(test_n, l_open, derive_seed(seed, 0x7e57ULL));
        test = remap_to_vocabulary(test, train.vocabulary);
        test.split = Split::test;
        save_dataset(test, test_out);
    }
    std::printf("synth: wrote %d train samples (L=%d) to %s\n", n, train.vocabulary.size(),
                train_out.c_str());
    return 0;
}

int cmd_build_noise(const std::string& in, const std::string& out, const std::string& kind,
                    double ratio, uint64_t seed, int min_freq, const std::string& embeddings,
                    const std::string& vocab_path) {
    std::optional<AnswerVocabulary> vocab;
    if (!vocab_path.empty()) vocab = load_vocabulary(vocab_path);
    Dataset data = load_dataset(in, vocab ? &*vocab : nullptr, Split::train);

    NoiseSpec spec;
    spec.ratio = ratio;
    spec.seed = seed;
    spec.min_frequency = min_freq;
    if (kind == "semantic")
        spec.kind = NoiseKind::semantic;
    else if (kind == "random")
        spec.kind = NoiseKind::random_shuffle;
    else
        throw Error("--kind must be semantic|random");

    SemanticPairIndex index;
    if (spec.kind == NoiseKind::semantic) {
        if (!embeddings.empty()) {
            FileEmbedding emb = FileEmbedding::from_file(embeddings);
            index = build_semantic_index(data.vocabulary, emb, min_freq);
        } else {
            TrigramHashEmbedding emb;
            index = build_semantic_index(data.vocabulary, emb, min_freq);
        }
    }

    NoiseStats stats;
    Dataset noisy = inject_noise(data, spec.kind == NoiseKind::semantic ? &index : nullptr,
                                 spec, &stats);
    save_dataset(noisy, out);
    std::ofstream side(out + ".stats.json", std::ios::binary);
    side << stats.to_json() << '\n';
    std::printf("build-noise: %lld open + %lld closed labels flipped (%lld skipped) -> %s\n",
                static_cast<long long>(stats.noised_open),
                static_cast<long long>(stats.noised_closed),
                static_cast<long long>(stats.skipped), out.c_str());
    return 0;
}

int cmd_train(const ConfigCli& cc, const std::string& data_path, const std::string& vocab_path,
              const std::string& out, std::string trace_path) {
    TrainConfig cfg = cc.resolve();
    std::optional<AnswerVocabulary> vocab;
    if (!vocab_path.empty()) vocab = load_vocabulary(vocab_path);
    Dataset data = load_dataset(data_path, vocab ? &*vocab : nullptr, Split::train);

    if (trace_path.empty()) trace_path = out + ".trace.csv";
    std::vector<TraceRow> trace;
    try {
        Model model = train(cfg, data, &trace);
        write_trace_csv(trace, trace_path);
        save_model_checkpoint(model, cfg, out);
    } catch (...) {
        write_trace_csv(trace, trace_path);  // keep the partial trace on divergence
        throw;
    }
    std::printf("train: %zu steps, checkpoint %s, trace %s\n", trace.size(), out.c_str(),
                trace_path.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& vocab_path, const std::string& report_dir, uint64_t seed,
             int threads, const std::string& chain_trace) {
    auto [ck, cfg] = load_model_checkpoint(ckpt_path);
    if (threads > 0) set_threads(threads);
    std::optional<AnswerVocabulary> vocab;
    if (!vocab_path.empty())
        vocab = load_vocabulary(vocab_path);
    else
        vocab = ck.model.vocab();
    Dataset data = load_dataset(data_path, &*vocab, Split::test);

    if (!chain_trace.empty() && cfg.use_ad) {
        std::vector<size_t> indices(data.samples.size());
        for (size_t i = 0; i < indices.size(); ++i) indices[i] = i;
        std::vector<std::vector<diffusion::ChainStep>> chains;
        predict_answers(ck.model, cfg, data, indices, seed, &chains);
        write_chain_trace_csv(data, indices, chains, chain_trace);
    }

    Metrics m = evaluate(ck.model, cfg, data, seed);
    std::printf("eval: open=%.4f close=%.4f overall=%.4f micro=%.4f (n=%lld/%lld)\n", m.acc_open,
                m.acc_close, m.acc_overall, m.acc_micro, static_cast<long long>(m.n_open),
                static_cast<long long>(m.n_close));

    if (!report_dir.empty()) {
        ReportTable t;
        t.title = "evaluation";
        t.row_labels = {"checkpoint"};
        t.rows = {m};
        t.correction = {std::nullopt};
        emit_report({t}, report_dir);
        nlohmann::ordered_json j;
        j["acc_open"] = m.acc_open;
        j["acc_close"] = m.acc_close;
        j["acc_overall"] = m.acc_overall;
        j["acc_micro"] = m.acc_micro;
        j["n_open"] = m.n_open;
        j["n_close"] = m.n_close;
        j["open_defined"] = m.open_defined;
        j["close_defined"] = m.close_defined;
        std::ofstream out(std::filesystem::path(report_dir) / "metrics.json", std::ios::binary);
        out << j.dump(2) << '\n';
    }
    return 0;
}

int cmd_ablate(const ConfigCli& cc, const std::string& train_path, const std::string& test_path,
               const std::string& vocab_path, const std::string& seeds_csv,
               const std::string& choices_csv, const std::string& report_dir) {
    TrainConfig base = cc.resolve();
    std::optional<AnswerVocabulary> vocab;
    if (!vocab_path.empty()) vocab = load_vocabulary(vocab_path);
    Dataset train_data = load_dataset(train_path, vocab ? &*vocab : nullptr, Split::train);
    Dataset test_data = load_dataset(test_path, &train_data.vocabulary, Split::test);

    auto seeds = parse_seed_list(seeds_csv);
    auto choices = choices_csv.empty() ? kAllAblationChoices : parse_choice_list(choices_csv);
    auto rows = run_ablation(base, train_data, test_data, seeds, choices);

    ReportTable t;
    t.title = "ablation";
    for (const auto& r : rows) {
        t.row_labels.push_back("choice " + std::to_string(r.choice));
        t.rows.push_back(r.mean);
        if (std::isnan(r.mean_correction))
            t.correction.push_back(std::nullopt);
        else
            t.correction.push_back(r.mean_correction);
        std::printf("choice %d: open=%.4f close=%.4f overall=%.4f correction=%.4f\n", r.choice,
                    r.mean.acc_open, r.mean.acc_close, r.mean.acc_overall, r.mean_correction);
    }
    if (!report_dir.empty()) emit_report({t}, report_dir);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"din: diffusion-based answer classification under noisy labels"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    int n = 2000, test_n = 400, l_open = 18;
    uint64_t synth_seed = 1;
    std::string train_out, test_out, vocab_out;
    synth->add_option("--n", n, "training sample count");
    synth->add_option("--test-n", test_n, "test sample count");
    synth->add_option("--l-open", l_open, "open-end class count (total L = l_open + 2)");
    synth->add_option("--seed", synth_seed, "corpus seed");
    synth->add_option("--train", train_out, "output train JSONL")->required();
    synth->add_option("--test", test_out, "output test JSONL");
    synth->add_option("--vocab", vocab_out, "output vocabulary JSON");

    // build-noise
    auto* bn = app.add_subcommand("build-noise", "inject label noise into a training file");
    std::string bn_in, bn_out, bn_kind = "semantic", bn_emb, bn_vocab;
    double bn_ratio = 0.1;
    uint64_t bn_seed = 0;
    int bn_minfreq = 2;
    bn->add_option("--in", bn_in, "input train JSONL")->required();
    bn->add_option("--out", bn_out, "output noisy JSONL")->required();
    bn->add_option("--kind", bn_kind, "semantic|random");
    bn->add_option("--ratio", bn_ratio, "noise ratio in [0,1]");
    bn->add_option("--seed", bn_seed, "noise seed");
    bn->add_option("--min-freq", bn_minfreq, "semantic-space frequency threshold");
    bn->add_option("--embeddings", bn_emb, "precomputed answer embeddings (JSONL)");
    bn->add_option("--vocab", bn_vocab, "vocabulary JSON (default: rebuilt from file)");

    // train
    auto* tr = app.add_subcommand("train", "train a model");
    ConfigCli tr_cc;
    std::string tr_data, tr_vocab, tr_out, tr_trace;
    add_train_flags(tr, tr_cc);
    tr->add_option("--data", tr_data, "training JSONL")->required();
    tr->add_option("--vocab", tr_vocab, "vocabulary JSON");
    tr->add_option("--out", tr_out, "output checkpoint path")->required();
    tr->add_option("--trace", tr_trace, "training trace CSV (default: <out>.trace.csv)");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_ckpt, ev_data, ev_vocab, ev_report, ev_chain;
    uint64_t ev_seed = 1;
    int ev_threads = 0;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--data", ev_data, "test JSONL")->required();
    ev->add_option("--vocab", ev_vocab, "vocabulary JSON (default: checkpoint vocabulary)");
    ev->add_option("--report", ev_report, "report output directory");
    ev->add_option("--seed", ev_seed, "evaluation seed");
    ev->add_option("--threads", ev_threads, "worker threads (0 = default)");
    ev->add_option("--chain-trace", ev_chain, "dump reverse-chain trace CSV");

    // ablate
    auto* ab = app.add_subcommand("ablate", "run the module-toggle ablation grid");
    ConfigCli ab_cc;
    std::string ab_train, ab_test, ab_vocab, ab_seeds = "1,2,3", ab_choices, ab_report;
    add_train_flags(ab, ab_cc);
    ab->add_option("--train", ab_train, "training JSONL")->required();
    ab->add_option("--test", ab_test, "test JSONL")->required();
    ab->add_option("--vocab", ab_vocab, "vocabulary JSON");
    ab->add_option("--seeds", ab_seeds, "comma-separated seeds");
    ab->add_option("--choices", ab_choices, "comma-separated subset of 0..5");
    ab->add_option("--report", ab_report, "report output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }

    try {
        if (synth->parsed())
            return cmd_synth(train_out, test_out, vocab_out, n, test_n, l_open, synth_seed);
        if (bn->parsed())
            return cmd_build_noise(bn_in, bn_out, bn_kind, bn_ratio, bn_seed, bn_minfreq, bn_emb,
                                   bn_vocab);
        if (tr->parsed()) return cmd_train(tr_cc, tr_data, tr_vocab, tr_out, tr_trace);
        if (ev->parsed())
            return cmd_eval(ev_ckpt, ev_data, ev_vocab, ev_report, ev_seed, ev_threads, ev_chain);
        if (ab->parsed())
            return cmd_ablate(ab_cc, ab_train, ab_test, ab_vocab, ab_seeds, ab_choices, ab_report);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
