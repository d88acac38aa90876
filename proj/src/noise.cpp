#include "din/noise.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "din/parallel.hpp"
#include "din/rng.hpp"

namespace din {

std::vector<double> TrigramHashEmbedding::embed(const std::string& answer) const {
    require(!answer.empty(), "embed: empty answer string");
    std::string padded = "^";
    for (char c : answer) padded += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    padded += '$';

    std::vector<double> v(dim_, 0.0);
    const int n = static_cast<int>(padded.size());
    for (int len = 1; len <= 3; ++len) {
        for (int i = 0; i + len <= n; ++i) {
            const uint64_t h = fnv1a64(std::string_view(padded).substr(i, len));
            const int bucket = static_cast<int>(h % static_cast<uint64_t>(dim_));
            const double sign = ((h >> 32) & 1) ? 1.0 : -1.0;
            v[bucket] += sign;
        }
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    require(norm > 0.0, "embed: zero-norm embedding for " + answer);
    for (double& x : v) x /= norm;
    return v;
}

FileEmbedding FileEmbedding::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open embedding file: " + path);
    FileEmbedding fe;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw Error(path + ": line " + std::to_string(line_no) + ": " + e.what());
        }
        std::string answer = j.at("answer").get<std::string>();
        std::vector<double> vec = j.at("vector").get<std::vector<double>>();
        require(!vec.empty(), path + ": empty vector for " + answer);
        if (fe.dim_ == 0) fe.dim_ = static_cast<int>(vec.size());
        require(static_cast<int>(vec.size()) == fe.dim_,
                path + ": inconsistent vector dimension at line " + std::to_string(line_no));
        fe.table_[answer] = std::move(vec);
    }
    require(!fe.table_.empty(), path + ": no embeddings");
    return fe;
}

std::vector<double> FileEmbedding::embed(const std::string& answer) const {
    auto it = table_.find(answer);
    if (it == table_.end()) throw Error("no embedding for answer: " + answer);
    return it->second;
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    require(na > 0.0 && nb > 0.0, "cosine: zero-norm vector");
    return dot / std::sqrt(na * nb);
}

}  // namespace

SemanticPairIndex build_semantic_index(const AnswerVocabulary& vocab,
                                       const EmbeddingProvider& provider,
                                       int min_frequency) {
    require(min_frequency >= 1, "build_semantic_index: min_frequency must be >= 1");
    std::vector<int> eligible;
    for (int i = 0; i < vocab.size(); ++i)
        if (!vocab.is_closed(i) && vocab.frequency[i] >= min_frequency) eligible.push_back(i);
    require(eligible.size() >= 2,
            "build_semantic_index: fewer than two eligible open answers (frequency >= " +
                std::to_string(min_frequency) + ")");

    std::vector<std::vector<double>> vecs(eligible.size());
    parallel_for(eligible.size(),
                 [&](size_t i) { vecs[i] = provider.embed(vocab.answers[eligible[i]]); });

    SemanticPairIndex index;
    index.embedding_dim = provider.dim();
    std::vector<std::pair<int, double>> best(eligible.size(), {-1, 0.0});
    parallel_for(eligible.size(), [&](size_t i) {
        int arg = -1;
        double top = 0.0;
        for (size_t j = 0; j < eligible.size(); ++j) {
            if (j == i) continue;
            const double c = cosine(vecs[i], vecs[j]);
            if (arg < 0 || c > top) {  // strict improvement keeps the lowest index on ties
                arg = eligible[j];
                top = c;
            }
        }
        best[i] = {arg, top};
    });
    for (size_t i = 0; i < eligible.size(); ++i) {
        index.pair_of[eligible[i]] = best[i].first;
        index.similarity[eligible[i]] = best[i].second;
    }
    return index;
}

namespace {

void count_flip(NoiseStats& st, int clean, int noisy) { ++st.flip[clean][noisy]; }

}  // namespace

Dataset inject_noise(const Dataset& dataset, const SemanticPairIndex* index,
                     const NoiseSpec& spec, NoiseStats* stats_out) {
    require(dataset.split == Split::train, "inject_noise: noise applies to the training split only");
    require(spec.ratio >= 0.0 && spec.ratio <= 1.0, "inject_noise: ratio outside [0,1]");
    require(spec.min_frequency >= 1, "inject_noise: min_frequency must be >= 1");
    if (spec.kind == NoiseKind::semantic)
        require(index != nullptr, "inject_noise: semantic noise needs a pair index");

    const int L = dataset.vocabulary.size();
    Dataset out = dataset;
    NoiseStats st;
    st.flip.assign(L, std::vector<int64_t>(L, 0));

    std::vector<size_t> open_idx, closed_idx;
    for (size_t i = 0; i < out.samples.size(); ++i) {
        if (out.samples[i].qtype == QType::open)
            open_idx.push_back(i);
        else
            closed_idx.push_back(i);
    }
    st.n_open = static_cast<int64_t>(open_idx.size());
    st.n_closed = static_cast<int64_t>(closed_idx.size());

    // Selection order is a pure function of (seed, sample id): rank by hash.
    std::vector<uint64_t> key(out.samples.size());
    parallel_for(out.samples.size(), [&](size_t i) {
        key[i] = derive_seed(spec.seed, out.samples[i].id);
    });
    auto by_key = [&](size_t a, size_t b) {
        if (key[a] != key[b]) return key[a] < key[b];
        return out.samples[a].id < out.samples[b].id;
    };
    std::sort(open_idx.begin(), open_idx.end(), by_key);
    std::sort(closed_idx.begin(), closed_idx.end(), by_key);

    const auto closed_classes = dataset.vocabulary.closed_indices();

    auto flip_sample = [&](Sample& s) -> bool {
        const int old = s.answer_index;
        int next = -1;
        Rng rng(derive_seed(spec.seed, fnv1a64(s.id), 0xf11bULL));
        if (spec.kind == NoiseKind::random_shuffle) {
            if (L < 2) return false;
            next = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(L - 1)));
            if (next >= old) ++next;
        } else if (s.qtype == QType::open) {
            if (!index->contains(old)) return false;  // below frequency threshold
            next = index->pair_of.at(old);
        } else {
            if (closed_classes.size() < 2) return false;
            std::vector<int> candidates;
            for (int c : closed_classes)
                if (c != old) candidates.push_back(c);
            if (candidates.empty()) return false;
            next = candidates[rng.uniform_int(candidates.size())];
        }
        if (next == old || next < 0) return false;
        s.clean_answer_index = old;
        s.answer_index = next;
        s.is_noised = true;
        count_flip(st, old, next);
        return true;
    };

    auto run_stratum = [&](const std::vector<size_t>& order, int64_t target, int64_t& noised) {
        for (size_t idx : order) {
            if (noised >= target) break;
            if (flip_sample(out.samples[idx]))
                ++noised;
            else
                ++st.skipped;
        }
    };

    const auto target_open = static_cast<int64_t>(std::floor(spec.ratio * st.n_open));
    const auto target_closed = static_cast<int64_t>(std::floor(spec.ratio * st.n_closed));
    run_stratum(open_idx, target_open, st.noised_open);
    run_stratum(closed_idx, target_closed, st.noised_closed);

    if (stats_out) *stats_out = std::move(st);
    return out;
}

NoiseStats noise_report(const Dataset& dataset) {
    const int L = dataset.vocabulary.size();
    NoiseStats st;
    st.flip.assign(L, std::vector<int64_t>(L, 0));
    for (const auto& s : dataset.samples) {
        if (s.qtype == QType::open)
            ++st.n_open;
        else
            ++st.n_closed;
        if (s.is_noised) {
            require(s.clean_answer_index.has_value(), "noise_report: noised sample lacks clean label");
            if (s.qtype == QType::open)
                ++st.noised_open;
            else
                ++st.noised_closed;
            count_flip(st, *s.clean_answer_index, s.answer_index);
        }
    }
    return st;
}

std::string NoiseStats::to_json() const {
    nlohmann::ordered_json j;
    j["n_open"] = n_open;
    j["n_closed"] = n_closed;
    j["noised_open"] = noised_open;
    j["noised_closed"] = noised_closed;
    j["ratio_open"] = ratio_open();
    j["ratio_closed"] = ratio_closed();
    j["skipped"] = skipped;
    j["flip"] = flip;
    return j.dump(2);
}

}  // namespace din
