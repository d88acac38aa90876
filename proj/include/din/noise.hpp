#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "din/dataset.hpp"

namespace din {

// Deterministic answer-string embedding. Equal strings map to equal vectors
// with positive norm.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::vector<double> embed(const std::string& answer) const = 0;
    virtual int dim() const = 0;
};

// Character n-gram hashing embedding (n up to 3, signed buckets, L2
// normalized). Runs with no external model; similar spellings land close,
// which is what human-style mislabels need.
class TrigramHashEmbedding : public EmbeddingProvider {
public:
    explicit TrigramHashEmbedding(int dim = 256) : dim_(dim) {}
    std::vector<double> embed(const std::string& answer) const override;
    int dim() const override { return dim_; }

private:
    int dim_;
};

// Precomputed embeddings loaded from a JSONL file of
// {"answer": str, "vector": [reals]} records, for plugging in language-model
// spaces.
class FileEmbedding : public EmbeddingProvider {
public:
    static FileEmbedding from_file(const std::string& path);
    std::vector<double> embed(const std::string& answer) const override;
    int dim() const override { return dim_; }

private:
    std::map<std::string, std::vector<double>> table_;
    int dim_ = 0;
};

// Nearest semantic neighbor for each eligible open-end answer.
struct SemanticPairIndex {
    std::map<int, int> pair_of;         // answer index -> nearest neighbor index
    std::map<int, double> similarity;   // cosine similarity of that pair
    int embedding_dim = 0;

    bool contains(int idx) const { return pair_of.count(idx) != 0; }
};

// pair_of[i] = argmax over eligible j != i of cosine(embed_i, embed_j), ties
// broken toward the lower index. Eligible means open-end with frequency >=
// min_frequency.
SemanticPairIndex build_semantic_index(const AnswerVocabulary& vocab,
                                       const EmbeddingProvider& provider,
                                       int min_frequency);

enum class NoiseKind { semantic, random_shuffle };

struct NoiseSpec {
    NoiseKind kind = NoiseKind::semantic;
    double ratio = 0.1;
    uint64_t seed = 0;
    int min_frequency = 2;
};

struct NoiseStats {
    int64_t n_open = 0, n_closed = 0;
    int64_t noised_open = 0, noised_closed = 0;
    int64_t skipped = 0;  // selected samples with no eligible replacement
    std::vector<std::vector<int64_t>> flip;  // clean class -> noisy class counts

    double ratio_open() const { return n_open ? double(noised_open) / n_open : 0.0; }
    double ratio_closed() const { return n_closed ? double(noised_closed) / n_closed : 0.0; }
    std::string to_json() const;
};

// Flips exactly floor(ratio * stratum) labels per question-type stratum
// (minus reported skips). Selection ranks samples by a per-id hash so the
// outcome is a pure function of (dataset, index, spec) and of nothing else.
Dataset inject_noise(const Dataset& dataset, const SemanticPairIndex* index,
                     const NoiseSpec& spec, NoiseStats* stats = nullptr);

NoiseStats noise_report(const Dataset& dataset);

}  // namespace din
