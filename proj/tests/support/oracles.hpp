#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "din/noise.hpp"

namespace testsupport {

// Map-backed embedding provider for hand-built semantic spaces.
class MapEmbedding : public din::EmbeddingProvider {
public:
    MapEmbedding(std::map<std::string, std::vector<double>> table, int dim)
        : table_(std::move(table)), dim_(dim) {}
    std::vector<double> embed(const std::string& answer) const override {
        return table_.at(answer);
    }
    int dim() const override { return dim_; }

private:
    std::map<std::string, std::vector<double>> table_;
    int dim_;
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / std::sqrt(na * nb);
}

// O(L^2) scan over eligible answers; the independent check for the pair index.
inline std::map<int, int> brute_force_pairs(const din::AnswerVocabulary& vocab,
                                            const din::EmbeddingProvider& provider,
                                            int min_frequency) {
    std::vector<int> eligible;
    for (int i = 0; i < vocab.size(); ++i)
        if (!vocab.is_closed(i) && vocab.frequency[i] >= min_frequency) eligible.push_back(i);
    std::map<int, int> pairs;
    for (int i : eligible) {
        auto ei = provider.embed(vocab.answers[i]);
        int best = -1;
        double top = -2.0;
        for (int j : eligible) {
            if (j == i) continue;
            const double c = cosine(ei, provider.embed(vocab.answers[j]));
            if (best < 0 || c > top) {
                best = j;
                top = c;
            }
        }
        pairs[i] = best;
    }
    return pairs;
}

// Conjugate-Gaussian conditioning for the scalar case: prior x ~ N(m, v),
// observation y | x ~ N(a x + b, s2). Independent route to the reverse-step
// posterior.
struct Gaussian1D {
    double mean = 0.0;
    double var = 0.0;
};

inline Gaussian1D condition_gaussian(double m, double v, double a, double b, double s2, double y) {
    const double prec = 1.0 / v + a * a / s2;
    Gaussian1D post;
    post.var = 1.0 / prec;
    post.mean = post.var * (m / v + a * (y - b) / s2);
    return post;
}

struct MeanVar {
    double mean = 0.0;
    double var = 0.0;
};

inline MeanVar sample_stats(const std::vector<double>& xs) {
    MeanVar mv;
    for (double x : xs) mv.mean += x;
    mv.mean /= static_cast<double>(xs.size());
    for (double x : xs) mv.var += (x - mv.mean) * (x - mv.mean);
    mv.var /= static_cast<double>(xs.size() - 1);
    return mv;
}

}  // namespace testsupport
