#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "din/common.hpp"

namespace din {

// Single-channel real-valued image grid.
struct Image {
    int rows = 0;
    int cols = 0;
    std::vector<double> px;

    double at(int i, int j) const { return px[static_cast<size_t>(i) * cols + j]; }
    double& at(int i, int j) { return px[static_cast<size_t>(i) * cols + j]; }
    bool operator==(const Image&) const = default;
};

enum class QType { open, closed };

std::string to_string(QType q);
QType qtype_from_string(const std::string& s);

struct Sample {
    std::string id;
    Image image;            // inline pixels (empty when image_ref is set)
    std::string image_ref;  // path reference, resolved lazily by loaders
    std::string question;
    int answer_index = 0;
    QType qtype = QType::open;
    std::optional<int> clean_answer_index;  // benchmark files only; evaluation use
    bool is_noised = false;

    bool operator==(const Sample&) const = default;
};

struct AnswerVocabulary {
    std::vector<std::string> answers;             // index order
    std::unordered_map<std::string, int> index_of;
    std::vector<int64_t> frequency;               // per-class training count
    std::vector<bool> closed;                     // per-class closed-end flag

    int size() const { return static_cast<int>(answers.size()); }
    bool is_closed(int idx) const { return closed[idx]; }
    int lookup(const std::string& answer) const;  // -1 if absent
    std::vector<int> closed_indices() const;
    std::vector<int> open_indices() const;
};

enum class Split { train, test };

struct Dataset {
    std::vector<Sample> samples;
    AnswerVocabulary vocabulary;
    Split split = Split::train;

    size_t size() const { return samples.size(); }
    size_t count_qtype(QType q) const;
};

struct AnswerRecord {
    std::string answer;
    QType qtype = QType::open;
};

// Classes ordered by (frequency desc, lexicographic); an answer seen under
// both question types counts as open.
AnswerVocabulary build_vocabulary(const std::vector<AnswerRecord>& records);

Dataset load_dataset(const std::string& path,
                     const AnswerVocabulary* vocab = nullptr,
                     Split split = Split::train);
void save_dataset(const Dataset& dataset, const std::string& path);

AnswerVocabulary load_vocabulary(const std::string& path);
void save_vocabulary(const AnswerVocabulary& vocab, const std::string& path);

// Re-indexes every sample against `vocab` (matching by answer string); errors
// if an answer is missing there. Frequencies are recounted from the samples.
Dataset remap_to_vocabulary(const Dataset& ds, const AnswerVocabulary& vocab);

// Deterministic 8x8 pattern corpus: open questions ask for the rendered
// pattern class, closed questions ask whether the image is dark. Both answers
// are pure functions of the pixels, so the task is exactly learnable.
Dataset generate_synthetic_corpus(int n, int l_open, uint64_t seed);

// Recomputes the ground-truth answer string for a synthetic sample from its
// pixels alone (test oracle for the generator).
std::string synthetic_answer_for(const Image& image, QType qtype, int l_open);

extern const char* const kSynthOpenQuestion;
extern const char* const kSynthClosedQuestion;

std::string synthetic_pattern_name(int k);

}  // namespace din
