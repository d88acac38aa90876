#include "din/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>

#include <json.hpp>

#include "din/parallel.hpp"
#include "din/rng.hpp"

namespace din {

using ordered_json = nlohmann::ordered_json;

std::string to_string(QType q) { return q == QType::open ? "open" : "closed"; }

QType qtype_from_string(const std::string& s) {
    if (s == "open") return QType::open;
    if (s == "closed") return QType::closed;
    throw Error("unknown qtype: " + s);
}

int AnswerVocabulary::lookup(const std::string& answer) const {
    auto it = index_of.find(answer);
    return it == index_of.end() ? -1 : it->second;
}

std::vector<int> AnswerVocabulary::closed_indices() const {
    std::vector<int> v;
    for (int i = 0; i < size(); ++i)
        if (closed[i]) v.push_back(i);
    return v;
}

std::vector<int> AnswerVocabulary::open_indices() const {
    std::vector<int> v;
    for (int i = 0; i < size(); ++i)
        if (!closed[i]) v.push_back(i);
    return v;
}

size_t Dataset::count_qtype(QType q) const {
    size_t n = 0;
    for (const auto& s : samples)
        if (s.qtype == q) ++n;
    return n;
}

AnswerVocabulary build_vocabulary(const std::vector<AnswerRecord>& records) {
    require(!records.empty(), "build_vocabulary: no records");
    struct Acc {
        int64_t freq = 0;
        bool always_closed = true;
    };
    std::map<std::string, Acc> acc;
    for (const auto& r : records) {
        auto& a = acc[r.answer];
        ++a.freq;
        if (r.qtype != QType::closed) a.always_closed = false;
    }

    std::vector<std::pair<std::string, Acc>> order(acc.begin(), acc.end());
    std::sort(order.begin(), order.end(), [](const auto& x, const auto& y) {
        if (x.second.freq != y.second.freq) return x.second.freq > y.second.freq;
        return x.first < y.first;
    });

    AnswerVocabulary vocab;
    for (const auto& [answer, a] : order) {
        vocab.index_of[answer] = static_cast<int>(vocab.answers.size());
        vocab.answers.push_back(answer);
        vocab.frequency.push_back(a.freq);
        vocab.closed.push_back(a.always_closed);
    }
    return vocab;
}

namespace {

ordered_json image_to_json(const Image& img) {
    ordered_json rows = ordered_json::array();
    for (int i = 0; i < img.rows; ++i) {
        ordered_json row = ordered_json::array();
        for (int j = 0; j < img.cols; ++j) row.push_back(img.at(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Image image_from_json(const ordered_json& j) {
    require(j.is_array() && !j.empty(), "image: expected non-empty 2-D array");
    Image img;
    img.rows = static_cast<int>(j.size());
    img.cols = static_cast<int>(j[0].size());
    img.px.reserve(static_cast<size_t>(img.rows) * img.cols);
    for (const auto& row : j) {
        require(row.is_array() && static_cast<int>(row.size()) == img.cols,
                "image: ragged rows");
        for (const auto& v : row) {
            require(v.is_number(), "image: non-numeric pixel");
            img.px.push_back(v.get<double>());
        }
    }
    return img;
}

Image load_image_ref(const std::string& ref, const std::string& base_dir) {
    namespace fs = std::filesystem;
    fs::path p(ref);
    if (p.is_relative() && !base_dir.empty()) p = fs::path(base_dir) / p;
    std::ifstream in(p);
    if (!in) throw Error("cannot open referenced image file: " + p.string());
    ordered_json j;
    in >> j;
    return image_from_json(j);
}

}  // namespace

Dataset load_dataset(const std::string& path, const AnswerVocabulary* vocab, Split split) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open dataset file: " + path);
    const std::string base_dir = std::filesystem::path(path).parent_path().string();

    struct Raw {
        Sample sample;  // answer_index/clean filled after vocabulary fixup
        std::string answer;
        std::string clean_answer;
        bool has_clean = false;
        int line = 0;
    };
    std::vector<Raw> raws;
    std::set<std::string> ids;

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception& e) {
            throw Error(path + ": line " + std::to_string(line_no) + ": malformed record: " +
                        e.what());
        }
        try {
            Raw r;
            r.line = line_no;
            r.sample.id = j.at("id").get<std::string>();
            const auto& im = j.at("image");
            if (im.is_string()) {
                r.sample.image_ref = im.get<std::string>();
                r.sample.image = load_image_ref(r.sample.image_ref, base_dir);
            } else {
                r.sample.image = image_from_json(im);
            }
            r.sample.question = j.at("question").get<std::string>();
            r.answer = j.at("answer").get<std::string>();
            r.sample.qtype = qtype_from_string(j.at("qtype").get<std::string>());
            if (j.contains("clean_answer")) {
                r.clean_answer = j.at("clean_answer").get<std::string>();
                r.has_clean = true;
            }
            if (j.contains("is_noised")) r.sample.is_noised = j.at("is_noised").get<bool>();
            if (!ids.insert(r.sample.id).second)
                throw Error("duplicate id: " + r.sample.id);
            raws.push_back(std::move(r));
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw Error(path + ": line " + std::to_string(line_no) + ": malformed record: " +
                        e.what());
        }
    }

    Dataset ds;
    ds.split = split;
    if (vocab) {
        ds.vocabulary = *vocab;
        // Vocabulary files carry no counts; refresh them from this file.
        std::fill(ds.vocabulary.frequency.begin(), ds.vocabulary.frequency.end(), 0);
        ds.vocabulary.frequency.resize(ds.vocabulary.answers.size(), 0);
        for (const auto& r : raws) {
            int idx = ds.vocabulary.lookup(r.answer);
            if (idx >= 0) ++ds.vocabulary.frequency[idx];
        }
    } else {
        if (raws.empty())
            throw Error(path + ": empty dataset and no vocabulary supplied");
        std::vector<AnswerRecord> recs;
        recs.reserve(raws.size());
        for (const auto& r : raws) recs.push_back({r.answer, r.sample.qtype});
        ds.vocabulary = build_vocabulary(recs);
    }

    ds.samples.reserve(raws.size());
    for (auto& r : raws) {
        int idx = ds.vocabulary.lookup(r.answer);
        if (idx < 0)
            throw Error(path + ": line " + std::to_string(r.line) +
                        ": answer not in vocabulary: " + r.answer);
        r.sample.answer_index = idx;
        if (r.has_clean) {
            int cidx = ds.vocabulary.lookup(r.clean_answer);
            if (cidx < 0)
                throw Error(path + ": line " + std::to_string(r.line) +
                            ": clean answer not in vocabulary: " + r.clean_answer);
            r.sample.clean_answer_index = cidx;
        }
        if (r.sample.is_noised) {
            require(r.sample.clean_answer_index.has_value() &&
                        *r.sample.clean_answer_index != r.sample.answer_index,
                    path + ": line " + std::to_string(r.line) +
                        ": is_noised requires a differing clean_answer");
        }
        ds.samples.push_back(std::move(r.sample));
    }
    return ds;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write dataset file: " + path);
    for (const auto& s : dataset.samples) {
        ordered_json j;
        j["id"] = s.id;
        if (!s.image_ref.empty())
            j["image"] = s.image_ref;
        else
            j["image"] = image_to_json(s.image);
        j["question"] = s.question;
        j["answer"] = dataset.vocabulary.answers.at(s.answer_index);
        j["qtype"] = to_string(s.qtype);
        if (s.clean_answer_index)
            j["clean_answer"] = dataset.vocabulary.answers.at(*s.clean_answer_index);
        if (s.is_noised) j["is_noised"] = true;
        out << j.dump() << '\n';
    }
    if (!out) throw Error("write failed: " + path);
}

Dataset remap_to_vocabulary(const Dataset& ds, const AnswerVocabulary& vocab) {
    Dataset out;
    out.split = ds.split;
    out.vocabulary = vocab;
    std::fill(out.vocabulary.frequency.begin(), out.vocabulary.frequency.end(), 0);
    out.vocabulary.frequency.resize(vocab.answers.size(), 0);
    out.samples = ds.samples;
    for (auto& s : out.samples) {
        const std::string& answer = ds.vocabulary.answers.at(s.answer_index);
        const int idx = vocab.lookup(answer);
        require(idx >= 0, "remap_to_vocabulary: answer not in vocabulary: " + answer);
        s.answer_index = idx;
        ++out.vocabulary.frequency[idx];
        if (s.clean_answer_index) {
            const std::string& clean = ds.vocabulary.answers.at(*s.clean_answer_index);
            const int cidx = vocab.lookup(clean);
            require(cidx >= 0, "remap_to_vocabulary: answer not in vocabulary: " + clean);
            s.clean_answer_index = cidx;
        }
    }
    return out;
}

AnswerVocabulary load_vocabulary(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open vocabulary file: " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw Error(path + ": malformed vocabulary: " + e.what());
    }
    require(j.contains("answers") && j.contains("closed"), path + ": vocabulary needs 'answers' and 'closed'");
    AnswerVocabulary v;
    for (const auto& a : j["answers"]) {
        std::string s = a.get<std::string>();
        require(v.index_of.find(s) == v.index_of.end(), path + ": duplicate answer " + s);
        v.index_of[s] = static_cast<int>(v.answers.size());
        v.answers.push_back(std::move(s));
    }
    for (const auto& c : j["closed"]) v.closed.push_back(c.get<bool>());
    require(v.closed.size() == v.answers.size(), path + ": answers/closed length mismatch");
    v.frequency.assign(v.answers.size(), 0);
    return v;
}

void save_vocabulary(const AnswerVocabulary& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write vocabulary file: " + path);
    ordered_json j;
    j["answers"] = vocab.answers;
    j["closed"] = ordered_json::array();
    for (bool c : vocab.closed) j["closed"].push_back(c);
    out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic corpus

const char* const kSynthOpenQuestion = "what pattern is shown";
const char* const kSynthClosedQuestion = "is the image dark";

namespace {

constexpr int kImgSide = 8;
constexpr uint64_t kMaskSalt = 0x5eed5eedULL;
constexpr double kQuantum = 1.0 / 1024.0;
constexpr double kOnThreshold = 0.1;   // separates pattern pixels from jitter
constexpr double kDarkThreshold = 0.5; // separates dark and bright peaks

double quantize(double x) { return std::round(x / kQuantum) * kQuantum; }

const char* kPatternNames[] = {
    "stripes", "spots",  "rings",   "grid",   "waves",   "checker", "diagonal",
    "cross",   "border", "blob",    "noise",  "gradient", "arc",    "dots",
    "bands",   "mesh",   "speckle", "zigzag", "spiral",  "corner",
};

// Canonical per-class 8x8 binary mask; a function of the class index only so
// answers can be recomputed from pixels without knowing the corpus seed.
std::vector<bool> pattern_mask(int k) {
    for (uint64_t attempt = 0;; ++attempt) {
        Rng rng(derive_seed(kMaskSalt, static_cast<uint64_t>(k), attempt));
        std::vector<bool> mask(kImgSide * kImgSide);
        int on = 0;
        for (auto&& bit : mask) {
            bool v = (rng.next_u64() & 1) != 0;
            bit = v;
            on += v ? 1 : 0;
        }
        if (on >= 8 && on <= kImgSide * kImgSide - 8) return mask;
    }
}

const std::vector<std::vector<bool>>& masks_up_to(int l_open) {
    static std::vector<std::vector<bool>> cache;
    static std::mutex m;
    std::lock_guard<std::mutex> lock(m);
    while (static_cast<int>(cache.size()) < l_open) {
        auto mask = pattern_mask(static_cast<int>(cache.size()));
        for (const auto& prev : cache)
            require(prev != mask, "synthetic corpus: duplicate pattern mask");
        cache.push_back(std::move(mask));
    }
    return cache;
}

}  // namespace

std::string synthetic_pattern_name(int k) {
    constexpr int named = static_cast<int>(sizeof(kPatternNames) / sizeof(kPatternNames[0]));
    if (k < named) return kPatternNames[k];
    return "pattern" + std::to_string(k);
}

std::string synthetic_answer_for(const Image& image, QType qtype, int l_open) {
    require(image.rows == kImgSide && image.cols == kImgSide, "synthetic image must be 8x8");
    if (qtype == QType::closed) {
        double peak = 0.0;
        for (double v : image.px) peak = std::max(peak, v);
        return peak < kDarkThreshold ? "yes" : "no";
    }
    std::vector<bool> bits(image.px.size());
    for (size_t i = 0; i < image.px.size(); ++i) bits[i] = image.px[i] > kOnThreshold;
    const auto& masks = masks_up_to(l_open);
    for (int k = 0; k < l_open; ++k)
        if (masks[k] == bits) return synthetic_pattern_name(k);
    throw Error("synthetic image matches no pattern class");
}

Dataset generate_synthetic_corpus(int n, int l_open, uint64_t seed) {
    require(n >= 1, "generate_synthetic_corpus: n must be >= 1");
    require(l_open >= 2, "generate_synthetic_corpus: l_open must be >= 2");
    const auto& masks = masks_up_to(l_open);

    std::vector<Sample> samples(static_cast<size_t>(n));
    parallel_for(static_cast<size_t>(n), [&](size_t i) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(i), 0x17a9));
        Sample s;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "synth-%06zu", i);
        s.id = idbuf;
        const int k = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(l_open)));
        const bool dark = (rng.next_u64() & 1) != 0;
        const double amp = dark ? 0.15 + 0.20 * rng.uniform() : 0.65 + 0.30 * rng.uniform();
        s.image.rows = kImgSide;
        s.image.cols = kImgSide;
        s.image.px.resize(kImgSide * kImgSide);
        const auto& mask = masks[k];
        for (size_t p = 0; p < s.image.px.size(); ++p) {
            const double jitter = 0.05 * rng.uniform();
            s.image.px[p] = quantize(mask[p] ? amp + jitter : jitter);
        }
        s.qtype = (i % 2 == 0) ? QType::open : QType::closed;
        s.question = s.qtype == QType::open ? kSynthOpenQuestion : kSynthClosedQuestion;
        samples[i] = std::move(s);
    });

    std::vector<std::string> answers(samples.size());
    std::map<std::string, int64_t> freq;
    for (size_t i = 0; i < samples.size(); ++i) {
        answers[i] = synthetic_answer_for(samples[i].image, samples[i].qtype, l_open);
        ++freq[answers[i]];
    }

    // All L_open + 2 classes exist in the vocabulary even if a small corpus
    // leaves some unsampled; ordering matches build_vocabulary's rule.
    struct Entry {
        std::string answer;
        int64_t freq;
        bool closed;
    };
    std::vector<Entry> entries;
    for (int k = 0; k < l_open; ++k) {
        const std::string name = synthetic_pattern_name(k);
        entries.push_back({name, freq.count(name) ? freq[name] : 0, false});
    }
    entries.push_back({"yes", freq.count("yes") ? freq["yes"] : 0, true});
    entries.push_back({"no", freq.count("no") ? freq["no"] : 0, true});
    std::sort(entries.begin(), entries.end(), [](const Entry& x, const Entry& y) {
        if (x.freq != y.freq) return x.freq > y.freq;
        return x.answer < y.answer;
    });

    Dataset ds;
    ds.split = Split::train;
    for (const auto& e : entries) {
        ds.vocabulary.index_of[e.answer] = static_cast<int>(ds.vocabulary.answers.size());
        ds.vocabulary.answers.push_back(e.answer);
        ds.vocabulary.frequency.push_back(e.freq);
        ds.vocabulary.closed.push_back(e.closed);
    }
    ds.samples = std::move(samples);
    for (size_t i = 0; i < ds.samples.size(); ++i)
        ds.samples[i].answer_index = ds.vocabulary.lookup(answers[i]);
    return ds;
}

}  // namespace din
