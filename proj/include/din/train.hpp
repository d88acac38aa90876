#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "din/dataset.hpp"
#include "din/model.hpp"

namespace din {

struct TrainConfig {
    // Loss / refinement knobs.
    double alpha = 0.5;     // diffusion-vs-classifier loss balance
    double gamma = 1.0;     // focal exponent
    double tau = 0.99;      // EMA momentum
    double rfl_clip = -4.0; // reverse-term log clip floor

    // Diffusion.
    int T = 50;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::string dif_loss = "mse";   // mse | kl
    std::string init = "terminal";  // terminal | gaussian

    // Optimization.
    double lr = 1e-3;
    int batch_size = 16;
    int epochs = 30;
    uint64_t seed = 1;

    // Module toggles (ablation grid).
    bool use_ad = true;
    bool use_rfl = true;
    bool use_aa = true;

    // Model size.
    int d = 64;
    int heads = 1;
    int enc_blocks = 2;
    int ffn_mult = 4;
    int patch = 4;
    int time_embed = 32;
    int denoiser_hidden = 128;
    int max_q_tokens = 32;
    std::string classifier_input = "cond";

    int threads = 0;  // 0 = library default

    diffusion::DifLossKind dif_loss_kind() const;
    diffusion::InitMode init_mode() const;
    ModelConfig model_config(int L) const;
    std::map<std::string, std::string> to_config_map() const;
    static TrainConfig from_config_map(const std::map<std::string, std::string>& m);
};

struct TraceRow {
    int64_t step = 0;
    double w = 0.0;
    double l_rfl = 0.0;  // classifier-loss term (RFL, or CE when use_rfl=false)
    double l_dif = 0.0;
    double l_total = 0.0;
};

void write_trace_csv(const std::vector<TraceRow>& rows, const std::string& path);

struct Metrics {
    double acc_open = 0.0;
    double acc_close = 0.0;
    double acc_overall = 0.0;  // macro mean over defined strata
    double acc_micro = 0.0;    // sample-weighted
    int64_t n_open = 0;
    int64_t n_close = 0;
    bool open_defined = false;
    bool close_defined = false;
};

double macro_overall(double acc_open, double acc_close);
Metrics compute_metrics(const std::vector<int>& predictions, const Dataset& data);

Model train(const TrainConfig& config, const Dataset& train_data,
            std::vector<TraceRow>* trace = nullptr);

std::vector<int> predict_answers(const Model& model, const TrainConfig& config,
                                 const Dataset& data, const std::vector<size_t>& indices,
                                 uint64_t seed,
                                 std::vector<std::vector<diffusion::ChainStep>>* chains = nullptr);

// Debugging aid: per-sample reverse-chain trace (t, mean norm, y0 argmax).
void write_chain_trace_csv(const Dataset& data, const std::vector<size_t>& indices,
                           const std::vector<std::vector<diffusion::ChainStep>>& chains,
                           const std::string& path);

// Inference-only readout; asserts the NLR instrumentation counter stays put.
Metrics evaluate(const Model& model, const TrainConfig& config, const Dataset& test_data,
                 uint64_t seed);

// Fraction of noised training samples whose prediction recovers the clean
// label.
double correction_rate(const Model& model, const TrainConfig& config, const Dataset& noisy_train,
                       uint64_t seed);

std::vector<size_t> noised_indices(const Dataset& data);
double correction_fraction(const std::vector<int>& predictions, const Dataset& data,
                           const std::vector<size_t>& noised);

struct AblationRow {
    int choice = 0;
    Metrics mean;
    double mean_correction = 0.0;
    std::vector<Metrics> per_seed;
    std::vector<double> per_seed_correction;
};

extern const std::vector<int> kAllAblationChoices;  // 0..5

// Table-style ablation: choice toggles {AD, RFL, AA}, identical seeds across
// choices, one row per choice with per-seed and mean metrics.
std::vector<AblationRow> run_ablation(const TrainConfig& base, const Dataset& train_data,
                                      const Dataset& test_data,
                                      const std::vector<uint64_t>& seeds,
                                      const std::vector<int>& choices = kAllAblationChoices,
                                      std::vector<TraceRow>* last_trace = nullptr);

void apply_ablation_choice(TrainConfig& cfg, int choice);

struct ReportTable {
    std::string title;
    std::vector<std::string> row_labels;
    std::vector<Metrics> rows;
    std::vector<std::optional<double>> correction;  // optional per row
};

// Writes <dir>/report.csv and <dir>/report.md, percentages with two decimals;
// regeneration from equal inputs is byte-identical.
void emit_report(const std::vector<ReportTable>& tables, const std::string& dir);

void save_model_checkpoint(const Model& model, const TrainConfig& config, const std::string& path);
std::pair<Checkpoint, TrainConfig> load_model_checkpoint(const std::string& path);

}  // namespace din
