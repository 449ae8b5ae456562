#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pgx/data.hpp"
#include "pgx/errors.hpp"
#include "pgx/losses.hpp"
#include "pgx/model.hpp"
#include "pgx/rng.hpp"

namespace pgx {

struct TrainConfig {
    double learning_rate = 0.001;
    double l2_weight_decay = 0.1;
    // Decoupled decay scales weights by (1 - lr * decay) before the Adam
    // update and keeps the moment statistics clean; the coupled mode adds
    // decay * weight into the gradient instead.
    bool decoupled_decay = true;
    std::size_t epochs = 12;
    // Clipped to the training-set size.
    std::size_t batch_size = 128;
    LossWeights weights;
    ModelDims dims;
    std::uint64_t seed = 1;
    RiskInput risk_input = RiskInput::kTranslated;
    // Ablation switches; a disabled component is exactly zero in the loss
    // and in the logs.
    bool enable_latent = true;
    bool enable_translation = true;
    bool cox_mean_over_events = false;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;

    // epochs == 0 is allowed (a run that only materializes initial weights).
    void validate() const;
};

// Moment accumulators parallel to a fixed parameter ordering.
struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState like(std::span<Tensor* const> params,
                          const TrainConfig& cfg);
};

// One optimizer step with bias correction. params, grads and the state
// moments must agree pairwise in count and shape.
void adam_step(std::span<Tensor* const> params,
               std::span<const Tensor* const> grads, AdamState& state,
               const TrainConfig& cfg);

// Image-only baseline: bags are mean-pooled over patches, then a linear
// embedding and relu MLP produce the risk; permutation-invariant in the
// patches by construction.
struct MeanMilP {
    MLPP<Tensor> mlp;  // D_in -> D -> hidden -> 1
};

// Genomic-only reference model: the same MLP stack applied to the genomic
// row. The strong modality both trains and evaluates on genomic data.
struct GenomicCoxP {
    MLPP<Tensor> mlp;  // D_g -> D -> hidden -> 1
};

template <typename F>
void visit(MeanMilP& p, F&& f) {
    visit(p.mlp, "mlp", f);
}
template <typename F>
void visit(const MeanMilP& p, F&& f) {
    visit(p.mlp, "mlp", f);
}
template <typename F>
void visit(GenomicCoxP& p, F&& f) {
    visit(p.mlp, "mlp", f);
}
template <typename F>
void visit(const GenomicCoxP& p, F&& f) {
    visit(p.mlp, "mlp", f);
}

MeanMilP meanmil_init(Rng& rng, const ModelDims& dims);
GenomicCoxP genomic_cox_init(Rng& rng, const ModelDims& dims);

Var meanmil_forward(Tape& t, const MLPP<Var>& mlp, Var bag);
Var genomic_cox_forward(Tape& t, const MLPP<Var>& mlp, Var g0);

// Addresses of a struct's tensors in visit order; the shared ordering
// contract between parameters, gradients, optimizer state and checkpoints.
template <class P>
std::vector<Tensor*> param_slots(P& p) {
    std::vector<Tensor*> out;
    visit(p, [&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

enum class Method { kPathoGenX, kMeanMil, kGenomicCox };

struct BatchLoss {
    double cox = 0.0;
    double latent = 0.0;
    double translation = 0.0;
    double total = 0.0;
};
using EpochLog = std::vector<BatchLoss>;

// Everything that advances as training progresses, apart from the weights.
// The shuffle stream lives here so a reloaded checkpoint continues the
// exact patient orderings of the uninterrupted run.
struct TrainState {
    AdamState adam;
    Rng rng{0};
    std::size_t next_epoch = 0;
};

struct PathoGenXRun {
    PathoGenXP<Tensor> params;
    TrainState state;
    std::vector<EpochLog> log;  // one entry per completed epoch
};
struct MeanMilRun {
    MeanMilP params;
    TrainState state;
    std::vector<EpochLog> log;
};
struct GenomicCoxRun {
    GenomicCoxP params;
    TrainState state;
    std::vector<EpochLog> log;
};

// Fresh parameters and optimizer state for a run; consumes nothing from the
// dataset, so dims must already match it.
PathoGenXRun start_pathogenx(const TrainConfig& cfg);
MeanMilRun start_meanmil(const TrainConfig& cfg);
GenomicCoxRun start_genomic_cox(const TrainConfig& cfg);

// Runs epochs state.next_epoch .. cfg.epochs-1, one shuffled pass each,
// appending per-batch losses to run.log. Per batch: per-patient forward
// passes share one tape, the batch risk column feeds the survival loss,
// alignment terms are averaged over the batch, and one optimizer step is
// taken. A batch without events trains on the alignment terms alone; if
// those are disabled too the batch is logged as zeros and skipped. The
// PathoGen-X and genomic trainers require a genomic vector on every record.
void train(PathoGenXRun& run, std::span<const PatientRecord> records,
           const TrainConfig& cfg);
void train(MeanMilRun& run, std::span<const PatientRecord> records,
           const TrainConfig& cfg);
void train(GenomicCoxRun& run, std::span<const PatientRecord> records,
           const TrainConfig& cfg);

struct EvalResult {
    double c_index = 0.0;
    std::vector<double> risks;  // parallel to the records argument
};

// Image-only evaluation; genomic vectors may be absent.
EvalResult evaluate(const PathoGenXP<Tensor>& params,
                    std::span<const PatientRecord> records,
                    RiskInput risk_input);
EvalResult evaluate(const MeanMilP& params,
                    std::span<const PatientRecord> records);
// The genomic reference needs its modality at evaluation time as well.
EvalResult evaluate(const GenomicCoxP& params,
                    std::span<const PatientRecord> records);

struct FoldScore {
    double c_index = 0.0;
    std::vector<std::string> ids;  // held-out patients, dataset order
    std::vector<double> risks;     // parallel to ids
};

struct CrossValReport {
    std::vector<FoldScore> folds;
    double mean = 0.0;
    double std_dev = 0.0;  // population standard deviation
    // Trained per-fold parameters, kept for the PathoGen-X method only
    // (feature-correlation reporting needs them).
    std::vector<PathoGenXP<Tensor>> fold_params;
};

// k independent models, each validated on its held-out fold; fold f trains
// with seed mix64(cfg.seed, f + 1) so folds differ but the report is a pure
// function of (records, cfg, k).
CrossValReport cross_validate(Method method,
                              std::span<const PatientRecord> records,
                              const TrainConfig& cfg, std::size_t k = 4);

struct AblationRow {
    std::string label;
    double mean = 0.0;
    double std_dev = 0.0;
};

// Cross-validates the model with each alignment component toggled:
// divergence+distance on the latent pair only, on the translation pair
// only, then both. Three rows, in that order.
std::vector<AblationRow> ablation_alignment(
    std::span<const PatientRecord> records, const TrainConfig& cfg,
    std::size_t k = 4);

// Per-patient feature rows for correlation reporting: the encoder's raw
// class token, the decoder's genomic estimate, and the projected genomic
// embedding each stacked into an [n x D] matrix. Requires genomic vectors.
struct TranslationFeatures {
    Tensor raw_cls{Shape{1, 1}};
    Tensor translated{Shape{1, 1}};
    Tensor genomic_embed{Shape{1, 1}};
};
TranslationFeatures collect_translation_features(
    const PathoGenXP<Tensor>& params, std::span<const PatientRecord> records);

// Checkpoints hold named tensors; the names come from visit() and double as
// the architecture check on reload.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

template <class P>
NamedTensors named_tensors(const P& p) {
    NamedTensors out;
    visit(p, [&](const std::string& name, const Tensor& t) {
        out.emplace_back(name, t);
    });
    return out;
}

// Writes stored values back into the struct after verifying that names,
// order and shapes all agree; throws ValidationError naming the first
// offender and leaves the struct untouched on failure.
template <class P>
void restore_tensors(P& p, const NamedTensors& stored) {
    std::vector<std::pair<std::string, Tensor*>> slots;
    visit(p, [&](const std::string& name, Tensor& t) {
        slots.emplace_back(name, &t);
    });
    if (slots.size() != stored.size()) {
        throw ValidationError("checkpoint holds " +
                              std::to_string(stored.size()) +
                              " tensors, model expects " +
                              std::to_string(slots.size()));
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (stored[i].first != slots[i].first) {
            throw ValidationError("checkpoint tensor " + stored[i].first +
                                  " where model expects " + slots[i].first);
        }
        if (stored[i].second.shape() != slots[i].second->shape()) {
            throw ValidationError(
                "checkpoint tensor " + stored[i].first + " has shape " +
                shape_str(stored[i].second.shape()) + ", model expects " +
                shape_str(slots[i].second->shape()));
        }
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
        *slots[i].second = stored[i].second;
    }
}

// Versioned binary: magic "PGXC", u16 version, the resolved config echo,
// the epoch cursor and RNG state, the named parameter blocks (name length
// u16, name, rank u8, u32 dims, f64 little-endian payload), then optimizer
// moments as "adam.m.<name>" / "adam.v.<name>" blocks. A run saved and
// reloaded continues bitwise identically.
void save_checkpoint(const std::filesystem::path& path,
                     const NamedTensors& params, const TrainState& state,
                     const std::string& config_echo);

struct LoadedCheckpoint {
    NamedTensors params;
    TrainState state;
    std::string config_echo;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pgx
