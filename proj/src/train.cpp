#include "pgx/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>

#include "bytes.hpp"
#include "pgx/survival.hpp"

namespace pgx {

using detail::append_f64;
using detail::append_u16;
using detail::append_u32;
using detail::append_u64;
using detail::ByteReader;
using detail::read_file;
using detail::write_file;

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) {
        throw ValidationError("learning_rate must be positive");
    }
    if (!(l2_weight_decay >= 0.0)) {
        throw ValidationError("l2_weight_decay must be nonnegative");
    }
    if (batch_size == 0) {
        throw ValidationError("batch_size must be positive");
    }
    if (!(adam_beta1 >= 0.0) || adam_beta1 >= 1.0 || !(adam_beta2 >= 0.0) ||
        adam_beta2 >= 1.0) {
        throw ValidationError("Adam betas must lie in [0, 1)");
    }
    if (!(adam_epsilon > 0.0)) {
        throw ValidationError("adam_epsilon must be positive");
    }
    if (weights.lambda1 < 0.0 || weights.lambda2 < 0.0 || weights.alpha < 0.0) {
        throw ValidationError("loss weights must be nonnegative");
    }
}

AdamState AdamState::like(std::span<Tensor* const> params,
                          const TrainConfig& cfg) {
    AdamState state;
    state.beta1 = cfg.adam_beta1;
    state.beta2 = cfg.adam_beta2;
    state.epsilon = cfg.adam_epsilon;
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const Tensor* p : params) {
        state.m.emplace_back(p->shape());
        state.v.emplace_back(p->shape());
    }
    return state;
}

void adam_step(std::span<Tensor* const> params,
               std::span<const Tensor* const> grads, AdamState& state,
               const TrainConfig& cfg) {
    if (params.size() != grads.size() || params.size() != state.m.size() ||
        params.size() != state.v.size()) {
        throw ShapeError("optimizer step with mismatched tensor counts");
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    const double shrink = 1.0 - cfg.learning_rate * cfg.l2_weight_decay;

    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape() != grads[i]->shape() ||
            params[i]->shape() != state.m[i].shape()) {
            throw ShapeError("optimizer tensor " + std::to_string(i) +
                             " has mismatched shapes: parameter " +
                             shape_str(params[i]->shape()) + ", gradient " +
                             shape_str(grads[i]->shape()));
        }
        auto& w = params[i]->values();
        const auto& g = grads[i]->values();
        auto& m = state.m[i].values();
        auto& v = state.v[i].values();
        for (std::size_t j = 0; j < w.size(); ++j) {
            double wj = w[j];
            if (cfg.decoupled_decay) wj *= shrink;
            double gj = g[j];
            if (!cfg.decoupled_decay) gj += cfg.l2_weight_decay * wj;
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
            wj -= cfg.learning_rate * (m[j] / bc1) /
                  (std::sqrt(v[j] / bc2) + state.epsilon);
            w[j] = wj;
        }
    }
}

MeanMilP meanmil_init(Rng& rng, const ModelDims& dims) {
    const std::size_t layer_dims[] = {dims.d_in, dims.d, dims.hidden, 1};
    return {mlp_init(rng, layer_dims)};
}

GenomicCoxP genomic_cox_init(Rng& rng, const ModelDims& dims) {
    const std::size_t layer_dims[] = {dims.d_g, dims.d, dims.hidden, 1};
    return {mlp_init(rng, layer_dims)};
}

Var meanmil_forward(Tape& t, const MLPP<Var>& mlp, Var bag) {
    // Axis reduction drops the pooled axis, so restore the row form the
    // linear layers expect.
    const std::size_t d = t.value(bag).cols();
    return mlp_forward(t, mlp, t.reshape(t.mean_axis(bag, 0), Shape{1, d}));
}

Var genomic_cox_forward(Tape& t, const MLPP<Var>& mlp, Var g0) {
    return mlp_forward(t, mlp, g0);
}

namespace {

// What one patient contributes to the batch tape.
struct PatientTerms {
    Var risk{};
    bool aligned = false;
    Var latent{};
    Var translation{};
};

// Per-batch binding of the parameters onto a fresh tape: the bound Vars in
// slot order (for gradient collection) plus the per-patient forward pass.
struct BoundBatch {
    std::vector<Var> param_vars;
    std::function<PatientTerms(Tape&, const PatientRecord&)> forward;
};
using BatchBinder = std::function<BoundBatch(Tape&)>;

void check_dataset(std::span<const PatientRecord> records,
                   const TrainConfig& cfg, bool needs_genomic) {
    if (records.empty()) {
        throw ValidationError("cannot train on an empty dataset");
    }
    for (const auto& rec : records) {
        if (rec.bag.cols() != cfg.dims.d_in) {
            throw ValidationError(
                "patient " + rec.id + " has bag width " +
                std::to_string(rec.bag.cols()) + ", config expects " +
                std::to_string(cfg.dims.d_in));
        }
        if (!needs_genomic) continue;
        if (!rec.genomic) {
            throw ValidationError(
                "training requires a genomic vector for every patient; " +
                rec.id + " has none");
        }
        if (rec.genomic->cols() != cfg.dims.d_g) {
            throw ValidationError(
                "patient " + rec.id + " has genomic width " +
                std::to_string(rec.genomic->cols()) + ", config expects " +
                std::to_string(cfg.dims.d_g));
        }
    }
}

EpochLog run_one_epoch(std::span<Tensor* const> slots, TrainState& state,
                       std::span<const PatientRecord> records,
                       const TrainConfig& cfg, const BatchBinder& binder) {
    const std::size_t n = records.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    state.rng.shuffle(order);
    const std::size_t batch_size = std::min(cfg.batch_size, n);

    EpochLog log;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(start + batch_size, n);
        const std::size_t b = end - start;
        std::vector<double> times(b);
        std::vector<int> events(b);
        bool any_event = false;
        for (std::size_t i = 0; i < b; ++i) {
            const auto& outcome = records[order[start + i]].outcome;
            times[i] = outcome.time;
            events[i] = outcome.event;
            any_event |= outcome.event == 1;
        }

        Tape t;
        BoundBatch bound = binder(t);
        std::vector<Var> risks;
        risks.reserve(b);
        std::vector<Var> latents;
        std::vector<Var> translations;
        for (std::size_t i = 0; i < b; ++i) {
            PatientTerms terms = bound.forward(t, records[order[start + i]]);
            risks.push_back(terms.risk);
            if (terms.aligned) {
                latents.push_back(terms.latent);
                translations.push_back(terms.translation);
            }
        }

        // A single-subject batch carries no ranking signal, so its survival
        // term is as uninformative as an event-free one.
        const bool cox_active = any_event && b >= 2;
        const bool alignment_active =
            !latents.empty() && cfg.weights.alpha > 0.0 &&
            (cfg.enable_latent || cfg.enable_translation);
        if (!cox_active && !alignment_active) {
            log.push_back({});
            continue;
        }

        const Var cox = cox_active
                            ? cox_loss(t, t.concat_rows(risks), times, events,
                                       cfg.cox_mean_over_events)
                            : t.constant_scalar(0.0);
        auto batch_mean = [&](const std::vector<Var>& terms) {
            if (terms.empty()) return t.constant_scalar(0.0);
            Var acc = terms.front();
            for (std::size_t i = 1; i < terms.size(); ++i) {
                acc = t.add(acc, terms[i]);
            }
            return t.div(acc, static_cast<double>(terms.size()));
        };
        const Var latent = batch_mean(latents);
        const Var translation = batch_mean(translations);
        const LossBundle bundle =
            total_loss(t, cox, latent, translation, cfg.weights);
        t.backward(bundle.total);

        std::vector<const Tensor*> grads;
        grads.reserve(bound.param_vars.size());
        for (const Var v : bound.param_vars) grads.push_back(&t.grad(v));
        adam_step(slots, grads, state.adam, cfg);

        log.push_back({t.value(bundle.cox)[0], t.value(bundle.latent)[0],
                       t.value(bundle.translation)[0],
                       t.value(bundle.total)[0]});
    }
    return log;
}

BatchBinder pathogenx_binder(const PathoGenXP<Tensor>& params,
                             const TrainConfig& cfg) {
    return [&params, &cfg](Tape& t) {
        auto bound = std::make_shared<PathoGenXP<Var>>(bind(t, params));
        BoundBatch batch;
        visit(*bound, [&](const std::string&, Var& v) {
            batch.param_vars.push_back(v);
        });
        batch.forward = [bound, &cfg](Tape& tape, const PatientRecord& rec) {
            PatientTerms terms;
            const Var bag = tape.leaf(rec.bag);
            const Var g0 = tape.leaf(*rec.genomic);
            const ForwardArtifacts art =
                forward_train(tape, *bound, bag, g0, cfg.risk_input);
            terms.risk = art.risk;
            terms.aligned = true;
            terms.latent =
                cfg.enable_latent
                    ? latent_loss(tape, art.p_l_cls, art.g_l, cfg.weights)
                    : tape.constant_scalar(0.0);
            terms.translation =
                cfg.enable_translation
                    ? translation_loss(tape, art.g_l, art.g_l_hat, cfg.weights)
                    : tape.constant_scalar(0.0);
            return terms;
        };
        return batch;
    };
}

BatchBinder meanmil_binder(const MeanMilP& params) {
    return [&params](Tape& t) {
        auto bound = std::make_shared<MLPP<Var>>(bind(t, params.mlp));
        BoundBatch batch;
        visit(*bound, "mlp", [&](const std::string&, Var& v) {
            batch.param_vars.push_back(v);
        });
        batch.forward = [bound](Tape& tape, const PatientRecord& rec) {
            PatientTerms terms;
            terms.risk = meanmil_forward(tape, *bound, tape.leaf(rec.bag));
            return terms;
        };
        return batch;
    };
}

BatchBinder genomic_cox_binder(const GenomicCoxP& params) {
    return [&params](Tape& t) {
        auto bound = std::make_shared<MLPP<Var>>(bind(t, params.mlp));
        BoundBatch batch;
        visit(*bound, "mlp", [&](const std::string&, Var& v) {
            batch.param_vars.push_back(v);
        });
        batch.forward = [bound](Tape& tape, const PatientRecord& rec) {
            PatientTerms terms;
            terms.risk =
                genomic_cox_forward(tape, *bound, tape.leaf(*rec.genomic));
            return terms;
        };
        return batch;
    };
}

template <class RunT>
void train_impl(RunT& run, std::span<const PatientRecord> records,
                const TrainConfig& cfg, const BatchBinder& binder) {
    const std::vector<Tensor*> slots = param_slots(run.params);
    for (std::size_t epoch = run.state.next_epoch; epoch < cfg.epochs;
         ++epoch) {
        run.log.push_back(run_one_epoch(slots, run.state, records, cfg, binder));
        run.state.next_epoch = epoch + 1;
    }
}

}  // namespace

PathoGenXRun start_pathogenx(const TrainConfig& cfg) {
    cfg.validate();
    Rng init_rng = Rng(cfg.seed).child("init");
    PathoGenXRun run{pathogenx_init(init_rng, cfg.dims), TrainState{}, {}};
    const std::vector<Tensor*> slots = param_slots(run.params);
    run.state.adam = AdamState::like(slots, cfg);
    run.state.rng = Rng(cfg.seed).child("shuffle");
    return run;
}

MeanMilRun start_meanmil(const TrainConfig& cfg) {
    cfg.validate();
    Rng init_rng = Rng(cfg.seed).child("init");
    MeanMilRun run{meanmil_init(init_rng, cfg.dims), TrainState{}, {}};
    const std::vector<Tensor*> slots = param_slots(run.params);
    run.state.adam = AdamState::like(slots, cfg);
    run.state.rng = Rng(cfg.seed).child("shuffle");
    return run;
}

GenomicCoxRun start_genomic_cox(const TrainConfig& cfg) {
    cfg.validate();
    Rng init_rng = Rng(cfg.seed).child("init");
    GenomicCoxRun run{genomic_cox_init(init_rng, cfg.dims), TrainState{}, {}};
    const std::vector<Tensor*> slots = param_slots(run.params);
    run.state.adam = AdamState::like(slots, cfg);
    run.state.rng = Rng(cfg.seed).child("shuffle");
    return run;
}

void train(PathoGenXRun& run, std::span<const PatientRecord> records,
           const TrainConfig& cfg) {
    cfg.validate();
    check_dataset(records, cfg, true);
    train_impl(run, records, cfg, pathogenx_binder(run.params, cfg));
}

void train(MeanMilRun& run, std::span<const PatientRecord> records,
           const TrainConfig& cfg) {
    cfg.validate();
    check_dataset(records, cfg, false);
    train_impl(run, records, cfg, meanmil_binder(run.params));
}

void train(GenomicCoxRun& run, std::span<const PatientRecord> records,
           const TrainConfig& cfg) {
    cfg.validate();
    check_dataset(records, cfg, true);
    train_impl(run, records, cfg, genomic_cox_binder(run.params));
}

EvalResult evaluate(const PathoGenXP<Tensor>& params,
                    std::span<const PatientRecord> records,
                    RiskInput risk_input) {
    if (records.empty()) {
        throw ValidationError("cannot evaluate an empty dataset");
    }
    EvalResult result;
    result.risks.reserve(records.size());
    std::vector<SurvivalOutcome> outcomes;
    outcomes.reserve(records.size());
    for (const auto& rec : records) {
        Tape t;
        const PathoGenXP<Var> bound = bind(t, params);
        const Var risk = forward_test(t, bound, t.leaf(rec.bag), risk_input);
        result.risks.push_back(t.value(risk)[0]);
        outcomes.push_back(rec.outcome);
    }
    result.c_index = c_index(result.risks, outcomes);
    return result;
}

EvalResult evaluate(const MeanMilP& params,
                    std::span<const PatientRecord> records) {
    if (records.empty()) {
        throw ValidationError("cannot evaluate an empty dataset");
    }
    EvalResult result;
    result.risks.reserve(records.size());
    std::vector<SurvivalOutcome> outcomes;
    outcomes.reserve(records.size());
    for (const auto& rec : records) {
        Tape t;
        const MLPP<Var> bound = bind(t, params.mlp);
        result.risks.push_back(
            t.value(meanmil_forward(t, bound, t.leaf(rec.bag)))[0]);
        outcomes.push_back(rec.outcome);
    }
    result.c_index = c_index(result.risks, outcomes);
    return result;
}

EvalResult evaluate(const GenomicCoxP& params,
                    std::span<const PatientRecord> records) {
    if (records.empty()) {
        throw ValidationError("cannot evaluate an empty dataset");
    }
    EvalResult result;
    result.risks.reserve(records.size());
    std::vector<SurvivalOutcome> outcomes;
    outcomes.reserve(records.size());
    for (const auto& rec : records) {
        if (!rec.genomic) {
            throw ValidationError(
                "genomic evaluation requires a genomic vector; patient " +
                rec.id + " has none");
        }
        Tape t;
        const MLPP<Var> bound = bind(t, params.mlp);
        result.risks.push_back(
            t.value(genomic_cox_forward(t, bound, t.leaf(*rec.genomic)))[0]);
        outcomes.push_back(rec.outcome);
    }
    result.c_index = c_index(result.risks, outcomes);
    return result;
}

CrossValReport cross_validate(Method method,
                              std::span<const PatientRecord> records,
                              const TrainConfig& cfg, std::size_t k) {
    cfg.validate();
    std::vector<std::string> ids;
    ids.reserve(records.size());
    for (const auto& rec : records) ids.push_back(rec.id);
    const FoldSplit split = kfold_split(ids, k, cfg.seed);

    CrossValReport report;
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::unordered_set<std::string> held(split.folds[f].begin(),
                                                   split.folds[f].end());
        std::vector<PatientRecord> train_set, val_set;
        for (const auto& rec : records) {
            (held.count(rec.id) ? val_set : train_set).push_back(rec);
        }
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = mix64(cfg.seed, f + 1);

        FoldScore score;
        switch (method) {
            case Method::kPathoGenX: {
                PathoGenXRun run = start_pathogenx(fold_cfg);
                train(run, train_set, fold_cfg);
                EvalResult ev = evaluate(run.params, val_set, fold_cfg.risk_input);
                score.c_index = ev.c_index;
                score.risks = std::move(ev.risks);
                report.fold_params.push_back(std::move(run.params));
                break;
            }
            case Method::kMeanMil: {
                MeanMilRun run = start_meanmil(fold_cfg);
                train(run, train_set, fold_cfg);
                EvalResult ev = evaluate(run.params, val_set);
                score.c_index = ev.c_index;
                score.risks = std::move(ev.risks);
                break;
            }
            case Method::kGenomicCox: {
                GenomicCoxRun run = start_genomic_cox(fold_cfg);
                train(run, train_set, fold_cfg);
                EvalResult ev = evaluate(run.params, val_set);
                score.c_index = ev.c_index;
                score.risks = std::move(ev.risks);
                break;
            }
        }
        for (const auto& rec : val_set) score.ids.push_back(rec.id);
        sum += score.c_index;
        sum_sq += score.c_index * score.c_index;
        report.folds.push_back(std::move(score));
    }
    const double kd = static_cast<double>(k);
    report.mean = sum / kd;
    report.std_dev =
        std::sqrt(std::max(0.0, sum_sq / kd - report.mean * report.mean));
    return report;
}

std::vector<AblationRow> ablation_alignment(
    std::span<const PatientRecord> records, const TrainConfig& cfg,
    std::size_t k) {
    struct Mode {
        const char* label;
        bool latent;
        bool translation;
    };
    constexpr Mode kModes[] = {{"latent_only", true, false},
                               {"translation_only", false, true},
                               {"combined", true, true}};
    std::vector<AblationRow> rows;
    for (const Mode& mode : kModes) {
        TrainConfig mode_cfg = cfg;
        mode_cfg.enable_latent = mode.latent;
        mode_cfg.enable_translation = mode.translation;
        const CrossValReport rep =
            cross_validate(Method::kPathoGenX, records, mode_cfg, k);
        rows.push_back({mode.label, rep.mean, rep.std_dev});
    }
    return rows;
}

TranslationFeatures collect_translation_features(
    const PathoGenXP<Tensor>& params, std::span<const PatientRecord> records) {
    if (records.size() < 3) {
        throw ValidationError(
            "correlation reporting needs at least 3 records, got " +
            std::to_string(records.size()));
    }
    const std::size_t n = records.size();
    const std::size_t d = params.class_token.cols();
    TranslationFeatures features{Tensor({n, d}), Tensor({n, d}),
                                 Tensor({n, d})};
    for (std::size_t i = 0; i < n; ++i) {
        const auto& rec = records[i];
        if (!rec.genomic) {
            throw ValidationError(
                "correlation reporting requires genomic vectors; patient " +
                rec.id + " has none");
        }
        Tape t;
        const PathoGenXP<Var> bound = bind(t, params);
        const ForwardArtifacts art =
            forward_train(t, bound, t.leaf(rec.bag), t.leaf(*rec.genomic),
                          RiskInput::kTranslated);
        const Tensor cls = t.value(art.p_l_cls);
        const Tensor translated = t.value(art.g_l_hat);
        const Tensor embed = t.value(art.g_l);
        for (std::size_t j = 0; j < d; ++j) {
            features.raw_cls.at(i, j) = cls[j];
            features.translated.at(i, j) = translated[j];
            features.genomic_embed.at(i, j) = embed[j];
        }
    }
    return features;
}

namespace {

void append_named_block(std::string& s, const std::string& name,
                        const Tensor& t) {
    append_u16(s, static_cast<std::uint16_t>(name.size()));
    s += name;
    s.push_back(static_cast<char>(t.shape().size()));
    for (const std::size_t dim : t.shape()) {
        append_u32(s, static_cast<std::uint32_t>(dim));
    }
    for (const double v : t.values()) append_f64(s, v);
}

std::pair<std::string, Tensor> read_named_block(ByteReader& r) {
    const std::string name = r.str(r.u16());
    r.need(1);
    const auto rank = static_cast<std::uint8_t>(r.bytes[r.pos]);
    ++r.pos;
    if (rank == 0 || rank > 8) {
        throw IoError("implausible tensor rank in " + r.label);
    }
    Shape shape(rank);
    for (auto& dim : shape) dim = r.u32();
    Tensor t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = r.f64();
    return {name, std::move(t)};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const NamedTensors& params, const TrainState& state,
                     const std::string& config_echo) {
    if (state.adam.m.size() != params.size() ||
        state.adam.v.size() != params.size()) {
        throw ValidationError(
            "optimizer state does not match the parameter count");
    }
    std::string s = "PGXC";
    append_u16(s, 1);
    append_u32(s, static_cast<std::uint32_t>(config_echo.size()));
    s += config_echo;
    append_u32(s, static_cast<std::uint32_t>(state.next_epoch));
    const std::string rng_text = state.rng.serialize();
    append_u32(s, static_cast<std::uint32_t>(rng_text.size()));
    s += rng_text;
    append_u32(s, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        append_named_block(s, name, tensor);
    }
    append_u64(s, state.adam.step);
    append_f64(s, state.adam.beta1);
    append_f64(s, state.adam.beta2);
    append_f64(s, state.adam.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
        append_named_block(s, "adam.m." + params[i].first, state.adam.m[i]);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        append_named_block(s, "adam.v." + params[i].first, state.adam.v[i]);
    }
    write_file(path, s);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    ByteReader r{bytes, path.string()};
    r.need(4);
    if (std::memcmp(bytes.data(), "PGXC", 4) != 0) {
        throw IoError("bad magic in " + path.string() +
                      ", expected a checkpoint file");
    }
    r.pos = 4;
    const std::uint16_t version = r.u16();
    if (version != 1) {
        throw IoError("version mismatch in " + path.string() + ": file has " +
                      std::to_string(version) + ", reader supports 1");
    }

    LoadedCheckpoint out;
    out.config_echo = r.str(r.u32());
    out.state.next_epoch = r.u32();
    out.state.rng = Rng::deserialize(r.str(r.u32()));
    const std::uint32_t n_params = r.u32();
    out.params.reserve(n_params);
    for (std::uint32_t i = 0; i < n_params; ++i) {
        out.params.push_back(read_named_block(r));
    }
    out.state.adam.step = r.u64();
    out.state.adam.beta1 = r.f64();
    out.state.adam.beta2 = r.f64();
    out.state.adam.epsilon = r.f64();
    for (const char* prefix : {"adam.m.", "adam.v."}) {
        auto& moments =
            prefix[5] == 'm' ? out.state.adam.m : out.state.adam.v;
        moments.reserve(n_params);
        for (std::uint32_t i = 0; i < n_params; ++i) {
            auto [name, tensor] = read_named_block(r);
            if (name != prefix + out.params[i].first) {
                throw IoError("checkpoint " + path.string() +
                              ": optimizer block " + name +
                              " does not match parameter " +
                              out.params[i].first);
            }
            if (tensor.shape() != out.params[i].second.shape()) {
                throw IoError("checkpoint " + path.string() +
                              ": optimizer block " + name +
                              " has shape " + shape_str(tensor.shape()) +
                              ", parameter has " +
                              shape_str(out.params[i].second.shape()));
            }
            moments.push_back(std::move(tensor));
        }
    }
    if (r.pos != bytes.size()) {
        throw IoError("trailing bytes in " + path.string());
    }
    return out;
}

}  // namespace pgx
