#include "pgx/train.hpp"

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "pgx/data.hpp"
#include "pgx/survival.hpp"

namespace {

using namespace pgx;

ModelDims tiny_dims() {
    ModelDims dims;
    dims.d_in = 8;
    dims.d_g = 10;
    dims.d = 8;
    dims.heads = 2;
    dims.hidden = 8;
    return dims;
}

SynthConfig tiny_synth(std::size_t n, std::uint64_t seed) {
    SynthConfig cfg;
    cfg.n_patients = n;
    cfg.latent_dim = 3;
    cfg.genomic_dim = 10;
    cfg.feature_dim = 8;
    cfg.patches_min = 3;
    cfg.patches_max = 6;
    cfg.genomic_noise = 0.3;
    cfg.imaging_noise = 1.0;
    cfg.censoring_target = 0.25;
    cfg.seed = seed;
    return cfg;
}

TrainConfig tiny_cfg() {
    TrainConfig cfg;
    cfg.dims = tiny_dims();
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.seed = 7;
    return cfg;
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && a.values() == b.values();
}

bool named_equal(const NamedTensors& a, const NamedTensors& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].first != b[i].first) return false;
        if (!tensors_equal(a[i].second, b[i].second)) return false;
    }
    return true;
}

bool logs_equal(const std::vector<EpochLog>& a,
                const std::vector<EpochLog>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t e = 0; e < a.size(); ++e) {
        if (a[e].size() != b[e].size()) return false;
        for (std::size_t i = 0; i < a[e].size(); ++i) {
            if (a[e][i].cox != b[e][i].cox || a[e][i].latent != b[e][i].latent ||
                a[e][i].translation != b[e][i].translation ||
                a[e][i].total != b[e][i].total) {
                return false;
            }
        }
    }
    return true;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("pgx_train_" + std::to_string(++counter) + "_" +
                std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

template <class E, class F>
std::string message_of(F&& fn) {
    try {
        fn();
    } catch (const E& e) {
        return e.what();
    } catch (const std::exception& e) {
        FAIL("wrong exception type: ", e.what());
        return "";
    }
    FAIL("expected an exception");
    return "";
}

}  // namespace

TEST_CASE("adam leaves parameters untouched without gradients or decay") {
    TrainConfig cfg;
    cfg.l2_weight_decay = 0.0;
    Tensor w(Shape{2, 2}, {1.0, -2.0, 3.0, -4.0});
    const Tensor w0 = w;
    const Tensor g(Shape{2, 2});
    std::vector<Tensor*> params{&w};
    std::vector<const Tensor*> grads{&g};
    AdamState state = AdamState::like(params, cfg);
    for (int i = 0; i < 5; ++i) adam_step(params, grads, state, cfg);
    CHECK(tensors_equal(w, w0));
    CHECK(state.step == 5);
    CHECK(state.m[0].values() == std::vector<double>(4, 0.0));
}

TEST_CASE("adam takes near-unit-rate steps under a constant gradient") {
    // With a constant gradient g the bias-corrected moments satisfy
    // m_hat = g and v_hat = g*g at every step, so each update moves the
    // weight by exactly lr * g / (|g| + eps).
    TrainConfig cfg;
    cfg.l2_weight_decay = 0.0;
    cfg.learning_rate = 0.01;
    Tensor w(Shape{1}, {5.0});
    const Tensor g(Shape{1}, {2.0});
    std::vector<Tensor*> params{&w};
    std::vector<const Tensor*> grads{&g};
    AdamState state = AdamState::like(params, cfg);
    const int steps = 1000;
    for (int i = 0; i < steps; ++i) adam_step(params, grads, state, cfg);
    const double per_step =
        cfg.learning_rate * 2.0 / (2.0 + cfg.adam_epsilon);
    CHECK(w[0] == doctest::Approx(5.0 - steps * per_step).epsilon(1e-12));
}

TEST_CASE("adam decoupled decay shrinks weights geometrically") {
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.l2_weight_decay = 0.5;
    cfg.decoupled_decay = true;
    Tensor w(Shape{2}, {4.0, -4.0});
    const Tensor g(Shape{2});
    std::vector<Tensor*> params{&w};
    std::vector<const Tensor*> grads{&g};
    AdamState state = AdamState::like(params, cfg);
    double expected = 4.0;
    const double shrink = 1.0 - cfg.learning_rate * cfg.l2_weight_decay;
    for (int i = 0; i < 20; ++i) {
        adam_step(params, grads, state, cfg);
        expected *= shrink;
        CHECK(w[0] == expected);
        CHECK(w[1] == -expected);
    }
}

TEST_CASE("adam coupled decay folds the penalty into the gradient") {
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.l2_weight_decay = 0.5;
    cfg.decoupled_decay = false;
    Tensor w(Shape{1}, {4.0});
    const Tensor g(Shape{1});
    std::vector<Tensor*> params{&w};
    std::vector<const Tensor*> grads{&g};
    AdamState state = AdamState::like(params, cfg);
    double prev = w[0];
    for (int i = 0; i < 10; ++i) {
        adam_step(params, grads, state, cfg);
        CHECK(w[0] < prev);
        CHECK(w[0] > 0.0);
        prev = w[0];
    }
    // The coupled penalty routes through the moment estimates, so the
    // trajectory differs from the decoupled geometric shrink.
    const double decoupled_once =
        4.0 * (1.0 - cfg.learning_rate * cfg.l2_weight_decay);
    Tensor w2(Shape{1}, {4.0});
    std::vector<Tensor*> params2{&w2};
    AdamState state2 = AdamState::like(params2, cfg);
    adam_step(params2, grads, state2, cfg);
    CHECK(w2[0] != decoupled_once);
}

TEST_CASE("adam rejects mismatched shapes and counts") {
    TrainConfig cfg;
    Tensor w(Shape{2}, {1.0, 2.0});
    Tensor g(Shape{2});
    std::vector<Tensor*> params{&w};
    std::vector<const Tensor*> grads{&g};
    AdamState state = AdamState::like(params, cfg);

    const std::vector<const Tensor*> no_grads;
    CHECK_THROWS_AS(adam_step(params, no_grads, state, cfg), ShapeError);

    const Tensor bad(Shape{3});
    const std::vector<const Tensor*> bad_grads{&bad};
    CHECK_THROWS_AS(adam_step(params, bad_grads, state, cfg), ShapeError);
}

TEST_CASE("a short run logs finite, internally consistent losses") {
    const auto records = generate_synthetic(tiny_synth(24, 31));
    const TrainConfig cfg = tiny_cfg();
    PathoGenXRun run = start_pathogenx(cfg);
    train(run, records, cfg);

    REQUIRE(run.log.size() == cfg.epochs);
    bool saw_cox = false;
    for (const EpochLog& epoch : run.log) {
        CHECK(epoch.size() == 3);  // ceil(24 / 8)
        for (const BatchLoss& row : epoch) {
            CHECK(std::isfinite(row.total));
            CHECK(row.total ==
                  doctest::Approx(row.cox + cfg.weights.alpha *
                                                (row.latent + row.translation))
                      .epsilon(1e-9));
            saw_cox |= row.cox != 0.0;
        }
    }
    CHECK(saw_cox);
    CHECK(run.state.next_epoch == cfg.epochs);

    // Training moved the parameters away from their initialization.
    const PathoGenXRun fresh = start_pathogenx(cfg);
    CHECK_FALSE(named_equal(named_tensors(run.params), named_tensors(fresh.params)));
}

TEST_CASE("training is reproducible bit for bit") {
    const auto records = generate_synthetic(tiny_synth(24, 32));
    const TrainConfig cfg = tiny_cfg();
    PathoGenXRun a = start_pathogenx(cfg);
    PathoGenXRun b = start_pathogenx(cfg);
    train(a, records, cfg);
    train(b, records, cfg);
    CHECK(named_equal(named_tensors(a.params), named_tensors(b.params)));
    CHECK(logs_equal(a.log, b.log));
}

TEST_CASE("zero alignment weight matches disabled alignment exactly") {
    const auto records = generate_synthetic(tiny_synth(24, 33));
    TrainConfig weightless = tiny_cfg();
    weightless.weights.alpha = 0.0;
    TrainConfig disabled = tiny_cfg();
    disabled.enable_latent = false;
    disabled.enable_translation = false;

    PathoGenXRun a = start_pathogenx(weightless);
    PathoGenXRun b = start_pathogenx(disabled);
    train(a, records, weightless);
    train(b, records, disabled);
    CHECK(named_equal(named_tensors(a.params), named_tensors(b.params)));
    for (const EpochLog& epoch : b.log) {
        for (const BatchLoss& row : epoch) {
            CHECK(row.latent == 0.0);
            CHECK(row.translation == 0.0);
        }
    }
}

TEST_CASE("baseline models train and evaluate") {
    const auto records = generate_synthetic(tiny_synth(24, 34));
    const TrainConfig cfg = tiny_cfg();

    MeanMilRun mil = start_meanmil(cfg);
    train(mil, records, cfg);
    const EvalResult mil_eval = evaluate(mil.params, records);
    CHECK(mil_eval.risks.size() == records.size());
    CHECK(mil_eval.c_index >= 0.0);
    CHECK(mil_eval.c_index <= 1.0);

    GenomicCoxRun gen = start_genomic_cox(cfg);
    train(gen, records, cfg);
    const EvalResult gen_eval = evaluate(gen.params, records);
    CHECK(gen_eval.risks.size() == records.size());
    CHECK(gen_eval.c_index >= 0.0);
    CHECK(gen_eval.c_index <= 1.0);
    for (const EpochLog& epoch : mil.log) {
        for (const BatchLoss& row : epoch) {
            CHECK(row.latent == 0.0);
            CHECK(row.translation == 0.0);
            CHECK(row.total == row.cox);
        }
    }
}

TEST_CASE("image-only evaluation ignores genomic data") {
    const auto records = generate_synthetic(tiny_synth(24, 35));
    const TrainConfig cfg = tiny_cfg();
    PathoGenXRun run = start_pathogenx(cfg);
    train(run, records, cfg);

    std::vector<PatientRecord> stripped(records.begin(), records.end());
    for (auto& rec : stripped) rec.genomic.reset();

    const EvalResult full = evaluate(run.params, records, cfg.risk_input);
    const EvalResult image_only = evaluate(run.params, stripped, cfg.risk_input);
    CHECK(full.risks == image_only.risks);
    CHECK(full.c_index == image_only.c_index);

    GenomicCoxRun gen = start_genomic_cox(cfg);
    const std::string eval_msg = message_of<ValidationError>(
        [&] { (void)evaluate(gen.params, stripped); });
    CHECK(eval_msg.find("genomic") != std::string::npos);

    PathoGenXRun fresh = start_pathogenx(cfg);
    const std::string train_msg = message_of<ValidationError>(
        [&] { train(fresh, stripped, cfg); });
    CHECK(train_msg.find("genomic") != std::string::npos);
}

TEST_CASE("an uninformative cohort scores near chance") {
    // With the hazard coefficient at zero, survival is independent of the
    // latent state, so held-out concordance should hover around 0.5.
    double sum = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        SynthConfig synth = tiny_synth(150, 300 + s);
        synth.hazard_coefficient = 0.0;
        const auto records = generate_synthetic(synth);
        const std::vector<PatientRecord> train_set(records.begin(),
                                                   records.begin() + 100);
        const std::vector<PatientRecord> val_set(records.begin() + 100,
                                                 records.end());
        TrainConfig cfg = tiny_cfg();
        cfg.epochs = 3;
        cfg.batch_size = 32;
        cfg.seed = 40 + s;
        GenomicCoxRun run = start_genomic_cox(cfg);
        train(run, train_set, cfg);
        sum += evaluate(run.params, val_set).c_index;
    }
    const double mean = sum / 5.0;
    CHECK(mean > 0.4);
    CHECK(mean < 0.6);
}

TEST_CASE("cross-validation partitions patients and reports fold statistics") {
    const auto records = generate_synthetic(tiny_synth(24, 36));
    TrainConfig cfg = tiny_cfg();
    cfg.epochs = 1;
    const CrossValReport report =
        cross_validate(Method::kMeanMil, records, cfg, 3);

    REQUIRE(report.folds.size() == 3);
    CHECK(report.fold_params.empty());
    std::vector<std::string> seen;
    double sum = 0.0, sum_sq = 0.0;
    for (const FoldScore& fold : report.folds) {
        CHECK(fold.ids.size() == 8);
        CHECK(fold.risks.size() == fold.ids.size());
        seen.insert(seen.end(), fold.ids.begin(), fold.ids.end());
        sum += fold.c_index;
        sum_sq += fold.c_index * fold.c_index;
    }
    std::sort(seen.begin(), seen.end());
    std::vector<std::string> all;
    for (const auto& rec : records) all.push_back(rec.id);
    std::sort(all.begin(), all.end());
    CHECK(seen == all);

    const double mean = sum / 3.0;
    CHECK(report.mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(report.std_dev ==
          doctest::Approx(std::sqrt(sum_sq / 3.0 - mean * mean)).epsilon(1e-9));

    const CrossValReport again = cross_validate(Method::kMeanMil, records, cfg, 3);
    CHECK(again.mean == report.mean);
    for (std::size_t f = 0; f < 3; ++f) {
        CHECK(again.folds[f].risks == report.folds[f].risks);
    }

    const CrossValReport pgx =
        cross_validate(Method::kPathoGenX, records, cfg, 2);
    CHECK(pgx.fold_params.size() == 2);
}

TEST_CASE("ablation reports all three alignment modes") {
    const auto records = generate_synthetic(tiny_synth(24, 37));
    TrainConfig cfg = tiny_cfg();
    cfg.epochs = 1;
    const std::vector<AblationRow> rows = ablation_alignment(records, cfg, 2);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].label == "latent_only");
    CHECK(rows[1].label == "translation_only");
    CHECK(rows[2].label == "combined");
    for (const AblationRow& row : rows) {
        CHECK(std::isfinite(row.mean));
        CHECK(row.std_dev >= 0.0);
    }
}

TEST_CASE("checkpoints round-trip bitwise") {
    const auto records = generate_synthetic(tiny_synth(24, 38));
    const TrainConfig cfg = tiny_cfg();
    PathoGenXRun run = start_pathogenx(cfg);
    train(run, records, cfg);

    TempDir dir;
    const auto path = dir.path / "model.pgxc";
    const NamedTensors saved = named_tensors(run.params);
    const std::string echo = "# epochs = 2\n# seed = 7\n";
    save_checkpoint(path, saved, run.state, echo);

    const LoadedCheckpoint loaded = load_checkpoint(path);
    CHECK(named_equal(loaded.params, saved));
    CHECK(loaded.config_echo == echo);
    CHECK(loaded.state.next_epoch == run.state.next_epoch);
    CHECK(loaded.state.rng == run.state.rng);
    CHECK(loaded.state.adam.step == run.state.adam.step);
    REQUIRE(loaded.state.adam.m.size() == run.state.adam.m.size());
    for (std::size_t i = 0; i < loaded.state.adam.m.size(); ++i) {
        CHECK(tensors_equal(loaded.state.adam.m[i], run.state.adam.m[i]));
        CHECK(tensors_equal(loaded.state.adam.v[i], run.state.adam.v[i]));
    }

    const auto path2 = dir.path / "again.pgxc";
    save_checkpoint(path2, loaded.params, loaded.state, loaded.config_echo);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), {});
    const std::string b2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(b1 == b2);
}

TEST_CASE("a resumed run continues exactly where it stopped") {
    const auto records = generate_synthetic(tiny_synth(24, 39));
    TrainConfig four = tiny_cfg();
    four.epochs = 4;
    PathoGenXRun straight = start_pathogenx(four);
    train(straight, records, four);

    TrainConfig two = four;
    two.epochs = 2;
    PathoGenXRun first = start_pathogenx(two);
    train(first, records, two);

    TempDir dir;
    const auto path = dir.path / "halfway.pgxc";
    save_checkpoint(path, named_tensors(first.params), first.state, "");
    const LoadedCheckpoint loaded = load_checkpoint(path);

    PathoGenXRun resumed = start_pathogenx(four);
    restore_tensors(resumed.params, loaded.params);
    resumed.state = loaded.state;
    train(resumed, records, four);

    CHECK(named_equal(named_tensors(resumed.params),
                      named_tensors(straight.params)));
    REQUIRE(resumed.log.size() == 2);
    CHECK(logs_equal(resumed.log, {straight.log[2], straight.log[3]}));
}

TEST_CASE("restoring rejects mismatched checkpoints") {
    const TrainConfig cfg = tiny_cfg();
    PathoGenXRun run = start_pathogenx(cfg);
    NamedTensors stored = named_tensors(run.params);

    PathoGenXRun target = start_pathogenx(cfg);
    NamedTensors truncated(stored.begin(), stored.end() - 1);
    const std::string count_msg = message_of<ValidationError>(
        [&] { restore_tensors(target.params, truncated); });
    CHECK(count_msg.find("holds") != std::string::npos);

    NamedTensors renamed = stored;
    renamed[0].first = "mystery";
    const std::string name_msg = message_of<ValidationError>(
        [&] { restore_tensors(target.params, renamed); });
    CHECK(name_msg.find("mystery") != std::string::npos);

    TrainConfig wide = cfg;
    wide.dims.hidden = 16;
    PathoGenXRun other = start_pathogenx(wide);
    const std::string shape_msg = message_of<ValidationError>(
        [&] { restore_tensors(other.params, stored); });
    CHECK(shape_msg.find("shape") != std::string::npos);
}

TEST_CASE("corrupt checkpoint files are refused") {
    const TrainConfig cfg = tiny_cfg();
    PathoGenXRun run = start_pathogenx(cfg);
    TempDir dir;
    const auto path = dir.path / "model.pgxc";
    save_checkpoint(path, named_tensors(run.params), run.state, "");

    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    in.close();

    auto write_variant = [&](const std::string& name, const std::string& data) {
        const auto p = dir.path / name;
        std::ofstream out(p, std::ios::binary);
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        return p;
    };

    const auto short_path =
        write_variant("short.pgxc", bytes.substr(0, bytes.size() - 3));
    CHECK(message_of<IoError>([&] { (void)load_checkpoint(short_path); })
              .find("truncated") != std::string::npos);

    std::string wrong = bytes;
    wrong[0] = 'Q';
    const auto magic_path = write_variant("magic.pgxc", wrong);
    CHECK(message_of<IoError>([&] { (void)load_checkpoint(magic_path); })
              .find("bad magic") != std::string::npos);

    std::string newer = bytes;
    newer[4] = 2;
    const auto version_path = write_variant("version.pgxc", newer);
    CHECK(message_of<IoError>([&] { (void)load_checkpoint(version_path); })
              .find("version mismatch") != std::string::npos);

    const auto long_path = write_variant("long.pgxc", bytes + "x");
    CHECK(message_of<IoError>([&] { (void)load_checkpoint(long_path); })
              .find("trailing") != std::string::npos);
}

TEST_CASE("translation features expose per-patient embeddings") {
    const auto records = generate_synthetic(tiny_synth(24, 41));
    const TrainConfig cfg = tiny_cfg();
    PathoGenXRun run = start_pathogenx(cfg);
    train(run, records, cfg);

    const TranslationFeatures features =
        collect_translation_features(run.params, records);
    const Shape expected{24, cfg.dims.d};
    CHECK(features.raw_cls.shape() == expected);
    CHECK(features.translated.shape() == expected);
    CHECK(features.genomic_embed.shape() == expected);
    for (const double v : features.translated.values()) {
        CHECK(std::isfinite(v));
    }

    const CorrelationReport rep =
        correlation_report(features.translated, features.genomic_embed);
    CHECK(rep.mean_abs_r >= 0.0);
    CHECK(rep.mean_abs_r <= 1.0);

    const std::vector<PatientRecord> few(records.begin(), records.begin() + 2);
    CHECK_THROWS_AS((void)collect_translation_features(run.params, few),
                    ValidationError);

    std::vector<PatientRecord> stripped(records.begin(), records.begin() + 4);
    stripped[1].genomic.reset();
    const std::string msg = message_of<ValidationError>(
        [&] { (void)collect_translation_features(run.params, stripped); });
    CHECK(msg.find(stripped[1].id) != std::string::npos);
}
