#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pgx/config.hpp"
#include "pgx/data.hpp"
#include "pgx/format.hpp"
#include "pgx/gradcheck.hpp"
#include "pgx/survival.hpp"
#include "pgx/train.hpp"

namespace {

using namespace pgx;

constexpr double kGradTolerance = 1e-4;

// Shared flags for every subcommand that reads the key=value config.
struct ConfigArgs {
    std::string config_path;
    std::vector<std::string> sets;

    void wire(CLI::App* cmd) {
        cmd->add_option("--config", config_path,
                        "key = value settings file ('#' comments)");
        cmd->add_option("--set", sets,
                        "override one setting, e.g. --set epochs=3")
            ->allow_extra_args(false);
    }

    Settings resolve() const {
        Settings s;
        if (!config_path.empty()) s = load_settings_file(config_path, s);
        for (const std::string& kv : sets) {
            const std::size_t eq = kv.find('=');
            if (eq == std::string::npos) {
                throw ValidationError("--set expects key=value, got '" + kv +
                                      "'");
            }
            auto trim = [](std::string t) {
                while (!t.empty() && std::isspace(static_cast<unsigned char>(
                                         t.front()))) {
                    t.erase(t.begin());
                }
                while (!t.empty() &&
                       std::isspace(static_cast<unsigned char>(t.back()))) {
                    t.pop_back();
                }
                return t;
            };
            apply_setting(s, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
        }
        return s;
    }
};

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("short write to " + path.string());
}

void require_genomic(const std::vector<PatientRecord>& records) {
    for (const auto& rec : records) {
        if (!rec.genomic) {
            throw ValidationError(
                "training requires paired modalities; patient " + rec.id +
                " has no genomic vector");
        }
    }
}

PathoGenXP<Tensor> restore_model(const std::filesystem::path& checkpoint,
                                 const TrainConfig& cfg,
                                 TrainState* state_out = nullptr) {
    const LoadedCheckpoint loaded = load_checkpoint(checkpoint);
    PathoGenXRun shell = start_pathogenx(cfg);
    restore_tensors(shell.params, loaded.params);
    if (state_out) *state_out = loaded.state;
    return std::move(shell.params);
}

std::string training_log_csv(const Settings& s, const PathoGenXRun& run) {
    std::string log = settings_echo(s);
    log += "epoch,batch,cox,latent,translation,total\n";
    const std::size_t first_epoch = run.state.next_epoch - run.log.size();
    for (std::size_t e = 0; e < run.log.size(); ++e) {
        for (std::size_t b = 0; b < run.log[e].size(); ++b) {
            const BatchLoss& row = run.log[e][b];
            log += std::to_string(first_epoch + e) + ',' + std::to_string(b) +
                   ',' + g17(row.cox) + ',' + g17(row.latent) + ',' +
                   g17(row.translation) + ',' + g17(row.total) + '\n';
        }
    }
    return log;
}

int cmd_generate(const ConfigArgs& cfg_args, const std::string& out_dir,
                 const std::string& seed_text) {
    Settings s = cfg_args.resolve();
    if (!seed_text.empty()) apply_setting(s, "seed", seed_text);
    const auto records = generate_synthetic(s.synth);
    const auto manifest =
        save_dataset(out_dir, records, settings_echo(s));
    std::cout << "wrote " << records.size() << " patients, manifest at "
              << manifest.string() << "\n";
    return 0;
}

int cmd_train(const ConfigArgs& cfg_args, const std::string& manifest,
              const std::string& out, const std::string& epochs_text,
              const std::string& resume) {
    Settings s = cfg_args.resolve();
    if (!epochs_text.empty()) apply_setting(s, "epochs", epochs_text);
    const auto records = load_manifest(manifest);
    require_genomic(records);

    PathoGenXRun run = start_pathogenx(s.train);
    if (!resume.empty()) {
        const LoadedCheckpoint loaded = load_checkpoint(resume);
        restore_tensors(run.params, loaded.params);
        run.state = loaded.state;
    }
    train(run, records, s.train);

    const std::string echo = settings_echo(s);
    save_checkpoint(out, named_tensors(run.params), run.state, echo);
    const std::filesystem::path log_path = out + ".log.csv";
    write_text(log_path, training_log_csv(s, run));
    std::cout << "checkpoint " << out << ", log " << log_path.string() << "\n";
    return 0;
}

int cmd_eval(const ConfigArgs& cfg_args, const std::string& manifest,
             const std::string& checkpoint, const std::string& report) {
    const Settings s = cfg_args.resolve();
    const auto records = load_manifest(manifest, /*include_genomic=*/false);
    const PathoGenXP<Tensor> model = restore_model(checkpoint, s.train);
    const EvalResult ev = evaluate(model, records, s.train.risk_input);

    std::string out = settings_echo(s);
    out += "patient_id,risk\n";
    for (std::size_t i = 0; i < records.size(); ++i) {
        out += records[i].id + ',' + g17(ev.risks[i]) + '\n';
    }
    out += "# c_index = " + g17(ev.c_index) + '\n';
    write_text(report, out);
    std::cout << "c_index = " << g17(ev.c_index) << "\n";
    return 0;
}

int cmd_crossval(const ConfigArgs& cfg_args, const std::string& manifest,
                 const std::string& method_name, bool ablation) {
    const Settings s = cfg_args.resolve();
    Method method = Method::kPathoGenX;
    if (method_name == "meanmil") {
        method = Method::kMeanMil;
    } else if (method_name == "genomic-cox") {
        method = Method::kGenomicCox;
    }
    const auto records =
        load_manifest(manifest, /*include_genomic=*/method != Method::kMeanMil);

    std::cout << settings_echo(s);
    if (ablation) {
        const auto rows = ablation_alignment(records, s.train, s.folds);
        std::cout << "config,mean_c_index,std_dev\n";
        for (const AblationRow& row : rows) {
            std::cout << row.label << ',' << g17(row.mean) << ','
                      << g17(row.std_dev) << "\n";
        }
    } else {
        const CrossValReport report =
            cross_validate(method, records, s.train, s.folds);
        std::cout << "fold,c_index\n";
        for (std::size_t f = 0; f < report.folds.size(); ++f) {
            std::cout << f << ',' << g17(report.folds[f].c_index) << "\n";
        }
        std::cout << "mean," << g17(report.mean) << "\n";
        std::cout << "std," << g17(report.std_dev) << "\n";
    }
    return 0;
}

int cmd_km(const ConfigArgs& cfg_args, const std::string& risks_path,
           const std::string& manifest, const std::string& out_path) {
    const Settings s = cfg_args.resolve();
    const auto records = load_manifest(manifest, /*include_genomic=*/false);

    std::ifstream in(risks_path);
    if (!in) throw IoError("cannot open " + risks_path);
    std::map<std::string, double> by_id;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            if (line != "patient_id,risk") {
                throw ValidationError("line " + std::to_string(line_no) +
                                      ": expected header 'patient_id,risk'");
            }
            header_seen = true;
            continue;
        }
        const std::size_t comma = line.find(',');
        if (comma == std::string::npos) {
            throw ValidationError("line " + std::to_string(line_no) +
                                  ": expected patient_id,risk");
        }
        const std::string id = line.substr(0, comma);
        const std::string value = line.substr(comma + 1);
        try {
            std::size_t used = 0;
            const double risk = std::stod(value, &used);
            if (used != value.size()) throw std::invalid_argument("");
            if (!by_id.emplace(id, risk).second) {
                throw ValidationError("line " + std::to_string(line_no) +
                                      ": duplicate risk for patient " + id);
            }
        } catch (const std::invalid_argument&) {
            throw ValidationError("line " + std::to_string(line_no) +
                                  ": bad risk '" + value + "'");
        }
    }
    if (!header_seen) throw ValidationError("no header row in " + risks_path);

    std::vector<double> risks;
    risks.reserve(records.size());
    for (const auto& rec : records) {
        const auto it = by_id.find(rec.id);
        if (it == by_id.end()) {
            throw ValidationError("no risk for patient " + rec.id);
        }
        risks.push_back(it->second);
        by_id.erase(it);
    }
    if (!by_id.empty()) {
        throw ValidationError("risk for unknown patient " +
                              by_id.begin()->first);
    }

    const std::vector<int> groups = stratify_by_median(risks);
    std::vector<SurvivalOutcome> low, high;
    for (std::size_t i = 0; i < records.size(); ++i) {
        (groups[i] == 1 ? high : low).push_back(records[i].outcome);
    }
    if (low.empty() || high.empty()) {
        throw ValidationError("cannot stratify constant risks");
    }

    const LogRankResult lr = log_rank(low, high);
    std::ostringstream out;
    out << settings_echo(s) << kKmCsvHeader << '\n';
    write_km_rows(out, km_estimate(low), "low");
    write_km_rows(out, km_estimate(high), "high");
    out << "# chi2 = " << g17(lr.chi2) << "\n# p = " << g17(lr.p) << "\n";
    write_text(out_path, out.str());
    std::cout << "log-rank chi2 = " << g17(lr.chi2) << ", p = " << g17(lr.p)
              << "\n";
    return 0;
}

int cmd_gradcheck(const ConfigArgs& cfg_args, const std::string& seed_text,
                  const std::string& inject) {
    Settings s = cfg_args.resolve();
    if (!seed_text.empty()) apply_setting(s, "seed", seed_text);
    const auto results = run_gradient_suite(s.train.seed, 1e-5, inject);

    std::cout << settings_echo(s) << "op,max_rel_error\n";
    std::vector<std::string> failed;
    for (const GradCheckResult& r : results) {
        std::cout << r.name << ',' << g17(r.max_rel_error) << "\n";
        if (!(r.max_rel_error < kGradTolerance)) failed.push_back(r.name);
    }
    if (!failed.empty()) {
        std::cerr << "error: gradient check failed for";
        for (const std::string& name : failed) std::cerr << ' ' << name;
        std::cerr << "\n";
        return 1;
    }
    std::cout << "# all " << results.size() << " checks below "
              << g17(kGradTolerance) << "\n";
    return 0;
}

int cmd_correlate(const ConfigArgs& cfg_args, const std::string& manifest,
                  const std::string& checkpoint, const std::string& out_path) {
    const Settings s = cfg_args.resolve();
    const auto records = load_manifest(manifest);
    const PathoGenXP<Tensor> model = restore_model(checkpoint, s.train);
    const TranslationFeatures features =
        collect_translation_features(model, records);
    const double before =
        correlation_report(features.raw_cls, features.genomic_embed).mean_abs_r;
    const double after =
        correlation_report(features.translated, features.genomic_embed)
            .mean_abs_r;

    std::string out = settings_echo(s);
    out += "features,mean_abs_r\n";
    out += "raw_class_token," + g17(before) + '\n';
    out += "translated," + g17(after) + '\n';
    write_text(out_path, out);
    std::cout << "mean |r| raw = " << g17(before) << ", translated = "
              << g17(after) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-modal survival pipeline"};
    app.require_subcommand(1);

    ConfigArgs gen_cfg;
    std::string gen_out_dir, gen_seed;
    CLI::App* gen = app.add_subcommand(
        "generate", "Write a synthetic dataset (bags, genomics, manifest)");
    gen_cfg.wire(gen);
    gen->add_option("--out-dir", gen_out_dir, "dataset directory")->required();
    gen->add_option("--seed", gen_seed, "override the seed");

    ConfigArgs train_cfg;
    std::string train_manifest, train_out, train_epochs, train_resume;
    CLI::App* tr = app.add_subcommand(
        "train", "Train the translation model on paired data");
    train_cfg.wire(tr);
    tr->add_option("--manifest", train_manifest, "dataset manifest")
        ->required();
    tr->add_option("--out", train_out, "checkpoint path (log goes next to it)")
        ->required();
    tr->add_option("--epochs", train_epochs, "override the epoch count");
    tr->add_option("--resume", train_resume,
                   "checkpoint to continue from; training runs up to the "
                   "configured epoch count");

    ConfigArgs eval_cfg;
    std::string eval_manifest, eval_checkpoint, eval_report;
    CLI::App* ev = app.add_subcommand(
        "eval", "Image-only risk prediction and concordance");
    eval_cfg.wire(ev);
    ev->add_option("--manifest", eval_manifest, "dataset manifest")->required();
    ev->add_option("--checkpoint", eval_checkpoint, "trained model")
        ->required();
    ev->add_option("--report", eval_report, "output CSV path")->required();

    ConfigArgs cv_cfg;
    std::string cv_manifest, cv_method = "pathogenx";
    bool cv_ablation = false;
    CLI::App* cv = app.add_subcommand(
        "crossval", "K-fold cross-validated concordance (CSV on stdout)");
    cv_cfg.wire(cv);
    cv->add_option("--manifest", cv_manifest, "dataset manifest")->required();
    cv->add_option("--method", cv_method, "model to evaluate")
        ->check(CLI::IsMember({"pathogenx", "meanmil", "genomic-cox"}));
    cv->add_flag("--ablation", cv_ablation,
                 "compare alignment components instead");

    ConfigArgs km_cfg;
    std::string km_risks, km_manifest, km_out;
    CLI::App* km = app.add_subcommand(
        "km", "Median-risk stratified survival curves and log-rank test");
    km_cfg.wire(km);
    km->add_option("--risks", km_risks, "risk CSV (patient_id,risk)")
        ->required();
    km->add_option("--manifest", km_manifest, "dataset manifest")->required();
    km->add_option("--out", km_out, "curves CSV path")->required();

    ConfigArgs gc_cfg;
    std::string gc_seed, gc_inject;
    CLI::App* gc = app.add_subcommand(
        "gradcheck", "Finite-difference check of every operation");
    gc_cfg.wire(gc);
    gc->add_option("--seed", gc_seed, "override the seed");
    gc->add_option("--inject-bad-grad", gc_inject,
                   "harness self-test: bias the named op's gradients");

    ConfigArgs corr_cfg;
    std::string corr_manifest, corr_checkpoint, corr_out;
    CLI::App* corr = app.add_subcommand(
        "correlate", "Image-to-genomic correlation before and after translation");
    corr_cfg.wire(corr);
    corr->add_option("--manifest", corr_manifest, "dataset manifest")
        ->required();
    corr->add_option("--checkpoint", corr_checkpoint, "trained model")
        ->required();
    corr->add_option("--out", corr_out, "report CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) return cmd_generate(gen_cfg, gen_out_dir, gen_seed);
        if (*tr) {
            return cmd_train(train_cfg, train_manifest, train_out,
                             train_epochs, train_resume);
        }
        if (*ev) return cmd_eval(eval_cfg, eval_manifest, eval_checkpoint, eval_report);
        if (*cv) return cmd_crossval(cv_cfg, cv_manifest, cv_method, cv_ablation);
        if (*km) return cmd_km(km_cfg, km_risks, km_manifest, km_out);
        if (*gc) return cmd_gradcheck(gc_cfg, gc_seed, gc_inject);
        if (*corr) {
            return cmd_correlate(corr_cfg, corr_manifest, corr_checkpoint,
                                 corr_out);
        }
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
