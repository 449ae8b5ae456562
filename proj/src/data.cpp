#include "pgx/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <utility>

#include "bytes.hpp"
#include "pgx/errors.hpp"
#include "pgx/format.hpp"
#include "pgx/rng.hpp"

namespace pgx {

using detail::append_f32;
using detail::append_u16;
using detail::append_u32;
using detail::ByteReader;
using detail::read_file;
using detail::write_file;

namespace {

constexpr std::uint16_t kFormatVersion = 1;

void save_matrix(const std::filesystem::path& path, const char* magic,
                 const Tensor& t) {
    if (t.shape().size() != 2) {
        throw ShapeError("expected a matrix, got " + shape_str(t.shape()));
    }
    std::string bytes;
    bytes.reserve(14 + t.numel() * 4);
    bytes.append(magic, 4);
    append_u16(bytes, kFormatVersion);
    append_u32(bytes, static_cast<std::uint32_t>(t.rows()));
    append_u32(bytes, static_cast<std::uint32_t>(t.cols()));
    for (double v : t.values()) append_f32(bytes, static_cast<float>(v));
    write_file(path, bytes);
}

Tensor load_matrix(const std::filesystem::path& path, const char* magic) {
    const std::string bytes = read_file(path);
    ByteReader r{bytes, path.string()};
    r.need(4);
    if (std::memcmp(bytes.data(), magic, 4) != 0) {
        throw IoError("bad magic in " + path.string() + ", expected " +
                      std::string(magic, 4));
    }
    r.pos = 4;
    const std::uint16_t version = r.u16();
    if (version != kFormatVersion) {
        throw IoError("version mismatch in " + path.string() + ": file has " +
                      std::to_string(version) + ", reader supports " +
                      std::to_string(kFormatVersion));
    }
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows == 0 || cols == 0) {
        throw IoError("empty matrix in " + path.string());
    }
    Tensor t({rows, cols});
    for (std::size_t i = 0; i < t.numel(); ++i) {
        t[i] = static_cast<double>(r.f32());
    }
    return t;
}

double softplus(double x) {
    // For large x, log1p(exp(x)) overflows before it rounds to x.
    return x > 30.0 ? x : std::log1p(std::exp(x));
}

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

double censored_fraction(std::span<const double> times,
                         std::span<const double> censor_draws, double c_max) {
    std::size_t censored = 0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (censor_draws[i] * c_max < times[i]) ++censored;
    }
    return static_cast<double>(censored) / static_cast<double>(times.size());
}

}  // namespace

void SynthConfig::validate() const {
    if (n_patients == 0) throw ValidationError("n_patients must be positive");
    if (latent_dim == 0) throw ValidationError("latent_dim must be positive");
    if (genomic_dim == 0) throw ValidationError("genomic_dim must be positive");
    if (feature_dim == 0) throw ValidationError("feature_dim must be positive");
    if (patches_min == 0 || patches_min > patches_max) {
        throw ValidationError("patch count range [" +
                              std::to_string(patches_min) + ", " +
                              std::to_string(patches_max) + "] is invalid");
    }
    if (!(informative_fraction > 0.0) || informative_fraction > 1.0) {
        throw ValidationError("informative_fraction must be in (0, 1], got " +
                              g17(informative_fraction));
    }
    if (!(genomic_noise > 0.0) || !(imaging_noise > 0.0)) {
        throw ValidationError("noise scales must be positive");
    }
    if (!(imaging_noise > genomic_noise)) {
        throw ValidationError(
            "imaging_noise must exceed genomic_noise (imaging is the weaker "
            "modality), got " +
            g17(imaging_noise) + " vs " + g17(genomic_noise));
    }
    if (!(censoring_target >= 0.0) || censoring_target >= 1.0) {
        throw ValidationError("censoring_target must be in [0, 1), got " +
                              g17(censoring_target));
    }
}

std::vector<PatientRecord> generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const std::size_t k = cfg.latent_dim;
    const double latent_scale = 1.0 / std::sqrt(static_cast<double>(k));

    // Fixed mixing maps and hazard direction, shared by the whole cohort.
    Tensor genomic_map({cfg.genomic_dim, k});
    for (double& v : genomic_map.values()) v = rng.normal() * latent_scale;
    Tensor imaging_map({cfg.feature_dim, k});
    for (double& v : imaging_map.values()) v = rng.normal() * latent_scale;
    Tensor background_map({cfg.feature_dim, k});
    for (double& v : background_map.values()) v = rng.normal() * latent_scale;
    // Each patch class also carries a fixed appearance offset, shared by
    // the whole cohort. The offsets hold no outcome information (they are
    // the same for every patient) but give the two classes distinct mean
    // signatures, the way tissue types are recognizable on sight.
    std::vector<double> informative_mark(cfg.feature_dim);
    std::vector<double> background_mark(cfg.feature_dim);
    for (double& v : informative_mark) v = rng.normal();
    for (double& v : background_mark) v = rng.normal();
    std::vector<double> hazard_dir(k);
    double norm = 0.0;
    for (double& v : hazard_dir) {
        v = rng.normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : hazard_dir) v /= norm;

    // Median survival sits near 1000 days for a patient at the latent origin.
    const double base_rate = std::log(2.0) / 1000.0;

    std::vector<PatientRecord> records(cfg.n_patients);
    std::vector<double> death_times(cfg.n_patients);
    std::vector<double> censor_draws(cfg.n_patients);
    for (std::size_t p = 0; p < cfg.n_patients; ++p) {
        PatientRecord& rec = records[p];
        char id[24];
        std::snprintf(id, sizeof id, "p%04zu", p);
        rec.id = id;

        std::vector<double> z(k);
        for (double& v : z) v = rng.normal();

        Tensor genomic({1, cfg.genomic_dim});
        for (std::size_t d = 0; d < cfg.genomic_dim; ++d) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) acc += genomic_map.at(d, j) * z[j];
            genomic[d] = round_f32(softplus(acc + rng.normal() * cfg.genomic_noise));
        }
        rec.genomic = std::move(genomic);

        const std::size_t n_patches =
            cfg.patches_min + rng.index(cfg.patches_max - cfg.patches_min + 1);
        const std::size_t n_informative = static_cast<std::size_t>(
            std::ceil(cfg.informative_fraction * static_cast<double>(n_patches)));
        Tensor bag({n_patches, cfg.feature_dim});
        std::vector<double> decoy(k);
        for (std::size_t row = 0; row < n_patches; ++row) {
            // Rows past the informative count are decoys: each pushes its
            // own throwaway latent through a cohort-wide background map,
            // the way off-target tissue still looks like tissue and looks
            // the same kind of tissue in every slide. Plain averaging
            // blends the decoys into the signal; an aggregator that keys
            // on the informative subspace can screen them out.
            const double* source = z.data();
            const Tensor* mix = &imaging_map;
            const double* mark = informative_mark.data();
            if (row >= n_informative) {
                for (double& v : decoy) v = rng.normal();
                source = decoy.data();
                mix = &background_map;
                mark = background_mark.data();
            }
            for (std::size_t d = 0; d < cfg.feature_dim; ++d) {
                double acc = mark[d];
                for (std::size_t j = 0; j < k; ++j) {
                    acc += mix->at(d, j) * source[j];
                }
                bag.at(row, d) = round_f32(acc + rng.normal() * cfg.imaging_noise);
            }
        }
        // Bury the informative rows at random positions.
        std::vector<std::size_t> order(n_patches);
        for (std::size_t i = 0; i < n_patches; ++i) order[i] = i;
        rng.shuffle(order);
        rec.bag = Tensor({n_patches, cfg.feature_dim});
        for (std::size_t row = 0; row < n_patches; ++row) {
            for (std::size_t d = 0; d < cfg.feature_dim; ++d) {
                rec.bag.at(row, d) = bag.at(order[row], d);
            }
        }

        double lin = 0.0;
        for (std::size_t j = 0; j < k; ++j) lin += hazard_dir[j] * z[j];
        const double rate = base_rate * std::exp(cfg.hazard_coefficient * lin);
        death_times[p] = -std::log1p(-rng.uniform()) / rate;
        censor_draws[p] = rng.uniform();
    }

    if (cfg.censoring_target == 0.0) {
        for (std::size_t p = 0; p < cfg.n_patients; ++p) {
            records[p].outcome = {std::max(death_times[p], 1e-6), 1};
        }
        return records;
    }

    // The censoring horizon is calibrated, not configured: bisect on c_max
    // until the realized censored fraction lands near the target. The
    // fraction is a nonincreasing step function of c_max.
    double lo = 1e-9, hi = 1e9;
    double best_c = hi;
    double best_gap = 2.0;
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        const double frac = censored_fraction(death_times, censor_draws, mid);
        if (std::fabs(frac - cfg.censoring_target) < best_gap) {
            best_gap = std::fabs(frac - cfg.censoring_target);
            best_c = mid;
        }
        if (frac > cfg.censoring_target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    for (std::size_t p = 0; p < cfg.n_patients; ++p) {
        const double censor_time = censor_draws[p] * best_c;
        const int event = death_times[p] <= censor_time ? 1 : 0;
        const double observed = event ? death_times[p] : censor_time;
        // Guards the pathological draw u == 0, which yields a zero time.
        records[p].outcome = {std::max(observed, 1e-6), event};
    }
    return records;
}

void save_bag(const std::filesystem::path& path, const Tensor& bag) {
    save_matrix(path, "PGXB", bag);
}

Tensor load_bag(const std::filesystem::path& path) {
    return load_matrix(path, "PGXB");
}

void save_genomic(const std::filesystem::path& path, const Tensor& genomic) {
    const Tensor* t = &genomic;
    Tensor reshaped{Shape{1, 1}};
    if (genomic.shape().size() == 1) {
        reshaped = Tensor({1, genomic.numel()}, genomic.values());
        t = &reshaped;
    }
    if (t->shape().size() != 2 || t->rows() != 1) {
        throw ShapeError("genomic data must be a single row, got " +
                         shape_str(genomic.shape()));
    }
    save_matrix(path, "PGXG", *t);
}

Tensor load_genomic(const std::filesystem::path& path) {
    Tensor t = load_matrix(path, "PGXG");
    if (t.rows() != 1) {
        throw IoError("genomic file " + path.string() +
                      " must hold a single row, got " + shape_str(t.shape()));
    }
    return t;
}

std::vector<PatientRecord> load_manifest(const std::filesystem::path& path,
                                         bool include_genomic) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    const std::filesystem::path base = path.parent_path();

    std::vector<PatientRecord> records;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            if (line != "patient_id,time_days,event,bag_path,genomic_path") {
                throw ValidationError(path.string() + " line " +
                                      std::to_string(line_no) +
                                      ": unexpected header \"" + line + "\"");
            }
            header_seen = true;
            continue;
        }

        std::vector<std::string> fields;
        std::string field;
        std::istringstream row(line);
        while (std::getline(row, field, ',')) fields.push_back(field);
        if (line.back() == ',') fields.push_back("");
        if (fields.size() != 5) {
            throw ValidationError(
                path.string() + " line " + std::to_string(line_no) +
                ": expected 5 fields, got " + std::to_string(fields.size()));
        }
        const std::string where =
            path.string() + " line " + std::to_string(line_no);
        if (fields[0].empty()) {
            throw ValidationError(where + ": empty patient_id");
        }

        PatientRecord rec;
        rec.id = fields[0];
        try {
            std::size_t used = 0;
            rec.outcome.time = std::stod(fields[1], &used);
            if (used != fields[1].size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw ValidationError(where + ": bad time_days \"" + fields[1] +
                                  "\"");
        }
        if (!(rec.outcome.time > 0.0)) {
            throw ValidationError(where + ": time_days must be positive");
        }
        if (fields[2] == "0") {
            rec.outcome.event = 0;
        } else if (fields[2] == "1") {
            rec.outcome.event = 1;
        } else {
            throw ValidationError(where + ": event must be 0 or 1, got \"" +
                                  fields[2] + "\"");
        }
        if (fields[3].empty()) {
            throw ValidationError(where + ": empty bag_path");
        }
        rec.bag = load_bag(base / fields[3]);
        if (include_genomic && !fields[4].empty()) {
            rec.genomic = load_genomic(base / fields[4]);
        }

        if (!records.empty()) {
            if (rec.bag.cols() != records.front().bag.cols()) {
                throw ValidationError(
                    where + ": bag width " + std::to_string(rec.bag.cols()) +
                    " differs from earlier records (" +
                    std::to_string(records.front().bag.cols()) + ")");
            }
        }
        records.push_back(std::move(rec));
    }
    if (!header_seen) {
        throw ValidationError(path.string() + ": no header row found");
    }

    // Genomic widths must agree across whichever records carry them.
    std::size_t genomic_cols = 0;
    for (const auto& rec : records) {
        if (!rec.genomic) continue;
        if (genomic_cols == 0) {
            genomic_cols = rec.genomic->cols();
        } else if (rec.genomic->cols() != genomic_cols) {
            throw ValidationError(path.string() +
                                  ": inconsistent genomic width for patient " +
                                  rec.id);
        }
    }
    return records;
}

std::filesystem::path save_dataset(const std::filesystem::path& dir,
                                   std::span<const PatientRecord> records,
                                   const std::string& header_comment) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "bags", ec);
    std::filesystem::create_directories(dir / "genomic", ec);
    if (ec) {
        throw IoError("cannot create dataset directories under " +
                      dir.string() + ": " + ec.message());
    }

    std::string manifest = header_comment;
    manifest += "patient_id,time_days,event,bag_path,genomic_path\n";
    for (const auto& rec : records) {
        const std::string bag_rel = "bags/" + rec.id + ".pgxb";
        save_bag(dir / bag_rel, rec.bag);
        std::string genomic_rel;
        if (rec.genomic) {
            genomic_rel = "genomic/" + rec.id + ".pgxg";
            save_genomic(dir / genomic_rel, *rec.genomic);
        }
        manifest += rec.id + ',' + g17(rec.outcome.time) + ',' +
                    std::to_string(rec.outcome.event) + ',' + bag_rel + ',' +
                    genomic_rel + '\n';
    }
    const std::filesystem::path manifest_path = dir / "manifest.csv";
    write_file(manifest_path, manifest);
    return manifest_path;
}

FoldSplit kfold_split(std::span<const std::string> ids, std::size_t k,
                      std::uint64_t seed) {
    if (k < 2) {
        throw ValidationError("need at least 2 folds, got " +
                              std::to_string(k));
    }
    if (ids.size() < k) {
        throw ValidationError("too few patients: " +
                              std::to_string(ids.size()) + " for " +
                              std::to_string(k) + " folds");
    }
    std::vector<std::string> shuffled(ids.begin(), ids.end());
    Rng rng(seed);
    rng.shuffle(shuffled);

    FoldSplit split;
    split.seed = seed;
    split.folds.resize(k);
    for (std::size_t i = 0; i < shuffled.size(); ++i) {
        split.folds[i % k].push_back(std::move(shuffled[i]));
    }
    return split;
}

}  // namespace pgx
