#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pgx/survival.hpp"
#include "pgx/tensor.hpp"

namespace pgx {

// One patient: a bag of patch feature rows plus, when available, a paired
// genomic profile. The genomic tensor is a 1 x D_g row; it is required for
// training and optional at evaluation time.
struct PatientRecord {
    std::string id;
    SurvivalOutcome outcome;
    Tensor bag{Shape{1, 1}};
    std::optional<Tensor> genomic;
};

// Synthetic cohort recipe. A shared latent state drives both modalities:
// the genomic view sees it through mild noise; the imaging view spreads it
// over a minority of informative patches, padded with decoy patches that
// push unrelated latent content through the same mixing map. Genomic
// features are the stronger predictor by construction, and bag-mean image
// features are diluted by the decoys while an attention aggregator can
// still separate the coherent rows.
struct SynthConfig {
    std::size_t n_patients = 400;
    std::size_t latent_dim = 8;
    std::size_t genomic_dim = 746;
    std::size_t feature_dim = 64;
    std::size_t patches_min = 8;
    std::size_t patches_max = 32;
    double informative_fraction = 0.25;
    double genomic_noise = 0.3;
    double imaging_noise = 2.0;
    double hazard_coefficient = 1.5;
    double censoring_target = 0.3;
    std::uint64_t seed = 42;

    // Throws ValidationError when a field is out of range, including
    // imaging_noise <= genomic_noise.
    void validate() const;
};

struct FoldSplit {
    std::vector<std::vector<std::string>> folds;
    std::uint64_t seed = 0;
};

// Deterministic paired-modality cohort; a pure function of the config.
// Feature values are rounded through f32 so that records survive a
// save/load cycle bitwise.
std::vector<PatientRecord> generate_synthetic(const SynthConfig& cfg);

// Bag files: magic "PGXB", u16 format version (currently 1), u32 row count,
// u32 column count, then row-major f32 values; all integers little-endian.
// Genomic files are identical with magic "PGXG" and a single row.
void save_bag(const std::filesystem::path& path, const Tensor& bag);
Tensor load_bag(const std::filesystem::path& path);
void save_genomic(const std::filesystem::path& path, const Tensor& genomic);
Tensor load_genomic(const std::filesystem::path& path);

// Manifest CSV: header `patient_id,time_days,event,bag_path,genomic_path`,
// one row per patient, paths relative to the manifest's directory, empty
// genomic_path for image-only records. '#' lines and blank lines are
// skipped. Malformed rows raise ValidationError naming the line; missing
// or unreadable referenced files raise IoError. With include_genomic
// false the genomic_path column is ignored outright and no genomic file
// is ever opened, for consumers that must not depend on that modality.
std::vector<PatientRecord> load_manifest(const std::filesystem::path& path,
                                         bool include_genomic = true);

// Writes <dir>/bags/<id>.pgxb, <dir>/genomic/<id>.pgxg and
// <dir>/manifest.csv. Returns the manifest path. `header_comment`, if
// nonempty, is written verbatim ahead of the manifest header; callers
// pass '#'-prefixed lines.
std::filesystem::path save_dataset(const std::filesystem::path& dir,
                                   std::span<const PatientRecord> records,
                                   const std::string& header_comment = "");

// Seeded shuffle followed by round-robin assignment; fold sizes differ by
// at most one. Requires k >= 2 and at least k ids.
FoldSplit kfold_split(std::span<const std::string> ids, std::size_t k,
                      std::uint64_t seed);

}  // namespace pgx
