#include "pgx/data.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "pgx/errors.hpp"
#include "pgx/tensor.hpp"

namespace fs = std::filesystem;

namespace {

// Fresh directory per test, removed on scope exit.
struct TempDir {
    fs::path path;
    TempDir() {
        static std::atomic<int> counter{0};
        path = fs::temp_directory_path() /
               ("pgx_data_test_" + std::to_string(counter.fetch_add(1)));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

std::string read_raw(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return std::move(buf).str();
}

void write_raw(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool same_tensor(const pgx::Tensor& a, const pgx::Tensor& b) {
    return a.shape() == b.shape() && a.values() == b.values();
}

// Message-substring assertion that still checks the exception type.
template <class E, class Fn>
std::string message_of(Fn&& fn) {
    try {
        fn();
    } catch (const E& e) {
        return e.what();
    } catch (...) {
        FAIL("wrong exception type");
    }
    FAIL("expected an exception");
    return {};
}

pgx::SynthConfig small_config() {
    pgx::SynthConfig cfg;
    cfg.n_patients = 20;
    cfg.latent_dim = 4;
    cfg.genomic_dim = 12;
    cfg.feature_dim = 6;
    cfg.patches_min = 3;
    cfg.patches_max = 7;
    cfg.seed = 11;
    return cfg;
}

}  // namespace

TEST_CASE("one-cell bag serializes to the documented 18 bytes") {
    TempDir tmp;
    const fs::path file = tmp.path / "one.pgxb";
    pgx::save_bag(file, pgx::Tensor({1, 1}, std::vector<double>{0.5}));

    std::string expected = "PGXB";
    expected += std::string("\x01\x00", 2);                  // version 1
    expected += std::string("\x01\x00\x00\x00", 4);          // rows
    expected += std::string("\x01\x00\x00\x00", 4);          // cols
    expected += std::string("\x00\x00\x00\x3f", 4);          // f32 0.5
    const std::string actual = read_raw(file);
    REQUIRE(actual.size() == 18);
    CHECK(actual == expected);
}

TEST_CASE("bag files round-trip at f32 precision") {
    TempDir tmp;
    const fs::path file = tmp.path / "bag.pgxb";
    pgx::Tensor bag({3, 4});
    for (std::size_t i = 0; i < bag.numel(); ++i) {
        bag[i] = 0.1 * static_cast<double>(i) - 0.7;
    }
    pgx::save_bag(file, bag);
    const pgx::Tensor loaded = pgx::load_bag(file);
    REQUIRE(loaded.shape() == bag.shape());
    for (std::size_t i = 0; i < bag.numel(); ++i) {
        CHECK(loaded[i] == static_cast<double>(static_cast<float>(bag[i])));
    }

    // Values already on the f32 grid survive a second cycle bitwise.
    pgx::save_bag(file, loaded);
    CHECK(same_tensor(pgx::load_bag(file), loaded));
}

TEST_CASE("corrupted bag files raise typed errors") {
    TempDir tmp;
    const fs::path file = tmp.path / "bag.pgxb";
    pgx::save_bag(file, pgx::Tensor({2, 2}, 1.0));
    const std::string good = read_raw(file);

    write_raw(file, good.substr(0, good.size() - 2));
    auto msg = message_of<pgx::IoError>([&] { pgx::load_bag(file); });
    CHECK(msg.find("truncated payload") != std::string::npos);

    std::string bad_magic = good;
    bad_magic[0] = 'Q';
    write_raw(file, bad_magic);
    msg = message_of<pgx::IoError>([&] { pgx::load_bag(file); });
    CHECK(msg.find("bad magic") != std::string::npos);

    std::string bad_version = good;
    bad_version[4] = '\x02';
    write_raw(file, bad_version);
    msg = message_of<pgx::IoError>([&] { pgx::load_bag(file); });
    CHECK(msg.find("version mismatch") != std::string::npos);

    CHECK_THROWS_AS(pgx::load_bag(tmp.path / "absent.pgxb"), pgx::IoError);
}

TEST_CASE("genomic files are single-row and magic-checked") {
    TempDir tmp;
    const fs::path file = tmp.path / "g.pgxg";
    const pgx::Tensor flat({5}, std::vector<double>{1, 2, 3, 4, 5});
    pgx::save_genomic(file, flat);
    const pgx::Tensor loaded = pgx::load_genomic(file);
    CHECK(loaded.shape() == pgx::Shape{1, 5});
    for (std::size_t i = 0; i < 5; ++i) CHECK(loaded[i] == flat[i]);

    // A bag reader refuses genomic files and vice versa.
    CHECK_THROWS_AS(pgx::load_bag(file), pgx::IoError);
    pgx::save_bag(tmp.path / "b.pgxb", pgx::Tensor({2, 2}, 1.0));
    CHECK_THROWS_AS(pgx::load_genomic(tmp.path / "b.pgxb"), pgx::IoError);

    CHECK_THROWS_AS(pgx::save_genomic(file, pgx::Tensor({2, 3}, 1.0)),
                    pgx::ShapeError);
}

TEST_CASE("dataset save and manifest load reproduce records bitwise") {
    TempDir tmp;
    const auto records = pgx::generate_synthetic(small_config());
    const fs::path manifest = pgx::save_dataset(tmp.path / "ds", records);
    const auto loaded = pgx::load_manifest(manifest);

    REQUIRE(loaded.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(loaded[i].id == records[i].id);
        CHECK(loaded[i].outcome.time == records[i].outcome.time);
        CHECK(loaded[i].outcome.event == records[i].outcome.event);
        CHECK(same_tensor(loaded[i].bag, records[i].bag));
        REQUIRE(loaded[i].genomic.has_value());
        CHECK(same_tensor(*loaded[i].genomic, *records[i].genomic));
    }
}

TEST_CASE("manifest with only a header yields an empty dataset") {
    TempDir tmp;
    const fs::path m = tmp.path / "manifest.csv";
    write_raw(m, "patient_id,time_days,event,bag_path,genomic_path\n");
    CHECK(pgx::load_manifest(m).empty());

    // Comments and blank lines are ignored wherever they appear.
    write_raw(m,
              "# cohort snapshot\n\n"
              "patient_id,time_days,event,bag_path,genomic_path\n"
              "# no patients yet\n");
    CHECK(pgx::load_manifest(m).empty());
}

TEST_CASE("manifest rows may omit the genomic path") {
    TempDir tmp;
    pgx::save_bag(tmp.path / "b.pgxb", pgx::Tensor({2, 3}, 0.25));
    write_raw(tmp.path / "manifest.csv",
              "patient_id,time_days,event,bag_path,genomic_path\n"
              "p1,100,1,b.pgxb,\n");
    const auto records = pgx::load_manifest(tmp.path / "manifest.csv");
    REQUIRE(records.size() == 1);
    CHECK(!records[0].genomic.has_value());
    CHECK(records[0].bag.rows() == 2);
}

TEST_CASE("malformed manifest rows name their line") {
    TempDir tmp;
    pgx::save_bag(tmp.path / "b.pgxb", pgx::Tensor({1, 2}, 0.0));
    const fs::path m = tmp.path / "manifest.csv";
    const std::string header =
        "patient_id,time_days,event,bag_path,genomic_path\n";

    write_raw(m, header + "p1,100,2,b.pgxb,\n");
    auto msg = message_of<pgx::ValidationError>([&] { pgx::load_manifest(m); });
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("event") != std::string::npos);

    write_raw(m, header + "p1,100,1,b.pgxb,\np2,soon,1,b.pgxb,\n");
    msg = message_of<pgx::ValidationError>([&] { pgx::load_manifest(m); });
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(msg.find("time_days") != std::string::npos);

    write_raw(m, header + "p1,100,1\n");
    msg = message_of<pgx::ValidationError>([&] { pgx::load_manifest(m); });
    CHECK(msg.find("expected 5 fields") != std::string::npos);

    write_raw(m, header + "p1,-3,1,b.pgxb,\n");
    CHECK_THROWS_AS(pgx::load_manifest(m), pgx::ValidationError);

    write_raw(m, header + "p1,100,1,missing.pgxb,\n");
    CHECK_THROWS_AS(pgx::load_manifest(m), pgx::IoError);

    write_raw(m, "");
    CHECK_THROWS_AS(pgx::load_manifest(m), pgx::ValidationError);

    CHECK_THROWS_AS(pgx::load_manifest(tmp.path / "nope.csv"), pgx::IoError);
}

TEST_CASE("manifest rejects inconsistent feature widths") {
    TempDir tmp;
    pgx::save_bag(tmp.path / "a.pgxb", pgx::Tensor({2, 3}, 0.0));
    pgx::save_bag(tmp.path / "b.pgxb", pgx::Tensor({2, 4}, 0.0));
    write_raw(tmp.path / "manifest.csv",
              "patient_id,time_days,event,bag_path,genomic_path\n"
              "p1,10,1,a.pgxb,\n"
              "p2,20,1,b.pgxb,\n");
    auto msg = message_of<pgx::ValidationError>(
        [&] { pgx::load_manifest(tmp.path / "manifest.csv"); });
    CHECK(msg.find("line 3") != std::string::npos);
}

TEST_CASE("synthetic generation is a pure function of its config") {
    const auto a = pgx::generate_synthetic(small_config());
    const auto b = pgx::generate_synthetic(small_config());
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        CHECK(a[i].outcome.time == b[i].outcome.time);
        CHECK(a[i].outcome.event == b[i].outcome.event);
        CHECK(same_tensor(a[i].bag, b[i].bag));
        CHECK(same_tensor(*a[i].genomic, *b[i].genomic));
    }

    auto shifted = small_config();
    shifted.seed = 12;
    const auto c = pgx::generate_synthetic(shifted);
    CHECK(!same_tensor(a[0].bag, c[0].bag));
}

TEST_CASE("synthetic cohorts respect the configured structure") {
    auto cfg = small_config();
    cfg.n_patients = 50;
    const auto records = pgx::generate_synthetic(cfg);
    REQUIRE(records.size() == 50);

    std::set<std::size_t> bag_sizes;
    std::size_t events = 0;
    for (const auto& rec : records) {
        CHECK(rec.bag.cols() == cfg.feature_dim);
        CHECK(rec.bag.rows() >= cfg.patches_min);
        CHECK(rec.bag.rows() <= cfg.patches_max);
        bag_sizes.insert(rec.bag.rows());
        CHECK(rec.bag.all_finite());
        REQUIRE(rec.genomic.has_value());
        CHECK(rec.genomic->shape() == pgx::Shape{1, cfg.genomic_dim});
        for (double v : rec.genomic->values()) CHECK(v >= 0.0);
        CHECK(rec.outcome.time > 0.0);
        events += static_cast<std::size_t>(rec.outcome.event);
    }
    CHECK(bag_sizes.size() > 1);
    CHECK(events > 0);
    CHECK(events < records.size());
}

TEST_CASE("realized censoring tracks the target on a large cohort") {
    auto cfg = small_config();
    cfg.n_patients = 400;
    for (double target : {0.15, 0.3, 0.5}) {
        cfg.censoring_target = target;
        const auto records = pgx::generate_synthetic(cfg);
        std::size_t censored = 0;
        for (const auto& rec : records) censored += rec.outcome.event == 0;
        const double realized =
            static_cast<double>(censored) / static_cast<double>(records.size());
        CHECK(std::fabs(realized - target) <= 0.05 * target);
    }

    cfg.censoring_target = 0.0;
    for (const auto& rec : pgx::generate_synthetic(cfg)) {
        CHECK(rec.outcome.event == 1);
    }
}

TEST_CASE("config validation rejects out-of-range fields") {
    auto cfg = small_config();
    cfg.imaging_noise = cfg.genomic_noise;
    CHECK_THROWS_AS(cfg.validate(), pgx::ValidationError);

    cfg = small_config();
    cfg.informative_fraction = 0.0;
    CHECK_THROWS_AS(cfg.validate(), pgx::ValidationError);
    cfg.informative_fraction = 1.25;
    CHECK_THROWS_AS(cfg.validate(), pgx::ValidationError);

    cfg = small_config();
    cfg.censoring_target = 1.0;
    CHECK_THROWS_AS(cfg.validate(), pgx::ValidationError);

    cfg = small_config();
    cfg.patches_min = 9;
    cfg.patches_max = 8;
    CHECK_THROWS_AS(cfg.validate(), pgx::ValidationError);

    cfg = small_config();
    cfg.n_patients = 0;
    CHECK_THROWS_AS(cfg.validate(), pgx::ValidationError);

    CHECK_NOTHROW(small_config().validate());
    CHECK_NOTHROW(pgx::SynthConfig{}.validate());
}

TEST_CASE("fold split partitions the ids with balanced sizes") {
    std::vector<std::string> ids;
    for (int i = 0; i < 8; ++i) ids.push_back("p" + std::to_string(i));
    const auto split = pgx::kfold_split(ids, 4, 9);
    REQUIRE(split.folds.size() == 4);
    std::set<std::string> seen;
    for (const auto& fold : split.folds) {
        CHECK(fold.size() == 2);
        for (const auto& id : fold) CHECK(seen.insert(id).second);
    }
    CHECK(seen.size() == ids.size());

    // Uneven division differs by at most one.
    ids.push_back("p8");
    ids.push_back("p9");
    ids.push_back("p10");
    const auto uneven = pgx::kfold_split(ids, 4, 9);
    std::size_t lo = ids.size(), hi = 0;
    for (const auto& fold : uneven.folds) {
        lo = std::min(lo, fold.size());
        hi = std::max(hi, fold.size());
    }
    CHECK(hi - lo <= 1);
}

TEST_CASE("fold split is seeded and seed-sensitive") {
    std::vector<std::string> ids;
    for (int i = 0; i < 100; ++i) ids.push_back("p" + std::to_string(i));
    const auto a = pgx::kfold_split(ids, 4, 5);
    const auto b = pgx::kfold_split(ids, 4, 5);
    CHECK(a.folds == b.folds);
    const auto c = pgx::kfold_split(ids, 4, 6);
    CHECK(a.folds != c.folds);
}

TEST_CASE("fold split rejects degenerate requests") {
    const std::vector<std::string> ids{"a", "b", "c"};
    CHECK_THROWS_AS(pgx::kfold_split(ids, 1, 0), pgx::ValidationError);
    CHECK_THROWS_AS(pgx::kfold_split(ids, 4, 0), pgx::ValidationError);
}

TEST_CASE("dataset manifests can carry a leading comment block") {
    TempDir dir;
    const auto records = pgx::generate_synthetic(small_config());
    const std::string comment = "# seed = 11\n# n_patients = 20\n";
    const auto manifest =
        pgx::save_dataset(dir.path / "ds", records, comment);

    std::ifstream in(manifest);
    std::string first;
    std::getline(in, first);
    CHECK(first == "# seed = 11");

    const auto loaded = pgx::load_manifest(manifest);
    CHECK(loaded.size() == records.size());
}

TEST_CASE("manifest loading can ignore the genomic column entirely") {
    TempDir dir;
    const auto records = pgx::generate_synthetic(small_config());
    const auto manifest = pgx::save_dataset(dir.path / "ds", records);

    const auto without = pgx::load_manifest(manifest, false);
    for (const auto& rec : without) CHECK_FALSE(rec.genomic.has_value());

    // The files themselves are never opened, so deleting them changes
    // nothing for a consumer that opts out of the modality.
    std::filesystem::remove_all(dir.path / "ds" / "genomic");
    const auto after_delete = pgx::load_manifest(manifest, false);
    REQUIRE(after_delete.size() == without.size());
    for (std::size_t i = 0; i < without.size(); ++i) {
        CHECK(after_delete[i].id == without[i].id);
        CHECK(after_delete[i].bag.values() == without[i].bag.values());
    }

    CHECK_THROWS_AS((void)pgx::load_manifest(manifest), pgx::IoError);
}
