// End-to-end checks that drive the installed binary the way a user would:
// each case spawns the real executable and inspects files and exit codes.
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pgx/survival.hpp"
#include "pgx/train.hpp"

namespace fs = std::filesystem;
using namespace pgx;

namespace {

const std::string& binary() {
    // The ctest entry exports PATHOGENX_BIN; the fallbacks cover running the
    // test binary by hand from the build or source directory.
    static const std::string path = [] {
        if (const char* env = std::getenv("PATHOGENX_BIN")) {
            return std::string(env);
        }
        for (const char* guess : {"./tools/pathogenx", "build/tools/pathogenx"}) {
            if (fs::exists(guess)) return std::string(guess);
        }
        return std::string("pathogenx");
    }();
    return path;
}

struct CmdResult {
    int status = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return std::move(buf).str();
}

CmdResult run(const std::string& args) {
    static std::atomic<int> counter{0};
    const fs::path base =
        fs::temp_directory_path() /
        ("pgx_cli_" + std::to_string(::getpid()) + "_" +
         std::to_string(counter.fetch_add(1)));
    const fs::path out_file = base.string() + ".out";
    const fs::path err_file = base.string() + ".err";
    const std::string cmd = binary() + " " + args + " > " + out_file.string() +
                            " 2> " + err_file.string();
    const int raw = std::system(cmd.c_str());
    CmdResult r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    fs::remove(out_file);
    fs::remove(err_file);
    return r;
}

struct TempDir {
    fs::path path;
    TempDir() {
        static std::atomic<int> counter{0};
        path = fs::temp_directory_path() /
               ("pgx_cli_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter.fetch_add(1)));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

// Overrides that shrink every stage to sub-second sizes.
const std::string kTiny =
    "--set n_patients=24 --set d_in=8 --set d_g=10 --set latent_dim=3 "
    "--set patches_min=3 --set patches_max=6 --set d=8 --set heads=2 "
    "--set hidden=8 --set epochs=2 --set batch_size=8 --set seed=7";

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

std::vector<std::string> data_rows(const std::string& text) {
    std::vector<std::string> rows;
    for (const auto& line : lines_of(text)) {
        if (!line.empty() && line[0] != '#') rows.push_back(line);
    }
    return rows;
}

// Dataset plus trained model shared by the read-only cases below. Cases that
// mutate files copy what they need first.
struct Workspace {
    TempDir dir;
    fs::path data;
    fs::path model;
    Workspace() {
        data = dir.path / "ds";
        model = dir.path / "model.pgxc";
        const auto gen =
            run("generate " + kTiny + " --out-dir " + data.string());
        REQUIRE(gen.status == 0);
        const auto tr = run("train " + kTiny + " --manifest " +
                            (data / "manifest.csv").string() + " --out " +
                            model.string());
        REQUIRE(tr.status == 0);
    }
};

const Workspace& workspace() {
    static Workspace ws;
    return ws;
}

}  // namespace

TEST_CASE("generate writes a deterministic dataset tree") {
    TempDir tmp;
    const fs::path a = tmp.path / "a";
    const fs::path b = tmp.path / "b";
    REQUIRE(run("generate " + kTiny + " --out-dir " + a.string()).status == 0);
    REQUIRE(run("generate " + kTiny + " --out-dir " + b.string()).status == 0);

    CHECK(fs::exists(a / "manifest.csv"));
    std::size_t bags = 0;
    std::size_t genomic = 0;
    for (const auto& e : fs::directory_iterator(a / "bags")) {
        (void)e;
        ++bags;
    }
    for (const auto& e : fs::directory_iterator(a / "genomic")) {
        (void)e;
        ++genomic;
    }
    CHECK(bags == 24);
    CHECK(genomic == 24);

    const std::string manifest = slurp(a / "manifest.csv");
    REQUIRE(!manifest.empty());
    CHECK(manifest[0] == '#');
    CHECK(manifest == slurp(b / "manifest.csv"));

    // Same seed, same bytes, down to the binary payloads.
    const fs::path first_bag = fs::directory_iterator(a / "bags")->path();
    CHECK(slurp(first_bag) == slurp(b / "bags" / first_bag.filename()));

    const auto other =
        run("generate " + kTiny + " --seed 8 --out-dir " + b.string());
    REQUIRE(other.status == 0);
    CHECK(slurp(a / "manifest.csv") != slurp(b / "manifest.csv"));
}

TEST_CASE("train writes a checkpoint and a per-batch log") {
    const Workspace& ws = workspace();
    REQUIRE(fs::exists(ws.model));
    const fs::path log_path = ws.model.string() + ".log.csv";
    REQUIRE(fs::exists(log_path));

    const std::string log = slurp(log_path);
    CHECK(log[0] == '#');
    const auto rows = data_rows(log);
    // Header plus epochs * ceil(24 / 8) batch rows.
    REQUIRE(rows.size() == 1 + 2 * 3);
    CHECK(rows[0] == "epoch,batch,cox,latent,translation,total");
    CHECK(rows[1].rfind("0,0,", 0) == 0);
    CHECK(rows.back().rfind("1,2,", 0) == 0);

    // Zero epochs still produces the artifacts: an initial checkpoint and a
    // log that holds only the configuration and header.
    TempDir tmp;
    const fs::path init = tmp.path / "init.pgxc";
    const auto tr = run("train " + kTiny + " --epochs 0 --manifest " +
                        (ws.data / "manifest.csv").string() + " --out " +
                        init.string());
    REQUIRE(tr.status == 0);
    CHECK(fs::exists(init));
    CHECK(data_rows(slurp(init.string() + ".log.csv")).size() == 1);
}

TEST_CASE("resuming a checkpoint matches the uninterrupted run") {
    const Workspace& ws = workspace();
    TempDir tmp;
    const std::string manifest = (ws.data / "manifest.csv").string();
    const fs::path straight = tmp.path / "straight.pgxc";
    const fs::path half = tmp.path / "half.pgxc";
    const fs::path resumed = tmp.path / "resumed.pgxc";

    REQUIRE(run("train " + kTiny + " --epochs 4 --manifest " + manifest +
                " --out " + straight.string())
                .status == 0);
    REQUIRE(run("train " + kTiny + " --manifest " + manifest + " --out " +
                half.string())
                .status == 0);
    // The epoch count is the absolute target: resuming the 2-epoch
    // checkpoint with --epochs 4 trains epochs 2 and 3.
    REQUIRE(run("train " + kTiny + " --epochs 4 --manifest " + manifest +
                " --resume " + half.string() + " --out " + resumed.string())
                .status == 0);

    const LoadedCheckpoint a = load_checkpoint(straight.string());
    const LoadedCheckpoint b = load_checkpoint(resumed.string());
    REQUIRE(a.params.size() == b.params.size());
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        CHECK(a.params[i].first == b.params[i].first);
        CHECK(a.params[i].second.values() == b.params[i].second.values());
    }
    CHECK(a.state.adam.step == b.state.adam.step);
    CHECK(a.state.next_epoch == b.state.next_epoch);

    // The resumed log continues the epoch numbering where the first leg
    // stopped, so the combined data rows equal the uninterrupted log's.
    auto straight_rows = data_rows(slurp(straight.string() + ".log.csv"));
    auto half_rows = data_rows(slurp(half.string() + ".log.csv"));
    auto resumed_rows = data_rows(slurp(resumed.string() + ".log.csv"));
    std::vector<std::string> combined(half_rows.begin(), half_rows.end());
    combined.insert(combined.end(), resumed_rows.begin() + 1,
                    resumed_rows.end());
    CHECK(combined == straight_rows);
}

TEST_CASE("evaluation reads images alone and survives missing genomic files") {
    const Workspace& ws = workspace();
    TempDir tmp;
    const fs::path report = tmp.path / "risks.csv";
    REQUIRE(run("eval " + kTiny + " --manifest " +
                (ws.data / "manifest.csv").string() + " --checkpoint " +
                ws.model.string() + " --report " + report.string())
                .status == 0);

    const std::string text = slurp(report);
    CHECK(text[0] == '#');
    const auto rows = data_rows(text);
    REQUIRE(rows.size() == 1 + 24);
    CHECK(rows[0] == "patient_id,risk");
    const auto comments = lines_of(text);
    CHECK(comments.back().rfind("# c_index = ", 0) == 0);

    // A copy of the dataset with every genomic file deleted must evaluate to
    // the same bytes: inference never touches that modality.
    const fs::path stripped = tmp.path / "stripped";
    fs::copy(ws.data, stripped, fs::copy_options::recursive);
    fs::remove_all(stripped / "genomic");
    const fs::path report2 = tmp.path / "risks2.csv";
    REQUIRE(run("eval " + kTiny + " --manifest " +
                (stripped / "manifest.csv").string() + " --checkpoint " +
                ws.model.string() + " --report " + report2.string())
                .status == 0);
    CHECK(slurp(report2) == text);
}

TEST_CASE("km stratifies an eval report into two parseable curves") {
    const Workspace& ws = workspace();
    TempDir tmp;
    const fs::path report = tmp.path / "risks.csv";
    REQUIRE(run("eval " + kTiny + " --manifest " +
                (ws.data / "manifest.csv").string() + " --checkpoint " +
                ws.model.string() + " --report " + report.string())
                .status == 0);

    const fs::path curves = tmp.path / "curves.csv";
    REQUIRE(run("km " + kTiny + " --risks " + report.string() + " --manifest " +
                (ws.data / "manifest.csv").string() + " --out " +
                curves.string())
                .status == 0);

    const std::string text = slurp(curves);
    CHECK(text[0] == '#');
    std::istringstream in(text);
    const auto groups = read_km_rows(in);
    REQUIRE(groups.size() == 2);
    CHECK(groups[0].first == "low");
    CHECK(groups[1].first == "high");
    CHECK(groups[0].second.times.size() + groups[1].second.times.size() > 0);

    bool chi2_line = false;
    bool p_line = false;
    for (const auto& line : lines_of(text)) {
        if (line.rfind("# chi2 = ", 0) == 0) chi2_line = true;
        if (line.rfind("# p = ", 0) == 0) p_line = true;
    }
    CHECK(chi2_line);
    CHECK(p_line);
}

TEST_CASE("crossval prints per-fold rows and a summary") {
    const Workspace& ws = workspace();
    const auto cv = run("crossval " + kTiny + " --method meanmil --manifest " +
                        (ws.data / "manifest.csv").string());
    REQUIRE(cv.status == 0);
    CHECK(cv.out[0] == '#');
    const auto rows = data_rows(cv.out);
    REQUIRE(rows.size() == 1 + 4 + 2);
    CHECK(rows[0] == "fold,c_index");
    CHECK(rows[1].rfind("0,", 0) == 0);
    CHECK(rows[5].rfind("mean,", 0) == 0);
    CHECK(rows[6].rfind("std,", 0) == 0);
}

TEST_CASE("crossval ablation lists the three alignment variants") {
    const Workspace& ws = workspace();
    const auto cv = run("crossval " + kTiny + " --ablation --manifest " +
                        (ws.data / "manifest.csv").string());
    REQUIRE(cv.status == 0);
    const auto rows = data_rows(cv.out);
    REQUIRE(rows.size() == 1 + 3);
    CHECK(rows[0] == "config,mean_c_index,std_dev");
    CHECK(rows[1].rfind("latent_only,", 0) == 0);
    CHECK(rows[2].rfind("translation_only,", 0) == 0);
    CHECK(rows[3].rfind("combined,", 0) == 0);
}

TEST_CASE("gradcheck passes clean and fails a planted error") {
    const auto ok = run("gradcheck --seed 3");
    REQUIRE(ok.status == 0);
    const auto rows = data_rows(ok.out);
    CHECK(rows.size() == 1 + 22);
    CHECK(rows[0] == "op,max_rel_error");
    bool summary = false;
    for (const auto& line : lines_of(ok.out)) {
        if (line.rfind("# all", 0) == 0) summary = true;
    }
    CHECK(summary);

    const auto bad = run("gradcheck --seed 3 --inject-bad-grad matmul");
    CHECK(bad.status == 1);
    CHECK(bad.err.find("matmul") != std::string::npos);
}

TEST_CASE("correlate reports the two feature families") {
    const Workspace& ws = workspace();
    TempDir tmp;
    const fs::path out = tmp.path / "corr.csv";
    REQUIRE(run("correlate " + kTiny + " --manifest " +
                (ws.data / "manifest.csv").string() + " --checkpoint " +
                ws.model.string() + " --out " + out.string())
                .status == 0);
    const std::string text = slurp(out);
    CHECK(text[0] == '#');
    const auto rows = data_rows(text);
    REQUIRE(rows.size() == 1 + 2);
    CHECK(rows[0] == "features,mean_abs_r");
    CHECK(rows[1].rfind("raw_class_token,", 0) == 0);
    CHECK(rows[2].rfind("translated,", 0) == 0);
}

TEST_CASE("failure exit codes distinguish usage errors from io errors") {
    const Workspace& ws = workspace();
    CHECK(run("train --no-such-flag").status == 1);
    CHECK(run("eval " + kTiny +
              " --manifest /nonexistent/manifest.csv --checkpoint " +
              ws.model.string() + " --report /tmp/unused_report.csv")
              .status == 2);
    const auto bad_key = run("crossval --set no_such_key=1 --manifest " +
                             (ws.data / "manifest.csv").string());
    CHECK(bad_key.status == 1);
    CHECK(bad_key.err.find("no_such_key") != std::string::npos);
}
