#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "shufflebench/trainer.hpp"
#include "test_support.hpp"

namespace {

struct CliResult {
    int exit_code;
    std::string out;
    std::string err;
};

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CliResult run_cli(const std::filesystem::path& cwd, const std::string& args) {
    const auto out_file = cwd / ".cli-out";
    const auto err_file = cwd / ".cli-err";
    const std::string cmd = "cd '" + cwd.string() + "' && '" + SHFB_CLI_PATH + "' " + args +
                            " > '" + out_file.string() + "' 2> '" + err_file.string() + "'";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
        out.push_back(cell);
    return out;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line))
        out.push_back(line);
    return out;
}

// Returns the row following the summary header.
std::vector<std::string> summary_row(const std::string& csv) {
    const auto lines = lines_of(csv);
    for (std::size_t i = 0; i + 1 < lines.size(); ++i)
        if (lines[i] == shufflebench::kSummaryCsvHeader)
            return split_csv(lines[i + 1]);
    REQUIRE(false);
    return {};
}

} // namespace

TEST_SUITE("cli") {

TEST_CASE("gen is deterministic and prints a header summary") {
    testsup::TempDir tmp("cligen");
    const std::string args =
        "gen --n 400 --f 30 --format sparse --nnz 8 --margin 0.05 --seed 42 --out ";
    const auto a = run_cli(tmp.path(), args + "a.shfd");
    REQUIRE(a.exit_code == 0);
    CHECK(a.out == "N=400 F=30 sparse\n");
    const auto b = run_cli(tmp.path(), args + "b.shfd");
    REQUIRE(b.exit_code == 0);
    CHECK(slurp(tmp.file("a.shfd")) == slurp(tmp.file("b.shfd")));
}

TEST_CASE("gen rejects nnz above the feature count with exit 2") {
    testsup::TempDir tmp("clibad");
    const auto r = run_cli(tmp.path(),
                           "gen --n 10 --f 50 --format sparse --nnz 60 --seed 1 --out x.shfd");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("nnz") != std::string::npos);
    CHECK(!std::filesystem::exists(tmp.file("x.shfd")));
}

TEST_CASE("index builds a sidecar and rejects missing input with exit 2") {
    testsup::TempDir tmp("cliindex");
    REQUIRE(run_cli(tmp.path(),
                    "gen --n 300 --f 20 --format sparse --nnz 6 --seed 7 --out d.shfd")
                .exit_code == 0);
    const auto ok = run_cli(tmp.path(), "index --data d.shfd");
    CHECK(ok.exit_code == 0);
    CHECK(std::filesystem::exists(tmp.file("d.shfo")));
    const auto table = shufflebench::load_offset_table(tmp.file("d.shfo"));
    CHECK(table.entries.size() == 300);

    const auto missing = run_cli(tmp.path(), "index --data nowhere.shfd");
    CHECK(missing.exit_code == 2);
}

TEST_CASE("queue of size one trains in disk order") {
    testsup::TempDir tmp("cliq1");
    REQUIRE(run_cli(tmp.path(), "gen --n 200 --f 5 --seed 3 --out d.shfd").exit_code == 0);
    const auto r = run_cli(tmp.path(),
                           "run --data d.shfd --strategy queue --q 1 --batches 4 "
                           "--max-epochs 1 --skip-fstar --out r.csv --dump-plan plan.txt");
    REQUIRE(r.exit_code == 0);
    const auto lines = lines_of(slurp(tmp.file("plan.txt")));
    REQUIRE(lines.size() == 200);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto cells = split_csv(lines[i]);
        REQUIRE(cells.size() == 3);
        CHECK(cells[0] == "0");
        CHECK(cells[2] == std::to_string(i));
    }
}

TEST_CASE("run emits a report whose totals recompute from their own columns") {
    testsup::TempDir tmp("clirun");
    REQUIRE(run_cli(tmp.path(), "gen --n 500 --f 10 --seed 5 --out d.shfd").exit_code == 0);
    const auto r = run_cli(tmp.path(),
                           "run --data d.shfd --strategy bmf --batches 6 --device hdd "
                           "--max-epochs 4 --skip-fstar --seed 2 --out r.csv");
    REQUIRE(r.exit_code == 0);
    const auto row = summary_row(slurp(tmp.file("r.csv")));
    REQUIRE(row.size() == 15);
    CHECK(row[0] == "bmf");
    CHECK(row[1] == "hdd");
    const double t_pre_sim = std::strtod(row[5].c_str(), nullptr);
    const double t_load_sim = std::strtod(row[7].c_str(), nullptr);
    const double t_comp_wall = std::strtod(row[9].c_str(), nullptr);
    const double t_ov_sim = std::strtod(row[10].c_str(), nullptr);
    const double total_sim = std::strtod(row[12].c_str(), nullptr);
    const double epochs = std::strtod(row[3].c_str(), nullptr);
    CHECK(total_sim == t_pre_sim + (t_load_sim + t_comp_wall - t_ov_sim) * epochs);
}

TEST_CASE("reports are deterministic outside the wall-clock columns") {
    testsup::TempDir tmp("clidet");
    REQUIRE(run_cli(tmp.path(), "gen --n 600 --f 12 --seed 9 --out d.shfd").exit_code == 0);
    const std::string cmd = "run --data d.shfd --strategy lirs-instance --batches 8 "
                            "--device optane --max-epochs 5 --skip-fstar --seed 4 --out ";
    REQUIRE(run_cli(tmp.path(), cmd + "a.csv").exit_code == 0);
    REQUIRE(run_cli(tmp.path(), cmd + "b.csv").exit_code == 0);

    const auto a = lines_of(slurp(tmp.file("a.csv")));
    const auto b = lines_of(slurp(tmp.file("b.csv")));
    REQUIRE(a.size() == b.size());
    // Epoch rows: all columns except t_load_wall (4) and t_comp_wall (5).
    // Summary: only the purely simulated / structural columns.
    const std::vector<std::size_t> epoch_cols{0, 1, 2, 3, 6, 7, 8, 9};
    const std::vector<std::size_t> summary_cols{0, 1, 2, 3, 4, 5, 7, 14};
    bool in_summary = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == shufflebench::kSummaryCsvHeader) {
            in_summary = true;
            CHECK(b[i] == a[i]);
            continue;
        }
        const auto ca = split_csv(a[i]);
        const auto cb = split_csv(b[i]);
        REQUIRE(ca.size() == cb.size());
        if (i == 0)
            continue; // epoch header
        for (std::size_t col : in_summary ? summary_cols : epoch_cols)
            CHECK(ca[col] == cb[col]);
    }
}

TEST_CASE("diverging runs exit with code 4") {
    testsup::TempDir tmp("clidiv");
    REQUIRE(run_cli(tmp.path(), "gen --n 300 --f 8 --seed 1 --out d.shfd").exit_code == 0);
    const auto r = run_cli(tmp.path(),
                           "run --data d.shfd --strategy none --batches 3 --lr 1e8 "
                           "--max-epochs 10 --skip-fstar --out r.csv");
    CHECK(r.exit_code == 4);
    CHECK(r.err.find("diverged") != std::string::npos);
}

TEST_CASE("sweep normalizes against the baseline and isolates failed cells") {
    testsup::TempDir tmp("clisweep");
    REQUIRE(run_cli(tmp.path(), "gen --n 400 --f 10 --seed 8 --out d.shfd").exit_code == 0);
    const auto r = run_cli(tmp.path(),
                           "sweep --data d.shfd --strategies bmf,lirs-instance "
                           "--devices hdd,missing.prof --seeds 1,2 --baseline bmf:hdd "
                           "--batches 5 --max-epochs 3 --skip-fstar --out sw.csv");
    REQUIRE(r.exit_code == 0);
    const auto lines = lines_of(slurp(tmp.file("sw.csv")));
    REQUIRE(lines.size() == 9); // header + 2x2x2 cells
    int ok_cells = 0, fail_cells = 0, baseline_cells = 0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto cells = split_csv(lines[i]);
        REQUIRE(cells.size() >= 4);
        if (cells[1] == "missing.prof") {
            CHECK(cells[3] == "FAIL");
            CHECK(cells.back() == "FAIL");
            ++fail_cells;
        } else {
            CHECK(cells[3] == "ok");
            ++ok_cells;
            if (cells[0] == "bmf" && cells[1] == "hdd") {
                CHECK(std::strtod(cells.back().c_str(), nullptr) == 1.0);
                ++baseline_cells;
            }
        }
    }
    CHECK(ok_cells == 4);
    CHECK(fail_cells == 4);
    CHECK(baseline_cells == 2);
}

TEST_CASE("usage errors exit with code 2") {
    testsup::TempDir tmp("cliusage");
    CHECK(run_cli(tmp.path(), "run --strategy nope").exit_code == 2);   // missing --data
    CHECK(run_cli(tmp.path(), "frobnicate").exit_code == 2);            // unknown command
    REQUIRE(run_cli(tmp.path(), "gen --n 10 --f 4 --seed 1 --out d.shfd").exit_code == 0);
    CHECK(run_cli(tmp.path(), "run --data d.shfd --strategy warp --out r.csv").exit_code == 2);
}

TEST_CASE("corrupt input datasets exit with code 3") {
    testsup::TempDir tmp("clicorrupt");
    {
        std::ofstream out(tmp.file("junk.shfd"), std::ios::binary);
        out << "this is definitely not a dataset file, not even close....";
    }
    const auto r = run_cli(tmp.path(),
                           "run --data junk.shfd --strategy none --skip-fstar --out r.csv");
    CHECK(r.exit_code == 3);
    CHECK(run_cli(tmp.path(), "index --data junk.shfd").exit_code == 3);
}

TEST_CASE("relative paths resolve against --workdir") {
    testsup::TempDir tmp("cliworkdir");
    std::filesystem::create_directories(tmp.file("nested"));
    const auto gen = run_cli(tmp.path(), "--workdir nested gen --n 50 --f 4 --seed 2 "
                                         "--out d.shfd");
    REQUIRE(gen.exit_code == 0);
    CHECK(std::filesystem::exists(tmp.file("nested") / "d.shfd"));
    const auto run = run_cli(tmp.path(), "--workdir nested run --data d.shfd "
                                         "--strategy none --max-epochs 1 --skip-fstar "
                                         "--out r.csv");
    REQUIRE(run.exit_code == 0);
    CHECK(std::filesystem::exists(tmp.file("nested") / "r.csv"));
}

TEST_CASE("parallel sweeps produce the same simulated columns as sequential ones") {
    testsup::TempDir tmp("clipar");
    REQUIRE(run_cli(tmp.path(), "gen --n 300 --f 8 --seed 6 --out d.shfd").exit_code == 0);
    const std::string common = "sweep --data d.shfd --strategies none,lirs-instance "
                               "--devices hdd,optane --seeds 3 --baseline none:hdd "
                               "--batches 4 --max-epochs 3 --skip-fstar ";
    REQUIRE(run_cli(tmp.path(), common + "--out seq.csv").exit_code == 0);
    REQUIRE(run_cli(tmp.path(), common + "--parallel --out par.csv").exit_code == 0);
    const auto seq = lines_of(slurp(tmp.file("seq.csv")));
    const auto par = lines_of(slurp(tmp.file("par.csv")));
    REQUIRE(seq.size() == par.size());
    // Columns strategy,device,seed,status,epochs,epochs_to_target,t_preprocess_sim,
    // t_load_sim are load-model figures and must agree; t_comp_wall (8) is blanked
    // in parallel mode.
    for (std::size_t i = 1; i < seq.size(); ++i) {
        const auto a = split_csv(seq[i]);
        const auto b = split_csv(par[i]);
        for (std::size_t col : {0u, 1u, 2u, 3u, 4u, 5u, 6u, 7u})
            CHECK(a[col] == b[col]);
        CHECK(b[8].empty());
    }
}

TEST_CASE("page-aware shuffling halves the random page reads of instance-level runs") {
    testsup::TempDir tmp("clihalf");
    // 511 features -> 2048-byte records, two per simulated page.
    REQUIRE(run_cli(tmp.path(), "gen --n 4000 --f 511 --margin 0.05 --seed 3 --out h.shfd")
                .exit_code == 0);
    const std::string common = "--batches 20 --max-epochs 1 --cache-pages 8 --seed 5 "
                               "--skip-fstar --device optane --out ";
    REQUIRE(run_cli(tmp.path(), "run --data h.shfd --strategy lirs-page " + common +
                                    "page.csv")
                .exit_code == 0);
    REQUIRE(run_cli(tmp.path(), "run --data h.shfd --strategy lirs-instance " + common +
                                    "inst.csv")
                .exit_code == 0);
    auto epoch_pages = [&](const std::string& name) {
        const auto lines = lines_of(slurp(tmp.path() / name));
        const auto cells = split_csv(lines[1]); // single epoch row
        return std::strtod(cells[6].c_str(), nullptr) +
               std::strtod(cells[7].c_str(), nullptr);
    };
    const double ratio = epoch_pages("page.csv") / epoch_pages("inst.csv");
    CHECK(ratio > 0.45);
    CHECK(ratio < 0.55);
}

} // TEST_SUITE
