#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>

#include "mvdfl/csv.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

const char* const kSmallConfig = R"({
  "name": "small",
  "data": {"source": "synthetic", "n_assets": 4, "n_rows": 700, "seed": 3},
  "delta_in": 10,
  "delta_out": 10,
  "strategies": ["EW", "Historical", "LW-CC", "PFL", "DFL"],
  "training": {"max_epochs": 2, "patience": 1, "hidden": 8, "learning_rates": [1e-4]},
  "seeds": [0, 1],
  "analysis": {"strategy": "DFL", "seed": 1, "rank_k": [1, 2]},
  "theory": {"n_instances": 3, "n_assets": [4, 5]}
})";

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string("\"") + MVDFL_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const fs::path& dir, const std::string& name, const std::string& text) {
    std::ofstream(dir / name) << text;
    return dir / name;
}

std::size_t data_rows(const fs::path& csv) { return mvdfl::read_csv(csv).rows.size(); }

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("argument and configuration errors exit with code 2") {
        const auto dir = testutil::scratch_dir("cli_errors");
        const auto log = dir / "log.txt";
        CHECK(run_cli("", log) == 2);
        CHECK(run_cli("frobnicate", log) == 2);
        CHECK(run_cli("train --config " + (dir / "absent.json").string(), log) == 2);

        std::string bad = kSmallConfig;
        bad.replace(bad.find("\"patience\": 1"), 13, "\"patience\": 5");
        CHECK(run_cli("train --config " + write_config(dir, "bad.json", bad).string() + " --out " + dir.string(), log) == 2);
        CHECK(testutil::slurp(log).find("patience") != std::string::npos);

        const std::string unknown = std::string(kSmallConfig).replace(1, 0, "\"bogus\": 1,");
        CHECK(run_cli("train --config " + write_config(dir, "unknown.json", unknown).string(), log) == 2);
        CHECK(testutil::slurp(log).find("bogus") != std::string::npos);
        CHECK(run_cli("train --config " + write_config(dir, "syntax.json", "{").string(), log) == 2);

        const auto cfg = write_config(dir, "ok.json", kSmallConfig);
        CHECK(run_cli("analyze --config " + cfg.string() + " --out " + (dir / "fresh").string(), log) == 2);
    }

    TEST_CASE("verify-theory writes one row per instance") {
        const auto dir = testutil::scratch_dir("cli_theory");
        const auto cfg = write_config(dir, "c.json", kSmallConfig);
        REQUIRE(run_cli("verify-theory --config " + cfg.string() + " --out " + dir.string(), dir / "log.txt") == 0);
        CHECK(data_rows(dir / "small" / "reports" / "theory_report.csv") == 6);
    }

    TEST_CASE("synth-data writes the configured panel") {
        const auto dir = testutil::scratch_dir("cli_synth");
        const auto cfg = write_config(dir, "c.json", kSmallConfig);
        REQUIRE(run_cli("synth-data --config " + cfg.string() + " --out " + dir.string(), dir / "log.txt") == 0);
        const auto table = mvdfl::read_csv(dir / "small" / "reports" / "returns.csv");
        CHECK(table.rows.size() == 700);
        CHECK(table.header.size() == 5);
    }

    TEST_CASE("train, backtest and analyze end to end; reruns are byte-identical") {
        const auto dir = testutil::scratch_dir("cli_pipeline");
        const auto cfg = write_config(dir, "c.json", kSmallConfig);
        std::string reports[2];
        for (int run = 0; run < 2; ++run) {
            const fs::path out = dir / ("run" + std::to_string(run));
            const std::string common = " --config " + cfg.string() + " --out " + out.string();
            REQUIRE(run_cli("train" + common + (run == 1 ? " --threads 2" : ""), dir / "train.txt") == 0);
            REQUIRE(run_cli("backtest" + common, dir / "backtest.txt") == 0);
            const fs::path rep = out / "small" / "reports";
            CHECK(fs::exists(out / "small" / "checkpoints" / "DFL_seed1.ckpt"));
            CHECK(fs::exists(out / "small" / "configs" / "experiment.json"));
            reports[run] = testutil::slurp(rep / "vol_table.csv") + testutil::slurp(rep / "weights_history.csv") +
                           testutil::slurp(rep / "train_DFL_seed0.csv");
            const auto vol = mvdfl::read_csv(rep / "vol_table.csv");
            CHECK(vol.rows.size() == 5);
            for (const auto& row : vol.rows) CHECK(row[vol.column("status")] == "ok");

            REQUIRE(run_cli("analyze" + common, dir / "analyze.txt") == 0);
            for (const char* f : {"precision_reordered.csv", "permutation.csv", "attribution_regions.csv",
                                  "rank_precision.csv", "weight_envelope.csv"})
                CHECK(fs::exists(rep / f));
            CHECK(data_rows(rep / "permutation.csv") == 4);
            // Every strategy instance (1 + 1 + 1 + 2 + 2) times two k values.
            CHECK(data_rows(rep / "rank_precision.csv") == 14);
        }
        CHECK(reports[0] == reports[1]);
    }

    TEST_CASE("a missing checkpoint fails its cell and exits with code 3") {
        const auto dir = testutil::scratch_dir("cli_missing");
        const auto cfg = write_config(dir, "c.json", kSmallConfig);
        const std::string common = " --config " + cfg.string() + " --out " + dir.string();
        REQUIRE(run_cli("train" + common, dir / "train.txt") == 0);
        fs::remove(dir / "small" / "checkpoints" / "PFL_seed1.ckpt");
        CHECK(run_cli("backtest" + common, dir / "backtest.txt") == 3);
        const auto vol = mvdfl::read_csv(dir / "small" / "reports" / "vol_table.csv");
        bool saw_failed = false;
        for (const auto& row : vol.rows) {
            if (row[0] == "PFL") {
                saw_failed = row[vol.column("status")] == "FAILED";
            } else {
                CHECK(row[vol.column("status")] == "ok");
            }
        }
        CHECK(saw_failed);
    }
}
