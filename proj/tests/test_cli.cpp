#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

// Binary location injected by the build.
const std::string kCli = HIERSEG_CLI_PATH;

int run(const std::string& args) {
    std::string cmd = kCli + " " + args + " > /dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("hierseg_cli_" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

} // namespace

TEST_CASE("help exits cleanly") {
    CHECK(run("--help") == 0);
    CHECK(run("train --help") == 0);
}

TEST_CASE("missing dataset path: nonzero exit, no run directory") {
    TempDir tmp("missing");
    std::string run_dir = tmp.str() + "/run";
    CHECK(run("train --data " + tmp.str() + "/nope --run " + run_dir) == 3);
    CHECK_FALSE(fs::exists(run_dir + "/fold_0"));
}

TEST_CASE("config schema violations exit with code 2 before compute") {
    TempDir tmp("cfg");
    std::ofstream(tmp.path / "bad.json") << R"({"learnign_rate": 0.02})";
    CHECK(run("train --data " + tmp.str() + " --run " + tmp.str() + "/r --config " +
              tmp.str() + "/bad.json") == 2);
    CHECK(run("train --data x --run y --variant flat") == 2);
    CHECK(run("eval --data x --checkpoint y --split nope") == 2);
}

TEST_CASE("full pipeline: synth, train, eval, overlay") {
    TempDir tmp("pipeline");
    std::string data = tmp.str() + "/data";
    std::string run_dir = tmp.str() + "/run";

    REQUIRE(run("synth --out " + data + " --images 8 --size 16 --children 2 --folds 2") == 0);
    REQUIRE(fs::exists(data + "/folds.csv"));

    REQUIRE(run("train --data " + data + " --run " + run_dir +
                " --folds 1 --epochs 1 --batch-size 2 --max-steps 3 --no-augment") == 0);
    std::string ckpt = run_dir + "/fold_0/best.ckpt";
    REQUIRE(fs::exists(ckpt));
    CHECK(fs::exists(run_dir + "/validation_report.csv"));

    CHECK(run("eval --data " + data + " --checkpoint " + ckpt + " --split val --fold 0 --out " +
              tmp.str() + "/eval") == 0);
    CHECK(fs::exists(tmp.str() + "/eval/val_report.csv"));
    CHECK(run("eval --data " + data + " --checkpoint " + ckpt + " --split test --out " +
              tmp.str() + "/eval") == 0);
    CHECK(fs::exists(tmp.str() + "/eval/test_report.csv"));

    CHECK(run("overlay --data " + data + " --checkpoint " + ckpt + " --out " + tmp.str() +
              "/overlays --ids img000") == 0);
    CHECK(fs::exists(tmp.str() + "/overlays/img000_overlay.png"));
}

TEST_CASE("eval refuses a checkpoint trained on another hierarchy") {
    TempDir tmp("mismatch");
    std::string d2 = tmp.str() + "/d2", d3 = tmp.str() + "/d3";
    REQUIRE(run("synth --out " + d2 + " --images 6 --size 16 --children 2 --folds 2") == 0);
    REQUIRE(run("synth --out " + d3 + " --images 6 --size 16 --children 3 --folds 2") == 0);
    REQUIRE(run("train --data " + d2 + " --run " + tmp.str() +
                "/run --folds 1 --epochs 1 --batch-size 2 --max-steps 2 --no-augment") == 0);
    CHECK(run("eval --data " + d3 + " --checkpoint " + tmp.str() +
              "/run/fold_0/best.ckpt --out " + tmp.str() + "/eval") == 3);
}
