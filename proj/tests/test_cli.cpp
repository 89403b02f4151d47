#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;
};

const fs::path& work_dir() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "dualdice_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

/// Runs the CLI through the shell; `prefix` can set environment variables.
Outcome run(const std::string& args, const std::string& prefix = "") {
    const fs::path out = work_dir() / "stdout.txt";
    const fs::path err = work_dir() / "stderr.txt";
    const std::string command = prefix + " \"" DUALDICE_CLI_PATH "\" " + args + " > \"" + out.string() + "\" 2> \"" +
                                err.string() + "\"";
    const int status = std::system(command.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = slurp(out);
    o.err = slurp(err);
    return o;
}

std::string path(const std::string& name) { return (work_dir() / name).string(); }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("version and help") {
    const Outcome v = run("--version");
    CHECK(v.code == 0);
    CHECK(v.out == "dualdice 0.1.0\n");
    for (const char* sub : {"gen-data", "solve-exact", "train", "evaluate", "sweep", "plot"}) {
        const Outcome h = run(std::string(sub) + " --help");
        CHECK(h.code == 0);
        CHECK(h.out.find("--") != std::string::npos);
    }
    CHECK(run("--help").out.find("dice-dataset") != std::string::npos);
}

TEST_CASE("usage errors exit with 1") {
    CHECK(run("").code == 1);
    CHECK(run("frobnicate").code == 1);
    CHECK(run("gen-data --out x --bogus").code == 1);
    CHECK(run("gen-data --out x --trajectories many").code == 1);
    const Outcome both = run("train --data a.txt --trajectories 5");
    CHECK(both.code == 1);
    CHECK_FALSE(both.err.empty());
    CHECK(run("evaluate --model m.txt --results r.jsonl").code == 1);
}

TEST_CASE("runtime failures exit with 2") {
    std::ofstream(path("broken_model.txt")) << "dice-model v1 tabular 2 2\n1 2\n";
    std::ofstream(path("tiny_data.txt")) << "dice-dataset v1 2 2 0.9\nT 0 0 1 1\nI 0\n";
    const Outcome o = run("evaluate --model " + path("broken_model.txt") + " --data " + path("tiny_data.txt"));
    CHECK(o.code == 2);
    CHECK(o.err.find("error:") != std::string::npos);
    CHECK(run("solve-exact --env grid --size 1 --trajectories 5 --horizon 5").code != 0);
}

TEST_CASE("generate, train, evaluate") {
    const std::string data = path("grid.txt");
    const Outcome gen = run("gen-data --env grid --size 4 --behavior-mix 0.7 --trajectories 20 --horizon 30 --seed 7 --out " + data);
    REQUIRE(gen.code == 0);
    CHECK(fs::exists(data));

    SUBCASE("datasets are reproducible and follow DICE_SEED") {
        const std::string again = path("grid_again.txt");
        const std::string from_env = path("grid_env.txt");
        CHECK(run("gen-data --env grid --size 4 --behavior-mix 0.7 --trajectories 20 --horizon 30 --seed 7 --out " + again).code == 0);
        CHECK(run("gen-data --env grid --size 4 --behavior-mix 0.7 --trajectories 20 --horizon 30 --out " + from_env,
                  "DICE_SEED=7").code == 0);
        CHECK(slurp(again) == slurp(data));
        CHECK(slurp(from_env) == slurp(data));
    }

    SUBCASE("train prints the estimate and the oracle error") {
        const std::string model = path("model.txt");
        const std::string args = "train --env grid --size 4 --data " + data +
                                 " --penalty-p 1.5 --steps 300 --batch-size 64 --lr-nu 0.01 --lr-zeta 0.01"
                                 " --eval-every 100 --seed 3 --oracle --model-out " + model;
        const Outcome t = run(args);
        REQUIRE(t.code == 0);
        CHECK(t.out.find("step 300") != std::string::npos);
        CHECK(t.out.find("estimate") != std::string::npos);
        CHECK(t.out.find("truth") != std::string::npos);
        CHECK(t.out.find("abs_error") != std::string::npos);
        CHECK(run(args).out == t.out);

        const Outcome e = run("evaluate --env grid --size 4 --model " + model + " --data " + data + " --oracle --json");
        REQUIRE(e.code == 0);
        const auto json = nlohmann::json::parse(e.out);
        CHECK(json.contains("estimate"));
        CHECK(json["abs_error"].get<double>() >= 0.0);
    }

    SUBCASE("mlp training on the grid") {
        const Outcome t = run("train --env grid --size 4 --data " + data +
                              " --approx mlp --hidden 8 --steps 20 --batch-size 16 --seed 1");
        CHECK(t.code == 0);
    }
}

TEST_CASE("exact solves side by side") {
    const Outcome o = run("solve-exact --env random --states 6 --actions 2 --trajectories 30 --horizon 20 --seed 0 --oracle");
    REQUIRE(o.code == 0);
    CHECK(o.out.find("dualdice-exact ") != std::string::npos);
    CHECK(o.out.find("td-exact") != std::string::npos);
    CHECK(o.out.find("truth") != std::string::npos);
}

TEST_CASE("sweep and plot") {
    const std::string config = path("small.cfg");
    std::ofstream(config) << "[experiment]\nname = small\nenvironment = random\nrandom_states = 5\n"
                             "random_actions = 2\ngamma = 0.9\ntrajectories = 10 20\nhorizons = 10\nseeds = 0-1\n"
                             "[estimator.exact]\ntype = dualdice-exact\n[estimator.td]\ntype = td-exact\n";
    const std::string out = path("sweep");
    const Outcome s = run("sweep --config " + config + " --out " + out + " --jobs 2 --quiet --json");
    REQUIRE(s.code == 0);
    CHECK(fs::exists(fs::path(out) / "results.jsonl"));
    CHECK(fs::exists(fs::path(out) / "summary.csv"));
    CHECK(fs::exists(fs::path(out) / "plots" / "trajectories_10.csv"));
    const auto summary = nlohmann::json::parse(s.out);
    CHECK_FALSE(summary.is_null());

    const Outcome again = run("sweep --config " + config + " --out " + path("sweep2") + " --jobs 1 --quiet");
    REQUIRE(again.code == 0);
    CHECK(slurp(fs::path(out) / "results.jsonl") == slurp(fs::path(path("sweep2")) / "results.jsonl"));

    const Outcome ev = run("evaluate --results " + (fs::path(out) / "results.jsonl").string() + " --config " + config);
    CHECK(ev.code == 0);
    CHECK(ev.out.find("exact") != std::string::npos);

    const Outcome p = run("plot --results " + (fs::path(out) / "results.jsonl").string() + " --out " + path("plots") +
                          " --panel-by horizon");
    CHECK(p.code == 0);
    CHECK(fs::exists(fs::path(path("plots")) / "horizon_10.svg"));
    CHECK(run("sweep --config " + path("missing.cfg") + " --out " + out).code == 1);
}

}  // TEST_SUITE
