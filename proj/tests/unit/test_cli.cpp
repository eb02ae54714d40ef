#include "cfqp/experiment.hpp"
#include "cfqp/io.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <sys/wait.h>

using namespace cfqp;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kScratch = fs::temp_directory_path() / "cfqp_cli_tests";

json tiny_config() {
    return {{"dataset", {{"generator", "oscillator"}, {"noise_mode", "additive"}, {"n_train", 60}, {"n_val", 20},
                         {"n_test", 20}}},
            {"cfqp", {{"k", 3}, {"epochs0", 10}, {"epochs1", 10}, {"delta", 5}}},
            {"k_range", {1, 2}},
            {"folds", 2}};
}

fs::path write_config(const std::string& name, const json& j) {
    fs::create_directories(kScratch);
    const auto path = kScratch / name;
    io::write_text(path, j.dump(2));
    return path;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(CFQP_CLI_PATH) + " " + args + " > " + (kScratch / "stdout.txt").string() +
                            " 2> " + (kScratch / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

}  // namespace

TEST_CASE("run writes byte-identical results across invocations") {
    fs::remove_all(kScratch);
    const auto cfg = write_config("tiny.json", tiny_config());
    REQUIRE(run_cli("run --config " + cfg.string() + " --out " + (kScratch / "a").string()) == 0);
    REQUIRE(run_cli("run --config " + cfg.string() + " --out " + (kScratch / "b").string()) == 0);
    const auto a = io::read_text(kScratch / "a" / "results.csv");
    CHECK(a == io::read_text(kScratch / "b" / "results.csv"));
    CHECK(first_line(a) == exp::kCsvHeader);
    CHECK(fs::exists(kScratch / "a" / "results.json"));

    // One row per method and metric; wall time stays zero without record_timing.
    std::istringstream rows(a);
    std::string line;
    std::getline(rows, line);
    int count = 0;
    while (std::getline(rows, line)) {
        ++count;
        CHECK(line.substr(line.rfind(',') + 1) == "0");
    }
    CHECK(count == 3);
}

TEST_CASE("a single fold reports zero spread") {
    auto j = tiny_config();
    j["folds"] = 1;
    j["methods"] = {"deep_ite"};
    const auto cfg = write_config("one_fold.json", j);
    REQUIRE(run_cli("run --config " + cfg.string() + " --out " + (kScratch / "one").string()) == 0);
    const auto csv = io::read_text(kScratch / "one" / "results.csv");
    std::istringstream rows(csv);
    std::string header, row;
    std::getline(rows, header);
    std::getline(rows, row);
    std::vector<std::string> cells;
    std::stringstream ss(row);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    REQUIRE(cells.size() == 10);
    CHECK(cells[2] == "deep_ite");
    CHECK(std::stod(cells[5]) == 0.0);
    CHECK(cells[6] == "1");
}

TEST_CASE("predict answers a query against a saved model") {
    auto j = tiny_config();
    j["folds"] = 1;
    j["methods"] = {"cfqp"};
    const auto cfg = write_config("predict.json", j);
    REQUIRE(run_cli("run --config " + cfg.string() + " --out " + (kScratch / "p").string()) == 0);
    json q = {{"x", std::vector<double>(40, 0.1)}, {"t", 0.5}, {"y", std::vector<double>(42, 0.0)}, {"t_prime", 0.7}};
    const auto input = write_config("query.json", q);
    REQUIRE(run_cli("predict --model " + (kScratch / "p" / "fold0" / "cfqp_model").string() + " --input " +
                    input.string()) == 0);
    const auto answer = json::parse(io::read_text(kScratch / "stdout.txt"));
    CHECK(answer["y_prime"].size() == 42);
    CHECK(answer["cluster"].get<int>() >= 0);
}

TEST_CASE("configuration problems exit with code 2") {
    fs::create_directories(kScratch);
    CHECK(run_cli("run --config " + (kScratch / "missing.json").string()) == 2);
    CHECK(run_cli("run --folds 0") == 2);
    CHECK(run_cli("no-such-command") == 2);

    auto bad = tiny_config();
    bad["cfqp"]["k"] = 0;
    CHECK(run_cli("run --config " + write_config("bad_k.json", bad).string()) == 2);

    const auto broken = kScratch / "broken.json";
    io::write_text(broken, "{\"folds\": ");
    CHECK(run_cli("run --config " + broken.string()) == 2);

    // The correlation sweep only exists for the image benchmark.
    CHECK(run_cli("sweep-rho --config " + write_config("rho.json", tiny_config()).string()) == 2);
}

TEST_CASE("runtime failures exit with code 3") {
    const auto q = write_config("q.json", json{{"x", {0.0}}, {"t", 0.5}, {"y", {0.0}}, {"t_prime", 0.7}});
    CHECK(run_cli("predict --model " + (kScratch / "no_model_here").string() + " --input " + q.string()) == 3);
}

TEST_CASE("oracle-check writes a report with the documented keys") {
    auto j = tiny_config();
    j["dataset"]["sigma"] = 0.1;
    j["oracle"] = {{"n_samples", 300}, {"n_draws", 40}, {"bootstrap", 200}, {"resamples", 30}};
    const auto cfg = write_config("oracle.json", j);
    const int code = run_cli("oracle-check --config " + cfg.string() + " --out " + (kScratch / "o").string());
    CHECK((code == 0 || code == 3));
    const auto report = json::parse(io::read_text(kScratch / "o" / "oracle_report.json"));
    for (const char* key : {"x", "t", "t_prime", "n", "e_w1", "delta_hat", "ci_low", "ci_high", "pass"})
        CHECK(report.contains(key));
    CHECK(report["pass"].get<bool>() == (code == 0));
    CHECK(report["n"].get<int>() == 300);
}

TEST_CASE("config hashes ignore the output location") {
    auto a = exp::config_from_json(tiny_config());
    auto b = a;
    b.out_dir = "elsewhere";
    CHECK(exp::config_hash(a) == exp::config_hash(b));
    b.cfqp.k = 4;
    CHECK(exp::config_hash(a) != exp::config_hash(b));
    CHECK(exp::config_hash(a).size() == 40);
}

TEST_CASE("fold statistics use the sample standard deviation") {
    const auto [m, s] = exp::mean_std({1.0, 2.0, 3.0});
    CHECK(m == doctest::Approx(2.0));
    CHECK(s == doctest::Approx(1.0));
    CHECK(exp::mean_std({4.0}).second == 0.0);
}
