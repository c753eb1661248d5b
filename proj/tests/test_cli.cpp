#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "splitfix/io.hpp"

namespace fs = std::filesystem;
using splitfix::Json;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    int code = splitfix::cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("splitfix_cli_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string write_file(const fs::path& p, const std::string& text) {
    std::ofstream(p) << text;
    return p.string();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const std::string kData = SPLITFIX_DATA_DIR;

}  // namespace

TEST_CASE("solve the lasso fixture against the committed reference") {
    auto dir = scratch("lasso");
    auto r = cli({"solve", kData + "/lasso.json", "--out", dir.string()});
    REQUIRE(r.code == 0);
    Json sol = splitfix::load_json_file((dir / "solution.json").string());
    Json ref = splitfix::load_json_file(kData + "/lasso_reference.json");
    REQUIRE(sol["x"].size() == ref["x"].size());
    for (std::size_t i = 0; i < ref["x"].size(); ++i)
        CHECK(std::abs(sol["x"][i].get<double>() - ref["x"][i].get<double>()) <= 1e-6);
    CHECK(std::abs(sol["objective"].get<double>() - ref["objective"].get<double>()) <= 1e-9);
    Json sum = splitfix::load_json_file((dir / "summary.json").string());
    CHECK(sum["status"] == "Converged");
    CHECK(sum.contains("iterations"));
    CHECK(sum.contains("final_residual"));
    CHECK(sum.contains("seed"));
    std::string csv = slurp(dir / "trace.csv");
    CHECK(csv.rfind("iter,residual,objective,wall_ms\n", 0) == 0);
}

TEST_CASE("exit codes") {
    auto dir = scratch("codes");
    SUBCASE("malformed JSON gives 2 with a position") {
        auto r = cli({"solve", write_file(dir / "bad.json", "{\n  \"problem\": \"lasso\",\n  \"H\": [1, \n")});
        CHECK(r.code == 2);
        CHECK(r.err.find("bad.json:") != std::string::npos);
    }
    SUBCASE("missing field names the field") {
        auto r = cli({"solve", write_file(dir / "m.json", R"({"problem": "lasso", "H": [[1]], "o": [1]})")});
        CHECK(r.code == 2);
        CHECK(r.err.find("alpha") != std::string::npos);
    }
    SUBCASE("unknown discriminator") {
        auto r = cli({"solve", write_file(dir / "u.json", R"({"problem": "sudoku"})")});
        CHECK(r.code == 2);
    }
    SUBCASE("step outside the band gives 3 naming the rule") {
        auto r = cli({"solve", kData + "/lasso.json", "--gamma", "50"});
        CHECK(r.code == 3);
        CHECK(r.err.find("forward-backward step band") != std::string::npos);
    }
    SUBCASE("negative relaxation gives 3") { CHECK(cli({"solve", kData + "/lasso.json", "--lambda", "-1"}).code == 3); }
    SUBCASE("iteration cap is not an error") {
        auto r = cli({"solve", kData + "/lasso.json", "--max-iter", "3"});
        CHECK(r.code == 0);
        CHECK(r.out.find("MaxIterations") != std::string::npos);
    }
    SUBCASE("usage errors give 2") {
        CHECK(cli({}).code == 2);
        CHECK(cli({"solve"}).code == 2);
        CHECK(cli({"solve", kData + "/lasso.json", "--tol", "abc"}).code == 2);
        CHECK(cli({"solve", kData + "/lasso.json", "--tol", "-1"}).code == 2);
        CHECK(cli({"--help"}).code == 0);
    }
}

TEST_CASE("identical configurations give byte-identical traces") {
    auto a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
    REQUIRE(cli({"solve", kData + "/lasso.json", "--seed", "7", "--out", a.string()}).code == 0);
    REQUIRE(cli({"solve", kData + "/lasso.json", "--seed", "7", "--out", b.string()}).code == 0);
    CHECK(slurp(a / "trace.csv") == slurp(b / "trace.csv"));
    CHECK(slurp(a / "solution.json") == slurp(b / "solution.json"));
    setenv("SPLITFIX_THREADS", "3", 1);
    REQUIRE(cli({"solve", kData + "/lasso.json", "--seed", "7", "--out", c.string()}).code == 0);
    CHECK(slurp(a / "trace.csv") == slurp(c / "trace.csv"));
    setenv("SPLITFIX_THREADS", "many", 1);
    CHECK(cli({"solve", kData + "/lasso.json"}).code == 2);
    setenv("SPLITFIX_THREADS", "0", 1);
    CHECK(cli({"solve", kData + "/lasso.json"}).code == 0);
    unsetenv("SPLITFIX_THREADS");
}

TEST_CASE("every problem kind loads and solves") {
    auto dir = scratch("kinds");
    const std::vector<std::pair<std::string, std::string>> problems = {
        {"feasibility", R"({"problem":"feasibility","sets":[{"type":"hyperplane","a":[1,1],"b":2},
                           {"type":"hyperplane","a":[1,-1],"b":0}],"x0":[5,-7]})"},
        {"logistic", R"({"problem":"logistic","A":[[1,0.5],[-0.3,1],[0.2,-1]],"eta":[1,0,1],"alpha":0.1,
                        "stop":{"tol":1e-10}})"},
        {"glasso", R"({"problem":"glasso","O":[[2,0],[0,4]],"chi":0})"},
        {"rpca", R"({"problem":"rpca","O":[[1,2],[2,4]],"chi":1})"},
        {"completion", R"({"problem":"completion","O":[[1,0],[2,4]],"mask":[[1,0],[1,1]],"chi":0.1})"},
        {"cycles", R"({"problem":"cycles","sets":[{"type":"interval","lo":0,"hi":1},{"type":"interval","lo":2,"hi":3}]})"},
        {"nash", R"({"problem":"nash","game":"bilinear","c1":1,"c2":1,"M":[[1]],"x0":[1,-2]})"},
        {"nash", R"({"problem":"nash","game":"chain","L":[[[1]],[[1]]],"o":[[0],[0]],
                     "psi":[{"type":"sq_norm_half"},{"type":"sq_norm_half"}]})"},
        {"pnp", R"({"problem":"pnp","dim":3,"method":"dr","denoiser":{"type":"prox","function":{"type":"l1","weight":0.3}},
                   "f":{"type":"sq_distance_half","o":[1,-1,0.2]}})"},
        {"mismatch", R"({"problem":"mismatch","H":[[2]],"K":[[1.5]],"kappa":1,"y":[2],"stop":{"tol":1e-14}})"},
        {"nonlinear_obs", R"({"problem":"nonlinear_obs","dim":4,"observations":[{"type":"soft_threshold","threshold":1,
                             "r":[1,0,2,0]}],"stop":{"tol":1e-12}})"},
    };
    int k = 0;
    for (const auto& [kind, text] : problems) {
        INFO(kind);
        auto path = write_file(dir / (kind + std::to_string(k++) + ".json"), text);
        auto r = cli({"solve", path});
        CHECK(r.code == 0);
        CHECK(r.out.find("\"Converged\"") != std::string::npos);
    }
    auto ms = splitfix::solve_problem(Json::parse(problems[9].second));
    CHECK(ms.solution["x"][0].get<double>() == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(ms.solution["x_hat"][0].get<double>() == doctest::Approx(0.8).epsilon(1e-12));
    auto gl = splitfix::solve_problem(Json::parse(problems[2].second));
    CHECK(gl.solution["X"][1][1].get<double>() == doctest::Approx(0.25).epsilon(1e-9));

    // an override a problem does not use is reported, not silently applied
    auto ign = cli({"solve", dir.string() + "/cycles5.json", "--gamma", "0.5"});
    CHECK(ign.code == 0);
    CHECK(ign.out.find("override-ignored") != std::string::npos);
}

TEST_CASE("demos") {
    for (const auto& name : splitfix::cli::demo_names()) {
        INFO(name);
        auto t0 = std::chrono::steady_clock::now();
        auto r = cli({"demo", name});
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        CHECK(r.code == 0);
        CHECK(secs < 60.0);
    }
    CHECK(cli({"demo", "cycles"}).out.find("cycle (1, 2)") != std::string::npos);
    auto m = cli({"demo", "mismatch-scalar"});
    CHECK(m.out.find("x_hat = 0.8, x_tilde = 0.75") != std::string::npos);
    auto p = cli({"demo", "pocs-three-sets"});
    CHECK(p.out.find("cycle point 3") != std::string::npos);
    auto bad = cli({"demo", "chess"});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("pocs-three-sets") != std::string::npos);

    auto dir = scratch("demo_out");
    CHECK(cli({"demo", "nash-n45", "--out", dir.string()}).code == 0);
    CHECK(fs::exists(dir / "trace.csv"));
}

TEST_CASE("analyze-net") {
    auto dir = scratch("net");
    auto nil = write_file(dir / "nil.json", R"({"layers":[{"W":[[0,1],[0,0]],"b":[0,0],"activation":"relu"},
                                                          {"W":[[0,1],[0,0]],"b":[0,0],"activation":"relu"}]})");
    auto r = cli({"analyze-net", nil, "--out", (dir / "cert.json").string()});
    REQUIRE(r.code == 0);
    Json c = splitfix::load_json_file((dir / "cert.json").string());
    CHECK(c["lipschitz_bound"].get<double>() == doctest::Approx(0.5));
    CHECK(c["upper_bound"].get<double>() == doctest::Approx(1.0));
    CHECK(c["sandwich_holds"] == true);
    auto wide = write_file(dir / "wide.json", R"({"layers":[{"W":[[1,2,3]],"activation":"sigmoid"}]})");
    auto w = cli({"analyze-net", wide});
    CHECK(w.code == 0);
    CHECK(Json::parse(w.out)["averaged_alpha"].is_null());
    auto broken = write_file(dir / "broken.json", R"({"layers":[{"W":[[1,2]],"b":[0,0]}]})");
    CHECK(cli({"analyze-net", broken}).code == 2);
    auto act = write_file(dir / "act.json", R"({"layers":[{"W":[[1]],"activation":"tanh"}]})");
    CHECK(cli({"analyze-net", act}).code == 2);
}

TEST_CASE("validate") {
    auto one = cli({"validate", "op-algebra"});
    CHECK(one.code == 0);
    CHECK(one.out.find("op-algebra/") != std::string::npos);
    CHECK(one.out.find("drivers/") == std::string::npos);
    CHECK(cli({"validate", "astrology"}).code == 2);

    auto dir = scratch("validate");
    auto f = cli({"validate", "netanalysis", "--inject-fault", "sandwich", "--out", (dir / "r.json").string()});
    CHECK(f.code == 1);
    CHECK(f.out.find("FAIL netanalysis/sandwich  violated: ||W|| <= theta_m / 2^(m-1)") != std::string::npos);
    Json rep = splitfix::load_json_file((dir / "r.json").string());
    CHECK(rep["passed"] == false);
    CHECK(rep["failed"] == 1);
}
