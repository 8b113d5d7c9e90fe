#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

int run(const std::string& args) {
    const std::string cmd = std::string(MSDELAY_CLI_PATH) + " " + args + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("msdelay_test_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("simulate is reproducible byte for byte and estimate runs end to end") {
    TempDir dir("cli");
    const std::string out1 = (dir.path / "a").string();
    const std::string out2 = (dir.path / "b").string();
    // small scenario for speed
    const std::string cfgfile = (dir.path / "scenario.cfg").string();
    {
        std::ofstream os(cfgfile);
        os << "# desk-scale scenario\n";
        os << "n = 250\n";
        os << "eta = 5\n";
    }
    REQUIRE(run("simulate --config " + cfgfile + " --seed 11 --out " + out1) == 0);
    REQUIRE(run("simulate --config " + cfgfile + " --seed 11 --out " + out2) == 0);
    for (const char* f : {"observed.csv", "oracle.csv", "naive1.csv", "naive2.csv",
                          "summary.json"})
        CHECK(slurp(dir.path / "a" / f) == slurp(dir.path / "b" / f));
    CHECK(slurp(dir.path / "a" / "config_echo.txt").find("seed = 11") != std::string::npos);

    // different seed changes the data
    const std::string out3 = (dir.path / "c").string();
    REQUIRE(run("simulate --config " + cfgfile + " --seed 12 --out " + out3) == 0);
    CHECK(slurp(dir.path / "a" / "observed.csv") != slurp(dir.path / "c" / "observed.csv"));

    // estimate on the exported observed view converges
    const std::string fitdir = (dir.path / "fit").string();
    REQUIRE(run("estimate --data " + out1 + "/observed.csv --method poisson --out " + fitdir) ==
            0);
    const std::string fit = slurp(dir.path / "fit" / "fit.json");
    CHECK(fit.find("\"theta\"") != std::string::npos);
    CHECK(fit.find("\"method\": \"poisson\"") != std::string::npos);

    // bootstrap with two resamples emits two rows
    const std::string bootdir = (dir.path / "boot").string();
    REQUIRE(run("bootstrap --data " + out1 + "/observed.csv --bootstrap 2 --seed 3 --out " +
                bootdir) == 0);
    const std::string rows = slurp(dir.path / "boot" / "bootstrap.csv");
    int lines = 0;
    for (char c : rows)
        if (c == '\n') ++lines;
    CHECK(lines == 3);  // header + 2 resamples

    // reserve on the fitted model emits the surface
    const std::string resdir = (dir.path / "res").string();
    REQUIRE(run("reserve --fit " + fitdir + "/fit.json --xpoints 5 --step 0.05 --out " +
                resdir) == 0);
    CHECK(slurp(dir.path / "res" / "estimand.csv").rfind("t,x,value", 0) == 0);

    // rate report
    const std::string oedir = (dir.path / "oe").string();
    REQUIRE(run("oe-rates --data " + out1 + "/observed.csv --fit " + fitdir +
                "/fit.json --target events --buckets 10 --out " + oedir) == 0);
    CHECK(slurp(dir.path / "oe" / "rates.csv").find("fitted_rate") != std::string::npos);
}

TEST_CASE("config and data errors map to the documented exit codes") {
    TempDir dir("cli_err");
    // n = 0 rejected at config validation
    const std::string cfgfile = (dir.path / "bad.cfg").string();
    {
        std::ofstream os(cfgfile);
        os << "n = 0\n";
    }
    CHECK(run("simulate --config " + cfgfile + " --seed 5 --out " + (dir.path / "x").string()) ==
          2);

    // malformed dataset: data error
    const std::string badcsv = (dir.path / "bad.csv").string();
    {
        std::ofstream os(badcsv);
        os << "# eta=5.000000\n";
        os << "subject_id,covariate_1,V,C,event_index,T,Y,U,adj_state_seq,adj_time_seq,outcome\n";
        os << "1,0.5,0.100000,4.000000,1,3.000000,2,2.500000,,,C\n";  // reported after eta
    }
    CHECK(run("estimate --data " + badcsv + " --out " + (dir.path / "y").string()) == 3);

    // unknown method: config error
    const std::string okcsv = (dir.path / "ok.csv").string();
    {
        std::ofstream os(okcsv);
        os << "# eta=5.000000\n";
        os << "subject_id,covariate_1,V,C,event_index,T,Y,U,adj_state_seq,adj_time_seq,outcome\n";
        os << "1,0.5,0.100000,4.000000,,,,,,,\n";
    }
    CHECK(run("estimate --data " + okcsv + " --method nonsense --out " +
              (dir.path / "z").string()) == 2);
}
