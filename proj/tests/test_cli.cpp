#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path source_dir{SIVCAV_SOURCE_DIR};

struct Result {
    int code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override
    {
        dir = fs::temp_directory_path() /
              ("sivcav_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    Result run(const std::string& args)
    {
        const fs::path err = dir / "stderr.txt";
        const std::string cmd = std::string("\"") + SIVCAV_CLI + "\" " + args + " 2>\"" + err.string() + "\"";
        Result r;
        FILE* pipe = popen(cmd.c_str(), "r");
        if (!pipe) return r;
        char buf[4096];
        std::size_t n;
        while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
        const int status = pclose(pipe);
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.err = slurp(err);
        return r;
    }

    fs::path write(const std::string& name, const std::string& text)
    {
        const fs::path p = dir / name;
        std::ofstream(p) << text;
        return p;
    }

    fs::path dir;
};

std::string cfg(const std::string& name) { return "\"" + (source_dir / "configs" / name).string() + "\""; }

} // namespace

TEST_F(Cli, ValidateAcceptsShippedConfig)
{
    const auto r = run("validate " + cfg("fig3_cooperativity.cfg"));
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("valid cooperativity_report"), std::string::npos);
}

TEST_F(Cli, ValidateEchoPrintsCanonicalJson)
{
    const auto r = run("validate --echo " + cfg("fig3_cooperativity.cfg"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["protocol"], "cooperativity_report");
    EXPECT_EQ(j["cavity"]["detuning_over_kappa"], 0.042);
}

TEST_F(Cli, MalformedConfigExitsOneWithField)
{
    const auto p = source_dir / "tests" / "data" / "malformed" / "01_negative_t1.cfg";
    const auto r = run("validate \"" + p.string() + "\"");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("spin.t1"), std::string::npos) << r.err;
}

TEST_F(Cli, MissingFileExitsTwoWithPath)
{
    const std::string missing = (dir / "does_not_exist.cfg").string();
    const auto r = run("validate \"" + missing + "\"");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
}

TEST_F(Cli, UsageErrorExitsOne)
{
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("fit gaussian x.csv").code, 1);
}

TEST_F(Cli, FitPrintsJson)
{
    std::ostringstream csv;
    csv << std::setprecision(17) << "x,value\n";
    for (int i = -50; i <= 50; ++i) {
        const double x = 0.1 * i, u = 2.0 * (x - 0.4) / 1.5;
        csv << x << ',' << 0.2 + 3.0 / (1.0 + u * u) << '\n';
    }
    const auto p = write("line.csv", csv.str());
    const auto r = run("fit lorentzian \"" + p.string() + "\"");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["model"], "lorentzian");
    EXPECT_NEAR(j["params"]["fwhm"]["value"].get<double>(), 1.5, 1e-6);
    EXPECT_NEAR(j["params"]["center"]["value"].get<double>(), 0.4, 1e-6);
}

TEST_F(Cli, FitRejectsUnknownColumn)
{
    const auto p = write("t.csv", "x,value\n0,1\n1,2\n2,3\n3,4\n");
    EXPECT_EQ(run("fit linear \"" + p.string() + "\" --column nope").code, 1);
}

TEST_F(Cli, RunIsDeterministic)
{
    const auto a = run("run " + cfg("fig3_saturation.cfg") + " --out \"" + (dir / "a").string() + "\"");
    const auto b = run("run " + cfg("fig3_saturation.cfg") + " --out \"" + (dir / "b").string() + "\"");
    ASSERT_EQ(a.code, 0) << a.err;
    ASSERT_EQ(b.code, 0) << b.err;
    const fs::path da = fs::path(a.out.substr(0, a.out.find('\n')));
    const fs::path db = fs::path(b.out.substr(0, b.out.find('\n')));
    EXPECT_EQ(da.filename(), db.filename());
    EXPECT_EQ(da.filename().string().rfind("saturation_study-", 0), 0u);
    for (const char* f : {"data.csv", "fits.json"}) {
        ASSERT_TRUE(fs::exists(da / f));
        EXPECT_EQ(slurp(da / f), slurp(db / f)) << f;
    }
    const auto manifest = nlohmann::json::parse(slurp(da / "manifest.json"));
    EXPECT_EQ(manifest["protocol"], "saturation_study");
    EXPECT_TRUE(manifest.contains("config"));
}

TEST_F(Cli, SeedOverrideChangesNoiseAndDirectory)
{
    const auto a = run("run " + cfg("fig3_saturation.cfg") + " --out \"" + dir.string() + "\"");
    const auto b = run("run " + cfg("fig3_saturation.cfg") + " --seed 99 --out \"" + dir.string() + "\"");
    ASSERT_EQ(a.code, 0);
    ASSERT_EQ(b.code, 0);
    EXPECT_NE(a.out, b.out);
    EXPECT_NE(slurp(fs::path(a.out.substr(0, a.out.find('\n'))) / "data.csv"),
              slurp(fs::path(b.out.substr(0, b.out.find('\n'))) / "data.csv"));
}

// Small-grid golden outputs. Regenerate with `sivcav run <cfg>` when an output
// schema changes on purpose.
TEST_F(Cli, GoldenOutputsOnSmallGrids)
{
    const fs::path golden = source_dir / "tests" / "data" / "golden";
    std::size_t checked = 0;
    for (const auto& e : fs::directory_iterator(golden)) {
        if (e.path().extension() != ".cfg") continue;
        const auto r = run("run \"" + e.path().string() + "\" --out \"" + dir.string() + "\"");
        ASSERT_EQ(r.code, 0) << e.path() << r.err;
        const fs::path out = r.out.substr(0, r.out.find('\n'));
        const fs::path ref = golden / e.path().stem();
        for (const char* f : {"data.csv", "fits.json"}) EXPECT_EQ(slurp(out / f), slurp(ref / f)) << ref / f;
        ++checked;
    }
    EXPECT_GE(checked, 5u);
}
