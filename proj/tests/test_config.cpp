#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "sivcav/config.hpp"

using namespace sivcav;
using namespace sivcav::config;
namespace fs = std::filesystem;

namespace {

const fs::path source_dir{SIVCAV_SOURCE_DIR};

std::string read(const fs::path& p)
{
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<fs::path> files(const fs::path& dir)
{
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".cfg") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

// First line of each malformed fixture: "# expect: <field>"
std::string expected_field(const fs::path& p)
{
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    const std::string tag = "# expect: ";
    return line.rfind(tag, 0) == 0 ? line.substr(tag.size()) : std::string();
}

std::string error_field(const std::string& text)
{
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.field();
    }
    return "<accepted>";
}

const char* spin_pumping = R"(protocol: spin_pumping
seed: 4
spin:
  eta: 0.14
  rabi: 54.0e6
  preserving_separation: 225.0e6
pulse:
  length: 1.0e-6
)";

} // namespace

TEST(Config, ShippedConfigsAreValid)
{
    const auto cfgs = files(source_dir / "configs");
    ASSERT_GE(cfgs.size(), 9u);
    std::vector<std::string> seen;
    for (const auto& p : cfgs) {
        ProtocolConfig c;
        ASSERT_NO_THROW(c = load_config(p)) << p;
        seen.push_back(c.protocol);
    }
    for (const auto& name : protocol_names())
        EXPECT_NE(std::find(seen.begin(), seen.end(), name), seen.end()) << "no shipped config for " << name;
}

TEST(Config, DefaultsAreFilledIntoCanonicalForm)
{
    const auto c = parse_config(spin_pumping);
    EXPECT_EQ(c.canonical["spin"]["t1"], 630e-9);
    EXPECT_EQ(c.canonical["pulse"]["count"], 1);
    EXPECT_EQ(c.canonical["noise"]["relative"], 0.0);
    EXPECT_EQ(c.canonical["output"], "results");
    const auto& s = std::get<SpinPumpingSetup>(c.setup);
    EXPECT_EQ(s.spin.eta, 0.14);
    EXPECT_EQ(s.pulse.samples, 1001u);
}

TEST(Config, EchoRoundTrips)
{
    for (const auto& p : files(source_dir / "configs")) {
        const auto a = load_config(p);
        const auto b = parse_config(echo(a));
        EXPECT_EQ(echo(b), echo(a)) << p;
        EXPECT_EQ(config_hash(b), config_hash(a)) << p;
    }
}

TEST(Config, HashIgnoresKeyOrderCommentsAndOutput)
{
    const auto a = parse_config(spin_pumping);
    const auto b = parse_config(R"(# reordered
pulse: {length: 1.0e-6}
spin: {preserving_separation: 225.0e6, rabi: 54.0e6, eta: 0.14}
output: elsewhere
seed: 4
protocol: spin_pumping
)");
    EXPECT_EQ(config_hash(a), config_hash(b));
    const auto c = parse_config(std::string(spin_pumping) + "description: changed\n");
    EXPECT_NE(config_hash(a), config_hash(c));
    EXPECT_EQ(hash_hex(config_hash(a)).size(), 16u);
}

TEST(Config, UnknownKeyListsValidKeys)
{
    try {
        parse_config(std::string(spin_pumping) + "  lenght: 2.0\n");
        FAIL() << "accepted an unknown key";
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "pulse.lenght");
        const std::string msg = e.what();
        for (const char* k : {"length", "count", "gap", "samples"}) EXPECT_NE(msg.find(k), std::string::npos) << msg;
        EXPECT_EQ(e.line(), 9);
    }
}

TEST(Config, MissingBlockNamesTheRequirement)
{
    try {
        parse_config("protocol: cpt_scan\ncpt: {pump_rabi: 1.0e6, probe_rabi: 1.0e6}\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "scan");
        EXPECT_NE(std::string(e.what()).find("cpt, scan"), std::string::npos) << e.what();
    }
}

TEST(Config, NegativeRateNamesField)
{
    try {
        parse_config("protocol: cpt_scan\ncpt: {pump_rabi: 1.0e6, probe_rabi: 1.0e6, ground_dephasing: -3.0}\n"
                     "scan: {start: -1.0, stop: 1.0, points: 11}\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "cpt.ground_dephasing");
        EXPECT_EQ(e.line(), 2);
        EXPECT_NE(std::string(e.what()).find(">= 0"), std::string::npos);
    }
}

TEST(Config, SyntaxErrorReportsLine)
{
    try {
        parse_config("protocol: spin_pumping\nspin: [unclosed\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_GT(e.line(), 0);
        EXPECT_TRUE(e.field().empty());
    }
    EXPECT_THROW(parse_config("- a\n- b\n"), ConfigError);
}

TEST(Config, MalformedCorpusNamesExpectedField)
{
    const auto bad = files(source_dir / "tests" / "data" / "malformed");
    ASSERT_GE(bad.size(), 10u);
    for (const auto& p : bad) {
        const std::string want = expected_field(p);
        ASSERT_FALSE(want.empty()) << p;
        EXPECT_EQ(error_field(read(p)), want) << p;
    }
}

TEST(Config, ConfigErrorIsInvalidParameter)
{
    EXPECT_THROW(parse_config("protocol: nope\n"), InvalidParameter);
}
