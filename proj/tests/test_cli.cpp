#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "igmrf/cli.hpp"

namespace igmrf {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "igmrf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("igmrf_cli_" + std::string(info->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write_config(const std::string& extra = "") const {
    const fs::path p = dir_ / "run.ini";
    write_file(p, "[run]\nseed = 3\nout = out\nmesh = out/mesh.txt\nobservations = out/observations.csv\n"
                  "[synth]\ngeometry = cartoon3\nresolution = 3\n"
                  "[chain]\nadapt_blocks = 2\nadapt_block_size = 20\nburn_in = 20\nsamples = 50\nthin = 5\n"
                  "field_stride = 3\n" + extra);
    return p;
  }

  fs::path dir_;
};

TEST_F(CliTest, HelpAndUsageErrors) {
  EXPECT_EQ(invoke({"--help"}).code, kExitOk);
  EXPECT_EQ(invoke({}).code, kExitConfig);
  EXPECT_EQ(invoke({"bogus"}).code, kExitConfig);
  EXPECT_EQ(invoke({"fit"}).code, kExitConfig);
  EXPECT_EQ(invoke({"fit", "--config", (dir_ / "missing.ini").string()}).code, kExitConfig);
}

TEST_F(CliTest, ConfigErrorsExitWithTwo) {
  write_file(dir_ / "bad.ini", "[chain]\nsamples = 7\nthin = 5\n");
  const CliResult r = invoke({"fit", "--config", (dir_ / "bad.ini").string()});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("thin"), std::string::npos);
}

TEST_F(CliTest, FitWithoutSeedIsRejected) {
  write_file(dir_ / "noseed.ini", "[run]\nmesh = m.txt\n");
  EXPECT_EQ(invoke({"fit", "--config", (dir_ / "noseed.ini").string()}).code, kExitConfig);
}

TEST_F(CliTest, SimulateFitDiagnoseEndToEnd) {
  const std::string cfg = write_config().string();
  ASSERT_EQ(invoke({"simulate", "--config", cfg}).code, kExitOk);
  for (const char* f : {"mesh.txt", "observations.csv", "truth.json", "signal.csv"}) {
    EXPECT_TRUE(fs::exists(dir_ / "out" / f)) << f;
  }
  const CliResult v = invoke({"validate-mesh", "--mesh", (dir_ / "out" / "mesh.txt").string()});
  ASSERT_EQ(v.code, kExitOk) << v.err;
  const auto summary = detail::json::parse(v.out);
  EXPECT_EQ(summary["grains"], 3);

  const CliResult fit = invoke({"fit", "--config", cfg});
  ASSERT_EQ(fit.code, kExitOk) << fit.err;
  const ScalarTrace trace = parse_trace(read_file(dir_ / "out" / "trace.csv"));
  EXPECT_EQ(trace.rows.size(), 10u);
  const auto manifest = detail::json::parse(read_file(dir_ / "out" / "manifest.json"));
  EXPECT_EQ(manifest["seed"], 3);
  EXPECT_EQ(manifest["retained"], 10);

  const CliResult diag = invoke({"diagnose", "--config", cfg});
  ASSERT_EQ(diag.code, kExitOk) << diag.err;
  for (const char* f : {"report.json", "trace_summary.csv", "distance_profile.csv", "residuals.csv"}) {
    EXPECT_TRUE(fs::exists(dir_ / "out" / f)) << f;
  }
}

TEST_F(CliTest, SameSeedGivesByteIdenticalTrace) {
  const std::string cfg = write_config().string();
  ASSERT_EQ(invoke({"simulate", "--config", cfg}).code, kExitOk);
  ASSERT_EQ(invoke({"fit", "--config", cfg, "--out", (dir_ / "a").string()}).code, kExitOk);
  ASSERT_EQ(invoke({"fit", "--config", cfg, "--out", (dir_ / "b").string()}).code, kExitOk);
  EXPECT_EQ(read_file(dir_ / "a" / "trace.csv"), read_file(dir_ / "b" / "trace.csv"));
  ASSERT_EQ(invoke({"fit", "--config", cfg, "--seed", "4", "--out", (dir_ / "c").string()}).code, kExitOk);
  EXPECT_NE(read_file(dir_ / "a" / "trace.csv"), read_file(dir_ / "c" / "trace.csv"));
}

TEST_F(CliTest, TruncatedTraceFailsDiagnosis) {
  const std::string cfg = write_config().string();
  ASSERT_EQ(invoke({"simulate", "--config", cfg}).code, kExitOk);
  ASSERT_EQ(invoke({"fit", "--config", cfg}).code, kExitOk);
  std::string text = read_file(dir_ / "out" / "trace.csv");
  write_file(dir_ / "out" / "trace.csv", text.substr(0, text.size() - 7));
  EXPECT_EQ(invoke({"diagnose", "--config", cfg}).code, kExitIo);
  // A complete but shortened trace fails the manifest check too.
  const auto cut = text.rfind('\n', text.size() - 2);
  write_file(dir_ / "out" / "trace.csv", text.substr(0, cut + 1));
  EXPECT_EQ(invoke({"diagnose", "--config", cfg}).code, kExitIo);
}

TEST_F(CliTest, DiagnoseRejectsChangedSettings) {
  const std::string cfg = write_config().string();
  ASSERT_EQ(invoke({"simulate", "--config", cfg}).code, kExitOk);
  ASSERT_EQ(invoke({"fit", "--config", cfg}).code, kExitOk);
  const std::string changed = write_config("target_acceptance = 0.3\n").string();
  EXPECT_EQ(invoke({"diagnose", "--config", changed}).code, kExitConfig);
}

TEST_F(CliTest, SimulateOnSuppliedMesh) {
  const std::string cfg = write_config().string();
  ASSERT_EQ(invoke({"simulate", "--config", cfg}).code, kExitOk);
  write_file(dir_ / "file.ini", "[run]\nseed = 5\nout = again\nmesh = out/mesh.txt\n[synth]\ngeometry = file\n");
  ASSERT_EQ(invoke({"simulate", "--config", (dir_ / "file.ini").string()}).code, kExitOk);
  EXPECT_TRUE(fs::exists(dir_ / "again" / "observations.csv"));
  EXPECT_FALSE(fs::exists(dir_ / "again" / "mesh.txt"));
}

TEST_F(CliTest, MalformedMeshIsAConfigError) {
  write_file(dir_ / "bad_mesh.txt", "not a mesh\n");
  EXPECT_EQ(invoke({"validate-mesh", "--mesh", (dir_ / "bad_mesh.txt").string()}).code, kExitConfig);
  EXPECT_EQ(invoke({"validate-mesh", "--mesh", (dir_ / "absent.txt").string()}).code, kExitIo);
}

TEST(SampleConfigs, ParseCleanly) {
  for (const auto& entry : fs::directory_iterator(IGMRF_CONFIG_DIR)) {
    if (entry.path().extension() != ".ini") continue;
    EXPECT_NO_THROW(load_config(entry.path())) << entry.path();
  }
}

}  // namespace
}  // namespace igmrf
