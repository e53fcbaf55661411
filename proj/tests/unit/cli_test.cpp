#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "iafm/cli.hpp"
#include "iafm/csv.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path = fs::temp_directory_path() /
           ("iafm_" + std::string(info->test_suite_name()) + "_" + info->name() + "_" +
            std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

int run_binary(const std::string& args) {
  const std::string cmd = std::string(IAFM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write(const std::string& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

const char* kSim = "--n-students 40 --kcs-per-student 4 --opps-per-kc 8 --seed 11";

}  // namespace

TEST(Cli, SimulateWritesRequestedRows) {
  TempDir dir;
  ASSERT_EQ(run_binary(std::string("simulate ") + kSim + " --out-dir " + dir.path.string()), 0);
  const auto recs = iafm::csv::read(slurp(dir / "interactions.csv"));
  EXPECT_EQ(recs.size(), 1u + 40 * 4 * 8);
  EXPECT_EQ(recs[0].fields.size(), iafm::kInteractionColumns.size());
  const auto truth = nlohmann::json::parse(slurp(dir / "ground_truth.json"));
  EXPECT_EQ(truth["students"].size(), 40u);
  EXPECT_FALSE(fs::exists(dir / "interactions.csv.tmp"));
}

TEST(Cli, IngestRoundTrip) {
  TempDir dir;
  ASSERT_EQ(run_binary(std::string("simulate ") + kSim + " --out-dir " + dir.path.string()), 0);
  ASSERT_EQ(run_binary("ingest --input " + (dir / "interactions.csv") + " --out-dir " +
                       dir.path.string()),
            0);
  EXPECT_EQ(slurp(dir / "dataset.csv"), slurp(dir / "interactions.csv"));
  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  EXPECT_EQ(summary["n_rows"], 40 * 4 * 8);
  EXPECT_EQ(summary["n_students"], 40);
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  write(dir / "bad.csv", "student_id,kc_id,exercise_id,correct\ns,k,e,true\n");
  EXPECT_EQ(run_binary("ingest --input " + (dir / "bad.csv") + " --out-dir " + dir.path.string()), 2);
  EXPECT_EQ(run_binary("simulate --rho 1.5 --out-dir " + dir.path.string()), 2);
  EXPECT_EQ(run_binary("ingest --input " + (dir / "missing.csv")), 2);
  EXPECT_EQ(run_binary("--no-such-flag ingest"), 2);
  EXPECT_EQ(run_binary("fit --model m9 --input " + (dir / "bad.csv")), 2);
  EXPECT_EQ(run_binary("curve --input " + (dir / "bad.csv")), 2);
  EXPECT_EQ(run_binary("--help"), 0);
}

TEST(Cli, MissingColumnIsNamedOnStderr) {
  TempDir dir;
  write(dir / "bad.csv", "student_id,kc_id,exercise_id,correct\ns,k,e,true\n");
  const std::string path = dir / "bad.csv";
  const char* argv[] = {"iafm", "ingest", "--input", path.c_str()};
  std::ostringstream out, err;
  EXPECT_EQ(iafm::cli::run(4, argv, out, err), 2);
  EXPECT_NE(err.str().find("SchemaMismatch"), std::string::npos);
  EXPECT_NE(err.str().find("timestamp_ms"), std::string::npos);
}

TEST(Cli, NonConvergedFitExitsThreeUnlessAllowed) {
  TempDir dir;
  ASSERT_EQ(run_binary(std::string("simulate ") + kSim + " --out-dir " + dir.path.string()), 0);
  const std::string in = " --input " + (dir / "interactions.csv") + " --out-dir " + dir.path.string();
  EXPECT_EQ(run_binary("fit --outer-max-iter 1" + in), 3);
  EXPECT_EQ(run_binary("fit --outer-max-iter 1 --allow-nonconverged" + in), 0);
}

TEST(Cli, ConfigFileAndFlagPrecedence) {
  TempDir dir;
  write(dir / "run.toml", "n-students = 7\nkcs-per-student = 2\nopps-per-kc = 5\n");
  ASSERT_EQ(run_binary("simulate --config " + (dir / "run.toml") + " --opps-per-kc 6 --out-dir " +
                       dir.path.string()),
            0);
  EXPECT_EQ(iafm::csv::read(slurp(dir / "interactions.csv")).size(), 1u + 7 * 2 * 6);
}

// Output contracts read by the plotting scripts.
TEST(PlotContracts, FitCurveAndReportFiles) {
  TempDir dir;
  ASSERT_EQ(run_binary(std::string("simulate ") + kSim + " --out-dir " + dir.path.string()), 0);
  const std::string in = " --input " + (dir / "interactions.csv") + " --out-dir " + dir.path.string();
  ASSERT_EQ(run_binary("fit --threads 2 --curve-floor 10" + in), 0);

  const auto curve = iafm::csv::read(slurp(dir / "curve.csv"));
  ASSERT_GE(curve.size(), 2u);
  EXPECT_EQ(curve[0].fields, (std::vector<std::string>{"opportunity", "empirical", "predicted", "n"}));
  EXPECT_EQ(curve.size(), 21u);
  EXPECT_EQ(curve[1].fields[3], "160");

  const auto fit = nlohmann::json::parse(slurp(dir / "fit.json"));
  ASSERT_TRUE(fit.contains("blups"));
  EXPECT_EQ(fit["blups"].size(), 40u);
  for (const auto& key : {"student_id", "theta_s", "delta_s"}) EXPECT_TRUE(fit["blups"][0].contains(key));
  for (const auto& key : {"sd_intercept", "sd_slope", "rho"}) EXPECT_TRUE(fit["covariance"].contains(key));
  EXPECT_TRUE(fit["fixed_effects"].contains("theta_pop"));

  for (const auto* name : {"distributions.json", "distributions.txt", "mastery.json", "mastery.txt"})
    EXPECT_TRUE(fs::exists(dir / name)) << name;
  const auto mastery = nlohmann::json::parse(slurp(dir / "mastery.json"));
  EXPECT_EQ(mastery["rows"].size(), 3u);

  // curve and report reproduce the same bytes from the saved fit.
  const auto first_curve = slurp(dir / "curve.csv");
  const auto first_mastery = slurp(dir / "mastery.json");
  ASSERT_EQ(run_binary("curve --fit " + (dir / "fit.json") + " --curve-floor 10" + in), 0);
  EXPECT_EQ(slurp(dir / "curve.csv"), first_curve);
  ASSERT_EQ(run_binary("report --fit " + (dir / "fit.json") + " --out-dir " + dir.path.string()), 0);
  EXPECT_EQ(slurp(dir / "mastery.json"), first_mastery);
}

TEST(PlotContracts, SubjectScatterJson) {
  std::vector<iafm::glmm::FitResult> fits;
  for (const auto& spec : iafm::ablation_grid()) {
    iafm::glmm::FitResult f;
    f.spec = spec;
    if (spec.include_subject) {
      iafm::glmm::FactorEffects fe{iafm::glmm::Factor::Subject, {}, {}, {}};
      for (int s = 0; s < 10; ++s) {
        fe.levels.push_back("subj" + std::to_string(s));
        fe.intercept.push_back(0.01 * (s - 4.5));
        fe.slope.push_back(0.0);
      }
      f.fixed_effects.factors.push_back(fe);
    }
    fits.push_back(f);
  }
  const auto pts = iafm::analytics::subject_scatter_data(fits);
  const auto j = iafm::analytics::to_json(std::span<const iafm::analytics::ScatterPoint>(pts));
  ASSERT_EQ(j.size(), 10u);
  for (const auto& p : j) {
    EXPECT_TRUE(p["subject"].is_string());
    EXPECT_TRUE(p["theta"].is_number());
    EXPECT_TRUE(p["delta"].is_number());
  }
  EXPECT_EQ(j[0]["subject"], "subj9");
}
