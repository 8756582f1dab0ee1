#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "spinbath/cli.hpp"
#include "spinbath/dataset.hpp"
#include "spinbath/decoherence.hpp"

using namespace spinbath;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "spinbath_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

const char* kSmallConfig = R"({
  "seed": 7,
  "engine": "analytic",
  "sensor": {"depth_nm": 10.0, "bias_field_gauss": 382.0},
  "bath": {"sigma_per_nm2": 0.0025, "tau_c_us": 21.0},
  "jobs": [
    {"name": "hahn", "kind": "coherence", "family": "hahn",
     "times_us": {"start": 1.0, "stop": 80.0, "count": 16, "spacing": "log"}},
    {"name": "sweep", "kind": "tau_sweep", "total_time_us": 20.0,
     "taus_us": {"start": 0.0, "stop": 10.0, "count": 21}},
    {"name": "dip", "kind": "dip", "freq_start_mhz": 910.0, "freq_stop_mhz": 1230.0,
     "points": 65, "rabi_mhz": 5.0, "sequence_time_us": 10.0}
  ]
})";

}  // namespace

TEST_CASE("simulate writes provenance-stamped datasets") {
  const fs::path dir = fresh_dir("simulate");
  write_text(dir / "cfg.json", kSmallConfig);
  const int rc = cli::run({"simulate", "--config", (dir / "cfg.json").string(), "--out",
                           (dir / "out").string()});
  REQUIRE(rc == 0);

  const Dataset hahn = read_dataset(dir / "out" / "hahn.csv");
  CHECK(*hahn.find_meta("schema") == std::string(kSchemaCoherence));
  CHECK(hahn.find_meta("config_hash") != nullptr);
  CHECK(hahn.find_meta("b_rms_tesla") != nullptr);
  CHECK(hahn.table.rows() == 16);

  // lossless reingestion: write(read(x)) is byte-identical
  const std::string original = read_file(dir / "out" / "hahn.csv");
  CHECK(serialize_dataset(parse_dataset(original)) == original);

  const Dataset dip = read_dataset(dir / "out" / "dip.csv");
  CHECK(*dip.find_meta("schema") == std::string(kSchemaDip));
  // resonance of g = 2 electrons at 382 G sits inside the sweep
  CHECK(dip.meta_as_double("center_mhz") == doctest::Approx(1070.553).epsilon(1e-4));
}

TEST_CASE("unknown config keys are rejected with their path") {
  const fs::path dir = fresh_dir("badcfg");
  write_text(dir / "cfg.json", R"({
    "seed": 1,
    "sensor": {"depth_nm": 10.0, "depht_nm": 12.0},
    "bath": {"sigma_per_nm2": 1e-3, "tau_c_us": 21.0},
    "jobs": [{"name": "x", "kind": "coherence", "family": "hahn", "times_us": [1.0, 2.0]}]
  })");
  CHECK(cli::run({"simulate", "--config", (dir / "cfg.json").string(), "--out",
                  (dir / "out").string()}) == cli::kExitUsage);

  write_text(dir / "nobath.json", R"({"sensor": {"depth_nm": 10.0}, "jobs": []})");
  CHECK(cli::run({"simulate", "--config", (dir / "nobath.json").string()}) == cli::kExitUsage);

  write_text(dir / "syntax.json", "{ not json");
  CHECK(cli::run({"simulate", "--config", (dir / "syntax.json").string()}) == cli::kExitUsage);

  CHECK(cli::run({"nonsense"}) == cli::kExitUsage);
}

TEST_CASE("montecarlo outputs are byte-reproducible across runs and workers") {
  const fs::path dir = fresh_dir("determinism");
  write_text(dir / "cfg.json", R"({
    "seed": 99,
    "engine": "montecarlo",
    "trials": 400,
    "sensor": {"depth_nm": 10.0},
    "bath": {"sigma_per_nm2": 2e-4, "tau_c_us": 21.0},
    "jobs": [{"name": "deer", "kind": "coherence", "family": "deer",
              "times_us": [4.0, 12.0, 20.0]}]
  })");

  setenv("SPINBATH_WORKERS", "1", 1);
  REQUIRE(cli::run({"simulate", "--config", (dir / "cfg.json").string(), "--out",
                    (dir / "a").string()}) == 0);
  setenv("SPINBATH_WORKERS", "3", 1);
  REQUIRE(cli::run({"simulate", "--config", (dir / "cfg.json").string(), "--out",
                    (dir / "b").string()}) == 0);
  unsetenv("SPINBATH_WORKERS");
  REQUIRE(cli::run({"simulate", "--config", (dir / "cfg.json").string(), "--out",
                    (dir / "c").string()}) == 0);

  const std::string a = read_file(dir / "a" / "deer.csv");
  CHECK(a == read_file(dir / "b" / "deer.csv"));
  CHECK(a == read_file(dir / "c" / "deer.csv"));
}

TEST_CASE("montecarlo with an empty bath gives an all-ones curve") {
  const fs::path dir = fresh_dir("empty");
  write_text(dir / "cfg.json", R"({
    "engine": "montecarlo",
    "trials": 1,
    "sensor": {"depth_nm": 10.0},
    "bath": {"sigma_per_nm2": 0.0, "tau_c_us": 21.0},
    "jobs": [{"name": "hahn", "kind": "coherence", "family": "hahn",
              "times_us": [5.0, 10.0]}]
  })");
  REQUIRE(cli::run({"simulate", "--config", (dir / "cfg.json").string(), "--out",
                    (dir / "out").string()}) == 0);
  const Dataset ds = read_dataset(dir / "out" / "hahn.csv");
  CHECK(ds.column("coherence")[0] == 1.0);
  CHECK(ds.column("coherence")[1] == 1.0);
}

TEST_CASE("coupling-specified bath reproduces the closed form") {
  const fs::path dir = fresh_dir("coupling_cfg");
  write_text(dir / "cfg.json", R"({
    "engine": "analytic",
    "sensor": {"depth_nm": 10.0},
    "bath": {"coupling_khz": 90.9, "tau_c_us": 21.0},
    "jobs": [{"name": "deer", "kind": "coherence", "family": "deer",
              "times_us": [10.5, 21.0, 42.0]}]
  })");
  REQUIRE(cli::run({"simulate", "--config", (dir / "cfg.json").string(), "--out",
                    (dir / "out").string()}) == 0);
  const Dataset ds = read_dataset(dir / "out" / "deer.csv");
  // at t = tau_c the DEER form gives exp(-K tau_c (e^{-1} + 1 - 1))
  const double expect = std::exp(-0.0909 * 21.0 * ou_phi(1.0));
  CHECK(ds.column("coherence")[1] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("fit pipelines produce result records and exit codes") {
  const fs::path dir = fresh_dir("fit");
  write_text(dir / "cfg.json", kSmallConfig);
  REQUIRE(cli::run({"simulate", "--config", (dir / "cfg.json").string(), "--out",
                    (dir / "out").string()}) == 0);

  SUBCASE("t2 pipeline") {
    const int rc = cli::run({"fit", "--pipeline", "t2", (dir / "out" / "hahn.csv").string(),
                             "--out", (dir / "t2.json").string()});
    CHECK(rc == 0);
    const std::string text = read_file(dir / "t2.json");
    CHECK(text.find("\"pipeline\": \"t2\"") != std::string::npos);
    CHECK(text.find("T2_us") != std::string::npos);
  }

  SUBCASE("deer-echo requires depth") {
    const int rc = cli::run({"fit", "--pipeline", "deer-echo",
                             (dir / "out" / "sweep.csv").string(), "--out",
                             (dir / "de.json").string()});
    CHECK(rc == cli::kExitUsage);
    const int rc2 = cli::run({"fit", "--pipeline", "deer-echo",
                              (dir / "out" / "sweep.csv").string(), "--depth", "10", "--out",
                              (dir / "de.json").string()});
    CHECK(rc2 == 0);
  }

  SUBCASE("schema mismatch is a data error") {
    const int rc = cli::run({"fit", "--pipeline", "t2", (dir / "out" / "sweep.csv").string()});
    CHECK(rc == cli::kExitDataError);
  }

  SUBCASE("flat curve exits with the non-convergence code") {
    Dataset flat;
    flat.set_meta("schema", kSchemaCoherence);
    flat.set_meta("family", "hahn");
    flat.set_meta("n_pulses", 0.0);
    flat.set_meta("tau_offset_us", 0.0);
    flat.columns = {"time_us", "coherence"};
    flat.table.resize(8, 2);
    for (int i = 0; i < 8; ++i) {
      flat.table(i, 0) = i + 1.0;
      flat.table(i, 1) = 1.0;
    }
    write_dataset(dir / "flat.csv", flat);
    const int rc = cli::run({"fit", "--pipeline", "t2", (dir / "flat.csv").string()});
    CHECK(rc == cli::kExitNoConvergence);
  }
}

TEST_CASE("spectrum pipeline and report comparison") {
  const fs::path dir = fresh_dir("spectrum");
  // two bath regimes, CPMG family each
  for (const char* tag : {"air", "gra"}) {
    const bool air = std::string(tag) == "air";
    std::string cfg = std::string(R"({
      "seed": 3,
      "engine": "analytic",
      "sensor": {"depth_nm": 10.0},
      "bath": {"sigma_per_nm2": )") +
                      (air ? "0.0025" : "0.0011") + ", \"tau_c_us\": " + (air ? "21.0" : "12.0") +
                      R"(},
      "jobs": [)";
    bool first = true;
    for (int n : {1, 2, 4, 8, 16, 32}) {
      if (!first) cfg += ",";
      first = false;
      cfg += "{\"name\": \"cpmg" + std::to_string(n) +
             "\", \"kind\": \"coherence\", \"family\": \"cpmg\", \"n_pulses\": " +
             std::to_string(n) +
             ", \"times_us\": {\"start\": 40.0, \"stop\": 1500.0, \"count\": 14, \"spacing\": \"log\"}}";
    }
    cfg += "]}";
    write_text(dir / (std::string("cfg_") + tag + ".json"), cfg);
    REQUIRE(cli::run({"simulate", "--config", (dir / (std::string("cfg_") + tag + ".json")).string(),
                      "--out", (dir / tag).string()}) == 0);

    std::vector<std::string> args{"fit", "--pipeline", "spectrum"};
    for (int n : {1, 2, 4, 8, 16, 32}) {
      args.push_back((dir / tag / ("cpmg" + std::to_string(n) + ".csv")).string());
    }
    args.push_back("--out");
    args.push_back((dir / (std::string(tag) + ".json")).string());
    REQUIRE(cli::run(args) == 0);
    CHECK(fs::exists(dir / (std::string(tag) + ".spectrum.csv")));
  }

  // report: side-by-side with deltas
  REQUIRE(cli::run({"report", (dir / "air.json").string(), (dir / "gra.json").string(), "--out",
                    (dir / "report").string()}) == 0);
  const std::string table = read_file(dir / "report" / "report.txt");
  CHECK(table.find("delta") != std::string::npos);
  CHECK(fs::exists(dir / "report" / "report.csv"));
  CHECK(fs::exists(dir / "report" / "model_before.csv"));

  // identical inputs give zero deltas
  REQUIRE(cli::run({"report", (dir / "air.json").string(), (dir / "air.json").string(), "--out",
                    (dir / "report_same").string()}) == 0);
  const std::string same = read_file(dir / "report_same" / "report.csv");
  std::istringstream lines(same);
  std::string line;
  std::getline(lines, line);  // header
  while (std::getline(lines, line)) {
    const auto c1 = line.find(','), c2 = line.find(',', line.find(',', c1 + 1) + 1);
    const auto c3 = line.find(',', c2 + 1);
    CHECK(line.substr(c2 + 1, c3 - c2 - 1) == "0");
  }

  // pipeline mismatch is refused
  write_text(dir / "cfg_t2.json", kSmallConfig);
  REQUIRE(cli::run({"simulate", "--config", (dir / "cfg_t2.json").string(), "--out",
                    (dir / "t2data").string()}) == 0);
  REQUIRE(cli::run({"fit", "--pipeline", "t2", (dir / "t2data" / "hahn.csv").string(), "--out",
                    (dir / "t2.json").string()}) == 0);
  CHECK(cli::run({"report", (dir / "air.json").string(), (dir / "t2.json").string()}) ==
        cli::kExitDataError);
}

TEST_CASE("preset round trip") {
  const fs::path dir = fresh_dir("preset");
  REQUIRE(cli::run({"preset", "--out", (dir / "paper.json").string()}) == 0);
  REQUIRE(cli::run({"simulate", "--config", (dir / "paper.json").string(), "--out",
                    (dir / "out").string()}) == 0);
  CHECK(fs::exists(dir / "out" / "hahn_air.csv"));
  CHECK(fs::exists(dir / "out" / "deer_echo_graphene.csv"));
  CHECK(fs::exists(dir / "out" / "dip_air.csv"));
  CHECK(fs::exists(dir / "out" / "cpmg32_graphene.csv"));

  // the full inverse chain runs off the preset outputs
  REQUIRE(cli::run({"fit", "--pipeline", "deer-echo", (dir / "out" / "deer_echo_air.csv").string(),
                    "--depth", "10", "--out", (dir / "de_air.json").string()}) == 0);
  const std::string text = read_file(dir / "de_air.json");
  CHECK(text.find("sigma_per_nm2") != std::string::npos);
}
