#include "kgd/cache.hpp"
#include "kgd/pipeline.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

using namespace kgd;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("kgd_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<Mat> random_blocks(int count, int n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<Mat> out(count, Mat(n, n));
  for (Mat& m : out)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = cplx(g(rng), g(rng));
  // Values whose bits are easy to lose in a text round trip.
  out[0](0, 0) = cplx(0.1 + 0.2, -std::numeric_limits<double>::denorm_min());
  return out;
}

bool bit_equal(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(cplx) * a.size()) == 0;
}

template <typename F>
std::string error_text(F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

/// Small static run (seconds) used for determinism and artifact checks.
RunConfig small_static(const std::string& out) {
  RunConfig cfg = parse_config(R"(
scenario = "static"
[grid]
N = 8
[time]
T = 5.0
dt = 0.025
[scattering]
horizons = [2.5, 5.0]
[cache]
policy = "off"
)");
  cfg.output_dir = out;
  return cfg;
}

}  // namespace

TEST(Config, EmptyFileGivesDocumentedDefaults) {
  const RunConfig cfg = parse_config("");
  EXPECT_EQ(cfg.scenario, "static");
  EXPECT_EQ(cfg.n_points, 64);
  EXPECT_DOUBLE_EQ(cfg.horizon, 20.0);
  EXPECT_EQ(cfg.riccati_order, 3);
  EXPECT_EQ(cfg.tolerances, default_tolerances());
  EXPECT_TRUE(validate_config(cfg).empty());
}

TEST(Config, EchoParsesBackToTheSameHash) {
  const RunConfig cfg = parse_config("scenario = \"sech\"\n[params]\nA = 0.25\n[grid]\nN = 16\n[time]\nT = 40.0\n");
  const RunConfig again = parse_config(cfg.to_toml());
  EXPECT_EQ(cfg.hash(), again.hash());
  EXPECT_EQ(cfg.to_toml(), again.to_toml());
}

TEST(Config, HashTracksNumericsButNotOutputLocation) {
  RunConfig a, b;
  b.output_dir = "elsewhere";
  b.cache_policy = "off";
  EXPECT_EQ(a.hash(), b.hash());
  b.dt = 0.025;
  EXPECT_NE(a.hash(), b.hash());
}

TEST(Config, SyntaxErrorReportsLineAndColumn) {
  const std::string msg = error_text([] { parse_config("scenario = \"static\"\n[grid]\nN = = 3\n", "bad.toml"); });
  EXPECT_NE(msg.find("bad.toml"), std::string::npos) << msg;
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("column"), std::string::npos) << msg;
}

TEST(Config, UnknownKeyAndWrongTypeAreReported) {
  const std::string msg = error_text([] { parse_config("[grid]\nN = \"many\"\nM = 3\n"); });
  EXPECT_NE(msg.find("grid.N"), std::string::npos) << msg;
  EXPECT_NE(msg.find("grid.M"), std::string::npos) << msg;
}

TEST(Config, UnknownScenarioListsPresets) {
  try {
    parse_config("scenario = \"warp\"\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const std::string& name : preset_names()) EXPECT_NE(msg.find(name), std::string::npos) << name << " in " << msg;
  }
}

TEST(Config, TimeStepValidatedAgainstMetricRate) {
  // The std preset has a time-dependent spatial metric; a coarse step resolves it poorly.
  try {
    parse_config("scenario = \"std\"\n[time]\nT = 40.0\ndt = 2.0\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    bool found = false;
    for (const std::string& v : e.violations()) found = found || v.find("max|d_t h| * dt") != std::string::npos;
    EXPECT_TRUE(found) << e.what();
  }
  EXPECT_NO_THROW(parse_config("scenario = \"std\"\n[time]\nT = 40.0\ndt = 0.05\n"));
}

TEST(Config, EveryViolationIsListed) {
  try {
    parse_config("[grid]\nN = 7\nL = -1.0\n[riccati]\norder = 0\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_GE(e.violations().size(), 3u) << e.what();
  }
}

TEST(Cache, RoundTripIsBitExact) {
  const fs::path dir = scratch_dir("cache_rt");
  const std::vector<Mat> blocks = random_blocks(5, 6, 11);
  const std::string key = cache_key("U:sech", -40, 40);
  const std::string path = (dir / cache_file_name(key)).string();
  cache_store(path, key, 0x1234, blocks);
  const std::vector<Mat> back = cache_load(path, key, 0x1234);
  ASSERT_EQ(back.size(), blocks.size());
  for (size_t i = 0; i < blocks.size(); ++i) EXPECT_TRUE(bit_equal(back[i], blocks[i])) << i;
}

TEST(Cache, StaleHashIsRefusedWithBothHashes) {
  const fs::path dir = scratch_dir("cache_stale");
  const std::string key = cache_key("U:std", -40, 40);
  const std::string path = (dir / cache_file_name(key)).string();
  cache_store(path, key, 0xabcdef0123456789ull, random_blocks(2, 4, 3));
  try {
    cache_load(path, key, 0x1111222233334444ull);
    FAIL() << "expected CacheError";
  } catch (const CacheError& e) {
    EXPECT_EQ(e.kind(), CacheError::Kind::stale);
    const std::string msg = e.what();
    EXPECT_NE(msg.find(hash_hex(0xabcdef0123456789ull)), std::string::npos) << msg;
    EXPECT_NE(msg.find(hash_hex(0x1111222233334444ull)), std::string::npos) << msg;
  }
}

TEST(Cache, TruncatedOrCorruptFileGivesChecksumError) {
  const fs::path dir = scratch_dir("cache_trunc");
  const std::string key = cache_key("U:sech", -40, 40);
  const std::string path = (dir / cache_file_name(key)).string();
  cache_store(path, key, 7, random_blocks(3, 4, 5));
  const auto size = fs::file_size(path);
  for (auto cut : {size - 1, size / 2, std::uintmax_t{10}}) {
    cache_store(path, key, 7, random_blocks(3, 4, 5));
    fs::resize_file(path, cut);
    try {
      cache_load(path, key, 7);
      FAIL() << "expected CacheError at size " << cut;
    } catch (const CacheError& e) {
      EXPECT_EQ(e.kind(), CacheError::Kind::checksum) << e.what();
      EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
    }
  }
  cache_store(path, key, 7, random_blocks(3, 4, 5));
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(size - 20));
    f.put('\x5a');
  }
  try {
    cache_load(path, key, 7);
    FAIL() << "expected CacheError";
  } catch (const CacheError& e) {
    EXPECT_EQ(e.kind(), CacheError::Kind::checksum) << e.what();
  }
}

TEST(Cache, RestoredTableReproducesTheSweep) {
  const SpatialGrid grid = build_grid(8, 2 * M_PI);
  const TimeGrid tg = TimeGrid::symmetric(2.0, 0.05);
  auto model = std::make_shared<ModelOperatorData>(assemble_model(make_preset("sech", {}, grid.length), grid, tg));
  const PropagationTable table(full_generator(model));
  ASSERT_FALSE(table.is_static());
  const fs::path path = scratch_dir("cache_table") / "u.kgdc";
  cache_store(path.string(), "u", 1, table.forward_blocks());
  const PropagationTable back(table.id(), tg, table.ref_index(), cache_load(path.string(), "u", 1));
  for (auto [k, l] : {std::pair{0, tg.count - 1}, std::pair{tg.count - 1, 3}, std::pair{17, 40}})
    EXPECT_TRUE(bit_equal(back.U(k, l), table.U(k, l))) << k << "," << l;
}

TEST(Pipeline, BundleIsDeterministicExcludingRunInformation) {
  PipelineOptions quiet;
  quiet.write_outputs = false;
  const RunConfig cfg = small_static(scratch_dir("det").string());
  const DiagnosticsBundle a = run_pipeline(cfg, quiet), b = run_pipeline(cfg, quiet);
  EXPECT_TRUE(a.pass()) << bundle_summary(a);
  EXPECT_EQ(bundle_to_json(a, false), bundle_to_json(b, false));
  EXPECT_EQ(bundle_to_json(a, false).find("seconds"), std::string::npos);
}

TEST(Pipeline, WritesBundleCsvAndPlotScript) {
  const fs::path dir = scratch_dir("artifacts");
  const RunConfig cfg = small_static(dir.string());
  const DiagnosticsBundle b = run_pipeline(cfg);
  for (const std::string& f : b.files) EXPECT_TRUE(fs::exists(dir / f)) << f;
  for (const char* f : {"bundle.json", "checks.csv", "plots.gp", "kernel_feynman.csv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;

  const DiagnosticsBundle back = load_bundle((dir / "bundle.json").string());
  EXPECT_EQ(bundle_to_json(back, false), bundle_to_json(b, false));
  EXPECT_EQ(back.schema_version, DiagnosticsBundle::kSchemaVersion);
  EXPECT_EQ(back.config_hash, hash_hex(cfg.hash()));

  // Every check names its invariant and tolerance.
  for (const StageResult& s : back.stages)
    for (const Check& c : s.checks) {
      EXPECT_FALSE(c.invariant.empty());
      EXPECT_FALSE(c.description.empty()) << c.invariant;
    }

  std::ifstream k(dir / "kernel_feynman.csv");
  std::string header;
  std::getline(k, header);
  EXPECT_EQ(header.rfind("t [time units],s [time units]", 0), 0u) << header;
  int rows = 0;
  for (std::string line; std::getline(k, line);) ++rows;
  EXPECT_EQ(rows, 3 * 3 * 8 * 8);  // 3 x 3 time pairs, N x N spatial pairs
}

TEST(Pipeline, HardFailureShortCircuits) {
  RunConfig cfg = small_static(scratch_dir("short").string());
  cfg.params["m"] = 0.0;  // massless: the zero mode has no square root, diagonalization cannot proceed
  PipelineOptions quiet;
  quiet.write_outputs = false;
  const DiagnosticsBundle b = run_pipeline(cfg, quiet);
  EXPECT_FALSE(b.pass());
  size_t failed = b.stages.size();
  for (size_t i = 0; i < b.stages.size(); ++i)
    if (!b.stages[i].error.empty() && !b.stages[i].skipped) {
      failed = i;
      break;
    }
  ASSERT_LT(failed, b.stages.size()) << bundle_summary(b);
  for (size_t i = failed + 1; i < b.stages.size(); ++i) EXPECT_TRUE(b.stages[i].skipped) << b.stages[i].name;
}

TEST(Pipeline, InvalidConfigThrowsConfigError) {
  RunConfig cfg;
  cfg.n_points = 9;
  EXPECT_THROW(run_pipeline(cfg), ConfigError);
}
