#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "nabqr/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nabqr;

namespace {

const fs::path work = fs::temp_directory_path() / "nabqr_cli_test";

struct Outcome {
	int code = -1;
	std::string out;
	std::string err;
};

std::string slurp(const fs::path &p) {
	std::ifstream in(p);
	std::stringstream ss;
	ss << in.rdbuf();
	return ss.str();
}

Outcome cli(const std::string &args) {
	const fs::path o = work / "stdout.txt", e = work / "stderr.txt";
	const std::string cmd = std::string(NABQR_CLI) + " --log-level warn " + args + " >" + o.string() + " 2>" + e.string();
	const int status = std::system(cmd.c_str());
	Outcome r;
	r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
	r.out = slurp(o);
	r.err = slurp(e);
	return r;
}

void write(const fs::path &p, const std::string &text) {
	std::ofstream out(p);
	out << text;
}

const std::string small_config = R"({"schema_version": 1, "seed": 2,
  "corrector": {"units": 8, "hidden": 6, "outputs": 5, "epochs": 2},
  "baselines": {"qrf": {"trees": 10}, "qgb": {"stages": 10}}})";

struct Fixture {
	Fixture() {
		fs::remove_all(work);
		fs::create_directories(work);
	}
};

} // namespace

TEST_CASE_FIXTURE(Fixture, "help documents the default thresholds, windows, levels and lags") {
	const Outcome r = cli("run --help");
	CHECK(r.code == 0);
	for (const char *s : {"[1700]", "[25]", "[192]", "[5000]", "[1,2,3,6,12,24,48]",
	                      "[0.05,0.1,0.15,0.25,0.35,0.45,0.5,0.55,0.65,0.75,0.85,0.9,0.95]"}) {
		CHECK_MESSAGE(r.out.find(s) != std::string::npos, s);
	}
}

TEST_CASE_FIXTURE(Fixture, "simulate is reproducible from the seed") {
	REQUIRE(cli("simulate --hours 300 --seed 5 --out " + (work / "a.csv").string()).code == 0);
	REQUIRE(cli("simulate --hours 300 --seed 5 --out " + (work / "b.csv").string()).code == 0);
	REQUIRE(cli("simulate --hours 300 --seed 6 --out " + (work / "c.csv").string()).code == 0);
	CHECK(file_digest(work / "a.csv") == file_digest(work / "b.csv"));
	CHECK(file_digest(work / "a.csv") != file_digest(work / "c.csv"));
	const json m = json::parse(slurp(work / "a.manifest.json"));
	CHECK(m["outputs"][0]["sha256"] == file_digest(work / "a.csv"));
	CHECK(m["seeds"]["simulate"] == 5);
}

TEST_CASE_FIXTURE(Fixture, "run on a 90-day synthetic fixture emits every report row") {
	const fs::path data = work / "d.csv", cfg = work / "small.json", out = work / "run";
	REQUIRE(cli("simulate --hours 2160 --seed 3 --out " + data.string()).code == 0);
	write(cfg, small_config);
	const Outcome r = cli("run --in " + data.string() + " --config " + cfg.string() + " --outdir " + out.string());
	REQUIRE_MESSAGE(r.code == 0, r.err);

	const json report = json::parse(slurp(out / "report.json"));
	std::vector<std::string> methods;
	for (const auto &row : report["reports"]) {
		methods.push_back(row["method"]);
	}
	CHECK(methods == std::vector<std::string>{"raw", "qrnn", "taqr", "qrf", "qgb", "nabqr"});
	for (const char *f : {"nabqr", "nabqr_fill", "qrnn", "taqr", "qrf", "qgb"}) {
		CHECK(fs::exists(out / "forecasts" / (std::string(f) + ".csv")));
	}
	CHECK(fs::exists(out / "ledger.csv"));
	CHECK(fs::exists(out / "state" / "online.ckpt"));

	// The manifest digests every artifact, and its config snapshot reproduces the run bitwise.
	const json m = json::parse(slurp(out / "manifest.json"));
	for (const auto &o : m["outputs"]) {
		CHECK(o["sha256"] == file_digest(o["path"].get<std::string>()));
	}
	const fs::path again = work / "again";
	REQUIRE(cli("run --in " + data.string() + " --config " + (out / "config.json").string() + " --outdir " +
	            again.string())
	            .code == 0);
	CHECK(file_digest(out / "report.csv") == file_digest(again / "report.csv"));
	CHECK(file_digest(out / "forecasts" / "nabqr.csv") == file_digest(again / "forecasts" / "nabqr.csv"));

	// Flags override the file.
	const fs::path raw = work / "raw";
	REQUIRE(cli("run --in " + data.string() + " --config " + cfg.string() + " --no-correction --no-baselines --outdir " +
	            raw.string())
	            .code == 0);
	const json rc = json::parse(slurp(raw / "config.json"));
	CHECK(rc["corrector"]["enabled"] == false);
	CHECK(rc["seed"] == 2);

	// The standalone commands reproduce the run's numbers on the cleaned data.
	const fs::path cleaned = work / "clean.csv";
	REQUIRE(cli("clean --in " + data.string() + " --config " + cfg.string() + " --out " + cleaned.string()).code == 0);
	const json mask = json::parse(slurp(work / "clean.mask.json"));
	CHECK(mask["removed_total"] == mask["removed_hours"].size());
	const Outcome s = cli("score --forecast " + (out / "forecasts" / "nabqr.csv").string() + " --actuals " +
	                      cleaned.string());
	REQUIRE(s.code == 0);
	const json scored = json::parse(s.out);
	CHECK(scored["reports"][0]["crps"] == report["reports"][5]["crps"]);
	const fs::path ledger = work / "ledger.csv";
	REQUIRE(cli("backtest --forecast " + (out / "forecasts" / "nabqr.csv").string() + " --raw " + cleaned.string() +
	            " --offset-forecast " + (out / "forecasts" / "nabqr_fill.csv").string() + " --out " + ledger.string())
	            .code == 0);
	CHECK(slurp(ledger) == slurp(out / "ledger.csv"));

	const fs::path ckpt = work / "c.ckpt";
	REQUIRE(cli("train --in " + data.string() + " --config " + cfg.string() + " --checkpoint " + ckpt.string()).code ==
	        0);
	CHECK(file_digest(ckpt) == file_digest(out / "corrector.ckpt"));
}

TEST_CASE_FIXTURE(Fixture, "score of a perfect forecast is zero") {
	write(work / "y.csv", "timestamp,actual\n2020-01-01T00:00Z,3\n2020-01-01T01:00Z,7.5\n2020-01-01T02:00Z,0\n");
	std::string f = "timestamp,level,value,issue_time\n";
	for (const auto &[t, v] : std::vector<std::pair<std::string, std::string>>{
	         {"2020-01-01T00:00Z", "3"}, {"2020-01-01T01:00Z", "7.5"}, {"2020-01-01T02:00Z", "0"}}) {
		for (const char *l : {"0.1", "0.5", "0.9"}) {
			f += t + "," + l + "," + v + ",\n";
		}
	}
	write(work / "f.csv", f);
	const Outcome r = cli("score --forecast " + (work / "f.csv").string() + " --actuals " + (work / "y.csv").string() +
	                      " --out " + (work / "s").string());
	REQUIRE_MESSAGE(r.code == 0, r.err);
	const json j = json::parse(slurp(work / "s.json"));
	const json &row = j["reports"][0];
	CHECK(row["mae"] == 0.0);
	CHECK(row["crps"] == 0.0);
	CHECK(row["qs_mean"] == 0.0);
	CHECK(row["n_scored"] == 3);
	CHECK(fs::exists(work / "s.csv"));
}

TEST_CASE_FIXTURE(Fixture, "failures exit with a kind-specific code and JSON on stderr") {
	auto check = [](const Outcome &r, int code, const std::string &kind) {
		CHECK(r.code == code);
		const json j = json::parse(r.err.substr(r.err.find('{')));
		CHECK(j["error"] == kind);
		CHECK_FALSE(j["message"].get<std::string>().empty());
	};
	check(cli("score --forecast " + (work / "missing.csv").string() + " --actuals x.csv"), 3, "io");
	write(work / "bad.csv", "timestamp,actual,ens_00\n2020-01-01T00:00Z,abc,1\n");
	check(cli("clean --in " + (work / "bad.csv").string() + " --out " + (work / "o.csv").string()), 4, "validation");
	write(work / "v9.json", R"({"schema_version": 9})");
	check(cli("run --in " + (work / "bad.csv").string() + " --config " + (work / "v9.json").string() + " --outdir " +
	          (work / "o").string()),
	      4, "validation");
	REQUIRE(cli("simulate --hours 400 --out " + (work / "d.csv").string()).code == 0);
	check(cli("run --in " + (work / "d.csv").string() + " --levels 0.5,0.2 --outdir " + (work / "o").string()), 5,
	      "domain");
	check(cli("run --in " + (work / "d.csv").string() + " --bogus"), 2, "usage");
}
