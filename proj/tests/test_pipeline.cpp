#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "nabqr/pipeline.hpp"

using namespace nabqr;

namespace {

// Small end-to-end setup: the test slice starts at 10:00 so the first test block straddles it.
PipelineConfig small_config() {
	PipelineConfig c;
	c.seed = 4;
	c.train.shape.units = 8;
	c.train.shape.hidden = 6;
	c.train.shape.outputs = 5;
	c.train.epochs = 2;
	c.taqr.n_init = 96;
	c.taqr.n_full = 300;
	c.split = PipelineConfig::SplitLengths{400, 210, 720};
	c.forest.trees = 10;
	c.boost.stages = 10;
	return c;
}

RawDataset small_data() {
	SimulationConfig s;
	s.hours = 1430;
	s.seed = 9;
	RawDataset d = simulate(s);
	clean(d, PipelineConfig{});
	return d;
}

const NabqrResult &small_run() {
	static const NabqrResult r = run_nabqr(small_data(), small_config());
	return r;
}

bool monotone_rows(const QuantileForecast &f) {
	for (Eigen::Index r = 0; r < f.values.rows(); ++r) {
		for (Eigen::Index q = 1; q < f.values.cols(); ++q) {
			if (f.values(r, q) < f.values(r, q - 1)) {
				return false;
			}
		}
	}
	return true;
}

EnsembleMatrix block_of(const RawDataset &d, std::size_t begin, std::size_t end) {
	EnsembleMatrix b;
	b.start = d.observations.time(begin);
	b.members = d.ensembles.members.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin));
	return b;
}

std::filesystem::path scratch(const std::string &name) {
	const auto p = std::filesystem::temp_directory_path() / ("nabqr_pipeline_" + name);
	std::filesystem::remove_all(p);
	return p;
}

} // namespace

TEST_CASE("repair_crossings examples") {
	QuantileForecast f;
	f.levels = QuantileLevels({0.25, 0.5, 0.75});
	f.values.resize(3, 3);
	f.values << 5, 3, 4, 1, 2, 3, 2, 2, 1;
	CHECK(crossing_rate(f) == doctest::Approx(2.0 / 3.0));
	const QuantileForecast r = repair_crossings(f);
	CHECK(r.values.row(0) == Eigen::RowVector3d(3, 4, 5));
	CHECK(r.values.row(1) == Eigen::RowVector3d(1, 2, 3));
	CHECK(r.repaired_rows == Mask{true, false, true});
	CHECK(crossing_rate(r) == 0.0);
	const QuantileForecast again = repair_crossings(r);
	CHECK(again.values == r.values);
}

TEST_CASE("clean reports the removed hours") {
	SimulationConfig s;
	s.hours = 3000;
	RawDataset d = simulate(s);
	const std::size_t before = d.observations.valid_count();
	const CleanReport rep = clean(d, PipelineConfig{});
	CHECK(rep.removed_total > 0);
	CHECK(rep.removed_total <= rep.removed_countertrade + rep.removed_glitch);
	CHECK(d.observations.valid_count() == before - rep.removed_total);
	PipelineConfig off;
	off.countertrade_filter = false;
	off.glitch_filter = false;
	RawDataset d2 = simulate(s);
	CHECK(clean(d2, off).removed_total == 0);
}

TEST_CASE("run produces the full report bundle with valid forecasts") {
	const NabqrResult &r = small_run();
	std::vector<std::string> methods;
	for (const auto &rep : r.report.reports) {
		methods.push_back(rep.method);
	}
	CHECK(methods == std::vector<std::string>{"raw", "qrnn", "taqr", "qrf", "qgb", "nabqr"});
	CHECK(r.report.baseline == "raw");
	CHECK(r.forecast.rows() == 720);
	CHECK(r.forecast.start == small_data().observations.time(706));
	CHECK(r.fill_forecast.rows() == 210);
	CHECK(monotone_rows(r.forecast));
	CHECK(r.crossing_rate >= 0.0);
	CHECK(r.crossing_rate <= 1.0);
	for (std::size_t i = 0; i < r.forecast.rows(); ++i) {
		const HourStamp t = r.forecast.time(i);
		CHECK(r.forecast.issue_time[i] < t);
		CHECK(t - r.forecast.issue_time[i] >= 12);
		CHECK(t - r.forecast.issue_time[i] <= 35);
	}
	for (const auto &[m, f] : r.forecasts) {
		CHECK(f.rows() == 720);
	}
	CHECK(r.seconds.count("train"));
	CHECK(r.history.train_loss.size() == 2);
}

TEST_CASE("batch run equals run_taqr on the corrected design") {
	PipelineConfig c = small_config();
	c.repair_crossings = false;
	c.qrf = false;
	c.qgb = false;
	const RawDataset d = small_data();
	const NabqrResult r = run_nabqr(d, c);
	const SplitSpec &s = r.split;

	const CorrectedEnsembles ce = correct_ensembles(r.corrector->params, d.ensembles, c.lags);
	const std::size_t begin = s.taqr_init_params.begin, end = s.test.end();
	const RowMatrix X = ce.values.members.middleRows(static_cast<Eigen::Index>(begin - ce.first),
	                                                 static_cast<Eigen::Index>(end - begin));
	const ObservationSeries y = d.slice(begin, end).observations;
	TaqrRunOptions o = c.taqr;
	const TaqrRun ref = run_taqr(X, y, c.levels, o);

	REQUIRE(ref.forecast.rows() == r.fill_forecast.rows() + r.forecast.rows());
	CHECK(ref.forecast.values.topRows(210) == r.fill_forecast.values);
	CHECK(ref.forecast.values.bottomRows(720) == r.forecast.values);
	CHECK(std::vector<HourStamp>(ref.forecast.issue_time.end() - 720, ref.forecast.issue_time.end()) ==
	      r.forecast.issue_time);
}

TEST_CASE("disabling correction reduces to TAQR on raw members") {
	PipelineConfig c = small_config();
	c.correction = false;
	c.qrf = false;
	c.qgb = false;
	const NabqrResult off = run_nabqr(small_data(), c);
	CHECK(off.forecast.values == small_run().forecasts.at("taqr").values);
	CHECK_FALSE(off.forecasts.count("qrnn"));
}

TEST_CASE("online replay over a 30-day test slice is bitwise identical") {
	const NabqrResult &batch = small_run();
	const RawDataset d = small_data();
	const auto dir = scratch("online");
	batch.test_start_state.save(dir);

	auto replay = [&](OnlineForecaster f) {
		RowMatrix out(720, static_cast<Eigen::Index>(batch.forecast.levels.size()));
		std::vector<HourStamp> issued(720);
		const std::size_t test_begin = batch.split.test.begin, test_end = batch.split.test.end();
		std::size_t h = static_cast<std::size_t>(f.next_hour() - d.start());
		CHECK(h <= test_begin);
		while (h < test_end) {
			const std::size_t e = std::min(test_end, h + static_cast<std::size_t>(24 - hour_of_day(d.observations.time(h))));
			const OnlineForecaster::Issue is = f.issue(block_of(d, h, e));
			for (std::size_t i = h; i < e; ++i) {
				if (i >= test_begin) {
					out.row(static_cast<Eigen::Index>(i - test_begin)) = is.forecast.values.row(static_cast<Eigen::Index>(i - h));
					issued[i - test_begin] = is.forecast.issue_time[i - h];
				}
				f.observe(d.observations.time(i), d.observations.values[i], d.observations.valid[i]);
			}
			h = e;
		}
		return std::make_pair(out, issued);
	};
	const auto first = replay(OnlineForecaster::load(dir));
	CHECK(first.first == batch.forecast.values);
	CHECK(first.second == batch.forecast.issue_time);
	const auto second = replay(OnlineForecaster::load(dir));
	CHECK(second.first == first.first);
	std::filesystem::remove_all(dir);
}

TEST_CASE("persisted state continues exactly where it stopped") {
	const NabqrResult &batch = small_run();
	const RawDataset d = small_data();
	OnlineForecaster a = OnlineForecaster::load([&] {
		const auto dir = scratch("resume");
		batch.test_start_state.save(dir);
		return dir;
	}());
	std::size_t h = static_cast<std::size_t>(a.next_hour() - d.start());
	// Issue one day, persist mid-stream, then continue both copies.
	std::size_t e = h + static_cast<std::size_t>(24 - hour_of_day(d.observations.time(h)));
	a.issue(block_of(d, h, e));
	for (std::size_t i = h; i < e; ++i) {
		a.observe(d.observations.time(i), d.observations.values[i], d.observations.valid[i]);
	}
	const auto dir = scratch("resume2");
	a.save(dir);
	OnlineForecaster b = OnlineForecaster::load(dir);
	CHECK(b.pending() == a.pending());
	const auto ia = a.issue(block_of(d, e, e + 24));
	const auto ib = b.issue(block_of(d, e, e + 24));
	CHECK(ia.forecast.values == ib.forecast.values);
	CHECK(ia.design == ib.design);
	std::filesystem::remove_all(dir);
	std::filesystem::remove_all(scratch("resume"));
}

TEST_CASE("online forecaster rejects out-of-order input") {
	const NabqrResult &batch = small_run();
	const RawDataset d = small_data();
	OnlineForecaster f = batch.test_start_state;
	const std::size_t h = static_cast<std::size_t>(f.next_hour() - d.start());
	const std::size_t e = h + static_cast<std::size_t>(24 - hour_of_day(d.observations.time(h)));

	CHECK_THROWS_AS(f.issue(block_of(d, h + 1, e)), ValidationError);     // gap
	CHECK_THROWS_AS(f.issue(block_of(d, h, e + 1)), ValidationError);     // crosses midnight
	CHECK_THROWS_AS(f.observe(d.observations.time(h), 1.0), ValidationError); // not issued yet
	f.issue(block_of(d, h, e));
	CHECK_THROWS_AS(f.issue(block_of(d, h, e)), ValidationError); // repeated day
	f.observe(d.observations.time(h), 1.0);
	CHECK_THROWS_AS(f.observe(d.observations.time(h), 1.0), ValidationError);
	// The next day needs observations up to 12 hours before it; none beyond the first were reported.
	CHECK_THROWS_AS(f.issue(block_of(d, e, e + 24)), ValidationError);
}

TEST_CASE("runs are deterministic") {
	PipelineConfig c = small_config();
	c.qrf = false;
	c.qgb = false;
	const RawDataset d = small_data();
	const NabqrResult a = run_nabqr(d, c);
	const NabqrResult b = run_nabqr(d, c);
	CHECK(a.forecast.values == b.forecast.values);
	CHECK(a.report.to_json() == b.report.to_json());
	CHECK(a.forecast.values == small_run().forecast.values); // baselines do not perturb the main path
}

TEST_CASE("stage failures carry the stage name and error kind") {
	PipelineConfig c = small_config();
	RunOptions o;
	Corrector bad;
	bad.params = LstmParams::initialize(NetShape{7, 4, 3, 5}, 1);
	bad.levels = QuantileLevels::equidistant(5);
	o.pretrained = bad;
	try {
		run_nabqr(small_data(), c, o);
		FAIL("expected ValidationError");
	} catch (const ValidationError &e) {
		CHECK(std::string(e.what()).rfind("[train]", 0) == 0);
	}
	RawDataset tiny = small_data().slice(0, 500);
	CHECK_THROWS_AS(run_nabqr(tiny, c), ValidationError);
}

TEST_CASE("pretrained corrector is reused and artifacts are written") {
	PipelineConfig c = small_config();
	c.qrf = false;
	c.qgb = false;
	RunOptions o;
	o.artifact_dir = scratch("artifacts");
	const NabqrResult a = run_nabqr(small_data(), c, o);
	REQUIRE(std::filesystem::exists(o.artifact_dir / "corrector.ckpt"));
	RunOptions reuse;
	reuse.pretrained = Corrector::from_checkpoint(Checkpoint::load(o.artifact_dir / "corrector.ckpt"));
	const NabqrResult b = run_nabqr(small_data(), c, reuse);
	CHECK(a.forecast.values == b.forecast.values);
	std::filesystem::remove_all(o.artifact_dir);
}

TEST_CASE("forecast csv round trip") {
	const QuantileForecast &f = small_run().forecast;
	std::stringstream ss;
	write_forecast_csv(f, ss);
	const QuantileForecast back = read_forecast_csv(ss);
	CHECK(back.start == f.start);
	CHECK(back.levels == f.levels);
	CHECK(back.values == f.values);
	CHECK(back.issue_time == f.issue_time);

	std::stringstream gap("timestamp,level,value,issue_time\n2020-01-01T00:00Z,0.5,1,\n2020-01-01T02:00Z,0.5,1,\n");
	CHECK_THROWS_AS(read_forecast_csv(gap), ValidationError);
	std::stringstream header("time,level,value\n");
	CHECK_THROWS_AS(read_forecast_csv(header), ValidationError);
}
