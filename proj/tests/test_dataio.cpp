#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "nabqr/dataio.hpp"
#include "nabqr/scoring.hpp"

using namespace nabqr;

namespace {

// n hours, M members all equal to `member`, actual 100.
RawDataset flat(std::size_t n, std::size_t M = 3, double member = 100.0) {
	RawDataset d;
	d.observations.start = 438288;
	d.observations.values.assign(n, 100.0);
	d.observations.valid.assign(n, true);
	d.ensembles.start = 438288;
	d.ensembles.members = RowMatrix::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(M), member);
	return d;
}

std::size_t removed(const Mask &keep) {
	std::size_t n = 0;
	for (bool k : keep) {
		n += k ? 0 : 1;
	}
	return n;
}

} // namespace

TEST_CASE("csv round trip is exact") {
	RawDataset d = flat(5, 2);
	d.observations.values = {0.1, 1.0 / 3.0, 2e-17, 999.9999999999999, 5.0};
	d.observations.valid[2] = false;
	d.observations.values[2] = std::nan("");
	d.ensembles.members(1, 0) = 0.30000000000000004;
	d.spot = std::vector<double>{-1.5, 2.0, std::nan(""), 4.0, 1e300};
	std::stringstream ss;
	write_csv(d, ss);
	const RawDataset back = read_csv(ss);
	CHECK(back.start() == d.start());
	REQUIRE(back.size() == 5);
	for (std::size_t i = 0; i < 5; ++i) {
		CHECK(back.observations.valid[i] == d.observations.valid[i]);
		if (d.observations.valid[i]) {
			CHECK(back.observations.values[i] == d.observations.values[i]);
		}
	}
	CHECK(back.ensembles.members == d.ensembles.members);
	REQUIRE(back.spot.has_value());
	CHECK((*back.spot)[0] == -1.5);
	CHECK(std::isnan((*back.spot)[2]));
	CHECK((*back.spot)[4] == 1e300);
	CHECK_FALSE(back.countertrade.has_value());
}

TEST_CASE("csv rejects a broken grid and names the gap") {
	std::stringstream ss("timestamp,actual,ens_00\n2020-01-01T00:00Z,1,1\n2020-01-01T01:00Z,1,1\n"
	                     "2020-01-01T03:00Z,1,1\n");
	try {
		read_csv(ss, "f.csv");
		FAIL("expected ValidationError");
	} catch (const ValidationError &e) {
		const std::string msg = e.what();
		CHECK(msg.find("f.csv:4") != std::string::npos);
		CHECK(msg.find("2020-01-01T02:00") != std::string::npos);
	}
}

TEST_CASE("csv handles missing cells and unknown columns") {
	std::stringstream ss("timestamp,actual,ens_00,ens_01,weather\n2020-01-01T00:00Z,,1,2,x\n"
	                     "2020-01-01T01:00Z,5,1,,x\n2020-01-01T02:00Z,6,3,4,x\n");
	const RawDataset d = read_csv(ss);
	CHECK_FALSE(d.observations.valid[0]);
	CHECK_FALSE(d.observations.valid[1]);
	CHECK(d.observations.valid[2]);
	CHECK(d.ensembles.members(1, 1) == 1.0); // imputed with the row mean
	CHECK(d.ensembles.member_count() == 2);

	std::stringstream bad("timestamp,actual,ens_00\n2020-01-01T00:00Z,abc,1\n");
	CHECK_THROWS_AS(read_csv(bad), ValidationError);
	std::stringstream gap_members("timestamp,actual,ens_00,ens_02\n2020-01-01T00:00Z,1,1,1\n");
	CHECK_THROWS_AS(read_csv(gap_members), ValidationError);
	CHECK_THROWS_AS(load_csv("/nonexistent/x.csv"), IoError);
}

TEST_CASE("countertrade filter on hand-traced fixtures") {
	CountertradeFilterConfig cfg;
	cfg.negative_spot = false;

	SUBCASE("flanked low run removes the run and its padding") {
		RawDataset d = flat(4);
		d.countertrade = std::vector<double>{1800, 10, 10, 1800};
		CHECK(removed(countertrade_filter(d, cfg)) == 4);
	}
	SUBCASE("flanked run inside a longer series") {
		RawDataset d = flat(12);
		d.countertrade = std::vector<double>(12, 500.0);
		(*d.countertrade)[4] = 1800;
		(*d.countertrade)[5] = 0;
		(*d.countertrade)[6] = 1800;
		const Mask keep = countertrade_filter(d, cfg);
		for (std::size_t i = 0; i < 12; ++i) {
			CHECK(keep[i] == (i < 3 || i > 7));
		}
	}
	SUBCASE("constant zero removes nothing") {
		RawDataset d = flat(10);
		d.countertrade = std::vector<double>(10, 0.0);
		CHECK(removed(countertrade_filter(d, cfg)) == 0);
	}
	SUBCASE("one weak flank keeps the run") {
		RawDataset d = flat(6);
		d.countertrade = std::vector<double>{500, 1800, 10, 1700, 500, 500};
		CHECK(removed(countertrade_filter(d, cfg)) == 0); // 1700 is not above the threshold
	}
	SUBCASE("flank search skips zero hours and missing values") {
		RawDataset d = flat(8);
		d.countertrade = std::vector<double>{1800, std::nan(""), 10, 10, 1800, 500, 500, 500};
		// The NaN breaks the low run; the run [2, 3] finds 1800 at hour 0 behind the NaN.
		const Mask keep = countertrade_filter(d, cfg);
		CHECK(removed(keep) == 6);
		CHECK(keep[6]);
		CHECK(keep[7]);
	}
	SUBCASE("negative spot removes the hour and two on each side") {
		RawDataset d = flat(10);
		d.spot = std::vector<double>(10, 30.0);
		(*d.spot)[5] = -1.0;
		CountertradeFilterConfig c;
		const Mask keep = countertrade_filter(d, c); // countertrade absent: rule skipped
		for (std::size_t i = 0; i < 10; ++i) {
			CHECK(keep[i] == (i < 3 || i > 7));
		}
		c.spot_from = d.start() + 6;
		CHECK(removed(countertrade_filter(d, c)) == 0);
	}
}

TEST_CASE("glitch filter threshold and padding") {
	GlitchFilterConfig cfg;
	SUBCASE("nine members inside is kept, ten is removed") {
		RawDataset d = flat(11, 51, 100.0);
		for (Eigen::Index m = 0; m < 9; ++m) {
			d.ensembles.members(3, m) = 365.0;
		}
		CHECK(removed(glitch_filter(d.ensembles, cfg)) == 0);
		d.ensembles.members(3, 9) = 365.0;
		const Mask keep = glitch_filter(d.ensembles, cfg);
		CHECK(removed(keep) == 5);
		CHECK_FALSE(keep[1]);
		CHECK_FALSE(keep[5]);
		CHECK(keep[6]);
	}
	SUBCASE("interval is open at both ends") {
		RawDataset d = flat(3, 20, 358.0);
		CHECK(removed(glitch_filter(d.ensembles, cfg)) == 0);
		d.ensembles.members.setConstant(370.0);
		CHECK(removed(glitch_filter(d.ensembles, cfg)) == 0);
	}
	SUBCASE("overlapping pads merge") {
		RawDataset d = flat(12, 20, 100.0);
		d.ensembles.members.row(4).setConstant(365.0);
		d.ensembles.members.row(6).setConstant(365.0);
		const Mask keep = glitch_filter(d.ensembles, cfg);
		CHECK(removed(keep) == 7); // hours 2..8
		CHECK(keep[1]);
		CHECK(keep[9]);
	}
}

TEST_CASE("mask helpers") {
	CHECK(pad_removals({true, true, false, true, true, true}, 1) == Mask{true, false, false, false, true, true});
	CHECK(pad_removals({false, true, true}, 5) == Mask{false, false, false});
	CHECK(combine_masks({true, false, true}, {true, true, false}) == Mask{true, false, false});
	CHECK_THROWS_AS(combine_masks({true}, {true, true}), ValidationError);
	ObservationSeries y;
	y.values = {1, 2, 3};
	y.valid = {true, false, true};
	apply_mask(y, {false, true, true});
	CHECK(y.valid == Mask{false, false, true});
}

TEST_CASE("split arithmetic") {
	const SplitSpec p = SplitSpec::full_length();
	CHECK(p.nn_train.length == 14040);
	CHECK(p.taqr_init_params.begin == 14040);
	CHECK(p.taqr_init_window.begin == 14232);
	CHECK(p.test.begin == 19176);
	CHECK(p.end() == 24288);

	const SplitSpec s = SplitSpec::scaled(0.1);
	CHECK(s.nn_train.length == 1404);
	CHECK(s.taqr_init_params.length == 192);
	CHECK(s.taqr_init_window.length == 494);
	CHECK(s.test.length == 511);

	const SplitSpec f = SplitSpec::fit_to(12000);
	CHECK(f.end() <= 12000);
	CHECK(f.end() >= 12000 - 3);
	CHECK(f.taqr_init_params.length == 192);
	CHECK_NOTHROW(split(12000, f));
	CHECK_THROWS_AS(split(11000, f), ValidationError);
	CHECK_THROWS_AS(SplitSpec::fit_to(100), DomainError);

	SplitSpec broken = p;
	broken.test.begin += 1;
	CHECK_THROWS_AS(broken.check(), ValidationError);
	broken = p;
	broken.test.length = 0;
	CHECK_THROWS_AS(broken.check(), ValidationError);
}

TEST_CASE("slice keeps columns aligned") {
	RawDataset d = flat(10);
	d.observations.values[7] = 7.0;
	d.countertrade = std::vector<double>(10, 1.0);
	(*d.countertrade)[7] = 77.0;
	const RawDataset s = d.slice(5, 9);
	CHECK(s.size() == 4);
	CHECK(s.start() == d.start() + 5);
	CHECK(s.observations.values[2] == 7.0);
	CHECK((*s.countertrade)[2] == 77.0);
	CHECK_THROWS_AS(d.slice(5, 11), ValidationError);
}

TEST_CASE("simulator is deterministic, bounded and miscalibrated") {
	SimulationConfig cfg;
	cfg.hours = 3000;
	const RawDataset a = simulate(cfg);
	const RawDataset b = simulate(cfg);
	CHECK(a.ensembles.members == b.ensembles.members);
	CHECK(a.observations.values == b.observations.values);
	CHECK(*a.imbalance == *b.imbalance);
	cfg.seed = 2;
	CHECK_FALSE(simulate(cfg).observations.values == a.observations.values);

	CHECK(a.size() == 3000);
	CHECK(a.ensembles.member_count() == 51);
	CHECK(a.ensembles.members.minCoeff() >= 0.0);
	CHECK(a.ensembles.members.maxCoeff() <= cfg.capacity);
	for (double v : a.observations.values) {
		CHECK((v >= 0.0 && v <= cfg.capacity));
	}
	CHECK(removed(countertrade_filter(a)) > 0);

	// Underdispersed members put too many observations below the lowest level.
	const ScoreReport raw = score_ensemble("raw", a.observations, a.ensembles);
	CHECK(raw.reliability.begin()->second > 0.12);
	CHECK(raw.max_reliability_deviation() > 0.07);
}
