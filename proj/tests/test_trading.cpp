#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "nabqr/random.hpp"
#include "nabqr/trading.hpp"

using namespace nabqr;

namespace {

ObservationSeries series(std::vector<double> v, HourStamp start = 0) {
	ObservationSeries y;
	y.start = start;
	y.valid.assign(v.size(), true);
	y.values = std::move(v);
	return y;
}

// Hand trace: signal = pred - 1 - raw; positive sells spot, zero or negative buys spot.
BacktestInput ten_hours() {
	BacktestInput in;
	in.start = 438288;
	in.pred_median = {10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
	in.raw_median = {12, 15, 29, 45, 40, 61, 65, 90, 80, 100};
	in.spot = {50, 60, 40, 30, 70, 55, 45, 80, 20, 35};
	in.imbalance = {45, 70, 40, 35, 60, 50, 55, 70, 25, 30};
	return in;
}

} // namespace

TEST_CASE("offset examples") {
	const ObservationSeries y = series({1, 2, 3, 4});
	const std::vector<double> same{1, 2, 3, 4};
	CHECK(compute_offset(same, y, 0, 4).scalar == 0.0);
	const std::vector<double> biased{11, 12, 13, 14};
	CHECK(compute_offset(biased, y, 0, 4).scalar == 10.0);
	CHECK(compute_offset(biased, y, 1, 3).at(0) == 10.0);
	CHECK_THROWS_AS(compute_offset(biased, y, 2, 2), DomainError);

	ObservationSeries masked = y;
	masked.valid.assign(4, false);
	CHECK_THROWS_AS(compute_offset(biased, masked, 0, 4), DomainError);
}

TEST_CASE("hour-of-day offset recovers a periodic bias") {
	const std::size_t n = 24 * 10;
	std::vector<double> obs(n), pred(n);
	Rng rng(3);
	for (std::size_t i = 0; i < n; ++i) {
		obs[i] = rng.uniform(0.0, 500.0);
		pred[i] = obs[i] + static_cast<double>((i + 5) % 24) * 2.0 - 7.0;
	}
	const HourStamp start = 438288 + 19; // series starts at 19:00
	const Offset o = compute_offset(pred, series(obs, start), 0, n, OffsetMode::HourOfDay);
	for (std::size_t i = 0; i < 24; ++i) {
		const int h = hour_of_day(start + static_cast<HourStamp>(i));
		CHECK(o.per_hour[h] == doctest::Approx(static_cast<double>((i + 5) % 24) * 2.0 - 7.0).epsilon(1e-12));
		CHECK(o.at(start + static_cast<HourStamp>(i)) == o.per_hour[h]);
	}
	CHECK_THROWS_AS(compute_offset(pred, series(obs, start), 0, 12, OffsetMode::HourOfDay), DomainError);
}

TEST_CASE("ten-hour ledger matches the hand trace") {
	Offset o;
	o.scalar = 1.0;
	const TradeLedger l = backtest(ten_hours(), o);
	const Direction S = Direction::SellSpotBuyImbalance, B = Direction::BuySpotSellImbalance;
	const std::vector<Direction> dirs{B, S, B, B, S, B, S, B, S, B};
	const std::vector<double> pnl{-5, -10, 0, 5, 10, -5, -10, -10, -5, -5};
	const std::vector<double> cum{-5, -15, -15, -10, 0, -5, -15, -25, -30, -35};
	REQUIRE(l.rows.size() == 10);
	for (std::size_t i = 0; i < 10; ++i) {
		CHECK(l.rows[i].direction == dirs[i]);
		CHECK(l.rows[i].pnl == pnl[i]);
		CHECK(l.rows[i].cum_pnl == cum[i]);
		CHECK(l.rows[i].time == 438288 + static_cast<HourStamp>(i));
	}
	CHECK(l.total == -35.0);
	CHECK(l.skipped.empty());

	std::ostringstream csv;
	l.write_csv(csv);
	CHECK(csv.str().rfind("hour,direction,spot,imbalance,pnl,cum_pnl\n2020-01-01T00:00", 0) == 0);
}

TEST_CASE("sell branch arithmetic and equal prices") {
	BacktestInput in;
	in.pred_median = {10};
	in.raw_median = {5};
	in.spot = {100};
	in.imbalance = {80};
	CHECK(backtest(in, {}).total == 20.0);
	BacktestInput flat = ten_hours();
	flat.imbalance = flat.spot;
	CHECK(backtest(flat, {}).total == 0.0);
}

TEST_CASE("antisymmetry, size linearity and prefix sums on random series") {
	Rng rng(11);
	BacktestInput in;
	const std::size_t n = 500;
	for (std::size_t i = 0; i < n; ++i) {
		in.pred_median.push_back(rng.uniform(0.0, 1000.0));
		in.raw_median.push_back(rng.uniform(0.0, 1000.0));
		in.spot.push_back(rng.uniform(-20.0, 200.0));
		in.imbalance.push_back(rng.uniform(-20.0, 200.0));
	}
	Offset o;
	o.scalar = 3.25;
	auto decisions = decide(in, o);
	const TradeLedger base = settle(in, decisions);
	for (auto &d : decisions) {
		d = flipped(*d);
	}
	const TradeLedger flip = settle(in, decisions);
	BacktestConfig big;
	big.size = 4.0; // a power of two keeps the scaling exact in floating point
	const TradeLedger scaled = backtest(in, o, big);
	REQUIRE(base.rows.size() == n);
	double running = 0.0;
	for (std::size_t i = 0; i < n; ++i) {
		CHECK(flip.rows[i].pnl == -base.rows[i].pnl);
		CHECK(scaled.rows[i].pnl == 4.0 * base.rows[i].pnl);
		running += base.rows[i].pnl;
		CHECK(base.rows[i].cum_pnl == running);
	}
	CHECK(base.total == running);
	CHECK(flip.total == -base.total);
	CHECK(scaled.total == 4.0 * base.total);
}

TEST_CASE("missing prices skip the hour and dead band abstains") {
	BacktestInput in = ten_hours();
	in.spot[3] = std::nan("");
	in.pred_median[7] = std::nan("");
	Offset o;
	o.scalar = 1.0;
	const TradeLedger l = backtest(in, o);
	CHECK(l.rows.size() == 8);
	CHECK(l.skipped == std::vector<HourStamp>{438288 + 3, 438288 + 7});
	CHECK(l.total == -35.0 - 5.0 + 10.0);

	BacktestConfig band;
	band.dead_band = 4.5; // only |signal| >= 4.5 trades: hours 3, 4, 7, 8
	const TradeLedger b = backtest(ten_hours(), o, band);
	REQUIRE(b.rows.size() == 4);
	CHECK(b.total == 5.0 + 10.0 - 10.0 - 5.0);

	BacktestInput bad = ten_hours();
	bad.spot.pop_back();
	CHECK_THROWS_AS(backtest(bad, o), ValidationError);
}
