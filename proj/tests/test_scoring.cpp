#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <sstream>

#include "nabqr/scoring.hpp"
#include "oracles.hpp"

using namespace nabqr;

namespace {

ObservationSeries series(std::vector<double> v, HourStamp start = 0) {
	ObservationSeries y;
	y.start = start;
	y.valid.assign(v.size(), true);
	y.values = std::move(v);
	return y;
}

QuantileForecast constant_forecast(std::size_t rows, const QuantileLevels &levels, std::vector<double> per_level,
                                   HourStamp start = 0) {
	QuantileForecast f;
	f.start = start;
	f.levels = levels;
	f.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(levels.size()));
	for (Eigen::Index r = 0; r < f.values.rows(); ++r) {
		for (Eigen::Index q = 0; q < f.values.cols(); ++q) {
			f.values(r, q) = per_level[static_cast<std::size_t>(q)];
		}
	}
	return f;
}

} // namespace

TEST_CASE("mae examples") {
	const std::vector<double> y{0, 0}, p{1, -1};
	CHECK(mae(y, p) == 1.0);
	CHECK(mae(y, y) == 0.0);
	const std::vector<double> a{1, 5, 2}, b{2, 3, 2};
	std::vector<double> a2, b2;
	for (std::size_t i = 0; i < 3; ++i) {
		a2.push_back(a[i] + 17.25);
		b2.push_back(b[i] + 17.25);
	}
	CHECK(mae(a, b) == mae(a2, b2));
	CHECK(mae(a, b, Mask{true, false, true}) == 0.5);
	CHECK_THROWS_AS(mae(a, b, Mask{false, false, false}), DomainError);
}

TEST_CASE("crps unit cases") {
	const std::vector<double> point{2.5, 2.5, 2.5};
	CHECK(crps_ensemble(point, 2.5) == 0.0);
	const std::vector<double> single{4.0};
	CHECK(std::abs(crps_ensemble(single, 1.5) - 2.5) <= 1e-12);
	const std::vector<double> two{0.0, 1.0};
	CHECK(std::abs(crps_ensemble(two, 0.5) - 0.25) <= 1e-12);
	CHECK(std::abs(oracle::crps_quadrature(two, 0.5) - 0.25) <= 1e-10);
}

TEST_CASE("crps matches numerical integration and the kernel identity") {
	std::mt19937_64 rng(2);
	std::uniform_int_distribution<int> m(1, 60);
	std::normal_distribution<double> g(0.0, 3.0);
	std::uniform_int_distribution<int> tie(0, 4);
	for (int rep = 0; rep < 100; ++rep) {
		std::vector<double> x(static_cast<std::size_t>(m(rng)));
		for (auto &v : x) {
			v = rep % 3 == 0 ? tie(rng) : g(rng);
		}
		const double y = rep % 5 == 0 ? x.front() : g(rng);
		const double c = crps_ensemble(x, y);
		CHECK(c >= 0.0);
		CHECK(std::abs(c - oracle::crps_quadrature(x, y)) <= 1e-8);
		CHECK(std::abs(c - oracle::crps_kernel(x, y)) <= 1e-9);
	}
}

TEST_CASE("median member convention") {
	std::vector<double> m51(51), m20(20);
	std::iota(m51.begin(), m51.end(), 1.0);
	std::iota(m20.begin(), m20.end(), 1.0);
	CHECK(median_member(m51) == 26.0);
	CHECK(median_member(m20) == 10.5);
}

TEST_CASE("ensemble level assumption") {
	CHECK(ensemble_level_assumption(2).values() == std::vector<double>{0.05, 0.95});
	const auto l51 = ensemble_level_assumption(51);
	CHECK(l51.size() == 51);
	CHECK(l51[1] - l51[0] == doctest::Approx(0.018));
	CHECK(l51[50] == 0.95);
	CHECK(ensemble_level_assumption(20).size() == 20);
	CHECK_THROWS_AS(ensemble_level_assumption(1), DomainError);
}

TEST_CASE("relative score") {
	CHECK(relative_score(3.0, 3.0) == 1.0);
	CHECK(relative_score(0.602 * 7.0, 7.0) == doctest::Approx(0.602));
	CHECK(relative_score(2.0, 5.0) * relative_score(5.0, 2.0) == doctest::Approx(1.0));
	CHECK_THROWS_AS(relative_score(1.0, 0.0), DomainError);
	CHECK_THROWS_AS(relative_score(1.0, -1.0), DomainError);
}

TEST_CASE("quantile score properties") {
	const QuantileLevels levels = QuantileLevels::nabqr_default();
	const ObservationSeries y = series({3, 1, 4, 1, 5, 9, 2, 6});
	QuantileForecast perfect = constant_forecast(8, levels, std::vector<double>(13, 0.0));
	for (Eigen::Index r = 0; r < 8; ++r) {
		perfect.values.row(r).setConstant(y.values[static_cast<std::size_t>(r)]);
	}
	const QuantileScores z = quantile_score(y, perfect);
	for (double v : z.per_level) {
		CHECK(v == 0.0);
	}

	// Constant per-level forecasts are best at the empirical quantile.
	for (std::size_t q = 0; q < levels.size(); ++q) {
		const double best = oracle::best_constant(y.values, levels[q]);
		QuantileForecast f = constant_forecast(8, QuantileLevels({levels[q]}), {best});
		const double at_best = quantile_score(y, f).per_level[0];
		for (double c : y.values) {
			QuantileForecast g = constant_forecast(8, QuantileLevels({levels[q]}), {c});
			CHECK(quantile_score(y, g).per_level[0] >= at_best - 1e-12);
		}
	}

	QuantileForecast f = constant_forecast(8, levels, {0, 1, 1, 2, 2, 3, 3, 3, 4, 4, 5, 6, 7});
	const QuantileScores a = quantile_score(y, f);
	ObservationSeries y2 = y;
	for (auto &v : y2.values) {
		v *= 2.0;
	}
	QuantileForecast f2 = f;
	f2.values *= 2.0;
	const QuantileScores b = quantile_score(y2, f2);
	double mean = 0.0;
	for (std::size_t q = 0; q < 13; ++q) {
		CHECK(b.per_level[q] == doctest::Approx(2.0 * a.per_level[q]));
		mean += a.per_level[q];
	}
	CHECK(a.mean == mean / 13.0);
}

TEST_CASE("reliability extremes and masking") {
	const QuantileLevels levels({0.1, 0.9});
	ObservationSeries y = series({1, 2, 3, 4});
	const QuantileForecast hi = constant_forecast(4, levels, {100, 100});
	const QuantileForecast lo = constant_forecast(4, levels, {-100, -100});
	CHECK(reliability(y, hi) == std::vector<double>{1.0, 1.0});
	CHECK(reliability(y, lo) == std::vector<double>{0.0, 0.0});
	const QuantileForecast mid = constant_forecast(4, levels, {2.5, 2.5});
	CHECK(reliability(y, mid) == std::vector<double>{0.5, 0.5});

	// Masking k points equals scoring the shortened series.
	y.valid[1] = false;
	const ScoreReport masked = score_quantiles("m", y, mid);
	const ObservationSeries shortened = series({1, 3, 4});
	const ScoreReport direct = score_quantiles("d", shortened, constant_forecast(3, levels, {2.5, 2.5}));
	CHECK(masked.n_scored == 3);
	CHECK(masked.mae == direct.mae);
	CHECK(masked.crps == direct.crps);
	CHECK(masked.qs_mean == direct.qs_mean);
	CHECK(masked.reliability == direct.reliability);
}

TEST_CASE("true generating quantiles are reliable") {
	std::mt19937_64 rng(8);
	std::normal_distribution<double> g(0.0, 1.0);
	const QuantileLevels levels = QuantileLevels::nabqr_default();
	const std::size_t n = 6000;
	ObservationSeries y;
	y.values.resize(n);
	y.valid.assign(n, true);
	QuantileForecast f;
	f.levels = levels;
	f.values.resize(n, 13);
	for (std::size_t t = 0; t < n; ++t) {
		const double mu = std::sin(static_cast<double>(t) / 24.0) * 5.0;
		y.values[t] = mu + g(rng);
		for (std::size_t q = 0; q < 13; ++q) {
			// Normal quantile by bisection on erf.
			double lo = -10, hi = 10;
			for (int it = 0; it < 80; ++it) {
				const double m = 0.5 * (lo + hi);
				(0.5 * std::erfc(-m / std::sqrt(2.0)) < levels[q] ? lo : hi) = m;
			}
			f.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(q)) = mu + 0.5 * (lo + hi);
		}
	}
	const auto rel = reliability(y, f);
	for (std::size_t q = 0; q < 13; ++q) {
		CHECK(std::abs(rel[q] - levels[q]) <= 0.03);
	}
}

TEST_CASE("ensemble scoring and report output") {
	EnsembleMatrix e;
	e.start = 10;
	e.members.resize(3, 3);
	e.members << 3, 1, 2, 0, 0, 0, 5, 6, 4;
	const ObservationSeries y = series({2, 1, 5}, 10);
	const ScoreReport r = score_ensemble("raw", y, e);
	CHECK(r.mae == doctest::Approx(1.0 / 3.0));
	CHECK(r.n_scored == 3);
	CHECK(r.crps == doctest::Approx((crps_ensemble(std::vector<double>{1, 2, 3}, 2) + 1.0 +
	                                 crps_ensemble(std::vector<double>{4, 5, 6}, 5)) / 3.0));
	CHECK(r.qs_per_level.size() == 3);

	ReportBundle bundle;
	bundle.baseline = "raw";
	bundle.reports.push_back(r);
	ScoreReport other = r;
	other.method = "other";
	other.mae = 1.0;
	other.crps = r.crps * 0.5;
	other.qs_mean = r.qs_mean * 0.25;
	bundle.reports.push_back(other);
	CHECK(bundle.relative("other").at("crps") == doctest::Approx(0.5));
	CHECK(bundle.relative("other").at("qs_mean") == doctest::Approx(0.25));
	std::ostringstream csv;
	bundle.write_csv(csv);
	CHECK(csv.str().find("other,rs_crps,,0.5") != std::string::npos);
	const auto j = bundle.to_json();
	CHECK(j["reports"].size() == 2);
	CHECK(j["reports"][1]["relative"]["qs_mean"].get<double>() == doctest::Approx(0.25));
}
