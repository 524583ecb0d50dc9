#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "nabqr/baselines.hpp"
#include "oracles.hpp"

using namespace nabqr;

namespace {

struct Data {
	RowMatrix X;
	std::vector<double> y;
};

Data step_data(std::size_t n, std::size_t F, std::uint64_t seed) {
	std::mt19937_64 rng(seed);
	std::uniform_real_distribution<double> u(0.0, 1.0);
	std::normal_distribution<double> g(0.0, 1.0);
	Data d;
	d.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(F));
	d.y.resize(n);
	for (std::size_t i = 0; i < n; ++i) {
		for (std::size_t j = 0; j < F; ++j) {
			d.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = u(rng);
		}
		d.y[i] = (d.X(static_cast<Eigen::Index>(i), 0) > 0.5 ? 10.0 : 0.0) + g(rng);
	}
	return d;
}

std::vector<double> row(const RowMatrix &X, Eigen::Index i) { return {X.row(i).begin(), X.row(i).end()}; }

double train_loss(const BoostModel &m, const Data &d) {
	double s = 0.0;
	for (std::size_t i = 0; i < d.y.size(); ++i) {
		s += oracle::pinball(d.y[i] - m.predict(row(d.X, static_cast<Eigen::Index>(i))), m.tau());
	}
	return s;
}

} // namespace

TEST_CASE("bins follow the training values") {
	RowMatrix X(6, 1);
	X << 3, 1, 2, 2, 5, 4;
	const FeatureBins b = FeatureBins::fit(X, 128);
	CHECK(b.cuts(0) == std::vector<double>{1, 2, 3, 4});
	CHECK(b.bin(0, 0.5) == 0);
	CHECK(b.bin(0, 1.0) == 0);
	CHECK(b.bin(0, 2.5) == 2);
	CHECK(b.bin(0, 9.0) == 4);
	RowMatrix big(1000, 1);
	for (int i = 0; i < 1000; ++i) {
		big(i, 0) = i;
	}
	CHECK(FeatureBins::fit(big, 16).cuts(0).size() <= 15);
}

TEST_CASE("regression tree separates a step and respects its limits") {
	const Data d = step_data(400, 3, 1);
	const FeatureBins b = FeatureBins::fit(d.X);
	const auto codes = b.encode(d.X);
	std::vector<double> w(400, 1.0);
	std::vector<std::size_t> rows(400);
	std::iota(rows.begin(), rows.end(), 0);
	TreeOptions opt;
	opt.max_depth = 1;
	const RegressionTree t = RegressionTree::grow(b, codes, 3, d.y, w, rows, opt, nullptr);
	CHECK(t.leaf_count() == 2);
	CHECK(t.nodes()[0].feature == 0);
	CHECK(t.nodes()[0].threshold == doctest::Approx(0.5).epsilon(0.02));
	opt.max_depth = 6;
	opt.min_leaf = 40;
	const RegressionTree deep = RegressionTree::grow(b, codes, 3, d.y, w, rows, opt, nullptr);
	CHECK(deep.depth() <= 6);
	std::vector<int> count(deep.leaf_count(), 0);
	for (Eigen::Index i = 0; i < 400; ++i) {
		++count[static_cast<std::size_t>(deep.leaf_of(row(d.X, i)))];
	}
	for (int c : count) {
		CHECK(c >= 40);
	}
}

TEST_CASE("forest weights sum to one and quantiles are monotone") {
	const Data d = step_data(500, 6, 2);
	ForestConfig cfg;
	cfg.trees = 25;
	const ForestModel f = qrf_fit(d.X, d.y, cfg);
	std::mt19937_64 rng(5);
	std::uniform_real_distribution<double> u(-0.2, 1.2);
	const QuantileLevels levels = QuantileLevels::nabqr_default();
	for (int q = 0; q < 100; ++q) {
		std::vector<double> x(6);
		for (auto &v : x) {
			v = u(rng);
		}
		double s = 0.0;
		for (const auto &[i, w] : f.weights(x)) {
			s += w;
		}
		CHECK(std::abs(s - 1.0) <= 1e-12);
		const auto p = f.predict(x, levels);
		CHECK(std::is_sorted(p.begin(), p.end()));
		for (std::size_t k = 0; k < levels.size(); k += 4) {
			CHECK(f.predict(x, levels[k]) == p[k]);
		}
	}
	// The step is recovered: queries on either side get medians near 0 and 10.
	std::vector<double> lo(6, 0.2), hi(6, 0.2);
	hi[0] = 0.8;
	CHECK(std::abs(f.predict(lo, 0.5)) < 1.0);
	CHECK(std::abs(f.predict(hi, 0.5) - 10.0) < 1.0);
}

TEST_CASE("forest of one depth-0 tree predicts from the bootstrap sample") {
	const Data d = step_data(60, 2, 3);
	ForestConfig cfg;
	cfg.trees = 1;
	cfg.max_depth = 0;
	const ForestModel f = qrf_fit(d.X, d.y, cfg);
	const std::vector<double> x{0.3, 0.3};
	// Expand the bootstrap sample from the weights: weight * n is each row's multiplicity.
	std::vector<double> sample;
	for (const auto &[i, w] : f.weights(x)) {
		const auto copies = static_cast<int>(std::lround(w * 60.0));
		for (int c = 0; c < copies; ++c) {
			sample.push_back(d.y[i]);
		}
	}
	REQUIRE(sample.size() == 60);
	for (double tau : {0.05, 0.3, 0.5, 0.9}) {
		CHECK(f.predict(x, tau) == empirical_quantile(sample, tau));
	}
}

TEST_CASE("forest leaf examples") {
	// Single tree with one leaf holding responses {1, 2, 3}.
	RegressionTree t = RegressionTree::load(
	    [] {
		    Checkpoint ck("t");
		    ck.put_ints("feature", {-1});
		    ck.put_ints("left", {-1});
		    ck.put_ints("right", {-1});
		    ck.put("threshold", std::vector<double>{0.0});
		    ck.put("value", std::vector<double>{0.0});
		    return ck;
	    }(),
	    "");
	ForestModel::Leaf l;
	l.rows = {0, 1, 2};
	l.counts = {1, 1, 1};
	const ForestModel one = ForestModel::assemble({t}, {{l}}, {1.0, 2.0, 3.0}, 1);
	const std::vector<double> x{0.0};
	CHECK(one.predict(x, 0.5) == 2.0);
	CHECK(one.predict(x, 0.2) == 1.0);
	CHECK(one.predict(x, 1.0 / 3.0) == 1.0);
	const ForestModel three = ForestModel::assemble({t, t, t}, {{l}, {l}, {l}}, {1.0, 2.0, 3.0}, 1);
	for (double tau : {0.1, 0.34, 0.5, 0.67, 0.9}) {
		CHECK(three.predict(x, tau) == one.predict(x, tau));
	}
}

TEST_CASE("constant response gives that constant") {
	Data d = step_data(100, 3, 4);
	std::fill(d.y.begin(), d.y.end(), 7.5);
	ForestConfig cfg;
	cfg.trees = 10;
	const ForestModel f = qrf_fit(d.X, d.y, cfg);
	const BoostModel b = qgb_fit(d.X, d.y, 0.3);
	for (Eigen::Index i = 0; i < 10; ++i) {
		CHECK(f.predict(row(d.X, i), 0.1) == 7.5);
		CHECK(f.predict(row(d.X, i), 0.9) == 7.5);
		CHECK(b.predict(row(d.X, i)) == 7.5);
	}
}

TEST_CASE("boosting loss is nonincreasing and beats the best constant") {
	const Data d = step_data(400, 4, 6);
	for (double tau : {0.1, 0.5, 0.9}) {
		const BoostModel m = qgb_fit(d.X, d.y, tau);
		const auto &loss = m.training_loss();
		REQUIRE(loss.size() == 51);
		for (std::size_t s = 1; s < loss.size(); ++s) {
			CHECK(loss[s] <= loss[s - 1]);
		}
		CHECK(m.initial() == empirical_quantile(d.y, tau));
		CHECK(loss[0] == doctest::Approx(oracle::total_pinball(d.y, oracle::best_constant(d.y, tau), tau)));
		CHECK(loss.back() < loss.front());
		CHECK(train_loss(m, d) == doctest::Approx(loss.back()).epsilon(1e-9));
	}
	BoostConfig leaf;
	leaf.step_mode = BoostStepMode::LeafQuantile;
	const BoostModel lm = qgb_fit(d.X, d.y, 0.7, leaf);
	for (std::size_t s = 1; s < lm.training_loss().size(); ++s) {
		CHECK(lm.training_loss()[s] <= lm.training_loss()[s - 1]);
	}
}

TEST_CASE("boosting with zero stages or zero steps predicts the initial quantile") {
	const Data d = step_data(120, 2, 8);
	BoostConfig none;
	none.stages = 0;
	const BoostModel z = qgb_fit(d.X, d.y, 0.25, none);
	CHECK(z.predict(row(d.X, 3)) == empirical_quantile(d.y, 0.25));
	BoostModel m = qgb_fit(d.X, d.y, 0.25);
	for (auto &s : m.stages()) {
		s.rho = 0.0;
	}
	CHECK(m.predict(row(d.X, 7)) == empirical_quantile(d.y, 0.25));
}

TEST_CASE("uninformative features give the unconditional quantile") {
	std::mt19937_64 rng(10);
	std::normal_distribution<double> g(50.0, 10.0);
	std::uniform_real_distribution<double> u(0.0, 1.0);
	Data d;
	d.X.resize(2000, 5);
	d.y.resize(2000);
	for (Eigen::Index i = 0; i < 2000; ++i) {
		for (Eigen::Index j = 0; j < 5; ++j) {
			d.X(i, j) = u(rng);
		}
		d.y[static_cast<std::size_t>(i)] = g(rng);
	}
	ForestConfig cfg;
	cfg.trees = 50;
	const ForestModel f = qrf_fit(d.X, d.y, cfg);
	for (double tau : {0.1, 0.5, 0.9}) {
		const double truth = empirical_quantile(d.y, tau);
		const BoostModel b = qgb_fit(d.X, d.y, tau);
		for (int q = 0; q < 5; ++q) {
			std::vector<double> x(5);
			for (auto &v : x) {
				v = u(rng);
			}
			CHECK(std::abs(f.predict(x, tau) - truth) <= 0.1 * std::abs(truth));
			CHECK(std::abs(b.predict(x) - truth) <= 0.1 * std::abs(truth));
		}
	}
}

TEST_CASE("model checkpoints round trip") {
	const Data d = step_data(200, 3, 12);
	ForestConfig cfg;
	cfg.trees = 5;
	const ForestModel f = qrf_fit(d.X, d.y, cfg);
	const ForestModel f2 = ForestModel::from_checkpoint(Checkpoint::from_bytes(f.checkpoint().to_bytes()));
	const BoostModel b = qgb_fit(d.X, d.y, 0.6);
	const BoostModel b2 = BoostModel::from_checkpoint(Checkpoint::from_bytes(b.checkpoint().to_bytes()));
	for (Eigen::Index i = 0; i < 20; ++i) {
		CHECK(f.predict(row(d.X, i), 0.3) == f2.predict(row(d.X, i), 0.3));
		CHECK(b.predict(row(d.X, i)) == b2.predict(row(d.X, i)));
	}
	CHECK(b.training_loss() == b2.training_loss());
}

TEST_CASE("fits are deterministic under equal seeds") {
	const Data d = step_data(300, 4, 14);
	ForestConfig cfg;
	cfg.trees = 8;
	const ForestModel a = qrf_fit(d.X, d.y, cfg);
	const ForestModel b = qrf_fit(d.X, d.y, cfg);
	CHECK(a.checkpoint().to_bytes() == b.checkpoint().to_bytes());
	CHECK(qgb_fit(d.X, d.y, 0.4).checkpoint().to_bytes() == qgb_fit(d.X, d.y, 0.4).checkpoint().to_bytes());
}
