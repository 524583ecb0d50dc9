#include "nabqr/baselines.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nabqr/random.hpp"

namespace nabqr {

namespace {

std::span<const double> row_span(const RowMatrix &X, Eigen::Index i) {
	return {X.data() + i * X.cols(), static_cast<std::size_t>(X.cols())};
}

void check_training_data(const RowMatrix &X, std::span<const double> y) {
	if (static_cast<std::size_t>(X.rows()) != y.size()) {
		throw ValidationError("design rows and responses differ in count");
	}
	if (y.size() < 2) {
		throw DomainError("need at least 2 training rows");
	}
	if (!X.allFinite() || !std::all_of(y.begin(), y.end(), [](double v) { return std::isfinite(v); })) {
		throw ValidationError("training data contains non-finite values");
	}
}

} // namespace

ForestModel qrf_fit(const RowMatrix &X, std::span<const double> y, const ForestConfig &config) {
	check_training_data(X, y);
	if (config.trees == 0) {
		throw DomainError("forest needs at least one tree");
	}
	const auto n = static_cast<std::size_t>(X.rows());
	const auto F = static_cast<std::size_t>(X.cols());
	const FeatureBins bins = FeatureBins::fit(X, config.max_bins);
	const std::vector<std::uint8_t> codes = bins.encode(X);

	TreeOptions opt;
	opt.max_depth = config.max_depth;
	opt.min_leaf = config.min_leaf;
	opt.features_per_split = config.features_per_split > 0
	                             ? config.features_per_split
	                             : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(F))));

	ForestModel model;
	model.y_.assign(y.begin(), y.end());
	model.features_ = F;
	Rng rng(config.seed);
	std::vector<double> weight(n);
	for (std::size_t t = 0; t < config.trees; ++t) {
		std::fill(weight.begin(), weight.end(), 0.0);
		if (config.bootstrap) {
			for (std::size_t k = 0; k < n; ++k) {
				weight[rng.index(n)] += 1.0;
			}
		} else {
			std::fill(weight.begin(), weight.end(), 1.0);
		}
		std::vector<std::size_t> rows;
		for (std::size_t i = 0; i < n; ++i) {
			if (weight[i] > 0.0) {
				rows.push_back(i);
			}
		}
		RegressionTree tree = RegressionTree::grow(bins, codes, F, y, weight, rows, opt, &rng);
		std::vector<ForestModel::Leaf> leaves(tree.leaf_count());
		for (std::size_t i : rows) {
			auto &leaf = leaves[static_cast<std::size_t>(tree.leaf_of(row_span(X, static_cast<Eigen::Index>(i))))];
			leaf.rows.push_back(static_cast<std::uint32_t>(i));
			leaf.counts.push_back(static_cast<std::uint32_t>(weight[i]));
			leaf.total += weight[i];
		}
		model.trees_.push_back(std::move(tree));
		model.leaves_.push_back(std::move(leaves));
	}
	return model;
}

ForestModel ForestModel::assemble(std::vector<RegressionTree> trees, std::vector<std::vector<Leaf>> leaves,
                                  std::vector<double> y, std::size_t features) {
	if (trees.empty() || trees.size() != leaves.size()) {
		throw ValidationError("forest needs one leaf table per tree");
	}
	ForestModel m;
	for (std::size_t t = 0; t < trees.size(); ++t) {
		if (leaves[t].size() != trees[t].leaf_count()) {
			throw ValidationError("leaf table size differs from the tree's leaf count");
		}
		for (auto &leaf : leaves[t]) {
			leaf.total = 0.0;
			for (std::size_t k = 0; k < leaf.rows.size(); ++k) {
				if (leaf.rows[k] >= y.size()) {
					throw ValidationError("leaf references a missing training row");
				}
				leaf.total += leaf.counts[k];
			}
		}
	}
	m.trees_ = std::move(trees);
	m.leaves_ = std::move(leaves);
	m.y_ = std::move(y);
	m.features_ = features;
	return m;
}

std::vector<std::pair<std::size_t, double>> ForestModel::weights(std::span<const double> x) const {
	if (x.size() != features_) {
		throw ValidationError("query has " + std::to_string(x.size()) + " features, forest expects " +
		                      std::to_string(features_));
	}
	std::vector<std::pair<std::size_t, double>> w;
	const double per_tree = 1.0 / static_cast<double>(trees_.size());
	std::size_t used = 0;
	for (std::size_t t = 0; t < trees_.size(); ++t) {
		const Leaf &leaf = leaves_[t][static_cast<std::size_t>(trees_[t].leaf_of(x))];
		if (leaf.total <= 0.0) {
			continue;
		}
		++used;
		for (std::size_t k = 0; k < leaf.rows.size(); ++k) {
			w.emplace_back(leaf.rows[k], per_tree * leaf.counts[k] / leaf.total);
		}
	}
	if (used == 0) {
		throw NumericalError("query reached only empty leaves");
	}
	std::sort(w.begin(), w.end());
	std::vector<std::pair<std::size_t, double>> merged;
	for (const auto &[i, v] : w) {
		if (!merged.empty() && merged.back().first == i) {
			merged.back().second += v;
		} else {
			merged.emplace_back(i, v);
		}
	}
	if (used != trees_.size()) {
		// Renormalize over the trees that had a populated leaf.
		const double fix = static_cast<double>(trees_.size()) / static_cast<double>(used);
		for (auto &e : merged) {
			e.second *= fix;
		}
	}
	return merged;
}

std::vector<double> ForestModel::predict(std::span<const double> x, const QuantileLevels &levels) const {
	auto w = weights(x);
	std::sort(w.begin(), w.end(), [this](const auto &a, const auto &b) {
		return y_[a.first] < y_[b.first] || (y_[a.first] == y_[b.first] && a.first < b.first);
	});
	// Accumulated weight sums carry rounding; a level counts as reached within this slack.
	constexpr double slack = 1e-12;
	std::vector<double> out(levels.size());
	std::size_t k = 0;
	double cum = 0.0;
	for (std::size_t q = 0; q < levels.size(); ++q) {
		while (k < w.size()) {
			const double next = cum + w[k].second;
			const double v = y_[w[k].first];
			// Stack tied responses before testing the level.
			if (k + 1 < w.size() && y_[w[k + 1].first] == v) {
				cum = next;
				++k;
				continue;
			}
			if (next >= levels[q] - slack) {
				break;
			}
			cum = next;
			++k;
		}
		out[q] = y_[w[std::min(k, w.size() - 1)].first];
	}
	return out;
}

double ForestModel::predict(std::span<const double> x, double tau) const {
	require_probability(tau);
	return predict(x, QuantileLevels({tau}))[0];
}

Checkpoint ForestModel::checkpoint() const {
	Checkpoint ck("nabqr-qrf");
	ck.meta()["trees"] = trees_.size();
	ck.meta()["features"] = features_;
	ck.put("y", y_);
	for (std::size_t t = 0; t < trees_.size(); ++t) {
		const std::string prefix = "T" + std::to_string(t) + "/";
		trees_[t].save(ck, prefix);
		std::vector<std::int64_t> offsets{0}, rows, counts;
		for (const Leaf &leaf : leaves_[t]) {
			rows.insert(rows.end(), leaf.rows.begin(), leaf.rows.end());
			counts.insert(counts.end(), leaf.counts.begin(), leaf.counts.end());
			offsets.push_back(static_cast<std::int64_t>(rows.size()));
		}
		ck.put_ints(prefix + "leaf_offsets", std::move(offsets));
		ck.put_ints(prefix + "leaf_rows", std::move(rows));
		ck.put_ints(prefix + "leaf_counts", std::move(counts));
	}
	return ck;
}

ForestModel ForestModel::from_checkpoint(const Checkpoint &ck) {
	ck.expect_kind("nabqr-qrf");
	const auto n_trees = ck.meta().at("trees").get<std::size_t>();
	std::vector<RegressionTree> trees;
	std::vector<std::vector<Leaf>> leaves;
	for (std::size_t t = 0; t < n_trees; ++t) {
		const std::string prefix = "T" + std::to_string(t) + "/";
		trees.push_back(RegressionTree::load(ck, prefix));
		const auto &offsets = ck.ints(prefix + "leaf_offsets");
		const auto &rows = ck.ints(prefix + "leaf_rows");
		const auto &counts = ck.ints(prefix + "leaf_counts");
		if (offsets.size() != trees.back().leaf_count() + 1 || rows.size() != counts.size()) {
			throw ValidationError("forest leaf tables are inconsistent");
		}
		std::vector<Leaf> table(trees.back().leaf_count());
		for (std::size_t l = 0; l < table.size(); ++l) {
			for (auto k = offsets[l]; k < offsets[l + 1]; ++k) {
				table[l].rows.push_back(static_cast<std::uint32_t>(rows[static_cast<std::size_t>(k)]));
				table[l].counts.push_back(static_cast<std::uint32_t>(counts[static_cast<std::size_t>(k)]));
			}
		}
		leaves.push_back(std::move(table));
	}
	return assemble(std::move(trees), std::move(leaves), ck.values("y"), ck.meta().at("features").get<std::size_t>());
}

namespace {

double total_check_loss(std::span<const double> y, const std::vector<double> &f, const std::vector<double> &h,
                        double rho, double tau) {
	double s = 0.0;
	for (std::size_t i = 0; i < y.size(); ++i) {
		const double r = y[i] - f[i] - rho * h[i];
		s += r < 0.0 ? r * (tau - 1.0) : r * tau;
	}
	return s;
}

} // namespace

BoostModel qgb_fit(const RowMatrix &X, std::span<const double> y, double tau, const BoostConfig &config) {
	require_probability(tau);
	check_training_data(X, y);
	if (!(config.learning_rate > 0.0 && config.learning_rate <= 1.0)) {
		throw DomainError("learning rate must lie in (0, 1]");
	}
	const auto n = static_cast<std::size_t>(X.rows());
	const auto F = static_cast<std::size_t>(X.cols());
	const FeatureBins bins = FeatureBins::fit(X, config.max_bins);
	const std::vector<std::uint8_t> codes = bins.encode(X);
	TreeOptions opt;
	opt.max_depth = config.max_depth;
	opt.min_leaf = config.min_leaf;

	BoostModel model;
	model.tau_ = tau;
	model.learning_rate_ = config.learning_rate;
	model.f0_ = empirical_quantile(y, tau);

	// Pseudo-residual trees output values in [tau-1, tau]; the step bracket is stated in units of the
	// response spread so it means the same thing in MW or per-unit data.
	const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
	double var = 0.0;
	for (double v : y) {
		var += (v - mean) * (v - mean);
	}
	const double spread = std::sqrt(var / static_cast<double>(n));
	const double rho_hi = config.rho_max * (spread > 0.0 ? spread : 1.0);

	std::vector<double> f(n, model.f0_), h(n), pseudo(n), resid;
	const std::vector<double> unit(n, 1.0);
	std::vector<std::size_t> all(n);
	std::iota(all.begin(), all.end(), 0);
	model.loss_.push_back(total_check_loss(y, f, h, 0.0, tau));
	bool warned = false;

	for (std::size_t m = 0; m < config.stages; ++m) {
		for (std::size_t i = 0; i < n; ++i) {
			pseudo[i] = y[i] > f[i] ? tau : tau - 1.0;
		}
		RegressionTree tree = RegressionTree::grow(bins, codes, F, pseudo, unit, all, opt, nullptr);
		std::vector<int> leaf(n);
		for (std::size_t i = 0; i < n; ++i) {
			leaf[i] = tree.leaf_of(row_span(X, static_cast<Eigen::Index>(i)));
		}
		double rho = 1.0;
		if (config.step_mode == BoostStepMode::LeafQuantile) {
			std::vector<std::vector<double>> per_leaf(tree.leaf_count());
			for (std::size_t i = 0; i < n; ++i) {
				per_leaf[static_cast<std::size_t>(leaf[i])].push_back(y[i] - f[i]);
			}
			for (std::size_t l = 0; l < per_leaf.size(); ++l) {
				tree.set_leaf_value(static_cast<int>(l), per_leaf[l].empty() ? 0.0 : empirical_quantile(per_leaf[l], tau));
			}
			for (std::size_t i = 0; i < n; ++i) {
				h[i] = tree.predict(row_span(X, static_cast<Eigen::Index>(i)));
			}
		} else {
			for (std::size_t i = 0; i < n; ++i) {
				h[i] = tree.predict(row_span(X, static_cast<Eigen::Index>(i)));
			}
			// Golden-section search on the convex loss over [0, rho_hi].
			constexpr double inv_phi = 0.6180339887498949;
			double a = 0.0, b = rho_hi;
			double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
			double fc = total_check_loss(y, f, h, c, tau), fd = total_check_loss(y, f, h, d, tau);
			for (int it = 0; it < 80 && b - a > 1e-10 * rho_hi; ++it) {
				if (fc <= fd) {
					b = d;
					d = c;
					fd = fc;
					c = b - inv_phi * (b - a);
					fc = total_check_loss(y, f, h, c, tau);
				} else {
					a = c;
					c = d;
					fc = fd;
					d = a + inv_phi * (b - a);
					fd = total_check_loss(y, f, h, d, tau);
				}
			}
			rho = 0.5 * (a + b);
			// rho = 0 is always in the bracket; never accept a step that loses to it.
			if (total_check_loss(y, f, h, rho, tau) > model.loss_.back()) {
				rho = 0.0;
			}
			if (rho >= rho_hi * (1.0 - 1e-6) && !warned) {
				spdlog::warn("boosting line search hit the upper bracket at stage {} (tau {})", m + 1, tau);
				warned = true;
			}
		}
		const double step = config.learning_rate * rho;
		for (std::size_t i = 0; i < n; ++i) {
			f[i] += step * h[i];
		}
		double loss = total_check_loss(y, f, h, 0.0, tau);
		if (loss > model.loss_.back()) {
			// Rounding in the update can exceed the previous loss by ulps; undo the stage.
			for (std::size_t i = 0; i < n; ++i) {
				f[i] -= step * h[i];
			}
			rho = 0.0;
			loss = total_check_loss(y, f, h, 0.0, tau);
		}
		model.stages_.push_back({std::move(tree), rho});
		model.loss_.push_back(loss);
	}
	return model;
}

double BoostModel::predict(std::span<const double> x) const {
	double f = f0_;
	for (const Stage &s : stages_) {
		f += learning_rate_ * s.rho * s.tree.predict(x);
	}
	return f;
}

Checkpoint BoostModel::checkpoint() const {
	Checkpoint ck("nabqr-qgb");
	ck.meta()["tau"] = tau_;
	ck.meta()["initial"] = f0_;
	ck.meta()["learning_rate"] = learning_rate_;
	ck.meta()["stages"] = stages_.size();
	std::vector<double> rho;
	for (std::size_t m = 0; m < stages_.size(); ++m) {
		stages_[m].tree.save(ck, "S" + std::to_string(m) + "/");
		rho.push_back(stages_[m].rho);
	}
	ck.put("rho", std::move(rho));
	ck.put("training_loss", loss_);
	return ck;
}

BoostModel BoostModel::from_checkpoint(const Checkpoint &ck) {
	ck.expect_kind("nabqr-qgb");
	BoostModel m;
	m.tau_ = ck.meta().at("tau").get<double>();
	m.f0_ = ck.meta().at("initial").get<double>();
	m.learning_rate_ = ck.meta().at("learning_rate").get<double>();
	const auto n = ck.meta().at("stages").get<std::size_t>();
	const auto &rho = ck.values("rho");
	if (rho.size() != n) {
		throw ValidationError("boosting checkpoint has inconsistent stage arrays");
	}
	for (std::size_t s = 0; s < n; ++s) {
		m.stages_.push_back({RegressionTree::load(ck, "S" + std::to_string(s) + "/"), rho[s]});
	}
	m.loss_ = ck.values("training_loss");
	return m;
}

std::vector<double> BoostBank::predict(std::span<const double> x) const {
	std::vector<double> out;
	out.reserve(models.size());
	for (const auto &m : models) {
		out.push_back(m.predict(x));
	}
	return out;
}

BoostBank qgb_fit_levels(const RowMatrix &X, std::span<const double> y, const QuantileLevels &levels,
                         const BoostConfig &config) {
	BoostBank bank;
	for (double tau : levels) {
		bank.models.push_back(qgb_fit(X, y, tau, config));
	}
	return bank;
}

} // namespace nabqr
