#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "nabqr/checkpoint.hpp"
#include "nabqr/core.hpp"
#include "nabqr/trees.hpp"

namespace nabqr {

struct ForestConfig {
	std::size_t trees = 100;
	std::size_t max_depth = 32;
	double min_leaf = 5.0;
	/// 0 selects ceil(sqrt(F)).
	std::size_t features_per_split = 0;
	std::size_t max_bins = 128;
	std::uint64_t seed = 1;
	/// Resample rows with replacement per tree; off grows every tree on all rows.
	bool bootstrap = true;
};

/// Quantile regression forest: each leaf keeps the training rows (with bootstrap multiplicity)
/// that fell into it, and predictions invert the forest-weighted empirical CDF.
class ForestModel {
public:
	struct Leaf {
		std::vector<std::uint32_t> rows;
		std::vector<std::uint32_t> counts;
		double total = 0.0;
	};

	std::size_t tree_count() const noexcept { return trees_.size(); }
	std::size_t training_size() const noexcept { return y_.size(); }
	const std::vector<double> &training_response() const noexcept { return y_; }

	/// Nonzero forest weights w_i(x) as (training row, weight), ordered by row.
	std::vector<std::pair<std::size_t, double>> weights(std::span<const double> x) const;
	/// inf { y : sum_i w_i(x) 1(y_i <= y) >= tau }.
	double predict(std::span<const double> x, double tau) const;
	/// One value per level, nondecreasing in the level.
	std::vector<double> predict(std::span<const double> x, const QuantileLevels &levels) const;

	Checkpoint checkpoint() const;
	static ForestModel from_checkpoint(const Checkpoint &ck);

	/// Builds a forest from explicit trees and leaf contents (tests, duplication).
	static ForestModel assemble(std::vector<RegressionTree> trees, std::vector<std::vector<Leaf>> leaves,
	                            std::vector<double> y, std::size_t features);

	friend ForestModel qrf_fit(const RowMatrix &X, std::span<const double> y, const ForestConfig &config);

private:
	std::vector<RegressionTree> trees_;
	std::vector<std::vector<Leaf>> leaves_; ///< per tree, per leaf ordinal
	std::vector<double> y_;
	std::size_t features_ = 0;
};

ForestModel qrf_fit(const RowMatrix &X, std::span<const double> y, const ForestConfig &config = {});

enum class BoostStepMode { GlobalLineSearch, LeafQuantile };

struct BoostConfig {
	std::size_t stages = 50;
	double learning_rate = 0.1;
	std::size_t max_depth = 3;
	double min_leaf = 5.0;
	std::size_t max_bins = 128;
	/// Upper end of the step-size bracket, in units of the response scale.
	double rho_max = 10.0;
	BoostStepMode step_mode = BoostStepMode::GlobalLineSearch;
};

/// Quantile gradient boosting: F_0 is the empirical quantile, each stage adds rho * tree fitted to
/// the check-loss pseudo-residuals, shrunk by the learning rate.
class BoostModel {
public:
	struct Stage {
		RegressionTree tree;
		double rho = 0.0;
	};

	double tau() const noexcept { return tau_; }
	double initial() const noexcept { return f0_; }
	const std::vector<Stage> &stages() const noexcept { return stages_; }
	std::vector<Stage> &stages() noexcept { return stages_; }
	/// Total training check loss before the first stage and after each stage.
	const std::vector<double> &training_loss() const noexcept { return loss_; }

	double predict(std::span<const double> x) const;

	Checkpoint checkpoint() const;
	static BoostModel from_checkpoint(const Checkpoint &ck);

	friend BoostModel qgb_fit(const RowMatrix &X, std::span<const double> y, double tau, const BoostConfig &config);

private:
	double tau_ = 0.5;
	double f0_ = 0.0;
	double learning_rate_ = 0.1;
	std::vector<Stage> stages_;
	std::vector<double> loss_;
};

BoostModel qgb_fit(const RowMatrix &X, std::span<const double> y, double tau, const BoostConfig &config = {});

/// One boosting model per level.
struct BoostBank {
	std::vector<BoostModel> models;
	std::vector<double> predict(std::span<const double> x) const;
};

BoostBank qgb_fit_levels(const RowMatrix &X, std::span<const double> y, const QuantileLevels &levels,
                         const BoostConfig &config = {});

} // namespace nabqr
