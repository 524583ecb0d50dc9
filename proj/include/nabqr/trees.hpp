#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nabqr/checkpoint.hpp"
#include "nabqr/core.hpp"
#include "nabqr/random.hpp"

namespace nabqr {

/// Per-feature cut points; a value falls in bin b when it is <= cut b and > cut b-1.
class FeatureBins {
public:
	FeatureBins() = default;
	/// At most max_bins bins per feature, cut at order statistics of the training values.
	static FeatureBins fit(const RowMatrix &X, std::size_t max_bins = 128);

	std::size_t features() const noexcept { return cuts_.size(); }
	const std::vector<double> &cuts(std::size_t feature) const { return cuts_[feature]; }
	std::uint8_t bin(std::size_t feature, double value) const;
	/// n x F bin codes, row-major.
	std::vector<std::uint8_t> encode(const RowMatrix &X) const;

private:
	std::vector<std::vector<double>> cuts_;
};

struct TreeOptions {
	std::size_t max_depth = 3;
	/// Minimum total weight on each side of a split.
	double min_leaf = 5.0;
	/// Features drawn per split; 0 means all.
	std::size_t features_per_split = 0;
};

/// Binary regression tree with variance-reduction splits on binned features.
class RegressionTree {
public:
	struct Node {
		int feature = -1; ///< -1 for leaves
		double threshold = 0.0;
		int left = -1, right = -1;
		double value = 0.0;
		int leaf = -1; ///< leaf ordinal for leaves
	};

	/// Grows on `rows` (with per-row weights, 0 for absent rows) against `target`.
	/// rng is used only when options.features_per_split > 0.
	static RegressionTree grow(const FeatureBins &bins, const std::vector<std::uint8_t> &codes, std::size_t n_features,
	                           std::span<const double> target, std::span<const double> weight,
	                           std::vector<std::size_t> rows, const TreeOptions &options, Rng *rng);

	std::size_t leaf_count() const noexcept { return leaves_; }
	const std::vector<Node> &nodes() const noexcept { return nodes_; }
	std::vector<Node> &nodes() noexcept { return nodes_; }
	std::size_t depth() const;

	/// Leaf ordinal reached by x.
	int leaf_of(std::span<const double> x) const;
	double predict(std::span<const double> x) const { return nodes_[node_of(x)].value; }
	void set_leaf_value(int leaf, double value);

	void save(Checkpoint &ck, const std::string &prefix) const;
	static RegressionTree load(const Checkpoint &ck, const std::string &prefix);

private:
	std::size_t node_of(std::span<const double> x) const;

	std::vector<Node> nodes_;
	std::size_t leaves_ = 0;
	std::vector<int> leaf_node_;
};

} // namespace nabqr
