#include "nabqr/trees.hpp"

#include <algorithm>
#include <numeric>

namespace nabqr {

FeatureBins FeatureBins::fit(const RowMatrix &X, std::size_t max_bins) {
	if (max_bins < 2 || max_bins > 256) {
		throw DomainError("bin count must lie in [2, 256]");
	}
	FeatureBins fb;
	fb.cuts_.resize(static_cast<std::size_t>(X.cols()));
	std::vector<double> col;
	for (Eigen::Index j = 0; j < X.cols(); ++j) {
		col.assign(X.col(j).begin(), X.col(j).end());
		std::sort(col.begin(), col.end());
		col.erase(std::unique(col.begin(), col.end()), col.end());
		auto &cuts = fb.cuts_[static_cast<std::size_t>(j)];
		// The largest value never needs a cut: everything is <= it.
		const std::size_t candidates = col.empty() ? 0 : col.size() - 1;
		if (candidates <= max_bins - 1) {
			cuts.assign(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(candidates));
		} else {
			for (std::size_t b = 1; b < max_bins; ++b) {
				cuts.push_back(col[b * candidates / max_bins]);
			}
			cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
		}
	}
	return fb;
}

std::uint8_t FeatureBins::bin(std::size_t feature, double value) const {
	const auto &c = cuts_[feature];
	return static_cast<std::uint8_t>(std::lower_bound(c.begin(), c.end(), value) - c.begin());
}

std::vector<std::uint8_t> FeatureBins::encode(const RowMatrix &X) const {
	if (static_cast<std::size_t>(X.cols()) != cuts_.size()) {
		throw ValidationError("feature count differs from the fitted bins");
	}
	std::vector<std::uint8_t> codes(static_cast<std::size_t>(X.size()));
	const std::size_t F = cuts_.size();
	for (Eigen::Index i = 0; i < X.rows(); ++i) {
		for (std::size_t j = 0; j < F; ++j) {
			codes[static_cast<std::size_t>(i) * F + j] = bin(j, X(i, static_cast<Eigen::Index>(j)));
		}
	}
	return codes;
}

namespace {

struct Builder {
	const FeatureBins &bins;
	const std::vector<std::uint8_t> &codes;
	std::size_t n_features;
	std::span<const double> target;
	std::span<const double> weight;
	TreeOptions options;
	Rng *rng;
	std::vector<RegressionTree::Node> nodes;
	std::vector<std::size_t> feature_pool;
	std::vector<double> hist_w, hist_s;

	int build(std::vector<std::size_t> &rows, std::size_t depth) {
		double W = 0.0, S = 0.0;
		for (std::size_t r : rows) {
			W += weight[r];
			S += weight[r] * target[r];
		}
		const int id = static_cast<int>(nodes.size());
		nodes.push_back({});
		nodes[static_cast<std::size_t>(id)].value = W > 0.0 ? S / W : 0.0;
		if (depth >= options.max_depth || W < 2.0 * options.min_leaf) {
			return id;
		}

		std::size_t n_try = n_features;
		if (options.features_per_split > 0 && options.features_per_split < n_features) {
			n_try = options.features_per_split;
			// Partial Fisher-Yates: the first n_try entries become the sample.
			for (std::size_t k = 0; k < n_try; ++k) {
				std::swap(feature_pool[k], feature_pool[k + rng->index(n_features - k)]);
			}
		}
		const double parent = S * S / W;
		double best_gain = 1e-12 * (1.0 + std::abs(parent));
		int best_feature = -1;
		std::size_t best_bin = 0;
		for (std::size_t k = 0; k < n_try; ++k) {
			const std::size_t f = n_try == n_features ? k : feature_pool[k];
			const std::size_t nb = bins.cuts(f).size() + 1;
			if (nb < 2) {
				continue;
			}
			hist_w.assign(nb, 0.0);
			hist_s.assign(nb, 0.0);
			for (std::size_t r : rows) {
				const std::uint8_t b = codes[r * n_features + f];
				hist_w[b] += weight[r];
				hist_s[b] += weight[r] * target[r];
			}
			double wl = 0.0, sl = 0.0;
			for (std::size_t b = 0; b + 1 < nb; ++b) {
				wl += hist_w[b];
				sl += hist_s[b];
				const double wr = W - wl;
				if (wl < options.min_leaf || hist_w[b] == 0.0) {
					continue;
				}
				if (wr < options.min_leaf) {
					break;
				}
				const double sr = S - sl;
				const double gain = sl * sl / wl + sr * sr / wr - parent;
				if (gain > best_gain) {
					best_gain = gain;
					best_feature = static_cast<int>(f);
					best_bin = b;
				}
			}
		}
		if (best_feature < 0) {
			return id;
		}

		const auto f = static_cast<std::size_t>(best_feature);
		std::vector<std::size_t> left, right;
		for (std::size_t r : rows) {
			(codes[r * n_features + f] <= best_bin ? left : right).push_back(r);
		}
		rows.clear();
		rows.shrink_to_fit();
		nodes[static_cast<std::size_t>(id)].feature = best_feature;
		nodes[static_cast<std::size_t>(id)].threshold = bins.cuts(f)[best_bin];
		const int l = build(left, depth + 1);
		const int r = build(right, depth + 1);
		nodes[static_cast<std::size_t>(id)].left = l;
		nodes[static_cast<std::size_t>(id)].right = r;
		return id;
	}
};

} // namespace

RegressionTree RegressionTree::grow(const FeatureBins &bins, const std::vector<std::uint8_t> &codes,
                                    std::size_t n_features, std::span<const double> target,
                                    std::span<const double> weight, std::vector<std::size_t> rows,
                                    const TreeOptions &options, Rng *rng) {
	if (options.features_per_split > 0 && options.features_per_split < n_features && rng == nullptr) {
		throw ValidationError("feature subsampling needs a random generator");
	}
	Builder b{bins, codes, n_features, target, weight, options, rng, {}, {}, {}, {}};
	b.feature_pool.resize(n_features);
	std::iota(b.feature_pool.begin(), b.feature_pool.end(), 0);
	b.build(rows, 0);
	RegressionTree t;
	t.nodes_ = std::move(b.nodes);
	for (std::size_t i = 0; i < t.nodes_.size(); ++i) {
		if (t.nodes_[i].feature < 0) {
			t.nodes_[i].leaf = static_cast<int>(t.leaves_++);
			t.leaf_node_.push_back(static_cast<int>(i));
		}
	}
	return t;
}

std::size_t RegressionTree::node_of(std::span<const double> x) const {
	std::size_t i = 0;
	while (nodes_[i].feature >= 0) {
		const Node &n = nodes_[i];
		i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
	}
	return i;
}

int RegressionTree::leaf_of(std::span<const double> x) const { return nodes_[node_of(x)].leaf; }

void RegressionTree::set_leaf_value(int leaf, double value) {
	nodes_[static_cast<std::size_t>(leaf_node_.at(static_cast<std::size_t>(leaf)))].value = value;
}

std::size_t RegressionTree::depth() const {
	std::vector<std::size_t> d(nodes_.size(), 0);
	std::size_t best = 0;
	for (std::size_t i = 0; i < nodes_.size(); ++i) {
		best = std::max(best, d[i]);
		if (nodes_[i].feature >= 0) {
			d[static_cast<std::size_t>(nodes_[i].left)] = d[i] + 1;
			d[static_cast<std::size_t>(nodes_[i].right)] = d[i] + 1;
		}
	}
	return best;
}

void RegressionTree::save(Checkpoint &ck, const std::string &prefix) const {
	std::vector<std::int64_t> feature, left, right;
	std::vector<double> threshold, value;
	for (const Node &n : nodes_) {
		feature.push_back(n.feature);
		left.push_back(n.left);
		right.push_back(n.right);
		threshold.push_back(n.threshold);
		value.push_back(n.value);
	}
	ck.put_ints(prefix + "feature", std::move(feature));
	ck.put_ints(prefix + "left", std::move(left));
	ck.put_ints(prefix + "right", std::move(right));
	ck.put(prefix + "threshold", std::move(threshold));
	ck.put(prefix + "value", std::move(value));
}

RegressionTree RegressionTree::load(const Checkpoint &ck, const std::string &prefix) {
	const auto &feature = ck.ints(prefix + "feature");
	const auto &left = ck.ints(prefix + "left");
	const auto &right = ck.ints(prefix + "right");
	const auto &threshold = ck.values(prefix + "threshold");
	const auto &value = ck.values(prefix + "value");
	const std::size_t n = feature.size();
	if (left.size() != n || right.size() != n || threshold.size() != n || value.size() != n || n == 0) {
		throw ValidationError("tree '" + prefix + "' has inconsistent node arrays");
	}
	RegressionTree t;
	for (std::size_t i = 0; i < n; ++i) {
		Node node;
		node.feature = static_cast<int>(feature[i]);
		node.left = static_cast<int>(left[i]);
		node.right = static_cast<int>(right[i]);
		node.threshold = threshold[i];
		node.value = value[i];
		if (node.feature >= 0 && (node.left <= static_cast<int>(i) || node.right <= static_cast<int>(i) ||
		                          node.left >= static_cast<int>(n) || node.right >= static_cast<int>(n))) {
			throw ValidationError("tree '" + prefix + "' has an invalid child index");
		}
		if (node.feature < 0) {
			node.leaf = static_cast<int>(t.leaves_++);
			t.leaf_node_.push_back(static_cast<int>(i));
		}
		t.nodes_.push_back(node);
	}
	return t;
}

} // namespace nabqr
