#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nabqr/errors.hpp"

namespace nabqr {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = std::vector<bool>;

/// Hours since 1970-01-01T00:00Z. Every series in the library lives on this hourly UTC grid.
using HourStamp = std::int64_t;

HourStamp parse_timestamp(std::string_view iso);
std::string format_timestamp(HourStamp hour);
inline int hour_of_day(HourStamp hour) { return static_cast<int>(((hour % 24) + 24) % 24); }

/// Strictly increasing probabilities in the open unit interval.
class QuantileLevels {
public:
	QuantileLevels() = default;
	explicit QuantileLevels(std::vector<double> levels);

	/// The 13 evaluation levels used for published forecasts.
	static QuantileLevels nabqr_default();
	/// `count` equidistant levels spanning [lo, hi] inclusive.
	static QuantileLevels equidistant(std::size_t count, double lo = 0.05, double hi = 0.95);

	std::size_t size() const noexcept { return levels_.size(); }
	bool empty() const noexcept { return levels_.empty(); }
	double operator[](std::size_t i) const { return levels_[i]; }
	const std::vector<double> &values() const noexcept { return levels_; }
	auto begin() const noexcept { return levels_.begin(); }
	auto end() const noexcept { return levels_.end(); }
	/// Index of `level` within 1e-12, or -1.
	long index_of(double level) const noexcept;

	bool operator==(const QuantileLevels &) const = default;

private:
	std::vector<double> levels_;
};

struct ObservationSeries {
	HourStamp start = 0;
	std::vector<double> values;
	Mask valid;

	std::size_t size() const noexcept { return values.size(); }
	HourStamp time(std::size_t i) const noexcept { return start + static_cast<HourStamp>(i); }
	std::size_t valid_count() const noexcept;
	/// Throws ValidationError when the mask length differs or a valid value is non-finite.
	void check() const;
};

struct EnsembleMatrix {
	HourStamp start = 0;
	RowMatrix members; ///< T x M, MW
	bool sorted = false;

	std::size_t rows() const noexcept { return static_cast<std::size_t>(members.rows()); }
	std::size_t member_count() const noexcept { return static_cast<std::size_t>(members.cols()); }
	HourStamp time(std::size_t i) const noexcept { return start + static_cast<HourStamp>(i); }
	void check() const;
};

/// T x Q matrix of predicted quantiles at fixed nominal levels.
struct QuantileForecast {
	HourStamp start = 0;
	QuantileLevels levels;
	RowMatrix values;                 ///< T x Q, MW
	std::vector<HourStamp> issue_time; ///< per row; empty when not tracked
	bool crossing_repaired = false;
	Mask repaired_rows; ///< per row: whether rearrangement changed it

	std::size_t rows() const noexcept { return static_cast<std::size_t>(values.rows()); }
	HourStamp time(std::size_t i) const noexcept { return start + static_cast<HourStamp>(i); }
	/// Column of the given level; throws DomainError when absent.
	Eigen::VectorXd column(double level) const;
};

/// Pinball loss m * (tau - 1{m < 0}).
double check_loss(double residual, double tau);

/// Left-continuous inverse of the empirical CDF: smallest v with #{x <= v}/n >= tau.
double empirical_quantile(std::span<const double> sample, double tau);
/// Same on an already nondecreasing sample.
double empirical_quantile_sorted(std::span<const double> sorted, double tau);
/// 1-based rank k of the order statistic returned by empirical_quantile for sample size n.
std::size_t quantile_rank(std::size_t n, double tau);

EnsembleMatrix sort_rows(EnsembleMatrix ensembles);
bool rows_nondecreasing(const RowMatrix &m);

void require_probability(double tau, const char *what = "tau");

} // namespace nabqr
