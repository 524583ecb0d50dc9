#pragma once

#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nabqr/core.hpp"

namespace nabqr {

/// Mean |y - y_hat| over positions where `valid` is set (all positions when empty).
double mae(std::span<const double> y, std::span<const double> y_hat, const Mask &valid = {});

/// CRPS of the empirical step CDF of `members` (jumps of 1/M, ties stacked) against y.
/// Members need not be sorted.
double crps_ensemble(std::span<const double> members, double y);

/// Middle order statistic of a sorted row: the single middle member for odd M, the mean of the two
/// middle members for even M.
double median_member(std::span<const double> sorted);

/// M equidistant levels from 0.05 to 0.95 inclusive, the nominal levels of an M-member ensemble.
QuantileLevels ensemble_level_assumption(std::size_t members);

double relative_score(double model, double baseline);

struct QuantileScores {
	std::vector<double> per_level;
	double mean = 0.0;
};

/// QS per level and its mean over levels, against the valid observations covered by the forecast.
QuantileScores quantile_score(const ObservationSeries &y, const QuantileForecast &forecast);
/// Share of valid observations at or below each level's forecast.
std::vector<double> reliability(const ObservationSeries &y, const QuantileForecast &forecast);

struct ScoreReport {
	std::string method;
	double mae = 0.0;
	double crps = 0.0;
	double qs_mean = 0.0;
	std::map<double, double> qs_per_level;
	std::map<double, double> reliability;
	std::size_t n_scored = 0;

	/// max over levels of |observed frequency - level|.
	double max_reliability_deviation() const;
	nlohmann::json to_json() const;
};

/// Scores a quantile forecast: MAE against the 0.5 level (the middle level when 0.5 is absent),
/// CRPS treating the level values as an equally weighted ensemble, QS and reliability per level.
ScoreReport score_quantiles(const std::string &method, const ObservationSeries &y, const QuantileForecast &forecast);

/// Scores an ensemble: MAE of the median member, CRPS of the members, and QS/reliability with the
/// sorted members read as quantiles at ensemble_level_assumption(M).
ScoreReport score_ensemble(const std::string &method, const ObservationSeries &y, const EnsembleMatrix &ensemble);

/// Sorted members as a quantile forecast at the assumed ensemble levels.
QuantileForecast ensemble_as_quantiles(const EnsembleMatrix &ensemble);

/// Reports for several methods plus relative scores against one baseline row.
struct ReportBundle {
	std::string baseline;
	std::vector<ScoreReport> reports;

	const ScoreReport &find(const std::string &method) const;
	/// {mae, crps, qs_mean} relative to the baseline row.
	std::map<std::string, double> relative(const std::string &method) const;
	nlohmann::json to_json() const;
	/// One line per method x metric x level: method,metric,level,value (level empty for scalars).
	void write_csv(std::ostream &out) const;
};

} // namespace nabqr
