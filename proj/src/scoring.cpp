#include "nabqr/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>

namespace nabqr {

double mae(std::span<const double> y, std::span<const double> y_hat, const Mask &valid) {
	if (y.size() != y_hat.size() || (!valid.empty() && valid.size() != y.size())) {
		throw ValidationError("mae: series lengths differ");
	}
	double s = 0.0;
	std::size_t n = 0;
	for (std::size_t i = 0; i < y.size(); ++i) {
		if (valid.empty() || valid[i]) {
			s += std::abs(y[i] - y_hat[i]);
			++n;
		}
	}
	if (n == 0) {
		throw DomainError("mae: no valid pairs");
	}
	return s / static_cast<double>(n);
}

double crps_ensemble(std::span<const double> members, double y) {
	if (members.empty()) {
		throw DomainError("crps of an empty ensemble");
	}
	std::vector<double> x(members.begin(), members.end());
	std::sort(x.begin(), x.end());
	const double m = static_cast<double>(x.size());
	// Integrate (F(z) - 1{z >= y})^2 segment by segment; F is constant between members.
	double total = 0.0;
	if (y < x.front()) {
		total += x.front() - y; // F = 0 against the observation step at 1
	}
	for (std::size_t i = 0; i + 1 < x.size(); ++i) {
		const double a = x[i], b = x[i + 1];
		if (b <= a) {
			continue;
		}
		const double f = static_cast<double>(i + 1) / m;
		const double below = std::clamp(y, a, b) - a; // part of [a, b) left of y
		const double above = (b - a) - below;
		total += f * f * below + (1.0 - f) * (1.0 - f) * above;
	}
	if (y > x.back()) {
		total += y - x.back(); // F = 1 below the observation
	}
	return total;
}

double median_member(std::span<const double> sorted) {
	if (sorted.empty()) {
		throw DomainError("median of an empty row");
	}
	const std::size_t m = sorted.size();
	return m % 2 == 1 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
}

QuantileLevels ensemble_level_assumption(std::size_t members) {
	if (members < 2) {
		throw DomainError("ensemble level assumption needs at least 2 members");
	}
	return QuantileLevels::equidistant(members, 0.05, 0.95);
}

double relative_score(double model, double baseline) {
	if (!(baseline > 0.0)) {
		throw DomainError("relative score needs a positive baseline score");
	}
	return model / baseline;
}

namespace {

// Index into y of forecast row r, or npos when outside the observation range or masked.
constexpr std::size_t npos = static_cast<std::size_t>(-1);

std::size_t observation_index(const ObservationSeries &y, HourStamp t) {
	if (t < y.start || t >= y.start + static_cast<HourStamp>(y.size())) {
		return npos;
	}
	const auto i = static_cast<std::size_t>(t - y.start);
	return y.valid[i] ? i : npos;
}

template <typename Fn> std::size_t for_each_scored(const ObservationSeries &y, HourStamp start, std::size_t rows, Fn fn) {
	std::size_t n = 0;
	for (std::size_t r = 0; r < rows; ++r) {
		const std::size_t i = observation_index(y, start + static_cast<HourStamp>(r));
		if (i != npos) {
			fn(r, y.values[i]);
			++n;
		}
	}
	if (n == 0) {
		throw DomainError("no valid observation overlaps the forecast");
	}
	return n;
}

} // namespace

QuantileScores quantile_score(const ObservationSeries &y, const QuantileForecast &f) {
	if (f.levels.empty()) {
		throw DomainError("forecast has no levels");
	}
	QuantileScores qs;
	qs.per_level.assign(f.levels.size(), 0.0);
	const std::size_t n = for_each_scored(y, f.start, f.rows(), [&](std::size_t r, double obs) {
		for (std::size_t q = 0; q < f.levels.size(); ++q) {
			qs.per_level[q] += check_loss(obs - f.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(q)), f.levels[q]);
		}
	});
	double sum = 0.0;
	for (double &v : qs.per_level) {
		v /= static_cast<double>(n);
		sum += v;
	}
	qs.mean = sum / static_cast<double>(qs.per_level.size());
	return qs;
}

std::vector<double> reliability(const ObservationSeries &y, const QuantileForecast &f) {
	std::vector<double> hits(f.levels.size(), 0.0);
	const std::size_t n = for_each_scored(y, f.start, f.rows(), [&](std::size_t r, double obs) {
		for (std::size_t q = 0; q < f.levels.size(); ++q) {
			hits[q] += obs <= f.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(q)) ? 1.0 : 0.0;
		}
	});
	for (double &h : hits) {
		h /= static_cast<double>(n);
	}
	return hits;
}

double ScoreReport::max_reliability_deviation() const {
	double d = 0.0;
	for (const auto &[level, freq] : reliability) {
		d = std::max(d, std::abs(freq - level));
	}
	return d;
}

nlohmann::json ScoreReport::to_json() const {
	nlohmann::json j;
	j["method"] = method;
	j["mae"] = mae;
	j["crps"] = crps;
	j["qs_mean"] = qs_mean;
	j["n_scored"] = n_scored;
	j["max_reliability_deviation"] = max_reliability_deviation();
	nlohmann::json qs = nlohmann::json::array(), rel = nlohmann::json::array();
	for (const auto &[level, v] : qs_per_level) {
		qs.push_back({{"level", level}, {"value", v}});
	}
	for (const auto &[level, v] : reliability) {
		rel.push_back({{"level", level}, {"frequency", v}});
	}
	j["qs_per_level"] = std::move(qs);
	j["reliability"] = std::move(rel);
	return j;
}

ScoreReport score_quantiles(const std::string &method, const ObservationSeries &y, const QuantileForecast &f) {
	ScoreReport rep;
	rep.method = method;
	const long mid = f.levels.index_of(0.5) >= 0 ? f.levels.index_of(0.5) : static_cast<long>(f.levels.size() / 2);
	double abs_sum = 0.0, crps_sum = 0.0;
	std::vector<double> row(f.levels.size());
	rep.n_scored = for_each_scored(y, f.start, f.rows(), [&](std::size_t r, double obs) {
		const auto vr = f.values.row(static_cast<Eigen::Index>(r));
		std::copy(vr.begin(), vr.end(), row.begin());
		abs_sum += std::abs(obs - row[static_cast<std::size_t>(mid)]);
		crps_sum += crps_ensemble(row, obs);
	});
	rep.mae = abs_sum / static_cast<double>(rep.n_scored);
	rep.crps = crps_sum / static_cast<double>(rep.n_scored);
	const QuantileScores qs = quantile_score(y, f);
	const std::vector<double> rel = reliability(y, f);
	rep.qs_mean = qs.mean;
	for (std::size_t q = 0; q < f.levels.size(); ++q) {
		rep.qs_per_level[f.levels[q]] = qs.per_level[q];
		rep.reliability[f.levels[q]] = rel[q];
	}
	return rep;
}

QuantileForecast ensemble_as_quantiles(const EnsembleMatrix &ensemble) {
	QuantileForecast f;
	f.start = ensemble.start;
	f.levels = ensemble_level_assumption(ensemble.member_count());
	f.values = ensemble.sorted ? ensemble.members : sort_rows(ensemble).members;
	return f;
}

ScoreReport score_ensemble(const std::string &method, const ObservationSeries &y, const EnsembleMatrix &ensemble) {
	const QuantileForecast f = ensemble_as_quantiles(ensemble);
	ScoreReport rep = score_quantiles(method, y, f);
	// MAE uses the median member rather than a level value.
	double abs_sum = 0.0;
	std::vector<double> row(ensemble.member_count());
	for_each_scored(y, f.start, f.rows(), [&](std::size_t r, double obs) {
		const auto vr = f.values.row(static_cast<Eigen::Index>(r));
		std::copy(vr.begin(), vr.end(), row.begin());
		abs_sum += std::abs(obs - median_member(row));
	});
	rep.mae = abs_sum / static_cast<double>(rep.n_scored);
	return rep;
}

const ScoreReport &ReportBundle::find(const std::string &method) const {
	for (const auto &r : reports) {
		if (r.method == method) {
			return r;
		}
	}
	throw ValidationError("report bundle has no method '" + method + "'");
}

std::map<std::string, double> ReportBundle::relative(const std::string &method) const {
	const ScoreReport &m = find(method);
	const ScoreReport &b = find(baseline);
	return {{"mae", relative_score(m.mae, b.mae)},
	        {"crps", relative_score(m.crps, b.crps)},
	        {"qs_mean", relative_score(m.qs_mean, b.qs_mean)}};
}

nlohmann::json ReportBundle::to_json() const {
	nlohmann::json j;
	j["baseline"] = baseline;
	j["reports"] = nlohmann::json::array();
	for (const auto &r : reports) {
		nlohmann::json e = r.to_json();
		if (!baseline.empty() && r.method != baseline) {
			e["relative"] = relative(r.method);
		}
		j["reports"].push_back(std::move(e));
	}
	return j;
}

void ReportBundle::write_csv(std::ostream &out) const {
	out << "method,metric,level,value\n";
	out << std::setprecision(17);
	for (const auto &r : reports) {
		out << r.method << ",mae,," << r.mae << '\n';
		out << r.method << ",crps,," << r.crps << '\n';
		out << r.method << ",qs_mean,," << r.qs_mean << '\n';
		out << r.method << ",n_scored,," << r.n_scored << '\n';
		for (const auto &[level, v] : r.qs_per_level) {
			out << r.method << ",qs," << level << ',' << v << '\n';
		}
		for (const auto &[level, v] : r.reliability) {
			out << r.method << ",reliability," << level << ',' << v << '\n';
		}
		if (!baseline.empty() && r.method != baseline) {
			for (const auto &[metric, v] : relative(r.method)) {
				out << r.method << ",rs_" << metric << ",," << v << '\n';
			}
		}
	}
}

} // namespace nabqr
