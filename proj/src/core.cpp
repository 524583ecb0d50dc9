#include "nabqr/core.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace nabqr {

const char *error_kind_name(ErrorKind kind) noexcept {
	switch (kind) {
	case ErrorKind::Domain:
		return "domain";
	case ErrorKind::Validation:
		return "validation";
	case ErrorKind::Io:
		return "io";
	case ErrorKind::Numerical:
		return "numerical";
	}
	return "unknown";
}

int exit_code(ErrorKind kind) noexcept {
	switch (kind) {
	case ErrorKind::Io:
		return 3;
	case ErrorKind::Validation:
		return 4;
	case ErrorKind::Domain:
		return 5;
	case ErrorKind::Numerical:
		return 6;
	}
	return 1;
}

HourStamp parse_timestamp(std::string_view iso) {
	// Accepts YYYY-MM-DDTHH[:MM[:SS]][Z|+00:00] and the space-separated variant.
	std::string s(iso);
	int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
	char sep = 0;
	int consumed = 0;
	if (std::sscanf(s.c_str(), "%4d-%2d-%2d%c%2d%n", &y, &mo, &d, &sep, &h, &consumed) != 5 ||
	    (sep != 'T' && sep != ' ')) {
		throw ValidationError("malformed timestamp '" + s + "'");
	}
	std::string_view rest = std::string_view(s).substr(static_cast<std::size_t>(consumed));
	if (!rest.empty() && rest.front() == ':') {
		int n = 0;
		if (std::sscanf(rest.data(), ":%2d%n", &mi, &n) != 1) {
			throw ValidationError("malformed timestamp '" + s + "'");
		}
		rest.remove_prefix(static_cast<std::size_t>(n));
		if (!rest.empty() && rest.front() == ':') {
			if (std::sscanf(rest.data(), ":%2d%n", &sec, &n) != 1) {
				throw ValidationError("malformed timestamp '" + s + "'");
			}
			rest.remove_prefix(static_cast<std::size_t>(n));
		}
	}
	if (!(rest.empty() || rest == "Z" || rest == "+00:00" || rest == "+0000")) {
		throw ValidationError("timestamp '" + s + "' is not UTC");
	}
	if (mi != 0 || sec != 0) {
		throw ValidationError("timestamp '" + s + "' is not on the hourly grid");
	}
	using namespace std::chrono;
	const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
	if (!ymd.ok() || h < 0 || h > 23) {
		throw ValidationError("invalid calendar timestamp '" + s + "'");
	}
	return static_cast<HourStamp>(sys_days{ymd}.time_since_epoch().count()) * 24 + h;
}

std::string format_timestamp(HourStamp hour) {
	using namespace std::chrono;
	const HourStamp days_since = (hour >= 0 ? hour / 24 : -((-hour + 23) / 24));
	const int h = static_cast<int>(hour - days_since * 24);
	const year_month_day ymd{sys_days{days{days_since}}};
	char buf[32];
	std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:00:00Z", static_cast<int>(ymd.year()),
	              static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), h);
	return buf;
}

void require_probability(double tau, const char *what) {
	if (!(tau > 0.0 && tau < 1.0)) {
		std::ostringstream os;
		os << what << " must lie in (0,1), got " << tau;
		throw DomainError(os.str());
	}
}

QuantileLevels::QuantileLevels(std::vector<double> levels) : levels_(std::move(levels)) {
	for (std::size_t i = 0; i < levels_.size(); ++i) {
		require_probability(levels_[i], "quantile level");
		if (i > 0 && !(levels_[i] > levels_[i - 1])) {
			throw DomainError("quantile levels must be strictly increasing");
		}
	}
}

QuantileLevels QuantileLevels::nabqr_default() {
	return QuantileLevels({0.05, 0.1, 0.15, 0.25, 0.35, 0.45, 0.5, 0.55, 0.65, 0.75, 0.85, 0.9, 0.95});
}

QuantileLevels QuantileLevels::equidistant(std::size_t count, double lo, double hi) {
	if (count < 2) {
		throw DomainError("equidistant levels need at least 2 points");
	}
	std::vector<double> v(count);
	const double step = (hi - lo) / static_cast<double>(count - 1);
	for (std::size_t i = 0; i < count; ++i) {
		v[i] = lo + step * static_cast<double>(i);
	}
	v.back() = hi;
	return QuantileLevels(std::move(v));
}

long QuantileLevels::index_of(double level) const noexcept {
	for (std::size_t i = 0; i < levels_.size(); ++i) {
		if (std::abs(levels_[i] - level) <= 1e-12) {
			return static_cast<long>(i);
		}
	}
	return -1;
}

std::size_t ObservationSeries::valid_count() const noexcept {
	return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true));
}

void ObservationSeries::check() const {
	if (valid.size() != values.size()) {
		throw ValidationError("observation mask length differs from value count");
	}
	for (std::size_t i = 0; i < values.size(); ++i) {
		if (valid[i] && !std::isfinite(values[i])) {
			throw ValidationError("non-finite observation marked valid at " + format_timestamp(time(i)));
		}
	}
}

void EnsembleMatrix::check() const {
	if (!members.allFinite()) {
		throw ValidationError("ensemble matrix contains non-finite entries");
	}
	if (sorted && !rows_nondecreasing(members)) {
		throw ValidationError("ensemble matrix flagged sorted but a row decreases");
	}
}

Eigen::VectorXd QuantileForecast::column(double level) const {
	const long idx = levels.index_of(level);
	if (idx < 0) {
		throw DomainError("forecast has no level " + std::to_string(level));
	}
	return values.col(idx);
}

double check_loss(double residual, double tau) {
	require_probability(tau);
	return residual < 0.0 ? residual * (tau - 1.0) : residual * tau;
}

std::size_t quantile_rank(std::size_t n, double tau) {
	require_probability(tau);
	if (n == 0) {
		throw DomainError("quantile of an empty sample");
	}
	const double nd = static_cast<double>(n);
	auto k = static_cast<std::size_t>(std::ceil(tau * nd));
	k = std::clamp<std::size_t>(k, 1, n);
	// tau * n is inexact; settle on the exact predicate k/n >= tau.
	while (k > 1 && static_cast<double>(k - 1) / nd >= tau) {
		--k;
	}
	while (k < n && static_cast<double>(k) / nd < tau) {
		++k;
	}
	return k;
}

double empirical_quantile_sorted(std::span<const double> sorted, double tau) {
	return sorted[quantile_rank(sorted.size(), tau) - 1];
}

double empirical_quantile(std::span<const double> sample, double tau) {
	if (sample.empty()) {
		throw DomainError("quantile of an empty sample");
	}
	std::vector<double> copy(sample.begin(), sample.end());
	const std::size_t k = quantile_rank(copy.size(), tau);
	std::nth_element(copy.begin(), copy.begin() + static_cast<std::ptrdiff_t>(k - 1), copy.end());
	return copy[k - 1];
}

bool rows_nondecreasing(const RowMatrix &m) {
	for (Eigen::Index r = 0; r < m.rows(); ++r) {
		for (Eigen::Index c = 1; c < m.cols(); ++c) {
			if (m(r, c) < m(r, c - 1)) {
				return false;
			}
		}
	}
	return true;
}

EnsembleMatrix sort_rows(EnsembleMatrix ensembles) {
	for (Eigen::Index r = 0; r < ensembles.members.rows(); ++r) {
		auto row = ensembles.members.row(r);
		std::sort(row.begin(), row.end());
	}
	ensembles.sorted = true;
	return ensembles;
}

} // namespace nabqr
