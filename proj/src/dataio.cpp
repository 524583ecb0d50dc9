#include "nabqr/dataio.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "nabqr/random.hpp"

namespace nabqr {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string_view> split_fields(std::string_view line) {
	std::vector<std::string_view> out;
	std::size_t pos = 0;
	while (true) {
		const std::size_t comma = line.find(',', pos);
		std::string_view f = line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
		while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) {
			f.remove_prefix(1);
		}
		while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) {
			f.remove_suffix(1);
		}
		out.push_back(f);
		if (comma == std::string_view::npos) {
			break;
		}
		pos = comma + 1;
	}
	return out;
}

double parse_cell(std::string_view cell, std::size_t line, std::string_view column, const std::string &source) {
	if (cell.empty() || cell == "nan" || cell == "NaN" || cell == "NA") {
		return kNaN;
	}
	double v = 0.0;
	const char *first = cell.data();
	if (*first == '+') {
		++first;
	}
	const auto [ptr, ec] = std::from_chars(first, cell.data() + cell.size(), v);
	if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
		throw ValidationError(source + ":" + std::to_string(line) + ": column '" + std::string(column) +
		                      "' holds malformed number '" + std::string(cell) + "'");
	}
	return v;
}

void write_number(std::ostream &out, double v) {
	if (!std::isfinite(v)) {
		return; // missing cell
	}
	char buf[32];
	const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
	out.write(buf, ptr - buf);
}

bool has_value(const std::optional<std::vector<double>> &col, std::size_t i) {
	return col && std::isfinite((*col)[i]);
}

} // namespace

void RawDataset::check() const {
	observations.check();
	ensembles.check();
	if (ensembles.rows() != observations.size() || ensembles.start != observations.start) {
		throw ValidationError("ensembles and observations are not on the same hourly grid");
	}
	for (const auto *col : {&spot, &countertrade, &imbalance}) {
		if (*col && (*col)->size() != observations.size()) {
			throw ValidationError("auxiliary column length differs from the observation count");
		}
	}
}

RawDataset RawDataset::slice(std::size_t begin, std::size_t end) const {
	if (begin > end || end > size()) {
		throw ValidationError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range");
	}
	RawDataset d;
	d.area = area;
	d.observations.start = observations.time(begin);
	d.observations.values.assign(observations.values.begin() + static_cast<std::ptrdiff_t>(begin),
	                             observations.values.begin() + static_cast<std::ptrdiff_t>(end));
	d.observations.valid.assign(observations.valid.begin() + static_cast<std::ptrdiff_t>(begin),
	                            observations.valid.begin() + static_cast<std::ptrdiff_t>(end));
	d.ensembles.start = d.observations.start;
	d.ensembles.sorted = ensembles.sorted;
	d.ensembles.members =
	    ensembles.members.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin));
	auto cut = [&](const std::optional<std::vector<double>> &col) -> std::optional<std::vector<double>> {
		if (!col) {
			return std::nullopt;
		}
		return std::vector<double>(col->begin() + static_cast<std::ptrdiff_t>(begin),
		                           col->begin() + static_cast<std::ptrdiff_t>(end));
	};
	d.spot = cut(spot);
	d.countertrade = cut(countertrade);
	d.imbalance = cut(imbalance);
	return d;
}

RawDataset read_csv(std::istream &in, const std::string &source) {
	std::string line;
	if (!std::getline(in, line)) {
		throw ValidationError(source + ": empty file");
	}
	const auto header = split_fields(line);
	long ts_col = -1, actual_col = -1, spot_col = -1, ct_col = -1, imb_col = -1;
	std::map<int, std::size_t> member_cols;
	std::vector<std::string> unknown;
	for (std::size_t c = 0; c < header.size(); ++c) {
		const std::string_view h = header[c];
		if (h == "timestamp") {
			ts_col = static_cast<long>(c);
		} else if (h == "actual") {
			actual_col = static_cast<long>(c);
		} else if (h == "spot") {
			spot_col = static_cast<long>(c);
		} else if (h == "countertrade") {
			ct_col = static_cast<long>(c);
		} else if (h == "imbalance") {
			imb_col = static_cast<long>(c);
		} else if (h.substr(0, 4) == "ens_" && h.size() > 4) {
			int k = 0;
			const auto [p, ec] = std::from_chars(h.data() + 4, h.data() + h.size(), k);
			if (ec != std::errc() || p != h.data() + h.size() || member_cols.count(k)) {
				throw ValidationError(source + ": bad ensemble column '" + std::string(h) + "'");
			}
			member_cols[k] = c;
		} else {
			unknown.emplace_back(h);
		}
	}
	if (ts_col < 0 || actual_col < 0) {
		throw ValidationError(source + ": header needs 'timestamp' and 'actual' columns");
	}
	if (member_cols.empty()) {
		throw ValidationError(source + ": no ens_* columns");
	}
	if (member_cols.rbegin()->first != static_cast<int>(member_cols.size()) - 1 || member_cols.begin()->first != 0) {
		throw ValidationError(source + ": ensemble columns must be numbered 0..M-1 without gaps");
	}
	for (const auto &u : unknown) {
		spdlog::warn("{}: ignoring unknown column '{}'", source, u);
	}

	RawDataset d;
	std::vector<std::vector<double>> members;
	std::vector<double> spot, ct, imb;
	std::size_t line_no = 1;
	std::size_t imputed = 0;
	while (std::getline(in, line)) {
		++line_no;
		if (line.empty() || line == "\r") {
			continue;
		}
		const auto f = split_fields(line);
		if (f.size() != header.size()) {
			throw ValidationError(source + ":" + std::to_string(line_no) + ": expected " +
			                      std::to_string(header.size()) + " fields, found " + std::to_string(f.size()));
		}
		const HourStamp t = parse_timestamp(f[static_cast<std::size_t>(ts_col)]);
		const std::size_t i = d.observations.values.size();
		if (i == 0) {
			d.observations.start = t;
		} else if (t != d.observations.start + static_cast<HourStamp>(i)) {
			const HourStamp expected = d.observations.start + static_cast<HourStamp>(i);
			throw ValidationError(source + ":" + std::to_string(line_no) + ": hourly grid broken, expected " +
			                      format_timestamp(expected) + " but found " + format_timestamp(t) +
			                      (t > expected ? " (gap starts at " + format_timestamp(expected) + ")" : ""));
		}
		const double y = parse_cell(f[static_cast<std::size_t>(actual_col)], line_no, "actual", source);
		bool valid = std::isfinite(y);
		std::vector<double> row;
		row.reserve(member_cols.size());
		double sum = 0.0;
		std::size_t have = 0;
		for (const auto &[k, c] : member_cols) {
			const double v = parse_cell(f[c], line_no, header[c], source);
			row.push_back(v);
			if (std::isfinite(v)) {
				sum += v;
				++have;
			}
		}
		if (have < row.size()) {
			// Missing members: the hour is unusable for scoring; fill so the matrix stays finite.
			valid = false;
			++imputed;
			const double fill = have > 0 ? sum / static_cast<double>(have) : (members.empty() ? 0.0 : members.back()[0]);
			for (auto &v : row) {
				if (!std::isfinite(v)) {
					v = fill;
				}
			}
		}
		members.push_back(std::move(row));
		d.observations.values.push_back(valid ? y : (std::isfinite(y) ? y : kNaN));
		d.observations.valid.push_back(valid);
		if (spot_col >= 0) {
			spot.push_back(parse_cell(f[static_cast<std::size_t>(spot_col)], line_no, "spot", source));
		}
		if (ct_col >= 0) {
			ct.push_back(parse_cell(f[static_cast<std::size_t>(ct_col)], line_no, "countertrade", source));
		}
		if (imb_col >= 0) {
			imb.push_back(parse_cell(f[static_cast<std::size_t>(imb_col)], line_no, "imbalance", source));
		}
	}
	if (members.empty()) {
		throw ValidationError(source + ": no data rows");
	}
	if (imputed > 0) {
		spdlog::warn("{}: {} hour(s) with missing ensemble members marked invalid", source, imputed);
	}
	d.ensembles.start = d.observations.start;
	d.ensembles.members.resize(static_cast<Eigen::Index>(members.size()), static_cast<Eigen::Index>(member_cols.size()));
	for (std::size_t i = 0; i < members.size(); ++i) {
		for (std::size_t m = 0; m < members[i].size(); ++m) {
			d.ensembles.members(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)) = members[i][m];
		}
	}
	d.ensembles.sorted = rows_nondecreasing(d.ensembles.members);
	if (spot_col >= 0) {
		d.spot = std::move(spot);
	}
	if (ct_col >= 0) {
		d.countertrade = std::move(ct);
	}
	if (imb_col >= 0) {
		d.imbalance = std::move(imb);
	}
	d.check();
	return d;
}

RawDataset load_csv(const std::filesystem::path &path) {
	std::ifstream in(path);
	if (!in) {
		throw IoError("cannot open " + path.string());
	}
	RawDataset d = read_csv(in, path.string());
	d.area = path.stem().string();
	return d;
}

void write_csv(const RawDataset &d, std::ostream &out) {
	d.check();
	out << "timestamp,actual";
	const std::size_t M = d.ensembles.member_count();
	for (std::size_t m = 0; m < M; ++m) {
		char name[32];
		std::snprintf(name, sizeof name, ",ens_%02zu", m);
		out << name;
	}
	if (d.spot) {
		out << ",spot";
	}
	if (d.countertrade) {
		out << ",countertrade";
	}
	if (d.imbalance) {
		out << ",imbalance";
	}
	out << '\n';
	for (std::size_t i = 0; i < d.size(); ++i) {
		out << format_timestamp(d.observations.time(i)) << ',';
		write_number(out, d.observations.valid[i] ? d.observations.values[i] : kNaN);
		for (std::size_t m = 0; m < M; ++m) {
			out << ',';
			write_number(out, d.ensembles.members(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)));
		}
		for (const auto *col : {&d.spot, &d.countertrade, &d.imbalance}) {
			if (*col) {
				out << ',';
				write_number(out, (**col)[i]);
			}
		}
		out << '\n';
	}
}

void save_csv(const RawDataset &data, const std::filesystem::path &path) {
	std::ofstream out(path, std::ios::trunc);
	if (!out) {
		throw IoError("cannot write " + path.string());
	}
	write_csv(data, out);
	if (!out) {
		throw IoError("short write to " + path.string());
	}
}

Mask pad_removals(const Mask &keep, int pad) {
	Mask out = keep;
	const auto n = static_cast<long>(keep.size());
	for (long i = 0; i < n; ++i) {
		if (!keep[static_cast<std::size_t>(i)]) {
			for (long j = std::max(0L, i - pad); j <= std::min(n - 1, i + pad); ++j) {
				out[static_cast<std::size_t>(j)] = false;
			}
		}
	}
	return out;
}

Mask countertrade_filter(const RawDataset &d, const CountertradeFilterConfig &cfg) {
	const std::size_t n = d.size();
	Mask keep(n, true);
	if (!d.countertrade) {
		spdlog::warn("countertrade column absent: low-countertrade rule skipped");
	} else {
		const auto &ct = *d.countertrade;
		auto flank = [&](long from, int dir) -> double {
			for (int k = 1; k <= cfg.flank_hours; ++k) {
				const long j = from + dir * k;
				if (j < 0 || j >= static_cast<long>(n)) {
					break;
				}
				const double v = ct[static_cast<std::size_t>(j)];
				if (std::isfinite(v) && v != 0.0) {
					return v;
				}
			}
			return kNaN;
		};
		std::size_t i = 0;
		while (i < n) {
			if (!(std::isfinite(ct[i]) && ct[i] < cfg.low)) {
				++i;
				continue;
			}
			std::size_t j = i;
			while (j + 1 < n && std::isfinite(ct[j + 1]) && ct[j + 1] < cfg.low) {
				++j;
			}
			const double before = flank(static_cast<long>(i), -1);
			const double after = flank(static_cast<long>(j), +1);
			if (before > cfg.high && after > cfg.high) {
				std::fill(keep.begin() + static_cast<std::ptrdiff_t>(i), keep.begin() + static_cast<std::ptrdiff_t>(j + 1),
				          false);
			}
			i = j + 1;
		}
	}
	if (cfg.negative_spot) {
		if (!d.spot) {
			spdlog::warn("spot column absent: negative-price rule skipped");
		} else {
			for (std::size_t i = 0; i < n; ++i) {
				const HourStamp t = d.observations.time(i);
				const bool in_range = (!cfg.spot_from || t >= *cfg.spot_from) && (!cfg.spot_to || t < *cfg.spot_to);
				if (in_range && has_value(d.spot, i) && (*d.spot)[i] < 0.0) {
					keep[i] = false;
				}
			}
		}
	}
	return pad_removals(keep, cfg.pad);
}

Mask glitch_filter(const EnsembleMatrix &e, const GlitchFilterConfig &cfg) {
	Mask keep(e.rows(), true);
	for (Eigen::Index r = 0; r < e.members.rows(); ++r) {
		std::size_t inside = 0;
		for (Eigen::Index m = 0; m < e.members.cols(); ++m) {
			const double v = e.members(r, m);
			inside += (v > cfg.low && v < cfg.high) ? 1 : 0;
		}
		if (inside > cfg.count) {
			keep[static_cast<std::size_t>(r)] = false;
		}
	}
	return pad_removals(keep, cfg.pad);
}

Mask combine_masks(const Mask &a, const Mask &b) {
	if (a.size() != b.size()) {
		throw ValidationError("masks differ in length");
	}
	Mask out(a.size());
	for (std::size_t i = 0; i < a.size(); ++i) {
		out[i] = a[i] && b[i];
	}
	return out;
}

void apply_mask(ObservationSeries &y, const Mask &keep) {
	if (keep.size() != y.size()) {
		throw ValidationError("mask length differs from the series");
	}
	for (std::size_t i = 0; i < keep.size(); ++i) {
		y.valid[i] = y.valid[i] && keep[i];
	}
}

SplitSpec SplitSpec::from_lengths(std::size_t nn_train, std::size_t init_params, std::size_t init_window,
                                  std::size_t test) {
	SplitSpec s;
	s.nn_train = {0, nn_train};
	s.taqr_init_params = {s.nn_train.end(), init_params};
	s.taqr_init_window = {s.taqr_init_params.end(), init_window};
	s.test = {s.taqr_init_window.end(), test};
	return s;
}

SplitSpec SplitSpec::full_length() { return from_lengths(14040, 192, 4944, 5112); }

SplitSpec SplitSpec::scaled(double factor) {
	if (!(factor > 0.0)) {
		throw DomainError("split scale factor must be positive");
	}
	auto scale = [factor](std::size_t n) { return static_cast<std::size_t>(std::floor(static_cast<double>(n) * factor)); };
	return from_lengths(scale(14040), 192, scale(4944), scale(5112));
}

SplitSpec SplitSpec::fit_to(std::size_t hours) {
	if (hours <= 192) {
		throw DomainError("need more than 192 hours to split, got " + std::to_string(hours));
	}
	return scaled(static_cast<double>(hours - 192) / static_cast<double>(14040 + 4944 + 5112));
}

void SplitSpec::check() const {
	const Segment *segs[] = {&nn_train, &taqr_init_params, &taqr_init_window, &test};
	const char *names[] = {"nn_train", "taqr_init_params", "taqr_init_window", "test"};
	for (std::size_t k = 0; k < 4; ++k) {
		if (segs[k]->length == 0) {
			throw ValidationError(std::string("split segment ") + names[k] + " is empty");
		}
		if (k > 0 && segs[k]->begin != segs[k - 1]->end()) {
			throw ValidationError(std::string("split segment ") + names[k] + (segs[k]->begin < segs[k - 1]->end()
			                                                                      ? " overlaps its predecessor"
			                                                                      : " leaves a gap after its predecessor"));
		}
	}
}

SplitSpec split(std::size_t hours, const SplitSpec &spec) {
	spec.check();
	if (spec.end() > hours) {
		throw ValidationError("split needs " + std::to_string(spec.end()) + " hours, dataset has " +
		                      std::to_string(hours));
	}
	return spec;
}

namespace {

double power_curve(double wind, double capacity) { return capacity / (1.0 + std::exp(-(wind - 8.0) / 1.2)); }

} // namespace

RawDataset simulate(const SimulationConfig &cfg) {
	if (cfg.hours < 2 || cfg.members < 2 || !(cfg.capacity > 0.0) || !(cfg.underdispersion > 0.0) ||
	    cfg.jitter_hours < 0) {
		throw DomainError("invalid simulation settings");
	}
	const std::size_t T = cfg.hours;
	const std::size_t M = cfg.members;
	const double cap = cfg.capacity;
	constexpr double two_pi = 6.283185307179586;
	Rng rng(cfg.seed);

	// Latent wind, forecast error and observation noise.
	std::vector<double> wind(T), center(T), observed_wind(T);
	double z = 0.0, err = 0.0;
	for (std::size_t t = 0; t < T; ++t) {
		const auto hour = static_cast<double>(hour_of_day(cfg.start + static_cast<HourStamp>(t)));
		const double annual = std::cos(two_pi * static_cast<double>(cfg.start + static_cast<HourStamp>(t)) / 8766.0);
		z = 0.985 * z + 0.35 * rng.normal();
		err = 0.9 * err + 0.45 * rng.normal();
		wind[t] = 8.0 + z + 1.0 * std::sin(two_pi * (hour - 9.0) / 24.0) + 1.5 * annual;
		center[t] = wind[t] - err;
		observed_wind[t] = wind[t] + 0.6 * rng.normal();
	}
	// Spread of the true predictive distribution of the observed wind given the forecast center.
	const double err_sd = 0.45 / std::sqrt(1.0 - 0.81);
	const double true_sd = std::sqrt(err_sd * err_sd + 0.36);

	RawDataset d;
	d.area = "synthetic";
	d.observations.start = cfg.start;
	d.observations.values.resize(T);
	d.observations.valid.assign(T, true);
	for (std::size_t t = 0; t < T; ++t) {
		d.observations.values[t] = power_curve(observed_wind[t], cap);
	}

	d.ensembles.start = cfg.start;
	d.ensembles.members.resize(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(M));
	std::vector<double> pert(M, 0.0);
	std::vector<int> shift(M, 0);
	for (std::size_t t = 0; t < T; ++t) {
		if (t == 0 || hour_of_day(cfg.start + static_cast<HourStamp>(t)) == 0) {
			for (auto &s : shift) {
				s = static_cast<int>(rng.index(static_cast<std::size_t>(2 * cfg.jitter_hours + 1))) - cfg.jitter_hours;
			}
		}
		for (std::size_t m = 0; m < M; ++m) {
			pert[m] = 0.8 * pert[m] + 0.6 * rng.normal();
			const long src = std::clamp(static_cast<long>(t) + shift[m], 0L, static_cast<long>(T) - 1);
			const double w = center[static_cast<std::size_t>(src)] + cfg.underdispersion * true_sd * pert[m];
			d.ensembles.members(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(m)) =
			    std::min(cap, (1.0 + cfg.bias) * power_curve(w, cap));
		}
	}

	// Prices: spot falls with wind output; imbalance moves against the realized forecast error.
	std::vector<double> spot(T), imbalance(T), ct(T);
	double xi = 0.0, zeta = 0.0;
	for (std::size_t t = 0; t < T; ++t) {
		const auto hour = static_cast<double>(hour_of_day(cfg.start + static_cast<HourStamp>(t)));
		xi = 0.9 * xi + std::sqrt(1.0 - 0.81) * rng.normal();
		const double share = d.observations.values[t] / cap;
		spot[t] = 55.0 + 12.0 * std::sin(two_pi * (hour - 8.0) / 24.0) - 35.0 * share * share + 10.0 * xi;
		const double surprise = (power_curve(center[t], cap) - d.observations.values[t]) / (0.15 * cap);
		imbalance[t] = spot[t] + 20.0 * std::tanh(surprise) + 4.0 * rng.normal();
		zeta = 0.95 * zeta + std::sqrt(1.0 - 0.9025) * rng.normal();
		ct[t] = std::clamp(700.0 + 350.0 * zeta, 40.0, 1600.0);
	}

	// Curtailment episodes: high countertrade, a low run with curtailed output, high again.
	// Isolated low runs without high flanks are mixed in so the filter has something to ignore.
	std::size_t t = 0;
	while (t < T) {
		const double u = rng.uniform();
		if (u < cfg.curtailment_rate / 1000.0) {
			const std::size_t pre = 2 + rng.index(5), low = 2 + rng.index(7), post = 2 + rng.index(5);
			for (std::size_t k = 0; k < pre + low + post && t + k < T; ++k) {
				const std::size_t h = t + k;
				if (k < pre || k >= pre + low) {
					ct[h] = rng.uniform(1750.0, 2300.0);
				} else {
					ct[h] = rng.uniform(0.0, 20.0);
					d.observations.values[h] *= 0.1;
				}
			}
			t += pre + low + post;
		} else if (u < 1.5 * cfg.curtailment_rate / 1000.0) {
			const std::size_t len = 1 + rng.index(3);
			for (std::size_t k = 0; k < len && t + k < T; ++k) {
				ct[t + k] = rng.uniform(5.0, 20.0);
			}
			t += len + 1;
		} else {
			++t;
		}
	}

	// Ensemble glitches: a block of members frozen near 365 MW.
	if (cap > 370.0) {
		for (std::size_t h = 0; h < T; ++h) {
			if (rng.uniform() < cfg.glitch_rate / 1000.0) {
				const std::size_t len = 1 + rng.index(4);
				const std::size_t stuck = std::min<std::size_t>(M, 10 + rng.index(7));
				for (std::size_t k = 0; k < len && h + k < T; ++k) {
					for (std::size_t m = 0; m < stuck; ++m) {
						d.ensembles.members(static_cast<Eigen::Index>(h + k), static_cast<Eigen::Index>(m)) =
						    365.0 + rng.uniform(-3.0, 3.0);
					}
				}
				h += len;
			}
		}
	}

	d.spot = std::move(spot);
	d.imbalance = std::move(imbalance);
	d.countertrade = std::move(ct);
	d.ensembles.sorted = false;
	d.check();
	return d;
}

} // namespace nabqr
