#include "nabqr/taqr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace nabqr {

namespace {

struct Ratio {
	long slot = -1;
	double step = 0.0;
	bool degenerate = false;
};

int cold_budget(std::size_t rows) { return static_cast<int>(std::max<std::size_t>(1000, 50 * rows)); }

void require_finite(std::span<const double> x, double y) {
	for (double v : x) {
		if (!std::isfinite(v)) {
			throw ValidationError("non-finite design row");
		}
	}
	if (!std::isfinite(y)) {
		throw ValidationError("non-finite observation");
	}
}

} // namespace

TaqrState::TaqrState(std::size_t k, std::size_t cap, double tau, const TaqrOptions &options)
    : k_(k), cap_(cap), tau_(tau), options_(options), x_(RowMatrix::Zero(static_cast<Eigen::Index>(cap), static_cast<Eigen::Index>(k))),
      y_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cap))), sign_(cap, 1), seq_(cap, 0), basis_index_(cap, -1),
      beta_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k))), resid_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cap))) {
	require_probability(tau);
	if (k == 0) {
		throw ValidationError("design matrix has no columns");
	}
}

std::size_t TaqrState::slot_of_position(std::size_t pos) const noexcept {
	return count_ < cap_ ? pos : (head_ + pos) % cap_;
}

void TaqrState::write_slot(std::size_t slot, std::span<const double> x, double y) {
	for (std::size_t c = 0; c < k_; ++c) {
		x_(static_cast<Eigen::Index>(slot), static_cast<Eigen::Index>(c)) = x[c];
	}
	y_[static_cast<Eigen::Index>(slot)] = y;
	seq_[slot] = next_seq_++;
	basis_index_[slot] = -1;
	sign_[slot] = 1;
}

double TaqrState::scale_tol() const {
	const double ymax = count_ == 0 ? 0.0 : y_.head(static_cast<Eigen::Index>(count_)).cwiseAbs().maxCoeff();
	return options_.interpolation_tol * (1.0 + ymax);
}

void TaqrState::factor() {
	const auto ka = static_cast<Eigen::Index>(active_.size());
	basis_matrix_.resize(ka, ka);
	for (Eigen::Index j = 0; j < ka; ++j) {
		for (Eigen::Index c = 0; c < ka; ++c) {
			basis_matrix_(j, c) = x_(static_cast<Eigen::Index>(basis_[static_cast<std::size_t>(j)]), active_[static_cast<std::size_t>(c)]);
		}
	}
	lu_.compute(basis_matrix_);
}

void TaqrState::solve_beta() {
	const auto ka = static_cast<Eigen::Index>(active_.size());
	Eigen::VectorXd yh(ka);
	for (Eigen::Index j = 0; j < ka; ++j) {
		yh[j] = y_[static_cast<Eigen::Index>(basis_[static_cast<std::size_t>(j)])];
	}
	const Eigen::VectorXd b = lu_.solve(yh);
	beta_.setZero();
	for (Eigen::Index c = 0; c < ka; ++c) {
		beta_[active_[static_cast<std::size_t>(c)]] = b[c];
	}
	if (!beta_.allFinite()) {
		throw NumericalError("singular simplex basis");
	}
}

void TaqrState::compute_residuals() {
	const auto n = static_cast<Eigen::Index>(count_);
	resid_.head(n).noalias() = y_.head(n) - x_.topRows(n) * beta_;
}

void TaqrState::cold_solve(int budget) {
	const auto n = static_cast<Eigen::Index>(count_);
	const RowMatrix X = x_.topRows(n);
	const Eigen::VectorXd y = y_.head(n);

	Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
	qr.setThreshold(options_.rank_tol);
	const auto rank = static_cast<std::size_t>(qr.rank());
	if (rank == 0) {
		throw RankError("design matrix has no column above the rank tolerance");
	}
	if (count_ <= rank) {
		std::ostringstream os;
		os << "underdetermined quantile regression: " << count_ << " rows for " << rank << " columns";
		throw ValidationError(os.str());
	}
	active_.clear();
	for (std::size_t c = 0; c < rank; ++c) {
		active_.push_back(qr.colsPermutation().indices()[static_cast<Eigen::Index>(c)]);
	}
	std::sort(active_.begin(), active_.end());

	Eigen::MatrixXd Xa(n, static_cast<Eigen::Index>(rank));
	for (std::size_t c = 0; c < rank; ++c) {
		Xa.col(static_cast<Eigen::Index>(c)) = X.col(active_[c]);
	}
	// Start from the least-squares plane shifted to the tau-quantile of its residuals: rows
	// close to that plane are likely near the optimal vertex.
	const Eigen::VectorXd ls = Xa.colPivHouseholderQr().solve(y);
	const Eigen::VectorXd e = y - Xa * ls;
	const double shift = empirical_quantile(std::span<const double>(e.data(), static_cast<std::size_t>(n)), tau_);
	std::vector<std::size_t> order(count_);
	std::iota(order.begin(), order.end(), std::size_t{0});
	std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
		return std::abs(e[static_cast<Eigen::Index>(a)] - shift) < std::abs(e[static_cast<Eigen::Index>(b)] - shift);
	});

	basis_.clear();
	std::fill(basis_index_.begin(), basis_index_.end(), -1);
	std::vector<Eigen::VectorXd> ortho;
	for (double threshold : {1e-6, 1e-10}) {
		for (std::size_t slot : order) {
			if (basis_.size() == rank) {
				break;
			}
			if (basis_index_[slot] >= 0) {
				continue;
			}
			Eigen::VectorXd v = Xa.row(static_cast<Eigen::Index>(slot)).transpose();
			const double norm0 = v.norm();
			if (norm0 == 0.0) {
				continue;
			}
			for (const auto &q : ortho) {
				v -= q.dot(v) * q;
			}
			for (const auto &q : ortho) {
				v -= q.dot(v) * q;
			}
			const double norm = v.norm();
			if (norm > threshold * norm0) {
				ortho.push_back(v / norm);
				basis_index_[slot] = static_cast<int>(basis_.size());
				basis_.push_back(slot);
			}
		}
	}
	if (basis_.size() != rank) {
		throw RankError("could not select a nonsingular starting basis");
	}
	factor();
	solve_beta();
	compute_residuals();
	for (std::size_t i = 0; i < count_; ++i) {
		sign_[i] = resid_[static_cast<Eigen::Index>(i)] >= 0.0 ? 1 : -1;
	}
	const int used = optimize(budget);
	if (used < 0) {
		throw NumericalError("simplex iteration budget exhausted in cold solve");
	}
	total_pivots_ += used;
}

namespace {

Ratio ratio_test(const Eigen::VectorXd &z, int s, const Eigen::VectorXd &resid, const std::vector<int> &basis_index,
                 const std::vector<signed char> &sign, const std::vector<std::uint64_t> &seq, std::size_t count,
                 double pivot_tol, double zero_tol) {
	const auto n = static_cast<Eigen::Index>(count);
	const double zmax = n == 0 ? 0.0 : z.head(n).cwiseAbs().maxCoeff();
	const double rate_tol = pivot_tol * std::max(1.0, zmax);
	Ratio best;
	double tmin = std::numeric_limits<double>::infinity();
	for (std::size_t i = 0; i < count; ++i) {
		if (basis_index[i] >= 0) {
			continue;
		}
		const double rate = s * z[static_cast<Eigen::Index>(i)];
		const double r = resid[static_cast<Eigen::Index>(i)];
		double t;
		if (sign[i] > 0 && rate < -rate_tol) {
			t = std::max(r, 0.0) / -rate;
		} else if (sign[i] < 0 && rate > rate_tol) {
			t = std::max(-r, 0.0) / rate;
		} else {
			continue;
		}
		if (t < tmin) {
			tmin = t;
		}
	}
	if (!std::isfinite(tmin)) {
		return best;
	}
	// Among rows tying with the minimum ratio pick the smallest arrival index (Bland).
	const double tie = pivot_tol * std::max(1.0, tmin);
	int ties = 0;
	std::uint64_t best_key = std::numeric_limits<std::uint64_t>::max();
	for (std::size_t i = 0; i < count; ++i) {
		if (basis_index[i] >= 0) {
			continue;
		}
		const double rate = s * z[static_cast<Eigen::Index>(i)];
		const double r = resid[static_cast<Eigen::Index>(i)];
		double t;
		if (sign[i] > 0 && rate < -rate_tol) {
			t = std::max(r, 0.0) / -rate;
		} else if (sign[i] < 0 && rate > rate_tol) {
			t = std::max(-r, 0.0) / rate;
		} else {
			continue;
		}
		if (t <= tmin + tie) {
			++ties;
			const std::uint64_t key = 2 * seq[i] + (sign[i] < 0 ? 1 : 0);
			if (key < best_key) {
				best_key = key;
				best.slot = static_cast<long>(i);
				best.step = t;
			}
		}
	}
	best.degenerate = ties > 1 || tmin <= zero_tol;
	return best;
}

} // namespace

int TaqrState::optimize(int budget) {
	const auto n = static_cast<Eigen::Index>(count_);
	const auto ka = static_cast<Eigen::Index>(active_.size());
	const double zero_tol = scale_tol();

	factor();
	solve_beta();
	compute_residuals();
	for (std::size_t i = 0; i < count_; ++i) {
		if (basis_index_[i] >= 0) {
			continue;
		}
		const double r = resid_[static_cast<Eigen::Index>(i)];
		if (r > zero_tol) {
			sign_[i] = 1;
		} else if (r < -zero_tol) {
			sign_[i] = -1;
		}
	}

	Eigen::MatrixXd weights(n, 2);
	Eigen::VectorXd dfull(static_cast<Eigen::Index>(k_));
	Eigen::VectorXd z(n);
	bool degenerate = false;
	int pivots = 0;
	for (;;) {
		for (Eigen::Index i = 0; i < n; ++i) {
			const bool basic = basis_index_[static_cast<std::size_t>(i)] >= 0;
			weights(i, 0) = basic ? 0.0 : psi(sign_[static_cast<std::size_t>(i)]);
			weights(i, 1) = basic ? 0.0 : 1.0;
		}
		const Eigen::MatrixXd sums = x_.topRows(n).transpose() * weights; // K x 2
		Eigen::MatrixXd rhs(ka, 2);
		for (Eigen::Index c = 0; c < ka; ++c) {
			rhs.row(c) = sums.row(active_[static_cast<std::size_t>(c)]);
		}
		// Column j of the basis inverse maps residual changes of row basis_[j] onto beta, so
		// v_j = sum_i psi_i z_ij and u_j = sum_i z_ij for the nonbasic rows.
		const Eigen::MatrixXd vu = lu_.transpose().solve(rhs);

		struct Candidate {
			Eigen::Index j;
			int s;
			double primary;
			double secondary;
			std::uint64_t key;
		};
		std::vector<Candidate> primary_gains, secondary_gains;
		for (Eigen::Index j = 0; j < ka; ++j) {
			const double v = vu(j, 0);
			const double u = vu(j, 1);
			for (int s : {1, -1}) {
				// Primary: directional derivative of the check-loss objective. Secondary: that of
				// -sum(r), which among tied optima prefers the lowest fitted values (the inf
				// convention of the empirical quantile).
				const double primary = s > 0 ? tau_ + v : (1.0 - tau_) - v;
				const double secondary = -s * (1.0 + u);
				const Candidate c{j, s, primary, secondary,
				                  bland_key(basis_[static_cast<std::size_t>(j)], static_cast<signed char>(s))};
				if (primary < -options_.optimality_tol) {
					primary_gains.push_back(c);
				} else if (primary <= options_.optimality_tol &&
				           secondary < -options_.optimality_tol * (1.0 + std::abs(u))) {
					secondary_gains.push_back(c);
				}
			}
		}
		const auto &pool = primary_gains.empty() ? secondary_gains : primary_gains;
		long enter = -1;
		int enter_sign = 0;
		if (!pool.empty()) {
			const bool use_primary = !primary_gains.empty();
			const Candidate *best = &pool.front();
			for (const auto &c : pool) {
				bool better;
				if (degenerate) {
					better = c.key < best->key;
				} else if (use_primary) {
					better = c.primary < best->primary;
				} else {
					better = c.secondary < best->secondary;
				}
				if (better) {
					best = &c;
				}
			}
			enter = static_cast<long>(best->j);
			enter_sign = best->s;
		}
		if (enter < 0) {
			return pivots;
		}
		if (pivots >= budget) {
			return -1;
		}

		Eigen::VectorXd unit = Eigen::VectorXd::Zero(ka);
		unit[enter] = 1.0;
		const Eigen::VectorXd dcol = lu_.solve(unit);
		dfull.setZero();
		for (Eigen::Index c = 0; c < ka; ++c) {
			dfull[active_[static_cast<std::size_t>(c)]] = dcol[c];
		}
		z.noalias() = x_.topRows(n) * dfull;
		const Ratio ratio =
		    ratio_test(z, enter_sign, resid_, basis_index_, sign_, seq_, count_, options_.pivot_tol, zero_tol);
		if (ratio.slot < 0) {
			return -1;
		}

		const std::size_t leaving = basis_[static_cast<std::size_t>(enter)];
		const auto entering = static_cast<std::size_t>(ratio.slot);
		basis_index_[leaving] = -1;
		sign_[leaving] = static_cast<signed char>(enter_sign);
		basis_[static_cast<std::size_t>(enter)] = entering;
		basis_index_[entering] = static_cast<int>(enter);
		factor();
		solve_beta();
		compute_residuals();
		degenerate = ratio.degenerate;
		++pivots;
	}
}

bool TaqrState::replace_basic_slot(std::size_t slot) {
	const auto n = static_cast<Eigen::Index>(count_);
	const auto ka = static_cast<Eigen::Index>(active_.size());
	const int j = basis_index_[slot];
	Eigen::VectorXd unit = Eigen::VectorXd::Zero(ka);
	unit[j] = 1.0;
	const Eigen::VectorXd dcol = lu_.solve(unit);
	Eigen::VectorXd dfull = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k_));
	for (Eigen::Index c = 0; c < ka; ++c) {
		dfull[active_[static_cast<std::size_t>(c)]] = dcol[c];
	}
	const Eigen::VectorXd z = x_.topRows(n) * dfull;
	double slope = 0.0;
	for (std::size_t i = 0; i < count_; ++i) {
		if (basis_index_[i] < 0) {
			slope += psi(sign_[i]) * z[static_cast<Eigen::Index>(i)];
		}
	}
	const int first = slope > 0.0 ? -1 : 1;
	const double zero_tol = scale_tol();
	for (int s : {first, -first}) {
		const Ratio ratio = ratio_test(z, s, resid_, basis_index_, sign_, seq_, count_, options_.pivot_tol, zero_tol);
		if (ratio.slot < 0) {
			continue;
		}
		const auto entering = static_cast<std::size_t>(ratio.slot);
		basis_index_[slot] = -1;
		basis_[static_cast<std::size_t>(j)] = entering;
		basis_index_[entering] = j;
		factor();
		solve_beta();
		return true;
	}
	return false;
}

TaqrState TaqrState::warm_start(const RowMatrix &X0, std::span<const double> y0, double tau, std::size_t window_capacity,
                                const TaqrOptions &options) {
	const auto n = static_cast<std::size_t>(X0.rows());
	if (y0.size() != n) {
		throw ValidationError("design rows and observations differ in length");
	}
	if (n <= static_cast<std::size_t>(X0.cols())) {
		throw ValidationError("warm start needs more rows than columns");
	}
	if (n > window_capacity) {
		throw ValidationError("warm-start sample exceeds the window capacity");
	}
	TaqrState state(static_cast<std::size_t>(X0.cols()), window_capacity, tau, options);
	for (std::size_t i = 0; i < n; ++i) {
		const auto row = X0.row(static_cast<Eigen::Index>(i));
		require_finite(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())), y0[i]);
		state.write_slot(i, std::span<const double>(row.data(), static_cast<std::size_t>(row.size())), y0[i]);
	}
	state.count_ = n;
	state.cold_solve(cold_budget(n));
	return state;
}

QrFit qr_batch_solve(const RowMatrix &X, std::span<const double> y, double tau, const TaqrOptions &options) {
	require_probability(tau);
	const auto n = static_cast<std::size_t>(X.rows());
	const auto k = static_cast<std::size_t>(X.cols());
	if (k == 0) {
		throw ValidationError("design matrix has no columns");
	}
	if (n <= k) {
		throw ValidationError("underdetermined quantile regression: n <= K");
	}
	TaqrState state = TaqrState::warm_start(X, y, tau, n, options);
	QrFit fit;
	fit.beta = state.beta_;
	fit.basis.assign(state.basis_.begin(), state.basis_.end());
	std::sort(fit.basis.begin(), fit.basis.end());
	fit.objective = state.objective();
	fit.pivots = static_cast<int>(state.total_pivots_);
	for (std::size_t c = 0; c < k; ++c) {
		if (!std::binary_search(state.active_.begin(), state.active_.end(), static_cast<int>(c))) {
			fit.dropped_columns.push_back(static_cast<int>(c));
		}
	}
	return fit;
}

double TaqrState::predict(std::span<const double> x) const {
	if (x.size() != k_) {
		throw ValidationError("design row has the wrong width");
	}
	double acc = 0.0;
	for (std::size_t c = 0; c < k_; ++c) {
		acc += x[c] * beta_[static_cast<Eigen::Index>(c)];
	}
	return acc;
}

TaqrState::StepResult TaqrState::update(std::span<const double> x, double y) {
	if (x.size() != k_) {
		throw ValidationError("design row has the wrong width");
	}
	require_finite(x, y);
	StepResult result;
	factor();
	compute_residuals();

	std::size_t slot;
	bool cold = false;
	if (count_ < cap_) {
		slot = count_++;
	} else {
		slot = head_;
		head_ = (head_ + 1) % cap_;
		if (basis_index_[slot] >= 0) {
			if (replace_basic_slot(slot)) {
				result.pivots += 1;
			} else {
				cold = true;
			}
		}
	}
	write_slot(slot, x, y);

	const int budget = options_.pivots_per_column * static_cast<int>(k_);
	if (!cold) {
		const double r = y - predict(x);
		sign_[slot] = r >= 0.0 ? 1 : -1;
		const int used = optimize(budget - result.pivots);
		if (used < 0) {
			cold = true;
		} else {
			result.pivots += used;
		}
	}
	if (cold) {
		cold_solve(cold_budget(count_));
		++cold_restarts_;
		result.cold_restart = true;
	}
	total_pivots_ += result.pivots;
	return result;
}

TaqrState::StepResult TaqrState::step(std::span<const double> x, double y) {
	const double prediction = predict(x);
	StepResult result = update(x, y);
	result.prediction = prediction;
	return result;
}

int TaqrState::reoptimize() {
	const int used = optimize(options_.pivots_per_column * static_cast<int>(k_));
	if (used < 0) {
		cold_solve(cold_budget(count_));
		++cold_restarts_;
		return 0;
	}
	total_pivots_ += used;
	return used;
}

double TaqrState::objective() const {
	const auto n = static_cast<Eigen::Index>(count_);
	const Eigen::VectorXd r = y_.head(n) - x_.topRows(n) * beta_;
	double total = 0.0;
	for (Eigen::Index i = 0; i < n; ++i) {
		total += check_loss(r[i], tau_);
	}
	return total;
}

RowMatrix TaqrState::window_design() const {
	RowMatrix out(static_cast<Eigen::Index>(count_), static_cast<Eigen::Index>(k_));
	for (std::size_t p = 0; p < count_; ++p) {
		out.row(static_cast<Eigen::Index>(p)) = x_.row(static_cast<Eigen::Index>(slot_of_position(p)));
	}
	return out;
}

Eigen::VectorXd TaqrState::window_response() const {
	Eigen::VectorXd out(static_cast<Eigen::Index>(count_));
	for (std::size_t p = 0; p < count_; ++p) {
		out[static_cast<Eigen::Index>(p)] = y_[static_cast<Eigen::Index>(slot_of_position(p))];
	}
	return out;
}

std::vector<std::size_t> TaqrState::basis_positions() const {
	std::vector<std::size_t> out;
	for (std::size_t slot : basis_) {
		out.push_back(count_ < cap_ ? slot : (slot + cap_ - head_) % cap_);
	}
	std::sort(out.begin(), out.end());
	return out;
}

std::size_t TaqrState::interpolated_count() const {
	const auto n = static_cast<Eigen::Index>(count_);
	const Eigen::VectorXd r = y_.head(n) - x_.topRows(n) * beta_;
	const double tol = scale_tol();
	std::size_t hits = 0;
	for (Eigen::Index i = 0; i < n; ++i) {
		hits += std::abs(r[i]) <= tol ? 1 : 0;
	}
	return hits;
}

Checkpoint TaqrState::snapshot() const {
	Checkpoint ck("taqr-state");
	auto &m = ck.meta();
	m["tau"] = tau_;
	m["columns"] = k_;
	m["capacity"] = cap_;
	m["count"] = count_;
	m["head"] = head_;
	m["next_seq"] = next_seq_;
	m["total_pivots"] = total_pivots_;
	m["cold_restarts"] = cold_restarts_;
	m["options"] = {{"interpolation_tol", options_.interpolation_tol},
	                {"pivot_tol", options_.pivot_tol},
	                {"rank_tol", options_.rank_tol},
	                {"optimality_tol", options_.optimality_tol},
	                {"pivots_per_column", options_.pivots_per_column}};
	const auto n = static_cast<Eigen::Index>(count_);
	ck.put("x", RowMatrix(x_.topRows(n)));
	ck.put("y", Eigen::VectorXd(y_.head(n)));
	ck.put("beta", beta_);
	ck.put_ints("sign", std::vector<std::int64_t>(sign_.begin(), sign_.begin() + n));
	ck.put_ints("seq", std::vector<std::int64_t>(seq_.begin(), seq_.begin() + n));
	ck.put_ints("basis", std::vector<std::int64_t>(basis_.begin(), basis_.end()));
	ck.put_ints("active", std::vector<std::int64_t>(active_.begin(), active_.end()));
	return ck;
}

TaqrState TaqrState::restore(const Checkpoint &ck) {
	ck.expect_kind("taqr-state");
	const auto &m = ck.meta();
	TaqrOptions options;
	const auto &o = m.at("options");
	options.interpolation_tol = o.at("interpolation_tol");
	options.pivot_tol = o.at("pivot_tol");
	options.rank_tol = o.at("rank_tol");
	options.optimality_tol = o.at("optimality_tol");
	options.pivots_per_column = o.at("pivots_per_column");
	TaqrState s(m.at("columns").get<std::size_t>(), m.at("capacity").get<std::size_t>(), m.at("tau").get<double>(), options);
	s.count_ = m.at("count");
	s.head_ = m.at("head");
	s.next_seq_ = m.at("next_seq");
	s.total_pivots_ = m.at("total_pivots");
	s.cold_restarts_ = m.at("cold_restarts");
	const RowMatrix x = ck.row_matrix("x");
	if (static_cast<std::size_t>(x.rows()) != s.count_ || static_cast<std::size_t>(x.cols()) != s.k_) {
		throw ValidationError("taqr snapshot window has inconsistent shape");
	}
	const auto n = static_cast<Eigen::Index>(s.count_);
	s.x_.topRows(n) = x;
	s.y_.head(n) = ck.vector("y");
	s.beta_ = ck.vector("beta");
	const auto &sign = ck.ints("sign");
	const auto &seq = ck.ints("seq");
	for (std::size_t i = 0; i < s.count_; ++i) {
		s.sign_[i] = static_cast<signed char>(sign[i]);
		s.seq_[i] = static_cast<std::uint64_t>(seq[i]);
	}
	for (auto a : ck.ints("active")) {
		s.active_.push_back(static_cast<int>(a));
	}
	for (auto b : ck.ints("basis")) {
		s.basis_index_[static_cast<std::size_t>(b)] = static_cast<int>(s.basis_.size());
		s.basis_.push_back(static_cast<std::size_t>(b));
	}
	if (s.basis_.size() != s.active_.size()) {
		throw ValidationError("taqr snapshot basis does not match its active columns");
	}
	s.factor();
	s.compute_residuals();
	return s;
}

MultiLevelTaqr::MultiLevelTaqr(const RowMatrix &X0, std::span<const double> y0, const QuantileLevels &levels,
                               std::size_t window_capacity, const TaqrOptions &options)
    : levels_(levels) {
	for (double tau : levels) {
		states_.push_back(TaqrState::warm_start(X0, y0, tau, window_capacity, options));
	}
}

MultiLevelTaqr::MultiLevelTaqr(std::vector<TaqrState> states) : states_(std::move(states)) {
	std::vector<double> taus;
	for (const auto &s : states_) {
		taus.push_back(s.tau());
	}
	levels_ = QuantileLevels(std::move(taus));
}

std::vector<double> MultiLevelTaqr::predict(std::span<const double> x) const {
	std::vector<double> out;
	out.reserve(states_.size());
	for (const auto &s : states_) {
		out.push_back(s.predict(x));
	}
	return out;
}

std::vector<int> MultiLevelTaqr::assimilate(std::span<const double> x, double y) {
	std::vector<int> pivots;
	pivots.reserve(states_.size());
	for (auto &s : states_) {
		pivots.push_back(s.update(x, y).pivots);
	}
	return pivots;
}

Checkpoint MultiLevelTaqr::snapshot() const {
	Checkpoint ck("taqr-bank");
	ck.meta()["levels"] = levels_.values();
	nlohmann::json states = nlohmann::json::array();
	for (std::size_t l = 0; l < states_.size(); ++l) {
		const Checkpoint one = states_[l].snapshot();
		const std::string prefix = "L" + std::to_string(l) + "/";
		for (const char *name : {"x", "y", "beta"}) {
			ck.put(prefix + name, one.values(name), one.shape(name));
		}
		for (const char *name : {"sign", "seq", "basis", "active"}) {
			ck.put_ints(prefix + name, one.ints(name));
		}
		states.push_back(one.meta());
	}
	ck.meta()["states"] = std::move(states);
	return ck;
}

MultiLevelTaqr MultiLevelTaqr::restore(const Checkpoint &ck) {
	ck.expect_kind("taqr-bank");
	std::vector<TaqrState> states;
	const auto &metas = ck.meta().at("states");
	for (std::size_t l = 0; l < metas.size(); ++l) {
		Checkpoint one("taqr-state");
		one.meta() = metas[l];
		const std::string prefix = "L" + std::to_string(l) + "/";
		for (const char *name : {"x", "y", "beta"}) {
			one.put(name, ck.values(prefix + name), ck.shape(prefix + name));
		}
		for (const char *name : {"sign", "seq", "basis", "active"}) {
			one.put_ints(name, ck.ints(prefix + name));
		}
		states.push_back(TaqrState::restore(one));
	}
	return MultiLevelTaqr(std::move(states));
}

TaqrRun run_taqr(const RowMatrix &X, const ObservationSeries &y, const QuantileLevels &levels,
                 const TaqrRunOptions &options) {
	const auto T = static_cast<std::size_t>(X.rows());
	if (y.size() != T || y.valid.size() != T) {
		throw ValidationError("design matrix and observations are not aligned");
	}
	if (T <= options.n_init) {
		throw ValidationError("run_taqr needs more rows than the warm-start sample");
	}
	if (options.n_init > options.n_full) {
		throw ValidationError("warm-start sample larger than the sliding window");
	}

	std::vector<Eigen::Index> init_rows;
	for (std::size_t i = 0; i < options.n_init; ++i) {
		if (y.valid[i]) {
			init_rows.push_back(static_cast<Eigen::Index>(i));
		}
	}
	RowMatrix X0(static_cast<Eigen::Index>(init_rows.size()), X.cols());
	std::vector<double> y0;
	for (std::size_t r = 0; r < init_rows.size(); ++r) {
		X0.row(static_cast<Eigen::Index>(r)) = X.row(init_rows[r]);
		y0.push_back(y.values[static_cast<std::size_t>(init_rows[r])]);
	}

	TaqrRun run;
	MultiLevelTaqr bank(X0, y0, levels, options.n_full, options.solver);
	const std::size_t out_rows = T - options.n_init;
	run.forecast.start = y.time(options.n_init);
	run.forecast.levels = levels;
	run.forecast.values.resize(static_cast<Eigen::Index>(out_rows), static_cast<Eigen::Index>(levels.size()));
	run.forecast.issue_time.resize(out_rows);

	auto row_span = [&](std::size_t i) {
		return std::span<const double>(X.row(static_cast<Eigen::Index>(i)).data(), static_cast<std::size_t>(X.cols()));
	};
	auto emit = [&](std::size_t i, HourStamp issued) {
		const auto q = bank.predict(row_span(i));
		const auto r = static_cast<Eigen::Index>(i - options.n_init);
		for (std::size_t l = 0; l < q.size(); ++l) {
			run.forecast.values(r, static_cast<Eigen::Index>(l)) = q[l];
		}
		run.forecast.issue_time[static_cast<std::size_t>(r)] = issued;
	};
	auto absorb = [&](std::size_t i) {
		if (!y.valid[i]) {
			return;
		}
		for (int p : bank.assimilate(row_span(i), y.values[i])) {
			run.pivots.push_back(p);
		}
	};

	if (options.mode == HorizonMode::Rolling) {
		for (std::size_t i = options.n_init; i < T; ++i) {
			emit(i, y.time(i) - 1);
			absorb(i);
		}
	} else {
		std::size_t assimilated = options.n_init;
		std::size_t b = options.n_init;
		while (b < T) {
			const std::size_t e = std::min(T, b + static_cast<std::size_t>(24 - hour_of_day(y.time(b))));
			const HourStamp issued = y.time(b) - options.issue_lag;
			const auto cutoff = static_cast<std::size_t>(std::max<std::int64_t>(
			    static_cast<std::int64_t>(b) - options.issue_lag, static_cast<std::int64_t>(assimilated)));
			for (; assimilated < cutoff; ++assimilated) {
				absorb(assimilated);
			}
			for (std::size_t i = b; i < e; ++i) {
				emit(i, issued);
			}
			b = e;
		}
	}
	for (const auto &s : bank.states()) {
		run.cold_restarts += s.cold_restarts();
	}
	run.final_state = std::move(bank);
	return run;
}

} // namespace nabqr
