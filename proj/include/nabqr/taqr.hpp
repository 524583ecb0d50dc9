#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nabqr/checkpoint.hpp"
#include "nabqr/core.hpp"

namespace nabqr {

/// Tolerances and budgets of the quantile-regression simplex.
struct TaqrOptions {
	/// A residual counts as interpolated when |r| <= interpolation_tol * (1 + max|y|).
	double interpolation_tol = 1e-8;
	/// Ratio-test ties and minimum usable pivot magnitude.
	double pivot_tol = 1e-10;
	/// Columns whose QR pivot falls below rank_tol * (largest pivot) are dropped.
	double rank_tol = 1e-10;
	/// Reduced costs above -optimality_tol count as nonnegative.
	double optimality_tol = 1e-9;
	/// Per-step pivot budget is pivots_per_column * K before a cold re-solve.
	int pivots_per_column = 50;
};

struct QrFit {
	Eigen::VectorXd beta;
	std::vector<std::size_t> basis; ///< row indices interpolated by the fit
	double objective = 0.0;
	int pivots = 0;
	std::vector<int> dropped_columns;
};

/// Linear quantile regression by the simplex method on the LP
///   min tau*1'r+ + (1-tau)*1'r-   s.t.  X beta + r+ - r- = y,  r+, r- >= 0.
/// Requires n > K. Near-collinear columns are dropped (coefficient 0); RankError when none remain.
QrFit qr_batch_solve(const RowMatrix &X, std::span<const double> y, double tau, const TaqrOptions &options = {});

/// Sliding-window quantile regression for one level, re-optimized from the previous vertex.
///
/// Single owner: a state must not be advanced concurrently. Distinct states are independent.
class TaqrState {
public:
	struct StepResult {
		double prediction = 0.0;
		int pivots = 0;
		bool cold_restart = false;
	};

	TaqrState() = default;

	/// Solves the initial problem on (X0, y0) and keeps it as the first window contents.
	static TaqrState warm_start(const RowMatrix &X0, std::span<const double> y0, double tau,
	                            std::size_t window_capacity = 5000, const TaqrOptions &options = {});

	double tau() const noexcept { return tau_; }
	std::size_t columns() const noexcept { return k_; }
	std::size_t window_size() const noexcept { return count_; }
	std::size_t capacity() const noexcept { return cap_; }
	const Eigen::VectorXd &beta() const noexcept { return beta_; }
	const std::vector<int> &active_columns() const noexcept { return active_; }

	/// x . beta with the current coefficients.
	double predict(std::span<const double> x) const;

	/// Out-of-sample prediction from the current fit, then window update and re-optimization.
	StepResult step(std::span<const double> x, double y);
	/// Evicts the oldest row when full, appends (x, y) and re-optimizes. Returns the pivot count.
	StepResult update(std::span<const double> x, double y);
	/// Re-runs the optimality loop on the unchanged window.
	int reoptimize();

	/// Sum of check losses of the window residuals.
	double objective() const;
	/// Window contents in arrival order.
	RowMatrix window_design() const;
	Eigen::VectorXd window_response() const;
	/// Arrival-order positions of the interpolated (basic) rows.
	std::vector<std::size_t> basis_positions() const;
	/// Number of window rows with |residual| within the interpolation tolerance.
	std::size_t interpolated_count() const;

	std::int64_t total_pivots() const noexcept { return total_pivots_; }
	std::int64_t cold_restarts() const noexcept { return cold_restarts_; }

	Checkpoint snapshot() const;
	static TaqrState restore(const Checkpoint &ck);

	friend QrFit qr_batch_solve(const RowMatrix &, std::span<const double>, double, const TaqrOptions &);

private:
	TaqrState(std::size_t k, std::size_t cap, double tau, const TaqrOptions &options);

	std::size_t slot_of_position(std::size_t pos) const noexcept;
	void write_slot(std::size_t slot, std::span<const double> x, double y);
	void cold_solve(int budget);
	void factor();
	void solve_beta();
	void compute_residuals();
	double scale_tol() const;
	bool replace_basic_slot(std::size_t slot);
	/// Runs the simplex loop; returns pivots used or -1 when the budget is exhausted.
	int optimize(int budget);
	double psi(signed char sign) const noexcept { return sign > 0 ? tau_ : tau_ - 1.0; }
	std::uint64_t bland_key(std::size_t slot, signed char sign) const noexcept {
		return 2 * seq_[slot] + (sign < 0 ? 1 : 0);
	}

	std::size_t k_ = 0;
	std::size_t cap_ = 0;
	double tau_ = 0.5;
	TaqrOptions options_;

	std::size_t count_ = 0;
	std::size_t head_ = 0; ///< oldest slot once the window is full
	std::uint64_t next_seq_ = 0;
	RowMatrix x_;               ///< cap x K, slots [0, count)
	Eigen::VectorXd y_;         ///< cap
	std::vector<signed char> sign_;
	std::vector<std::uint64_t> seq_;
	std::vector<int> basis_index_; ///< per slot: position in basis_ or -1
	std::vector<std::size_t> basis_; ///< one slot per active column
	std::vector<int> active_;
	Eigen::VectorXd beta_; ///< K, zero on dropped columns

	// Scratch recomputed from the persistent fields above.
	Eigen::MatrixXd basis_matrix_;
	Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
	Eigen::VectorXd resid_;

	std::int64_t total_pivots_ = 0;
	std::int64_t cold_restarts_ = 0;
};

enum class HorizonMode { Rolling, DayAhead };

struct TaqrRunOptions {
	std::size_t n_init = 192;
	std::size_t n_full = 5000;
	HorizonMode mode = HorizonMode::DayAhead;
	/// Hours between issue time and the first target hour of a day-ahead block.
	int issue_lag = 12;
	TaqrOptions solver;
};

/// One TaqrState per level fed from a single design stream.
class MultiLevelTaqr {
public:
	MultiLevelTaqr() = default;
	MultiLevelTaqr(const RowMatrix &X0, std::span<const double> y0, const QuantileLevels &levels,
	               std::size_t window_capacity, const TaqrOptions &options);
	explicit MultiLevelTaqr(std::vector<TaqrState> states);

	const QuantileLevels &levels() const noexcept { return levels_; }
	const std::vector<TaqrState> &states() const noexcept { return states_; }

	/// Per-level predictions in level order.
	std::vector<double> predict(std::span<const double> x) const;
	/// Adds an observed row to every level's window. Returns pivots per level.
	std::vector<int> assimilate(std::span<const double> x, double y);

	Checkpoint snapshot() const;
	static MultiLevelTaqr restore(const Checkpoint &ck);

private:
	QuantileLevels levels_;
	std::vector<TaqrState> states_;
};

struct TaqrRun {
	QuantileForecast forecast; ///< rows n_init .. T-1
	std::vector<int> pivots;   ///< every per-level update, in order
	std::int64_t cold_restarts = 0;
	MultiLevelTaqr final_state;
};

/// Time-adaptive quantile regression over a design matrix aligned with `y`.
///
/// Warm-starts on the valid rows among the first n_init, then emits out-of-sample predictions for
/// the remaining rows. Masked observations never enter a window. In day-ahead mode the rows are
/// grouped into UTC days; a block is predicted with the coefficients available issue_lag hours
/// before its first hour, and only observations older than that issue time have been assimilated.
TaqrRun run_taqr(const RowMatrix &X, const ObservationSeries &y, const QuantileLevels &levels,
                 const TaqrRunOptions &options = {});

} // namespace nabqr
