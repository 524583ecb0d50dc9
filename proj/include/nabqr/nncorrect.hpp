#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nabqr/checkpoint.hpp"
#include "nabqr/core.hpp"

namespace nabqr {

/// Hour offsets of the ensemble rows fed to the corrector for target hour t.
/// Offset l selects the ensemble row at t - l; rows reach the network oldest first.
struct LagSpec {
	std::vector<int> lags{1, 2, 3, 6, 12, 24, 48};

	std::size_t steps() const noexcept { return lags.size(); }
	/// Largest offset: the first hour with full history.
	std::size_t depth() const;
	/// Offsets in the order the recurrence consumes them (largest first).
	std::vector<int> oldest_first() const;
	void check() const;
};

struct NetShape {
	std::size_t features = 51;
	std::size_t units = 256;
	std::size_t hidden = 20; ///< dense1 width
	std::size_t outputs = 20;

	bool operator==(const NetShape &) const = default;
};

/// Trainable tensors of the LSTM + two dense layers, plus the fixed input/output scaling.
///
/// Gate weights are stacked in the order input, forget, candidate, output:
/// rows [g*U, (g+1)*U) of wx (4U x F), wh (4U x U) and b (4U) belong to gate g.
/// dense1 maps U -> hidden (w1 is hidden x U), dense2 maps hidden -> outputs (w2 is outputs x hidden).
struct LstmParams {
	NetShape shape;
	Eigen::MatrixXd wx, wh;
	Eigen::VectorXd b;
	Eigen::MatrixXd w1;
	Eigen::VectorXd b1;
	Eigen::MatrixXd w2;
	Eigen::VectorXd b2;

	/// Inputs are standardized as (x - in_mean) / in_scale before the first gate.
	Eigen::VectorXd in_mean, in_scale;
	/// Network outputs are multiplied by this factor (targets are learned in units of it).
	double output_scale = 1.0;

	static LstmParams zeros(const NetShape &shape);
	/// Uniform +-sqrt(6/(fan_in+fan_out)) per tensor, forget-gate bias 1, from the seed alone.
	static LstmParams initialize(const NetShape &shape, std::uint64_t seed);

	std::size_t parameter_count() const noexcept;
	bool all_finite() const;
	/// Throws ValidationError on any shape mismatch.
	void check() const;

	/// Named views of the trainable tensors, in a fixed order.
	std::vector<std::pair<std::string, Eigen::Map<Eigen::VectorXd>>> tensors();
	std::vector<std::pair<std::string, Eigen::Map<const Eigen::VectorXd>>> tensors() const;

	void save(Checkpoint &ck) const;
	static LstmParams load(const Checkpoint &ck);
};

/// Trainable parameter count implied by a shape (single bias vector per gate).
std::size_t parameter_count(const NetShape &shape) noexcept;

/// One LSTM step on an already standardized input. Returns (h_t, c_t).
std::pair<Eigen::VectorXd, Eigen::VectorXd> lstm_cell(const LstmParams &params, const Eigen::VectorXd &x,
                                                       const Eigen::VectorXd &h_prev, const Eigen::VectorXd &c_prev);

/// Network output for one lag window (steps x F raw rows, oldest first). Each output is >= 0.
/// When strict, rows that decrease left to right are rejected.
Eigen::VectorXd model_forward(const LstmParams &params, const RowMatrix &window, bool strict = false);

/// Mean over levels of the check loss of (target - prediction).
double quantile_loss(std::span<const double> target, std::span<const double> prediction, const QuantileLevels &levels);

enum class TargetMode { Observation, AugmentedQuantile };
enum class Optimizer { GradientDescent, Adam };

TargetMode parse_target_mode(const std::string &name);
std::string target_mode_name(TargetMode mode);
Optimizer parse_optimizer(const std::string &name);
std::string optimizer_name(Optimizer opt);

struct TrainConfig {
	QuantileLevels levels = QuantileLevels::equidistant(20);
	NetShape shape;
	std::size_t epochs = 30;
	std::size_t batch_size = 64;
	double learning_rate = 0.05;
	double clip_norm = 1.0;
	Optimizer optimizer = Optimizer::GradientDescent;
	std::uint64_t seed = 1;
	/// Trailing share of the samples held out to select the returned epoch.
	double validation_fraction = 0.1;
	TargetMode target_mode = TargetMode::Observation;

	void check() const;
};

/// Lagged training samples drawn from one contiguous slice of the series.
struct TrainingSet {
	RowMatrix inputs;                 ///< all ensemble rows of the source, sorted, MW
	std::vector<std::size_t> times;   ///< target rows (indices into inputs), each >= lags.depth()
	RowMatrix targets;                ///< times.size() x Q
	LagSpec lags;

	std::size_t size() const noexcept { return times.size(); }
	/// Raw lag window for sample s, steps x F, oldest first.
	RowMatrix window(std::size_t s) const;
};

/// Samples t in [begin, end) with full lag history and a valid observation.
/// Observation mode repeats y_t across levels; augmented-quantile mode uses the level quantiles of
/// the raw members of hour t together with y_t.
TrainingSet make_training_set(const EnsembleMatrix &ensembles, const ObservationSeries &y, std::size_t begin,
                              std::size_t end, const LagSpec &lags, const QuantileLevels &levels, TargetMode mode);

/// Mean quantile loss over the chosen samples and its gradient with respect to every trainable tensor.
/// The gradient is returned in a params-shaped object (scaling fields copied from `params`).
double loss_and_gradient(const LstmParams &params, const TrainingSet &data, std::span<const std::size_t> samples,
                         const QuantileLevels &levels, LstmParams *gradient);

struct TrainHistory {
	double initial_train_loss = 0.0;
	std::vector<double> train_loss;      ///< per epoch, MW
	std::vector<double> validation_loss; ///< per epoch, empty without a validation split
	std::size_t selected_epoch = 0;      ///< 0 = initial parameters
};

struct TrainResult {
	LstmParams params;
	TrainHistory history;
};

/// Mini-batch training with full backpropagation through the lag window.
/// Deterministic given the config; throws NumericalError if the loss becomes non-finite.
TrainResult train(const TrainingSet &data, const TrainConfig &config);

struct CorrectedEnsembles {
	EnsembleMatrix values;     ///< rows for hours [first, T), sorted
	std::size_t first = 0;     ///< index into the source of the first row (= lags.depth())
	double crossing_rate = 0;  ///< share of rows that needed sorting
	std::vector<std::size_t> zero_columns; ///< output columns identically zero over the rows
};

/// Runs the corrector over every hour with full lag history.
/// Rows are processed one at a time through correct_row, so any subset gives bitwise-identical rows.
CorrectedEnsembles correct_ensembles(const LstmParams &params, const EnsembleMatrix &raw, const LagSpec &lags);

/// Corrected row for hour t of `raw` (t >= lags.depth()), sorted. Sets *crossed when sorting changed it.
Eigen::VectorXd correct_row(const LstmParams &params, const RowMatrix &raw_sorted, std::size_t t, const LagSpec &lags,
                            bool *crossed = nullptr);

/// Raw lag window for hour t of a sorted ensemble matrix, steps x F, oldest first.
RowMatrix lag_window(const RowMatrix &raw_sorted, std::size_t t, const LagSpec &lags);

/// Corrector parameters together with everything needed to apply them.
struct Corrector {
	LstmParams params;
	LagSpec lags;
	QuantileLevels levels;
	TargetMode target_mode = TargetMode::Observation;
	std::uint64_t seed = 0;

	Checkpoint checkpoint() const;
	static Corrector from_checkpoint(const Checkpoint &ck);
};

} // namespace nabqr
