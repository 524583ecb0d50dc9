#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nabqr/core.hpp"

namespace nabqr {

/// Versioned binary container for model and state snapshots.
///
/// Layout: 8-byte magic "NABQRCKP", u32 format version, u64 header length, a JSON header
/// (kind, free-form metadata, tensor directory), then the raw little-endian tensor payload.
/// Doubles are stored as their IEEE-754 bit patterns, so a save/load round trip is bit-exact.
class Checkpoint {
public:
	static constexpr std::uint32_t kFormatVersion = 1;

	Checkpoint() = default;
	explicit Checkpoint(std::string kind) : kind_(std::move(kind)) {}

	const std::string &kind() const noexcept { return kind_; }
	nlohmann::json &meta() noexcept { return meta_; }
	const nlohmann::json &meta() const noexcept { return meta_; }

	void put(const std::string &name, std::vector<double> values, std::vector<std::int64_t> shape = {});
	void put(const std::string &name, const Eigen::MatrixXd &m);
	void put(const std::string &name, const RowMatrix &m);
	void put(const std::string &name, const Eigen::VectorXd &v);
	void put_ints(const std::string &name, std::vector<std::int64_t> values);

	bool has(const std::string &name) const;
	const std::vector<double> &values(const std::string &name) const;
	const std::vector<std::int64_t> &ints(const std::string &name) const;
	std::vector<std::int64_t> shape(const std::string &name) const;
	Eigen::MatrixXd matrix(const std::string &name) const;
	RowMatrix row_matrix(const std::string &name) const;
	Eigen::VectorXd vector(const std::string &name) const;

	/// Throws ValidationError unless kind() == expected.
	void expect_kind(const std::string &expected) const;

	std::string to_bytes() const;
	static Checkpoint from_bytes(const std::string &bytes);
	void save(const std::filesystem::path &path) const;
	static Checkpoint load(const std::filesystem::path &path);

private:
	struct Tensor {
		std::vector<std::int64_t> shape;
		std::vector<double> f64;
		std::vector<std::int64_t> i64;
		bool is_int = false;
	};
	const Tensor &tensor(const std::string &name) const;

	std::string kind_;
	nlohmann::json meta_ = nlohmann::json::object();
	std::map<std::string, Tensor> tensors_;
};

} // namespace nabqr
