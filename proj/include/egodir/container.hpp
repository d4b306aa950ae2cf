#pragma once
// Structured binary container shared by every persisted artifact (coefficient frames,
// directivity frames, SVD bases, checkpoints).
//
// Layout (all integers little-endian):
//
//   offset 0   8 bytes   magic "EGODIRC1"
//   offset 8   u32       H, length of the header in bytes
//   offset 12  H bytes   UTF-8 JSON header:
//                          { "kind":    string,
//                            "version": integer,
//                            "meta":    object   (orders, bins, frames, radii, config ...),
//                            "tensors": [ { "name": string, "shape": [int...],
//                                           "offset": int, "count": int } ... ] }
//   offset 12+H          payload: float32 little-endian values; tensor offsets are in
//                        bytes from the start of the payload
//
// Complex tensors carry a trailing dimension of 2 (re, im). The JSON header is written
// with sorted keys so identical content produces identical bytes.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace egodir {

struct Tensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t count() const;
  Eigen::MatrixXd matrix() const;  // 2-D tensors only, row-major payload
  Eigen::MatrixXcd complex_matrix() const;  // shape [rows, cols, 2]
  std::vector<double> values() const;
};

class Container {
 public:
  static constexpr int kVersion = 1;

  Container() = default;
  explicit Container(std::string kind) : kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }
  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  void add(std::string name, std::vector<std::int64_t> shape, std::span<const double> values);
  void add(std::string name, const Eigen::MatrixXd& m);
  void add(std::string name, const Eigen::MatrixXcd& m);
  void add_vector(std::string name, std::span<const double> v);

  bool has(const std::string& name) const;
  /// Throws Error(MissingInput) if absent.
  const Tensor& get(const std::string& name) const;
  const std::vector<Tensor>& tensors() const { return tensors_; }

  void save(const std::filesystem::path& path) const;
  /// Throws Error(MissingInput) if the file is absent, Error(Config) if malformed or if
  /// `expected_kind` is non-empty and differs.
  static Container load(const std::filesystem::path& path, const std::string& expected_kind = "");

 private:
  std::string kind_;
  nlohmann::json meta_ = nlohmann::json::object();
  std::vector<Tensor> tensors_;
};

}  // namespace egodir
