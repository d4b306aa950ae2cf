#include "egodir/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "egodir/error.hpp"

namespace egodir {

namespace {

constexpr char kMagic[8] = {'E', 'G', 'O', 'D', 'I', 'R', 'C', '1'};

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

}  // namespace

std::int64_t Tensor::count() const {
  std::int64_t c = 1;
  for (auto d : shape) c *= d;
  return c;
}

Eigen::MatrixXd Tensor::matrix() const {
  require(shape.size() == 2, ErrorKind::Shape, "tensor '" + name + "' is not 2-D");
  Eigen::MatrixXd m(shape[0], shape[1]);
  for (std::int64_t r = 0; r < shape[0]; ++r)
    for (std::int64_t c = 0; c < shape[1]; ++c) m(r, c) = data[static_cast<size_t>(r * shape[1] + c)];
  return m;
}

Eigen::MatrixXcd Tensor::complex_matrix() const {
  require(shape.size() == 3 && shape[2] == 2, ErrorKind::Shape, "tensor '" + name + "' is not a complex matrix");
  Eigen::MatrixXcd m(shape[0], shape[1]);
  for (std::int64_t r = 0; r < shape[0]; ++r)
    for (std::int64_t c = 0; c < shape[1]; ++c) {
      const size_t i = static_cast<size_t>((r * shape[1] + c) * 2);
      m(r, c) = {data[i], data[i + 1]};
    }
  return m;
}

std::vector<double> Tensor::values() const { return {data.begin(), data.end()}; }

void Container::add(std::string name, std::vector<std::int64_t> shape, std::span<const double> values) {
  Tensor t{std::move(name), std::move(shape), {}};
  require(t.count() == static_cast<std::int64_t>(values.size()), ErrorKind::Shape,
          "container tensor '" + t.name + "': shape does not match value count");
  require(!has(t.name), ErrorKind::Config, "container tensor '" + t.name + "' added twice");
  t.data.resize(values.size());
  std::transform(values.begin(), values.end(), t.data.begin(), [](double v) { return static_cast<float>(v); });
  tensors_.push_back(std::move(t));
}

void Container::add(std::string name, const Eigen::MatrixXd& m) {
  std::vector<double> v(static_cast<size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v[static_cast<size_t>(r * m.cols() + c)] = m(r, c);
  add(std::move(name), {m.rows(), m.cols()}, v);
}

void Container::add(std::string name, const Eigen::MatrixXcd& m) {
  std::vector<double> v(static_cast<size_t>(m.size() * 2));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const size_t i = static_cast<size_t>((r * m.cols() + c) * 2);
      v[i] = m(r, c).real();
      v[i + 1] = m(r, c).imag();
    }
  add(std::move(name), {m.rows(), m.cols(), 2}, v);
}

void Container::add_vector(std::string name, std::span<const double> v) {
  add(std::move(name), {static_cast<std::int64_t>(v.size())}, v);
}

bool Container::has(const std::string& name) const {
  return std::any_of(tensors_.begin(), tensors_.end(), [&](const Tensor& t) { return t.name == name; });
}

const Tensor& Container::get(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  fail(ErrorKind::MissingInput, "container has no tensor '" + name + "'");
}

void Container::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["kind"] = kind_;
  header["version"] = kVersion;
  header["meta"] = meta_;
  header["tensors"] = nlohmann::json::array();
  std::int64_t offset = 0;
  for (const auto& t : tensors_) {
    header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.count()}});
    offset += t.count() * 4;
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::MissingInput, "cannot write container: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const auto len = static_cast<std::uint32_t>(text.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : tensors_)
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
  if (!out) fail(ErrorKind::MissingInput, "failed writing container: " + path.string());
}

Container Container::load(const std::filesystem::path& path, const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingInput, "container not found: " + path.string());
  char magic[8];
  in.read(magic, 8);
  require(in && std::memcmp(magic, kMagic, 8) == 0, ErrorKind::Config, "not an egodir container: " + path.string());
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  std::string text(len, '\0');
  in.read(text.data(), len);
  require(static_cast<bool>(in), ErrorKind::Config, "truncated container header: " + path.string());
  const auto header = nlohmann::json::parse(text, nullptr, false);
  require(!header.is_discarded() && header.contains("tensors"), ErrorKind::Config, "malformed container header: " + path.string());
  require(header.value("version", 0) == kVersion, ErrorKind::Config, "unsupported container version: " + path.string());

  Container c(header.value("kind", std::string{}));
  require(expected_kind.empty() || c.kind_ == expected_kind, ErrorKind::Config,
          "container " + path.string() + " has kind '" + c.kind_ + "', expected '" + expected_kind + "'");
  c.meta_ = header.value("meta", nlohmann::json::object());
  const auto payload_start = in.tellg();
  for (const auto& entry : header["tensors"]) {
    Tensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto count = entry.at("count").get<std::int64_t>();
    require(count == t.count(), ErrorKind::Config, "container tensor '" + t.name + "' has inconsistent shape");
    t.data.resize(static_cast<size_t>(count));
    in.seekg(payload_start + static_cast<std::streamoff>(entry.at("offset").get<std::int64_t>()));
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(count * 4));
    require(static_cast<bool>(in), ErrorKind::Config, "truncated container payload: " + path.string());
    c.tensors_.push_back(std::move(t));
  }
  return c;
}

}  // namespace egodir
