#include "conml/autodiff/param_vector.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace conml {
namespace {

constexpr char kMagic[8] = {'C', 'O', 'N', 'M', 'L', 'P', 'V', '1'};

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(raw, raw + sizeof(T));
    }
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint: truncated payload");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void ParamVector::add(std::string name, Tensor value) {
  if (find(name) != size()) {
    throw std::invalid_argument("ParamVector: duplicate entry '" + name + "'");
  }
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
}

std::size_t ParamVector::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return names_.size();
}

Index ParamVector::total_size() const {
  Index n = 0;
  for (const Tensor& t : tensors_) n += t.numel();
  return n;
}

Eigen::VectorXd ParamVector::flatten() const {
  Eigen::VectorXd flat(total_size());
  Index offset = 0;
  for (const Tensor& t : tensors_) {
    for (double v : t.flat()) flat[offset++] = v;
  }
  return flat;
}

void ParamVector::unflatten(const Eigen::Ref<const Eigen::VectorXd>& flat) {
  if (flat.size() != total_size()) {
    throw std::invalid_argument("unflatten: expected " + std::to_string(total_size()) +
                                " values, got " + std::to_string(flat.size()));
  }
  Index offset = 0;
  for (Tensor& t : tensors_) {
    for (double& v : t.flat()) v = flat[offset++];
  }
}

ParamVector ParamVector::with_values(const Eigen::Ref<const Eigen::VectorXd>& flat) const {
  ParamVector out = *this;
  out.unflatten(flat);
  return out;
}

ParamVector ParamVector::zeros_like() const {
  ParamVector out;
  for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Tensor::zeros(tensors_[i].shape()));
  return out;
}

bool ParamVector::same_layout(const ParamVector& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (names_[i] != other.names_[i] || tensors_[i].shape() != other.tensors_[i].shape()) {
      return false;
    }
  }
  return true;
}

std::vector<Var> bind_variables(Tape& tape, const ParamVector& params) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& t : params.tensors()) vars.push_back(tape.variable(t));
  return vars;
}

std::vector<Var> bind_constants(Tape& tape, const ParamVector& params) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& t : params.tensors()) vars.push_back(tape.constant(t));
  return vars;
}

nlohmann::json param_manifest(const ParamVector& params) {
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    entries.push_back({{"name", params.name(i)}, {"shape", params[i].shape().dims()}});
  }
  return {{"format", "conml-param-vector/1"},
          {"total_size", params.total_size()},
          {"entries", std::move(entries)}};
}

std::string encode_checkpoint(const ParamVector& params) {
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(i);
    const Tensor& t = params[i];
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape().rank()));
    for (Index d : t.shape().dims()) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (double v : t.flat()) put_le<double>(out, v);
  }
  return out;
}

ParamVector decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const auto count = in.get<std::uint32_t>();
  ParamVector params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint32_t>();
    std::string name = in.take(name_len);
    const auto rank = in.get<std::uint32_t>();
    if (rank > 2) throw std::runtime_error("checkpoint: unsupported rank for '" + name + "'");
    std::vector<Index> dims;
    for (std::uint32_t r = 0; r < rank; ++r) dims.push_back(static_cast<Index>(in.get<std::uint64_t>()));
    Tensor t = Tensor::zeros(Shape(std::move(dims)));
    for (double& v : t.flat()) v = in.get<double>();
    params.add(std::move(name), std::move(t));
  }
  if (!in.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ParamVector& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

ParamVector load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace conml
