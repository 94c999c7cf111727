#include "nfmpc/param_vector.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace nfmpc {

void ParamVector::add_segment(const std::string& name, std::size_t rows, std::size_t cols) {
  check_config(rows > 0 && cols > 0, "segment '" + name + "' must be non-empty");
  check_config(index_.count(name) == 0, "duplicate segment '" + name + "'");
  Segment s{name, values_.size(), rows, cols};
  index_[name] = segments_.size();
  segments_.push_back(s);
  values_.resize(values_.size() + s.size(), 0.0);
}

Span ParamVector::seg(const std::string& name) {
  const Segment& s = segment_info(name);
  return Span(values_).subspan(s.offset, s.size());
}

ConstSpan ParamVector::seg(const std::string& name) const {
  const Segment& s = segment_info(name);
  return ConstSpan(values_).subspan(s.offset, s.size());
}

const ParamVector::Segment& ParamVector::segment_info(const std::string& name) const {
  auto it = index_.find(name);
  check_config(it != index_.end(), "unknown segment '" + name + "'");
  return segments_[it->second];
}

ParamVector ParamVector::zeros_like() const {
  ParamVector out;
  out.segments_ = segments_;
  out.index_ = index_;
  out.values_.assign(values_.size(), 0.0);
  return out;
}

bool ParamVector::same_layout(const ParamVector& other) const {
  if (segments_.size() != other.segments_.size()) return false;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const Segment &a = segments_[i], &b = other.segments_[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
  }
  return true;
}

double global_norm(const ParamVector& grads) {
  double s = 0.0;
  for (double g : grads.values()) s += g * g;
  return std::sqrt(s);
}

void scale_values(ParamVector& grads, double factor) {
  for (double& g : grads.values()) g *= factor;
}

namespace {

void encode_le(double x, unsigned char out[8]) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, 8);
  if constexpr (std::endian::native == std::endian::big) {
    bits = __builtin_bswap64(bits);
  }
  std::memcpy(out, &bits, 8);
}

double decode_le(const unsigned char in[8]) {
  std::uint64_t bits;
  std::memcpy(&bits, in, 8);
  if constexpr (std::endian::native == std::endian::big) {
    bits = __builtin_bswap64(bits);
  }
  double x;
  std::memcpy(&x, &bits, 8);
  return x;
}

}  // namespace

void save_checkpoint(const ParamVector& params, const nlohmann::json& meta,
                     const std::string& path) {
  nlohmann::json header;
  header["format"] = "nfmpc-checkpoint-v1";
  header["segments"] = nlohmann::json::array();
  for (const auto& s : params.segments()) {
    header["segments"].push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}});
  }
  header["meta"] = meta;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open checkpoint for writing: " + path);
  out << header.dump() << '\n';
  std::vector<unsigned char> buf(params.size() * 8);
  for (std::size_t i = 0; i < params.size(); ++i) encode_le(params.data()[i], &buf[i * 8]);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw ConfigError("write failed: " + path);
}

ParamVector load_checkpoint(const std::string& path, nlohmann::json* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint: " + path);
  std::string header_line;
  if (!std::getline(in, header_line)) throw ConfigError("truncated checkpoint header: " + path);
  nlohmann::json header = nlohmann::json::parse(header_line);
  if (header.value("format", "") != "nfmpc-checkpoint-v1")
    throw ConfigError("unrecognized checkpoint format in " + path);

  ParamVector params;
  for (const auto& s : header.at("segments")) {
    params.add_segment(s.at("name").get<std::string>(), s.at("rows").get<std::size_t>(),
                       s.at("cols").get<std::size_t>());
  }
  std::vector<unsigned char> buf(params.size() * 8);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size())
    throw ConfigError("truncated checkpoint payload: " + path);
  for (std::size_t i = 0; i < params.size(); ++i) params.data()[i] = decode_le(&buf[i * 8]);
  if (meta) *meta = header.value("meta", nlohmann::json::object());
  return params;
}

}  // namespace nfmpc
