#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nfmpc/common.hpp"

namespace nfmpc {

/// Flat storage for all trainable values of a model, addressed by named
/// segments with fixed shapes. Segment order is the registration order and is
/// the serialization order.
class ParamVector {
 public:
  struct Segment {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;  // 1 for vectors
    std::size_t size() const { return rows * cols; }
  };

  ParamVector() = default;

  /// Registers a new segment of rows*cols zeros. Views into the storage are
  /// invalidated by further registration; fetch them with seg() afterwards.
  void add_segment(const std::string& name, std::size_t rows, std::size_t cols = 1);

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  Span seg(const std::string& name);
  ConstSpan seg(const std::string& name) const;
  const Segment& segment_info(const std::string& name) const;

  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t size() const { return values_.size(); }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  Span values() { return values_; }
  ConstSpan values() const { return values_; }

  /// Same segment layout, all values zero.
  ParamVector zeros_like() const;

  /// True when the two vectors share the exact segment layout.
  bool same_layout(const ParamVector& other) const;

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

 private:
  std::vector<Segment> segments_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> values_;
};

/// Gradients mirroring a ParamVector, plus the optional gradient with respect
/// to the primal input of the operation that produced them.
struct GradientRecord {
  ParamVector grads;
  Vec input_grad;

  static GradientRecord zeros_like(const ParamVector& params) {
    return GradientRecord{params.zeros_like(), {}};
  }
  void accumulate(const GradientRecord& other, double scale = 1.0) {
    axpy(scale, other.grads.values(), grads.values());
  }
};

double global_norm(const ParamVector& grads);
void scale_values(ParamVector& grads, double factor);

/// Checkpoint format: one line of UTF-8 JSON (segment names/shapes plus a
/// caller-supplied meta object), '\n', then the raw little-endian IEEE-754
/// payload in segment order. Round-trips bit-exactly.
void save_checkpoint(const ParamVector& params, const nlohmann::json& meta,
                     const std::string& path);
ParamVector load_checkpoint(const std::string& path, nlohmann::json* meta = nullptr);

}  // namespace nfmpc
