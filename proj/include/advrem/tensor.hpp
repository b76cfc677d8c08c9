#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace advrem {

using Shape = std::vector<std::size_t>;

/// Raised for any shape or dimension disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_string(const Shape& shape);

/// Dense row-major float64 array with an optional gradient buffer.
///
/// A Tensor is a shared handle: copying it aliases the same storage, which is
/// what lets a parameter list and a layer refer to one buffer. Use clone() for
/// an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return data_->shape; }
  std::size_t size() const { return data_->values.size(); }
  std::size_t rank() const { return data_->shape.size(); }
  /// Leading dimension; 1 for a rank-1 tensor.
  std::size_t rows() const;
  /// Product of all trailing dimensions; the full length for a rank-1 tensor.
  std::size_t cols() const;

  std::span<double> values() { return data_->values; }
  std::span<const double> values() const { return data_->values; }
  double& operator[](std::size_t i) { return data_->values[i]; }
  double operator[](std::size_t i) const { return data_->values[i]; }
  double item() const;

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool flag) { data_->requires_grad = flag; }
  bool has_grad() const { return !data_->grad.empty(); }
  /// Gradient buffer, allocated zero-filled on first access.
  std::span<double> grad();
  std::span<const double> grad() const { return data_->grad; }
  void zero_grad();
  void clear_grad() { data_->grad.clear(); }

  Tensor clone() const;
  /// Same storage identity (not value equality).
  bool same_storage(const Tensor& other) const { return data_ == other.data_; }
  const void* id() const { return data_.get(); }

 private:
  struct Data {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Data> data_;
};

/// Records backward rules in execution order and replays them in reverse.
///
/// A tape is single-use per backward sweep: backward() visits every recorded
/// node exactly once and then clears the tape.
class Tape {
 public:
  void record(std::function<void()> backward_rule);
  void backward(Tensor& loss);
  std::size_t size() const { return rules_.size(); }
  void clear() { rules_.clear(); }

 private:
  std::vector<std::function<void()>> rules_;
};

/// Counter-based SplitMix64 generator.
///
/// Draw i of stream s under seed k is mix64(key(k, s) + (i + 1) * 0x9E3779B97F4A7C15),
/// where mix64 is the SplitMix64 finalizer and key(k, s) = mix64(k ^ mix64(s + 0xD1B54A32D192ED03)).
/// Outputs depend only on (seed, stream, counter), so they agree across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n), unbiased (rejection sampling).
  std::size_t below(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }
  /// Independent generator for a named sub-stream of the same seed.
  Rng fork(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

namespace ops {

// All ops take a nullable tape; with nullptr nothing is recorded (inference).

/// out[i,j] = sum_k x[i,k] * W[k,j] + b[j]
Tensor affine(Tape* tape, const Tensor& x, const Tensor& W, const Tensor& b);
Tensor tanh(Tape* tape, const Tensor& x);
Tensor sigmoid(Tape* tape, const Tensor& x);
Tensor hadamard(Tape* tape, const Tensor& a, const Tensor& b);
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& x, double factor);
/// Sum of all elements, as a scalar.
Tensor sum(Tape* tape, const Tensor& x);
/// Mean over the batch of -log softmax(logits)[label], max-shifted for stability.
Tensor softmax_nll(Tape* tape, const Tensor& logits, std::span<const int> labels);
/// Inverted dropout: survivors scaled by 1/(1-p); identity when !training or p == 0.
Tensor dropout(Tape* tape, const Tensor& x, double p, Rng& rng, bool training);
/// Gradient reversal: identity forward, gradient multiplied by -lambda backward.
Tensor grl(Tape* tape, const Tensor& x, double lambda);
/// Value copy that blocks all gradient flow.
Tensor detach(const Tensor& x);
/// Rows of table selected by ids; gradients scatter-add into the looked-up rows.
Tensor embedding_lookup(Tape* tape, const Tensor& table, std::span<const int> ids);

}  // namespace ops

/// Row-wise argmax with ties resolved to the lowest class index.
std::vector<int> argmax_rows(const Tensor& logits);

/// SGD with classical momentum: v <- m*v + g; p <- p - lr*v.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum, double clip_norm = 0.0);

  /// Applies one update to every parameter and clears their gradients.
  /// Throws if a parameter has no populated gradient.
  void step(std::span<Tensor> params);
  /// Drops the velocity buffer of one parameter (used after re-initialisation).
  void reset(const Tensor& param);

  double lr() const { return lr_; }
  double momentum() const { return momentum_; }

 private:
  double lr_;
  double momentum_;
  double clip_norm_;
  std::unordered_map<const void*, std::vector<double>> velocity_;
};

}  // namespace advrem
