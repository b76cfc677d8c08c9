#include "advrem/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace advrem {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  return std::any_of(ts.begin(), ts.end(), [](const Tensor* t) { return t->requires_grad(); });
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) : data_(std::make_shared<Data>()) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
  }
  data_->values.assign(product(shape), 0.0);
  data_->shape = std::move(shape);
  data_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : data_(std::make_shared<Data>()) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
  }
  if (values.size() != product(shape)) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_string(shape));
  }
  data_->shape = std::move(shape);
  data_->values = std::move(values);
  data_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

std::size_t Tensor::rows() const { return rank() <= 1 ? 1 : shape()[0]; }

std::size_t Tensor::cols() const { return rank() <= 1 ? size() : size() / shape()[0]; }

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_string(shape()));
  return data_->values[0];
}

std::span<double> Tensor::grad() {
  if (data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0);
  return data_->grad;
}

void Tensor::zero_grad() {
  if (!data_->grad.empty()) std::fill(data_->grad.begin(), data_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor out(data_->shape, data_->values, data_->requires_grad);
  return out;
}

// ---------------------------------------------------------------------------

void Tape::record(std::function<void()> backward_rule) { rules_.push_back(std::move(backward_rule)); }

void Tape::backward(Tensor& loss) {
  if (loss.size() != 1) {
    throw DimensionError("backward requires a scalar loss, got " + shape_string(loss.shape()));
  }
  loss.grad()[0] += 1.0;
  for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
  rules_.clear();
}

// ---------------------------------------------------------------------------

std::uint64_t mix64(std::uint64_t x) {
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), key_(mix64(seed ^ mix64(stream + 0xD1B54A32D192ED03ULL))) {}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below(0)");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

Rng Rng::fork(std::uint64_t stream) const { return Rng(seed_, mix64(stream_ * 31 + stream + 1)); }

// ---------------------------------------------------------------------------

namespace ops {

Tensor affine(Tape* tape, const Tensor& x, const Tensor& W, const Tensor& b) {
  if (x.rank() != 2 || W.rank() != 2) {
    throw DimensionError("affine: x and W must be matrices, got " + shape_string(x.shape()) +
                         " and " + shape_string(W.shape()));
  }
  const std::size_t n = x.rows(), d_in = x.cols(), d_out = W.cols();
  if (W.rows() != d_in) {
    throw DimensionError("affine: x is " + shape_string(x.shape()) + " but W is " +
                         shape_string(W.shape()) + " (inner dimensions differ)");
  }
  if (b.size() != d_out) {
    throw DimensionError("affine: bias has " + std::to_string(b.size()) + " entries, expected " +
                         std::to_string(d_out));
  }
  const bool track = tape && any_requires_grad({&x, &W, &b});
  Tensor out({n, d_out}, track);
  {
    ConstMatMap X(x.values().data(), n, d_in);
    ConstMatMap Wm(W.values().data(), d_in, d_out);
    Eigen::Map<const Eigen::RowVectorXd> bv(b.values().data(), d_out);
    MatMap Y(out.values().data(), n, d_out);
    Y.noalias() = X * Wm;
    Y.rowwise() += bv;
  }
  if (track) {
    tape->record([x = x, W = W, b = b, out, n, d_in, d_out]() mutable {
      if (!out.has_grad()) return;
      ConstMatMap dY(out.grad().data(), n, d_out);
      if (x.requires_grad()) {
        MatMap dX(x.grad().data(), n, d_in);
        dX.noalias() += dY * ConstMatMap(W.values().data(), d_in, d_out).transpose();
      }
      if (W.requires_grad()) {
        MatMap dW(W.grad().data(), d_in, d_out);
        dW.noalias() += ConstMatMap(x.values().data(), n, d_in).transpose() * dY;
      }
      if (b.requires_grad()) {
        Eigen::Map<Eigen::RowVectorXd> db(b.grad().data(), d_out);
        db += dY.colwise().sum();
      }
    });
  }
  return out;
}

namespace {

template <typename Fwd, typename Deriv>
Tensor unary(Tape* tape, const Tensor& x, Fwd fwd, Deriv deriv_from_output) {
  const bool track = tape && x.requires_grad();
  Tensor out(x.shape(), track);
  auto in = x.values();
  auto o = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = fwd(in[i]);
  if (track) {
    tape->record([x = x, out, deriv_from_output]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      auto y = out.values();
      auto dx = x.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * deriv_from_output(y[i]);
    });
  }
  return out;
}

}  // namespace

Tensor tanh(Tape* tape, const Tensor& x) {
  return unary(
      tape, x, [](double v) { return std::tanh(v); }, [](double t) { return 1.0 - t * t; });
}

Tensor sigmoid(Tape* tape, const Tensor& x) {
  return unary(
      tape, x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double s) { return s * (1.0 - s); });
}

Tensor hadamard(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  const bool track = tape && any_requires_grad({&a, &b});
  Tensor out(a.shape(), track);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  if (track) {
    tape->record([a = a, b = b, out]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      if (a.requires_grad()) {
        auto da = a.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * b[i];
      }
      if (b.requires_grad()) {
        auto db = b.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * a[i];
      }
    });
  }
  return out;
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool track = tape && any_requires_grad({&a, &b});
  Tensor out(a.shape(), track);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  if (track) {
    tape->record([a = a, b = b, out]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      for (Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto d = t->grad();
        for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape* tape, const Tensor& x, double factor) {
  const bool track = tape && x.requires_grad();
  Tensor out(x.shape(), track);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  if (track) {
    tape->record([x = x, out, factor]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      auto dx = x.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * factor;
    });
  }
  return out;
}

Tensor sum(Tape* tape, const Tensor& x) {
  const bool track = tape && x.requires_grad();
  auto v = x.values();
  Tensor out = Tensor::scalar(std::accumulate(v.begin(), v.end(), 0.0), track);
  if (track) {
    tape->record([x = x, out]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0];
      for (double& d : x.grad()) d += g;
    });
  }
  return out;
}

Tensor softmax_nll(Tape* tape, const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw DimensionError("softmax_nll: logits must be [n x C], got " + shape_string(logits.shape()));
  }
  const std::size_t n = logits.rows(), classes = logits.cols();
  if (classes < 2) throw DimensionError("softmax_nll: need at least 2 classes");
  if (labels.size() != n) {
    throw DimensionError("softmax_nll: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  }
  std::vector<double> probs(n * classes);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw std::out_of_range("softmax_nll: label " + std::to_string(label) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
    const double* row = logits.values().data() + i * classes;
    const double peak = *std::max_element(row, row + classes);
    double norm = 0.0;
    for (std::size_t c = 0; c < classes; ++c) norm += std::exp(row[c] - peak);
    const double log_norm = std::log(norm);
    for (std::size_t c = 0; c < classes; ++c) {
      probs[i * classes + c] = std::exp(row[c] - peak - log_norm);
    }
    total += log_norm - (row[label] - peak);
  }
  const bool track = tape && logits.requires_grad();
  Tensor out = Tensor::scalar(total / static_cast<double>(n), track);
  if (track) {
    std::vector<int> gold(labels.begin(), labels.end());
    tape->record([logits = logits, out, probs = std::move(probs), gold = std::move(gold), n,
                  classes]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0] / static_cast<double>(n);
      auto dl = logits.grad();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < classes; ++c) {
          const double onehot = static_cast<int>(c) == gold[i] ? 1.0 : 0.0;
          dl[i * classes + c] += g * (probs[i * classes + c] - onehot);
        }
      }
    });
  }
  return out;
}

Tensor dropout(Tape* tape, const Tensor& x, double p, Rng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw std::invalid_argument("dropout: probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  for (double& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  const bool track = tape && x.requires_grad();
  Tensor out(x.shape(), track);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i];
  if (track) {
    tape->record([x = x, out, mask = std::move(mask)]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      auto dx = x.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * mask[i];
    });
  }
  return out;
}

Tensor grl(Tape* tape, const Tensor& x, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("grl: lambda must be non-negative");
  const bool track = tape && x.requires_grad();
  Tensor out(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), track);
  if (track) {
    tape->record([x = x, out, lambda]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      auto dx = x.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += -lambda * dy[i];
    });
  }
  return out;
}

Tensor detach(const Tensor& x) {
  return Tensor(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), false);
}

Tensor embedding_lookup(Tape* tape, const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw DimensionError("embedding_lookup: table must be a matrix");
  if (ids.empty()) throw DimensionError("embedding_lookup: empty id sequence");
  const std::size_t vocab = table.rows(), dim = table.cols();
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) +
                              " outside vocabulary of size " + std::to_string(vocab));
    }
  }
  const bool track = tape && table.requires_grad();
  Tensor out({ids.size(), dim}, track);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::copy_n(table.values().data() + static_cast<std::size_t>(ids[r]) * dim, dim,
                out.values().data() + r * dim);
  }
  if (track) {
    std::vector<int> rows(ids.begin(), ids.end());
    tape->record([table = table, out, rows = std::move(rows), dim]() mutable {
      if (!out.has_grad()) return;
      auto dy = out.grad();
      auto dt = table.grad();
      for (std::size_t r = 0; r < rows.size(); ++r) {
        double* dst = dt.data() + static_cast<std::size_t>(rows[r]) * dim;
        const double* src = dy.data() + r * dim;
        for (std::size_t c = 0; c < dim; ++c) dst[c] += src[c];
      }
    });
  }
  return out;
}

}  // namespace ops

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.rows(), classes = logits.cols();
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.values().data() + i * classes;
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------

SgdMomentum::SgdMomentum(double lr, double momentum, double clip_norm)
    : lr_(lr), momentum_(momentum), clip_norm_(clip_norm) {
  if (lr <= 0.0) throw std::invalid_argument("learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must lie in [0, 1)");
}

void SgdMomentum::step(std::span<Tensor> params) {
  for (const auto& p : params) {
    if (!p.has_grad()) throw std::logic_error("sgd step: parameter has no populated gradient");
  }
  double factor = 1.0;
  if (clip_norm_ > 0.0) {
    double sq = 0.0;
    for (const auto& p : params) {
      for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > clip_norm_) factor = clip_norm_ / norm;
  }
  for (auto& p : params) {
    auto& v = velocity_[p.id()];
    if (v.empty()) v.assign(p.size(), 0.0);
    auto g = p.grad();
    auto w = p.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum_ * v[i] + factor * g[i];
      w[i] -= lr_ * v[i];
    }
    p.clear_grad();
  }
}

void SgdMomentum::reset(const Tensor& param) { velocity_.erase(param.id()); }

}  // namespace advrem
