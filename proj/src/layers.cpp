#include "advrem/layers.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

namespace advrem {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

Tensor uniform_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols}, true);
  for (double& v : t.values()) v = rng.uniform(-kInitRange, kInitRange);
  return t;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

std::vector<Tensor> MlpParams::parameters() const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(weights[i]);
    out.push_back(biases[i]);
  }
  return out;
}

MlpParams MlpParams::clone() const {
  MlpParams out;
  for (const auto& w : weights) out.weights.push_back(w.clone());
  for (const auto& b : biases) out.biases.push_back(b.clone());
  return out;
}

std::vector<Tensor> Encoder::parameters() const {
  return {embedding.matrix, lstm.input_weights, lstm.recurrent_weights, lstm.bias};
}

Encoder Encoder::clone() const {
  return Encoder{EmbeddingTable{embedding.matrix.clone()},
                 LstmParams{lstm.input_weights.clone(), lstm.recurrent_weights.clone(),
                            lstm.bias.clone()}};
}

EmbeddingTable init_embedding(std::size_t vocab_size, std::size_t dim, Rng& rng) {
  return EmbeddingTable{uniform_matrix(vocab_size, dim, rng)};
}

LstmParams init_lstm(std::size_t input_dim, std::size_t hidden_dim, Rng& rng, double forget_bias) {
  LstmParams p{uniform_matrix(input_dim, 4 * hidden_dim, rng),
               uniform_matrix(hidden_dim, 4 * hidden_dim, rng), Tensor({4 * hidden_dim}, true)};
  for (std::size_t j = hidden_dim; j < 2 * hidden_dim; ++j) p.bias[j] = forget_bias;
  return p;
}

MlpParams init_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden_dims,
                   std::size_t output_dim, Rng& rng) {
  if (hidden_dims.empty()) throw std::invalid_argument("mlp needs at least one hidden layer");
  MlpParams mlp;
  std::size_t in = input_dim;
  for (std::size_t h : hidden_dims) {
    mlp.weights.push_back(uniform_matrix(in, h, rng));
    mlp.biases.push_back(Tensor({h}, true));
    in = h;
  }
  mlp.weights.push_back(uniform_matrix(in, output_dim, rng));
  mlp.biases.push_back(Tensor({output_dim}, true));
  return mlp;
}

void reinit_mlp(MlpParams& mlp, Rng& rng) {
  for (auto& w : mlp.weights) {
    for (double& v : w.values()) v = rng.uniform(-kInitRange, kInitRange);
  }
  for (auto& b : mlp.biases) std::fill(b.values().begin(), b.values().end(), 0.0);
}

// ---------------------------------------------------------------------------

Tensor lstm_encode_packed(Tape* tape, const LstmParams& params, const Tensor& embedded,
                          std::span<const std::size_t> lengths) {
  const std::size_t in_dim = params.input_dim();
  const std::size_t H = params.hidden_dim();
  const std::size_t G = 4 * H;
  if (params.input_weights.cols() != G || params.recurrent_weights.cols() != G ||
      params.bias.size() != G) {
    throw DimensionError("lstm: inconsistent gate parameter shapes");
  }
  if (embedded.rank() != 2 || embedded.cols() != in_dim) {
    throw DimensionError("lstm: embedded input " + shape_string(embedded.shape()) +
                         " does not have " + std::to_string(in_dim) + " columns");
  }
  if (lengths.empty()) throw DimensionError("lstm: empty batch");
  const std::size_t B = lengths.size();
  std::vector<std::size_t> offsets(B);
  std::size_t total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (lengths[b] == 0) throw DimensionError("lstm: empty sequence in batch");
    offsets[b] = total;
    total += lengths[b];
  }
  if (total != embedded.rows()) {
    throw DimensionError("lstm: lengths sum to " + std::to_string(total) + " but input has " +
                         std::to_string(embedded.rows()) + " rows");
  }

  // Longest first, so the sequences still running at step t are a prefix.
  std::vector<std::size_t> order(B);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lengths[a] > lengths[b]; });
  const std::size_t steps = lengths[order.front()];
  std::vector<std::size_t> active(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    active[t] = static_cast<std::size_t>(std::count_if(
        lengths.begin(), lengths.end(), [t](std::size_t len) { return len > t; }));
  }

  ConstMatMap X(embedded.values().data(), total, in_dim);
  ConstMatMap W(params.input_weights.values().data(), in_dim, G);
  ConstMatMap U(params.recurrent_weights.values().data(), H, G);
  Eigen::Map<const Eigen::RowVectorXd> bias(params.bias.values().data(), G);

  RowMat xw = X * W;
  xw.rowwise() += bias;

  RowMat h = RowMat::Zero(B, H);
  RowMat c = RowMat::Zero(B, H);
  struct StepCache {
    RowMat gates;   // activated i, f, o, g
    RowMat c_prev;
    RowMat h_prev;
    RowMat tanh_c;
  };
  const bool track = tape && (params.input_weights.requires_grad() ||
                              params.recurrent_weights.requires_grad() ||
                              params.bias.requires_grad() || embedded.requires_grad());
  std::vector<StepCache> cache;
  if (track) cache.resize(steps);

  RowMat pre;
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t n = active[t];
    pre.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(G));
    for (std::size_t r = 0; r < n; ++r) pre.row(r) = xw.row(offsets[order[r]] + t);
    pre.noalias() += h.topRows(n) * U;
    for (std::size_t r = 0; r < n; ++r) {
      double* row = pre.row(r).data();
      for (std::size_t j = 0; j < 3 * H; ++j) row[j] = sigmoid(row[j]);
      for (std::size_t j = 3 * H; j < G; ++j) row[j] = std::tanh(row[j]);
    }
    if (track) {
      cache[t].c_prev = c.topRows(n);
      cache[t].h_prev = h.topRows(n);
    }
    RowMat tanh_c(n, H);
    for (std::size_t r = 0; r < n; ++r) {
      const double* g = pre.row(r).data();
      for (std::size_t j = 0; j < H; ++j) {
        const double cn = g[H + j] * c(r, j) + g[j] * g[3 * H + j];
        c(r, j) = cn;
        const double tc = std::tanh(cn);
        tanh_c(r, j) = tc;
        h(r, j) = g[2 * H + j] * tc;
      }
    }
    if (track) {
      cache[t].gates = pre;
      cache[t].tanh_c = std::move(tanh_c);
    }
  }

  Tensor out({B, H}, track);
  for (std::size_t r = 0; r < B; ++r) {
    std::copy_n(h.row(r).data(), H, out.values().data() + order[r] * H);
  }

  if (track) {
    tape->record([params = params, embedded = embedded, out, cache = std::move(cache),
                  order = std::move(order), active = std::move(active),
                  offsets = std::move(offsets), B, H, G, in_dim, total, steps]() mutable {
      if (!out.has_grad()) return;
      RowMat dh(B, H);
      for (std::size_t r = 0; r < B; ++r) {
        std::copy_n(out.grad().data() + order[r] * H, H, dh.row(r).data());
      }
      RowMat dc = RowMat::Zero(B, H);
      RowMat dxw = RowMat::Zero(total, G);
      RowMat dU = RowMat::Zero(H, G);
      ConstMatMap U(params.recurrent_weights.values().data(), H, G);
      RowMat da;
      for (std::size_t t = steps; t-- > 0;) {
        const std::size_t n = active[t];
        const StepCache& sc = cache[t];
        da.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(G));
        for (std::size_t r = 0; r < n; ++r) {
          const double* g = sc.gates.row(r).data();
          double* a = da.row(r).data();
          for (std::size_t j = 0; j < H; ++j) {
            const double ig = g[j], fg = g[H + j], og = g[2 * H + j], cand = g[3 * H + j];
            const double tc = sc.tanh_c(r, j);
            const double dhv = dh(r, j);
            const double dcv = dc(r, j) + dhv * og * (1.0 - tc * tc);
            a[j] = dcv * cand * ig * (1.0 - ig);
            a[H + j] = dcv * sc.c_prev(r, j) * fg * (1.0 - fg);
            a[2 * H + j] = dhv * tc * og * (1.0 - og);
            a[3 * H + j] = dcv * ig * (1.0 - cand * cand);
            dc(r, j) = dcv * fg;
          }
          dxw.row(offsets[order[r]] + t) += da.row(r);
        }
        dU.noalias() += sc.h_prev.transpose() * da;
        dh.topRows(n).noalias() = da * U.transpose();
      }
      if (params.recurrent_weights.requires_grad()) {
        MatMap(params.recurrent_weights.grad().data(), H, G) += dU;
      }
      if (params.input_weights.requires_grad()) {
        MatMap(params.input_weights.grad().data(), in_dim, G).noalias() +=
            ConstMatMap(embedded.values().data(), total, in_dim).transpose() * dxw;
      }
      if (params.bias.requires_grad()) {
        Eigen::Map<Eigen::RowVectorXd>(params.bias.grad().data(), G) += dxw.colwise().sum();
      }
      if (embedded.requires_grad()) {
        MatMap(embedded.grad().data(), total, in_dim).noalias() +=
            dxw * ConstMatMap(params.input_weights.values().data(), in_dim, G).transpose();
      }
    });
  }
  return out;
}

Tensor lstm_encode(Tape* tape, const LstmParams& params, const Tensor& embedded) {
  if (embedded.rank() != 2 || embedded.rows() == 0) {
    throw DimensionError("lstm_encode: expected a non-empty [m x dim] sequence");
  }
  const std::size_t len = embedded.rows();
  return lstm_encode_packed(tape, params, embedded, std::span<const std::size_t>(&len, 1));
}

Tensor encode_batch(Tape* tape, const Encoder& encoder,
                    const std::vector<std::span<const int>>& sequences) {
  std::vector<int> ids;
  std::vector<std::size_t> lengths;
  lengths.reserve(sequences.size());
  for (const auto& seq : sequences) {
    if (seq.empty()) throw DimensionError("encode: empty token sequence");
    ids.insert(ids.end(), seq.begin(), seq.end());
    lengths.push_back(seq.size());
  }
  Tensor embedded = ops::embedding_lookup(tape, encoder.embedding.matrix, ids);
  return lstm_encode_packed(tape, encoder.lstm, embedded, lengths);
}

Tensor mlp_forward(Tape* tape, const MlpParams& params, const Tensor& input,
                   const DropoutConfig& dropout, Rng& rng) {
  if (params.weights.empty()) throw DimensionError("mlp: no layers");
  if (input.cols() != params.input_dim()) {
    throw DimensionError("mlp: input width " + std::to_string(input.cols()) +
                         " does not match first layer " + std::to_string(params.input_dim()));
  }
  Tensor x = input;
  const std::size_t last = params.weights.size() - 1;
  for (std::size_t l = 0; l < last; ++l) {
    x = ops::tanh(tape, ops::affine(tape, x, params.weights[l], params.biases[l]));
    x = ops::dropout(tape, x, dropout.p, rng, dropout.training);
  }
  return ops::affine(tape, x, params.weights[last], params.biases[last]);
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'A', 'D', 'V', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return value;
}

}  // namespace

const Tensor& Checkpoint::at(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw std::out_of_range("checkpoint: no tensor named '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  nlohmann::json header;
  header["config"] = checkpoint.config;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : checkpoint.tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : checkpoint.tensors) {
    out.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }
  if (read_pod<std::uint32_t>(in) != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version");
  }
  const auto header_len = read_pod<std::uint64_t>(in);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("checkpoint: truncated header");
  const auto header = nlohmann::json::parse(text);
  Checkpoint ck;
  ck.config = header.at("config");
  for (const auto& entry : header.at("tensors")) {
    Tensor t(entry.at("shape").get<Shape>(), true);
    in.read(reinterpret_cast<char*>(t.values().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated tensor data");
    ck.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return ck;
}

void add_encoder(Checkpoint& ck, const std::string& prefix, const Encoder& encoder) {
  ck.tensors.emplace_back(prefix + ".embedding", encoder.embedding.matrix);
  ck.tensors.emplace_back(prefix + ".lstm.input_weights", encoder.lstm.input_weights);
  ck.tensors.emplace_back(prefix + ".lstm.recurrent_weights", encoder.lstm.recurrent_weights);
  ck.tensors.emplace_back(prefix + ".lstm.bias", encoder.lstm.bias);
}

void add_mlp(Checkpoint& ck, const std::string& prefix, const MlpParams& mlp) {
  for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
    ck.tensors.emplace_back(prefix + ".W" + std::to_string(l), mlp.weights[l]);
    ck.tensors.emplace_back(prefix + ".b" + std::to_string(l), mlp.biases[l]);
  }
}

Encoder read_encoder(const Checkpoint& ck, const std::string& prefix) {
  return Encoder{EmbeddingTable{ck.at(prefix + ".embedding")},
                 LstmParams{ck.at(prefix + ".lstm.input_weights"),
                            ck.at(prefix + ".lstm.recurrent_weights"), ck.at(prefix + ".lstm.bias")}};
}

MlpParams read_mlp(const Checkpoint& ck, const std::string& prefix) {
  MlpParams mlp;
  for (std::size_t l = 0;; ++l) {
    const std::string w = prefix + ".W" + std::to_string(l);
    const bool present = std::any_of(ck.tensors.begin(), ck.tensors.end(),
                                     [&](const auto& e) { return e.first == w; });
    if (!present) break;
    mlp.weights.push_back(ck.at(w));
    mlp.biases.push_back(ck.at(prefix + ".b" + std::to_string(l)));
  }
  if (mlp.weights.empty()) throw std::out_of_range("checkpoint: no head named '" + prefix + "'");
  return mlp;
}

}  // namespace advrem
