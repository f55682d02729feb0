#pragma once

// Context-augmented many-to-one LSTM language model (optionally
// bidirectional), trained with full backpropagation through time.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ctxgen/corpus.hpp"
#include "ctxgen/io.hpp"

namespace ctxgen {

enum class CellActivation : std::uint8_t { tanh = 0, relu = 1 };
// timestep0: the context is an extra first timestep (window + 1 steps of V inputs).
// concat: the context is appended to every word timestep (window steps of 2V inputs).
enum class ContextPlacement : std::uint8_t { timestep0 = 0, concat = 1 };
enum class ContextMode : std::uint8_t { none = 0, tfidf = 1, cluster = 2 };
enum class OptimizerKind : std::uint8_t { sgd = 0, adam = 1 };

inline std::string_view to_string(ContextMode m) {
  switch (m) {
    case ContextMode::none: return "none";
    case ContextMode::tfidf: return "tfidf";
    case ContextMode::cluster: return "cluster";
  }
  return "?";
}

struct LmConfig {
  std::size_t vocab_size = 0;
  std::size_t window = 8;
  std::size_t hidden = 256;
  bool bidirectional = true;
  CellActivation activation = CellActivation::tanh;
  ContextPlacement placement = ContextPlacement::timestep0;
  ContextMode context_mode = ContextMode::cluster;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double lr = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  double val_fraction = 0.1;
  std::size_t eval_every = 3;

  std::size_t directions() const { return bidirectional ? 2 : 1; }
  std::size_t input_dim() const { return placement == ContextPlacement::timestep0 ? vocab_size : 2 * vocab_size; }
  std::size_t steps() const { return placement == ContextPlacement::timestep0 ? window + 1 : window; }

  void validate() const {
    if (vocab_size < 2) throw config_error("lm.vocab_size", "must be >= 2");
    if (hidden == 0) throw config_error("lm.hidden", "must be > 0");
    if (window == 0) throw config_error("lm.window", "must be >= 1");
    if (!(lr > 0)) throw config_error("lm.lr", "must be > 0");
    if (batch_size == 0) throw config_error("lm.batch_size", "must be > 0");
    if (!(val_fraction >= 0 && val_fraction < 1)) throw config_error("lm.val_fraction", "must be in [0, 1)");
    if (eval_every == 0) throw config_error("lm.eval_every", "must be > 0");
  }

  // Fields that determine the parameter layout and the forward computation.
  bool same_architecture(const LmConfig& o) const {
    return vocab_size == o.vocab_size && window == o.window && hidden == o.hidden &&
           bidirectional == o.bidirectional && activation == o.activation && placement == o.placement;
  }

  friend bool operator==(const LmConfig&, const LmConfig&) = default;
};

// Flat parameter block with matrix views. Per direction: Wx (4H x D),
// Wh (4H x H), b (4H), gate rows ordered input, forget, output, candidate.
// Then Wy (V x dirs*H) and by (V).
class LmParams {
 public:
  using Mat = Eigen::Map<Eigen::MatrixXd>;
  using CMat = Eigen::Map<const Eigen::MatrixXd>;
  using Vec = Eigen::Map<Eigen::VectorXd>;
  using CVec = Eigen::Map<const Eigen::VectorXd>;

  LmParams() = default;
  explicit LmParams(const LmConfig& cfg)
      : V_(cfg.vocab_size), D_(cfg.input_dim()), H_(cfg.hidden), dirs_(cfg.directions()) {
    flat_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(count(cfg)));
  }

  static std::size_t count(const LmConfig& cfg) {
    const std::size_t H = cfg.hidden;
    return cfg.directions() * (4 * H * cfg.input_dim() + 4 * H * H + 4 * H) +
           cfg.vocab_size * cfg.directions() * H + cfg.vocab_size;
  }

  // Uniform(-1/sqrt(H), 1/sqrt(H)) recurrent weights, forget bias 1.
  static LmParams initialize(const LmConfig& cfg) {
    LmParams p(cfg);
    std::mt19937_64 rng(cfg.seed);
    auto draw = [&](double scale) { return (static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0) * scale; };
    const double s = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
    const double sy = 1.0 / std::sqrt(static_cast<double>(cfg.hidden * cfg.directions()));
    for (std::size_t d = 0; d < p.dirs_; ++d) {
      auto wx = p.wx(d);
      auto wh = p.wh(d);
      for (Eigen::Index i = 0; i < wx.size(); ++i) wx.data()[i] = draw(s);
      for (Eigen::Index i = 0; i < wh.size(); ++i) wh.data()[i] = draw(s);
      p.b(d).segment(static_cast<Eigen::Index>(p.H_), static_cast<Eigen::Index>(p.H_)).setOnes();
    }
    auto wy = p.wy();
    for (Eigen::Index i = 0; i < wy.size(); ++i) wy.data()[i] = draw(sy);
    return p;
  }

  std::size_t vocab_size() const { return V_; }
  std::size_t input_dim() const { return D_; }
  std::size_t hidden() const { return H_; }
  std::size_t directions() const { return dirs_; }

  Eigen::VectorXd& flat() { return flat_; }
  const Eigen::VectorXd& flat() const { return flat_; }

  Mat wx(std::size_t d) { return Mat(flat_.data() + dir_offset(d), rows4(), idx(D_)); }
  Mat wh(std::size_t d) { return Mat(flat_.data() + dir_offset(d) + 4 * H_ * D_, rows4(), idx(H_)); }
  Vec b(std::size_t d) { return Vec(flat_.data() + dir_offset(d) + 4 * H_ * D_ + 4 * H_ * H_, rows4()); }
  Mat wy() { return Mat(flat_.data() + head_offset(), idx(V_), idx(dirs_ * H_)); }
  Vec by() { return Vec(flat_.data() + head_offset() + V_ * dirs_ * H_, idx(V_)); }

  CMat wx(std::size_t d) const { return CMat(flat_.data() + dir_offset(d), rows4(), idx(D_)); }
  CMat wh(std::size_t d) const { return CMat(flat_.data() + dir_offset(d) + 4 * H_ * D_, rows4(), idx(H_)); }
  CVec b(std::size_t d) const { return CVec(flat_.data() + dir_offset(d) + 4 * H_ * D_ + 4 * H_ * H_, rows4()); }
  CMat wy() const { return CMat(flat_.data() + head_offset(), idx(V_), idx(dirs_ * H_)); }
  CVec by() const { return CVec(flat_.data() + head_offset() + V_ * dirs_ * H_, idx(V_)); }

  bool all_finite() const { return flat_.allFinite(); }

  friend bool operator==(const LmParams& a, const LmParams& b) {
    return a.V_ == b.V_ && a.D_ == b.D_ && a.H_ == b.H_ && a.dirs_ == b.dirs_ && a.flat_ == b.flat_;
  }

 private:
  static Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }
  Eigen::Index rows4() const { return idx(4 * H_); }
  std::size_t dir_offset(std::size_t d) const { return d * (4 * H_ * D_ + 4 * H_ * H_ + 4 * H_); }
  std::size_t head_offset() const { return dirs_ * (4 * H_ * D_ + 4 * H_ * H_ + 4 * H_); }

  std::size_t V_ = 0, D_ = 0, H_ = 0, dirs_ = 0;
  Eigen::VectorXd flat_;
};

// Active input columns for each timestep of one instance.
using SparseSequence = std::vector<std::vector<token_id>>;

inline SparseSequence sparse_input(const ContextVector& context, std::span<const token_id> window,
                                   const LmConfig& cfg) {
  if (window.size() != cfg.window)
    throw bounds_error("input window has " + std::to_string(window.size()) + " tokens, expected " +
                       std::to_string(cfg.window));
  if (cfg.context_mode == ContextMode::none && !context.active().empty())
    throw error("base-mode model given a non-zero context");
  const std::size_t V = cfg.vocab_size;
  for (auto id : window)
    if (id >= V) throw bounds_error("input id " + std::to_string(id) + " >= V");
  for (auto id : context.active())
    if (id >= V) throw bounds_error("context id " + std::to_string(id) + " >= V");
  SparseSequence seq;
  if (cfg.placement == ContextPlacement::timestep0) {
    seq.push_back(context.active());
    for (auto id : window) seq.push_back({id});
  } else {
    for (auto id : window) {
      std::vector<token_id> cols{id};
      for (auto c : context.active()) cols.push_back(static_cast<token_id>(V + c));
      seq.push_back(std::move(cols));
    }
  }
  return seq;
}

inline SparseSequence sparse_input(const TrainingInstance& inst, const LmConfig& cfg) {
  if (cfg.context_mode == ContextMode::none) return sparse_input(ContextVector::zero(cfg.vocab_size), inst.input_ids, cfg);
  return sparse_input(inst.context, inst.input_ids, cfg);
}

// Dense view of the model input: one input_dim()-vector per timestep. In
// base mode the context timestep is all zeros.
inline std::vector<std::vector<double>> encode_input(const TrainingInstance& inst, const LmConfig& cfg) {
  std::vector<std::vector<double>> dense;
  for (const auto& cols : sparse_input(inst, cfg)) {
    std::vector<double> x(cfg.input_dim(), 0.0);
    for (auto c : cols) x[c] = 1.0;
    dense.push_back(std::move(x));
  }
  return dense;
}

namespace detail {

struct StepCache {
  Eigen::MatrixXd i, f, o, g, c, a, h;
};

struct DirectionCache {
  std::vector<StepCache> steps;  // in processing order
  std::vector<std::size_t> order;
};

inline Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); });
}

inline Eigen::MatrixXd activate(const Eigen::MatrixXd& z, CellActivation act) {
  if (act == CellActivation::tanh) return z.array().tanh().matrix();
  return z.cwiseMax(0.0);
}

inline Eigen::MatrixXd activation_grad(const Eigen::MatrixXd& out, CellActivation act) {
  if (act == CellActivation::tanh) return (1.0 - out.array().square()).matrix();
  return (out.array() > 0.0).cast<double>().matrix();
}

struct BatchForward {
  std::vector<DirectionCache> dirs;
  Eigen::MatrixXd features;  // dirs*H x B
  Eigen::MatrixXd probs;     // V x B
  Eigen::MatrixXd log_probs;
};

inline BatchForward forward_batch(const LmParams& p, const LmConfig& cfg, std::span<const SparseSequence> batch,
                                  bool keep_cache) {
  const auto B = static_cast<Eigen::Index>(batch.size());
  const auto H = static_cast<Eigen::Index>(p.hidden());
  const std::size_t T = cfg.steps();
  for (const auto& seq : batch)
    if (seq.size() != T)
      throw bounds_error("input sequence has " + std::to_string(seq.size()) + " steps, expected " + std::to_string(T));
  BatchForward out;
  out.features.resize(static_cast<Eigen::Index>(p.directions()) * H, B);
  for (std::size_t d = 0; d < p.directions(); ++d) {
    DirectionCache dc;
    for (std::size_t s = 0; s < T; ++s) dc.order.push_back(d == 0 ? s : T - 1 - s);
    const auto wx = p.wx(d);
    const auto wh = p.wh(d);
    const auto bias = p.b(d);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(H, B);
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(H, B);
    for (std::size_t t : dc.order) {
      Eigen::MatrixXd z = wh * h;
      z.colwise() += bias;
      for (Eigen::Index col = 0; col < B; ++col)
        for (auto x : batch[static_cast<std::size_t>(col)][t]) z.col(col) += wx.col(static_cast<Eigen::Index>(x));
      StepCache sc;
      sc.i = sigmoid(z.topRows(H));
      sc.f = sigmoid(z.middleRows(H, H));
      sc.o = sigmoid(z.middleRows(2 * H, H));
      sc.g = activate(z.bottomRows(H), cfg.activation);
      c = sc.f.cwiseProduct(c) + sc.i.cwiseProduct(sc.g);
      sc.a = activate(c, cfg.activation);
      h = sc.o.cwiseProduct(sc.a);
      if (!h.allFinite() || !c.allFinite())
        throw numeric_error("non-finite LSTM state at timestep " + std::to_string(t) +
                            (d == 0 ? " (forward direction)" : " (backward direction)"));
      sc.c = c;
      sc.h = h;
      if (keep_cache) dc.steps.push_back(std::move(sc));
    }
    out.features.middleRows(static_cast<Eigen::Index>(d) * H, H) = h;
    out.dirs.push_back(std::move(dc));
  }
  Eigen::MatrixXd logits = p.wy() * out.features;
  logits.colwise() += p.by();
  if (!logits.allFinite()) throw numeric_error("non-finite logits");
  out.log_probs.resize(logits.rows(), B);
  for (Eigen::Index col = 0; col < B; ++col) {
    const double mx = logits.col(col).maxCoeff();
    const double lse = mx + std::log((logits.col(col).array() - mx).exp().sum());
    out.log_probs.col(col) = logits.col(col).array() - lse;
  }
  out.probs = out.log_probs.array().exp().matrix();
  return out;
}

}  // namespace detail

// Softmax distribution over the vocabulary for one input sequence.
inline Eigen::VectorXd forward(const LmParams& params, const LmConfig& cfg, const SparseSequence& input) {
  std::vector<SparseSequence> batch{input};
  return detail::forward_batch(params, cfg, batch, false).probs.col(0);
}

struct LossAndGrads {
  double loss = 0.0;
  std::size_t correct = 0;
  LmParams grads;
};

// Mean cross-entropy over the batch and its exact gradient (BPTT through
// every timestep of both directions).
inline LossAndGrads loss_and_grads(const LmParams& params, const LmConfig& cfg,
                                   std::span<const SparseSequence> inputs, std::span<const token_id> targets) {
  if (inputs.empty()) throw error("loss_and_grads: empty batch");
  if (inputs.size() != targets.size()) throw error("loss_and_grads: input/target count mismatch");
  for (auto t : targets)
    if (t >= cfg.vocab_size) throw bounds_error("target id " + std::to_string(t) + " >= V");
  const auto fw = detail::forward_batch(params, cfg, inputs, true);
  const auto B = static_cast<Eigen::Index>(inputs.size());
  const auto H = static_cast<Eigen::Index>(params.hidden());
  const double inv_b = 1.0 / static_cast<double>(B);

  LossAndGrads out{0.0, 0, LmParams(cfg)};
  Eigen::MatrixXd dlogits = fw.probs;
  for (Eigen::Index col = 0; col < B; ++col) {
    const auto t = static_cast<Eigen::Index>(targets[static_cast<std::size_t>(col)]);
    out.loss -= fw.log_probs(t, col);
    Eigen::Index arg = 0;
    fw.probs.col(col).maxCoeff(&arg);
    if (arg == t) ++out.correct;
    dlogits(t, col) -= 1.0;
  }
  out.loss *= inv_b;
  dlogits *= inv_b;

  auto& g = out.grads;
  g.wy().noalias() = dlogits * fw.features.transpose();
  g.by() = dlogits.rowwise().sum();
  const Eigen::MatrixXd dfeat = params.wy().transpose() * dlogits;

  for (std::size_t d = 0; d < params.directions(); ++d) {
    const auto& dc = fw.dirs[d];
    const auto wh = params.wh(d);
    auto gwx = g.wx(d);
    auto gwh = g.wh(d);
    auto gb = g.b(d);
    Eigen::MatrixXd dh = dfeat.middleRows(static_cast<Eigen::Index>(d) * H, H);
    Eigen::MatrixXd dc_next = Eigen::MatrixXd::Zero(H, B);
    Eigen::MatrixXd dz(4 * H, B);
    const Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(H, B);
    for (std::size_t k = dc.steps.size(); k-- > 0;) {
      const auto& sc = dc.steps[k];
      const std::size_t t = dc.order[k];
      const Eigen::MatrixXd& c_prev = k > 0 ? dc.steps[k - 1].c : zeros;
      const Eigen::MatrixXd& h_prev = k > 0 ? dc.steps[k - 1].h : zeros;

      const Eigen::MatrixXd d_o = dh.cwiseProduct(sc.a);
      const Eigen::MatrixXd d_c = dc_next + dh.cwiseProduct(sc.o).cwiseProduct(detail::activation_grad(sc.a, cfg.activation));
      const Eigen::MatrixXd d_i = d_c.cwiseProduct(sc.g);
      const Eigen::MatrixXd d_g = d_c.cwiseProduct(sc.i);
      const Eigen::MatrixXd d_f = d_c.cwiseProduct(c_prev);
      dc_next = d_c.cwiseProduct(sc.f);

      dz.topRows(H) = d_i.cwiseProduct(sc.i).cwiseProduct((1.0 - sc.i.array()).matrix());
      dz.middleRows(H, H) = d_f.cwiseProduct(sc.f).cwiseProduct((1.0 - sc.f.array()).matrix());
      dz.middleRows(2 * H, H) = d_o.cwiseProduct(sc.o).cwiseProduct((1.0 - sc.o.array()).matrix());
      dz.bottomRows(H) = d_g.cwiseProduct(detail::activation_grad(sc.g, cfg.activation));

      gwh.noalias() += dz * h_prev.transpose();
      gb += dz.rowwise().sum();
      for (Eigen::Index col = 0; col < B; ++col)
        for (auto x : inputs[static_cast<std::size_t>(col)][t]) gwx.col(static_cast<Eigen::Index>(x)) += dz.col(col);
      dh.noalias() = wh.transpose() * dz;
    }
  }
  return out;
}

inline LossAndGrads loss_and_grads(const LmParams& params, const LmConfig& cfg,
                                   std::span<const TrainingInstance> batch) {
  std::vector<SparseSequence> inputs;
  std::vector<token_id> targets;
  for (const auto& inst : batch) {
    inputs.push_back(sparse_input(inst, cfg));
    targets.push_back(inst.target_id);
  }
  return loss_and_grads(params, cfg, inputs, targets);
}

struct EpochMetrics {
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double train_acc = std::numeric_limits<double>::quiet_NaN();
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_acc = std::numeric_limits<double>::quiet_NaN();

  bool operator==(const EpochMetrics& o) const {
    auto same = [](double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; };
    return same(train_loss, o.train_loss) && same(train_acc, o.train_acc) && same(val_loss, o.val_loss) &&
           same(val_acc, o.val_acc);
  }
};

struct Checkpoint {
  std::size_t epoch = 0;
  LmConfig config;
  LmParams params;
  EpochMetrics metrics;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr std::string_view kCheckpointMagic = "CTXGLMC1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string checkpoint_to_binary(const Checkpoint& ck) {
  io::binary_writer w;
  const auto& c = ck.config;
  w.put_bytes(kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(c.vocab_size);
  w.put<std::uint64_t>(c.window);
  w.put<std::uint64_t>(c.hidden);
  w.put<std::uint8_t>(c.bidirectional ? 1 : 0);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(c.activation));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(c.placement));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(c.context_mode));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(c.optimizer));
  w.put<double>(c.lr);
  w.put<double>(c.beta1);
  w.put<double>(c.beta2);
  w.put<double>(c.clip_norm);
  w.put<std::uint64_t>(c.epochs);
  w.put<std::uint64_t>(c.batch_size);
  w.put<std::uint64_t>(c.seed);
  w.put<double>(c.val_fraction);
  w.put<std::uint64_t>(c.eval_every);
  w.put<std::uint64_t>(ck.epoch);
  w.put<double>(ck.metrics.train_loss);
  w.put<double>(ck.metrics.train_acc);
  w.put<double>(ck.metrics.val_loss);
  w.put<double>(ck.metrics.val_acc);
  const auto& flat = ck.params.flat();
  w.put<std::uint64_t>(static_cast<std::uint64_t>(flat.size()));
  for (Eigen::Index i = 0; i < flat.size(); ++i) w.put<double>(flat[i]);
  return w.data();
}

inline Checkpoint checkpoint_from_binary(std::string_view data) {
  io::binary_reader r(data);
  if (r.get_bytes(kCheckpointMagic.size()) != kCheckpointMagic) throw format_error("not a checkpoint file");
  if (r.get<std::uint32_t>() != kCheckpointVersion) throw format_error("unsupported checkpoint version");
  Checkpoint ck;
  auto& c = ck.config;
  c.vocab_size = r.get<std::uint64_t>();
  c.window = r.get<std::uint64_t>();
  c.hidden = r.get<std::uint64_t>();
  c.bidirectional = r.get<std::uint8_t>() != 0;
  c.activation = static_cast<CellActivation>(r.get<std::uint8_t>());
  c.placement = static_cast<ContextPlacement>(r.get<std::uint8_t>());
  c.context_mode = static_cast<ContextMode>(r.get<std::uint8_t>());
  c.optimizer = static_cast<OptimizerKind>(r.get<std::uint8_t>());
  c.lr = r.get<double>();
  c.beta1 = r.get<double>();
  c.beta2 = r.get<double>();
  c.clip_norm = r.get<double>();
  c.epochs = r.get<std::uint64_t>();
  c.batch_size = r.get<std::uint64_t>();
  c.seed = r.get<std::uint64_t>();
  c.val_fraction = r.get<double>();
  c.eval_every = r.get<std::uint64_t>();
  if (static_cast<int>(c.activation) > 1 || static_cast<int>(c.placement) > 1 ||
      static_cast<int>(c.context_mode) > 2 || static_cast<int>(c.optimizer) > 1)
    throw format_error("checkpoint has an unknown enum value");
  c.validate();
  ck.epoch = r.get<std::uint64_t>();
  ck.metrics.train_loss = r.get<double>();
  ck.metrics.train_acc = r.get<double>();
  ck.metrics.val_loss = r.get<double>();
  ck.metrics.val_acc = r.get<double>();
  const auto n = r.get<std::uint64_t>();
  if (n != LmParams::count(c)) throw format_error("checkpoint parameter count does not match its config");
  ck.params = LmParams(c);
  for (std::uint64_t i = 0; i < n; ++i) ck.params.flat()[static_cast<Eigen::Index>(i)] = r.get<double>();
  if (!r.done()) throw format_error("trailing bytes in checkpoint");
  return ck;
}

inline std::string metrics_csv_header() { return "epoch,train_loss,train_acc,val_loss,val_acc\n"; }

inline std::string metrics_csv_row(const Checkpoint& ck) {
  return std::to_string(ck.epoch) + ',' + io::format_exact(ck.metrics.train_loss) + ',' +
         io::format_exact(ck.metrics.train_acc) + ',' + io::format_exact(ck.metrics.val_loss) + ',' +
         io::format_exact(ck.metrics.val_acc) + '\n';
}

// A frozen model that predicts the next word for (context, window).
class LanguageModel {
 public:
  LanguageModel(LmConfig cfg, LmParams params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
    if (static_cast<std::size_t>(params_.flat().size()) != LmParams::count(cfg_) ||
        params_.vocab_size() != cfg_.vocab_size || params_.hidden() != cfg_.hidden)
      throw error("parameter block does not match the model config");
  }
  explicit LanguageModel(const Checkpoint& ck) : LanguageModel(ck.config, ck.params) {}

  std::size_t window() const { return cfg_.window; }
  std::size_t vocab_size() const { return cfg_.vocab_size; }
  const LmConfig& config() const { return cfg_; }
  const LmParams& params() const { return params_; }

  std::vector<double> predict(const ContextVector& context, std::span<const token_id> window) const {
    const bool use_zero = cfg_.context_mode == ContextMode::none || context.dim() == 0;
    auto p = forward(params_, cfg_, sparse_input(use_zero ? zero_ : context, window, cfg_));
    return {p.data(), p.data() + p.size()};
  }

 private:
  LmConfig cfg_;
  LmParams params_;
  ContextVector zero_ = ContextVector::zero(cfg_.vocab_size);
};

class training_diverged : public numeric_error {
 public:
  training_diverged(std::size_t epoch, Checkpoint last_good)
      : numeric_error("training diverged at epoch " + std::to_string(epoch) + " (loss is not finite)"),
        last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const { return last_good_; }

 private:
  Checkpoint last_good_;
};

struct TrainHooks {
  // Called every `eval_every` epochs with that epoch's checkpoint.
  std::function<void(const Checkpoint&)> on_eval;
  // Called for every checkpoint, including the initial one at epoch 0.
  std::function<void(const Checkpoint&)> on_checkpoint;
  // Keep only the latest checkpoint in the returned list.
  bool keep_last_only = false;
};

namespace detail {

class Optimizer {
 public:
  explicit Optimizer(const LmConfig& cfg) : cfg_(cfg) {}

  void step(LmParams& params, const LmParams& grads) {
    Eigen::VectorXd g = grads.flat();
    if (cfg_.clip_norm > 0) {
      const double n = g.norm();
      if (n > cfg_.clip_norm) g *= cfg_.clip_norm / n;
    }
    if (cfg_.optimizer == OptimizerKind::sgd) {
      params.flat() -= cfg_.lr * g;
      return;
    }
    if (m_.size() == 0) {
      m_ = Eigen::VectorXd::Zero(g.size());
      v_ = Eigen::VectorXd::Zero(g.size());
    }
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * g;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    params.flat().array() -= cfg_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + 1e-8);
  }

 private:
  const LmConfig& cfg_;
  Eigen::VectorXd m_, v_;
  std::uint64_t t_ = 0;
};

inline void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
}

}  // namespace detail

// Deterministic 90/10 (by default) split of instance indices.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> train_val_split(std::size_t n,
                                                                                      const LmConfig& cfg) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(cfg.seed ^ 0x5851F42D4C957F2DULL);
  detail::shuffle_indices(idx, rng);
  const auto n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(n)));
  std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> tr(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  return {tr, val};
}

// Mean loss and accuracy over the given instances.
inline std::pair<double, double> evaluate_split(const LmParams& params, const LmConfig& cfg,
                                                std::span<const TrainingInstance> instances,
                                                std::span<const std::size_t> subset) {
  if (subset.empty())
    return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double loss = 0.0;
  std::size_t correct = 0;
  const std::size_t chunk = 256;
  for (std::size_t lo = 0; lo < subset.size(); lo += chunk) {
    const std::size_t hi = std::min(subset.size(), lo + chunk);
    std::vector<SparseSequence> inputs;
    for (std::size_t k = lo; k < hi; ++k) inputs.push_back(sparse_input(instances[subset[k]], cfg));
    const auto fw = detail::forward_batch(params, cfg, inputs, false);
    for (std::size_t k = lo; k < hi; ++k) {
      const auto col = static_cast<Eigen::Index>(k - lo);
      const auto t = static_cast<Eigen::Index>(instances[subset[k]].target_id);
      loss -= fw.log_probs(t, col);
      Eigen::Index arg = 0;
      fw.probs.col(col).maxCoeff(&arg);
      if (arg == t) ++correct;
    }
  }
  const double n = static_cast<double>(subset.size());
  return {loss / n, static_cast<double>(correct) / n};
}

// Mini-batch training. Returns one checkpoint per epoch, preceded by the
// initial parameters at epoch 0.
inline std::vector<Checkpoint> train(const LmConfig& cfg, std::span<const TrainingInstance> instances,
                                     const TrainHooks& hooks = {}) {
  cfg.validate();
  if (instances.empty()) throw error("train: no instances");
  for (const auto& inst : instances) {
    if (inst.input_ids.size() != cfg.window) throw config_error("lm.window", "does not match the dataset window");
    if (inst.target_id >= cfg.vocab_size) throw bounds_error("target id out of range");
  }
  auto [train_idx, val_idx] = train_val_split(instances.size(), cfg);
  if (train_idx.empty()) throw error("train: training split is empty");

  std::vector<Checkpoint> out;
  Checkpoint current{0, cfg, LmParams::initialize(cfg), {}};
  auto measure = [&](Checkpoint& ck) {
    std::tie(ck.metrics.train_loss, ck.metrics.train_acc) = evaluate_split(ck.params, cfg, instances, train_idx);
    std::tie(ck.metrics.val_loss, ck.metrics.val_acc) = evaluate_split(ck.params, cfg, instances, val_idx);
  };
  auto emit = [&](const Checkpoint& ck) {
    if (hooks.on_checkpoint) hooks.on_checkpoint(ck);
    if (hooks.keep_last_only) out.clear();
    out.push_back(ck);
    if (ck.epoch > 0 && ck.epoch % cfg.eval_every == 0 && hooks.on_eval) hooks.on_eval(ck);
  };
  measure(current);
  emit(current);

  detail::Optimizer opt(cfg);
  std::mt19937_64 rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const Checkpoint last_good = current;
    detail::shuffle_indices(train_idx, rng);
    try {
      for (std::size_t lo = 0; lo < train_idx.size(); lo += cfg.batch_size) {
        const std::size_t hi = std::min(train_idx.size(), lo + cfg.batch_size);
        std::vector<SparseSequence> inputs;
        std::vector<token_id> targets;
        for (std::size_t k = lo; k < hi; ++k) {
          inputs.push_back(sparse_input(instances[train_idx[k]], cfg));
          targets.push_back(instances[train_idx[k]].target_id);
        }
        const auto lg = loss_and_grads(current.params, cfg, inputs, targets);
        if (!std::isfinite(lg.loss) || !lg.grads.all_finite()) throw training_diverged(epoch, last_good);
        opt.step(current.params, lg.grads);
      }
      current.epoch = epoch;
      measure(current);
    } catch (const training_diverged&) {
      throw;
    } catch (const numeric_error&) {
      throw training_diverged(epoch, last_good);
    }
    if (!std::isfinite(current.metrics.train_loss) || !current.params.all_finite())
      throw training_diverged(epoch, last_good);
    emit(current);
  }
  return out;
}

}  // namespace ctxgen
