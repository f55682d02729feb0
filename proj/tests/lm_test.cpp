#include <random>

#include <gtest/gtest.h>

#include "ctxgen/lm.hpp"
#include "support/oracles.hpp"

using namespace ctxgen;

namespace {

LmConfig tiny_config(ContextPlacement placement = ContextPlacement::timestep0, bool bidirectional = true,
                     CellActivation act = CellActivation::tanh) {
  LmConfig c;
  c.vocab_size = 7;
  c.window = 3;
  c.hidden = 4;
  c.bidirectional = bidirectional;
  c.placement = placement;
  c.activation = act;
  c.context_mode = ContextMode::tfidf;
  return c;
}

LmParams random_params(const LmConfig& cfg, std::uint64_t seed, double scale = 0.5) {
  LmParams p(cfg);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (Eigen::Index i = 0; i < p.flat().size(); ++i) p.flat()[i] = u(rng);
  return p;
}

std::vector<TrainingInstance> random_instances(const LmConfig& cfg, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TrainingInstance> out;
  for (std::size_t k = 0; k < n; ++k) {
    TrainingInstance inst;
    const auto V = cfg.vocab_size;
    inst.context = rng() % 2 ? ContextVector::one_hot(static_cast<token_id>(rng() % V), V)
                             : ContextVector::bag_of_words({static_cast<token_id>(rng() % V),
                                                            static_cast<token_id>(rng() % V)},
                                                           V);
    for (std::size_t i = 0; i < cfg.window; ++i) inst.input_ids.push_back(static_cast<token_id>(rng() % V));
    inst.target_id = static_cast<token_id>(rng() % V);
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<double> flat_copy(const LmParams& p) { return {p.flat().data(), p.flat().data() + p.flat().size()}; }

oracle::LstmShape shape_of(const LmConfig& c) {
  return {c.vocab_size, c.input_dim(), c.hidden, c.directions(), c.activation == CellActivation::relu};
}

double max_grad_error(const LmConfig& cfg, std::uint64_t seed) {
  auto params = random_params(cfg, seed);
  const auto batch = random_instances(cfg, 3, seed + 1);
  const auto lg = loss_and_grads(params, cfg, std::span<const TrainingInstance>(batch));
  double worst = 0;
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < params.flat().size(); ++i) {
    const double keep = params.flat()[i];
    params.flat()[i] = keep + h;
    const double up = loss_and_grads(params, cfg, std::span<const TrainingInstance>(batch)).loss;
    params.flat()[i] = keep - h;
    const double down = loss_and_grads(params, cfg, std::span<const TrainingInstance>(batch)).loss;
    params.flat()[i] = keep;
    const double numeric = (up - down) / (2 * h);
    const double analytic = lg.grads.flat()[i];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    worst = std::max(worst, std::abs(numeric - analytic) / denom);
  }
  return worst;
}

}  // namespace

TEST(LmConfig, ValidationNamesTheField) {
  auto c = tiny_config();
  c.hidden = 0;
  try {
    c.validate();
    FAIL();
  } catch (const config_error& e) {
    EXPECT_NE(std::string(e.what()).find("lm.hidden"), std::string::npos);
  }
}

TEST(Input, ContextOccupiesTimestepZero) {
  const auto cfg = tiny_config();
  TrainingInstance inst{ContextVector::bag_of_words({2, 5}, 7), {3, 4, 6}, 1, 0};
  const auto x = encode_input(inst, cfg);
  ASSERT_EQ(x.size(), 4u);
  EXPECT_EQ(x[0], (std::vector<double>{0, 0, 1, 0, 0, 1, 0}));
  EXPECT_EQ(x[2], one_hot(4, 7));
}

TEST(Input, ConcatPlacementRepeatsContext) {
  const auto cfg = tiny_config(ContextPlacement::concat);
  TrainingInstance inst{ContextVector::one_hot(2, 7), {3, 4, 6}, 1, 0};
  const auto x = encode_input(inst, cfg);
  ASSERT_EQ(x.size(), 3u);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(x[t].size(), 14u);
    EXPECT_EQ(x[t][inst.input_ids[t]], 1.0);
    EXPECT_EQ(x[t][7 + 2], 1.0);
  }
}

TEST(Input, BaseModeUsesZeroContext) {
  auto cfg = tiny_config();
  cfg.context_mode = ContextMode::none;
  TrainingInstance inst{ContextVector::one_hot(2, 7), {3, 4, 6}, 1, 0};
  EXPECT_EQ(encode_input(inst, cfg)[0], std::vector<double>(7, 0.0));
  EXPECT_THROW(sparse_input(inst.context, inst.input_ids, cfg), error);
}

TEST(Input, RejectsWrongWindowAndIds) {
  const auto cfg = tiny_config();
  std::vector<token_id> shortw{1, 2}, bad{1, 2, 9};
  EXPECT_THROW(sparse_input(ContextVector::zero(7), shortw, cfg), bounds_error);
  EXPECT_THROW(sparse_input(ContextVector::zero(7), bad, cfg), bounds_error);
}

TEST(Forward, MatchesStraightLineOracle) {
  for (auto placement : {ContextPlacement::timestep0, ContextPlacement::concat})
    for (bool bi : {true, false})
      for (auto act : {CellActivation::tanh, CellActivation::relu}) {
        const auto cfg = tiny_config(placement, bi, act);
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
          const auto p = random_params(cfg, seed);
          const auto inst = random_instances(cfg, 1, seed + 50)[0];
          const auto got = forward(p, cfg, sparse_input(inst, cfg));
          const auto want = oracle::lstm_forward(flat_copy(p), shape_of(cfg), encode_input(inst, cfg));
          ASSERT_EQ(static_cast<std::size_t>(got.size()), want.size());
          for (std::size_t v = 0; v < want.size(); ++v) EXPECT_NEAR(got[static_cast<Eigen::Index>(v)], want[v], 1e-12);
        }
      }
}

TEST(Forward, OutputIsADistribution) {
  const auto cfg = tiny_config();
  const auto p = LmParams::initialize(cfg);
  const auto probs = forward(p, cfg, sparse_input(random_instances(cfg, 1, 2)[0], cfg));
  EXPECT_NEAR(probs.sum(), 1.0, 1e-12);
  EXPECT_GE(probs.minCoeff(), 0.0);
}

TEST(Gradients, MatchCentralDifferences) {
  EXPECT_LT(max_grad_error(tiny_config(), 1), 1e-4);
  EXPECT_LT(max_grad_error(tiny_config(ContextPlacement::concat, false), 2), 1e-4);
}

TEST(Gradients, LossIsMeanCrossEntropy) {
  const auto cfg = tiny_config();
  const auto p = random_params(cfg, 3);
  const auto batch = random_instances(cfg, 4, 4);
  double want = 0;
  for (const auto& inst : batch) want -= std::log(forward(p, cfg, sparse_input(inst, cfg))[inst.target_id]);
  EXPECT_NEAR(loss_and_grads(p, cfg, std::span<const TrainingInstance>(batch)).loss, want / 4, 1e-12);
}

TEST(Initialize, ForgetBiasIsOneAndWeightsBounded) {
  const auto cfg = tiny_config();
  const auto p = LmParams::initialize(cfg);
  for (std::size_t d = 0; d < 2; ++d) {
    EXPECT_EQ(p.b(d).segment(4, 4), Eigen::VectorXd::Ones(4));
    EXPECT_EQ(p.b(d).head(4), Eigen::VectorXd::Zero(4));
    EXPECT_LE(p.wx(d).cwiseAbs().maxCoeff(), 0.5);
  }
  EXPECT_EQ(p.by(), Eigen::VectorXd::Zero(7));
}

TEST(Split, DeterministicAndDisjoint) {
  auto cfg = tiny_config();
  const auto [tr, va] = train_val_split(100, cfg);
  EXPECT_EQ(va.size(), 10u);
  EXPECT_EQ(tr.size(), 90u);
  std::vector<std::size_t> all(tr);
  all.insert(all.end(), va.begin(), va.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(all[i], i);
  EXPECT_EQ(train_val_split(100, cfg), std::make_pair(tr, va));
}

TEST(Train, OverfitsSmallSetAndEmitsEveryEpoch) {
  auto cfg = tiny_config();
  cfg.hidden = 16;
  cfg.optimizer = OptimizerKind::adam;
  cfg.lr = 0.02;
  cfg.epochs = 60;
  cfg.batch_size = 8;
  cfg.val_fraction = 0;
  const auto data = random_instances(cfg, 20, 8);
  std::vector<std::size_t> seen, evals;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](const Checkpoint& c) { seen.push_back(c.epoch); };
  hooks.on_eval = [&](const Checkpoint& c) { evals.push_back(c.epoch); };
  const auto out = train(cfg, data, hooks);
  ASSERT_EQ(out.size(), 61u);
  EXPECT_EQ(seen.front(), 0u);
  EXPECT_EQ(seen.back(), 60u);
  EXPECT_EQ(evals.front(), 3u);
  EXPECT_EQ(evals.size(), 20u);
  EXPECT_LT(out.back().metrics.train_loss, out[1].metrics.train_loss);
  EXPECT_GE(out.back().metrics.train_acc, 0.95);
}

TEST(Train, SgdWithClipStaysFinite) {
  auto cfg = tiny_config();
  cfg.epochs = 3;
  cfg.clip_norm = 1.0;
  const auto out = train(cfg, random_instances(cfg, 30, 9));
  for (const auto& ck : out) EXPECT_TRUE(ck.params.all_finite());
}

TEST(Train, DivergenceKeepsLastGoodCheckpoint) {
  auto cfg = tiny_config();
  cfg.epochs = 5;
  cfg.optimizer = OptimizerKind::sgd;
  cfg.lr = 1e308;
  try {
    train(cfg, random_instances(cfg, 10, 1));
    FAIL() << "expected divergence";
  } catch (const training_diverged& e) {
    EXPECT_TRUE(e.last_good().params.all_finite());
    EXPECT_EQ(static_cast<int>(e.code()), 4);
  }
}

TEST(Train, SameSeedSameCheckpoints) {
  auto cfg = tiny_config();
  cfg.epochs = 2;
  const auto data = random_instances(cfg, 25, 3);
  const auto a = train(cfg, data);
  const auto b = train(cfg, data);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(checkpoint_to_binary(a[i]), checkpoint_to_binary(b[i]));
}

TEST(Checkpoint, BinaryRoundTrip) {
  auto cfg = tiny_config(ContextPlacement::concat, false, CellActivation::relu);
  cfg.optimizer = OptimizerKind::adam;
  Checkpoint ck{7, cfg, random_params(cfg, 5), {0.5, 0.25, std::numeric_limits<double>::quiet_NaN(), 0.125}};
  const auto bin = checkpoint_to_binary(ck);
  const auto back = checkpoint_from_binary(bin);
  EXPECT_EQ(back, ck);
  EXPECT_EQ(checkpoint_to_binary(back), bin);
  EXPECT_THROW(checkpoint_from_binary(bin.substr(0, bin.size() / 2)), format_error);
}

TEST(LanguageModel, PredictMatchesForward) {
  const auto cfg = tiny_config();
  const auto p = random_params(cfg, 6);
  const LanguageModel m(cfg, p);
  const auto inst = random_instances(cfg, 1, 7)[0];
  const auto probs = m.predict(inst.context, inst.input_ids);
  const auto f = forward(p, cfg, sparse_input(inst, cfg));
  for (std::size_t v = 0; v < probs.size(); ++v) EXPECT_EQ(probs[v], f[static_cast<Eigen::Index>(v)]);
}
