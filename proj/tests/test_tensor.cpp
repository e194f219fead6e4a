#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "common.hpp"
#include "pt2pc/params.hpp"
#include "pt2pc/tensor.hpp"
#include "gradcheck.hpp"
#include "reference.hpp"

using namespace pt2pc;
using namespace testing_util;
using namespace gradcheck;
using ref::Dual;


TEST(Tensor, GradientsMatchFiniteDifferences) {
  for (const OpReport& r : run_op_suite(100, 11)) {
    EXPECT_LT(r.first, 1e-3) << r.name;
    EXPECT_LT(r.second, 1e-3) << r.name << " (second order)";
  }
}

TEST(Tensor, MatmulExamples) {
  const Tensor x = Tensor::from(2, 3, {1, 2, 3, 4, 5, 6});
  const Tensor eye = Tensor::from(2, 2, {1, 0, 0, 1});
  EXPECT_EQ(to_vec(matmul(eye, x)), to_vec(x));
  const Tensor r = matmul(Tensor::from(2, 2, {1, 2, 3, 4}), Tensor::from(2, 1, {1, 1}));
  EXPECT_EQ(r.shape(), (std::vector<int>{2, 1}));
  EXPECT_EQ(to_vec(r), (std::vector<float>{3, 7}));
  EXPECT_CODE(matmul(x, x), ErrorCode::kShapeMismatch);
}

TEST(Tensor, MatmulLargeMatchesReference) {
  // exercises the tiled kernel and its edges against a plain double loop
  std::mt19937_64 rng(3);
  for (auto [m, k, n] : {std::tuple{37, 67, 45}, std::tuple{128, 96, 64}, std::tuple{5, 300, 9}})
    for (int ta = 0; ta < 2; ++ta)
      for (int tb = 0; tb < 2; ++tb) {
        const auto av = draw(m * k, Domain::kAny, rng), bv = draw(k * n, Domain::kAny, rng);
        const Tensor a = ta ? Tensor::from(k, m, av) : Tensor::from(m, k, av);
        const Tensor b = tb ? Tensor::from(n, k, bv) : Tensor::from(k, n, bv);
        const Tensor c = matmul(a, b, ta, tb);
        const auto want = ref::matmul(ref::from_tensor<double>(a), ref::from_tensor<double>(b), ta, tb);
        double err = 0;
        for (std::size_t i = 0; i < want.a.size(); ++i) err = std::max(err, std::fabs(want.a[i] - c.values()[i]));
        EXPECT_LT(err, 1e-4) << m << "x" << k << "x" << n << " " << ta << tb;
      }
}

TEST(Tensor, MatmulRowPermutationExact) {
  std::mt19937_64 rng(4);
  const Tensor a = Tensor::from(70, 33, draw(70 * 33, Domain::kAny, rng));
  const Tensor w = Tensor::from(41, 33, draw(41 * 33, Domain::kAny, rng));
  std::vector<int> perm(70);
  for (int i = 0; i < 70; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  const Tensor full = matmul(a, w, false, true);
  const Tensor permuted = matmul(gather_rows(a, perm), w, false, true);
  EXPECT_EQ(to_vec(gather_rows(full, perm)), to_vec(permuted));
}

TEST(Tensor, LeakyRelu) {
  EXPECT_EQ(leaky_relu(Tensor::scalar(2), 0.2f).item(), 2.0f);
  EXPECT_FLOAT_EQ(leaky_relu(Tensor::scalar(-1), 0.2f).item(), -0.2f);
  Tape tape;
  TapeScope s(tape);
  Tensor x = Tensor::scalar(-3);
  x.set_requires_grad(true);
  tape.backward(leaky_relu(x, 0.2f));
  EXPECT_FLOAT_EQ(x.grad()[0], 0.2f);
}

TEST(Tensor, MaxPool) {
  const Tensor one = Tensor::from(1, 3, {1, -2, 3});
  EXPECT_EQ(to_vec(max_pool_set(one).values), to_vec(one));
  const auto r = max_pool_set(Tensor::from(2, 2, {1, 5, 3, 2}));
  EXPECT_EQ(to_vec(r.values), (std::vector<float>{3, 5}));
  EXPECT_EQ(r.argmax, (std::vector<int>{1, 0}));
  // ties go to the lowest row
  EXPECT_EQ(max_pool_set(Tensor::from(3, 1, {2, 7, 7})).argmax, std::vector<int>{1});

  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = Tensor::from(9, 6, draw(54, Domain::kAny, rng));
    std::vector<int> perm(9);
    for (int i = 0; i < 9; ++i) perm[static_cast<std::size_t>(i)] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    EXPECT_EQ(to_vec(max_pool_set(gather_rows(x, perm)).values), to_vec(max_pool_set(x).values));
  }
}

TEST(Tensor, Concat) {
  EXPECT_EQ(to_vec(concat({Tensor::from(1, 2, {1, 2}), Tensor::from(1, 1, {3})}, 1)), (std::vector<float>{1, 2, 3}));
  const Tensor a = Tensor::from(1, 2, {4, 5});
  EXPECT_EQ(to_vec(concat({a}, 1)), to_vec(a));

  Tape tape;
  TapeScope s(tape);
  Tensor x = Tensor::from(1, 2, {1, 2}), y = Tensor::from(1, 3, {3, 4, 5});
  x.set_requires_grad(true);
  y.set_requires_grad(true);
  tape.backward(sum(concat({x, y}, 1)));
  EXPECT_EQ(std::vector<float>(x.grad().begin(), x.grad().end()), (std::vector<float>{1, 1}));
  EXPECT_EQ(std::vector<float>(y.grad().begin(), y.grad().end()), (std::vector<float>{1, 1, 1}));
}

TEST(Tensor, BackwardExamples) {
  {
    Tape tape;
    TapeScope s(tape);
    Tensor w = Tensor::from(2, 2, {1, 2, 3, 4});
    w.set_requires_grad(true);
    tape.backward(sum(w));
    EXPECT_EQ(std::vector<float>(w.grad().begin(), w.grad().end()), (std::vector<float>(4, 1.0f)));
    EXPECT_CODE(tape.backward(sum(w)), ErrorCode::kTapeConsumed);
  }
  {
    Tape tape;
    TapeScope s(tape);
    Tensor w = Tensor::scalar(1);
    w.set_requires_grad(true);
    const Tensor loss = pow(sub(mul(w, Tensor::scalar(2)), Tensor::scalar(0)), 2.0f);
    tape.backward(loss);
    EXPECT_FLOAT_EQ(w.grad()[0], 8.0f);
  }
}

TEST(Tensor, NoGradScopeRecordsNothing) {
  Tape tape;
  TapeScope s(tape);
  Tensor w = Tensor::scalar(1);
  w.set_requires_grad(true);
  {
    NoGradScope ng;
    const Tensor y = mul(w, w);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_EQ(tape.num_records(), 0u);
}

TEST(Tensor, NonFiniteIsRejected) {
  EXPECT_CODE(mul(Tensor::scalar(1e30f), Tensor::scalar(1e30f)), ErrorCode::kNonFinite);
}

TEST(Adam, ZeroGradient) {
  std::vector<Tensor> p{Tensor::from(1, 2, {1, -1})};
  AdamState st;
  st.m = {{0.5f, 0.5f}};
  st.v = {{0.25f, 0.25f}};
  const AdamConfig cfg{1e-3f, 0.5f, 0.9f, 1e-8f};
  const std::vector<std::vector<float>> g{{0, 0}};
  // moments are nonzero so the update is nonzero; check the decay itself
  adam_step(p, g, st, cfg);
  EXPECT_FLOAT_EQ(st.m[0][0], 0.25f);
  EXPECT_FLOAT_EQ(st.v[0][0], 0.225f);

  std::vector<Tensor> q{Tensor::from(1, 2, {1, -1})};
  AdamState fresh;
  adam_step(q, g, fresh, cfg);
  EXPECT_EQ(to_vec(q[0]), (std::vector<float>{1, -1}));
  EXPECT_EQ(fresh.m[0], (std::vector<float>{0, 0}));
}

TEST(Adam, FirstStepMovesByLr) {
  std::vector<Tensor> p{Tensor::scalar(0.5f)};
  AdamState st;
  adam_step(p, std::vector<std::vector<float>>{{1.0f}}, st, AdamConfig{1e-3f, 0.9f, 0.999f, 1e-8f});
  EXPECT_NEAR(0.5f - p[0].item(), 1e-3, 1e-6);
}

TEST(Adam, ConvergesOnSquare) {
  std::vector<Tensor> p{Tensor::scalar(1.0f)};
  AdamState st;
  const AdamConfig cfg{1e-2f, 0.9f, 0.999f, 1e-8f};
  int steps = 0;
  for (; steps < 5000 && std::fabs(p[0].item()) >= 1e-3f; ++steps)
    adam_step(p, std::vector<std::vector<float>>{{2.0f * p[0].item()}}, st, cfg);
  EXPECT_LT(std::fabs(p[0].item()), 1e-3f);
  EXPECT_LT(steps, 5000);
}

TEST(Adam, AccumulatedGradOverload) {
  Tape tape;
  TapeScope s(tape);
  Tensor w = Tensor::scalar(2.0f);
  w.set_requires_grad(true);
  tape.backward(mul(w, w));
  std::vector<Tensor> p{w};
  AdamState a, b;
  Tensor w2 = Tensor::scalar(2.0f);
  std::vector<Tensor> q{w2};
  adam_step(p, a, AdamConfig{});
  adam_step(q, std::vector<std::vector<float>>{{4.0f}}, b, AdamConfig{});
  EXPECT_EQ(p[0].item(), q[0].item());
}

TEST(Linear, InitRange) {
  const Linear l = make_linear(16, 7, 42);
  EXPECT_EQ(l.weight.shape(), (std::vector<int>{7, 16}));
  for (float v : l.weight.values()) EXPECT_LE(std::fabs(v), 0.25f);
  for (float v : l.bias.values()) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(to_vec(make_linear(16, 7, 42).weight), to_vec(l.weight));
  EXPECT_NE(to_vec(make_linear(16, 7, 43).weight), to_vec(l.weight));
}

TEST(Checkpoint, RoundTripBytes) {
  std::mt19937_64 rng(1);
  Checkpoint c;
  c.config = {{"format", "x"}, {"n", 3}};
  c.tensors.push_back({"a", Tensor::from(3, 4, draw(12, Domain::kAny, rng))});
  c.tensors.push_back({"b", Tensor::from(1, 1, {-0.0f})});
  const std::string bytes = encode_checkpoint(c);
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_EQ(to_vec(back.get("a")), to_vec(c.tensors[0].tensor));
  EXPECT_TRUE(std::signbit(back.get("b").item()));
  EXPECT_CODE(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), ErrorCode::kBadCheckpoint);
  EXPECT_CODE(decode_checkpoint("garbage"), ErrorCode::kBadCheckpoint);
}
