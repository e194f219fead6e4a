#pragma once

// Exact-equality invariance trials. Each returns the number of failed trials.

#include <random>

#include "common.hpp"
#include "gradcheck.hpp"
#include "pt2pc/discriminator.hpp"
#include "pt2pc/generator.hpp"

namespace invariance {

using namespace pt2pc;
using testing_util::chair_vocab;
using testing_util::random_tree;
using testing_util::shuffle_children;
using testing_util::to_vec;

inline bool same_parts(const NodeTensors& a, const NodeTensors& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [id, t] : a)
    if (!b.count(id) || to_vec(t) != to_vec(b.at(id))) return false;
  return true;
}

/// Shuffling every children list (ordinals stay on the nodes) leaves every
/// t^j and every generated part cloud bit-identical.
inline int generator_child_permutation(int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  gradcheck::TinySetup s = gradcheck::tiny_setup(seed);
  int failed = 0;
  for (int i = 0; i < trials; ++i) {
    const PartTree t = random_tree(chair_vocab(), 2 + i % 12, rng);
    const PartTree p = shuffle_children(t, rng);
    NoGradScope ng;
    const Tensor z = sample_latent(s.gcfg.z_dim, rng);
    const bool ok = same_parts(encode_template(t, s.g, s.gcfg), encode_template(p, s.g, s.gcfg)) &&
                    same_parts(generate_parts(t, z, s.g, s.gcfg), generate_parts(p, z, s.g, s.gcfg));
    failed += !ok;
  }
  return failed;
}

/// Same for the discriminator score on random part clouds.
inline int discriminator_child_permutation(int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  gradcheck::TinySetup s = gradcheck::tiny_setup(seed);
  int failed = 0;
  for (int i = 0; i < trials; ++i) {
    const PartTree t = random_tree(chair_vocab(), 3 + i % 10, rng);
    s.dcfg.shape_points = static_cast<int>(t.num_leaves()) * 8;
    const PartCloudSet x = testing_util::random_parts(t, 16, rng);
    const ScoreValues a = discriminate(x, t, s.d, s.dcfg);
    const ScoreValues b = discriminate(x, shuffle_children(t, rng), s.d, s.dcfg);
    failed += !(a.y == b.y && a.y_struct == b.y_struct && a.y_whole == b.y_whole);
  }
  return failed;
}

/// Permuting the points inside every part leaves all scores bit-identical.
inline int discriminator_point_permutation(int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  gradcheck::TinySetup s = gradcheck::tiny_setup(seed);
  int failed = 0;
  for (int i = 0; i < trials; ++i) {
    const PartTree t = random_tree(chair_vocab(), 3 + i % 10, rng);
    s.dcfg.shape_points = static_cast<int>(t.num_leaves()) * 8;
    const PartCloudSet x = testing_util::random_parts(t, 16, rng);
    PartCloudSet px;
    for (const auto& [id, pc] : x) px[id] = testing_util::permute_points(pc, rng);
    const ScoreValues a = discriminate(x, t, s.d, s.dcfg);
    const ScoreValues b = discriminate(px, t, s.d, s.dcfg);
    failed += !(a.y == b.y && a.y_struct == b.y_struct && a.y_whole == b.y_whole);
  }
  return failed;
}

/// Row permutations of the max-pool input leave the pooled row unchanged.
inline int maxpool_permutation(int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  int failed = 0;
  for (int i = 0; i < trials; ++i) {
    const int k = 1 + i % 20, d = 1 + (i * 7) % 13;
    // coarse values so ties are common
    std::uniform_int_distribution<int> u(-4, 4);
    std::vector<float> v(static_cast<std::size_t>(k * d));
    for (float& x : v) x = static_cast<float>(u(rng)) * 0.25f;
    const Tensor x = Tensor::from(k, d, v);
    std::vector<int> perm(static_cast<std::size_t>(k));
    for (int r = 0; r < k; ++r) perm[static_cast<std::size_t>(r)] = r;
    std::shuffle(perm.begin(), perm.end(), rng);
    failed += to_vec(max_pool_set(x).values) != to_vec(max_pool_set(gather_rows(x, perm)).values);
  }
  return failed;
}

}  // namespace invariance
