#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "ctfr/gradcheck.hpp"
#include "ctfr/model.hpp"
#include "ctfr/objective.hpp"
#include "ctfr/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace ctfr;

namespace {

Tensor random_scores(CounterRng& rng, std::int64_t b, bool track = true) {
  std::vector<double> v(static_cast<std::size_t>(b * b));
  for (auto& x : v) x = rng.normal(0.0, 2.0);
  auto t = Tensor::from_data({b, b}, v);
  if (track) t.node()->requires_grad = true;
  return t;
}

Mat to_grid(const Tensor& t) {
  Mat m(t.rows(), t.cols());
  m.v.assign(t.data().begin(), t.data().end());
  return m;
}

oracle::Grid oracle_grid(const Tensor& t) {
  oracle::Grid g(static_cast<std::size_t>(t.rows()),
                 std::vector<double>(static_cast<std::size_t>(t.cols())));
  for (std::int64_t i = 0; i < t.rows(); ++i)
    for (std::int64_t j = 0; j < t.cols(); ++j)
      g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          t.data()[static_cast<std::size_t>(i * t.cols() + j)];
  return g;
}

std::vector<std::vector<int>> oracle_mask(const Mask& m) {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(m.b),
                                    std::vector<int>(static_cast<std::size_t>(m.b)));
  for (std::int64_t i = 0; i < m.b; ++i)
    for (std::int64_t j = 0; j < m.b; ++j)
      out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m.at(i, j) != 0 ? 1 : 0;
  return out;
}

}  // namespace

TEST_CASE("mask marks same-image pairs as excluded") {
  // Captions 0 and 1 share image A; caption 2 shows image B.
  auto m = build_mask({"imgA", "imgA", "imgB"});
  std::vector<std::uint8_t> expect = {0, 0, 1, 0, 0, 1, 1, 1, 0};
  CHECK(m.bits == expect);

  auto distinct = build_mask({"a", "b", "c", "d"});
  for (std::int64_t i = 0; i < 4; ++i)
    for (std::int64_t j = 0; j < 4; ++j) CHECK(distinct.at(i, j) == (i == j ? 0 : 1));

  // Two images with five captions each: every row keeps exactly five entries.
  std::vector<std::string> ids;
  for (int i = 0; i < 5; ++i) ids.push_back("left");
  for (int i = 0; i < 5; ++i) ids.push_back("right");
  auto dup = build_mask(ids);
  for (std::int64_t i = 0; i < 10; ++i) {
    int kept = 0;
    for (std::int64_t j = 0; j < 10; ++j) kept += dup.at(i, j);
    CHECK(kept == 5);
    CHECK(dup.at(i, i) == 0);
  }
  CHECK_THROWS_AS(build_mask({}), std::invalid_argument);
}

TEST_CASE("coarse score matrix matches the dot-product oracle") {
  auto a = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  auto v = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  auto s = coarse_score_matrix(a, v);
  CHECK(s.to_vec() == std::vector<double>{1, 0, 0, 1});

  CounterRng rng(51);
  std::vector<double> av(4 * 6), vv(4 * 6);
  for (auto& x : av) x = rng.normal(0.0, 1.0);
  for (auto& x : vv) x = rng.normal(0.0, 1.0);
  auto at = Tensor::from_data({4, 6}, av);
  auto vt = Tensor::from_data({4, 6}, vv);
  auto st = coarse_score_matrix(at, vt);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double expect = 0.0;
      for (int k = 0; k < 6; ++k) expect += av[i * 6 + k] * vv[j * 6 + k];
      CHECK(st.data()[i * 4 + j] == doctest::Approx(expect).epsilon(1e-12));
    }
  CHECK_THROWS_AS(coarse_score_matrix(at, Tensor::from_data({4, 5}, std::vector<double>(20, 0.0))),
                  std::invalid_argument);
}

TEST_CASE("fine score matrix agrees with individual fusion scores") {
  Model model(ModelConfig::micro(), 61);
  CounterRng rng(53);
  std::vector<AudioEncoding> audios;
  std::vector<ImageEncoding> images;
  for (int i = 0; i < 3; ++i) {
    AudioInput a;
    a.signal.resize(18);
    for (auto& s : a.signal) s = rng.normal(0.0, 1.0);
    audios.push_back(model.encode_audio(a));
    ImageInput v;
    v.roi_features = Mat(3, 6);
    for (auto& x : v.roi_features.v) x = rng.normal(0.0, 1.0);
    v.boxes = Mat(3, 4);
    for (std::int64_t r = 0; r < 3; ++r) {
      v.boxes.at(r, 0) = 0.1;
      v.boxes.at(r, 1) = 0.2;
      v.boxes.at(r, 2) = 0.5;
      v.boxes.at(r, 3) = 0.9;
    }
    images.push_back(model.encode_image(v));
  }

  model.reset_xmodal_passes();
  auto s = fine_score_matrix(model, audios, images);
  CHECK(s.shape() == Shape{3, 3});
  CHECK(model.xmodal_passes() == 9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(s.data()[i * 3 + j] == model.fine_score(audios[i], images[j]).item());

  std::vector<AudioEncoding> one(audios.begin(), audios.begin() + 1);
  std::vector<ImageEncoding> onev(images.begin(), images.begin() + 1);
  auto s1 = fine_score_matrix(model, one, onev);
  CHECK(s1.shape() == Shape{1, 1});
  CHECK(s1.item() == model.fine_score(audios[0], images[0]).item());
}

TEST_CASE("contrastive loss worked examples") {
  // A single pair has nothing to contrast against.
  auto s1 = Tensor::from_data({1, 1}, {3.7});
  auto m1 = build_mask({"solo"});
  CHECK(masked_infonce(s1, m1, 1.0, Direction::audio_to_image).item() == 0.0);

  // Two distinct pairs, all-zero scores, no margin: -log(1/2) each anchor.
  auto s2 = Tensor::from_data({2, 2}, {0, 0, 0, 0});
  auto m2 = build_mask({"p", "q"});
  for (auto dir : {Direction::audio_to_image, Direction::image_to_audio})
    CHECK(masked_infonce(s2, m2, 0.0, dir).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("contrastive loss matches the enumeration oracle") {
  CounterRng rng(59);
  for (int trial = 0; trial < 40; ++trial) {
    std::int64_t b = 2 + static_cast<std::int64_t>(rng.next_below(5));  // 2..6
    std::vector<std::string> ids(static_cast<std::size_t>(b));
    for (auto& id : ids) id = "img" + std::to_string(rng.next_below(3));  // force duplicates
    auto mask = build_mask(ids);
    auto s = random_scores(rng, b, false);
    double delta = rng.uniform(0.0, 2.0);
    double got_ai = masked_infonce(s, mask, delta, Direction::audio_to_image).item();
    double got_ia = masked_infonce(s, mask, delta, Direction::image_to_audio).item();
    double want_ai = oracle::masked_infonce(oracle_grid(s), oracle_mask(mask), delta, true);
    double want_ia = oracle::masked_infonce(oracle_grid(s), oracle_mask(mask), delta, false);
    CHECK(std::abs(got_ai - want_ai) <= 1e-10);
    CHECK(std::abs(got_ia - want_ia) <= 1e-10);
  }
}

TEST_CASE("contrastive loss is invariant to a constant score shift") {
  CounterRng rng(61);
  auto s = random_scores(rng, 4, false);
  auto mask = build_mask({"a", "a", "b", "c"});
  auto shifted_data = s.to_vec();
  for (auto& x : shifted_data) x += 1234.5;
  auto shifted = Tensor::from_data({4, 4}, shifted_data);
  for (auto dir : {Direction::audio_to_image, Direction::image_to_audio})
    CHECK(masked_infonce(s, mask, 0.7, dir).item() ==
          doctest::Approx(masked_infonce(shifted, mask, 0.7, dir).item()).epsilon(1e-10));
}

TEST_CASE("contrastive loss survives extreme score magnitudes") {
  auto s = Tensor::from_data({2, 2}, {800.0, 805.0, -900.0, 810.0});
  auto mask = build_mask({"p", "q"});
  for (auto dir : {Direction::audio_to_image, Direction::image_to_audio}) {
    double loss = masked_infonce(s, mask, 1.0, dir).item();
    CHECK(std::isfinite(loss));
    CHECK(loss >= 0.0);
  }
}

TEST_CASE("contrastive loss is consistent under joint permutation") {
  CounterRng rng(67);
  auto s = random_scores(rng, 5, false);
  std::vector<std::string> ids = {"u", "u", "v", "w", "w"};
  std::vector<std::int64_t> perm = {4, 2, 0, 3, 1};
  std::vector<double> pv(25);
  std::vector<std::string> pids(5);
  for (int i = 0; i < 5; ++i) {
    pids[i] = ids[static_cast<std::size_t>(perm[i])];
    for (int j = 0; j < 5; ++j)
      pv[static_cast<std::size_t>(i * 5 + j)] =
          s.data()[static_cast<std::size_t>(perm[i] * 5 + perm[j])];
  }
  auto ps = Tensor::from_data({5, 5}, pv);
  for (auto dir : {Direction::audio_to_image, Direction::image_to_audio})
    CHECK(masked_infonce(ps, build_mask(pids), 0.5, dir).item() ==
          doctest::Approx(masked_infonce(s, build_mask(ids), 0.5, dir).item()).epsilon(1e-12));
}

TEST_CASE("raising a matched score lowers the loss") {
  CounterRng rng(71);
  auto base = random_scores(rng, 3, false);
  auto mask = build_mask({"a", "b", "c"});
  auto bumped_data = base.to_vec();
  bumped_data[0] += 0.5;  // S_00
  auto bumped = Tensor::from_data({3, 3}, bumped_data);
  for (auto dir : {Direction::audio_to_image, Direction::image_to_audio})
    CHECK(masked_infonce(bumped, mask, 1.0, dir).item() <
          masked_infonce(base, mask, 1.0, dir).item());
}

TEST_CASE("contrastive loss rejects bad inputs") {
  auto mask = build_mask({"p", "q"});
  auto s = Tensor::from_data({2, 2}, {0, 0, 0, 0});
  CHECK_THROWS_AS(masked_infonce(s, build_mask({"p", "q", "r"}), 1.0, Direction::audio_to_image),
                  std::invalid_argument);
  auto nan = Tensor::from_data({2, 2}, {0, std::numeric_limits<double>::quiet_NaN(), 0, 0});
  CHECK_THROWS_AS(masked_infonce(nan, mask, 1.0, Direction::audio_to_image),
                  std::invalid_argument);
  CHECK_THROWS_AS(masked_infonce(s, mask, std::numeric_limits<double>::infinity(),
                                 Direction::audio_to_image),
                  std::invalid_argument);
  auto rect = Tensor::from_data({2, 3}, std::vector<double>(6, 0.0));
  CHECK_THROWS_AS(masked_infonce(rect, mask, 1.0, Direction::audio_to_image),
                  std::invalid_argument);
}

TEST_CASE("contrastive loss gradients match finite differences") {
  CounterRng rng(73);
  auto s = random_scores(rng, 4);
  auto mask = build_mask({"m", "m", "n", "o"});
  for (auto dir : {Direction::audio_to_image, Direction::image_to_audio}) {
    auto build = [&] { return masked_infonce(s, mask, 1.0, dir); };
    CHECK(finite_diff_check(build, {&s, 1}, 1e-5) <= 1e-7);
  }
  // Both directions summed, as the combined objective uses it.
  auto build_sum = [&] {
    return add(masked_infonce(s, mask, 1.0, Direction::audio_to_image),
               masked_infonce(s, mask, 1.0, Direction::image_to_audio));
  };
  CHECK(finite_diff_check(build_sum, {&s, 1}, 1e-5) <= 1e-7);
}

TEST_CASE("scalar overload agrees with the tensor path") {
  CounterRng rng(79);
  auto s = random_scores(rng, 5, false);
  auto mask = build_mask({"a", "a", "b", "c", "c"});
  ScoreMatrix sm{to_grid(s), ScoreKind::coarse};
  for (auto dir : {Direction::audio_to_image, Direction::image_to_audio})
    CHECK(masked_infonce(sm, mask, 0.9, dir) == masked_infonce(s, mask, 0.9, dir).item());
}

TEST_CASE("loss weights validate") {
  LossWeights ok;
  CHECK_NOTHROW(ok.validate());
  LossWeights neg{-0.1, 1.0, 1.0};
  CHECK_THROWS_AS(neg.validate(), std::invalid_argument);
  LossWeights zero{0.0, 0.0, 1.0};
  CHECK_THROWS_AS(zero.validate(), std::invalid_argument);
  LossWeights bad_margin{0.1, 1.0, -1.0};
  CHECK_THROWS_AS(bad_margin.validate(), std::invalid_argument);
}

TEST_CASE("combined loss is the weighted bidirectional sum") {
  CounterRng rng(83);
  auto sc = random_scores(rng, 4, false);
  auto sf = random_scores(rng, 4, false);
  auto mask = build_mask({"a", "a", "b", "c"});
  LossWeights w{0.3, 1.0, 0.8};
  double lc = masked_infonce(sc, mask, 0.8, Direction::audio_to_image).item() +
              masked_infonce(sc, mask, 0.8, Direction::image_to_audio).item();
  double lf = masked_infonce(sf, mask, 0.8, Direction::audio_to_image).item() +
              masked_infonce(sf, mask, 0.8, Direction::image_to_audio).item();
  double got = combined_loss(sc, sf, mask, w).item();
  CHECK(got == doctest::Approx(0.3 * lc + 1.0 * lf).epsilon(1e-12));

  // Doubling the coarse weight adds exactly one more coarse term.
  LossWeights w2{0.6, 1.0, 0.8};
  CHECK(combined_loss(sc, sf, mask, w2).item() - got == doctest::Approx(0.3 * lc).epsilon(1e-10));
}

TEST_CASE("zero coarse weight leaves fine gradients bitwise unchanged") {
  CounterRng rng(89);
  auto sc = random_scores(rng, 3);
  auto sf = random_scores(rng, 3);
  auto mask = build_mask({"x", "y", "y"});

  auto loss = combined_loss(sc, sf, mask, LossWeights{0.0, 1.0, 1.0});
  std::vector<Tensor> both = {sc, sf};
  auto grads = grad(loss, both);
  CHECK(grads[0] == std::vector<double>(9, 0.0));  // coarse branch absent from the graph

  auto fine_only = add(masked_infonce(sf, mask, 1.0, Direction::audio_to_image),
                       masked_infonce(sf, mask, 1.0, Direction::image_to_audio));
  auto ref = grad(fine_only, {&sf, 1});
  CHECK(grads[1] == ref[0]);  // bitwise
  CHECK(loss.item() == fine_only.item());
}
