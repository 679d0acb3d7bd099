#include "pica/ops.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace pica;

TEST_SUITE("ops") {
  TEST_CASE("softmax of equal logits is uniform") {
    const Distribution p = softmax(Eigen::Vector4f::Zero().eval());
    for (int i = 0; i < 4; ++i) CHECK(p(i) == doctest::Approx(0.25).epsilon(1e-15));
  }

  TEST_CASE("softmax closed form") {
    Eigen::Vector2f x(static_cast<float>(std::log(2.0)), 0.0f);
    const Distribution p = softmax(x);
    CHECK(p(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-7));
    CHECK(p(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-7));
  }

  TEST_CASE("softmax is stable for large logits") {
    Eigen::Vector2f x(1000.0f, 0.0f);
    const Distribution p = softmax(x);
    CHECK(p.allFinite());
    CHECK(p(0) == doctest::Approx(1.0));
    CHECK(p(1) < 1e-300);
  }

  TEST_CASE("softmax rejects empty and non-finite input") {
    CHECK_THROWS_AS(softmax(Eigen::VectorXf()), Error);
    Eigen::Vector2f x(NAN, 0.0f);
    CHECK_THROWS_AS(softmax(x), Error);
  }

  TEST_CASE("argmax picks the largest entry and breaks ties low") {
    CHECK(argmax(Eigen::Vector3d(0.1, 0.7, 0.2)) == 1);
    CHECK(argmax(Eigen::Vector2d(0.5, 0.5)) == 0);
    Distribution one_hot = Distribution::Zero(6);
    one_hot(3) = 1.0;
    CHECK(argmax(one_hot) == 3);
    CHECK(greedy_select(one_hot) == 3);
    CHECK_THROWS_AS(argmax(Eigen::VectorXd()), Error);
  }

  TEST_CASE("rms_norm matches a hand computation") {
    RowMatrixXf x(1, 2);
    x << 3.0f, 4.0f;
    Eigen::Vector2f gain(1.0f, 2.0f);
    const RowMatrixXf y = rms_norm(x, gain, 0.0);
    const float rms = std::sqrt(12.5f);
    CHECK(y(0, 0) == doctest::Approx(3.0f / rms));
    CHECK(y(0, 1) == doctest::Approx(8.0f / rms));
  }

  TEST_CASE("silu") {
    Eigen::Array3f x(0.0f, 1.0f, -1.0f);
    const Eigen::Array3f y = silu(x);
    CHECK(y(0) == 0.0f);
    CHECK(y(1) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
    CHECK(y(2) == doctest::Approx(-1.0 / (1.0 + std::exp(1.0))));
  }

  TEST_CASE("rotary is the identity at position 0 and preserves pair norms") {
    const int head_dim = 4;
    RowMatrixXf cos(3, 2), sin(3, 2);
    for (int p = 0; p < 3; ++p) {
      for (int i = 0; i < 2; ++i) {
        const double theta = p / std::pow(10000.0, 2.0 * i / head_dim);
        cos(p, i) = static_cast<float>(std::cos(theta));
        sin(p, i) = static_cast<float>(std::sin(theta));
      }
    }
    RowMatrixXf x(3, 8);
    x.setRandom();
    const RowMatrixXf before = x;
    apply_rotary(x, head_dim, 0, cos, sin);
    CHECK(x.row(0).isApprox(before.row(0)));
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 8; c += 2) {
        CHECK(std::hypot(x(r, c), x(r, c + 1)) == doctest::Approx(std::hypot(before(r, c), before(r, c + 1))));
      }
    }
    // Position 1, first pair: rotation by exactly one radian.
    CHECK(x(1, 0) == doctest::Approx(before(1, 0) * std::cos(1.0) - before(1, 1) * std::sin(1.0)).epsilon(1e-5));
  }

  TEST_CASE("causal softmax rows sum to one and mask the future") {
    std::mt19937_64 rng(7);
    std::normal_distribution<float> g(0.0f, 3.0f);
    RowMatrixXf scores(5, 9);
    for (Eigen::Index i = 0; i < scores.size(); ++i) scores.data()[i] = g(rng);
    causal_softmax_rows(scores, 4);
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
      CHECK(scores.row(r).sum() == doctest::Approx(1.0f).epsilon(1e-6));
      for (Eigen::Index c = 4 + r + 1; c < scores.cols(); ++c) CHECK(scores(r, c) == 0.0f);
      CHECK((scores.row(r).array() >= 0.0f).all());
    }
  }
}
