#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <fpgp/kernels.hpp>
#include <fpgp/rng.hpp>

using namespace fpgp;
using kernels::AugmentedBasisPoint;
using kernels::KernelHyperparams;

namespace {

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

KernelHyperparams test_eq() {
  return kernels::eq_kernel(2.0, vec2(0.7, 1.3));
}

KernelHyperparams test_linear() {
  return kernels::linear_kernel(vec2(0.9, 1.6));
}

// Mixed basis: two value anchors plus derivative features in both dimensions
// at the second anchor.
std::vector<AugmentedBasisPoint> test_basis() {
  std::vector<AugmentedBasisPoint> basis;
  basis.push_back(kernels::value_point(vec2(0.5, -0.4)));
  basis.push_back(kernels::value_point(vec2(-0.3, 0.6)));
  basis.push_back(kernels::deriv_point(vec2(-0.3, 0.6), 0));
  basis.push_back(kernels::deriv_point(vec2(-0.3, 0.6), 1));
  return basis;
}

double fd_step = 1e-5;

double eval_at(const KernelHyperparams& k, Vec x, Vec z) {
  return kernels::eval(k, x, z);
}

// Monte Carlo estimate of feature expectations with empirical standard
// errors, used as an implementation-independent oracle.
struct McMoments {
  Vec q;
  Mat outer;
  double kdiag = 0.0;
  Vec q_se;
  Mat outer_se;
  double kdiag_se = 0.0;
};

McMoments mc_feature_moments(const KernelHyperparams& k,
                             const std::vector<AugmentedBasisPoint>& basis, const Vec& mean,
                             const Mat& cov, int n_samples, uint64_t seed) {
  const Eigen::Index n = static_cast<Eigen::Index>(basis.size());
  const Eigen::Index d = mean.size();
  Eigen::LLT<Mat> llt(cov);
  REQUIRE(llt.info() == Eigen::Success);
  const Mat root = llt.matrixL();

  std::mt19937_64 gen(seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  Vec sq = Vec::Zero(n), sq2 = Vec::Zero(n);
  Mat so = Mat::Zero(n, n), so2 = Mat::Zero(n, n);
  double sk = 0.0, sk2 = 0.0;
  Vec x(d), phi(n);
  for (int s = 0; s < n_samples; ++s) {
    for (Eigen::Index i = 0; i < d; ++i) x(i) = unit(gen);
    x = mean + root * x;
    phi = kernels::cross_vector(k, basis, x);
    sq += phi;
    sq2 += phi.cwiseProduct(phi);
    so += phi * phi.transpose();
    so2 += (phi * phi.transpose()).cwiseProduct(phi * phi.transpose());
    const double kv = kernels::eval(k, x, x);
    sk += kv;
    sk2 += kv * kv;
  }
  const double m = static_cast<double>(n_samples);
  McMoments out;
  out.q = sq / m;
  out.outer = so / m;
  out.kdiag = sk / m;
  out.q_se = ((sq2 / m - out.q.cwiseProduct(out.q)).cwiseMax(0.0) / m).cwiseSqrt();
  out.outer_se = ((so2 / m - out.outer.cwiseProduct(out.outer)).cwiseMax(0.0) / m).cwiseSqrt();
  out.kdiag_se = std::sqrt(std::max(0.0, sk2 / m - out.kdiag * out.kdiag) / m);
  return out;
}

}  // namespace

TEST_CASE("pointwise evaluations match the closed forms") {
  const auto eq = test_eq();
  const Vec x = vec2(0.3, -0.2);
  const Vec z = vec2(-0.4, 0.5);
  const double dx0 = (0.3 + 0.4) / 0.7;
  const double dx1 = (-0.2 - 0.5) / 1.3;
  CHECK(kernels::eval(eq, x, z) ==
        doctest::Approx(2.0 * std::exp(-0.5 * (dx0 * dx0 + dx1 * dx1))).epsilon(1e-14));
  CHECK(kernels::eval(eq, x, x) == doctest::Approx(2.0).epsilon(1e-14));

  const auto lin = test_linear();
  CHECK(kernels::eval(lin, x, z) ==
        doctest::Approx(0.9 * 0.3 * -0.4 + 1.6 * -0.2 * 0.5).epsilon(1e-14));
}

TEST_CASE("kernel gradients match central differences") {
  std::mt19937_64 gen(rng::substream_seed(42, "kernel-fd"));
  std::normal_distribution<double> unit(0.0, 1.0);
  for (const auto& k : {test_eq(), test_linear()}) {
    for (int rep = 0; rep < 5; ++rep) {
      Vec x = vec2(unit(gen), unit(gen));
      Vec z = vec2(unit(gen), unit(gen));
      const Vec g1 = kernels::grad1(k, x, z);
      const Vec g2 = kernels::grad2(k, x, z);
      const Mat h = kernels::grad12(k, x, z);
      for (int i = 0; i < 2; ++i) {
        Vec xp = x, xm = x;
        xp(i) += fd_step;
        xm(i) -= fd_step;
        CHECK(g1(i) == doctest::Approx((eval_at(k, xp, z) - eval_at(k, xm, z)) / (2 * fd_step))
                           .epsilon(1e-6));
        Vec zp = z, zm = z;
        zp(i) += fd_step;
        zm(i) -= fd_step;
        CHECK(g2(i) == doctest::Approx((eval_at(k, x, zp) - eval_at(k, x, zm)) / (2 * fd_step))
                           .epsilon(1e-6));
        for (int j = 0; j < 2; ++j) {
          Vec zjp = z, zjm = z;
          zjp(j) += fd_step;
          zjm(j) -= fd_step;
          const double fd = (kernels::grad1(k, x, zjp)(i) - kernels::grad1(k, x, zjm)(i)) /
                            (2 * fd_step);
          CHECK(h(i, j) == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
        }
      }
    }
  }
}

TEST_CASE("feature covariances are symmetric in argument order") {
  const auto basis = test_basis();
  for (const auto& k : {test_eq(), test_linear()}) {
    for (const auto& a : basis)
      for (const auto& b : basis)
        CHECK(kernels::feature_cov(k, a, b) ==
              doctest::Approx(kernels::feature_cov(k, b, a)).epsilon(1e-12));
  }
}

TEST_CASE("cross jacobian matches finite differences of the cross vector") {
  const auto basis = test_basis();
  const Vec x = vec2(0.15, -0.35);
  for (const auto& k : {test_eq(), test_linear()}) {
    const Mat cj = kernels::cross_jacobian(k, basis, x);
    REQUIRE(cj.rows() == 4);
    REQUIRE(cj.cols() == 2);
    for (int i = 0; i < 2; ++i) {
      Vec xp = x, xm = x;
      xp(i) += fd_step;
      xm(i) -= fd_step;
      const Vec fd = (kernels::cross_vector(k, basis, xp) - kernels::cross_vector(k, basis, xm)) /
                     (2 * fd_step);
      for (int b = 0; b < 4; ++b)
        CHECK(cj(b, i) == doctest::Approx(fd(b)).epsilon(1e-5).scale(1.0));
    }
  }
}

TEST_CASE("expected features reduce to pointwise features as the belief collapses") {
  const auto basis = test_basis();
  const Vec mean = vec2(0.1, 0.25);
  const Mat cov = 1e-16 * Mat::Identity(2, 2);
  for (const auto& k : {test_eq(), test_linear()}) {
    const GaussianBelief belief(mean, cov);
    const Vec q = kernels::expected_feature_vec(k, belief, basis);
    const Mat outer = kernels::expected_feature_outer(k, belief, basis);
    const Vec phi = kernels::cross_vector(k, basis, mean);
    for (int b = 0; b < 4; ++b) CHECK(q(b) == doctest::Approx(phi(b)).epsilon(1e-6));
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        CHECK(outer(a, b) == doctest::Approx(phi(a) * phi(b)).epsilon(1e-6).scale(1e-8));
    CHECK(kernels::expected_kernel_diag(k, belief) ==
          doctest::Approx(kernels::eval(k, mean, mean)).epsilon(1e-9));
  }
}

TEST_CASE("one dimensional value feature expectation has the textbook form") {
  // E[k(x, z)] under x ~ N(mu, s2) for the EQ kernel:
  //   sf2 * l / sqrt(l^2 + s2) * exp(-(mu - z)^2 / (2 (l^2 + s2))).
  const double sf2 = 1.5, l = 0.8, s2 = 0.3, mu = 0.4, z = -0.1;
  Vec lv(1), mv(1), zv(1);
  lv << l;
  mv << mu;
  zv << z;
  const auto k = kernels::eq_kernel(sf2, lv);
  const GaussianBelief belief(mv, s2 * Mat::Identity(1, 1));
  std::vector<AugmentedBasisPoint> basis{kernels::value_point(zv),
                                         kernels::deriv_point(zv, 0)};
  const Vec q = kernels::expected_feature_vec(k, belief, basis);
  const double expected =
      sf2 * l / std::sqrt(l * l + s2) * std::exp(-(mu - z) * (mu - z) / (2 * (l * l + s2)));
  CHECK(q(0) == doctest::Approx(expected).epsilon(1e-12));

  // Derivative feature: the Gaussian product posterior has mean
  // m1 = mu - s2 (mu - z) / (s2 + l^2), and E = q * (m1 - z) / l^2.
  const double m1 = mu - s2 * (mu - z) / (s2 + l * l);
  CHECK(q(1) == doctest::Approx(expected * (m1 - z) / (l * l)).epsilon(1e-12));
}

TEST_CASE("expected features match Monte Carlo for the EQ kernel") {
  const auto k = test_eq();
  const auto basis = test_basis();
  const Vec mean = vec2(0.2, -0.3);
  Mat cov(2, 2);
  cov << 0.5, 0.2, 0.2, 0.4;
  const GaussianBelief belief(mean, cov);

  const Vec q = kernels::expected_feature_vec(k, belief, basis);
  const Mat outer = kernels::expected_feature_outer(k, belief, basis);
  const double kdiag = kernels::expected_kernel_diag(k, belief);

  const auto mc = mc_feature_moments(k, basis, mean, cov, 300000,
                                     rng::substream_seed(42, "kernel-mc-eq"));
  for (int b = 0; b < 4; ++b)
    CHECK(std::abs(q(b) - mc.q(b)) <= 5.0 * mc.q_se(b) + 1e-10);
  for (int a = 0; a < 4; ++a)
    for (int b = a; b < 4; ++b)
      CHECK(std::abs(outer(a, b) - mc.outer(a, b)) <= 5.0 * mc.outer_se(a, b) + 1e-10);
  CHECK(std::abs(kdiag - mc.kdiag) <= 5.0 * mc.kdiag_se + 1e-10);
  CHECK(kdiag == doctest::Approx(2.0).epsilon(1e-14));  // EQ diag is the signal variance
}

TEST_CASE("expected features match Monte Carlo and moment identities for the linear kernel") {
  const auto k = test_linear();
  const auto basis = test_basis();
  const Vec mean = vec2(-0.4, 0.7);
  Mat cov(2, 2);
  cov << 0.3, -0.1, -0.1, 0.6;
  const GaussianBelief belief(mean, cov);

  const Vec q = kernels::expected_feature_vec(k, belief, basis);
  const Mat outer = kernels::expected_feature_outer(k, belief, basis);

  // Every linear-kernel feature is g' x; moments follow from
  // E[(g'x)(h'x)] = g' (cov + mean mean') h.
  std::vector<Vec> g;
  for (const auto& b : basis) {
    Vec gb = Vec::Zero(2);
    if (b.is_value())
      gb = vec2(0.9 * b.location(0), 1.6 * b.location(1));
    else
      gb(b.deriv_dim) = b.deriv_dim == 0 ? 0.9 : 1.6;
    g.push_back(gb);
  }
  const Mat second = cov + mean * mean.transpose();
  for (int a = 0; a < 4; ++a) {
    CHECK(q(a) == doctest::Approx(g[a].dot(mean)).epsilon(1e-12));
    for (int b = 0; b < 4; ++b)
      CHECK(outer(a, b) == doctest::Approx(g[a].dot(second * g[b])).epsilon(1e-12));
  }
  CHECK(kernels::expected_kernel_diag(k, belief) ==
        doctest::Approx(0.9 * (0.3 + 0.16) + 1.6 * (0.6 + 0.49)).epsilon(1e-12));

  const auto mc = mc_feature_moments(k, basis, mean, cov, 200000,
                                     rng::substream_seed(42, "kernel-mc-lin"));
  for (int b = 0; b < 4; ++b)
    CHECK(std::abs(q(b) - mc.q(b)) <= 5.0 * mc.q_se(b) + 1e-10);
}

TEST_CASE("expected outer product matrix is positive semidefinite") {
  std::mt19937_64 gen(rng::substream_seed(42, "kernel-psd"));
  std::normal_distribution<double> unit(0.0, 1.0);
  const auto basis = test_basis();
  for (int rep = 0; rep < 10; ++rep) {
    const Vec mean = vec2(unit(gen), unit(gen));
    Mat a(2, 2);
    a << unit(gen), unit(gen), unit(gen), unit(gen);
    const Mat cov = a * a.transpose() + 0.05 * Mat::Identity(2, 2);
    const GaussianBelief belief(mean, cov);
    const Mat outer = kernels::expected_feature_outer(test_eq(), belief, basis);
    Eigen::SelfAdjointEigenSolver<Mat> es(outer, Eigen::EigenvaluesOnly);
    CHECK(es.eigenvalues().minCoeff() >= -1e-9 * outer.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("pair cache reuse changes nothing") {
  const auto k = test_eq();
  const auto basis = test_basis();
  const auto cache = kernels::build_pair_cache(k, basis);
  const Vec mean = vec2(0.05, 0.6);
  Mat cov(2, 2);
  cov << 0.4, 0.1, 0.1, 0.2;
  Vec q1, q2;
  Mat o1, o2;
  double kd1, kd2;
  kernels::expected_features(k, basis, &cache, mean, cov, q1, o1, kd1);
  kernels::expected_features(k, basis, static_cast<const kernels::PairCache<double>*>(nullptr),
                             mean, cov, q2, o2, kd2);
  CHECK((q1 - q2).cwiseAbs().maxCoeff() == 0.0);
  CHECK((o1 - o2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(kd1 == kd2);
}

TEST_CASE("invalid hyperparameters are rejected") {
  CHECK_THROWS_AS(kernels::validate(kernels::eq_kernel(0.0, vec2(1.0, 1.0))),
                  NumericDomainError);
  CHECK_THROWS_AS(kernels::validate(kernels::eq_kernel(1.0, vec2(1.0, -0.5))),
                  NumericDomainError);
  CHECK_THROWS_AS(kernels::validate(kernels::eq_kernel(1.0, Vec())), ShapeError);
  CHECK_THROWS_AS(kernels::validate(kernels::linear_kernel(vec2(1.0, 0.0))),
                  NumericDomainError);
  CHECK_THROWS_AS(kernels::validate(kernels::linear_kernel(Vec())), ShapeError);

  // Belief dimension must match the kernel dimension.
  const GaussianBelief belief(Vec::Zero(1), Mat::Identity(1, 1));
  CHECK_THROWS_AS(kernels::expected_feature_vec(test_eq(), belief, test_basis()), ShapeError);
}
