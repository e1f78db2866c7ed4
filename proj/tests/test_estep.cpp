#include <doctest.h>

#include "test_support.hpp"

#include "coxmiss/estep.hpp"
#include "coxmiss/survival_data.hpp"

#include <cmath>
#include <random>

using namespace coxmiss;
namespace ts = testing_support;

TEST_SUITE("estep") {

TEST_CASE("cumulative hazard is a right-continuous step sum") {
    Baseline b{{1.0, 2.0, 3.0}, {0.1, 0.2, 0.3}};
    CHECK(cumulative_hazard(b, 0.5) == 0.0);
    CHECK(cumulative_hazard(b, 2.0) == doctest::Approx(0.3));
    CHECK(cumulative_hazard(b, 1e9) == doctest::Approx(0.6));
}

TEST_CASE("complete subject has exact expectations") {
    ParameterSet ps;
    ps.beta = Vec(2);
    ps.beta << 0.4, -0.2;
    ps.mu = Vec::Zero(2);
    ps.sigma = Mat::Identity(2, 2);
    ps.baseline = Baseline{{1.0}, {0.5}};
    ObservedSubject s;
    s.y = 1.0;
    s.delta = 1;
    s.mask = MissingMask::none(2);
    s.x_obs = Vec(2);
    s.x_obs << 1.5, -0.5;
    auto e = subject_expectations(s, ps, 30);
    CHECK((e.ex - s.x_obs).cwiseAbs().maxCoeff() == 0.0);
    CHECK(e.erisk == doctest::Approx(std::exp(0.7)));
    CHECK((e.exx() - s.x_obs * s.x_obs.transpose()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("beta = 0 gives unit risk and conditional means") {
    std::mt19937_64 rng(3);
    auto pb = ts::random_problem(rng, 4, 2);
    pb.beta.setZero();
    auto c = ts::to_library(pb);
    auto e = subject_expectations(c.subject, c.params, 30);
    CHECK(e.erisk == 1.0);
    auto cond = oracle::condition(pb.mu, pb.sigma, pb.miss, pb.obs, pb.x_obs);
    for (size_t k = 0; k < pb.miss.size(); ++k)
        CHECK(e.ex(pb.miss[k]) == doctest::Approx(cond.mean(static_cast<Eigen::Index>(k))).epsilon(1e-12));
}

TEST_CASE("zero missing coefficients: continuity at the closed-form boundary") {
    std::mt19937_64 rng(4);
    auto pb = ts::random_problem(rng, 4, 2);
    for (int j : pb.miss) pb.beta(j) = 0.0;
    auto c = ts::to_library(pb);
    auto closed = closed_form_expectations(c.subject, c.params);
    const Vec ref = ts::flatten(closed, 0.0);
    for (double tiny : {1e-300, 1e-9}) {
        auto probe = c;
        for (int j : pb.miss) probe.params.beta(j) = tiny;
        auto e = subject_expectations(probe.subject, probe.params, 30);
        CHECK((ts::flatten(e, 0.0) - ref).cwiseAbs().maxCoeff() < 1e-8);
    }
    double lin = 0;
    for (size_t k = 0; k < pb.obs.size(); ++k) lin += pb.beta(pb.obs[k]) * pb.x_obs(static_cast<Eigen::Index>(k));
    CHECK(closed.erisk == doctest::Approx(std::exp(lin)).epsilon(1e-14));
    CHECK((closed.erisk_x - closed.erisk * closed.ex).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((closed.erisk_xx() - closed.erisk * closed.exx()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("censored before first event: Gaussian conditional moments") {
    std::mt19937_64 rng(8);
    auto pb = ts::random_problem(rng, 4, 3);
    pb.delta = 0;
    auto c = ts::to_library(pb);
    c.subject.y = 0.1;   // before the first jump at y/2 = 1
    auto e = subject_expectations(c.subject, c.params, 30);
    auto cond = oracle::condition(pb.mu, pb.sigma, pb.miss, pb.obs, pb.x_obs);
    const Mat exx = e.exx();
    for (size_t a = 0; a < pb.miss.size(); ++a) {
        const auto ia = static_cast<Eigen::Index>(a);
        CHECK(std::abs(e.ex(pb.miss[a]) - cond.mean(ia)) < 1e-10);
        for (size_t b = 0; b < pb.miss.size(); ++b) {
            const auto ib = static_cast<Eigen::Index>(b);
            CHECK(std::abs(exx(pb.miss[a], pb.miss[b]) - (cond.cov(ia, ib) + cond.mean(ia) * cond.mean(ib))) < 1e-10);
        }
    }
}

TEST_CASE("documented two-missing example against tensor and Monte Carlo oracles") {
    oracle::Problem pb;
    pb.mu = Vec::Zero(2);
    pb.sigma = Mat::Identity(2, 2);
    pb.beta = Vec::Constant(2, 0.5);
    pb.beta_new = Vec(2);
    pb.beta_new << 0.3, 0.8;
    pb.miss = {0, 1};
    pb.x_obs = Vec(0);
    pb.delta = 1;
    pb.cumhaz = 0.2;
    pb.jump = 0.05;
    auto c = ts::to_library(pb);
    auto e = subject_expectations(c.subject, c.params, 30);
    const Vec got = ts::flatten(e, erisk_at_new_beta(e, c.subject, pb.beta_new));
    const auto tm = oracle::tensor_moments(pb, 80);
    const Vec ref = ts::flatten(tm);
    CHECK((got - ref).cwiseAbs().maxCoeff() <= 1e-6 * ref.cwiseAbs().maxCoeff());
    CHECK(e.loglik == doctest::Approx(tm.loglik).epsilon(1e-8));
    const auto mc = oracle::monte_carlo(pb, 1000000, 77);
    for (Eigen::Index k = 0; k < got.size(); ++k) CHECK(std::abs(got(k) - mc.est(k)) <= 3 * mc.se(k) + 1e-12);
}

TEST_CASE("random subjects match the tensor oracle") {
    std::mt19937_64 rng(2024);
    for (int rep = 0; rep < 10; ++rep) {
        auto pb = ts::random_problem(rng, 5, 2);
        auto c = ts::to_library(pb);
        auto e = subject_expectations(c.subject, c.params, 30);
        const Vec got = ts::flatten(e, erisk_at_new_beta(e, c.subject, pb.beta_new));
        const auto tm = oracle::tensor_moments(pb, 80);
        const Vec ref = ts::flatten(tm);
        CHECK((got - ref).cwiseAbs().maxCoeff() <= 1e-6 * ref.cwiseAbs().maxCoeff());
        CHECK(e.loglik == doctest::Approx(tm.loglik).epsilon(1e-8));
    }
}

TEST_CASE("three missing coordinates match a tensor oracle") {
    std::mt19937_64 rng(31);
    for (int rep = 0; rep < 3; ++rep) {
        auto pb = ts::random_problem(rng, 4, 3);
        auto c = ts::to_library(pb);
        auto e = subject_expectations(c.subject, c.params, 30);
        const Vec got = ts::flatten(e, erisk_at_new_beta(e, c.subject, pb.beta_new));
        const Vec ref = ts::flatten(oracle::tensor_moments(pb, 40));
        CHECK((got - ref).cwiseAbs().maxCoeff() <= 1e-6 * ref.cwiseAbs().maxCoeff());
    }
}

TEST_CASE("erisk at a new beta") {
    std::mt19937_64 rng(12);
    auto pb = ts::random_problem(rng, 4, 2);
    auto c = ts::to_library(pb);
    auto e = subject_expectations(c.subject, c.params, 30);
    CHECK(erisk_at_new_beta(e, c.subject, pb.beta) == doctest::Approx(e.erisk).epsilon(1e-10));
    Vec bn = pb.beta_new;
    for (int j : pb.miss) bn(j) = 0.0;
    double lin = 0;
    for (size_t k = 0; k < pb.obs.size(); ++k) lin += bn(pb.obs[k]) * pb.x_obs(static_cast<Eigen::Index>(k));
    CHECK(erisk_at_new_beta(e, c.subject, bn) == doctest::Approx(std::exp(lin)).epsilon(1e-12));
    CHECK(erisk_at_new_beta(c.subject, c.params, pb.beta_new, 30) ==
          doctest::Approx(erisk_at_new_beta(e, c.subject, pb.beta_new)).epsilon(1e-14));
}

TEST_CASE("completion invariance, Jensen and observed-coordinate fixing") {
    std::mt19937_64 rng(99);
    for (int rep = 0; rep < 20; ++rep) {
        auto pb = ts::random_problem(rng, 6, 1 + rep % 5);
        auto c = ts::to_library(pb);
        auto h = subject_expectations(c.subject, c.params, 30, Completion::householder);
        auto g = subject_expectations(c.subject, c.params, 30, Completion::gram_schmidt);
        const Vec fh = ts::flatten(h, erisk_at_new_beta(h, c.subject, pb.beta_new));
        const Vec fg = ts::flatten(g, erisk_at_new_beta(g, c.subject, pb.beta_new));
        CHECK((fh - fg).cwiseAbs().maxCoeff() < 1e-8);
        CHECK(h.erisk >= std::exp(h.ex.dot(pb.beta)) - 1e-12);
        const Mat exx = h.exx();
        for (size_t k = 0; k < pb.obs.size(); ++k) {
            const double v = pb.x_obs(static_cast<Eigen::Index>(k));
            CHECK(h.ex(pb.obs[k]) == v);
            for (size_t l = 0; l < pb.obs.size(); ++l)
                CHECK(exx(pb.obs[k], pb.obs[l]) == v * pb.x_obs(static_cast<Eigen::Index>(l)));
        }
        Eigen::SelfAdjointEigenSolver<Mat> es(exx - h.ex * h.ex.transpose());
        CHECK(es.eigenvalues().minCoeff() > -1e-8);
        CHECK(h.erisk > 0);
    }
}

TEST_CASE("batched E-step equals the serial reference for any worker count") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> u;
    Dataset data;
    data.p = 4;
    const int n = 60;
    for (int i = 0; i < n; ++i) {
        ObservedSubject s;
        s.y = 0.1 + 3 * u(rng);
        s.delta = u(rng) < 0.6;
        std::vector<bool> f(4, false);
        if (i % 3 == 0) f[0] = f[1] = true;
        if (i % 5 == 0) f[3] = true;
        s.mask = MissingMask(f);
        s.x_obs = Vec(s.mask.n_observed());
        for (int k = 0; k < s.x_obs.size(); ++k) s.x_obs(k) = nd(rng);
        data.subjects.push_back(s);
    }
    RiskSets rs(data);
    ParameterSet ps;
    ps.beta = Vec(4);
    ps.beta << 0.3, -0.5, 0.2, 0.4;
    ps.mu = Vec::Zero(4);
    ps.sigma = ts::random_spd(rng, 4);
    ps.baseline.times = rs.times;
    ps.baseline.jumps.assign(rs.times.size(), 0.03);
    EStepOptions opt;
    auto ref = run_estep_serial(data, ps, opt);
    for (int w : {1, 2, 4}) {
        auto e = run_estep(data, rs, ps, opt, w);
        CHECK(e.loglik == ref.loglik);
        for (int i = 0; i < n; ++i) {
            CHECK((ts::flatten(e.subjects[i], 0) - ts::flatten(ref.subjects[i], 0)).cwiseAbs().maxCoeff() == 0.0);
        }
        Vec bn = ps.beta * 1.1;
        CHECK((erisk_at_new_beta_all(data, e, bn, w) - erisk_at_new_beta_all(data, ref, bn, 1)).cwiseAbs().maxCoeff() ==
              0.0);
    }
    CHECK(observed_loglik(ps, data, 30, 1) == ref.loglik);
}

TEST_CASE("observed log-likelihood with no hazard is the Gaussian log-density") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> nd;
    Dataset data;
    data.p = 3;
    ParameterSet ps;
    ps.beta = Vec::Constant(3, 0.5);
    ps.mu = Vec::Zero(3);
    ps.sigma = ts::random_spd(rng, 3);
    double ref = 0;
    for (int i = 0; i < 5; ++i) {
        ObservedSubject s;
        s.y = 1.0 + i;
        s.delta = 0;
        std::vector<bool> f(3, false);
        f[static_cast<size_t>(i % 3)] = true;
        s.mask = MissingMask(f);
        s.x_obs = Vec(2);
        s.x_obs << nd(rng), nd(rng);
        data.subjects.push_back(s);
        const auto& o = s.mask.observed;
        Mat so(2, 2);
        Vec mo = Vec::Zero(2);
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) so(a, b) = ps.sigma(o[a], o[b]);
        ref += oracle::gaussian_logpdf(s.x_obs, mo, so);
    }
    // a single event far beyond everyone else's time carries no hazard for them
    ObservedSubject last;
    last.y = 100;
    last.delta = 0;
    last.mask = MissingMask::none(3);
    last.x_obs = Vec::Zero(3);
    data.subjects.push_back(last);
    ref += oracle::gaussian_logpdf(Vec::Zero(3), Vec::Zero(3), ps.sigma);
    ps.baseline = Baseline{{}, {}};
    CHECK(observed_loglik(ps, data, 30) == doctest::Approx(ref).epsilon(1e-12));
}

}
