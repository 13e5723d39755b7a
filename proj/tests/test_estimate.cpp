#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace sped;
using namespace testutil;

namespace {

StrainGrid small_grid(Index m) {
    VectorXd s(m);
    for (Index j = 0; j < m; ++j) s[j] = 0.02 * double(j + 1);
    return {s};
}

TrainingData toy_data(std::mt19937_64& rng, Index n, Index m, Index p = 5) {
    TrainingData d;
    d.designs = random_designs(rng, n, p);
    d.grid = small_grid(m);
    d.log_responses.resize(n, m);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < m; ++j) d.log_responses(i, j) = uniform(rng, -1.0, 1.0);
    return d;
}

ModelState random_state(std::mt19937_64& rng, const FitProblem& prob) {
    ModelState s;
    s.beta = (VectorXd(2) << uniform(rng, -1, 1), uniform(rng, 0.1, 1)).finished();
    s.theta.resize(prob.dims());
    for (Index k = 0; k < prob.dims(); ++k) s.theta[k] = uniform(rng, 0.05, 0.6);
    s.theta_d = uniform(rng, 0.1, 1.5);
    s.sigma = random_spd(rng, prob.m());
    s.precision = s.sigma.inverse();
    return s;
}

}  // namespace

TEST(NegLogPosterior, IdentityCovariancesGiveSquaredNorm) {
    std::mt19937_64 rng(1);
    const auto data = toy_data(rng, 4, 3);
    const double f = neg_log_posterior(VectorXd::Zero(2), VectorXd::Constant(3, 1e9), 1e9, MatrixXd::Identity(3, 3),
                                       data, 0.0, 0.0, 0.0);
    EXPECT_NEAR(f, data.log_responses.squaredNorm(), 1e-12);
}

TEST(NegLogPosterior, PenaltyAdditivityAndPriorEquivalence) {
    std::mt19937_64 rng(2);
    const auto data = toy_data(rng, 4, 3);
    const FitProblem prob(data, KernelFamily::sped, 1e-8);
    auto s = random_state(rng, prob);
    s.theta = VectorXd::Zero(3);
    s.theta[0] = 2.0;
    const double f0 = neg_log_posterior(prob, s, 0.0, 0.0);
    EXPECT_NEAR(neg_log_posterior(prob, s, 1.0, 0.0) - f0, 2.0, 1e-12);
    // lambda sum(theta) = -log prod lambda exp(-lambda theta_k) + K log lambda
    const double lam = 0.7;
    s.theta = (VectorXd(3) << 0.3, 1.1, 0.0).finished();
    double neg_log_prior = 0.0;
    for (Index k = 0; k < 3; ++k) neg_log_prior -= std::log(lam * std::exp(-lam * s.theta[k]));
    EXPECT_NEAR(neg_log_posterior(prob, s, lam, 0.0) - neg_log_posterior(prob, s, 0.0, 0.0),
                neg_log_prior + 3.0 * std::log(lam), 1e-12);
    // lambda_o multiplies the elementwise l1 norm of the precision, diagonal included
    EXPECT_NEAR(neg_log_posterior(prob, s, 0.0, 0.5) - neg_log_posterior(prob, s, 0.0, 0.0),
                0.5 * s.precision.cwiseAbs().sum(), 1e-10);
}

TEST(NegLogPosterior, MatchesDenseKroneckerForm) {
    std::mt19937_64 rng(3);
    int checked = 0;
    for (int t = 0; t < 100; ++t) {
        const Index n = 2 + Index(t % 3), m = 1 + Index((t / 3) % 4);
        if (n * m > 12) continue;
        const auto data = toy_data(rng, n, m);
        const FitProblem prob(data, KernelFamily::sped, 1e-8);
        const auto s = random_state(rng, prob);
        const double li = uniform(rng, 0, 2), lo = uniform(rng, 0, 2);
        const MatrixXd R = brute_R(data.designs, s.theta, s.theta_d, 1e-8);
        const double dense = dense_objective(R, s.sigma, mean_basis(data.grid), s.beta, data.log_responses, s.theta, li, lo);
        EXPECT_LT(rel_err(neg_log_posterior(prob, s, li, lo), dense), 1e-9);
        ++checked;
    }
    EXPECT_GT(checked, 50);
}

TEST(SigmaStep, MatchesReferenceSolution) {
    const auto& g = golden()["sigma_step"];
    TrainingData data;
    for (std::size_t i = 0; i < 3; ++i) {
        StructureDesign d;
        d.diameter = g["ds"][i].get<double>();
        d.curve.values = vec(g["xs"][i]);
        data.designs.push_back(d);
    }
    data.grid = StrainGrid{vec(g["strains"])};
    data.log_responses = mat(g["Y"]);
    const FitProblem prob(data, KernelFamily::sped, g["nugget"].get<double>());
    ModelState s{vec(g["beta"]), vec(g["theta"]), g["theta_d"].get<double>(), MatrixXd::Identity(2, 2),
                 MatrixXd::Identity(2, 2)};
    GlassoOptions opt;
    opt.tol = 1e-10;
    const auto res = sigma_step(prob, s, g["lambda_o"].get<double>(), opt);
    EXPECT_LT((res.covariance - mat(g["sigma"])).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((res.precision - mat(g["precision"])).cwiseAbs().maxCoeff(), 1e-6);

    // the same update is the exact minimizer of the objective over Sigma
    const double lo = g["lambda_o"].get<double>();
    ModelState best = s;
    best.precision = res.precision;
    best.sigma = res.covariance;
    const double fbest = neg_log_posterior(prob, best, 0.0, lo);
    std::mt19937_64 rng(4);
    for (int t = 0; t < 50; ++t) {
        ModelState other = best;
        MatrixXd D = MatrixXd::Zero(2, 2);
        D(0, 1) = D(1, 0) = uniform(rng, -0.05, 0.05);
        D(0, 0) = uniform(rng, -0.05, 0.05);
        other.precision += D;
        if (Eigen::LLT<MatrixXd>(other.precision).info() != Eigen::Success) continue;
        EXPECT_GE(neg_log_posterior(prob, other, 0.0, lo), fbest - 1e-9);
    }
}

TEST(SigmaStep, UnpenalizedWithIdentityCorrelationIsSampleCovariance) {
    std::mt19937_64 rng(5);
    const auto data = toy_data(rng, 6, 3);
    const FitProblem prob(data, KernelFamily::sped, 0.0);
    ModelState s{VectorXd::Zero(2), VectorXd::Constant(3, 1e9), 1e9, MatrixXd::Identity(3, 3), MatrixXd::Identity(3, 3)};
    GlassoOptions opt;
    opt.tol = 1e-10;
    const auto res = sigma_step(prob, s, 0.0, opt);
    const MatrixXd Y = data.log_responses;
    EXPECT_LT((res.covariance - Y.transpose() * Y / 6.0).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(SigmaStep, HugePenaltyGivesDiagonalSigma) {
    std::mt19937_64 rng(6);
    const auto data = toy_data(rng, 6, 4);
    const FitProblem prob(data, KernelFamily::sped, 1e-8);
    const auto s = random_state(rng, prob);
    const auto res = sigma_step(prob, s, 1e7);
    for (Index i = 0; i < 4; ++i)
        for (Index j = 0; j < 4; ++j)
            if (i != j) {
                EXPECT_EQ(res.precision(i, j), 0.0);
                EXPECT_EQ(res.covariance(i, j), 0.0);
            }
}

TEST(BetaStep, OrdinaryLeastSquaresWithIdentityCovariances) {
    std::mt19937_64 rng(7);
    auto data = toy_data(rng, 5, 4);
    // strong positive slope so the constraint is inactive
    const MatrixXd P = mean_basis(data.grid);
    for (Index i = 0; i < 5; ++i) data.log_responses.row(i) += 2.0 * P.col(1).transpose();
    const FitProblem prob(data, KernelFamily::sped, 0.0);
    ModelState s{VectorXd::Zero(2), VectorXd::Constant(3, 1e9), 1e9, MatrixXd::Identity(4, 4), MatrixXd::Identity(4, 4)};
    const VectorXd beta = beta_step(prob, s);
    const MatrixXd X = kron(MatrixXd::Ones(5, 1), P);
    const VectorXd ols = (X.transpose() * X).ldlt().solve(X.transpose() * stack_rows(data.log_responses));
    EXPECT_LT((beta - ols).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(BetaStep, RecoversNoiselessCoefficients) {
    std::mt19937_64 rng(8);
    auto data = toy_data(rng, 5, 4);
    const VectorXd star = (VectorXd(2) << 0.7, 1.3).finished();
    const VectorXd mu = mean_basis(data.grid) * star;
    for (Index i = 0; i < 5; ++i) data.log_responses.row(i) = mu.transpose();
    const FitProblem prob(data, KernelFamily::sped, 1e-8);
    const auto s = random_state(rng, prob);
    EXPECT_LT((beta_step(prob, s) - star).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(BetaStep, MatchesDenseGlsAndEnforcesPositiveSlope) {
    std::mt19937_64 rng(9);
    int constrained = 0, free = 0;
    for (int t = 0; t < 100; ++t) {
        const Index n = 2 + Index(t % 3), m = 2 + Index((t / 3) % 3);
        if (n * m > 12) continue;
        const auto data = toy_data(rng, n, m);
        const FitProblem prob(data, KernelFamily::sped, 1e-8);
        const auto s = random_state(rng, prob);
        const MatrixXd R = brute_R(data.designs, s.theta, s.theta_d, 1e-8);
        const MatrixXd P = mean_basis(data.grid);
        const VectorXd dense = dense_gls(R, s.sigma, P, data.log_responses);
        const VectorXd beta = beta_step(prob, s, 1e-6);
        if (dense[1] >= 1e-6) {
            EXPECT_LT(rel_err(beta, dense), 1e-9);
            ++free;
        } else {
            // constrained optimum: beta_2 pinned, beta_1 minimizes the dense quadratic
            EXPECT_EQ(beta[1], 1e-6);
            const MatrixXd X = kron(MatrixXd::Ones(n, 1), P);
            const MatrixXd Winv = kron(R, s.sigma).inverse();
            const VectorXd y = stack_rows(data.log_responses) - 1e-6 * X.col(1);
            const double b1 = X.col(0).dot(Winv * y) / X.col(0).dot(Winv * X.col(0));
            EXPECT_NEAR(beta[0], b1, 1e-9 * std::max(1.0, std::abs(b1)));
            ++constrained;
        }
    }
    EXPECT_GT(free, 10);
    EXPECT_GT(constrained, 5);
}

TEST(BetaStep, CollinearBasisIsReported) {
    std::mt19937_64 rng(10);
    auto data = toy_data(rng, 3, 1);
    data.grid = StrainGrid{VectorXd::Ones(1)};  // log(1) = 0 column
    const FitProblem prob(data, KernelFamily::sped, 1e-8);
    const auto s = random_state(rng, prob);
    try {
        beta_step(prob, s);
        FAIL() << "expected SingularMatrix";
    } catch (const SingularMatrix& e) {
        EXPECT_NE(std::string(e.what()).find("1"), std::string::npos);
    }
}

TEST(ThetaStep, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 20; ++t) {
        const auto data = toy_data(rng, 6, 3, t % 2 ? 5 : 7);
        const FitProblem prob(data, KernelFamily::sped, 1e-8);
        const auto s = random_state(rng, prob);
        const ThetaObjective obj(prob, s, uniform(rng, 0.0, 2.0));
        VectorXd g;
        double gd = 0.0;
        obj.evaluate(s.theta, s.theta_d, &g, &gd);
        const double h = 1e-5;
        for (Index k = 0; k < s.theta.size(); ++k) {
            VectorXd tp = s.theta, tm = s.theta;
            tp[k] += h;
            tm[k] -= h;
            const double fd = (obj.evaluate(tp, s.theta_d, nullptr, nullptr) - obj.evaluate(tm, s.theta_d, nullptr, nullptr)) / (2 * h);
            EXPECT_LT(std::abs(g[k] - fd) / std::max(1.0, std::abs(fd)), 1e-5) << "k=" << k;
        }
        const double fdd = (obj.evaluate(s.theta, s.theta_d + h, nullptr, nullptr) -
                            obj.evaluate(s.theta, s.theta_d - h, nullptr, nullptr)) / (2 * h);
        EXPECT_LT(std::abs(gd - fdd) / std::max(1.0, std::abs(fdd)), 1e-5);
    }
}

TEST(ThetaStep, HugePenaltyShrinksAllFrequencies) {
    std::mt19937_64 rng(12);
    const auto data = toy_data(rng, 6, 3);
    const FitProblem prob(data, KernelFamily::sped, 1e-8);
    const auto s = random_state(rng, prob);
    const auto res = theta_step(prob, s, 1e8);
    EXPECT_EQ(res.theta, VectorXd::Zero(3));
}

TEST(ThetaStep, DoesNotIncreaseTheObjective) {
    std::mt19937_64 rng(13);
    for (int t = 0; t < 10; ++t) {
        const auto data = toy_data(rng, 8, 3, 7);
        const FitProblem prob(data, KernelFamily::sped, 1e-8);
        const auto s = random_state(rng, prob);
        const double li = uniform(rng, 0, 1);
        const auto res = theta_step(prob, s, li);
        ModelState after = s;
        after.theta = res.theta;
        after.theta_d = res.theta_d;
        EXPECT_LE(neg_log_posterior(prob, after, li, 0.1), neg_log_posterior(prob, s, li, 0.1) + 1e-10);
    }
}

TEST(ThetaStep, OneFrequencyToyMatchesGridSearch) {
    // p = 3, three zero-mean curves: the DC modulus is zero for all, diameters equal,
    // so only theta_1 affects the objective.
    TrainingData data;
    const double xs[3][3] = {{1.0, -0.5, -0.5}, {0.2, 0.1, -0.3}, {0.9, -0.2, -0.7}};
    for (const auto& x : xs) {
        StructureDesign d;
        d.diameter = 1.0;
        d.curve.values = (VectorXd(3) << x[0], x[1], x[2]).finished();
        data.designs.push_back(d);
    }
    data.grid = small_grid(2);
    data.log_responses.resize(3, 2);
    data.log_responses << 0.10, 0.50, -0.20, 0.30, 0.05, 0.45;
    const FitProblem prob(data, KernelFamily::sped, 1e-8);
    ModelState s{(VectorXd(2) << 0.1, 0.05).finished(), (VectorXd(2) << 0.0, 1.0).finished(), 0.0,
                 MatrixXd::Identity(2, 2) * 20.0, MatrixXd::Identity(2, 2) / 20.0};
    const double li = 0.05;
    const ThetaObjective obj(prob, s, li);
    double best = std::numeric_limits<double>::infinity(), best_t = -1.0;
    const double step = 1e-3;
    for (double t1 = 0.0; t1 <= 10.0 + 1e-12; t1 += step) {
        const double f = obj.evaluate((VectorXd(2) << 0.0, t1).finished(), 0.0, nullptr, nullptr);
        if (f < best) {
            best = f;
            best_t = t1;
        }
    }
    ASSERT_GT(best_t, 0.0);
    ASSERT_LT(best_t, 10.0);
    ThetaOptConfig cfg;
    cfg.grad_tol = 1e-10;
    cfg.max_iter = 500;
    const auto res = theta_step(prob, s, li, cfg);
    EXPECT_NEAR(res.theta[1], best_t, step);
    EXPECT_LE(obj.evaluate(res.theta, res.theta_d, nullptr, nullptr), best + 1e-9);
}

TEST(Fit, EveryRestartDescends) {
    std::mt19937_64 rng(14);
    auto data = toy_data(rng, 12, 4, 9);
    FitConfig cfg;
    cfg.restarts = 3;
    cfg.lambda_I = 0.1;
    const auto res = fit(data, cfg);
    ASSERT_EQ(res.trace.runs.size(), 3u);
    for (const auto& run : res.trace.runs) {
        ASSERT_FALSE(run.failed) << run.error;
        for (std::size_t k = 1; k < run.objectives.size(); ++k)
            EXPECT_LE(run.objectives[k], run.objectives[k - 1] + 1e-9 * std::abs(run.objectives[k - 1]));
        EXPECT_LE(run.objectives.back(), run.objectives.front());
    }
    const auto& best = res.trace.runs[std::size_t(res.trace.best_run)];
    for (const auto& run : res.trace.runs) EXPECT_LE(best.objectives.back(), run.objectives.back());
    EXPECT_EQ(res.model.metadata().objective, best.objectives.back());
    EXPECT_GT(res.model.beta()[1], 0.0);
}

TEST(Fit, AllRestartsFailingRaisesFitError) {
    std::mt19937_64 rng(15);
    auto data = toy_data(rng, 4, 2);
    data.designs[2] = data.designs[0];
    data.designs[2].curve = cyclic_shift(data.designs[0].curve, 2);
    FitConfig cfg;
    cfg.nugget = 0.0;
    cfg.restarts = 2;
    EXPECT_THROW(fit(data, cfg), FitError);
}

TEST(Fit, ValidatesConfigAndData) {
    std::mt19937_64 rng(16);
    const auto data = toy_data(rng, 4, 2);
    FitConfig cfg;
    cfg.lambda_I = -1.0;
    EXPECT_THROW(fit(data, cfg), InvalidInput);
    cfg = FitConfig{};
    cfg.sweep_tol = 0.0;
    EXPECT_THROW(fit(data, cfg), InvalidInput);
    auto one = data;
    one.designs.resize(1);
    one.log_responses.conservativeResize(1, 2);
    EXPECT_THROW(fit(one, FitConfig{}), InvalidInput);
}

TEST(Fit, RecoversSparsityPatternOfGeneratingModel) {
    // draw Y from the model itself with theta* nonzero on three of eleven frequencies
    std::mt19937_64 rng(17);
    const Index n = 60, m = 3, p = 21;
    TrainingData data;
    data.designs = random_designs(rng, n, p, 0.3);
    data.grid = small_grid(m);
    VectorXd theta_star = VectorXd::Zero(11);
    theta_star[2] = 0.8;
    theta_star[3] = 0.5;
    theta_star[5] = 0.6;
    const double td_star = 0.5;
    const MatrixXd R = brute_R(data.designs, theta_star, td_star, 1e-8);
    MatrixXd Sigma(m, m);
    Sigma << 0.04, 0.02, 0.01, 0.02, 0.04, 0.02, 0.01, 0.02, 0.04;
    const MatrixXd LR = Eigen::LLT<MatrixXd>(R).matrixL(), LS = Eigen::LLT<MatrixXd>(Sigma).matrixL();
    MatrixXd Z(n, m);
    std::normal_distribution<double> z;
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < m; ++j) Z(i, j) = z(rng);
    const VectorXd mu = mean_basis(data.grid) * (VectorXd(2) << 1.0, 0.5).finished();
    data.log_responses = (LR * Z * LS.transpose()).rowwise() + mu.transpose();

    FitConfig cfg;
    cfg.lambda_I = 2.0;
    cfg.lambda_o = 0.01;
    cfg.restarts = 3;
    const auto res = fit(data, cfg);
    const auto& th = res.model.params().theta;
    int agree = 0;
    for (Index k = 0; k < 11; ++k) agree += (th[k] > 0.0) == (theta_star[k] > 0.0);
    EXPECT_GE(agree, 10) << th.transpose();
}

TEST(SelectPenalties, SinglePointAndDuplicates) {
    std::mt19937_64 rng(18);
    auto data = toy_data(rng, 10, 3, 5);
    const MatrixXd P = mean_basis(data.grid);
    for (Index i = 0; i < 10; ++i) data.log_responses.row(i) += 2.0 * P.col(1).transpose();
    FitConfig base;
    base.restarts = 1;
    const auto one = select_penalties(data, {0.3}, {0.2}, 2, base);
    EXPECT_EQ(one.lambda_I, 0.3);
    EXPECT_EQ(one.lambda_o, 0.2);
    const auto a = select_penalties(data, {0.0, 1.0, 0.0, 1.0}, {0.1, 0.1}, 2, base);
    const auto b = select_penalties(data, {1.0, 0.0}, {0.1}, 2, base);
    EXPECT_EQ(a.lambda_I, b.lambda_I);
    EXPECT_EQ(a.lambda_o, b.lambda_o);
    EXPECT_EQ(a.score, b.score);
    EXPECT_EQ(a.table.size(), 2u);
}

TEST(SelectPenalties, RejectsDegenerateFolds) {
    std::mt19937_64 rng(19);
    const auto data = toy_data(rng, 5, 2);
    EXPECT_THROW(select_penalties(data, {0.0}, {0.1}, 1, FitConfig{}), InvalidInput);
    EXPECT_THROW(select_penalties(data, {0.0}, {0.1}, 3, FitConfig{}), InvalidInput);
    EXPECT_THROW(select_penalties(data, {}, {0.1}, 2, FitConfig{}), InvalidInput);
}

TEST(SelectPenalties, FoldsAreBalancedAndSeeded) {
    const auto a = detail::fold_labels(23, 5, 9), b = detail::fold_labels(23, 5, 9), c = detail::fold_labels(23, 5, 10);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    std::vector<int> counts(5, 0);
    for (int l : a) ++counts[std::size_t(l)];
    for (int cnt : counts) EXPECT_TRUE(cnt == 4 || cnt == 5);
}
