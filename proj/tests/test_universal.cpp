#include <gtest/gtest.h>

#include <cmath>

#include "rcuniv/universal.hpp"

using namespace rcuniv;

namespace {

SasParams scalar_sas(double p1, double q1) {
    SasParams s;
    s.input_dim = 1;
    s.state_dim = 1;
    s.p_coeffs[{1}] = Eigen::MatrixXd::Constant(1, 1, p1);
    s.q_coeffs[{1}] = Eigen::VectorXd::Constant(1, q1);
    s.W1 = Eigen::MatrixXd::Identity(1, 1);
    return s;
}

}  // namespace

TEST(ErrorBudget, Examples) {
    // eps2 = min{0.1 * 0.5 / 4, (L - L1) / 2} with the first branch binding
    auto b = make_error_budget(0.1, 0.5, 2.0, 0.8, 2.0);
    EXPECT_DOUBLE_EQ(b.eps1, 0.05);
    EXPECT_DOUBLE_EQ(b.eps2, 0.0125);

    EXPECT_THROW(make_error_budget(0.1, 0.9, 2.0, 0.8, 1.0), std::invalid_argument);  // K >= L/(L+1)
    EXPECT_THROW(make_error_budget(0.1, 0.5, 1.0, 0.8, 2.0), std::invalid_argument);  // K = L/(L+1)
    EXPECT_THROW(make_error_budget(0.1, 0.5, 2.0, 2.5, 1.0), std::invalid_argument);  // L1 >= L
    EXPECT_THROW(make_error_budget(-0.1, 0.5, 2.0, 0.8, 1.0), std::invalid_argument);

    // enormous ||W1||_2 forces the first branch of the min
    auto big = make_error_budget(0.1, 0.5, 2.0, 0.8, 1e6);
    EXPECT_DOUBLE_EQ(big.eps2, 0.1 * 0.5 / (2.0 * 1e6));
}

TEST(ErrorBudget, DefiningIdentitiesHoldExactly) {
    for (double eps : {0.01, 0.2, 1.5}) {
        for (double K : {0.1, 0.4, 0.6}) {
            const double L = 2.0, L1 = 0.8, W1n = 1.7;
            auto b = make_error_budget(eps, K, L, L1, W1n);
            EXPECT_EQ(b.eps1, eps / 2.0);
            EXPECT_EQ(b.eps2, std::min(eps * (1.0 - K) / (2.0 * W1n), (L - L1) / 2.0));
            EXPECT_LT(b.K, b.L / (b.L + 1.0));
            EXPECT_LT(b.L1, b.L);
        }
    }
    // doubling eps doubles eps2 unless the (L-L1)/2 branch binds
    auto a = make_error_budget(0.1, 0.5, 2.0, 1.9, 1.0);
    auto d = make_error_budget(0.2, 0.5, 2.0, 1.9, 1.0);
    EXPECT_DOUBLE_EQ(d.eps2, 2.0 * a.eps2);
    auto clamped = make_error_budget(10.0, 0.5, 2.0, 1.9, 1.0);
    EXPECT_DOUBLE_EQ(clamped.eps2, (2.0 - 1.9) / 2.0);
}

TEST(FitNnReservoir, ConstantTarget) {
    Eigen::VectorXd c(2);
    c << 0.3, -0.4;
    auto target = [c](const Eigen::VectorXd&, const Eigen::VectorXd&) { return c; };
    FitConfig cfg;
    cfg.width_schedule = {8, 32, 128};
    cfg.seed = 5;
    auto fit = fit_nn_reservoir(target, 2, 1, 1.0, 1.0, 0.01, cfg);
    EXPECT_TRUE(fit.success);
    EXPECT_LE(fit.achieved, 0.01);
}

TEST(FitNnReservoir, TargetInFeatureSpanRecoversExactly) {
    // the target is itself E0 sigma(G0 x + C0 z + zeta0); refitting on the
    // same features must reproduce it to solver precision
    Rng rng(9);
    const Eigen::Index width = 16, N1 = 2, n = 1;
    NnReservoirParams nn0;
    nn0.G = rng.uniform_matrix(width, N1, -1.0, 1.0);
    nn0.C = rng.uniform_matrix(width, n, -1.0, 1.0);
    nn0.zeta = rng.uniform_vector(width, -0.5, 0.5);
    nn0.E = 0.1 * rng.uniform_matrix(N1, width, -1.0, 1.0);
    nn0.activation = Activation(Activation::Kind::tanh);

    std::vector<Eigen::VectorXd> xs, zs;
    for (int i = 0; i < 400; ++i) {
        xs.push_back(rng.ball(N1, 1.0));
        zs.push_back(rng.ball(n, 1.0));
    }
    Eigen::MatrixXd features(width, 400), targets(N1, 400);
    for (int i = 0; i < 400; ++i) {
        features.col(i) = nn0.activation.apply(nn0.G * xs[i] + nn0.C * zs[i] + nn0.zeta);
        targets.col(i) = nn0.E * features.col(i);
    }
    auto [E, residual] = solve_output_weights(features, targets, 0.0);
    EXPECT_LE(residual, 1e-10);
    EXPECT_LE((E - nn0.E).norm(), 1e-8);
}

TEST(FitNnReservoir, ScalarSasMapWithinBudget) {
    // F_SAS(x,z) = 0.3 z x + 0.2 z on the L=1, M=0.9 ball product
    auto target = [](const Eigen::VectorXd& x, const Eigen::VectorXd& z) -> Eigen::VectorXd {
        return Eigen::VectorXd::Constant(1, 0.3 * z[0] * x[0] + 0.2 * z[0]);
    };
    FitConfig cfg;
    cfg.seed = 11;
    auto fit = fit_nn_reservoir(target, 1, 1, 1.0, 0.9, 0.01, cfg);
    EXPECT_TRUE(fit.success);
    EXPECT_LE(fit.achieved, 0.01);
    EXPECT_LE(fit.holdout_residual, 0.01);
}

TEST(FitNnReservoir, ScheduleExhaustionReturnsBestWithFailureFlag) {
    auto target = [](const Eigen::VectorXd& x, const Eigen::VectorXd& z) -> Eigen::VectorXd {
        return Eigen::VectorXd::Constant(1, std::sin(7.0 * x[0]) * std::cos(9.0 * z[0]));
    };
    FitConfig cfg;
    cfg.width_schedule = {2};
    cfg.seed = 13;
    auto fit = fit_nn_reservoir(target, 1, 1, 1.0, 1.0, 1e-6, cfg);
    EXPECT_FALSE(fit.success);
    EXPECT_GT(fit.achieved, 1e-6);
}

TEST(AssembleEsn, IdentityAssembly) {
    const Eigen::Index N = 3;
    NnReservoirParams nn;
    nn.E = Eigen::MatrixXd::Identity(N, N);
    nn.G = Eigen::MatrixXd::Identity(N, N);
    nn.C = Eigen::MatrixXd::Ones(N, 1);
    nn.zeta = Eigen::VectorXd::Zero(N);
    Eigen::MatrixXd W1(1, N);
    W1 << 1, 2, 3;
    auto out = assemble_esn(nn, W1);
    EXPECT_TRUE(out.esn.A == Eigen::MatrixXd::Identity(N, N));
    EXPECT_TRUE(out.esn.W == W1);

    Eigen::MatrixXd bad(1, N + 1);
    EXPECT_THROW(assemble_esn(nn, bad), std::invalid_argument);
}

TEST(AssembleEsn, ReadoutInvarianceIsAssociativity) {
    Rng rng(15);
    NnReservoirParams nn;
    nn.E = rng.uniform_matrix(2, 8, -0.5, 0.5);
    nn.G = rng.uniform_matrix(8, 2, -1.0, 1.0);
    nn.C = rng.uniform_matrix(8, 1, -1.0, 1.0);
    nn.zeta = rng.uniform_vector(8, -0.5, 0.5);
    Eigen::MatrixXd W1 = rng.uniform_matrix(1, 2, -1.0, 1.0);
    auto out = assemble_esn(nn, W1);
    for (int i = 0; i < 100; ++i) {
        Eigen::VectorXd x = rng.uniform_vector(8, -1.0, 1.0);
        EXPECT_LE((out.esn.W * x - W1 * (nn.E * x)).norm(), 1e-13);
    }
}

TEST(SasToEsn, MemorylessCaseAndChainBound) {
    // p == 0: the SAS filter reduces to the closed form U(z)_t = W1 q(z_t)
    SasParams sas;
    sas.input_dim = 1;
    sas.state_dim = 1;
    sas.q_coeffs[{1}] = Eigen::VectorXd::Constant(1, 0.2);
    sas.W1 = Eigen::MatrixXd::Identity(1, 1);
    const double K = 0.5, L = 2.0;
    auto cert = sas_certificate(sas, K, L);
    ASSERT_TRUE(cert.cert.has_value()) << cert.failure;

    auto budget = make_error_budget(0.2, K, L, 0.2 + 1e-6, 1.0);
    FitConfig fcfg;
    fcfg.seed = 21;
    ChainVerifyConfig vcfg;
    vcfg.z_samples = 30;
    vcfg.window = 64;
    auto chain = sas_to_esn(sas, cert, budget, fcfg, vcfg);
    ASSERT_TRUE(chain.fit.success);
    EXPECT_TRUE(chain.verified);
    EXPECT_LE(chain.morphism_residual, 1e-12);
    EXPECT_LE(chain.measured, chain.chain_bound + vcfg.compare_tol);
    EXPECT_TRUE(chain.ball_preserved);

    // against the closed form: ESN outputs track 0.2 z_t within the chain bound
    auto esn_sys = esn_system(chain.esn, 1.0 - 1e-9, "check");
    auto zs = sample_KM(1, 1.0 - 1e-9, 64, 10, 23);
    const long washout = washout_length(K, L, vcfg.washout_tol);
    for (const auto& z : zs) {
        auto run = run_washout(esn_sys, z, washout);
        for (long t = run.clean_from; t <= 0; ++t)
            EXPECT_LE(std::abs(run.outputs.at(t)[0] - 0.2 * z.at(t)[0]),
                      chain.chain_bound + 1e-6);
    }
}

TEST(SasToEsn, StageToEndChainAndBallPreservation) {
    SasParams sas = scalar_sas(0.3, 0.2);
    const double K = 0.6, L = 2.0;
    auto cert = sas_certificate(sas, K, L);
    ASSERT_TRUE(cert.cert.has_value());
    auto f_sas = [&sas](const Eigen::VectorXd& x, const Eigen::VectorXd& z) -> Eigen::VectorXd {
        return sas_p(sas, z) * x + sas_q(sas, z);
    };
    const double L1 = sampled_map_sup(f_sas, 1, 1, L, 1.0 - 1e-9, 5000, 25);
    EXPECT_LT(L1, L);
    auto budget = make_error_budget(0.2, K, L, L1, 1.0);
    FitConfig fcfg;
    fcfg.seed = 27;
    ChainVerifyConfig vcfg;
    vcfg.z_samples = 30;
    vcfg.window = 96;
    auto chain = sas_to_esn(sas, cert, budget, fcfg, vcfg);
    ASSERT_TRUE(chain.fit.success);
    const double rho = chain.fit.achieved;
    EXPECT_LE(chain.measured,
              spectral_norm(sas.W1) * rho / (1.0 - K) + 2.0 * vcfg.compare_tol);
    EXPECT_TRUE(chain.ball_preserved);
    EXPECT_TRUE(chain.verified);

    // F_NN ball preservation: rho < L - L1 keeps the sampled sup inside L
    NnReservoirParams nn = chain.nn;
    ASSERT_LT(rho, L - L1);
    double nn_sup = sampled_map_sup(
        [&nn](const Eigen::VectorXd& x, const Eigen::VectorXd& z) { return nn(x, z); }, 1, 1, L,
        1.0 - 1e-9, 5000, 29);
    EXPECT_LT(nn_sup, L);
}

TEST(TrainReadout, Examples) {
    auto esn = random_esn(6, 1, 1, 0.5, Activation(Activation::Kind::tanh), 33);
    // d = N: teacher equals the state trajectory itself
    ReservoirSystem sys(
        [esn](const Eigen::VectorXd& x, const Eigen::VectorXd& z) { return esn_step(esn, x, z); },
        [](const Eigen::VectorXd& x) { return x; }, 6, 1, 6, std::sqrt(6.0), 1.0, "states_out");
    auto cert = esn_esp_certificate(esn);
    ASSERT_TRUE(cert.has_value());
    const long washout = washout_length(cert->r, std::sqrt(6.0), 1e-9);
    auto inputs = sample_KM(1, 1.0, washout + 40, 4, 35);
    std::vector<BoundedSignal> teachers;
    for (const auto& z : inputs) teachers.push_back(run_filter(sys, *cert, z, 1e-9).states);
    Eigen::MatrixXd W = train_readout(sys, *cert, inputs, teachers, 0.0, washout);
    EXPECT_LE((W - Eigen::MatrixXd::Identity(6, 6)).norm(), 1e-8);

    // scalar teacher y_t = 3 * x_t[0]
    std::vector<BoundedSignal> scalar_teachers;
    for (const auto& z : inputs) {
        auto run = run_filter(sys, *cert, z, 1e-9);
        scalar_teachers.emplace_back(3.0 * run.states.window().row(0), 10.0, Padding::zero);
    }
    Eigen::MatrixXd W3 = train_readout(sys, *cert, inputs, scalar_teachers, 0.0, washout);
    Eigen::VectorXd expected = Eigen::VectorXd::Zero(6);
    expected[0] = 3.0;
    EXPECT_LE((W3.transpose() - expected).norm(), 1e-8);

    // huge ridge shrinks the readout to zero
    Eigen::MatrixXd W0 = train_readout(sys, *cert, inputs, scalar_teachers, 1e12, washout);
    EXPECT_LE(W0.norm(), 1e-6);

    EXPECT_THROW(train_readout(sys, *cert, inputs, scalar_teachers, 0.0, washout - 1),
                 std::invalid_argument);
}

TEST(TrainReadout, RankDeficientStatesWithoutRidgeAreRejected) {
    // A = C = 0, zeta = 0 pins every state at zero, so lambda = 0 cannot work
    EsnParams p;
    p.A = Eigen::MatrixXd::Zero(3, 3);
    p.C = Eigen::MatrixXd::Zero(3, 1);
    p.zeta = Eigen::VectorXd::Zero(3);
    p.W = Eigen::MatrixXd::Zero(1, 3);
    auto cert = esn_esp_certificate(p);
    ASSERT_TRUE(cert.has_value());
    auto sys = esn_system(p, 1.0);
    auto inputs = sample_KM(1, 1.0, 10, 2, 81);
    std::vector<BoundedSignal> teachers;
    for (const auto& z : inputs)
        teachers.emplace_back(Eigen::MatrixXd::Ones(1, z.length()), 1.0, Padding::zero);
    try {
        train_readout(sys, *cert, inputs, teachers, 0.0, 1);
        FAIL() << "expected a rank-deficiency error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("lambda > 0"), std::string::npos);
    }
    // the suggested remedy works
    Eigen::MatrixXd W = train_readout(sys, *cert, inputs, teachers, 1e-6, 1);
    EXPECT_TRUE(W.allFinite());
}

TEST(TrainReadout, DeterministicAndPermutationInvariant) {
    auto esn = random_esn(5, 1, 1, 0.4, Activation(Activation::Kind::tanh), 43);
    auto cert = esn_esp_certificate(esn);
    auto sys = esn_system(esn, 1.0);
    const long washout = washout_length(cert->r, sys.state_bound(), 1e-9);
    auto inputs = sample_KM(1, 1.0, washout + 30, 5, 45);
    std::vector<BoundedSignal> teachers;
    for (const auto& z : inputs) {
        Eigen::MatrixXd row = z.window().row(0);
        teachers.emplace_back(row, 1.0, Padding::zero);
    }
    Eigen::MatrixXd W1 = train_readout(sys, *cert, inputs, teachers, 1e-6, washout);
    Eigen::MatrixXd W2 = train_readout(sys, *cert, inputs, teachers, 1e-6, washout);
    EXPECT_TRUE(W1 == W2);  // bitwise determinism

    std::vector<BoundedSignal> perm_inputs{inputs[3], inputs[0], inputs[4], inputs[1], inputs[2]};
    std::vector<BoundedSignal> perm_teachers{teachers[3], teachers[0], teachers[4], teachers[1],
                                             teachers[2]};
    Eigen::MatrixXd W3 = train_readout(sys, *cert, perm_inputs, perm_teachers, 1e-6, washout);
    EXPECT_LE((W1 - W3).norm(), 1e-9 * std::max(1.0, W1.norm()));
}

TEST(NarmaTarget, ZeroInputFixedPoint) {
    // with u == 0 the recursion converges to the positive root of
    // 0.5 y^2 - 0.7 y + 0.1 = 0 below 1, i.e. 0.7 - sqrt(0.29)
    std::vector<double> u(400, 0.0);
    auto y = narma_sequence(u, 10);
    const double root = 0.7 - std::sqrt(0.29);
    EXPECT_NEAR(y.back(), root, 1e-10);
}

TEST(NarmaTarget, FunctionalUsesTheRecordedInputMap) {
    auto target = narma_target(10, 1.0);
    EXPECT_EQ(target.kind, "narma");
    // constant input z = -M maps to u = 0, reproducing the zero-input run
    Eigen::MatrixXd w = Eigen::MatrixXd::Constant(1, 300, -1.0);
    BoundedSignal z(w, 1.0);
    const double root = 0.7 - std::sqrt(0.29);
    EXPECT_NEAR(target.functional(z)[0], root, 1e-8);
    // outputs always stay in the clamp range
    for (const auto& s : sample_KM(1, 1.0, 60, 10, 47)) {
        double v = target.functional(s)[0];
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(VolterraTarget, DegreeOneIsConvolution) {
    std::vector<VolterraTerm> terms{{0.5, {0}}, {0.25, {1}}, {0.125, {2}}};
    auto target = volterra_target(terms, 1.0);
    auto fir = fir_functional(SignalSpec{1, 1.0}, {0.5, 0.25, 0.125});
    for (const auto& z : sample_KM(1, 1.0, 16, 20, 49))
        EXPECT_NEAR(target.functional(z)[0], fir(z)[0], 1e-14);
}

TEST(VolterraTarget, SingleKernelMatchesNarmaCrossTerm) {
    // kernel 1.5 z_{t-1} z_{t-10} is the NARMA-10 cross term on a frozen history
    std::vector<VolterraTerm> terms{{1.5, {1, 10}}};
    auto target = volterra_target(terms, 1.0);
    auto z = sample_KM(1, 1.0, 16, 1, 51)[0];
    double expected = 1.5 * z.at(-1)[0] * z.at(-10)[0];
    EXPECT_NEAR(target.functional(z)[0], expected, 1e-14);

    EXPECT_THROW(volterra_target({{1.0, {-2}}}, 1.0), std::invalid_argument);
}

TEST(EndToEnd, RealizableTargetIsRecoveredToSolverPrecision) {
    // teacher produced by the very reservoir the practical pipeline will draw
    const std::uint64_t seed = 61;
    PracticalConfig cfg;
    cfg.reservoir_size = 10;
    cfg.rho = 0.5;
    cfg.window = 70;
    cfg.train_signals = 12;
    cfg.test_signals = 6;
    cfg.ridge = 0.0;
    cfg.seed = seed;

    auto teacher_esn = random_esn(10, 1, 1, 0.5, Activation(Activation::Kind::tanh),
                                  substream_seed(seed, "reservoir"));
    Rng rng(63);
    teacher_esn.W = rng.uniform_matrix(1, 10, -1.0, 1.0);
    auto cert = esn_esp_certificate(teacher_esn);
    ASSERT_TRUE(cert.has_value());
    auto teacher_sys = esn_system(teacher_esn, 1.0, "teacher");
    Filter teacher_filter = reservoir_filter(teacher_sys, *cert, cfg.washout_tol);
    TargetFilter target{functional_from_filter(teacher_filter), teacher_filter, "esn_teacher",
                        {}};

    auto [esn, report] = practical_pipeline(target, cfg);
    EXPECT_LE(report.test_error, 1e-8);
    EXPECT_LE((esn.W - teacher_esn.W).norm(), 1e-6);
}

TEST(EndToEnd, IdentityFunctionalUnderFiftyMilli) {
    TargetFilter target{fir_functional(SignalSpec{1, 1.0}, {1.0}),
                        filter_from_functional(fir_functional(SignalSpec{1, 1.0}, {1.0})),
                        "identity", {}};
    PracticalConfig cfg;
    cfg.reservoir_size = 20;
    cfg.rho = 0.5;
    cfg.window = 70;
    cfg.train_signals = 20;
    cfg.test_signals = 10;
    cfg.ridge = 1e-10;
    cfg.seed = 65;
    auto [esn, report] = practical_pipeline(target, cfg);
    EXPECT_LE(report.test_error, 0.05);
}

TEST(ConstructivePipeline, MemorylessSasAgainstItsClosedFormTarget) {
    SasParams sas;
    sas.input_dim = 1;
    sas.state_dim = 1;
    sas.q_coeffs[{1}] = Eigen::VectorXd::Constant(1, 0.2);
    sas.W1 = Eigen::MatrixXd::Identity(1, 1);

    // the closed form U(z)_t = 0.2 z_t as a Volterra kernel
    auto target = volterra_target({{0.2, {0}}}, 1.0);
    ConstructiveConfig cfg;
    cfg.eps = 0.2;
    cfg.K = 0.5;
    cfg.L = 2.0;
    cfg.fit.seed = 67;
    cfg.verify.z_samples = 20;
    cfg.verify.window = 64;
    cfg.seed = 69;
    auto [esn, report] = constructive_pipeline(sas, target, cfg);
    EXPECT_EQ(report.pipeline, "constructive");
    EXPECT_LE(report.train_error, 1e-9);  // measured eps1: SAS equals the target
    EXPECT_LE(report.test_error, cfg.eps);
}

TEST(ConstructivePipeline, FittedSasReadoutWhenNoModelIsSupplied) {
    // no user SAS: a random certified SAS reservoir gets its readout trained
    // against the target, then goes through the usual chain
    auto target = volterra_target({{0.2, {0}}, {0.1, {1}}}, 1.0);
    EndToEndConfig cfg;
    cfg.pipeline = Pipeline::constructive;
    cfg.constructive.eps = 1.0;
    cfg.constructive.K = 0.6;
    cfg.constructive.L = 2.0;
    cfg.constructive.fit.seed = 73;
    cfg.constructive.verify.z_samples = 15;
    cfg.constructive.verify.window = 96;
    cfg.constructive.seed = 75;
    SasFitConfig sf;
    sf.state_dim = 2;
    sf.degree = 2;
    sf.coeff_bound = 0.45;
    sf.train_signals = 20;
    cfg.sas_fit = sf;
    auto [esn, report] = end_to_end_approximate(target, cfg);
    EXPECT_EQ(report.pipeline, "constructive");
    // the readout-trained SAS tracks this short-memory target closely, and
    // the chain keeps the assembled ESN near the SAS
    EXPECT_LE(report.train_error, 0.15);
    EXPECT_LE(report.test_error, report.train_error + 0.1);
    EXPECT_TRUE(report.stages["chain"]["verified"].get<bool>());
}

TEST(EndToEndApproximate, DispatchesOnThePipelineTag) {
    auto target = user_target(fir_functional(SignalSpec{1, 1.0}, {1.0}));
    EXPECT_EQ(target.kind, "user");

    EndToEndConfig cfg;
    cfg.pipeline = Pipeline::practical;
    cfg.practical.reservoir_size = 12;
    cfg.practical.window = 70;
    cfg.practical.train_signals = 10;
    cfg.practical.test_signals = 5;
    cfg.practical.seed = 71;
    auto [esn, report] = end_to_end_approximate(target, cfg);
    EXPECT_EQ(report.pipeline, "practical");
    EXPECT_EQ(esn.state_dim(), 12);

    EndToEndConfig bad;
    bad.pipeline = Pipeline::constructive;
    EXPECT_THROW(end_to_end_approximate(target, bad), std::invalid_argument);
}
