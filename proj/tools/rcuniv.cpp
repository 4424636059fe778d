// rcuniv: command-line front end for certification, bound verification,
// approximation pipelines and reservoir runs.
//
// Exit codes: 0 success/pass, 1 usage-or-input error, 2 certificate/verdict
// negative, 3 pipeline stage failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "rcuniv/csv.hpp"
#include "rcuniv/models.hpp"
#include "rcuniv/reservoir.hpp"
#include "rcuniv/universal.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rcuniv;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitVerdictNegative = 2;
constexpr int kExitStageFailure = 3;

struct GlobalOptions {
    std::string config_path;
    std::string out_dir = "rcuniv_out";
    std::uint64_t seed = 1;
    double compare_tol = 1e-6;
    double washout_tol = 1e-9;
    bool seed_set = false;
    bool compare_tol_set = false;
    bool washout_tol_set = false;
};

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    return json::parse(in);
}

/// Flags override file values; the merged result is what every stage reads
/// and what gets persisted.
json merge_effective_config(const json& file_cfg, const GlobalOptions& opts) {
    json cfg = file_cfg;
    if (!cfg.contains("seeds")) cfg["seeds"] = json::object();
    if (opts.seed_set || !cfg["seeds"].contains("root")) cfg["seeds"]["root"] = opts.seed;
    if (!cfg.contains("tolerances")) cfg["tolerances"] = json::object();
    if (opts.compare_tol_set || !cfg["tolerances"].contains("compare"))
        cfg["tolerances"]["compare"] = opts.compare_tol;
    if (opts.washout_tol_set || !cfg["tolerances"].contains("washout"))
        cfg["tolerances"]["washout"] = opts.washout_tol;
    return cfg;
}

void persist_outputs(const fs::path& out_dir, const json& effective_config, const json& report,
                     const std::string& note = "") {
    fs::create_directories(out_dir);
    write_file_atomic(out_dir / "effective_config.json", effective_config.dump(2) + "\n");
    write_file_atomic(out_dir / "report.json", report.dump(2) + "\n");
    json meta;
    auto now = std::chrono::system_clock::now().time_since_epoch();
    meta["written_unix_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    if (!note.empty()) meta["note"] = note;
    write_file_atomic(out_dir / "meta.json", meta.dump(2) + "\n");
}

ReservoirSystem system_from_esn(const EsnParams& p, double input_bound, const std::string& label) {
    return esn_system(p, input_bound, label);
}

int cmd_certify(const std::string& model_path, std::optional<double> K, std::optional<double> L,
                const GlobalOptions& opts, const json& file_cfg) {
    LoadedModel model = load_model(model_path);
    json cfg = merge_effective_config(file_cfg, opts);
    json report;
    report["model"] = model_path;
    report["kind"] = model.kind;
    int exit_code = kExitOk;
    if (model.kind == "esn") {
        const EsnParams& p = *model.esn;
        double product = spectral_norm(p.A) * p.activation.lipschitz();
        report["spectral_norm_A_times_L_sigma"] = product;
        auto cert = esn_esp_certificate(p);
        if (cert) {
            report["certified"] = true;
            report["r"] = cert->r;
            std::cout << "certified: r = " << format_double(cert->r) << "\n";
        } else {
            report["certified"] = false;
            std::cout << "not certified: spectral_norm(A) * L_sigma = " << format_double(product)
                      << " >= 1\n";
            exit_code = kExitVerdictNegative;
        }
    } else {
        if (!K || !L)
            throw std::runtime_error("SAS certification requires --K and --L");
        SasCertConfig scfg;
        scfg.seed = substream_seed(cfg["seeds"]["root"].get<std::uint64_t>(), "certify");
        SasCertification cert = sas_certificate(*model.sas, *K, *L, scfg);
        report["sas"] = cert;
        if (cert.cert) {
            std::cout << "certified: r = " << format_double(cert.cert->r)
                      << ", state bound K*L + K = " << format_double(cert.state_bound) << "\n";
        } else {
            std::cout << "not certified: " << cert.failure << "\n";
            exit_code = kExitVerdictNegative;
        }
    }
    persist_outputs(opts.out_dir, cfg, report);
    return exit_code;
}

int cmd_verify_bound(const GlobalOptions& opts, const json& file_cfg) {
    json cfg = merge_effective_config(file_cfg, opts);
    if (!cfg.contains("model1")) throw std::runtime_error("verify-bound config needs \"model1\"");
    LoadedModel m1 = load_model(cfg.at("model1").get<std::string>());

    const double input_bound = cfg.value("input_bound", 1.0);
    const std::uint64_t root = cfg["seeds"]["root"].get<std::uint64_t>();

    InternalApproxConfig icfg;
    icfg.map_samples = cfg.value("map_samples", 4000L);
    icfg.z_samples = cfg.value("samples", 100L);
    icfg.window = cfg.value("window", 64L);
    icfg.washout_tol = cfg["tolerances"]["washout"].get<double>();
    icfg.compare_tol = cfg["tolerances"]["compare"].get<double>();
    icfg.safety = cfg.value("safety", 1.5);
    icfg.seed = substream_seed(root, "verify_bound");
    if (cfg.contains("declared_upper") && !cfg["declared_upper"].is_null())
        icfg.declared_upper = cfg["declared_upper"].get<double>();

    if (m1.kind == "sas") {
        // SAS pair: both systems share the certificate's K and L
        if (!cfg.contains("model2"))
            throw std::runtime_error("verify-bound with a SAS model1 needs \"model2\"");
        if (!cfg.contains("sas"))
            throw std::runtime_error("verify-bound with SAS models needs \"sas\": {\"K\",\"L\"}");
        const double K = cfg["sas"].at("K").get<double>();
        const double L = cfg["sas"].at("L").get<double>();
        LoadedModel m2 = load_model(cfg.at("model2").get<std::string>());
        if (m2.kind != "sas") throw std::runtime_error("model2 must also be a SAS model");
        SasCertification cert = sas_certificate(*m1.sas, K, L);
        if (!cert.cert)
            throw std::runtime_error("model1 carries no certificate: " + cert.failure);
        ReservoirSystem s1 = sas_system(*m1.sas, L, "sas1");
        ReservoirSystem s2 = sas_system(*m2.sas, L, "sas2");
        InternalApproxReport result = internal_approx_check(s1, *cert.cert, s2, icfg);
        json report;
        report["internal_approx"] = result;
        report["r"] = cert.cert->r;
        persist_outputs(opts.out_dir, cfg, report);
        std::cout << "d_F = " << format_double(result.d_f) << ", bound = "
                  << format_double(result.bound) << ", measured = "
                  << format_double(result.measured) << ", pass = "
                  << (result.pass ? "true" : "false") << "\n";
        return result.pass ? kExitOk : kExitVerdictNegative;
    }

    const EsnParams& p1 = *m1.esn;
    auto cert = esn_esp_certificate(p1);
    if (!cert) throw std::runtime_error("model1 carries no contraction certificate");

    const double base_L = std::sqrt(static_cast<double>(p1.state_dim()));
    json report;
    InternalApproxReport result;
    if (cfg.contains("perturbation")) {
        const double eta = cfg["perturbation"].value("eta", 0.01);
        Rng rng(substream_seed(root, "perturbation"));
        Eigen::VectorXd offset = rng.sphere(p1.state_dim(), eta);
        EsnParams p = p1;
        const double L = base_L + eta;
        ReservoirSystem s1(
            [p](const Eigen::VectorXd& x, const Eigen::VectorXd& z) { return esn_step(p, x, z); },
            [p](const Eigen::VectorXd& x) -> Eigen::VectorXd { return p.W * x; }, p.state_dim(),
            p.input_dim(), p.output_dim(), L, input_bound, "esn");
        ReservoirSystem s2(
            [p, offset](const Eigen::VectorXd& x, const Eigen::VectorXd& z) -> Eigen::VectorXd {
                return esn_step(p, x, z) + offset;
            },
            [p](const Eigen::VectorXd& x) -> Eigen::VectorXd { return p.W * x; }, p.state_dim(),
            p.input_dim(), p.output_dim(), L, input_bound, "esn_perturbed");
        icfg.declared_upper = eta;  // exact: the perturbation is a constant offset
        result = internal_approx_check(s1, *cert, s2, icfg);
        report["perturbation_eta"] = eta;
    } else {
        if (!cfg.contains("model2"))
            throw std::runtime_error("verify-bound config needs \"model2\" or \"perturbation\"");
        LoadedModel m2 = load_model(cfg.at("model2").get<std::string>());
        if (m2.kind != "esn") throw std::runtime_error("model2 must be an ESN model file");
        const EsnParams& p2 = *m2.esn;
        if (p2.state_dim() != p1.state_dim() || p2.input_dim() != p1.input_dim())
            throw std::runtime_error("verify-bound: models must share state and input dimensions");
        ReservoirSystem s1 = system_from_esn(p1, input_bound, "esn1");
        ReservoirSystem s2 = system_from_esn(p2, input_bound, "esn2");
        result = internal_approx_check(s1, *cert, s2, icfg);
    }
    report["internal_approx"] = result;
    report["r"] = cert->r;
    persist_outputs(opts.out_dir, cfg, report);
    std::cout << "d_F = " << format_double(result.d_f) << ", bound = "
              << format_double(result.bound) << ", measured = " << format_double(result.measured)
              << ", pass = " << (result.pass ? "true" : "false") << "\n";
    return result.pass ? kExitOk : kExitVerdictNegative;
}

TargetFilter target_from_config(const json& cfg, double input_bound, double washout_tol) {
    const std::string kind = cfg.at("kind").get<std::string>();
    if (kind == "narma") return narma_target(cfg.value("order", 10), input_bound);
    if (kind == "volterra") {
        std::vector<VolterraTerm> terms;
        for (const auto& t : cfg.at("terms"))
            terms.push_back(VolterraTerm{t.at("coeff").get<double>(),
                                         t.at("lags").get<std::vector<long>>()});
        return volterra_target(terms, input_bound);
    }
    if (kind == "esn_teacher") {
        LoadedModel m = load_model(cfg.at("model").get<std::string>());
        if (m.kind != "esn") throw std::runtime_error("esn_teacher target must be an ESN model");
        auto cert = esn_esp_certificate(*m.esn);
        if (!cert) throw std::runtime_error("esn_teacher model carries no certificate");
        ReservoirSystem sys = esn_system(*m.esn, input_bound, "teacher");
        Filter f = reservoir_filter(sys, *cert, washout_tol);
        return TargetFilter{functional_from_filter(f), f, "esn_teacher",
                            json{{"model", cfg.at("model")}}};
    }
    throw std::runtime_error("unknown target kind: " + kind);
}

int cmd_approximate(const GlobalOptions& opts, const json& file_cfg) {
    json cfg = merge_effective_config(file_cfg, opts);
    const std::uint64_t root = cfg["seeds"]["root"].get<std::uint64_t>();
    const double washout_tol = cfg["tolerances"]["washout"].get<double>();
    const double input_bound =
        cfg.contains("sampling") ? cfg["sampling"].value("input_bound", 1.0) : 1.0;
    const std::string pipeline = cfg.value("pipeline", "practical");

    TargetFilter target = target_from_config(cfg.at("target"), input_bound, washout_tol);

    EsnParams esn;
    EndToEndReport report;
    if (pipeline == "practical") {
        const json pc = cfg.value("practical", json::object());
        PracticalConfig p;
        p.reservoir_size = pc.value("reservoir_size", 50L);
        p.rho = pc.value("rho", 0.5);
        p.activation = Activation::from_name(pc.value("activation", std::string("tanh")));
        p.input_bound = input_bound;
        p.train_signals = pc.value("train_signals", 40L);
        p.test_signals = pc.value("test_signals", 20L);
        p.window = pc.value("window", 60L);
        p.ridge = pc.value("ridge", 1e-8);
        p.washout_tol = washout_tol;
        p.input_scale = pc.value("input_scale", 1.0);
        p.bias_scale = pc.value("bias_scale", 0.1);
        p.seed = root;
        std::tie(esn, report) = practical_pipeline(target, p);
    } else if (pipeline == "constructive") {
        const json cc = cfg.value("constructive", json::object());
        ConstructiveConfig c;
        c.eps = cc.value("eps", 0.2);
        c.K = cc.value("K", 0.6);
        c.L = cc.value("L", 2.0);
        c.l1_samples = cc.value("l1_samples", 20000L);
        if (cc.contains("widths"))
            c.fit.width_schedule = cc["widths"].get<std::vector<Eigen::Index>>();
        c.fit.design_grid = cc.value("design_grid", 512L);
        c.fit.design_random = cc.value("design_random", 512L);
        c.fit.holdout = cc.value("holdout", 512L);
        c.fit.ridge = cc.value("ridge", 1e-9);
        c.fit.seed = substream_seed(root, "fit");
        c.verify.z_samples = cc.value("z_samples", 100L);
        c.verify.window = cc.value("window", 80L);
        c.verify.washout_tol = washout_tol;
        c.verify.compare_tol = cfg["tolerances"]["compare"].get<double>();
        c.verify.seed = substream_seed(root, "verify");
        c.seed = root;

        SasParams sas;
        if (cc.contains("sas_model")) {
            LoadedModel m = load_model(cc.at("sas_model").get<std::string>());
            if (m.kind != "sas") throw std::runtime_error("sas_model must be a SAS model file");
            sas = *m.sas;
        } else if (cc.contains("sas_fit")) {
            const json sf = cc.at("sas_fit");
            SasFitConfig fit_cfg;
            fit_cfg.state_dim = sf.value("state_dim", 8L);
            fit_cfg.degree = sf.value("degree", 2);
            fit_cfg.coeff_bound = sf.value("coeff_bound", 0.45);
            fit_cfg.ridge = sf.value("ridge", 1e-8);
            fit_cfg.train_signals = sf.value("train_signals", 40L);
            fit_cfg.window = sf.value("window", 96L);
            sas = fit_sas_readout(target, c.K, c.L, fit_cfg, washout_tol, root);
        } else {
            throw std::runtime_error(
                "constructive pipeline config needs \"sas_model\" or \"sas_fit\"");
        }
        std::tie(esn, report) = constructive_pipeline(sas, target, c);
        if (!report.stages["chain"]["fit"]["success"].get<bool>()) {
            persist_outputs(opts.out_dir, cfg, json{{"report", report}});
            std::cerr << "stage failure: hidden-layer fit did not reach eps2\n";
            return kExitStageFailure;
        }
        if (!report.stages["chain"]["verified"].get<bool>()) {
            persist_outputs(opts.out_dir, cfg, json{{"report", report}});
            std::cerr << "stage failure: chain verification flagged the report\n";
            return kExitStageFailure;
        }
    } else {
        throw std::runtime_error("unknown pipeline: " + pipeline);
    }

    fs::create_directories(opts.out_dir);
    save_model(fs::path(opts.out_dir) / "model.json", esn);

    // per-sample evaluation errors on a fresh held-out batch
    {
        auto cert = esn_esp_certificate(esn);
        std::ostringstream csv;
        csv << "sample,sup_error\n";
        if (cert) {
            ReservoirSystem sys = esn_system(esn, input_bound, "eval");
            const long window = cfg.value("practical", json::object()).value("window", 60L);
            const long washout = washout_length(cert->r, sys.state_bound(), washout_tol);
            if (window > washout) {
                auto inputs = sample_KM(esn.input_dim(), input_bound, window, 20,
                                        substream_seed(root, "per_sample_eval"));
                for (std::size_t i = 0; i < inputs.size(); ++i) {
                    BoundedSignal teacher = target.filter(inputs[i]).signal;
                    RunResult run = run_filter(sys, *cert, inputs[i], washout_tol);
                    double err = 0.0;
                    for (long t = run.clean_from; t <= 0; ++t)
                        err = std::max(err, (run.outputs.at(t) - teacher.at(t)).norm());
                    csv << i << "," << format_double(err) << "\n";
                }
            }
        }
        write_file_atomic(fs::path(opts.out_dir) / "per_sample_errors.csv", csv.str());
    }

    json jreport;
    jreport["result"] = report;
    const double target_error = cfg.value("target_error", 1e300);
    jreport["target_error"] = target_error;
    const bool met = report.test_error <= target_error;
    jreport["target_met"] = met;
    persist_outputs(opts.out_dir, cfg, jreport);
    std::cout << "pipeline = " << report.pipeline << ", reservoir size = "
              << report.reservoir_size << ", r = " << format_double(report.r)
              << ", test error = " << format_double(report.test_error) << "\n";
    return met ? kExitOk : kExitVerdictNegative;
}

int cmd_run(const std::string& model_path, const std::string& input_path,
            std::optional<double> K, std::optional<double> L, const GlobalOptions& opts,
            const json& file_cfg) {
    json cfg = merge_effective_config(file_cfg, opts);
    const double washout_tol = cfg["tolerances"]["washout"].get<double>();
    LoadedModel model = load_model(model_path);
    BoundedSignal input = load_signal_csv(input_path);

    ContractionCertificate cert;
    std::optional<ReservoirSystem> sys;
    if (model.kind == "esn") {
        auto c = esn_esp_certificate(*model.esn);
        if (!c) {
            std::cerr << "model carries no contraction certificate; run refused\n";
            return kExitVerdictNegative;
        }
        cert = *c;
        sys = esn_system(*model.esn, input.bound(), "run_esn");
    } else {
        if (!K || !L) throw std::runtime_error("running a SAS model requires --K and --L");
        SasCertification c = sas_certificate(*model.sas, *K, *L);
        if (!c.cert) {
            std::cerr << "SAS not certified: " << c.failure << "\n";
            return kExitVerdictNegative;
        }
        if (input.bound() > 1.0 - 1e-9)
            throw std::runtime_error("SAS inputs must lie inside the open unit ball");
        cert = *c.cert;
        sys = sas_system(*model.sas, *L, "run_sas");
    }

    const long washout = washout_length(cert.r, sys->state_bound(), washout_tol);
    if (input.length() <= washout)
        throw std::runtime_error("input window of length " + std::to_string(input.length()) +
                                 " is too short: need at least " + std::to_string(washout + 1) +
                                 " steps (washout " + std::to_string(washout) + ")");

    RunResult run = run_filter(*sys, cert, input, washout_tol);
    fs::create_directories(opts.out_dir);
    std::ostringstream csv;
    csv << "t";
    for (Eigen::Index i = 0; i < sys->state_dim(); ++i) csv << ",x" << (i + 1);
    for (Eigen::Index i = 0; i < sys->output_dim(); ++i) csv << ",y" << (i + 1);
    csv << ",clean\n";
    for (long t = input.first_index(); t <= 0; ++t) {
        csv << t;
        Eigen::VectorXd x = run.states.at(t);
        Eigen::VectorXd y = run.outputs.at(t);
        for (Eigen::Index i = 0; i < x.size(); ++i) csv << "," << format_double(x[i]);
        for (Eigen::Index i = 0; i < y.size(); ++i) csv << "," << format_double(y[i]);
        csv << "," << (t >= run.clean_from ? 1 : 0) << "\n";
    }
    write_file_atomic(fs::path(opts.out_dir) / "trajectory.csv", csv.str());

    json report;
    report["model"] = model_path;
    report["input"] = input_path;
    report["r"] = cert.r;
    report["washout"] = washout;
    report["clean_from"] = run.clean_from;
    persist_outputs(opts.out_dir, cfg, report);
    std::cout << "wrote trajectory.csv, clean from t = " << run.clean_from << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reservoir computing universality toolkit"};
    app.require_subcommand(1);

    GlobalOptions opts;
    app.add_option("--config", opts.config_path, "structured config file (JSON)");
    app.add_option("--out", opts.out_dir, "output directory");
    auto* seed_opt = app.add_option("--seed", opts.seed, "root seed for all substreams");
    auto* tol_opt = app.add_option("--tol", opts.compare_tol, "comparison tolerance");
    auto* wtol_opt = app.add_option("--washout-tol", opts.washout_tol, "washout tolerance");

    std::string model_path, input_path;
    std::optional<double> K, L;
    double K_val = 0.0, L_val = 0.0;

    auto* certify = app.add_subcommand("certify", "check contraction certificates for a model");
    certify->fallthrough();
    certify->add_option("model", model_path, "model file (ESN or SAS)")->required();
    auto* ck = certify->add_option("--K", K_val, "SAS contraction target K");
    auto* cl = certify->add_option("--L", L_val, "SAS state bound L");

    auto* verify = app.add_subcommand("verify-bound", "internal approximation bound check");
    verify->fallthrough();

    auto* approx = app.add_subcommand("approximate", "build an ESN approximant for a target");
    approx->fallthrough();

    auto* runcmd = app.add_subcommand("run", "drive a certified model over an input signal");
    runcmd->fallthrough();
    runcmd->add_option("model", model_path, "model file")->required();
    runcmd->add_option("input", input_path, "input signal CSV (with .meta.json sidecar)")
        ->required();
    auto* rk = runcmd->add_option("--K", K_val, "SAS contraction target K");
    auto* rl = runcmd->add_option("--L", L_val, "SAS state bound L");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    opts.seed_set = seed_opt->count() > 0;
    opts.compare_tol_set = tol_opt->count() > 0;
    opts.washout_tol_set = wtol_opt->count() > 0;
    if (ck->count() || rk->count()) K = K_val;
    if (cl->count() || rl->count()) L = L_val;

    try {
        json file_cfg = load_config_file(opts.config_path);
        if (certify->parsed()) return cmd_certify(model_path, K, L, opts, file_cfg);
        if (verify->parsed()) return cmd_verify_bound(opts, file_cfg);
        if (approx->parsed()) return cmd_approximate(opts, file_cfg);
        if (runcmd->parsed()) return cmd_run(model_path, input_path, K, L, opts, file_cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
