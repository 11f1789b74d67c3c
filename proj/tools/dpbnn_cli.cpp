// Command-line front end: dataset generation, training, prediction, privacy
// accounting, calibration, sweeps, and the convergence probe.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dpbnn/dpbnn.hpp"

namespace fs = std::filesystem;
using namespace dpbnn;

namespace {

std::string fmt_double(double v) {
    if (!std::isfinite(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

Matrix read_csv_matrix(const std::string& path, std::vector<int>* labels) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    std::vector<std::vector<double>> rows;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> vals;
        std::stringstream ss(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            try {
                vals.push_back(std::stod(cell));
            } catch (...) {
                numeric = false;
                break;
            }
        }
        if (first && !numeric) {  // header row
            first = false;
            continue;
        }
        first = false;
        if (!numeric) throw std::runtime_error(path + ": non-numeric row");
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw std::runtime_error(path + ": no data rows");
    std::size_t cols = rows[0].size();
    std::size_t data_cols = labels ? cols - 1 : cols;
    Matrix m(rows.size(), data_cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != cols) throw std::runtime_error(path + ": ragged rows");
        for (std::size_t j = 0; j < data_cols; ++j) m(i, j) = rows[i][j];
        if (labels) labels->push_back(static_cast<int>(rows[i][cols - 1]));
    }
    return m;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Differentially private Bayesian neural network toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    std::uint64_t seed = 0;
    std::string config_path, out_dir;
    double delta = 1e-5;
    app.add_option("--seed", seed, "run seed");
    app.add_option("--config", config_path, "key=value config file");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--delta", delta, "privacy failure probability");

    // ---- generate ----------------------------------------------------------
    auto* gen = app.add_subcommand("generate", "generate a dataset and write it to CSV/IDX");
    std::string gen_task = "blobs";
    int gen_n = 2000, gen_k = 2, gen_q = 2;
    double gen_sep = 5.0;
    gen->add_option("--task", gen_task, "blobs | hetero-regression");
    gen->add_option("--n", gen_n);
    gen->add_option("--classes", gen_k);
    gen->add_option("--features", gen_q);
    gen->add_option("--separation", gen_sep);

    // ---- train --------------------------------------------------------------
    auto* train = app.add_subcommand("train", "run a training experiment");
    std::string train_preset;
    std::vector<std::string> train_set;
    train->add_option("--preset", train_preset, "named profile (mnist-mlp-paper, mnist-10k, hetero-paper, hetero-desk, blobs)");
    train->add_option("--set", train_set, "key=value overrides");

    // ---- predict -------------------------------------------------------------
    auto* predict = app.add_subcommand("predict", "sample predictive draws from an ensemble");
    std::string pred_ensemble, pred_input_csv, pred_out = "draws.csv";
    int pred_k = 100;
    predict->add_option("--ensemble", pred_ensemble)->required();
    predict->add_option("--input", pred_input_csv, "CSV of input rows")->required();
    predict->add_option("--draws", pred_k, "draws per input");
    predict->add_option("--output", pred_out);

    // ---- account ---------------------------------------------------------------
    auto* account = app.add_subcommand("account", "closed-form GDP privacy budget");
    long acc_T = -1;
    int acc_epochs = 0, acc_batch = 256, acc_n = 60000;
    double acc_sigma = -1, acc_eta = -1, acc_C = -1;
    std::string acc_sweep_csv;
    account->add_option("--iterations", acc_T, "iteration count T");
    account->add_option("--epochs", acc_epochs, "alternative to T: epochs * ceil(n/batch)");
    account->add_option("--batch", acc_batch);
    account->add_option("--n", acc_n, "dataset size");
    account->add_option("--sigma", acc_sigma, "noise multiplier (generic path)");
    account->add_option("--eta", acc_eta, "learning rate (SGLD path)");
    account->add_option("--clip", acc_C, "clipping norm (SGLD path)");
    account->add_option("--sweep-csv", acc_sweep_csv, "write a per-iteration budget sweep");

    // ---- calibrate -------------------------------------------------------------
    auto* calibrate = app.add_subcommand("calibrate", "ECE/MCE report from a predictions CSV");
    std::string cal_csv, cal_bins_csv = "reliability.csv";
    int cal_M = 15;
    calibrate->add_option("--predictions", cal_csv, "CSV: K probabilities + label per row")->required();
    calibrate->add_option("--bins", cal_M);
    calibrate->add_option("--bins-csv", cal_bins_csv, "per-bin reliability-diagram CSV");

    // ---- sweep -------------------------------------------------------------------
    auto* sweep = app.add_subcommand("sweep", "DP-SGD family sweep with matched DP-SGLD points");
    std::vector<double> sw_C{0.5, 1, 1.5, 2, 5}, sw_sigma{0.5, 0.9, 1.3, 2, 3};
    double sw_eta_sgd = 0.25, sw_eta_sgld = 1e-5;
    int sw_epochs = 3;
    sweep->add_option("--clip-grid", sw_C);
    sweep->add_option("--sigma-grid", sw_sigma);
    sweep->add_option("--eta-sgd", sw_eta_sgd);
    sweep->add_option("--eta-sgld", sw_eta_sgld);
    sweep->add_option("--epochs", sw_epochs);

    // ---- probe-convergence ----------------------------------------------------------
    auto* probe = app.add_subcommand("probe-convergence", "convergence probe under the theorem5 schedule");
    std::vector<double> pr_grid{100, 316, 1000, 3162};
    double pr_C0 = 1.0, pr_L = 1.0;
    probe->add_option("--t-grid", pr_grid);
    probe->add_option("--c0", pr_C0);
    probe->add_option("--lipschitz", pr_L);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            if (out_dir.empty()) out_dir = ".";
            fs::create_directories(out_dir);
            if (gen_task == "blobs") {
                ClassificationDataset ds = generate_blobs(gen_n, gen_k, gen_q, seed, gen_sep);
                std::vector<std::string> header;
                for (int q = 0; q < gen_q; ++q) header.push_back("x" + std::to_string(q));
                header.push_back("label");
                CsvWriter w((fs::path(out_dir) / "blobs.csv").string(), header);
                for (int i = 0; i < gen_n; ++i) {
                    for (int q = 0; q < gen_q; ++q) w.field(ds.inputs(i, q));
                    w.field(ds.labels[i]);
                    w.end_row();
                }
                std::cout << "wrote " << (fs::path(out_dir) / "blobs.csv").string() << "\n";
            } else if (gen_task == "hetero-regression") {
                RegressionDataset ds = generate_heteroscedastic(gen_n, seed);
                CsvWriter w((fs::path(out_dir) / "hetero.csv").string(), {"x", "y", "split"});
                for (std::size_t i = 0; i < ds.x.size(); ++i) {
                    bool is_train = std::find(ds.train_idx.begin(), ds.train_idx.end(),
                                              static_cast<int>(i)) != ds.train_idx.end();
                    w.field(ds.x[i]).field(ds.y[i]).field(std::string(is_train ? "train" : "test"));
                    w.end_row();
                }
                std::cout << "wrote " << (fs::path(out_dir) / "hetero.csv").string() << "\n";
            } else {
                throw std::invalid_argument("unknown task: " + gen_task);
            }
        } else if (*train) {
            ExperimentConfig cfg;
            if (!config_path.empty()) cfg = parse_config_file(config_path);
            else if (!train_preset.empty()) cfg = experiment_preset(train_preset);
            for (const auto& kv : train_set) {
                auto eq = kv.find('=');
                if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value");
                apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
            }
            if (seed != 0) cfg.seed = seed;
            if (!out_dir.empty()) cfg.out_dir = out_dir;
            if (app.count("--delta")) cfg.delta = delta;
            RunLog log = run_experiment(cfg);
            std::cout << "{\"steps\": " << log.steps
                      << ", \"mu\": " << fmt_double(log.final_mu)
                      << ", \"eps\": " << fmt_double(log.final_eps);
            if (!std::isnan(log.accuracy))
                std::cout << ", \"accuracy\": " << fmt_double(log.accuracy)
                          << ", \"ece\": " << fmt_double(log.ece)
                          << ", \"mce\": " << fmt_double(log.mce);
            if (!std::isnan(log.mse)) std::cout << ", \"mse\": " << fmt_double(log.mse);
            std::cout << "}\n";
        } else if (*predict) {
            PosteriorEnsemble ens = load_ensemble(pred_ensemble);
            Matrix inputs = read_csv_matrix(pred_input_csv, nullptr);
            if (inputs.cols() != ens.layer_sizes.front())
                throw std::invalid_argument("input has " + std::to_string(inputs.cols()) +
                                            " columns, network expects " +
                                            std::to_string(ens.layer_sizes.front()));
            Rng rng(derive_stream_seed(seed, "predict"));
            bool classification = ens.head == Head::Classification;
            std::vector<std::string> header{"input_row", "draw"};
            if (classification)
                for (std::size_t k = 0; k < ens.layer_sizes.back(); ++k)
                    header.push_back("p" + std::to_string(k));
            else {
                header.push_back("y_hat");
                header.push_back("var_hat");
            }
            CsvWriter w(pred_out, header);
            for (std::size_t i = 0; i < inputs.rows(); ++i) {
                auto samples = sample_predictions(ens, inputs.row(i),
                                                  static_cast<std::size_t>(pred_k), rng);
                for (std::size_t d = 0; d < samples.size(); ++d) {
                    w.field(static_cast<long>(i)).field(static_cast<long>(d));
                    if (classification)
                        for (double p : samples[d].probs) w.field(p);
                    else
                        w.field(samples[d].y_hat).field(samples[d].var_hat);
                    w.end_row();
                }
            }
            std::cout << "wrote " << pred_out << "\n";
        } else if (*account) {
            long T = acc_T;
            if (T < 0) {
                if (acc_epochs <= 0)
                    throw std::invalid_argument("provide --iterations or --epochs");
                T = static_cast<long>(acc_epochs) * ((acc_n + acc_batch - 1) / acc_batch);
            }
            bool sgld_path = acc_eta > 0 && acc_C > 0;
            if (!sgld_path && acc_sigma < 0)
                throw std::invalid_argument("provide --sigma, or --eta together with --clip");
            auto mu_at = [&](long t) {
                return sgld_path ? gdp_mu_sgld(t, acc_eta, acc_C, acc_batch, acc_n)
                                 : gdp_mu_generic(t, acc_sigma, acc_batch, acc_n);
            };
            double mu = mu_at(T);
            double eps = mu == 0.0 ? 0.0
                         : std::isfinite(mu) ? eps_from_mu_delta(mu, delta)
                                             : std::numeric_limits<double>::infinity();
            std::cout << "{\"mu\": " << fmt_double(mu) << ", \"eps\": " << fmt_double(eps)
                      << ", \"delta\": " << fmt_double(delta) << "}\n";
            if (!acc_sweep_csv.empty()) {
                CsvWriter w(acc_sweep_csv, {"T", "mu", "eps"});
                long step = std::max<long>(1, T / 100);
                for (long t = step; t <= T; t += step) {
                    double m = mu_at(t);
                    w.field(t).field(m).field(std::isfinite(m) ? eps_from_mu_delta(m, delta)
                                                               : std::numeric_limits<double>::infinity());
                    w.end_row();
                }
                std::cout << "wrote " << acc_sweep_csv << "\n";
            }
        } else if (*calibrate) {
            std::vector<int> labels;
            Matrix probs = read_csv_matrix(cal_csv, &labels);
            CalibrationReport rep = calibration_report(probs, labels,
                                                       static_cast<std::size_t>(cal_M));
            std::cout << "{\"n\": " << rep.n << ", \"bins\": " << cal_M
                      << ", \"ece\": " << fmt_double(rep.ece)
                      << ", \"mce\": " << fmt_double(rep.mce) << "}\n";
            CsvWriter w(cal_bins_csv, {"bin_mid", "count", "accuracy", "confidence"});
            for (const auto& b : rep.bins) {
                w.field(0.5 * (b.lo + b.hi)).field(static_cast<long>(b.count))
                    .field(b.accuracy).field(b.confidence);
                w.end_row();
            }
            std::cout << "wrote " << cal_bins_csv << "\n";
        } else if (*sweep) {
            ExperimentConfig base = experiment_preset("blobs");
            if (!config_path.empty()) base = parse_config_file(config_path);
            base.seed = seed;
            base.epochs = sw_epochs;
            if (app.count("--delta")) base.delta = delta;
            auto rows = sweep_sgd_family(base, sw_C, sw_sigma, sw_eta_sgd, sw_eta_sgld);
            if (out_dir.empty()) out_dir = ".";
            fs::create_directories(out_dir);
            CsvWriter w((fs::path(out_dir) / "sweep.csv").string(),
                        {"method", "clip_norm", "sigma", "epoch", "eps", "accuracy"});
            for (const auto& r : rows) {
                w.field(r.method).field(r.C).field(r.sigma).field(r.epoch)
                    .field(r.eps).field(r.accuracy);
                w.end_row();
            }
            std::cout << "wrote " << (fs::path(out_dir) / "sweep.csv").string() << "\n";
        } else if (*probe) {
            ExperimentConfig cfg = experiment_preset("blobs");
            if (!config_path.empty()) cfg = parse_config_file(config_path);
            cfg.seed = seed;
            ProbeResult res = convergence_probe(cfg, pr_grid, pr_C0, pr_L);
            std::cout << "{\"slope\": " << fmt_double(res.slope) << ", \"cells\": [";
            for (std::size_t i = 0; i < res.cells.size(); ++i) {
                const auto& c = res.cells[i];
                std::cout << (i ? ", " : "") << "{\"T\": " << c.T
                          << ", \"eta\": " << fmt_double(c.eta)
                          << ", \"clip\": " << fmt_double(c.C)
                          << ", \"min_grad_norm\": " << fmt_double(c.min_grad_norm)
                          << ", \"diverged\": " << (c.diverged ? "true" : "false") << "}";
            }
            std::cout << "]}\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
