#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gic/comparison.hpp"
#include "gic/dataset.hpp"
#include "gic/erm.hpp"
#include "gic/errors.hpp"
#include "gic/evaluation.hpp"
#include "gic/generators.hpp"
#include "gic/gic_train.hpp"
#include "gic/invariant.hpp"
#include "gic/mine.hpp"
#include "gic/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw gic::ConfigError(what + ": '" + item + "' is not an integer");
        }
    }
    if (out.empty()) throw gic::ConfigError(what + ": empty list");
    return out;
}

std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw gic::ConfigError(what + ": '" + item + "' is not a number");
        }
    }
    if (out.empty()) throw gic::ConfigError(what + ": empty list");
    return out;
}

// accepts either a dataset file or a directory holding <stem>.bin/.csv
gic::LabeledDataset load_split(const std::string& path, const std::string& stem) {
    if (fs::is_directory(path)) {
        for (const char* ext : {".bin", ".csv"}) {
            const fs::path candidate = fs::path(path) / (stem + ext);
            if (fs::exists(candidate)) return gic::load_dataset(candidate.string());
        }
        throw gic::DataError("no " + stem + ".bin or " + stem + ".csv under '" + path + "'");
    }
    return gic::load_dataset(path);
}

void write_splits(const gic::DatasetSplits& splits, const std::string& outdir, const std::string& format) {
    if (format != "bin" && format != "csv") throw gic::ConfigError("--format must be bin or csv");
    fs::create_directories(outdir);
    gic::save_dataset(splits.train, (fs::path(outdir) / ("train." + format)).string());
    gic::save_dataset(splits.val, (fs::path(outdir) / ("val." + format)).string());
    gic::save_dataset(splits.test, (fs::path(outdir) / ("test." + format)).string());
    std::cout << "wrote " << splits.train.size() << "/" << splits.val.size() << "/" << splits.test.size()
              << " train/val/test rows to " << outdir << "\n";
}

json eval_report_json(const gic::EvalReport& r) {
    return {{"average_accuracy", r.average_accuracy},
            {"worst_group_accuracy", r.worst_group_accuracy},
            {"per_group_accuracy", r.per_group_accuracy},
            {"per_group_count", r.per_group_count},
            {"excluded_groups", r.excluded_groups}};
}

json summary_json(const gic::PipelineResult& result) {
    const auto stat = [](const gic::SummaryStat& s) { return json{{"mean", s.mean}, {"stddev", s.stddev}}; };
    json seeds = json::array();
    for (const auto& s : result.seeds)
        seeds.push_back({{"seed", s.seed},
                         {"erm_worst", s.erm_test.worst_group_accuracy},
                         {"erm_average", s.erm_test.average_accuracy},
                         {"robust_worst", s.robust_test.worst_group_accuracy},
                         {"robust_average", s.robust_test.average_accuracy},
                         {"minority_precision", s.minority_train.precision},
                         {"minority_recall", s.minority_train.recall},
                         {"attribute_accuracy", s.attribute_train.aligned},
                         {"comparison_size", s.comparison_size},
                         {"warnings", s.warnings}});
    return json{{"erm_worst", stat(result.summary.erm_worst)},
                {"erm_average", stat(result.summary.erm_average)},
                {"robust_worst", stat(result.summary.robust_worst)},
                {"robust_average", stat(result.summary.robust_average)},
                {"minority_precision", stat(result.summary.minority_precision)},
                {"minority_recall", stat(result.summary.minority_recall)},
                {"attribute_accuracy", stat(result.summary.attribute_accuracy)},
                {"seeds", seeds}};
}

struct GicFlags {
    std::string train_path, comparison_path;
    std::string mode = "labeled";
    double gamma = 10.0;
    int epochs = 20;
    double lr = 1e-5;
    double momentum = 0.9;
    int mine_steps = 5;
    std::string mine_hidden = "64,64";
    double mine_lr = 1e-2;
    double clip = 50.0;
    std::string head_hidden;
    bool no_standardize = false;
    std::uint64_t seed = 0;
};

void add_gic_flags(CLI::App* cmd, GicFlags& f) {
    cmd->add_option("--train", f.train_path, "training features+labels (dataset file)")->required();
    cmd->add_option("--comparison", f.comparison_path, "comparison dataset file")->required();
    cmd->add_option("--mode", f.mode, "labeled|unlabeled comparison data");
    cmd->add_option("--gamma", f.gamma, "spurious-term weight");
    cmd->add_option("--epochs", f.epochs, "head training steps (K)");
    cmd->add_option("--lr", f.lr, "head learning rate");
    cmd->add_option("--momentum", f.momentum, "head SGD momentum");
    cmd->add_option("--mine-steps", f.mine_steps, "estimator ascent steps per epoch");
    cmd->add_option("--mine-hidden", f.mine_hidden, "estimator hidden widths, e.g. 64,64");
    cmd->add_option("--mine-lr", f.mine_lr, "estimator learning rate");
    cmd->add_option("--clip", f.clip, "estimator output clip");
    cmd->add_option("--head-hidden", f.head_hidden, "head hidden widths (default linear)");
    cmd->add_flag("--no-standardize", f.no_standardize, "skip feature standardization");
    cmd->add_option("--seed", f.seed, "run seed");
}

struct GicInputs {
    gic::LabeledDataset train, comparison;
    Eigen::MatrixXd z_tr, z_c;
    gic::GicConfig config;
};

GicInputs prepare_gic_inputs(const GicFlags& f) {
    GicInputs in;
    in.train = load_split(f.train_path, "train");
    in.comparison = gic::load_dataset(f.comparison_path);
    in.config.mode = gic::gic_mode_from_name(f.mode);
    if (in.config.mode == gic::GicMode::Unlabeled) in.comparison = gic::strip_labels(in.comparison);
    if (f.no_standardize) {
        in.z_tr = in.train.features;
        in.z_c = in.comparison.features;
    } else {
        const auto scaler = gic::fit_scaler(in.train.features);
        in.z_tr = gic::apply_scaler(scaler, in.train.features);
        in.z_c = gic::apply_scaler(scaler, in.comparison.features);
    }
    in.config.gamma = f.gamma;
    in.config.epochs = f.epochs;
    in.config.learning_rate = f.lr;
    in.config.momentum = f.momentum;
    in.config.mine_steps_per_epoch = f.mine_steps;
    in.config.mine.hidden = parse_int_list(f.mine_hidden, "--mine-hidden");
    in.config.mine.sgd.learning_rate = f.mine_lr;
    in.config.mine.output_clip = f.clip;
    if (!f.head_hidden.empty()) in.config.head_hidden = parse_int_list(f.head_hidden, "--head-hidden");
    in.config.seed = f.seed;
    return in;
}

void save_gic_curve(const std::vector<gic::GicCurvePoint>& curve, const std::string& path) {
    std::ostringstream out;
    out << "epoch,ce,kl_joint,kl_marginal,kl_total\n";
    char buf[160];
    for (std::size_t e = 0; e < curve.size(); ++e) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g", e, curve[e].ce, curve[e].kl_joint,
                      curve[e].kl_marginal, curve[e].kl_total);
        out << buf << '\n';
    }
    std::ofstream file(path);
    if (!file) throw gic::DataError("cannot open '" + path + "' for writing");
    file << out.str();
}

// flags shared by pipeline and the two studies
struct PipelineFlags {
    std::string config_path;
    std::string preset, outdir, mode, group_source, comparison_source, method;
    int seeds = -1;
    std::uint64_t base_seed = 0;
    bool base_seed_set = false;
    int workers = -1;
    bool force = false, no_plot = false, grid = false, readjust = false;
    double gamma = -1.0, ratio = -1.0;
    int k = -1, rounds = -1;
};

void add_pipeline_flags(CLI::App* cmd, PipelineFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON config file (flags override)");
    cmd->add_option("--preset", f.preset, "toy2d|synth|files");
    cmd->add_option("--outdir", f.outdir, "artifact directory");
    cmd->add_option("--seeds", f.seeds, "number of seeds");
    cmd->add_option("--base-seed", f.base_seed, "first seed")->each([&f](const std::string&) { f.base_seed_set = true; });
    cmd->add_option("--workers", f.workers, "parallel worker slots");
    cmd->add_flag("--force", f.force, "ignore cached seed artifacts");
    cmd->add_flag("--no-plot", f.no_plot, "skip boundary SVGs");
    cmd->add_flag("--grid", f.grid, "run the gamma/K grid search");
    cmd->add_flag("--readjust", f.readjust, "rebalance the comparison set, then retrain");
    cmd->add_option("--mode", f.mode, "labeled|unlabeled comparison data");
    cmd->add_option("--group-source", f.group_source, "gic|oracle");
    cmd->add_option("--comparison-source", f.comparison_source, "provided|from_train");
    cmd->add_option("--ratio", f.ratio, "from_train comparison draw ratio");
    cmd->add_option("--rounds", f.rounds, "from_train construction rounds");
    cmd->add_option("--method", f.method, "subsample|upsample|groupdro|mixup");
    cmd->add_option("--gamma", f.gamma, "spurious-term weight");
    cmd->add_option("--k", f.k, "head training steps (K)");
}

gic::PipelineConfig build_pipeline_config(const PipelineFlags& f) {
    gic::PipelineConfig cfg;
    if (!f.config_path.empty()) cfg = gic::load_pipeline_config(f.config_path);
    if (!f.preset.empty()) cfg.preset = f.preset;
    if (!f.outdir.empty()) cfg.outdir = f.outdir;
    if (f.seeds > 0) cfg.num_seeds = f.seeds;
    if (f.base_seed_set) cfg.base_seed = f.base_seed;
    if (f.workers > 0) cfg.workers = f.workers;
    if (f.force) cfg.force = true;
    if (f.no_plot) cfg.plot = false;
    if (f.grid) cfg.run_grid_search = true;
    if (f.readjust) cfg.readjust = true;
    if (!f.mode.empty()) cfg.mode = gic::gic_mode_from_name(f.mode);
    if (!f.group_source.empty()) cfg.group_source = f.group_source;
    if (!f.comparison_source.empty()) cfg.comparison_source = f.comparison_source;
    if (f.ratio > 0) cfg.comparison_ratio = f.ratio;
    if (f.rounds > 0) cfg.comparison_rounds = f.rounds;
    if (!f.method.empty()) cfg.robust.method = gic::robust_method_from_name(f.method);
    if (f.gamma >= 0) cfg.gic.gamma = f.gamma;
    if (f.k > 0) cfg.gic.epochs = f.k;
    return cfg;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"group inference via data comparison: spurious-attribute heads, "
                 "inferred groups, and worst-group robust training"};
    app.require_subcommand(1);

    // ----------------------------------------------------------------- gen
    struct {
        std::string out = "data", format = "bin";
        std::uint64_t seed = 0;
    } gen_toy;
    auto* cmd_gen_toy = app.add_subcommand("gen-toy2d", "generate the 2-feature four-group dataset");
    cmd_gen_toy->add_option("--out", gen_toy.out, "output directory");
    cmd_gen_toy->add_option("--seed", gen_toy.seed, "generator seed");
    cmd_gen_toy->add_option("--format", gen_toy.format, "bin|csv");
    cmd_gen_toy->callback([&] { write_splits(gic::gen_toy2d(gic::Toy2dSpec{}, gen_toy.seed), gen_toy.out, gen_toy.format); });

    struct {
        std::string preset = "cmnist", out = "data", format = "bin";
        std::uint64_t seed = 0;
    } gen_synth;
    auto* cmd_gen_synth = app.add_subcommand("gen-synth", "generate the feature-space spurious-correlation benchmark");
    cmd_gen_synth->add_option("--preset", gen_synth.preset, "benchmark recipe (cmnist)");
    cmd_gen_synth->add_option("--out", gen_synth.out, "output directory");
    cmd_gen_synth->add_option("--seed", gen_synth.seed, "generator seed");
    cmd_gen_synth->add_option("--format", gen_synth.format, "bin|csv");
    cmd_gen_synth->callback([&] {
        if (gen_synth.preset != "cmnist")
            throw gic::ConfigError("gen-synth: unknown preset '" + gen_synth.preset + "', expected cmnist");
        write_splits(gic::gen_synth_spurious(gic::SynthSpuriousSpec{}, gen_synth.seed), gen_synth.out,
                     gen_synth.format);
    });

    // ----------------------------------------------------------- train-erm
    struct {
        std::string data, arch, out = "erm.gicm";
        int epochs = 5, batch = 32;
        double lr = 1e-3, momentum = 0.9, wd = 1e-4;
        std::uint64_t seed = 0;
    } erm;
    auto* cmd_erm = app.add_subcommand("train-erm", "minibatch cross-entropy baseline / feature extractor");
    cmd_erm->add_option("--data", erm.data, "training dataset file or directory")->required();
    cmd_erm->add_option("--arch", erm.arch, "layer widths, e.g. 2,16,2 (default linear)");
    cmd_erm->add_option("--epochs", erm.epochs, "training epochs");
    cmd_erm->add_option("--batch-size", erm.batch, "minibatch size");
    cmd_erm->add_option("--lr", erm.lr, "learning rate");
    cmd_erm->add_option("--momentum", erm.momentum, "SGD momentum");
    cmd_erm->add_option("--wd", erm.wd, "weight decay");
    cmd_erm->add_option("--seed", erm.seed, "run seed");
    cmd_erm->add_option("--out", erm.out, "model output path");
    cmd_erm->callback([&] {
        const auto data = load_split(erm.data, "train");
        gic::ErmConfig cfg;
        cfg.arch = erm.arch.empty() ? std::vector<int>{data.dim(), data.class_count}
                                    : parse_int_list(erm.arch, "--arch");
        cfg.epochs = erm.epochs;
        cfg.batch_size = erm.batch;
        cfg.sgd = {erm.lr, erm.momentum, erm.wd};
        cfg.seed = erm.seed;
        const auto art = gic::train_erm(data, cfg);
        gic::save_model(art.model, erm.out);
        if (!art.curve.empty())
            std::cout << "final train loss " << art.curve.back().loss << ", accuracy " << art.curve.back().accuracy
                      << "\n";
        std::cout << "wrote " << erm.out << "\n";
    });

    // ----------------------------------------------------- extract-features
    struct {
        std::string model, data, out;
    } extract;
    auto* cmd_extract = app.add_subcommand("extract-features", "replace features by penultimate-layer activations");
    cmd_extract->add_option("--model", extract.model, "trained model")->required();
    cmd_extract->add_option("--data", extract.data, "input dataset")->required();
    cmd_extract->add_option("--out", extract.out, "output dataset path")->required();
    cmd_extract->callback([&] {
        gic::ErmArtifacts art;
        art.model = gic::load_model(extract.model);
        art.feature_layer_index = art.model.layer_count() - 2;
        auto data = gic::load_dataset(extract.data);
        data.features = gic::extract_features(art, data);
        gic::save_dataset(data, extract.out);
        std::cout << "wrote " << data.size() << " rows x " << data.dim() << " features to " << extract.out << "\n";
    });

    // ------------------------------------------------------ build-comparison
    struct {
        std::string train, model, out_comparison, out_train;
        double ratio = 0.01;
        std::uint64_t seed = 0;
    } build;
    auto* cmd_build = app.add_subcommand("build-comparison", "carve a comparison set out of the training split");
    cmd_build->add_option("--train", build.train, "training dataset")->required();
    cmd_build->add_option("--model", build.model, "classifier whose errors guide the draw")->required();
    cmd_build->add_option("--ratio", build.ratio, "error-side fraction of the training size");
    cmd_build->add_option("--seed", build.seed, "draw seed");
    cmd_build->add_option("--out-comparison", build.out_comparison, "comparison output")->required();
    cmd_build->add_option("--out-train", build.out_train, "remaining-training output")->required();
    cmd_build->callback([&] {
        const auto train = load_split(build.train, "train");
        const auto model = gic::load_model(build.model);
        const auto split = gic::build_comparison_from_train(train, model, build.ratio, build.seed);
        if (!split.warning.empty()) std::cerr << "warning: " << split.warning << "\n";
        gic::save_dataset(split.comparison, build.out_comparison);
        gic::save_dataset(split.remaining, build.out_train);
        std::cout << "comparison " << split.comparison.size() << " rows, remaining " << split.remaining.size()
                  << " rows\n";
    });

    // -------------------------------------------------------------- train-gic
    GicFlags gicf;
    std::string gic_out = "gic.gicm", gic_curves;
    auto* cmd_gic = app.add_subcommand("train-gic", "train the spurious-attribute head");
    add_gic_flags(cmd_gic, gicf);
    cmd_gic->add_option("--out", gic_out, "head output path");
    cmd_gic->add_option("--curves", gic_curves, "per-epoch CE/KL csv");
    cmd_gic->callback([&] {
        auto in = prepare_gic_inputs(gicf);
        const auto art = gic::train_gic(in.z_tr, in.train.labels, in.train.class_count, in.z_c,
                                        in.comparison.labels, in.config);
        gic::save_model(art.head, gic_out);
        if (!gic_curves.empty()) save_gic_curve(art.curve, gic_curves);
        if (!art.curve.empty())
            std::cout << "final ce " << art.curve.back().ce << ", kl " << art.curve.back().kl_total << "\n";
        std::cout << "wrote " << gic_out << "\n";
    });

    // ------------------------------------------------------------ grid-search
    GicFlags gridf;
    struct {
        std::string gamma_grid = "10,5,4,3,2,1";
        std::string k_grid = "20,15,14,13,12,11,10,9,8,7,6,5,4,3,2,1";
        double tolerance = 0.02;
        std::string diagnostics = "grid.csv", out;
    } grid;
    auto* cmd_grid = app.add_subcommand("grid-search", "pick gamma and K by cross-entropy rebound detection");
    add_gic_flags(cmd_grid, gridf);
    cmd_grid->add_option("--gamma-grid", grid.gamma_grid, "gamma candidates, largest first");
    cmd_grid->add_option("--k-grid", grid.k_grid, "K candidates, largest first");
    cmd_grid->add_option("--tolerance", grid.tolerance, "relative CE rebound tolerance");
    cmd_grid->add_option("--diagnostics", grid.diagnostics, "per-point csv output");
    cmd_grid->add_option("--out", grid.out, "retrain at the selected point and save the head");
    cmd_grid->callback([&] {
        auto in = prepare_gic_inputs(gridf);
        gic::GridSearchConfig cfg;
        cfg.gamma_grid = parse_double_list(grid.gamma_grid, "--gamma-grid");
        cfg.k_grid = parse_int_list(grid.k_grid, "--k-grid");
        cfg.tolerance = grid.tolerance;
        cfg.base = in.config;
        const auto res = gic::grid_search(in.z_tr, in.train.labels, in.train.class_count, in.z_c,
                                          in.comparison.labels, cfg);
        gic::save_grid_diagnostics(res.diagnostics, grid.diagnostics);
        if (res.exhausted) std::cerr << "warning: every grid point rebounded; using the grid minimum\n";
        std::cout << "selected gamma " << res.selected.gamma << ", K " << res.selected.epochs << " ("
                  << res.diagnostics.size() << " points tried)\n";
        if (!grid.out.empty()) {
            const auto art = gic::train_gic(in.z_tr, in.train.labels, in.train.class_count, in.z_c,
                                            in.comparison.labels, res.selected);
            gic::save_model(art.head, grid.out);
            std::cout << "wrote " << grid.out << "\n";
        }
    });

    // ------------------------------------------------------------ infer-groups
    struct {
        std::string head, data, scaler_from, out = "groups.csv";
    } infer;
    auto* cmd_infer = app.add_subcommand("infer-groups", "assign inferred groups g = y*A + ys_hat");
    cmd_infer->add_option("--head", infer.head, "trained spurious head")->required();
    cmd_infer->add_option("--data", infer.data, "labeled dataset to partition")->required();
    cmd_infer->add_option("--scaler-from", infer.scaler_from, "dataset to fit standardization on (default: --data)");
    cmd_infer->add_option("--out", infer.out, "groups csv output");
    cmd_infer->callback([&] {
        gic::GicArtifacts art;
        art.head = gic::load_model(infer.head);
        art.class_count = art.head.output_dim();
        const auto data = gic::load_dataset(infer.data);
        const auto ref = infer.scaler_from.empty() ? data : gic::load_dataset(infer.scaler_from);
        const auto scaler = gic::fit_scaler(ref.features);
        const auto groups = gic::infer_groups(art, data, gic::apply_scaler(scaler, data.features));
        gic::save_groups(groups, infer.out);
        std::cout << "wrote " << groups.size() << " assignments to " << infer.out << "\n";
    });

    // ------------------------------------------------------------ train-robust
    struct {
        std::string data, groups, method = "subsample", arch, val, out = "robust.gicm";
        int epochs = 20, batch = 32;
        double lr = 1e-3, momentum = 0.9, wd = 1e-4, eta = 0.01, alpha = 2.0, strategy = 0.5;
        bool early_stop = false, no_early_stop = false;
        std::uint64_t seed = 0;
    } rob;
    auto* cmd_rob = app.add_subcommand("train-robust", "train the final classifier under inferred groups");
    cmd_rob->add_option("--data", rob.data, "training dataset")->required();
    cmd_rob->add_option("--groups", rob.groups, "inferred-groups csv")->required();
    cmd_rob->add_option("--method", rob.method, "subsample|upsample|groupdro|mixup");
    cmd_rob->add_option("--arch", rob.arch, "layer widths (default linear)");
    cmd_rob->add_option("--epochs", rob.epochs, "training epochs");
    cmd_rob->add_option("--batch-size", rob.batch, "minibatch size");
    cmd_rob->add_option("--lr", rob.lr, "learning rate");
    cmd_rob->add_option("--momentum", rob.momentum, "SGD momentum");
    cmd_rob->add_option("--wd", rob.wd, "weight decay");
    cmd_rob->add_option("--eta", rob.eta, "GroupDRO group-weight step");
    cmd_rob->add_option("--alpha", rob.alpha, "mixup Beta(alpha, alpha)");
    cmd_rob->add_option("--strategy-prob", rob.strategy, "mixup P(intra-label)");
    cmd_rob->add_option("--val", rob.val, "validation dataset with oracle groups");
    cmd_rob->add_flag("--early-stop", rob.early_stop, "keep the best validation worst-group snapshot");
    cmd_rob->add_flag("--no-early-stop", rob.no_early_stop, "train to the last epoch");
    cmd_rob->add_option("--seed", rob.seed, "run seed");
    cmd_rob->add_option("--out", rob.out, "model output path");
    cmd_rob->callback([&] {
        const auto data = load_split(rob.data, "train");
        const auto groups = gic::load_groups(rob.groups);
        gic::RobustConfig cfg;
        cfg.method = gic::robust_method_from_name(rob.method);
        cfg.arch = rob.arch.empty() ? std::vector<int>{data.dim(), data.class_count}
                                    : parse_int_list(rob.arch, "--arch");
        cfg.epochs = rob.epochs;
        cfg.batch_size = rob.batch;
        cfg.sgd = {rob.lr, rob.momentum, rob.wd};
        cfg.groupdro_eta = rob.eta;
        cfg.mixup_alpha = rob.alpha;
        cfg.mixup_strategy_prob = rob.strategy;
        cfg.early_stop = !rob.val.empty() && !rob.no_early_stop;
        cfg.seed = rob.seed;
        gic::LabeledDataset val;
        if (!rob.val.empty()) val = gic::load_dataset(rob.val);
        const auto art = gic::train_robust(data, groups, cfg, rob.val.empty() ? nullptr : &val);
        for (const auto& w : art.warnings) std::cerr << "warning: " << w << "\n";
        gic::save_model(art.model, rob.out);
        if (art.best_epoch >= 0) std::cout << "best epoch " << art.best_epoch << "\n";
        std::cout << "wrote " << rob.out << "\n";
    });

    // ---------------------------------------------------------------- evaluate
    struct {
        std::string model, data, report;
    } ev;
    auto* cmd_eval = app.add_subcommand("evaluate", "per-group accuracy report against oracle groups");
    cmd_eval->add_option("--model", ev.model, "trained classifier")->required();
    cmd_eval->add_option("--data", ev.data, "dataset with oracle groups")->required();
    cmd_eval->add_option("--report", ev.report, "also write the report to this path");
    cmd_eval->callback([&] {
        const auto model = gic::load_model(ev.model);
        const auto data = gic::load_dataset(ev.data);
        const auto report = gic::evaluate_model(model, data);
        const json j = eval_report_json(report);
        std::cout << j.dump(2) << "\n";
        if (!ev.report.empty()) gic::emit_report(j.dump(), ev.report);
    });

    // ---------------------------------------------------------------- pipeline
    PipelineFlags pipe;
    auto* cmd_pipe = app.add_subcommand("pipeline", "run every stage across seeds and summarize");
    add_pipeline_flags(cmd_pipe, pipe);
    cmd_pipe->callback([&] {
        const auto result = gic::run_pipeline(build_pipeline_config(pipe));
        std::cout << summary_json(result).dump(2) << "\n";
    });

    // ------------------------------------------------------ study subcommands
    PipelineFlags sizef;
    struct {
        std::string sizes = "50,100,500", modes = "labeled,unlabeled", out = "size_study.csv";
    } size_study;
    auto* cmd_size = app.add_subcommand("study-comparison-size", "group inference quality vs comparison-set size");
    add_pipeline_flags(cmd_size, sizef);
    cmd_size->add_option("--sizes", size_study.sizes, "comparison sizes to try");
    cmd_size->add_option("--modes", size_study.modes, "labeled,unlabeled or one of them");
    cmd_size->add_option("--out", size_study.out, "csv output");
    cmd_size->callback([&] {
        std::vector<gic::SizePoint> points;
        std::stringstream ss(size_study.modes);
        std::string mode;
        while (std::getline(ss, mode, ',')) {
            const bool labeled = gic::gic_mode_from_name(mode) == gic::GicMode::Labeled;
            for (int size : parse_int_list(size_study.sizes, "--sizes")) points.push_back({size, labeled});
        }
        const auto rows = gic::study_comparison_size(build_pipeline_config(sizef), points);
        gic::save_size_study(rows, size_study.out);
        for (const auto& r : rows)
            std::cout << (r.labeled ? "labeled" : "unlabeled") << " n=" << r.size << ": attribute "
                      << r.attribute_accuracy << ", worst-group " << r.worst_group << "\n";
        std::cout << "wrote " << size_study.out << "\n";
    });

    PipelineFlags discf;
    struct {
        std::vector<std::string> variants;
        std::string out = "discrepancy_study.csv";
    } disc;
    auto* cmd_disc = app.add_subcommand("study-discrepancy", "robustness vs train/comparison group discrepancy");
    add_pipeline_flags(cmd_disc, discf);
    cmd_disc->add_option("--variant", disc.variants, "name:f0,f1,... comparison group fractions (repeatable)")
        ->required();
    cmd_disc->add_option("--out", disc.out, "csv output");
    cmd_disc->callback([&] {
        std::vector<gic::DiscrepancyVariant> variants;
        for (const auto& text : disc.variants) {
            const auto colon = text.find(':');
            if (colon == std::string::npos)
                throw gic::ConfigError("--variant expects name:f0,f1,..., got '" + text + "'");
            variants.push_back({text.substr(0, colon),
                                parse_double_list(text.substr(colon + 1), "--variant " + text.substr(0, colon))});
        }
        const auto rows = gic::study_discrepancy(build_pipeline_config(discf), variants);
        gic::save_discrepancy_study(rows, disc.out);
        for (const auto& r : rows)
            std::cout << r.name << ": group KL " << r.group_kl << ", worst-group " << r.worst_group << "\n";
        std::cout << "wrote " << disc.out << "\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // bad flags are config errors
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const gic::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const gic::TrainingError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const gic::StateError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const gic::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const gic::GicError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
