#include "gic/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "gic/errors.hpp"
#include "gic/kl.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace gic {

namespace {

// ---------------------------------------------------------------------------
// config <-> json

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& context) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* key : allowed)
            if (it.key() == key) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError("config: unknown key '" + it.key() + "' in " + context);
    }
}

json sgd_to_json(const SgdConfig& sgd) {
    return {{"learning_rate", sgd.learning_rate}, {"momentum", sgd.momentum}, {"weight_decay", sgd.weight_decay}};
}

SgdConfig sgd_from_json(const json& j, const std::string& context) {
    check_keys(j, {"learning_rate", "momentum", "weight_decay"}, context);
    SgdConfig sgd;
    sgd.learning_rate = j.value("learning_rate", sgd.learning_rate);
    sgd.momentum = j.value("momentum", sgd.momentum);
    sgd.weight_decay = j.value("weight_decay", sgd.weight_decay);
    return sgd;
}

json config_to_json_obj(const PipelineConfig& c) {
    json toy_groups = json::array();
    for (const auto& g : c.toy2d.groups)
        toy_groups.push_back({{"mean_x0", g.mean_x0},
                              {"mean_x1", g.mean_x1},
                              {"label", g.label},
                              {"n_train", g.n_train},
                              {"n_val", g.n_val},
                              {"n_test", g.n_test}});
    return json{
        {"preset", c.preset},
        {"toy2d", {{"groups", toy_groups}}},
        {"synth",
         {{"class_count", c.synth.class_count},
          {"spurious_arity", c.synth.spurious_arity},
          {"invariant_dim", c.synth.invariant_dim},
          {"spurious_dim", c.synth.spurious_dim},
          {"signal", c.synth.signal},
          {"label_flip", c.synth.label_flip},
          {"n_train", c.synth.n_train},
          {"n_val", c.synth.n_val},
          {"n_test", c.synth.n_test},
          {"train_fractions", c.synth.train_fractions},
          {"val_fractions", c.synth.val_fractions},
          {"test_fractions", c.synth.test_fractions}}},
        {"paths",
         {{"train", c.train_path}, {"comparison", c.comparison_path}, {"val", c.val_path}, {"test", c.test_path}}},
        {"identity_features", c.identity_features},
        {"erm",
         {{"arch", c.erm.arch}, {"epochs", c.erm.epochs}, {"batch_size", c.erm.batch_size}, {"sgd", sgd_to_json(c.erm.sgd)}}},
        {"comparison",
         {{"source", c.comparison_source},
          {"ratio", c.comparison_ratio},
          {"rounds", c.comparison_rounds},
          {"readjust", c.readjust}}},
        {"mode", gic_mode_name(c.mode)},
        {"group_source", c.group_source},
        {"gic",
         {{"gamma", c.gic.gamma},
          {"epochs", c.gic.epochs},
          {"learning_rate", c.gic.learning_rate},
          {"momentum", c.gic.momentum},
          {"mine_steps_per_epoch", c.gic.mine_steps_per_epoch},
          {"head_hidden", c.gic.head_hidden},
          {"mine",
           {{"hidden", c.gic.mine.hidden},
            {"sgd", sgd_to_json(c.gic.mine.sgd)},
            {"output_clip", c.gic.mine.output_clip}}}}},
        {"grid_search",
         {{"enabled", c.run_grid_search},
          {"gamma_grid", c.grid.gamma_grid},
          {"k_grid", c.grid.k_grid},
          {"tolerance", c.grid.tolerance}}},
        {"robust",
         {{"method", robust_method_name(c.robust.method)},
          {"arch", c.robust.arch},
          {"epochs", c.robust.epochs},
          {"batch_size", c.robust.batch_size},
          {"sgd", sgd_to_json(c.robust.sgd)},
          {"groupdro_eta", c.robust.groupdro_eta},
          {"mixup_alpha", c.robust.mixup_alpha},
          {"mixup_strategy_prob", c.robust.mixup_strategy_prob},
          {"early_stop", c.robust.early_stop}}},
        {"base_seed", c.base_seed},
        {"num_seeds", c.num_seeds},
        {"workers", c.workers},
        {"outdir", c.outdir},
        {"force", c.force},
        {"plot", c.plot},
    };
}

PipelineConfig config_from_json_obj(const json& j) {
    check_keys(j,
               {"preset", "toy2d", "synth", "paths", "identity_features", "erm", "comparison", "mode",
                "group_source", "gic", "grid_search", "robust", "base_seed", "num_seeds", "workers", "plot",
                "outdir", "force"},
               "top level");
    PipelineConfig c;
    c.preset = j.value("preset", c.preset);
    if (j.contains("toy2d")) {
        check_keys(j.at("toy2d"), {"groups"}, "toy2d");
        if (j.at("toy2d").contains("groups")) {
            const auto& arr = j.at("toy2d").at("groups");
            if (arr.size() != 4) throw ConfigError("config: toy2d.groups must list exactly 4 groups");
            for (std::size_t g = 0; g < 4; ++g) {
                const auto& jg = arr.at(g);
                check_keys(jg, {"mean_x0", "mean_x1", "label", "n_train", "n_val", "n_test"}, "toy2d.groups");
                auto& spec = c.toy2d.groups[g];
                spec.mean_x0 = jg.value("mean_x0", spec.mean_x0);
                spec.mean_x1 = jg.value("mean_x1", spec.mean_x1);
                spec.label = jg.value("label", spec.label);
                spec.n_train = jg.value("n_train", spec.n_train);
                spec.n_val = jg.value("n_val", spec.n_val);
                spec.n_test = jg.value("n_test", spec.n_test);
            }
        }
    }
    if (j.contains("synth")) {
        const auto& js = j.at("synth");
        check_keys(js,
                   {"class_count", "spurious_arity", "invariant_dim", "spurious_dim", "signal", "label_flip",
                    "n_train", "n_val", "n_test", "train_fractions", "val_fractions", "test_fractions"},
                   "synth");
        auto& s = c.synth;
        s.class_count = js.value("class_count", s.class_count);
        s.spurious_arity = js.value("spurious_arity", s.spurious_arity);
        s.invariant_dim = js.value("invariant_dim", s.invariant_dim);
        s.spurious_dim = js.value("spurious_dim", s.spurious_dim);
        s.signal = js.value("signal", s.signal);
        s.label_flip = js.value("label_flip", s.label_flip);
        s.n_train = js.value("n_train", s.n_train);
        s.n_val = js.value("n_val", s.n_val);
        s.n_test = js.value("n_test", s.n_test);
        s.train_fractions = js.value("train_fractions", s.train_fractions);
        s.val_fractions = js.value("val_fractions", s.val_fractions);
        s.test_fractions = js.value("test_fractions", s.test_fractions);
    }
    if (j.contains("paths")) {
        const auto& jp = j.at("paths");
        check_keys(jp, {"train", "comparison", "val", "test"}, "paths");
        c.train_path = jp.value("train", c.train_path);
        c.comparison_path = jp.value("comparison", c.comparison_path);
        c.val_path = jp.value("val", c.val_path);
        c.test_path = jp.value("test", c.test_path);
    }
    c.identity_features = j.value("identity_features", c.identity_features);
    if (j.contains("erm")) {
        const auto& je = j.at("erm");
        check_keys(je, {"arch", "epochs", "batch_size", "sgd"}, "erm");
        c.erm.arch = je.value("arch", c.erm.arch);
        c.erm.epochs = je.value("epochs", c.erm.epochs);
        c.erm.batch_size = je.value("batch_size", c.erm.batch_size);
        if (je.contains("sgd")) c.erm.sgd = sgd_from_json(je.at("sgd"), "erm.sgd");
    }
    if (j.contains("comparison")) {
        const auto& jc = j.at("comparison");
        check_keys(jc, {"source", "ratio", "rounds", "readjust"}, "comparison");
        c.comparison_source = jc.value("source", c.comparison_source);
        c.comparison_ratio = jc.value("ratio", c.comparison_ratio);
        c.comparison_rounds = jc.value("rounds", c.comparison_rounds);
        c.readjust = jc.value("readjust", c.readjust);
    }
    if (j.contains("mode")) c.mode = gic_mode_from_name(j.at("mode").get<std::string>());
    c.group_source = j.value("group_source", c.group_source);
    if (j.contains("gic")) {
        const auto& jg = j.at("gic");
        check_keys(jg, {"gamma", "epochs", "learning_rate", "momentum", "mine_steps_per_epoch", "head_hidden", "mine"},
                   "gic");
        c.gic.gamma = jg.value("gamma", c.gic.gamma);
        c.gic.epochs = jg.value("epochs", c.gic.epochs);
        c.gic.learning_rate = jg.value("learning_rate", c.gic.learning_rate);
        c.gic.momentum = jg.value("momentum", c.gic.momentum);
        c.gic.mine_steps_per_epoch = jg.value("mine_steps_per_epoch", c.gic.mine_steps_per_epoch);
        c.gic.head_hidden = jg.value("head_hidden", c.gic.head_hidden);
        if (jg.contains("mine")) {
            const auto& jm = jg.at("mine");
            check_keys(jm, {"hidden", "sgd", "output_clip"}, "gic.mine");
            c.gic.mine.hidden = jm.value("hidden", c.gic.mine.hidden);
            if (jm.contains("sgd")) c.gic.mine.sgd = sgd_from_json(jm.at("sgd"), "gic.mine.sgd");
            c.gic.mine.output_clip = jm.value("output_clip", c.gic.mine.output_clip);
        }
    }
    if (j.contains("grid_search")) {
        const auto& jg = j.at("grid_search");
        check_keys(jg, {"enabled", "gamma_grid", "k_grid", "tolerance"}, "grid_search");
        c.run_grid_search = jg.value("enabled", c.run_grid_search);
        c.grid.gamma_grid = jg.value("gamma_grid", c.grid.gamma_grid);
        c.grid.k_grid = jg.value("k_grid", c.grid.k_grid);
        c.grid.tolerance = jg.value("tolerance", c.grid.tolerance);
    }
    if (j.contains("robust")) {
        const auto& jr = j.at("robust");
        check_keys(jr,
                   {"method", "arch", "epochs", "batch_size", "sgd", "groupdro_eta", "mixup_alpha",
                    "mixup_strategy_prob", "early_stop"},
                   "robust");
        if (jr.contains("method")) c.robust.method = robust_method_from_name(jr.at("method").get<std::string>());
        c.robust.arch = jr.value("arch", c.robust.arch);
        c.robust.epochs = jr.value("epochs", c.robust.epochs);
        c.robust.batch_size = jr.value("batch_size", c.robust.batch_size);
        if (jr.contains("sgd")) c.robust.sgd = sgd_from_json(jr.at("sgd"), "robust.sgd");
        c.robust.groupdro_eta = jr.value("groupdro_eta", c.robust.groupdro_eta);
        c.robust.mixup_alpha = jr.value("mixup_alpha", c.robust.mixup_alpha);
        c.robust.mixup_strategy_prob = jr.value("mixup_strategy_prob", c.robust.mixup_strategy_prob);
        c.robust.early_stop = jr.value("early_stop", c.robust.early_stop);
    }
    c.base_seed = j.value("base_seed", c.base_seed);
    c.num_seeds = j.value("num_seeds", c.num_seeds);
    c.workers = j.value("workers", c.workers);
    c.plot = j.value("plot", c.plot);
    c.outdir = j.value("outdir", c.outdir);
    c.force = j.value("force", c.force);
    return c;
}

// ---------------------------------------------------------------------------
// worker pool: runs fn(0..n-1) on `workers` threads; the first exception
// wins and is rethrown after everything joins

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    workers = std::max(1, std::min(workers, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::atomic<bool> failed{false};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            while (!failed.load()) {
                const int i = next.fetch_add(1);
                if (i >= n) break;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                    failed.store(true);
                }
            }
        });
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// stage wrapper: prefix errors with the failing stage, keep the category

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("stage ") + name + ": " + e.what());
    } catch (const TrainingError& e) {
        throw TrainingError(std::string("stage ") + name + ": " + e.what());
    } catch (const StateError& e) {
        throw StateError(std::string("stage ") + name + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(std::string("stage ") + name + ": " + e.what());
    }
}

std::vector<int> default_arch(int dim, int classes, bool identity) {
    if (identity) return {dim, classes};
    return {dim, 16, classes};
}

DatasetSplits make_data(const PipelineConfig& config, std::uint64_t seed) {
    if (config.preset == "toy2d") return gen_toy2d(config.toy2d, derive_seed(seed, "data"));
    if (config.preset == "synth") return gen_synth_spurious(config.synth, derive_seed(seed, "data"));
    if (config.preset == "files") {
        DatasetSplits splits;
        if (config.train_path.empty() || config.test_path.empty())
            throw ConfigError("pipeline: preset 'files' needs at least train and test paths");
        splits.train = load_dataset(config.train_path);
        splits.test = load_dataset(config.test_path);
        if (!config.val_path.empty())
            splits.val = load_dataset(config.val_path);
        else if (!config.comparison_path.empty())
            splits.val = load_dataset(config.comparison_path);
        else
            throw ConfigError("pipeline: preset 'files' needs a val or comparison path");
        return splits;
    }
    throw ConfigError("pipeline: unknown preset '" + config.preset + "', expected toy2d|synth|files");
}

double safe_group_kl(const LabeledDataset& train, const LabeledDataset& comparison) {
    if (!train.has_groups() || !comparison.has_groups()) return -1.0;
    if (train.group_count() != comparison.group_count()) return -1.0;
    try {
        return kl_discrete(group_fractions(train), group_fractions(comparison));
    } catch (const GicError&) {
        return -1.0;
    }
}

// de-standardize a single linear softmax layer so it can be read in raw
// feature coordinates: w_raw = w / scale, b_raw = b - w . (mean/scale)
MlpModel destandardized_head(const MlpModel& head, const FeatureScaler& scaler) {
    MlpModel out = head;
    auto& w = out.weights.front();
    auto& b = out.biases.front();
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
        double shift = 0.0;
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
            shift += w(r, c) * scaler.mean(c) / scaler.scale(c);
            w(r, c) /= scaler.scale(c);
        }
        b(r) -= shift;
    }
    return out;
}

Eigen::VectorXd binary_linear_direction(const MlpModel& model) {
    if (model.layer_count() != 1 || model.output_dim() != 2) return Eigen::VectorXd();
    return (model.weights.front().row(1) - model.weights.front().row(0)).transpose();
}

struct SeedRunHooks {
    // replaces the comparison set right after construction (studies use this
    // to subsample or reweight the pool); receives the run seed
    std::function<LabeledDataset(const LabeledDataset&, std::uint64_t)> comparison_override;
};

SeedReport run_seed(const PipelineConfig& config, std::uint64_t seed, const SeedRunHooks* hooks) {
    SeedReport report;
    report.seed = seed;

    if (config.comparison_source != "provided" && config.comparison_source != "from_train")
        throw ConfigError("pipeline: comparison.source must be provided|from_train");
    if (config.group_source != "gic" && config.group_source != "oracle")
        throw ConfigError("pipeline: group_source must be gic|oracle");

    DatasetSplits splits = stage("data", [&] { return make_data(config, seed); });

    // stage 1: ERM baseline; doubles as the feature extractor unless
    // identity_features is set
    ErmConfig erm_cfg = config.erm;
    if (erm_cfg.arch.empty())
        erm_cfg.arch = default_arch(splits.train.dim(), splits.train.class_count, config.identity_features);
    erm_cfg.seed = derive_seed(seed, "stage1");
    ErmArtifacts erm_art = stage("erm", [&] { return train_erm(splits.train, erm_cfg); });
    report.erm_model = erm_art.model;

    const auto features_of = [&](const LabeledDataset& ds) {
        return config.identity_features ? ds.features : extract_features(erm_art, ds);
    };

    // comparison plan (round 1)
    LabeledDataset gic_train = splits.train;
    LabeledDataset comparison;
    if (config.comparison_source == "provided") {
        // a dedicated comparison file wins; otherwise the validation split
        // doubles as the comparison set
        if (config.preset == "files" && !config.comparison_path.empty() && !config.val_path.empty())
            comparison = stage("data", [&] { return load_dataset(config.comparison_path); });
        else
            comparison = splits.val;
    } else {
        auto built = stage("comparison", [&] {
            return build_comparison_from_train(splits.train, erm_art.model, config.comparison_ratio,
                                               derive_seed(seed, "comparison/1"));
        });
        if (!built.warning.empty()) report.warnings.push_back(built.warning);
        comparison = std::move(built.comparison);
        gic_train = std::move(built.remaining);
    }
    if (hooks != nullptr && hooks->comparison_override)
        comparison = stage("comparison", [&] { return hooks->comparison_override(comparison, seed); });
    if (config.mode == GicMode::Unlabeled) comparison = strip_labels(comparison);

    GicArtifacts gic_art;
    GroupAssignment groups;
    FeatureScaler scaler;
    Eigen::MatrixXd z_tr;

    if (config.group_source == "oracle") {
        groups = stage("groups", [&] { return oracle_groups(gic_train); });
        report.comparison_size = comparison.size();
        report.comparison_group_kl = safe_group_kl(gic_train, comparison);
    } else {
        // stage 2, possibly iterated under a boosting comparison plan
        const int rounds = (config.comparison_source == "from_train") ? std::max(1, config.comparison_rounds) : 1;
        for (int round = 1; round <= rounds; ++round) {
            if (round > 1) {
                // rebuild the comparison set from the full training split,
                // treating disagreement with the class-majority spurious
                // prediction as the new error signal
                auto built = stage("comparison", [&] {
                    return boost_comparison(splits.train, gic_art,
                                            apply_scaler(scaler, features_of(splits.train)), config.comparison_ratio,
                                            derive_seed(seed, "comparison/" + std::to_string(round)));
                });
                if (!built.warning.empty()) report.warnings.push_back(built.warning);
                comparison = std::move(built.comparison);
                gic_train = std::move(built.remaining);
                if (config.mode == GicMode::Unlabeled) comparison = strip_labels(comparison);
            }

            scaler = fit_scaler(features_of(gic_train));
            z_tr = apply_scaler(scaler, features_of(gic_train));
            Eigen::MatrixXd z_c = apply_scaler(scaler, features_of(comparison));

            GicConfig gcfg = config.gic;
            gcfg.mode = config.mode;
            gcfg.seed = derive_seed(seed, "stage2/round" + std::to_string(round));
            if (config.run_grid_search) {
                GridSearchConfig grid_cfg = config.grid;
                grid_cfg.base = gcfg;
                const auto grid_res = stage("grid_search", [&] {
                    return grid_search(z_tr, gic_train.labels, gic_train.class_count, z_c, comparison.labels,
                                       grid_cfg);
                });
                report.grid_diagnostics = grid_res.diagnostics;
                if (grid_res.exhausted)
                    report.warnings.push_back("grid_search: no point avoided a cross-entropy rebound; using grid minimum");
                gcfg = grid_res.selected;
            }
            gic_art = stage("gic", [&] {
                return train_gic(z_tr, gic_train.labels, gic_train.class_count, z_c, comparison.labels, gcfg);
            });

            if (config.readjust) {
                std::vector<int> pseudo;
                const std::vector<int>* pseudo_ptr = nullptr;
                if (!comparison.has_labels()) {
                    pseudo = argmax_rows(forward(erm_art.model, comparison.features));
                    pseudo_ptr = &pseudo;
                }
                auto readj = stage("readjust", [&] {
                    return readjust_comparison(comparison, gic_art, apply_scaler(scaler, features_of(comparison)),
                                               derive_seed(seed, "readjust/round" + std::to_string(round)),
                                               pseudo_ptr);
                });
                if (!readj.warning.empty()) report.warnings.push_back(readj.warning);
                comparison = std::move(readj.comparison);
                Eigen::MatrixXd z_c2 = apply_scaler(scaler, features_of(comparison));
                gcfg.seed = derive_seed(seed, "stage2/round" + std::to_string(round) + "/readjusted");
                gic_art = stage("gic", [&] {
                    return train_gic(z_tr, gic_train.labels, gic_train.class_count, z_c2, comparison.labels, gcfg);
                });
            }
        }
        report.gic_curve = gic_art.curve;
        report.gic_head = gic_art.head;
        report.comparison_size = comparison.size();
        report.comparison_group_kl = safe_group_kl(gic_train, comparison);
        groups = stage("groups", [&] { return infer_groups(gic_art, gic_train, z_tr); });
        if (gic_art.head.layer_count() == 1 && gic_art.head.output_dim() == 2)
            report.gic_direction_raw = binary_linear_direction(destandardized_head(gic_art.head, scaler));
    }
    report.scaler = scaler;

    // stage 3: robust training on raw features under the inferred partition
    RobustConfig rcfg = config.robust;
    if (rcfg.arch.empty())
        rcfg.arch = default_arch(gic_train.dim(), gic_train.class_count, config.identity_features);
    rcfg.seed = derive_seed(seed, "stage3");
    const RobustArtifacts robust = stage("robust", [&] {
        return train_robust(gic_train, groups, rcfg, rcfg.early_stop ? &splits.val : nullptr);
    });
    report.robust_model = robust.model;
    report.robust_best_epoch = robust.best_epoch;
    for (const auto& w : robust.warnings) report.warnings.push_back(w);
    report.robust_direction_raw = binary_linear_direction(robust.model);

    // evaluation
    report.erm_test = stage("evaluate", [&] { return evaluate_model(erm_art.model, splits.test); });
    report.robust_test = stage("evaluate", [&] { return evaluate_model(robust.model, splits.test); });
    if (gic_train.has_groups()) {
        // the inferred attribute's encoding is arbitrary; canonicalize it
        // against the oracle attribute before scoring group ids
        const auto aligned = relabel_attribute(groups, best_attribute_relabeling(groups, gic_train));
        report.minority_train = minority_precision_recall(aligned, gic_train);
        report.attribute_train = attribute_accuracy(groups, gic_train);
    }
    report.groups_train = std::move(groups);
    return report;
}

// ---------------------------------------------------------------------------
// reports and artifacts

json eval_to_json(const EvalReport& r) {
    return {{"average_accuracy", r.average_accuracy},
            {"worst_group_accuracy", r.worst_group_accuracy},
            {"per_group_accuracy", r.per_group_accuracy},
            {"per_group_count", r.per_group_count},
            {"excluded_groups", r.excluded_groups}};
}

EvalReport eval_from_json(const json& j) {
    EvalReport r;
    r.average_accuracy = j.at("average_accuracy").get<double>();
    r.worst_group_accuracy = j.at("worst_group_accuracy").get<double>();
    r.per_group_accuracy = j.at("per_group_accuracy").get<std::vector<double>>();
    r.per_group_count = j.at("per_group_count").get<std::vector<long>>();
    r.excluded_groups = j.at("excluded_groups").get<std::vector<int>>();
    return r;
}

json seed_report_to_json(const SeedReport& r, std::uint64_t cfg_hash) {
    json curve = json::array();
    for (const auto& p : r.gic_curve)
        curve.push_back({{"ce", p.ce}, {"kl_joint", p.kl_joint}, {"kl_marginal", p.kl_marginal}, {"kl_total", p.kl_total}});
    json grid = json::array();
    for (const auto& g : r.grid_diagnostics)
        grid.push_back({{"gamma", g.gamma},
                        {"epochs", g.epochs},
                        {"detected", g.detected},
                        {"final_ce", g.final_ce},
                        {"final_kl", g.final_kl}});
    return json{{"config_hash", cfg_hash},
                {"seed", r.seed},
                {"erm_test", eval_to_json(r.erm_test)},
                {"robust_test", eval_to_json(r.robust_test)},
                {"minority",
                 {{"precision", r.minority_train.precision},
                  {"recall", r.minority_train.recall},
                  {"precision_defined", r.minority_train.precision_defined},
                  {"groups", r.minority_train.minority_groups}}},
                {"attribute", {{"raw", r.attribute_train.raw}, {"aligned", r.attribute_train.aligned}}},
                {"gic_curve", curve},
                {"grid_diagnostics", grid},
                {"robust_best_epoch", r.robust_best_epoch},
                {"comparison_size", r.comparison_size},
                {"comparison_group_kl", r.comparison_group_kl},
                {"gic_direction_raw", std::vector<double>(r.gic_direction_raw.data(),
                                                          r.gic_direction_raw.data() + r.gic_direction_raw.size())},
                {"robust_direction_raw",
                 std::vector<double>(r.robust_direction_raw.data(),
                                     r.robust_direction_raw.data() + r.robust_direction_raw.size())},
                {"warnings", r.warnings}};
}

SeedReport seed_report_from_json(const json& j) {
    SeedReport r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.erm_test = eval_from_json(j.at("erm_test"));
    r.robust_test = eval_from_json(j.at("robust_test"));
    r.minority_train.precision = j.at("minority").at("precision").get<double>();
    r.minority_train.recall = j.at("minority").at("recall").get<double>();
    r.minority_train.precision_defined = j.at("minority").at("precision_defined").get<bool>();
    r.minority_train.minority_groups = j.at("minority").at("groups").get<std::vector<int>>();
    r.attribute_train.raw = j.at("attribute").at("raw").get<double>();
    r.attribute_train.aligned = j.at("attribute").at("aligned").get<double>();
    for (const auto& p : j.at("gic_curve"))
        r.gic_curve.push_back({p.at("ce").get<double>(), p.at("kl_joint").get<double>(),
                               p.at("kl_marginal").get<double>(), p.at("kl_total").get<double>()});
    for (const auto& g : j.at("grid_diagnostics"))
        r.grid_diagnostics.push_back({g.at("gamma").get<double>(), g.at("epochs").get<int>(),
                                      g.at("detected").get<bool>(), g.at("final_ce").get<double>(),
                                      g.at("final_kl").get<double>()});
    r.robust_best_epoch = j.at("robust_best_epoch").get<int>();
    r.comparison_size = j.at("comparison_size").get<long>();
    r.comparison_group_kl = j.at("comparison_group_kl").get<double>();
    const auto gd = j.at("gic_direction_raw").get<std::vector<double>>();
    r.gic_direction_raw = Eigen::Map<const Eigen::VectorXd>(gd.data(), static_cast<Eigen::Index>(gd.size()));
    const auto rd = j.at("robust_direction_raw").get<std::vector<double>>();
    r.robust_direction_raw = Eigen::Map<const Eigen::VectorXd>(rd.data(), static_cast<Eigen::Index>(rd.size()));
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    return r;
}

SummaryStat stat_of(const std::vector<double>& v) {
    SummaryStat s;
    if (v.empty()) return s;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double acc = 0.0;
        for (double x : v) acc += (x - s.mean) * (x - s.mean);
        s.stddev = std::sqrt(acc / static_cast<double>(v.size() - 1));
    }
    return s;
}

PipelineSummary summarize(const std::vector<SeedReport>& seeds) {
    std::vector<double> erm_w, erm_a, rob_w, rob_a, prec, rec, attr;
    for (const auto& s : seeds) {
        erm_w.push_back(s.erm_test.worst_group_accuracy);
        erm_a.push_back(s.erm_test.average_accuracy);
        rob_w.push_back(s.robust_test.worst_group_accuracy);
        rob_a.push_back(s.robust_test.average_accuracy);
        prec.push_back(s.minority_train.precision);
        rec.push_back(s.minority_train.recall);
        attr.push_back(s.attribute_train.aligned);
    }
    PipelineSummary sum;
    sum.erm_worst = stat_of(erm_w);
    sum.erm_average = stat_of(erm_a);
    sum.robust_worst = stat_of(rob_w);
    sum.robust_average = stat_of(rob_a);
    sum.minority_precision = stat_of(prec);
    sum.minority_recall = stat_of(rec);
    sum.attribute_accuracy = stat_of(attr);
    return sum;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw DataError("write to '" + path + "' failed");
}

void write_seed_artifacts(const PipelineConfig& config, const SeedReport& report, const fs::path& dir,
                          std::uint64_t cfg_hash) {
    fs::create_directories(dir);
    save_model(report.erm_model, (dir / "erm.gicm").string());
    if (report.gic_head.layer_count() > 0) save_model(report.gic_head, (dir / "gic.gicm").string());
    save_model(report.robust_model, (dir / "robust.gicm").string());
    if (report.groups_train.size() > 0) save_groups(report.groups_train, (dir / "groups.csv").string());

    if (!report.gic_curve.empty()) {
        std::ostringstream curve;
        curve << "epoch,ce,kl_joint,kl_marginal,kl_total\n";
        char buf[160];
        for (std::size_t e = 0; e < report.gic_curve.size(); ++e) {
            const auto& p = report.gic_curve[e];
            std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g", e, p.ce, p.kl_joint, p.kl_marginal,
                          p.kl_total);
            curve << buf << '\n';
        }
        write_text((dir / "gic_curve.csv").string(), curve.str());
    }
    if (!report.grid_diagnostics.empty())
        save_grid_diagnostics(report.grid_diagnostics, (dir / "grid.csv").string());

    emit_report(seed_report_to_json(report, cfg_hash).dump(2), (dir / "report.json").string());

    // boundary figure for 2-feature binary problems with linear heads
    if (config.plot && config.identity_features) {
        try {
            const DatasetSplits splits = make_data(config, report.seed);
            if (splits.train.dim() == 2 && splits.train.class_count == 2 &&
                report.gic_head.layer_count() == 1 && report.robust_model.output_dim() == 2) {
                const MlpModel gic_raw = destandardized_head(report.gic_head, report.scaler);
                // reference models fit on one feature at a time: invariant
                // keeps x1, spurious keeps x0
                ErmConfig ref_cfg = config.erm;
                if (ref_cfg.arch.empty()) ref_cfg.arch = {2, 2};
                LabeledDataset inv_only = splits.train;
                inv_only.features.col(0).setZero();
                ref_cfg.seed = derive_seed(report.seed, "plot/invariant");
                const MlpModel inv_model = train_erm(inv_only, ref_cfg).model;
                LabeledDataset spu_only = splits.train;
                spu_only.features.col(1).setZero();
                ref_cfg.seed = derive_seed(report.seed, "plot/spurious");
                const MlpModel spu_model = train_erm(spu_only, ref_cfg).model;

                plot_boundary_2d({{"erm", &report.erm_model},
                                  {"gic", &gic_raw},
                                  {"robust", &report.robust_model},
                                  {"invariant_only", &inv_model},
                                  {"spurious_only", &spu_model}},
                                 splits.train, (dir / "boundary.svg").string());
            }
        } catch (const GicError&) {
            // plotting is best effort; the run's numbers stand on their own
        }
    }
}

} // namespace

PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    try {
        return config_from_json_obj(j);
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
}

std::string pipeline_config_to_json(const PipelineConfig& config) { return config_to_json_obj(config).dump(2); }

std::uint64_t config_hash(const PipelineConfig& config) {
    // outdir, force, plot and workers are bookkeeping, not science: a run is
    // the same run wherever it lands and however many threads computed it
    json j = config_to_json_obj(config);
    j.erase("outdir");
    j.erase("force");
    j.erase("plot");
    j.erase("workers");
    return fnv1a64(j.dump());
}

void emit_report(const std::string& json_text, const std::string& path) {
    // parse + re-dump so keys always come out sorted and the file ends in \n
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw DataError(std::string("emit_report: invalid json: ") + e.what());
    }
    write_text(path, j.dump(2) + "\n");
}

PipelineResult run_pipeline(const PipelineConfig& config) {
    if (config.num_seeds <= 0) throw ConfigError("pipeline: num_seeds must be positive");
    const std::uint64_t cfg_hash = config_hash(config);

    PipelineResult result;
    result.config = config;

    const bool persist = !config.outdir.empty();
    fs::path root(config.outdir);
    if (persist) {
        fs::create_directories(root);
        json manifest{{"config", config_to_json_obj(config)}, {"config_hash", cfg_hash}, {"seeds", json::array()}};
        for (int i = 0; i < config.num_seeds; ++i) {
            const std::uint64_t seed = config.base_seed + static_cast<std::uint64_t>(i);
            manifest["seeds"].push_back(
                {{"seed", seed}, {"dir", "seed_" + std::to_string(seed)}, {"report", "seed_" + std::to_string(seed) + "/report.json"}});
        }
        emit_report(manifest.dump(2), (root / "manifest.json").string());
    }

    result.seeds.resize(static_cast<std::size_t>(config.num_seeds));
    parallel_for(config.num_seeds, config.workers, [&](int i) {
        const std::uint64_t seed = config.base_seed + static_cast<std::uint64_t>(i);
        const fs::path seed_dir = root / ("seed_" + std::to_string(seed));
        const fs::path report_path = seed_dir / "report.json";

        if (persist && !config.force && fs::exists(report_path)) {
            // reuse the cached run when it was produced by this exact config;
            // an unreadable cache just falls through to a recompute
            std::ifstream in(report_path);
            json j = json::object();
            try {
                in >> j;
            } catch (const json::exception&) {
                j = json::object();
            }
            if (j.value("config_hash", std::uint64_t(0)) == cfg_hash) {
                try {
                    SeedReport cached = seed_report_from_json(j);
                    if (fs::exists(seed_dir / "erm.gicm"))
                        cached.erm_model = load_model((seed_dir / "erm.gicm").string());
                    if (fs::exists(seed_dir / "gic.gicm"))
                        cached.gic_head = load_model((seed_dir / "gic.gicm").string());
                    if (fs::exists(seed_dir / "robust.gicm"))
                        cached.robust_model = load_model((seed_dir / "robust.gicm").string());
                    result.seeds[static_cast<std::size_t>(i)] = std::move(cached);
                    return;
                } catch (const json::exception&) {
                    // stale or hand-edited report: recompute
                }
            }
        }

        SeedReport report = run_seed(config, seed, nullptr);
        if (persist) write_seed_artifacts(config, report, seed_dir, cfg_hash);
        result.seeds[static_cast<std::size_t>(i)] = std::move(report);
    });

    result.summary = summarize(result.seeds);
    if (persist) {
        const auto stat = [](const SummaryStat& s) { return json{{"mean", s.mean}, {"stddev", s.stddev}}; };
        json summary{{"erm_worst", stat(result.summary.erm_worst)},
                     {"erm_average", stat(result.summary.erm_average)},
                     {"robust_worst", stat(result.summary.robust_worst)},
                     {"robust_average", stat(result.summary.robust_average)},
                     {"minority_precision", stat(result.summary.minority_precision)},
                     {"minority_recall", stat(result.summary.minority_recall)},
                     {"attribute_accuracy", stat(result.summary.attribute_accuracy)},
                     {"num_seeds", config.num_seeds}};
        emit_report(summary.dump(2), (root / "summary.json").string());
    }
    return result;
}

// ---------------------------------------------------------------------------
// studies

std::vector<SizeStudyRow> study_comparison_size(const PipelineConfig& config, const std::vector<SizePoint>& sizes) {
    if (sizes.empty()) throw ConfigError("study_comparison_size: no sizes given");
    for (const auto& point : sizes)
        if (point.size <= 0) throw ConfigError("study_comparison_size: sizes must be positive");
    std::vector<SizeStudyRow> rows(sizes.size());
    parallel_for(static_cast<int>(sizes.size()), config.workers, [&](int p) {
        const SizePoint& point = sizes[static_cast<std::size_t>(p)];
        PipelineConfig sub = config;
        sub.outdir.clear();
        sub.mode = point.labeled ? GicMode::Labeled : GicMode::Unlabeled;

        SeedRunHooks hooks;
        hooks.comparison_override = [&point](const LabeledDataset& pool, std::uint64_t seed) {
            if (point.size > pool.size())
                throw DataError("study_comparison_size: requested " + std::to_string(point.size) +
                                " rows from a pool of " + std::to_string(pool.size()));
            std::vector<int> all(static_cast<std::size_t>(pool.size()));
            std::iota(all.begin(), all.end(), 0);
            Rng rng = make_rng(derive_seed(seed, "study/size=" + std::to_string(point.size)));
            return subset(pool, sample_without_replacement(all, static_cast<int>(point.size), rng));
        };

        SizeStudyRow row;
        row.size = point.size;
        row.labeled = point.labeled;
        for (int i = 0; i < sub.num_seeds; ++i) {
            const auto report = run_seed(sub, sub.base_seed + static_cast<std::uint64_t>(i), &hooks);
            row.attribute_accuracy += report.attribute_train.aligned;
            row.worst_group += report.robust_test.worst_group_accuracy;
        }
        row.attribute_accuracy /= static_cast<double>(sub.num_seeds);
        row.worst_group /= static_cast<double>(sub.num_seeds);
        rows[static_cast<std::size_t>(p)] = row;
    });
    return rows;
}

void save_size_study(const std::vector<SizeStudyRow>& rows, const std::string& path) {
    std::ostringstream out;
    out << "size,labeled,attribute_accuracy,worst_group\n";
    char buf[96];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%ld,%d,%.17g,%.17g", r.size, r.labeled ? 1 : 0, r.attribute_accuracy,
                      r.worst_group);
        out << buf << '\n';
    }
    write_text(path, out.str());
}

std::vector<DiscrepancyRow> study_discrepancy(const PipelineConfig& config,
                                              const std::vector<DiscrepancyVariant>& variants) {
    if (variants.empty()) throw ConfigError("study_discrepancy: no variants given");
    std::vector<DiscrepancyRow> rows(variants.size());
    parallel_for(static_cast<int>(variants.size()), config.workers, [&](int p) {
        const DiscrepancyVariant& variant = variants[static_cast<std::size_t>(p)];
        PipelineConfig sub = config;
        sub.outdir.clear();

        SeedRunHooks hooks;
        hooks.comparison_override = [&variant](const LabeledDataset& pool, std::uint64_t seed) {
            if (!pool.has_groups())
                throw DataError("study_discrepancy: comparison pool has no oracle groups to resample");
            const auto members = group_members(pool);
            if (variant.fractions.size() != members.size())
                throw ConfigError("study_discrepancy: variant '" + variant.name + "' has " +
                                  std::to_string(variant.fractions.size()) + " fractions for " +
                                  std::to_string(members.size()) + " groups");
            const auto counts = largest_remainder_counts(variant.fractions, pool.size());
            Rng rng = make_rng(derive_seed(seed, "study/variant=" + variant.name));
            std::vector<int> rows_idx;
            for (std::size_t g = 0; g < members.size(); ++g) {
                if (counts[g] == 0) continue;
                if (members[g].empty())
                    throw DataError("study_discrepancy: variant '" + variant.name + "' needs group " +
                                    std::to_string(g) + " but the pool has none");
                if (counts[g] <= static_cast<long>(members[g].size())) {
                    const auto picked = sample_without_replacement(members[g], static_cast<int>(counts[g]), rng);
                    rows_idx.insert(rows_idx.end(), picked.begin(), picked.end());
                } else {
                    rows_idx.insert(rows_idx.end(), members[g].begin(), members[g].end());
                    const auto extra = sample_with_replacement(
                        members[g], static_cast<int>(counts[g] - static_cast<long>(members[g].size())), rng);
                    rows_idx.insert(rows_idx.end(), extra.begin(), extra.end());
                }
            }
            return subset(pool, rows_idx);
        };

        DiscrepancyRow row;
        row.name = variant.name;
        double kl_acc = 0.0;
        for (int i = 0; i < sub.num_seeds; ++i) {
            const auto report = run_seed(sub, sub.base_seed + static_cast<std::uint64_t>(i), &hooks);
            row.worst_group += report.robust_test.worst_group_accuracy;
            kl_acc += report.comparison_group_kl;
        }
        row.worst_group /= static_cast<double>(sub.num_seeds);
        row.group_kl = kl_acc / static_cast<double>(sub.num_seeds);
        rows[static_cast<std::size_t>(p)] = row;
    });
    return rows;
}

void save_discrepancy_study(const std::vector<DiscrepancyRow>& rows, const std::string& path) {
    std::ostringstream out;
    out << "name,group_kl,worst_group\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g", r.name.c_str(), r.group_kl, r.worst_group);
        out << buf << '\n';
    }
    write_text(path, out.str());
}

} // namespace gic
