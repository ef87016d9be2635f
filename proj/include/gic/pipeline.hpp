#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gic/comparison.hpp"
#include "gic/dataset.hpp"
#include "gic/erm.hpp"
#include "gic/evaluation.hpp"
#include "gic/generators.hpp"
#include "gic/gic_train.hpp"
#include "gic/invariant.hpp"

namespace gic {

/// End-to-end run description. Datasets come from a generator preset or from
/// explicit files; every later stage reads its knobs from the nested configs.
struct PipelineConfig {
    // data: "toy2d", "synth", or "files"
    std::string preset = "toy2d";
    Toy2dSpec toy2d;
    SynthSpuriousSpec synth;
    std::string train_path, comparison_path, val_path, test_path;  // preset == "files"

    // stage 1: feature extraction. identity_features skips the extractor and
    // feeds (standardized) raw features to the head; the ERM baseline is
    // trained either way. An empty erm.arch defaults to a linear model under
    // identity features and to one 16-wide hidden layer otherwise.
    bool identity_features = true;
    ErmConfig erm;

    // comparison plan
    std::string comparison_source = "provided";  // provided | from_train
    double comparison_ratio = 0.01;              // from_train draw size
    int comparison_rounds = 2;                   // total constructions (boosting) for from_train
    bool readjust = false;                       // rebalance comparison groups, then retrain
    GicMode mode = GicMode::Labeled;

    // stage 2
    std::string group_source = "gic";  // gic | oracle
    GicConfig gic;
    bool run_grid_search = false;
    GridSearchConfig grid;

    // stage 3: robust.arch empty defaults like erm.arch
    RobustConfig robust;

    // run control
    std::uint64_t base_seed = 0;
    int num_seeds = 1;   // run seeds base_seed + 0 .. base_seed + num_seeds-1
    int workers = 1;     // seeds / study points run in this many worker threads
    std::string outdir;  // empty = keep everything in memory
    bool force = false;  // recompute even when cached artifacts match
    bool plot = true;    // decision-boundary SVG for 2-feature data
};

/// Everything measured in one seeded run.
struct SeedReport {
    std::uint64_t seed = 0;
    EvalReport erm_test;
    EvalReport robust_test;
    MinorityScore minority_train;        // inferred vs oracle groups on train
    AttributeAgreement attribute_train;  // hard spurious prediction vs oracle
    std::vector<GicCurvePoint> gic_curve;
    std::vector<GridPoint> grid_diagnostics;
    int robust_best_epoch = -1;
    long comparison_size = 0;
    double comparison_group_kl = -1.0;  // KL(train groups || comparison groups), -1 when undefined
    std::vector<std::string> warnings;

    // models and the train partition, kept for inspection (written to disk
    // when outdir is set)
    MlpModel erm_model;
    MlpModel gic_head;
    MlpModel robust_model;
    GroupAssignment groups_train;
    FeatureScaler scaler;
    // de-standardized (w1 - w0) for binary linear heads; empty otherwise
    Eigen::VectorXd gic_direction_raw;
    Eigen::VectorXd robust_direction_raw;
};

struct SummaryStat {
    double mean = 0.0;
    double stddev = 0.0;
};

struct PipelineSummary {
    SummaryStat erm_worst, erm_average;
    SummaryStat robust_worst, robust_average;
    SummaryStat minority_precision, minority_recall;
    SummaryStat attribute_accuracy;
};

struct PipelineResult {
    PipelineConfig config;
    std::vector<SeedReport> seeds;
    PipelineSummary summary;
};

/// Runs all seeds of the configured pipeline. With a nonempty outdir, writes
/// manifest.json, per-seed artifacts (models, groups, curves, report.json,
/// boundary.svg for 2-d data) and summary.json; seeds whose cached report
/// matches the config hash are reused unless force is set. Any stage failure
/// rethrows the original error prefixed with the stage name.
PipelineResult run_pipeline(const PipelineConfig& config);

/// JSON round trip for configs; keys mirror the struct fields. Unknown keys
/// are a ConfigError naming the key.
PipelineConfig load_pipeline_config(const std::string& path);
std::string pipeline_config_to_json(const PipelineConfig& config);
std::uint64_t config_hash(const PipelineConfig& config);

/// Writes a report (any JSON text produced by the library) with sorted keys.
void emit_report(const std::string& json_text, const std::string& path);

/// One requested size for the comparison-size study.
struct SizePoint {
    long size = 0;
    bool labeled = true;
};

struct SizeStudyRow {
    long size = 0;
    bool labeled = true;
    double attribute_accuracy = 0.0;  // aligned, on train, mean over seeds
    double worst_group = 0.0;         // test, mean over seeds
};

/// Reruns the pipeline with the comparison pool subsampled to each requested
/// size (labels stripped for unlabeled points) and records how group
/// inference quality and final robustness move with comparison size.
std::vector<SizeStudyRow> study_comparison_size(const PipelineConfig& config, const std::vector<SizePoint>& sizes);
void save_size_study(const std::vector<SizeStudyRow>& rows, const std::string& path);

/// One comparison-set variant for the discrepancy study: the pool resampled
/// to the given oracle-group fractions.
struct DiscrepancyVariant {
    std::string name;
    std::vector<double> fractions;
};

struct DiscrepancyRow {
    std::string name;
    double group_kl = 0.0;     // KL(train groups || variant groups)
    double worst_group = 0.0;  // test, mean over seeds
};

std::vector<DiscrepancyRow> study_discrepancy(const PipelineConfig& config,
                                              const std::vector<DiscrepancyVariant>& variants);
void save_discrepancy_study(const std::vector<DiscrepancyRow>& rows, const std::string& path);

} // namespace gic
